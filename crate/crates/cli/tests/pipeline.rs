use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

const TINY: &str = r#"
seed = 4

[[domain]]
preset = 0
num_scenes = 20
num_test_scenes = 6
num_identities = 6

[[domain]]
preset = 1
num_scenes = 20
num_test_scenes = 6
num_identities = 6

[train]
first_domain_epochs = 1
first_domain_decay_epoch = 1
epochs_per_domain = 1
lr_decay_epoch = 1
warmup_steps = 2
exemplar_fraction = 0.1
joint_epochs = 1
"#;

fn lps(root: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_lps"))
        .args(args)
        .env("LPS_OUTPUT_ROOT", root)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn setup(config: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, config).unwrap();
    (dir, cfg)
}

fn hashes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_pipeline() {
    let (root, cfg) = setup(TINY);
    let cfg = cfg.to_str().unwrap();
    let (code, _, err) = lps(root.path(), &["gen-data", "--config", cfg]);
    assert_eq!(code, 0, "{err}");
    assert!(root.path().join("data/domain_0/manifest.json").exists());
    assert!(root.path().join("data/domain_1/manifest.json").exists());
    let data_before = hashes(&root.path().join("data"));

    let (code, _, err) = lps(root.path(), &["train", "--config", cfg, "--order", "1,0", "--out", "runs/a"]);
    assert_eq!(code, 0, "{err}");
    let run = root.path().join("runs/a");
    assert_eq!(fs::read_to_string(run.join("config.toml")).unwrap(), TINY);
    for f in ["resolved.json", "steps.jsonl", "epochs.jsonl", "history.json", "checkpoints/stage_01/checkpoint.json", "checkpoints/stage_02/checkpoint.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let resolved: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["order"], serde_json::json!([1, 0]));
    let history: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("history.json")).unwrap()).unwrap();
    assert_eq!(history["stages"][0]["trained_domains"], serde_json::json!([1]));

    let (code, _, err) = lps(root.path(), &["eval", "--run", "runs/a"]);
    assert_eq!(code, 0, "{err}");
    let first = fs::read(run.join("eval.json")).unwrap();
    let (code, _, _) = lps(root.path(), &["eval", "--run", "runs/a"]);
    assert_eq!(code, 0);
    assert_eq!(fs::read(run.join("eval.json")).unwrap(), first);
    // the final checkpoint reproduces the last stage of the training history
    let eval: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(eval["per_domain"], history["stages"][1]["per_domain"]);

    let (code, _, err) = lps(root.path(), &["train", "--config", cfg, "--mode", "finetune", "--out", "runs/ft"]);
    assert_eq!(code, 0, "{err}");
    let (code, out, err) = lps(root.path(), &["report", "--run", "runs/a", "--run", "runs/ft"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("reid_map.svg"));
    let table = fs::read_to_string(run.join("report/report.txt")).unwrap();
    assert!(table.contains("mode: lps") && table.contains("mode: finetune"));

    assert_eq!(hashes(&root.path().join("data")), data_before, "commands must not touch datasets");
}

#[test]
fn finetune_and_ablation_are_resolved() {
    let (root, cfg) = setup(TINY);
    let cfg = cfg.to_str().unwrap();
    assert_eq!(lps(root.path(), &["gen-data", "--config", cfg]).0, 0);
    let (code, _, err) = lps(root.path(), &["train", "--config", cfg, "--mode", "finetune", "--ablate", "no_rim", "--out", "ft"]);
    assert_eq!(code, 0, "{err}");
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.path().join("ft/resolved.json")).unwrap()).unwrap();
    let loss = &r["config"]["loss"];
    for flag in ["use_dkd", "use_rkd_plus", "use_rkd_basic", "use_rim"] {
        assert_eq!(loss[flag], false, "{flag}");
    }
    let (code, _, err) = lps(root.path(), &["train", "--config", cfg, "--ablate", "no_rim,rkd_basic", "--out", "abl"]);
    assert_eq!(code, 0, "{err}");
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.path().join("abl/resolved.json")).unwrap()).unwrap();
    let loss = &r["config"]["loss"];
    assert_eq!((loss["use_dkd"].as_bool(), loss["use_rkd_plus"].as_bool(), loss["use_rkd_basic"].as_bool(), loss["use_rim"].as_bool()), (Some(true), Some(false), Some(true), Some(false)));
    assert_eq!(r["label"], "lps no_rim rkd_basic");
}

#[test]
fn joint_report_has_a_single_stage() {
    let (root, cfg) = setup(TINY);
    let cfg = cfg.to_str().unwrap();
    assert_eq!(lps(root.path(), &["gen-data", "--config", cfg]).0, 0);
    let (code, _, err) = lps(root.path(), &["train", "--config", cfg, "--mode", "joint", "--out", "joint"]);
    assert_eq!(code, 0, "{err}");
    let (code, out, err) = lps(root.path(), &["report", "--run", "joint"]);
    assert_eq!(code, 0, "{err}");
    assert!(!out.contains(".svg"));
    let table = fs::read_to_string(root.path().join("joint/report/report.txt")).unwrap();
    let rows = table.lines().filter(|l| l.starts_with(char::is_numeric)).count();
    assert_eq!(rows, 1, "{table}");
}

#[test]
fn gen_data_is_reproducible_and_guards_output() {
    let (root, cfg) = setup(TINY);
    let cfg = cfg.to_str().unwrap();
    assert_eq!(lps(root.path(), &["gen-data", "--config", cfg, "--out", "a"]).0, 0);
    assert_eq!(lps(root.path(), &["gen-data", "--config", cfg, "--out", "b"]).0, 0);
    assert_eq!(hashes(&root.path().join("a")), hashes(&root.path().join("b")));
    let (code, _, err) = lps(root.path(), &["gen-data", "--config", cfg, "--out", "a"]);
    assert_eq!(code, 2);
    assert!(err.contains("--force"), "{err}");
    assert_eq!(lps(root.path(), &["gen-data", "--config", cfg, "--out", "a", "--force", "--seed", "9"]).0, 0);
    assert_ne!(hashes(&root.path().join("a")), hashes(&root.path().join("b")));
}

#[test]
fn exit_codes_distinguish_failures() {
    let bad = TINY.replace("num_identities = 6", "num_identities = 0");
    let (root, cfg) = setup(&bad);
    let (code, _, err) = lps(root.path(), &["gen-data", "--config", cfg.to_str().unwrap(), "--out", "d"]);
    assert_eq!(code, 2, "{err}");
    assert!(!root.path().join("d").exists(), "no partial output on a config error");

    let (root, cfg) = setup(TINY);
    let cfg = cfg.to_str().unwrap();
    let (code, _, err) = lps(root.path(), &["train", "--config", cfg, "--data", "nowhere"]);
    assert_eq!(code, 3);
    assert!(err.contains("domain 0"), "{err}");

    let (code, _, _) = lps(root.path(), &["train", "--config", cfg, "--order", "0,0"]);
    assert_eq!(code, 2);
    let (code, _, _) = lps(root.path(), &["eval", "--run", "missing"]);
    assert_eq!(code, 3);
    let (code, _, _) = lps(root.path(), &["train", "--config", cfg, "--ablate", "no_such_term"]);
    assert_eq!(code, 2);
}
