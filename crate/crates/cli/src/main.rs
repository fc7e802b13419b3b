use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lps_cli::commands;
use lps_cli::{output_path, Ablation, CliResult, Overrides, OUTPUT_ROOT_ENV};
use lps_core::lifelong::TrainMode;
use lps_core::memory::SamplingScheme;

#[derive(Parser)]
#[command(name = "lps", version, about = "Lifelong person search on synthetic domains")]
struct Cli {
    /// Root for relative output paths.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Render every configured domain to a dataset directory.
    GenData {
        #[command(flatten)]
        common: ConfigArgs,
        /// Dataset root; one directory per domain.
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train the domain sequence and write checkpoints, logs and history.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
        /// Directory written by gen-data.
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// lps, finetune or joint.
        #[arg(long)]
        mode: Option<TrainMode>,
        /// Comma-separated domain ids, e.g. 2,0,1.
        #[arg(long, value_delimiter = ',')]
        order: Vec<u32>,
        /// Loss toggle; repeat or comma-separate for several.
        #[arg(long, value_delimiter = ',')]
        ablate: Vec<Ablation>,
        /// Exemplar sampling: uniform, random, max_bbox or max_id.
        #[arg(long)]
        sampling: Option<SamplingScheme>,
        /// Run directory; defaults to runs/<mode>-seed<seed>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the final checkpoint of a run on every trained domain.
    Eval {
        /// Run directory written by train.
        #[arg(long)]
        run: PathBuf,
        /// Directory written by gen-data.
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Metrics file; defaults to <run>/eval.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forgetting table and plots for one or more runs.
    Report {
        /// Run directories; the first one is drawn solid.
        #[arg(long, required = true)]
        run: Vec<PathBuf>,
        /// Output directory; defaults to <first run>/report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let root = cli.output_root.as_deref();
    match cli.command {
        Command::GenData { common, out } => {
            let overrides = Overrides {
                seed: common.seed,
                ..Overrides::default()
            };
            for dir in commands::gen_data(&common.config, &overrides, &output_path(root, &out), common.force)? {
                println!("{}", dir.display());
            }
        }
        Command::Train {
            common,
            data,
            mode,
            order,
            ablate,
            sampling,
            out,
        } => {
            let overrides = Overrides {
                seed: common.seed,
                mode,
                order: (!order.is_empty()).then_some(order),
                ablate,
                sampling,
            };
            let out = out.unwrap_or_else(|| {
                let mode = mode.map_or_else(|| "run".to_string(), |m| m.to_string());
                PathBuf::from("runs").join(format!("{mode}-seed{}", common.seed.map_or_else(|| "cfg".into(), |s| s.to_string())))
            });
            let dir = commands::train(&common.config, &overrides, &output_path(root, &data), &output_path(root, &out), common.force)?;
            println!("{}", dir.display());
        }
        Command::Eval { run, data, out } => {
            let out = out.map(|o| output_path(root, &o));
            let (path, metrics) = commands::eval(&output_path(root, &run), &output_path(root, &data), out.as_deref())?;
            for m in &metrics.per_domain {
                println!(
                    "domain {}: recall {:.4} AP {:.4} mAP {:.4} top-1 {:.4}",
                    m.domain_id, m.recall, m.ap, m.map, m.top1
                );
            }
            println!("{}", path.display());
        }
        Command::Report { run, out } => {
            let runs: Vec<PathBuf> = run.iter().map(|r| output_path(root, r)).collect();
            let out = out.map_or_else(|| runs[0].join("report"), |o| output_path(root, &o));
            for path in commands::report(&runs, &out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
