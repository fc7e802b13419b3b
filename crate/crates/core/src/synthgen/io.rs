//! On-disk dataset layout: `manifest.json` plus one tensor file and one
//! annotation record per scene.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DomainDataset, DomainSpec, Identity, Image, QueryRef, SceneSample};
use crate::error::{LpsError, Result};
use crate::geometry::BoundingBox;

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    spec: DomainSpec,
    train: Vec<SceneEntry>,
    test_gallery: Vec<SceneEntry>,
    test_queries: Vec<QueryRef>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneEntry {
    tensor: String,
    annotation: String,
    shape: [usize; 3],
    tensor_sha256: String,
    annotation_sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRecord {
    domain_id: u32,
    boxes: Vec<[f64; 4]>,
    identities: Vec<Identity>,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_dataset(ds: &DomainDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LpsError::io(dir, e))?;
    let write_split = |name: &str, scenes: &[SceneSample]| -> Result<Vec<SceneEntry>> {
        let sub = dir.join(name);
        fs::create_dir_all(&sub).map_err(|e| LpsError::io(&sub, e))?;
        scenes
            .iter()
            .enumerate()
            .map(|(i, scene)| {
                let tensor = format!("{name}/{i:05}.bin");
                let annotation = format!("{name}/{i:05}.json");
                let bytes: Vec<u8> = scene.image.data.iter().flat_map(|v| v.to_le_bytes()).collect();
                let record = AnnotationRecord {
                    domain_id: scene.domain_id,
                    boxes: scene.gt_boxes.iter().map(|b| b.as_array()).collect(),
                    identities: scene.gt_identities.clone(),
                };
                let ann = serde_json::to_vec(&record).map_err(|e| LpsError::serde(&annotation, e))?;
                write_file(&dir.join(&tensor), &bytes)?;
                write_file(&dir.join(&annotation), &ann)?;
                Ok(SceneEntry {
                    shape: [scene.image.height, scene.image.width, scene.image.channels],
                    tensor_sha256: sha256_hex(&bytes),
                    annotation_sha256: sha256_hex(&ann),
                    tensor,
                    annotation,
                })
            })
            .collect()
    };
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        spec: ds.spec.clone(),
        train: write_split("train", &ds.train)?,
        test_gallery: write_split("test", &ds.test_gallery)?,
        test_queries: ds.test_queries.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_vec_pretty(&manifest).map_err(|e| LpsError::serde(&path, e))?;
    write_file(&path, &text)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| LpsError::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(LpsError::MissingFile(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| LpsError::io(path, e))
}

pub fn load_dataset(dir: &Path) -> Result<DomainDataset> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(LpsError::MissingManifest(dir.to_path_buf()));
    }
    let text = read_file(&path)?;
    let manifest: Manifest = serde_json::from_slice(&text).map_err(|e| LpsError::CorruptRecord {
        record: MANIFEST_FILE.to_string(),
        reason: e.to_string(),
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(LpsError::CorruptRecord {
            record: MANIFEST_FILE.to_string(),
            reason: format!("unsupported format version {}", manifest.format_version),
        });
    }
    let train = load_split(dir, &manifest.train)?;
    let test_gallery = load_split(dir, &manifest.test_gallery)?;
    for q in &manifest.test_queries {
        let valid = test_gallery
            .get(q.scene)
            .is_some_and(|s| q.box_index < s.gt_boxes.len());
        if !valid {
            return Err(LpsError::CorruptRecord {
                record: format!("query {q:?}"),
                reason: "references a missing scene or box".into(),
            });
        }
    }
    Ok(DomainDataset {
        spec: manifest.spec,
        train,
        test_gallery,
        test_queries: manifest.test_queries,
    })
}

fn load_split(dir: &Path, entries: &[SceneEntry]) -> Result<Vec<SceneSample>> {
    entries.iter().map(|e| load_scene(dir, e)).collect()
}

fn load_scene(dir: &Path, entry: &SceneEntry) -> Result<SceneSample> {
    let tensor_path: PathBuf = dir.join(&entry.tensor);
    let bytes = read_file(&tensor_path)?;
    let corrupt = |record: &str, reason: String| LpsError::CorruptRecord {
        record: record.to_string(),
        reason,
    };
    if sha256_hex(&bytes) != entry.tensor_sha256 {
        return Err(corrupt(&entry.tensor, "checksum mismatch".into()));
    }
    let [h, w, c] = entry.shape;
    if bytes.len() != h * w * c * 4 {
        return Err(corrupt(
            &entry.tensor,
            format!("expected {} bytes, found {}", h * w * c * 4, bytes.len()),
        ));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let ann_bytes = read_file(&dir.join(&entry.annotation))?;
    if sha256_hex(&ann_bytes) != entry.annotation_sha256 {
        return Err(corrupt(&entry.annotation, "checksum mismatch".into()));
    }
    let record: AnnotationRecord =
        serde_json::from_slice(&ann_bytes).map_err(|e| corrupt(&entry.annotation, e.to_string()))?;
    if record.boxes.len() != record.identities.len() {
        return Err(corrupt(&entry.annotation, "boxes and identities differ in length".into()));
    }
    let gt_boxes: Vec<BoundingBox> = record
        .boxes
        .iter()
        .map(|b| BoundingBox::new(b[0], b[1], b[2], b[3]))
        .collect();
    if let Some(bad) = gt_boxes.iter().find(|b| !b.is_valid()) {
        return Err(corrupt(&entry.annotation, format!("invalid box {bad:?}")));
    }
    Ok(SceneSample {
        image: Image {
            height: h,
            width: w,
            channels: c,
            data,
        },
        gt_boxes,
        gt_identities: record.identities,
        domain_id: record.domain_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::generate_domain;

    fn tiny() -> DomainDataset {
        let spec = DomainSpec {
            num_scenes: 6,
            num_test_scenes: 4,
            num_identities: 4,
            ..DomainSpec::preset(1, 2)
        };
        generate_domain(&spec).unwrap()
    }

    #[test]
    fn save_then_load_is_lossless() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        assert!(load_dataset(dir.path()).unwrap() == ds);
    }

    #[test]
    fn empty_directory_reports_missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("missing manifest"), "{err}");
    }

    #[test]
    fn absent_tensor_file_is_named() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        fs::remove_file(dir.path().join("train/00003.bin")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, LpsError::MissingFile(_)));
        assert!(err.to_string().contains("00003.bin"), "{err}");
    }

    #[test]
    fn tampered_annotation_names_record() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        fs::write(dir.path().join("test/00001.json"), b"{not json").unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("test/00001.json"), "{err}");
    }
}
