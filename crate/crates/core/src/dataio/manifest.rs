//! JSON class manifests.
//!
//! ```json
//! {
//!   "classes": [{"id": 0, "name": "drink water"}, ...],
//!   "splits": {"seen": [0, ...], "unseen": [5, ...]},
//!   "files": {"visual": "visual.dvta", "labels": "labels.dvta",
//!             "label_emb": "label_emb.dvta", "context_emb": "context_emb.dvta"}
//! }
//! ```
//!
//! File paths are resolved relative to the manifest's directory. The labels
//! file is a one-column feature file holding class ids as exact integers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bank::{ClassBank, ClassId, Dataset, FeatureBank};
use super::format::{load_feature_file, save_feature_file};
use crate::error::{Error, Result};
use crate::numkernel::Matrix;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub classes: Vec<ClassEntry>,
    pub splits: Splits,
    pub files: Files,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub id: ClassId,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub seen: Vec<ClassId>,
    pub unseen: Vec<ClassId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Files {
    pub visual: PathBuf,
    pub labels: PathBuf,
    pub label_emb: PathBuf,
    pub context_emb: PathBuf,
}

impl Files {
    pub fn standard() -> Self {
        Files {
            visual: "visual.dvta".into(),
            labels: "labels.dvta".into(),
            label_emb: "label_emb.dvta".into(),
            context_emb: "context_emb.dvta".into(),
        }
    }

    pub fn all(&self) -> [&Path; 4] {
        [&self.visual, &self.labels, &self.label_emb, &self.context_emb]
    }
}

/// Accepts either a manifest file or a directory containing `manifest.json`.
pub fn resolve_manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads a manifest and every file it references, validating the result.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = resolve_manifest_path(path.as_ref());
    let manifest = read_manifest(&path)?;
    let base = path.parent().unwrap_or(Path::new("."));

    let visual = load_feature_file(base.join(&manifest.files.visual))?;
    let label_col = load_feature_file(base.join(&manifest.files.labels))?;
    let label_emb = load_feature_file(base.join(&manifest.files.label_emb))?;
    let context_emb = load_feature_file(base.join(&manifest.files.context_emb))?;

    let mut problems = Vec::new();
    if label_col.cols() != 1 {
        problems.push(format!("labels file must have 1 column, found {}", label_col.cols()));
    }
    if label_col.rows() != visual.rows() {
        problems.push(format!(
            "labels file has {} rows but visual file has {}",
            label_col.rows(),
            visual.rows()
        ));
    }
    if visual.rows() == 0 {
        problems.push("visual file has no samples".into());
    }
    let mut labels = Vec::with_capacity(label_col.rows());
    for (i, &x) in label_col.as_slice().iter().enumerate() {
        if x.fract() != 0.0 || x < 0.0 || x > u32::MAX as f64 {
            problems.push(format!("label row {i} is not a class id: {x}"));
        } else {
            labels.push(x as ClassId);
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }

    let classes = ClassBank::new(
        manifest.classes.iter().map(|c| c.id).collect(),
        manifest.classes.iter().map(|c| c.name.clone()).collect(),
        label_emb,
        context_emb,
        manifest.splits.seen.clone(),
        manifest.splits.unseen.clone(),
    )?;
    Dataset::new(FeatureBank::new(visual, labels)?, classes)
}

/// Writes `dataset` into `dir` as `manifest.json` plus four feature files.
pub fn save_dataset(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let classes = &dataset.classes;
    let manifest = Manifest {
        classes: classes
            .ids()
            .iter()
            .zip(classes.names())
            .map(|(&id, name)| ClassEntry { id, name: name.clone() })
            .collect(),
        splits: Splits {
            seen: classes.seen_ids().to_vec(),
            unseen: classes.unseen_ids().to_vec(),
        },
        files: Files::standard(),
    };
    let labels = Matrix::from_raw(
        dataset.features.len(),
        1,
        dataset.features.labels().iter().map(|&l| l as f64).collect(),
    );
    save_feature_file(dir.join(&manifest.files.visual), dataset.features.visual())?;
    save_feature_file(dir.join(&manifest.files.labels), &labels)?;
    save_feature_file(dir.join(&manifest.files.label_emb), classes.label_embeddings())?;
    save_feature_file(dir.join(&manifest.files.context_emb), classes.context_embeddings())?;
    let text = serde_json::to_string_pretty(&manifest)?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}
