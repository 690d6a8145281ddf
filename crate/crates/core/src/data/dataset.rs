use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::{load_labels, load_matrix, read_to_string, save_labels, save_matrix, write_bytes};
use crate::error::{AfrError, Result};
use crate::matrix::Matrix;
use crate::prototype::ClassId;

pub const FEATURES_FILE: &str = "features.afrm";
pub const LABELS_FILE: &str = "labels.csv";
pub const SEMANTICS_FILE: &str = "semantics.afrm";
pub const SPLIT_FILE: &str = "split.json";

/// Seen/unseen class lists and the sample indices held out for testing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seen: Vec<ClassId>,
    pub unseen: Vec<ClassId>,
    pub test_seen: Vec<usize>,
    pub test_unseen: Vec<usize>,
}

/// Features (`N x v`), labels, per-class semantics (`|Y| x s`, row = class
/// id), and the split. Only constructed through validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<ClassId>,
    semantics: Matrix,
    split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitReport {
    pub passed: bool,
    pub violations: Vec<String>,
}

/// Checks disjointness, label coverage, and semantic coverage.
pub fn validate_split(features: &Matrix, labels: &[ClassId], semantics: &Matrix, split: &Split) -> SplitReport {
    let mut violations = Vec::new();
    if features.rows() != labels.len() {
        violations.push(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        ));
    }
    let seen: BTreeSet<ClassId> = split.seen.iter().copied().collect();
    let unseen: BTreeSet<ClassId> = split.unseen.iter().copied().collect();
    let shared: Vec<ClassId> = seen.intersection(&unseen).copied().collect();
    if !shared.is_empty() {
        violations.push(format!("classes {shared:?} are both seen and unseen"));
    }
    if seen.len() != split.seen.len() || unseen.len() != split.unseen.len() {
        violations.push("duplicate class id in split lists".into());
    }
    let labeled: BTreeSet<ClassId> = labels.iter().copied().collect();
    let referenced: BTreeSet<ClassId> = seen.iter().chain(&unseen).chain(&labeled).copied().collect();
    for &c in &referenced {
        if c >= semantics.rows() {
            violations.push(format!(
                "class {c} has no semantic row ({} rows)",
                semantics.rows()
            ));
        }
    }
    for &l in &labeled {
        if !seen.contains(&l) && !unseen.contains(&l) {
            violations.push(format!("label {l} is in neither seen nor unseen set"));
        }
    }
    for (name, idx, pool) in [
        ("test_seen", &split.test_seen, &seen),
        ("test_unseen", &split.test_unseen, &unseen),
    ] {
        if idx.is_empty() {
            violations.push(format!("{name} is empty"));
        }
        for &i in idx {
            match labels.get(i) {
                None => violations.push(format!("{name} index {i} out of {} samples", labels.len())),
                Some(l) if !pool.contains(l) => {
                    violations.push(format!("{name} index {i} has class {l} outside its split"))
                }
                _ => {}
            }
        }
    }
    for &c in &seen {
        if !labels.contains(&c) {
            violations.push(format!("seen class {c} has no samples"));
        }
    }
    SplitReport {
        passed: violations.is_empty(),
        violations,
    }
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<ClassId>, semantics: Matrix, split: Split) -> Result<Self> {
        let report = validate_split(&features, &labels, &semantics, &split);
        if !report.passed {
            return Err(AfrError::Data(report.violations.join("; ")));
        }
        Ok(Self {
            features,
            labels,
            semantics,
            split,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn semantics(&self) -> &Matrix {
        &self.semantics
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn visual_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn semantic_dim(&self) -> usize {
        self.semantics.cols()
    }

    pub fn all_classes(&self) -> Vec<ClassId> {
        let mut all: Vec<ClassId> = self.split.seen.iter().chain(&self.split.unseen).copied().collect();
        all.sort_unstable();
        all
    }

    /// Semantic rows for the given classes, in order.
    pub fn semantics_for(&self, classes: &[ClassId]) -> Result<Matrix> {
        self.semantics.select_rows(classes)
    }

    /// Seen-class samples not held out for testing.
    pub fn train_indices(&self) -> Vec<usize> {
        let held: BTreeSet<usize> = self.split.test_seen.iter().copied().collect();
        let seen: BTreeSet<ClassId> = self.split.seen.iter().copied().collect();
        (0..self.labels.len())
            .filter(|i| seen.contains(&self.labels[*i]) && !held.contains(i))
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<(Matrix, Vec<ClassId>)> {
        let feats = self.features.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((feats, labels))
    }

    pub fn train_set(&self) -> Result<(Matrix, Vec<ClassId>)> {
        self.subset(&self.train_indices())
    }

    pub fn test_seen(&self) -> Result<(Matrix, Vec<ClassId>)> {
        self.subset(&self.split.test_seen)
    }

    pub fn test_unseen(&self) -> Result<(Matrix, Vec<ClassId>)> {
        self.subset(&self.split.test_unseen)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| AfrError::io(dir, e))?;
        save_matrix(dir.join(FEATURES_FILE), &self.features)?;
        save_labels(dir.join(LABELS_FILE), &self.labels)?;
        save_matrix(dir.join(SEMANTICS_FILE), &self.semantics)?;
        let json = serde_json::to_string_pretty(&self.split).expect("split serializes");
        write_bytes(&dir.join(SPLIT_FILE), json.as_bytes())
    }
}

/// Reads `features.afrm`, `labels.csv`, `semantics.afrm`, and `split.json`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(AfrError::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let features = load_matrix(dir.join(FEATURES_FILE))?;
    let labels = load_labels(dir.join(LABELS_FILE))?;
    let semantics = load_matrix(dir.join(SEMANTICS_FILE))?;
    let split_path = dir.join(SPLIT_FILE);
    let split: Split = serde_json::from_str(&read_to_string(&split_path)?).map_err(|e| AfrError::Json {
        path: split_path.clone(),
        source: e,
    })?;
    if features.rows() != labels.len() {
        return Err(AfrError::dim(
            "load_dataset",
            format!("{} feature rows but {} labels", features.rows(), labels.len()),
        ));
    }
    Dataset::new(features, labels, semantics, split)
}
