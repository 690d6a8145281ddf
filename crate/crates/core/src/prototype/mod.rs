//! Class-mean visual prototypes, their per-dimension SVR predictors, and the
//! error-ranked dimension selection that yields compact prototypes.

mod pca;
mod svr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use pca::{covariance, jacobi_eigen, pca_fit, pca_transform, PcaModel};
pub use svr::{default_gamma, dual_objective, kernel_matrix, rbf_kernel, svr_fit, svr_predict, SvrConfig, SvrModel};

use crate::error::{AfrError, Result};
use crate::matrix::Matrix;

pub type ClassId = usize;

/// One prototype row per class, optionally with the selected dimensions
/// that define its compact view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeTable {
    pub class_ids: Vec<ClassId>,
    pub prototypes: Matrix,
    pub selection: Option<Vec<usize>>,
}

impl PrototypeTable {
    pub fn new(class_ids: Vec<ClassId>, prototypes: Matrix) -> Result<Self> {
        if class_ids.len() != prototypes.rows() {
            return Err(AfrError::dim(
                "PrototypeTable",
                format!("{} class ids for {} prototype rows", class_ids.len(), prototypes.rows()),
            ));
        }
        let mut sorted = class_ids.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(AfrError::Data(format!("class {} appears twice in prototype table", w[0])));
        }
        Ok(Self {
            class_ids,
            prototypes,
            selection: None,
        })
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn position(&self, class: ClassId) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == class)
    }

    pub fn row_of(&self, class: ClassId) -> Result<&[f64]> {
        self.position(class)
            .map(|i| self.prototypes.row(i))
            .ok_or_else(|| AfrError::Data(format!("no prototype for class {class}")))
    }

    /// Attaches a dimension selection after validating it.
    pub fn with_selection(mut self, indices: Vec<usize>) -> Result<Self> {
        validate_indices(&indices, self.dim())?;
        self.selection = Some(indices);
        Ok(self)
    }

    /// The prototypes restricted to the attached selection, or all columns.
    pub fn compact(&self) -> Result<Matrix> {
        match &self.selection {
            Some(idx) => apply_selection(&self.prototypes, idx),
            None => Ok(self.prototypes.clone()),
        }
    }

    /// A new table holding only the compact view, with no selection attached.
    pub fn compact_table(&self) -> Result<PrototypeTable> {
        PrototypeTable::new(self.class_ids.clone(), self.compact()?)
    }

    /// Rows for the given classes, in order.
    pub fn subset(&self, classes: &[ClassId]) -> Result<PrototypeTable> {
        let idx = classes
            .iter()
            .map(|&c| {
                self.position(c)
                    .ok_or_else(|| AfrError::Data(format!("no prototype for class {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PrototypeTable {
            class_ids: classes.to_vec(),
            prototypes: self.prototypes.select_rows(&idx)?,
            selection: self.selection.clone(),
        })
    }

    /// One prototype row per label.
    pub fn rows_for_labels(&self, labels: &[ClassId]) -> Result<Matrix> {
        let idx = labels
            .iter()
            .map(|&c| {
                self.position(c)
                    .ok_or_else(|| AfrError::Data(format!("no prototype for class {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.prototypes.select_rows(&idx)
    }
}

/// Mean feature row of each listed class.
pub fn compute_prototypes(features: &Matrix, labels: &[ClassId], classes: &[ClassId]) -> Result<PrototypeTable> {
    if labels.len() != features.rows() {
        return Err(AfrError::dim(
            "compute_prototypes",
            format!("{} labels for {} feature rows", labels.len(), features.rows()),
        ));
    }
    let v = features.cols();
    let mut out = Matrix::zeros(classes.len(), v);
    for (ci, &class) in classes.iter().enumerate() {
        let mut count = 0usize;
        let acc = out.row_mut(ci);
        for (row, _) in features.iter_rows().zip(labels).filter(|(_, &l)| l == class) {
            for (a, x) in acc.iter_mut().zip(row) {
                *a += x;
            }
            count += 1;
        }
        if count == 0 {
            return Err(AfrError::Data(format!("class {class} has no samples")));
        }
        acc.iter_mut().for_each(|a| *a /= count as f64);
    }
    PrototypeTable::new(classes.to_vec(), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    /// Reduced semantic dimensionality; `None` uses `min(s, C − 1)`.
    pub pca_dim: Option<usize>,
    pub svr: SvrConfig,
    pub parallel: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            pca_dim: None,
            svr: SvrConfig::default(),
            parallel: true,
        }
    }
}

/// One SVR per visual dimension plus the semantic PCA they share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorBank {
    pub pca: PcaModel,
    pub svrs: Vec<SvrModel>,
    /// `E_j = Σ_c (Γ^j(e_c) − p_c^j)²` over the training classes.
    pub errors: Vec<f64>,
    pub gamma: f64,
}

impl PredictorBank {
    pub fn visual_dim(&self) -> usize {
        self.svrs.len()
    }

    pub fn max_kkt_violation(&self) -> f64 {
        self.svrs.iter().map(|s| s.kkt_violation).fold(0.0, f64::max)
    }

    /// Predictions for semantic rows already in the reduced space.
    pub fn predict_reduced(&self, reduced: &Matrix) -> Result<Matrix> {
        let v = self.visual_dim();
        let mut out = Matrix::zeros(reduced.rows(), v);
        for r in 0..reduced.rows() {
            for (j, svr) in self.svrs.iter().enumerate() {
                out.set(r, j, svr.predict(reduced.row(r))?);
            }
        }
        Ok(out)
    }
}

/// Fits one SVR per prototype dimension on `(reduced e_c, p_c^j)` pairs.
/// Parallel and sequential fitting give identical banks.
pub fn fit_prototype_predictor(
    prototypes: &PrototypeTable,
    semantics: &Matrix,
    config: &PredictorConfig,
) -> Result<PredictorBank> {
    let c = prototypes.len();
    if semantics.rows() != c {
        return Err(AfrError::dim(
            "fit_prototype_predictor",
            format!("{} semantic rows for {c} prototypes", semantics.rows()),
        ));
    }
    let target_dim = config
        .pca_dim
        .unwrap_or_else(|| semantics.cols().min(c.saturating_sub(1)));
    let pca = pca_fit(semantics, target_dim)?;
    let reduced = pca.transform(semantics)?;
    let gamma = config.svr.gamma.unwrap_or_else(|| default_gamma(&reduced));

    let v = prototypes.dim();
    let fit_one = |j: usize| -> Result<SvrModel> {
        let targets: Vec<f64> = (0..c).map(|i| prototypes.prototypes.get(i, j)).collect();
        svr_fit(&reduced, &targets, &config.svr, gamma).map_err(|e| AfrError::Dimensional {
            dim: j,
            source: Box::new(e),
        })
    };
    let svrs: Vec<SvrModel> = if config.parallel {
        (0..v).into_par_iter().map(fit_one).collect::<Result<_>>()?
    } else {
        (0..v).map(fit_one).collect::<Result<_>>()?
    };

    let mut bank = PredictorBank {
        pca,
        svrs,
        errors: Vec::new(),
        gamma,
    };
    let fitted = bank.predict_reduced(&reduced)?;
    bank.errors = (0..v)
        .map(|j| {
            (0..c)
                .map(|i| {
                    let d = fitted.get(i, j) - prototypes.prototypes.get(i, j);
                    d * d
                })
                .sum()
        })
        .collect();
    Ok(bank)
}

/// Predicted prototypes for raw semantic rows (one per listed class).
pub fn predict_prototypes(bank: &PredictorBank, semantics: &Matrix, class_ids: &[ClassId]) -> Result<PrototypeTable> {
    let reduced = bank.pca.transform(semantics)?;
    PrototypeTable::new(class_ids.to_vec(), bank.predict_reduced(&reduced)?)
}

/// Default compact size: half the visual dimensionality, at least one.
pub fn default_k(v: usize) -> usize {
    (v / 2).max(1)
}

/// Indices of the `k` smallest errors, ascending by error, ties to the lower
/// index. `None` uses [`default_k`].
pub fn select_features(errors: &[f64], k: Option<usize>) -> Result<Vec<usize>> {
    let v = errors.len();
    let k = k.unwrap_or_else(|| default_k(v));
    if k == 0 || k > v {
        return Err(AfrError::Contract(format!("k = {k} outside 1..={v}")));
    }
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| errors[a].total_cmp(&errors[b]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

fn validate_indices(indices: &[usize], width: usize) -> Result<()> {
    let mut seen = vec![false; width];
    for &i in indices {
        if i >= width {
            return Err(AfrError::dim(
                "apply_selection",
                format!("index {i} out of {width} columns"),
            ));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(AfrError::Contract(format!("index {i} selected twice")));
        }
    }
    Ok(())
}

/// Column-sliced copy in index order.
pub fn apply_selection(matrix: &Matrix, indices: &[usize]) -> Result<Matrix> {
    validate_indices(indices, matrix.cols())?;
    let mut data = Vec::with_capacity(matrix.rows() * indices.len());
    for row in matrix.iter_rows() {
        data.extend(indices.iter().map(|&j| row[j]));
    }
    Matrix::new(matrix.rows(), indices.len(), data)
}
