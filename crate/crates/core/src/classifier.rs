//! Softmax and nearest-prototype classifiers and the per-class accuracy
//! metrics used for ZSL and GZSL evaluation.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState};
use crate::error::{AfrError, Result};
use crate::matrix::{squared_distance, Matrix};
use crate::prototype::{ClassId, PrototypeTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftmaxConfig {
    pub adam: AdamConfig,
    pub iterations: usize,
    /// Stop once the gradient's Frobenius norm falls below this.
    pub tolerance: f64,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            iterations: 2000,
            tolerance: 1e-6,
        }
    }
}

/// Linear scores `θ [x, 1]`; row `i` of `theta` belongs to `class_ids[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    pub theta: Matrix,
    pub class_ids: Vec<ClassId>,
}

impl SoftmaxModel {
    pub fn new(theta: Matrix, class_ids: Vec<ClassId>) -> Result<Self> {
        if theta.rows() != class_ids.len() || theta.cols() < 2 {
            return Err(AfrError::dim(
                "SoftmaxModel",
                format!("theta {:?} for {} classes", theta.shape(), class_ids.len()),
            ));
        }
        if class_ids.iter().collect::<BTreeSet<_>>().len() != class_ids.len() {
            return Err(AfrError::Contract("duplicate class id in softmax model".into()));
        }
        if !theta.all_finite() {
            return Err(AfrError::Contract("softmax weights must be finite".into()));
        }
        Ok(Self { theta, class_ids })
    }

    pub fn feature_dim(&self) -> usize {
        self.theta.cols() - 1
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim() {
            return Err(AfrError::dim(
                "classify",
                format!("feature has {} dims, model expects {}", x.len(), self.feature_dim()),
            ));
        }
        Ok(())
    }

    /// One score per class, in `class_ids` order.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let d = self.feature_dim();
        Ok(self
            .theta
            .iter_rows()
            .map(|w| w[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[d])
            .collect())
    }

    /// Highest-scoring class among `candidates` (all classes if `None`).
    pub fn classify_among(&self, x: &[f64], candidates: Option<&[ClassId]>) -> Result<ClassId> {
        let scores = self.scores(x)?;
        let pool = self.class_ids.iter().zip(&scores).filter(|(c, _)| candidates.is_none_or(|cs| cs.contains(c)));
        argmax_lowest(pool.map(|(&c, &s)| (c, s))).ok_or_else(|| AfrError::Contract("no candidate class in model".into()))
    }
}

/// Highest value, ties to the lowest class id.
fn argmax_lowest(items: impl Iterator<Item = (ClassId, f64)>) -> Option<ClassId> {
    items
        .fold(None, |best: Option<(ClassId, f64)>, (c, s)| match best {
            Some((bc, bs)) if bs > s || (bs == s && bc < c) => Some((bc, bs)),
            _ => Some((c, s)),
        })
        .map(|(c, _)| c)
}

pub fn classify(model: &SoftmaxModel, x: &[f64]) -> Result<ClassId> {
    model.classify_among(x, None)
}

/// Class of the nearest prototype in Euclidean distance, ties to the lowest id.
pub fn nn1_classify(prototypes: &PrototypeTable, x: &[f64]) -> Result<ClassId> {
    nn1_among(prototypes, x, None)
}

fn nn1_among(prototypes: &PrototypeTable, x: &[f64], candidates: Option<&[ClassId]>) -> Result<ClassId> {
    if prototypes.is_empty() {
        return Err(AfrError::Contract("empty prototype table".into()));
    }
    if x.len() != prototypes.dim() {
        return Err(AfrError::dim(
            "nn1_classify",
            format!("feature has {} dims, prototypes {}", x.len(), prototypes.dim()),
        ));
    }
    let pool = prototypes
        .class_ids
        .iter()
        .enumerate()
        .filter(|(_, c)| candidates.is_none_or(|cs| cs.contains(c)))
        .map(|(i, &c)| (c, -squared_distance(x, prototypes.prototypes.row(i))));
    argmax_lowest(pool).ok_or_else(|| AfrError::Contract("no candidate class in prototype table".into()))
}

/// Mean cross-entropy of `θ` on `(x, y)` and its gradient `(P − Y)ᵀ [X, 1] / N`.
/// `targets[i]` is the row of `θ` for sample `i`.
pub fn softmax_loss(theta: &Matrix, x: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    let (k, d) = (theta.rows(), x.cols());
    if theta.cols() != d + 1 || targets.len() != x.rows() || x.rows() == 0 {
        return Err(AfrError::dim(
            "softmax_loss",
            format!("theta {:?}, features {:?}, {} targets", theta.shape(), x.shape(), targets.len()),
        ));
    }
    let n = x.rows() as f64;
    let mut grad = Matrix::zeros(k, d + 1);
    let mut loss = 0.0;
    let mut p = vec![0.0; k];
    for (r, &t) in targets.iter().enumerate() {
        let xr = x.row(r);
        for (c, pc) in p.iter_mut().enumerate() {
            let w = theta.row(c);
            *pc = w[..d].iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() + w[d];
        }
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + p.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        loss -= p[t] - log_z;
        for (c, pc) in p.iter_mut().enumerate() {
            let coeff = ((*pc - log_z).exp() - f64::from(u8::from(c == t))) / n;
            let g = grad.row_mut(c);
            for (gj, xj) in g[..d].iter_mut().zip(xr) {
                *gj += coeff * xj;
            }
            g[d] += coeff;
        }
    }
    Ok((loss / n, grad))
}

/// Full-batch Adam on the mean cross-entropy from `θ = 0`.
pub fn softmax_fit(features: &Matrix, labels: &[ClassId], classes: &[ClassId], config: &SoftmaxConfig) -> Result<SoftmaxModel> {
    let mut class_ids = classes.to_vec();
    class_ids.sort_unstable();
    class_ids.dedup();
    if class_ids.len() < 2 {
        return Err(AfrError::Contract(format!("softmax needs >= 2 classes, got {}", class_ids.len())));
    }
    if labels.len() != features.rows() {
        return Err(AfrError::dim(
            "softmax_fit",
            format!("{} feature rows but {} labels", features.rows(), labels.len()),
        ));
    }
    let present: BTreeSet<ClassId> = labels.iter().copied().collect();
    if let Some(c) = class_ids.iter().find(|c| !present.contains(c)) {
        return Err(AfrError::Data(format!("class {c} is absent from the training data")));
    }
    let targets = labels
        .iter()
        .map(|l| {
            class_ids
                .binary_search(l)
                .map_err(|_| AfrError::Data(format!("label {l} is not a training class")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut theta = Matrix::zeros(class_ids.len(), features.cols() + 1);
    let mut adam = AdamState::new(config.adam, [&theta]);
    for _ in 0..config.iterations {
        let (loss, grad) = softmax_loss(&theta, features, &targets)?;
        if !loss.is_finite() {
            return Err(AfrError::Training {
                step: adam.step_count() + 1,
                reason: format!("non-finite softmax loss {loss}"),
            });
        }
        if grad.frobenius_norm() < config.tolerance {
            break;
        }
        adam.update([&mut theta], [&grad])?;
    }
    SoftmaxModel::new(theta, class_ids)
}

/// Either evaluator from the pipeline.
#[derive(Debug, Clone, Copy)]
pub enum Evaluator<'a> {
    Softmax(&'a SoftmaxModel),
    Nearest(&'a PrototypeTable),
}

impl Evaluator<'_> {
    pub fn predict(&self, x: &[f64], candidates: Option<&[ClassId]>) -> Result<ClassId> {
        match self {
            Evaluator::Softmax(m) => m.classify_among(x, candidates),
            Evaluator::Nearest(t) => nn1_among(t, x, candidates),
        }
    }

    /// Row-wise predictions; rows fan out but the output keeps row order.
    pub fn predict_all(&self, features: &Matrix, candidates: Option<&[ClassId]>) -> Result<Vec<ClassId>> {
        (0..features.rows())
            .into_par_iter()
            .map(|r| self.predict(features.row(r), candidates))
            .collect()
    }
}

/// Accuracy within each class of `class_set`, as percentages.
pub fn per_class_accuracies(
    predictions: &[ClassId],
    labels: &[ClassId],
    class_set: &[ClassId],
) -> Result<BTreeMap<ClassId, f64>> {
    if predictions.len() != labels.len() {
        return Err(AfrError::dim(
            "per_class_top1",
            format!("{} predictions for {} labels", predictions.len(), labels.len()),
        ));
    }
    let classes: BTreeSet<ClassId> = class_set.iter().copied().collect();
    let mut tally: BTreeMap<ClassId, (usize, usize)> = classes.iter().map(|&c| (c, (0, 0))).collect();
    for (&p, &l) in predictions.iter().zip(labels) {
        let entry = tally
            .get_mut(&l)
            .ok_or_else(|| AfrError::Data(format!("label {l} is outside the evaluated class set")))?;
        entry.0 += usize::from(p == l);
        entry.1 += 1;
    }
    tally
        .into_iter()
        .map(|(c, (hit, total))| {
            if total == 0 {
                Err(AfrError::Data(format!("class {c} has no test samples")))
            } else {
                Ok((c, 100.0 * hit as f64 / total as f64))
            }
        })
        .collect()
}

/// Mean over classes of within-class accuracy, in percent.
pub fn per_class_top1(predictions: &[ClassId], labels: &[ClassId], class_set: &[ClassId]) -> Result<f64> {
    let acc = per_class_accuracies(predictions, labels, class_set)?;
    if acc.is_empty() {
        return Err(AfrError::Data("empty class set".into()));
    }
    Ok(acc.values().sum::<f64>() / acc.len() as f64)
}

pub fn harmonic_mean(u: f64, s: f64) -> Result<f64> {
    if !(u >= 0.0) || !(s >= 0.0) {
        return Err(AfrError::Contract(format!("accuracies must be >= 0, got U={u} S={s}")));
    }
    if u + s == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * u * s / (u + s))
}

/// Median synthetic residual norm against median pairwise prototype distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRatio {
    pub median_residual_norm: f64,
    pub median_prototype_distance: f64,
    pub ratio: f64,
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn residual_ratio(residuals: &Matrix, prototypes: &Matrix) -> Result<ResidualRatio> {
    if prototypes.rows() < 2 {
        return Err(AfrError::Contract(format!("need >= 2 prototypes, got {}", prototypes.rows())));
    }
    if residuals.rows() == 0 || residuals.cols() != prototypes.cols() {
        return Err(AfrError::dim(
            "residual_ratio",
            format!("residuals {:?}, prototypes {:?}", residuals.shape(), prototypes.shape()),
        ));
    }
    let norms = residuals.iter_rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let p = prototypes.rows();
    let mut dists = Vec::with_capacity(p * (p - 1) / 2);
    for i in 0..p {
        for j in i + 1..p {
            dists.push(squared_distance(prototypes.row(i), prototypes.row(j)).sqrt());
        }
    }
    let median_residual_norm = median(norms);
    let median_prototype_distance = median(dists);
    if median_prototype_distance == 0.0 {
        return Err(AfrError::Contract("median prototype distance is zero".into()));
    }
    Ok(ResidualRatio {
        median_residual_norm,
        median_prototype_distance,
        ratio: median_residual_norm / median_prototype_distance,
    })
}

/// Fraction of rows whose nearest prototype is their own class.
pub fn prototype_purity(features: &Matrix, labels: &[ClassId], prototypes: &PrototypeTable) -> Result<f64> {
    if labels.len() != features.rows() || labels.is_empty() {
        return Err(AfrError::dim(
            "prototype_purity",
            format!("{} feature rows, {} labels", features.rows(), labels.len()),
        ));
    }
    let predictions = Evaluator::Nearest(prototypes).predict_all(features, None)?;
    let own = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(own as f64 / labels.len() as f64)
}

/// Accuracy summary of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub u_acc: f64,
    pub s_acc: Option<f64>,
    pub h_mean: Option<f64>,
    pub per_class: BTreeMap<ClassId, f64>,
    pub purity: Option<f64>,
    pub residual_ratio: Option<ResidualRatio>,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl EvaluationReport {
    fn from_accuracies(u_acc: f64, s_acc: Option<f64>, per_class: BTreeMap<ClassId, f64>) -> Result<Self> {
        let h_mean = s_acc.map(|s| harmonic_mean(u_acc, s)).transpose()?;
        Ok(Self {
            u_acc,
            s_acc,
            h_mean,
            per_class,
            purity: None,
            residual_ratio: None,
            seed: 0,
            config: serde_json::Value::Null,
        })
    }

    /// Checks the accuracy bounds and that `h_mean` matches `U` and `S`.
    pub fn is_consistent(&self) -> bool {
        let in_range = |v: f64| (0.0..=100.0).contains(&v);
        let h_ok = match (self.s_acc, self.h_mean) {
            (Some(s), Some(h)) => harmonic_mean(self.u_acc, s).is_ok_and(|x| x == h),
            (None, None) => true,
            _ => false,
        };
        in_range(self.u_acc) && self.s_acc.is_none_or(in_range) && self.per_class.values().all(|&v| in_range(v)) && h_ok
    }
}

fn non_empty(features: &Matrix, labels: &[ClassId], name: &str) -> Result<()> {
    if features.rows() == 0 || labels.is_empty() {
        return Err(AfrError::Data(format!("{name} split is empty")));
    }
    Ok(())
}

/// Unseen-class accuracy with predictions restricted to `unseen`.
pub fn evaluate_zsl(evaluator: Evaluator<'_>, features: &Matrix, labels: &[ClassId], unseen: &[ClassId]) -> Result<EvaluationReport> {
    non_empty(features, labels, "test_unseen")?;
    let predictions = evaluator.predict_all(features, Some(unseen))?;
    let per_class = per_class_accuracies(&predictions, labels, unseen)?;
    let u = per_class_top1(&predictions, labels, unseen)?;
    EvaluationReport::from_accuracies(u, None, per_class)
}

/// Seen and unseen accuracies with predictions over every class the
/// evaluator knows.
pub fn evaluate_gzsl(
    evaluator: Evaluator<'_>,
    seen_test: (&Matrix, &[ClassId]),
    unseen_test: (&Matrix, &[ClassId]),
    seen: &[ClassId],
    unseen: &[ClassId],
) -> Result<EvaluationReport> {
    non_empty(seen_test.0, seen_test.1, "test_seen")?;
    non_empty(unseen_test.0, unseen_test.1, "test_unseen")?;
    let ps = evaluator.predict_all(seen_test.0, None)?;
    let pu = evaluator.predict_all(unseen_test.0, None)?;
    let mut per_class = per_class_accuracies(&ps, seen_test.1, seen)?;
    per_class.extend(per_class_accuracies(&pu, unseen_test.1, unseen)?);
    let s = per_class_top1(&ps, seen_test.1, seen)?;
    let u = per_class_top1(&pu, unseen_test.1, unseen)?;
    EvaluationReport::from_accuracies(u, Some(s), per_class)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_to_lowest_id() {
        assert_eq!(argmax_lowest([(5, 1.0), (2, 1.0), (7, 0.5)].into_iter()), Some(2));
        assert_eq!(argmax_lowest([(5, 1.0), (2, 0.0)].into_iter()), Some(5));
        assert_eq!(argmax_lowest(std::iter::empty()), None);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn harmonic_mean_edges() {
        assert_eq!(harmonic_mean(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(harmonic_mean(0.0, 80.0).unwrap(), 0.0);
        assert_eq!(harmonic_mean(40.0, 40.0).unwrap(), 40.0);
        assert!(harmonic_mean(-1.0, 2.0).is_err());
    }
}
