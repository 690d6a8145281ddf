//! Linear PCA through a cyclic Jacobi eigen-decomposition of the sample
//! covariance.

use serde::{Deserialize, Serialize};

use crate::error::{AfrError, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `target_dim x input_dim`, orthonormal rows, by decreasing variance.
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn target_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.components.cols()
    }

    /// `(x - mean) · componentsᵀ`.
    pub fn transform(&self, data: &Matrix) -> Result<Matrix> {
        if data.cols() != self.input_dim() {
            return Err(AfrError::dim(
                "pca_transform",
                format!("data has {} columns, model expects {}", data.cols(), self.input_dim()),
            ));
        }
        let centered = data.add_row_broadcast(&Matrix::row_vector(&self.mean).scale(-1.0))?;
        centered.matmul_nt(&self.components)
    }
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations. Returns
/// eigenvalues and eigenvectors (as columns of the second matrix), unsorted.
pub fn jacobi_eigen(sym: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = sym.rows();
    if sym.cols() != n {
        return Err(AfrError::dim("jacobi_eigen", format!("{}x{} is not square", n, sym.cols())));
    }
    let mut a = sym.clone();
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a.get(p, q) * a.get(p, q))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Ok(((0..n).map(|i| a.get(i, i)).collect(), v))
}

/// Sample covariance with the `n - 1` denominator.
pub fn covariance(data: &Matrix) -> (Vec<f64>, Matrix) {
    let n = data.rows();
    let mean: Vec<f64> = data
        .sum_rows()
        .as_slice()
        .iter()
        .map(|s| s / n as f64)
        .collect();
    let centered = data
        .add_row_broadcast(&Matrix::row_vector(&mean).scale(-1.0))
        .expect("mean has data width");
    let cov = centered
        .matmul_tn(&centered)
        .expect("same rows")
        .scale(1.0 / (n as f64 - 1.0));
    (mean, cov)
}

pub fn pca_fit(data: &Matrix, target_dim: usize) -> Result<PcaModel> {
    let limit = data.rows().saturating_sub(1).min(data.cols());
    if target_dim == 0 || target_dim > limit {
        return Err(AfrError::dim(
            "pca_fit",
            format!(
                "target dimension {target_dim} outside 1..={limit} for {}x{} data",
                data.rows(),
                data.cols()
            ),
        ));
    }
    let (mean, cov) = covariance(data);
    let (values, vectors) = jacobi_eigen(&cov)?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let d = data.cols();
    let mut components = Matrix::zeros(target_dim, d);
    for (row, &idx) in order.iter().take(target_dim).enumerate() {
        let mut comp: Vec<f64> = (0..d).map(|k| vectors.get(k, idx)).collect();
        // Sign convention: the largest-magnitude entry is positive.
        let pivot = comp
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            comp.iter_mut().for_each(|x| *x = -*x);
        }
        components.row_mut(row).copy_from_slice(&comp);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: order.iter().take(target_dim).map(|&i| values[i]).collect(),
    })
}

pub fn pca_transform(model: &PcaModel, data: &Matrix) -> Result<Matrix> {
    model.transform(data)
}
