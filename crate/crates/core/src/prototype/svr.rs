//! Epsilon-insensitive support vector regression with an RBF kernel, solved
//! in the dual by SMO.
//!
//! The dual is written over `2C` box-constrained variables `β = [a; a*]` with
//! labels `y = [+1; −1]`:
//!
//! ```text
//! min ½ βᵀQβ + pᵀβ,   Q_kl = y_k y_l K(k mod C, l mod C)
//! p = [δ − t; δ + t],  0 ≤ β ≤ α/C,  yᵀβ = 0 (only with a bias term)
//! ```
//!
//! and the regressor is `f(e) = Σ_c (a_c − a*_c) K(e, e_c) + b`.

use serde::{Deserialize, Serialize};

use crate::error::{AfrError, Result};
use crate::matrix::{squared_distance, Matrix};

const TAU: f64 = 1e-12;

pub fn rbf_kernel(a: &[f64], b: &[f64], gamma: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(AfrError::dim(
            "rbf_kernel",
            format!("vectors of length {} and {}", a.len(), b.len()),
        ));
    }
    if !(gamma >= 0.0) {
        return Err(AfrError::Contract(format!("kernel width must be >= 0, got {gamma}")));
    }
    Ok((-gamma * squared_distance(a, b)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrConfig {
    /// Slack penalty; the per-sample dual cap is `alpha / C`.
    pub alpha: f64,
    /// Half-width of the insensitive tube.
    pub delta: f64,
    /// RBF width; `None` picks `1 / (input_dim · mean input variance)`.
    pub gamma: Option<f64>,
    /// Include the intercept `b` (adds the equality constraint to the dual).
    pub bias: bool,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            delta: 0.1,
            gamma: None,
            bias: true,
            tolerance: 1e-6,
            max_iterations: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    /// `a_c − a*_c` per training row.
    pub coefficients: Vec<f64>,
    /// The raw `[a; a*]` dual vector.
    pub duals: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub delta: f64,
    pub alpha: f64,
    pub inputs: Matrix,
    pub targets: Vec<f64>,
    /// Maximal KKT violation at termination.
    pub kkt_violation: f64,
    pub iterations: usize,
}

impl SvrModel {
    pub fn predict(&self, e: &[f64]) -> Result<f64> {
        if e.len() != self.inputs.cols() {
            return Err(AfrError::dim(
                "svr_predict",
                format!("input has {} entries, model expects {}", e.len(), self.inputs.cols()),
            ));
        }
        let mut acc = 0.0;
        for (coef, row) in self.coefficients.iter().zip(self.inputs.iter_rows()) {
            if *coef != 0.0 {
                acc += coef * (-self.gamma * squared_distance(e, row)).exp();
            }
        }
        Ok(acc + self.bias)
    }

    /// Dual objective in minimisation form, `½ dᵀKd + δ Σ(a + a*) − tᵀd`.
    pub fn dual_objective(&self) -> f64 {
        let k = kernel_matrix(&self.inputs, self.gamma);
        dual_objective(&k, &self.targets, self.delta, &self.duals)
    }

    /// Per-sample upper bound on each dual variable.
    pub fn dual_cap(&self) -> f64 {
        self.alpha / self.targets.len() as f64
    }
}

pub fn kernel_matrix(inputs: &Matrix, gamma: f64) -> Matrix {
    let n = inputs.rows();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k.set(i, i, 1.0);
        for j in 0..i {
            let v = (-gamma * squared_distance(inputs.row(i), inputs.row(j))).exp();
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

/// `½ βᵀQβ + pᵀβ` for the stacked dual vector.
pub fn dual_objective(kernel: &Matrix, targets: &[f64], delta: f64, duals: &[f64]) -> f64 {
    let c = targets.len();
    let d: Vec<f64> = (0..c).map(|i| duals[i] - duals[i + c]).collect();
    let mut quad = 0.0;
    for i in 0..c {
        for j in 0..c {
            quad += d[i] * d[j] * kernel.get(i, j);
        }
    }
    let lin: f64 = (0..c)
        .map(|i| delta * (duals[i] + duals[i + c]) - targets[i] * d[i])
        .sum();
    0.5 * quad + lin
}

struct Problem<'a> {
    kernel: &'a Matrix,
    c: usize,
    cap: f64,
    y: Vec<f64>,
    beta: Vec<f64>,
    grad: Vec<f64>,
}

impl Problem<'_> {
    #[inline]
    fn q(&self, k: usize, l: usize) -> f64 {
        self.y[k] * self.y[l] * self.kernel.get(k % self.c, l % self.c)
    }

    #[inline]
    fn at_upper(&self, k: usize) -> bool {
        self.beta[k] >= self.cap
    }

    #[inline]
    fn at_lower(&self, k: usize) -> bool {
        self.beta[k] <= 0.0
    }

    fn in_up(&self, k: usize) -> bool {
        if self.y[k] > 0.0 {
            !self.at_upper(k)
        } else {
            !self.at_lower(k)
        }
    }

    fn in_low(&self, k: usize) -> bool {
        if self.y[k] > 0.0 {
            !self.at_lower(k)
        } else {
            !self.at_upper(k)
        }
    }

    fn apply(&mut self, k: usize, delta: f64) {
        if delta == 0.0 {
            return;
        }
        for l in 0..self.beta.len() {
            self.grad[l] += self.q(k, l) * delta;
        }
    }

    /// Working-set selection with second-order information. Returns the
    /// pair and the current maximal violation.
    fn select(&self) -> (Option<(usize, usize)>, f64) {
        let n = self.beta.len();
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for k in 0..n {
            if self.in_up(k) {
                let v = -self.y[k] * self.grad[k];
                if v >= gmax {
                    gmax = v;
                    i_sel = Some(k);
                }
            }
        }
        let Some(i) = i_sel else {
            return (None, 0.0);
        };
        let mut gmax2 = f64::NEG_INFINITY;
        let mut best = f64::INFINITY;
        let mut j_sel = None;
        for k in 0..n {
            if !self.in_low(k) {
                continue;
            }
            let yg = self.y[k] * self.grad[k];
            gmax2 = gmax2.max(yg);
            let b = gmax + yg;
            if b > 0.0 {
                let a = self.q(i, i) + self.q(k, k) - 2.0 * self.y[i] * self.y[k] * self.q(i, k);
                let a = if a > 0.0 { a } else { TAU };
                let obj = -(b * b) / a;
                if obj <= best {
                    best = obj;
                    j_sel = Some(k);
                }
            }
        }
        let violation = gmax + gmax2;
        (j_sel.map(|j| (i, j)), violation)
    }

    fn update_pair(&mut self, i: usize, j: usize) {
        let cap = self.cap;
        let qii = self.q(i, i);
        let qjj = self.q(j, j);
        let qij = self.q(i, j);
        let (old_i, old_j) = (self.beta[i], self.beta[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if self.y[i] != self.y[j] {
            let quad = (qii + qjj + 2.0 * qij).max(TAU);
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > cap {
                    ai = cap;
                    aj = cap - diff;
                }
            } else if aj > cap {
                aj = cap;
                ai = cap + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(TAU);
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > cap {
                if ai > cap {
                    ai = cap;
                    aj = sum - cap;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > cap {
                if aj > cap {
                    aj = cap;
                    ai = sum - cap;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.beta[i] = ai;
        self.beta[j] = aj;
        self.apply(i, ai - old_i);
        self.apply(j, aj - old_j);
    }

    /// Intercept from free variables, or the midpoint of the feasible range.
    fn intercept(&self) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut free_sum = 0.0;
        let mut free = 0usize;
        for k in 0..self.beta.len() {
            let yg = self.y[k] * self.grad[k];
            if self.at_upper(k) {
                if self.y[k] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if self.at_lower(k) {
                if self.y[k] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                free_sum += yg;
            }
        }
        let rho = if free > 0 {
            free_sum / free as f64
        } else {
            (ub + lb) / 2.0
        };
        -rho
    }

    /// Box-only variant used without an intercept: greedy coordinate descent.
    fn solve_unbiased(&mut self, tol: f64, max_iter: usize) -> (usize, f64) {
        let n = self.beta.len();
        let mut iter = 0;
        loop {
            let mut worst = 0.0;
            let mut pick = None;
            for k in 0..n {
                let g = self.grad[k];
                let pg = if self.at_lower(k) {
                    g.min(0.0)
                } else if self.at_upper(k) {
                    g.max(0.0)
                } else {
                    g
                };
                if pg.abs() > worst {
                    worst = pg.abs();
                    pick = Some(k);
                }
            }
            if worst <= tol || pick.is_none() || iter >= max_iter {
                return (iter, worst);
            }
            let k = pick.unwrap();
            let qkk = self.q(k, k).max(TAU);
            let new = (self.beta[k] - self.grad[k] / qkk).clamp(0.0, self.cap);
            let delta = new - self.beta[k];
            self.beta[k] = new;
            self.apply(k, delta);
            iter += 1;
        }
    }
}

pub fn svr_fit(inputs: &Matrix, targets: &[f64], config: &SvrConfig, gamma: f64) -> Result<SvrModel> {
    let c = inputs.rows();
    if c < 2 {
        return Err(AfrError::Contract(format!("svr needs at least 2 training rows, got {c}")));
    }
    if targets.len() != c {
        return Err(AfrError::dim(
            "svr_fit",
            format!("{c} input rows but {} targets", targets.len()),
        ));
    }
    if !(config.alpha > 0.0) || !(config.delta >= 0.0) {
        return Err(AfrError::Contract(format!(
            "svr needs alpha > 0 and delta >= 0, got alpha={} delta={}",
            config.alpha, config.delta
        )));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(AfrError::Contract(format!("kernel width must be finite and >= 0, got {gamma}")));
    }
    let kernel = kernel_matrix(inputs, gamma);
    let mut y = vec![1.0; c];
    y.extend(std::iter::repeat_n(-1.0, c));
    let grad: Vec<f64> = targets
        .iter()
        .map(|t| config.delta - t)
        .chain(targets.iter().map(|t| config.delta + t))
        .collect();
    let mut prob = Problem {
        kernel: &kernel,
        c,
        cap: config.alpha / c as f64,
        y,
        beta: vec![0.0; 2 * c],
        grad,
    };

    let (iterations, violation, bias) = if config.bias {
        let mut iter = 0;
        let violation = loop {
            let (pair, violation) = prob.select();
            match pair {
                Some((i, j)) if violation > config.tolerance => {
                    if iter >= config.max_iterations {
                        return Err(AfrError::Solver {
                            iterations: iter,
                            kkt_residual: violation,
                        });
                    }
                    prob.update_pair(i, j);
                    iter += 1;
                }
                _ => break violation.max(0.0),
            }
        };
        (iter, violation, prob.intercept())
    } else {
        let (iter, violation) = prob.solve_unbiased(config.tolerance, config.max_iterations);
        if violation > config.tolerance {
            return Err(AfrError::Solver {
                iterations: iter,
                kkt_residual: violation,
            });
        }
        (iter, violation, 0.0)
    };

    let beta = prob.beta;
    Ok(SvrModel {
        coefficients: (0..c).map(|i| beta[i] - beta[i + c]).collect(),
        duals: beta,
        bias,
        gamma,
        delta: config.delta,
        alpha: config.alpha,
        inputs: inputs.clone(),
        targets: targets.to_vec(),
        kkt_violation: violation,
        iterations,
    })
}

pub fn svr_predict(model: &SvrModel, e: &[f64]) -> Result<f64> {
    model.predict(e)
}

/// `1 / (d · mean column variance)`, the conventional RBF width for `d`
/// input columns.
pub fn default_gamma(inputs: &Matrix) -> f64 {
    let n = inputs.rows() as f64;
    let d = inputs.cols();
    let means = inputs.sum_rows().scale(1.0 / n);
    let mut var = 0.0;
    for row in inputs.iter_rows() {
        for (x, m) in row.iter().zip(means.as_slice()) {
            var += (x - m) * (x - m);
        }
    }
    let mean_var = var / (n * d as f64);
    if mean_var > 0.0 {
        1.0 / (d as f64 * mean_var)
    } else {
        1.0
    }
}
