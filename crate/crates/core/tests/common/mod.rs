//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use afrnet::autodiff::{Dense, MlpParams};
use afrnet::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Norm-wise relative error, zero when both sides vanish.
pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    let diff = a.sub(b).unwrap().frobenius_norm();
    let scale = a.frobenius_norm().max(b.frobenius_norm());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` over every entry of `x`.
pub fn fd_matrix(x: &Matrix, h: f64, f: impl Fn(&Matrix) -> f64) -> Matrix {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.as_slice().len() {
        let mut up = x.clone();
        let mut dn = x.clone();
        up.as_mut_slice()[i] += h;
        dn.as_mut_slice()[i] -= h;
        g.as_mut_slice()[i] = (f(&up) - f(&dn)) / (2.0 * h);
    }
    g
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d).exp()
}

/// Euclidean projection onto `{0 ≤ β ≤ cap, yᵀβ = 0}` by bisection on the
/// multiplier of the equality constraint.
fn project(v: &[f64], y: &[f64], cap: f64, equality: bool) -> Vec<f64> {
    let clip = |mu: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - mu * yi).clamp(0.0, cap)).collect() };
    if !equality {
        return clip(0.0);
    }
    let h = |mu: f64| -> f64 { clip(mu).iter().zip(y).map(|(b, yi)| b * yi).sum() };
    let bound = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + cap + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clip(0.5 * (lo + hi))
}

/// Dense accelerated projected-gradient solve of the stacked epsilon-SVR
/// dual. Returns the minimised objective `½βᵀQβ + pᵀβ`.
pub fn svr_dual_oracle(inputs: &Matrix, targets: &[f64], alpha: f64, delta: f64, gamma: f64, bias: bool) -> f64 {
    let c = targets.len();
    let n = 2 * c;
    let cap = alpha / c as f64;
    let y: Vec<f64> = (0..n).map(|k| if k < c { 1.0 } else { -1.0 }).collect();
    let p: Vec<f64> = (0..n)
        .map(|k| if k < c { delta - targets[k] } else { delta + targets[k - c] })
        .collect();
    let mut q = vec![0.0; n * n];
    for k in 0..n {
        for l in 0..n {
            q[k * n + l] = y[k] * y[l] * rbf(inputs.row(k % c), inputs.row(l % c), gamma);
        }
    }
    let lip: f64 = (0..n).map(|k| (0..n).map(|l| q[k * n + l].abs()).sum::<f64>()).fold(0.0, f64::max);
    let grad = |b: &[f64]| -> Vec<f64> { (0..n).map(|k| (0..n).map(|l| q[k * n + l] * b[l]).sum::<f64>() + p[k]).collect() };
    let objective = |b: &[f64]| -> f64 {
        let g = grad(b);
        0.5 * b.iter().zip(g.iter().zip(&p)).map(|(bi, (gi, pi))| bi * (gi + pi)).sum::<f64>()
    };
    let mut x = vec![0.0; n];
    let mut z = x.clone();
    let mut t = 1.0f64;
    for _ in 0..20_000 {
        let g = grad(&z);
        let step: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi - gi / lip).collect();
        let x_next = project(&step, &y, cap, bias);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = x_next.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / t_next * (a - b)).collect();
        x = x_next;
        t = t_next;
    }
    objective(&x)
}

pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Scalar-output forward pass written out per row.
pub fn d_row(p: &MlpParams, input: &[f64]) -> f64 {
    let layer = |d: &Dense, x: &[f64], act: bool| -> Vec<f64> {
        (0..d.weight.rows())
            .map(|o| {
                let s: f64 = d.weight.row(o).iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + d.bias.get(0, o);
                if act {
                    relu(s)
                } else {
                    s
                }
            })
            .collect()
    };
    let h1 = layer(&p.layers[0], input, true);
    let h2 = layer(&p.layers[1], &h1, true);
    layer(&p.layers[2], &h2, false)[0]
}

pub fn concat_row(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

/// `−V` evaluated with a per-row forward pass and a central-difference input
/// gradient, so it shares no code with the tape.
pub fn critic_loss_oracle(p: &MlpParams, xr: &Matrix, xs: &Matrix, xb: &Matrix, e: &Matrix, lambda: f64) -> f64 {
    let n = xr.rows() as f64;
    let mut w = 0.0;
    let mut pen = 0.0;
    for r in 0..xr.rows() {
        w += d_row(p, &concat_row(xr.row(r), e.row(r))) / n;
        w -= d_row(p, &concat_row(xs.row(r), e.row(r))) / n;
        let mut sq = 0.0;
        for j in 0..xb.cols() {
            let h = 1e-6;
            let mut up = xb.row(r).to_vec();
            let mut dn = up.clone();
            up[j] += h;
            dn[j] -= h;
            let g = (d_row(p, &concat_row(&up, e.row(r))) - d_row(p, &concat_row(&dn, e.row(r)))) / (2.0 * h);
            sq += g * g;
        }
        pen += (sq.sqrt() - 1.0).powi(2) / n;
    }
    -w + lambda * pen
}

pub fn fd_params(p: &MlpParams, h: f64, f: impl Fn(&MlpParams) -> f64) -> MlpParams {
    let mut out = p.clone();
    let count = p.tensors().count();
    for t in 0..count {
        let len = p.tensors().nth(t).unwrap().as_slice().len();
        for i in 0..len {
            let mut up = p.clone();
            let mut dn = p.clone();
            up.tensors_mut().nth(t).unwrap().as_mut_slice()[i] += h;
            dn.tensors_mut().nth(t).unwrap().as_mut_slice()[i] -= h;
            out.tensors_mut().nth(t).unwrap().as_mut_slice()[i] = (f(&up) - f(&dn)) / (2.0 * h);
        }
    }
    out
}

pub fn params_rel_err(a: &MlpParams, b: &MlpParams) -> f64 {
    let flat = |p: &MlpParams| {
        let v: Vec<f64> = p.tensors().flat_map(|m| m.as_slice().to_vec()).collect();
        Matrix::new(1, v.len(), v).unwrap()
    };
    rel_err(&flat(a), &flat(b))
}

/// Affine class scores `θ·[x, 1]` written out per class.
pub fn brute_scores(theta: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..theta.rows())
        .map(|c| {
            let mut s = theta.get(c, x.len());
            for j in 0..x.len() {
                s += theta.get(c, j) * x[j];
            }
            s
        })
        .collect()
}

/// Mean cross-entropy from the per-class scores above.
pub fn ce_oracle(theta: &Matrix, x: &Matrix, targets: &[usize]) -> f64 {
    let mut total = 0.0;
    for r in 0..x.rows() {
        let s = brute_scores(theta, x.row(r));
        let z: f64 = s.iter().map(|v| v.exp()).sum();
        total += -(s[targets[r]].exp() / z).ln();
    }
    total / x.rows() as f64
}

/// `D(x, e) = w·x` realised by an identity-shifted first layer.
pub fn linear_critic(w: &[f64], cond_dim: usize) -> MlpParams {
    let d = w.len();
    let shift = 50.0;
    let mut w1 = Matrix::zeros(d, d + cond_dim);
    let mut w2 = Matrix::zeros(d, d);
    for i in 0..d {
        w1.set(i, i, 1.0);
        w2.set(i, i, 1.0);
    }
    let b3 = -w.iter().sum::<f64>() * shift;
    MlpParams::from_layers([
        Dense { weight: w1, bias: Matrix::filled(1, d, shift) },
        Dense { weight: w2, bias: Matrix::zeros(1, d) },
        Dense { weight: Matrix::row_vector(w), bias: Matrix::scalar(b3) },
    ])
    .unwrap()
}

/// `−mean D(G(z, e) + p, e)`, each generator output taken as its own
/// single-output network.
pub fn generator_loss_oracle(gp: &MlpParams, dnet: &MlpParams, z: &Matrix, e: &Matrix, p: &Matrix) -> f64 {
    let n = z.rows();
    let mut total = 0.0;
    for r in 0..n {
        let input = concat_row(z.row(r), e.row(r));
        let x: Vec<f64> = (0..p.cols())
            .map(|j| {
                let mut single = gp.clone();
                single.layers[2].weight = Matrix::row_vector(gp.layers[2].weight.row(j));
                single.layers[2].bias = Matrix::scalar(gp.layers[2].bias.get(0, j));
                d_row(&single, &input) + p.get(r, j)
            })
            .collect();
        total += d_row(dnet, &concat_row(&x, e.row(r)));
    }
    -total / n as f64
}
