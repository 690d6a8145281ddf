//! Three-layer perceptron (affine, ReLU, affine, ReLU, affine) and its
//! differentiable views on a [`Tape`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{AfrError, Result};
use crate::matrix::Matrix;

/// One affine layer; `weight` is `out x in`, `bias` is `1 x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_out, fan_in),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    /// Glorot-uniform weights, zero bias.
    fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            weight: Matrix::from_vec(fan_out, fan_in, data),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }
}

/// Parameters of `W3·relu(W2·relu(W1·x + b1) + b2) + b3`. Gradients use the
/// same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: [Dense; 3],
}

impl MlpParams {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            layers: [
                Dense::zeros(input, hidden),
                Dense::zeros(hidden, hidden),
                Dense::zeros(hidden, output),
            ],
        }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Self {
            layers: [
                Dense::glorot(input, hidden, rng),
                Dense::glorot(hidden, hidden, rng),
                Dense::glorot(hidden, output, rng),
            ],
        }
    }

    /// Builds parameters from explicit layers, checking that shapes compose.
    pub fn from_layers(layers: [Dense; 3]) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != (1, l.fan_out()) {
                return Err(AfrError::dim(
                    "MlpParams",
                    format!("layer {} bias {:?} vs weight {:?}", i + 1, l.bias.shape(), l.weight.shape()),
                ));
            }
        }
        for i in 0..2 {
            if layers[i].fan_out() != layers[i + 1].fan_in() {
                return Err(AfrError::dim(
                    "MlpParams",
                    format!(
                        "layer {} emits {} but layer {} takes {}",
                        i + 1,
                        layers[i].fan_out(),
                        i + 2,
                        layers[i + 1].fan_in()
                    ),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].fan_out()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[2].fan_out()
    }

    /// `W1, b1, W2, b2, W3, b3`.
    pub fn tensors(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Matrix::all_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().map(Matrix::max_abs).fold(0.0, f64::max)
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(AfrError::dim(
                "mlp_forward",
                format!(
                    "input is {}x{}, first layer expects {} columns",
                    input.rows(),
                    input.cols(),
                    self.input_dim()
                ),
            ));
        }
        Ok(())
    }

    /// Plain forward pass, one output row per input row.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(input)?.output)
    }

    fn forward_cached(&self, input: &Matrix) -> Result<ForwardCache> {
        self.check_input(input)?;
        let [l1, l2, l3] = &self.layers;
        let pre1 = input.matmul_nt(&l1.weight)?.add_row_broadcast(&l1.bias)?;
        let pre2 = relu(&pre1).matmul_nt(&l2.weight)?.add_row_broadcast(&l2.bias)?;
        let output = relu(&pre2).matmul_nt(&l3.weight)?.add_row_broadcast(&l3.bias)?;
        Ok(ForwardCache { pre1, pre2, output })
    }

    /// Per-row gradient of a scalar-output network with respect to the first
    /// `x.cols()` input columns, where the input row is `x ‖ condition`.
    pub fn input_gradient(&self, x: &Matrix, condition: &Matrix) -> Result<Matrix> {
        self.check_scalar_output()?;
        let input = x.hconcat(condition)?;
        let cache = self.forward_cached(&input)?;
        let [l1, l2, l3] = &self.layers;
        let n = input.rows();
        let ones = Matrix::filled(n, 1, 1.0);
        let g2 = ones.matmul(&l3.weight)?.hadamard(&relu_mask(&cache.pre2))?;
        let g1 = g2.matmul(&l2.weight)?.hadamard(&relu_mask(&cache.pre1))?;
        g1.matmul(&l1.weight)?.slice_cols(0, x.cols())
    }

    fn check_scalar_output(&self) -> Result<()> {
        if self.output_dim() != 1 {
            return Err(AfrError::dim(
                "input_gradient",
                format!("network has {} outputs, need 1", self.output_dim()),
            ));
        }
        Ok(())
    }

    /// Records the parameters as tape leaves.
    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        let mut vars = self.layers.iter().map(|l| {
            let w = tape.leaf(l.weight.clone());
            let b = tape.leaf(l.bias.clone());
            (w, b)
        });
        let mut next = || vars.next().expect("three layers");
        let (a, b, c) = (next(), next(), next());
        MlpVars {
            weights: [a.0, b.0, c.0],
            biases: [a.1, b.1, c.1],
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
        }
    }
}

struct ForwardCache {
    pre1: Matrix,
    pre2: Matrix,
    output: Matrix,
}

fn relu(m: &Matrix) -> Matrix {
    m.map(|x| if x > 0.0 { x } else { 0.0 })
}

// Subgradient at exactly zero is zero.
fn relu_mask(m: &Matrix) -> Matrix {
    m.map(|x| if x > 0.0 { 1.0 } else { 0.0 })
}

/// Tape handles for one network's parameters.
#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub weights: [Var; 3],
    pub biases: [Var; 3],
    input_dim: usize,
    output_dim: usize,
}

/// Intermediate nodes of a recorded forward pass.
#[derive(Debug, Clone, Copy)]
pub struct MlpTrace {
    pub input: Var,
    pub pre1: Var,
    pub pre2: Var,
    pub output: Var,
}

impl MlpVars {
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<MlpTrace> {
        let cols = tape.value(input).cols();
        if cols != self.input_dim {
            return Err(AfrError::dim(
                "mlp_forward",
                format!("input has {cols} columns, first layer expects {}", self.input_dim),
            ));
        }
        let [w1, w2, w3] = self.weights;
        let [b1, b2, b3] = self.biases;
        let a1 = tape.matmul_nt(input, w1)?;
        let pre1 = tape.add_row(a1, b1)?;
        let h1 = tape.relu(pre1)?;
        let a2 = tape.matmul_nt(h1, w2)?;
        let pre2 = tape.add_row(a2, b2)?;
        let h2 = tape.relu(pre2)?;
        let a3 = tape.matmul_nt(h2, w3)?;
        let output = tape.add_row(a3, b3)?;
        Ok(MlpTrace {
            input,
            pre1,
            pre2,
            output,
        })
    }

    /// Records the input gradient of a scalar-output network as a
    /// differentiable expression of the weights. Activation masks from the
    /// forward pass enter as constants.
    pub fn input_gradient(&self, tape: &mut Tape, trace: &MlpTrace, x_cols: usize) -> Result<Var> {
        if self.output_dim != 1 {
            return Err(AfrError::dim(
                "input_gradient",
                format!("network has {} outputs, need 1", self.output_dim),
            ));
        }
        let n = tape.value(trace.input).rows();
        let mask1 = relu_mask(tape.value(trace.pre1));
        let mask2 = relu_mask(tape.value(trace.pre2));
        let [w1, w2, w3] = self.weights;
        let ones = tape.leaf(Matrix::filled(n, 1, 1.0));
        let m1 = tape.leaf(mask1);
        let m2 = tape.leaf(mask2);
        let g3 = tape.matmul(ones, w3)?;
        let g2 = tape.mul(g3, m2)?;
        let g2 = tape.matmul(g2, w2)?;
        let g1 = tape.mul(g2, m1)?;
        let gin = tape.matmul(g1, w1)?;
        tape.slice_cols(gin, 0, x_cols)
    }

    /// `λ · mean_rows (‖∇ₓ D‖₂ − 1)²` as a `1 x 1` node.
    pub fn gradient_penalty(&self, tape: &mut Tape, x_bar: Var, condition: Var, lambda: f64) -> Result<Var> {
        let x_cols = tape.value(x_bar).cols();
        let input = tape.concat(x_bar, condition)?;
        let trace = self.forward(tape, input)?;
        let grad = self.input_gradient(tape, &trace, x_cols)?;
        let norm = tape.row_norm(grad)?;
        let dev = tape.add_scalar(norm, -1.0)?;
        let sq = tape.square(dev)?;
        let mean = tape.mean(sq)?;
        tape.scale(mean, lambda)
    }

    /// Collects this network's parameter gradients.
    pub fn gradients(&self, grads: &mut super::tape::Gradients) -> MlpParams {
        let take = |grads: &mut super::tape::Gradients, i: usize| Dense {
            weight: grads.take(self.weights[i]),
            bias: grads.take(self.biases[i]),
        };
        MlpParams {
            layers: [take(grads, 0), take(grads, 1), take(grads, 2)],
        }
    }
}

/// Penalty value, its parameter gradients, and how many rows hit a zero
/// input-gradient norm.
#[derive(Debug, Clone)]
pub struct PenaltyOutput {
    pub value: f64,
    pub grads: MlpParams,
    pub degenerate_rows: usize,
}

pub fn mlp_forward(params: &MlpParams, input: &Matrix) -> Result<Matrix> {
    params.forward(input)
}

pub fn input_gradient(params: &MlpParams, x: &Matrix, condition: &Matrix) -> Result<Matrix> {
    params.input_gradient(x, condition)
}

/// Gradient penalty of a scalar critic at the interpolates `x_bar`,
/// differentiated with respect to the critic's parameters.
pub fn gradient_penalty(
    params: &MlpParams,
    x_bar: &Matrix,
    condition: &Matrix,
    lambda: f64,
) -> Result<PenaltyOutput> {
    if !(lambda >= 0.0) {
        return Err(AfrError::Contract(format!("lambda must be >= 0, got {lambda}")));
    }
    if x_bar.rows() == 0 {
        return Err(AfrError::Contract("gradient penalty on an empty batch".into()));
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let xb = tape.leaf(x_bar.clone());
    let cond = tape.leaf(condition.clone());
    let pen = vars.gradient_penalty(&mut tape, xb, cond, lambda)?;
    let mut grads = tape.backward(pen)?;
    Ok(PenaltyOutput {
        value: tape.value(pen).item()?,
        grads: vars.gradients(&mut grads),
        degenerate_rows: tape.degenerate_norms(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_net() -> MlpParams {
        let one = |r, c| Matrix::filled(r, c, 1.0);
        MlpParams::from_layers([
            Dense { weight: one(1, 1), bias: Matrix::zeros(1, 1) },
            Dense { weight: one(1, 1), bias: Matrix::zeros(1, 1) },
            Dense { weight: one(1, 1), bias: Matrix::zeros(1, 1) },
        ])
        .unwrap()
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = MlpParams::zeros(3, 5, 2);
        let x = Matrix::new(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
        assert_eq!(p.forward(&x).unwrap(), Matrix::zeros(2, 2));
    }

    #[test]
    fn unit_chain_passes_positive_input() {
        let y = unit_net().forward(&Matrix::scalar(2.0)).unwrap();
        assert_eq!(y.item().unwrap(), 2.0);
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let p = MlpParams::zeros(3, 4, 1);
        let err = p.forward(&Matrix::zeros(2, 2)).unwrap_err();
        assert!(matches!(err, AfrError::Dimension { .. }), "{err}");
        let bad = [Dense::zeros(3, 4), Dense::zeros(5, 4), Dense::zeros(4, 1)];
        assert!(MlpParams::from_layers(bad).is_err());
    }

    #[test]
    fn forward_is_bit_deterministic_and_tape_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::init(4, 6, 2, &mut rng);
        let x = Matrix::new(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let a = p.forward(&x).unwrap();
        let b = p.forward(&x).unwrap();
        assert_eq!(a, b);
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let xv = tape.leaf(x);
        let tr = vars.forward(&mut tape, xv).unwrap();
        assert_eq!(tape.value(tr.output), &a);
        assert!(tape.replay_matches().unwrap());
    }

    #[test]
    fn dead_relu_blocks_input_gradient() {
        // First layer bias pushes every hidden unit negative.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = MlpParams::init(2, 3, 1, &mut rng);
        p.layers[0].weight = Matrix::zeros(3, 2);
        p.layers[0].bias = Matrix::filled(1, 3, -1.0);
        let g = p
            .input_gradient(&Matrix::new(1, 1, vec![0.4]).unwrap(), &Matrix::new(1, 1, vec![0.2]).unwrap())
            .unwrap();
        assert_eq!(g.as_slice(), &[0.0]);
    }

    #[test]
    fn tape_input_gradient_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = MlpParams::init(5, 7, 1, &mut rng);
        let x = Matrix::new(4, 3, (0..12).map(|i| (i as f64).cos()).collect()).unwrap();
        let c = Matrix::new(4, 2, (0..8).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let plain = p.input_gradient(&x, &c).unwrap();
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let xv = tape.leaf(x.clone());
        let cv = tape.leaf(c);
        let input = tape.concat(xv, cv).unwrap();
        let tr = vars.forward(&mut tape, input).unwrap();
        let g = vars.input_gradient(&mut tape, &tr, 3).unwrap();
        assert_eq!(tape.value(g), &plain);
    }

    #[test]
    fn penalty_rejects_negative_lambda_and_empty_batch() {
        let p = MlpParams::zeros(2, 2, 1);
        let x = Matrix::zeros(1, 1);
        assert!(gradient_penalty(&p, &x, &x, -1.0).is_err());
        assert!(gradient_penalty(&p, &Matrix::zeros(0, 1), &Matrix::zeros(0, 1), 1.0).is_err());
    }

    #[test]
    fn constant_critic_penalty_is_lambda_and_flagged() {
        let p = MlpParams::zeros(3, 4, 1);
        let out = gradient_penalty(&p, &Matrix::filled(5, 2, 0.3), &Matrix::filled(5, 1, 1.0), 10.0).unwrap();
        assert_eq!(out.value, 10.0);
        assert_eq!(out.degenerate_rows, 5);
        assert!(out.grads.tensors().all(|t| t.max_abs() == 0.0));
    }
}
