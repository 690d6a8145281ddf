//! Conditional WGAN-GP over visual features. In baseline mode the generator
//! emits whole features; in residual mode it emits offsets that are added to
//! predicted class prototypes.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::autodiff::{adam_step, AdamConfig, AdamState, MlpParams, Tape};
use crate::error::{AfrError, Result};
use crate::matrix::Matrix;
use crate::prototype::{ClassId, PrototypeTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanMode {
    /// Generator output is the feature itself.
    Baseline,
    /// Generator output is added to the class prototype.
    #[default]
    Residual,
}

impl fmt::Display for GanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GanMode::Baseline => "baseline",
            GanMode::Residual => "residual",
        })
    }
}

impl FromStr for GanMode {
    type Err = AfrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(GanMode::Baseline),
            "residual" => Ok(GanMode::Residual),
            other => Err(AfrError::Contract(format!("unknown mode {other:?}, expected baseline or residual"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    /// `None` uses the conditioning dimension.
    pub noise_dim: Option<usize>,
    pub hidden: usize,
    pub lambda: f64,
    pub critic_steps: usize,
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Generator updates.
    pub iterations: usize,
    pub mode: GanMode,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            noise_dim: None,
            hidden: 64,
            lambda: 10.0,
            critic_steps: 5,
            adam: AdamConfig {
                learning_rate: 1e-4,
                beta1: 0.0,
                beta2: 0.9,
                epsilon: 1e-8,
            },
            batch_size: 64,
            iterations: 2000,
            mode: GanMode::Residual,
            seed: 7,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AfrError::Contract(m));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.critic_steps == 0 {
            return bad("critic steps must be >= 1".into());
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return bad("batch size and hidden width must be >= 1".into());
        }
        if self.noise_dim == Some(0) {
            return bad("noise dim must be >= 1".into());
        }
        Ok(())
    }
}

/// Per generator step: the last critic step's numbers and the generator loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: u64,
    pub critic_loss: f64,
    pub wasserstein: f64,
    pub penalty: f64,
    pub generator_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    /// Config with `noise_dim` resolved.
    pub config: GanConfig,
    pub generator: MlpParams,
    pub discriminator: MlpParams,
    pub generator_adam: AdamState,
    pub discriminator_adam: AdamState,
    pub iteration: u64,
    pub history: Vec<LossRecord>,
}

impl GanModel {
    /// Freshly initialized networks for the given feature and conditioning
    /// widths, seeded from `config.seed`.
    pub fn new(config: &GanConfig, feature_dim: usize, condition_dim: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::init(config, feature_dim, condition_dim, &mut rng)
    }

    fn init(config: &GanConfig, feature_dim: usize, condition_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if feature_dim == 0 || condition_dim == 0 {
            return Err(AfrError::Contract(format!(
                "feature dim {feature_dim} and condition dim {condition_dim} must be >= 1"
            )));
        }
        let noise_dim = config.noise_dim.unwrap_or(condition_dim);
        let config = GanConfig {
            noise_dim: Some(noise_dim),
            ..config.clone()
        };
        let generator = MlpParams::init(noise_dim + condition_dim, config.hidden, feature_dim, rng);
        let discriminator = MlpParams::init(feature_dim + condition_dim, config.hidden, 1, rng);
        Ok(Self {
            generator_adam: AdamState::new(config.adam, generator.tensors()),
            discriminator_adam: AdamState::new(config.adam, discriminator.tensors()),
            config,
            generator,
            discriminator,
            iteration: 0,
            history: Vec::new(),
        })
    }

    pub fn mode(&self) -> GanMode {
        self.config.mode
    }

    pub fn noise_dim(&self) -> usize {
        self.config.noise_dim.expect("resolved at construction")
    }

    pub fn feature_dim(&self) -> usize {
        self.generator.output_dim()
    }

    pub fn condition_dim(&self) -> usize {
        self.generator.input_dim() - self.noise_dim()
    }

    pub fn generate_residuals(&self, z: &Matrix, semantics: &Matrix) -> Result<Matrix> {
        generate_residuals(self, z, semantics)
    }
}

/// `n x dim` standard-normal draws.
pub fn sample_noise<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Result<Matrix> {
    if n == 0 || dim == 0 {
        return Err(AfrError::Contract(format!("noise batch must be non-empty, got {n}x{dim}")));
    }
    let data = (0..n * dim).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::new(n, dim, data)
}

/// Generator output for rows `z ‖ e`.
pub fn generate_residuals(model: &GanModel, z: &Matrix, semantics: &Matrix) -> Result<Matrix> {
    if z.rows() != semantics.rows() {
        return Err(AfrError::dim(
            "generate_residuals",
            format!("{} noise rows vs {} semantic rows", z.rows(), semantics.rows()),
        ));
    }
    if z.cols() != model.noise_dim() {
        return Err(AfrError::dim(
            "generate_residuals",
            format!("noise has {} columns, model expects {}", z.cols(), model.noise_dim()),
        ));
    }
    model.generator.forward(&z.hconcat(semantics)?)
}

pub fn synthesize_features(residuals: &Matrix, prototypes_by_row: &Matrix) -> Result<Matrix> {
    residuals.zip_map(prototypes_by_row, "synthesize_features", |r, p| r + p)
}

/// Row-wise `ζ x + (1 − ζ) x̃` with one `ζ ~ U(0, 1)` per row.
pub fn interpolate<R: Rng + ?Sized>(x_real: &Matrix, x_synth: &Matrix, rng: &mut R) -> Result<Matrix> {
    let zeta: Vec<f64> = (0..x_real.rows()).map(|_| rng.random::<f64>()).collect();
    interpolate_with(x_real, x_synth, &zeta)
}

/// [`interpolate`] with explicit per-row weights.
pub fn interpolate_with(x_real: &Matrix, x_synth: &Matrix, zeta: &[f64]) -> Result<Matrix> {
    x_real.same_shape(x_synth, "interpolate")?;
    if zeta.len() != x_real.rows() {
        return Err(AfrError::dim(
            "interpolate",
            format!("{} weights for {} rows", zeta.len(), x_real.rows()),
        ));
    }
    let mut out = x_real.clone();
    for (r, &z) in zeta.iter().enumerate() {
        for (o, &s) in out.row_mut(r).iter_mut().zip(x_synth.row(r)) {
            *o = z * *o + (1.0 - z) * s;
        }
    }
    Ok(out)
}

/// The critic's objective `V = W − P` with `W = E D(real) − E D(synth)` and
/// `P` the gradient penalty, plus the parameter gradients of `−V`.
#[derive(Debug, Clone)]
pub struct CriticObjective {
    pub objective: f64,
    pub loss: f64,
    pub wasserstein: f64,
    pub penalty: f64,
    pub grads: MlpParams,
    pub degenerate_rows: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratorObjective {
    /// `−E D(G(z, e) + p, e)`.
    pub value: f64,
    pub grads: MlpParams,
}

fn non_finite(what: &str, value: f64) -> AfrError {
    AfrError::Training {
        step: 0,
        reason: format!("non-finite {what} loss {value}"),
    }
}

pub fn critic_objective(
    discriminator: &MlpParams,
    x_real: &Matrix,
    x_synth: &Matrix,
    x_bar: &Matrix,
    semantics: &Matrix,
    lambda: f64,
) -> Result<CriticObjective> {
    if !(lambda >= 0.0) {
        return Err(AfrError::Contract(format!("lambda must be >= 0, got {lambda}")));
    }
    x_real.same_shape(x_synth, "critic_objective")?;
    x_real.same_shape(x_bar, "critic_objective")?;
    if x_real.rows() == 0 || semantics.rows() != x_real.rows() {
        return Err(AfrError::dim(
            "critic_objective",
            format!("{} feature rows vs {} semantic rows", x_real.rows(), semantics.rows()),
        ));
    }
    let mut tape = Tape::new();
    let d = discriminator.register(&mut tape);
    let e = tape.leaf(semantics.clone());
    let xr = tape.leaf(x_real.clone());
    let xs = tape.leaf(x_synth.clone());
    let xb = tape.leaf(x_bar.clone());
    let real_in = tape.concat(xr, e)?;
    let synth_in = tape.concat(xs, e)?;
    let d_real = d.forward(&mut tape, real_in)?.output;
    let d_synth = d.forward(&mut tape, synth_in)?.output;
    let m_real = tape.mean(d_real)?;
    let m_synth = tape.mean(d_synth)?;
    let w = tape.sub(m_real, m_synth)?;
    let gp = d.gradient_penalty(&mut tape, xb, e, lambda)?;
    let neg_w = tape.scale(w, -1.0)?;
    let loss = tape.add(neg_w, gp)?;

    let wasserstein = tape.value(w).item()?;
    let penalty = tape.value(gp).item()?;
    let loss_value = tape.value(loss).item()?;
    if !loss_value.is_finite() {
        return Err(non_finite("critic", loss_value));
    }
    let mut grads = tape.backward(loss)?;
    Ok(CriticObjective {
        objective: wasserstein - penalty,
        loss: loss_value,
        wasserstein,
        penalty,
        grads: d.gradients(&mut grads),
        degenerate_rows: tape.degenerate_norms(),
    })
}

/// `prototypes` is `None` in baseline mode, else one anchor row per batch row.
pub fn generator_objective(
    generator: &MlpParams,
    discriminator: &MlpParams,
    z: &Matrix,
    semantics: &Matrix,
    prototypes: Option<&Matrix>,
) -> Result<GeneratorObjective> {
    if z.rows() == 0 || z.rows() != semantics.rows() {
        return Err(AfrError::dim(
            "generator_objective",
            format!("{} noise rows vs {} semantic rows", z.rows(), semantics.rows()),
        ));
    }
    let mut tape = Tape::new();
    let g = generator.register(&mut tape);
    let d = discriminator.register(&mut tape);
    let zv = tape.leaf(z.clone());
    let e = tape.leaf(semantics.clone());
    let g_in = tape.concat(zv, e)?;
    let mut x = g.forward(&mut tape, g_in)?.output;
    if let Some(p) = prototypes {
        let pv = tape.leaf(p.clone());
        x = tape.add(x, pv)?;
    }
    let d_in = tape.concat(x, e)?;
    let out = d.forward(&mut tape, d_in)?.output;
    let mean = tape.mean(out)?;
    let loss = tape.scale(mean, -1.0)?;
    let value = tape.value(loss).item()?;
    if !value.is_finite() {
        return Err(non_finite("generator", value));
    }
    let mut grads = tape.backward(loss)?;
    Ok(GeneratorObjective {
        value,
        grads: g.gradients(&mut grads),
    })
}

/// `E D(real ‖ e) − E D(synth ‖ e)` under a fixed critic.
pub fn wasserstein_estimate(
    discriminator: &MlpParams,
    x_real: &Matrix,
    real_semantics: &Matrix,
    x_synth: &Matrix,
    synth_semantics: &Matrix,
) -> Result<f64> {
    let real = discriminator.forward(&x_real.hconcat(real_semantics)?)?;
    let synth = discriminator.forward(&x_synth.hconcat(synth_semantics)?)?;
    Ok(real.mean() - synth.mean())
}

/// Real training rows with their class conditioning.
#[derive(Debug, Clone, Copy)]
pub struct GanTrainingSet<'a> {
    /// `N x d`, already restricted to the selected dimensions.
    pub features: &'a Matrix,
    pub labels: &'a [ClassId],
    /// Conditioning vector per class (row = class id).
    pub conditions: &'a Matrix,
    /// Anchor prototypes in the same feature space; required in residual mode.
    pub prototypes: Option<&'a PrototypeTable>,
}

fn condition_rows(conditions: &Matrix, classes: &[ClassId]) -> Result<Matrix> {
    if let Some(&c) = classes.iter().find(|&&c| c >= conditions.rows()) {
        return Err(AfrError::Data(format!(
            "class {c} has no semantic row ({} rows)",
            conditions.rows()
        )));
    }
    conditions.select_rows(classes)
}

fn anchor_rows(prototypes: &PrototypeTable, classes: &[ClassId], dim: usize) -> Result<Matrix> {
    if prototypes.dim() != dim {
        return Err(AfrError::dim(
            "gan prototypes",
            format!("prototypes have {} columns, features {dim}", prototypes.dim()),
        ));
    }
    prototypes.rows_for_labels(classes)
}

fn at_step(step: u64) -> impl Fn(AfrError) -> AfrError {
    move |e| match e {
        AfrError::Training { reason, .. } => AfrError::Training { step, reason },
        other => other,
    }
}

/// Alternates `critic_steps` critic updates with one generator update for
/// `config.iterations` rounds. Batches are drawn uniformly with replacement.
pub fn train(set: GanTrainingSet<'_>, config: &GanConfig) -> Result<GanModel> {
    let n = set.features.rows();
    if n == 0 {
        return Err(AfrError::Data("no seen-class training samples".into()));
    }
    if set.labels.len() != n {
        return Err(AfrError::dim(
            "gan train",
            format!("{n} feature rows but {} labels", set.labels.len()),
        ));
    }
    let conditions = condition_rows(set.conditions, set.labels)?;
    let anchors = match (config.mode, set.prototypes) {
        (GanMode::Baseline, _) => None,
        (GanMode::Residual, Some(p)) => Some(anchor_rows(p, set.labels, set.features.cols())?),
        (GanMode::Residual, None) => {
            return Err(AfrError::Contract("residual mode requires a prototype table".into()))
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = GanModel::init(config, set.features.cols(), set.conditions.cols(), &mut rng)?;
    let (b, nd, lambda) = (config.batch_size, model.noise_dim(), config.lambda);
    let anchor_batch = |idx: &[usize]| -> Result<Option<Matrix>> { anchors.as_ref().map(|a| a.select_rows(idx)).transpose() };

    for _ in 0..config.iterations {
        let step = model.iteration + 1;
        let mut critic = None;
        for _ in 0..config.critic_steps {
            let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
            let x_real = set.features.select_rows(&idx)?;
            let e = conditions.select_rows(&idx)?;
            let z = sample_noise(b, nd, &mut rng)?;
            let r = model.generator.forward(&z.hconcat(&e)?)?;
            let x_synth = match anchor_batch(&idx)? {
                Some(p) => synthesize_features(&r, &p)?,
                None => r,
            };
            let x_bar = interpolate(&x_real, &x_synth, &mut rng)?;
            let obj = critic_objective(&model.discriminator, &x_real, &x_synth, &x_bar, &e, lambda).map_err(at_step(step))?;
            adam_step(&mut model.discriminator, &obj.grads, &mut model.discriminator_adam).map_err(at_step(step))?;
            critic = Some(obj);
        }
        let critic = critic.expect("critic_steps >= 1");

        let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
        let e = conditions.select_rows(&idx)?;
        let z = sample_noise(b, nd, &mut rng)?;
        let p = anchor_batch(&idx)?;
        let gen = generator_objective(&model.generator, &model.discriminator, &z, &e, p.as_ref()).map_err(at_step(step))?;
        adam_step(&mut model.generator, &gen.grads, &mut model.generator_adam).map_err(at_step(step))?;

        model.history.push(LossRecord {
            iteration: step,
            critic_loss: critic.loss,
            wasserstein: critic.wasserstein,
            penalty: critic.penalty,
            generator_loss: gen.value,
        });
        model.iteration = step;
    }
    Ok(model)
}

/// Generated features with their labels and the raw generator outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFeatures {
    pub features: Matrix,
    pub labels: Vec<ClassId>,
    pub residuals: Matrix,
}

/// `per_class` features for each listed class, class-major. In residual mode
/// each row is its class prototype plus a generated residual.
pub fn synthesize_dataset<R: Rng + ?Sized>(
    model: &GanModel,
    conditions: &Matrix,
    prototypes: Option<&PrototypeTable>,
    classes: &[ClassId],
    per_class: usize,
    rng: &mut R,
) -> Result<SyntheticFeatures> {
    if per_class == 0 || classes.is_empty() {
        return Err(AfrError::Contract(format!(
            "need >= 1 class and >= 1 sample per class, got {} and {per_class}",
            classes.len()
        )));
    }
    let anchors = match (model.mode(), prototypes) {
        (GanMode::Baseline, _) => None,
        (GanMode::Residual, Some(p)) => Some(anchor_rows(p, classes, model.feature_dim())?),
        (GanMode::Residual, None) => {
            return Err(AfrError::Contract("residual mode requires unseen prototypes".into()))
        }
    };
    let cond = condition_rows(conditions, classes)?;
    let mut features = Vec::with_capacity(classes.len());
    let mut residuals = Vec::with_capacity(classes.len());
    let mut labels = Vec::with_capacity(classes.len() * per_class);
    for (i, &c) in classes.iter().enumerate() {
        let e = cond.select_rows(&vec![i; per_class])?;
        let z = sample_noise(per_class, model.noise_dim(), rng)?;
        let r = generate_residuals(model, &z, &e)?;
        let x = match &anchors {
            Some(a) => synthesize_features(&r, &a.select_rows(&vec![i; per_class])?)?,
            None => r.clone(),
        };
        features.push(x);
        residuals.push(r);
        labels.extend(std::iter::repeat_n(c, per_class));
    }
    Ok(SyntheticFeatures {
        features: Matrix::vstack(&features)?,
        labels,
        residuals: Matrix::vstack(&residuals)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_parses_and_displays() {
        for m in [GanMode::Baseline, GanMode::Residual] {
            assert_eq!(m.to_string().parse::<GanMode>().unwrap(), m);
        }
        assert!("other".parse::<GanMode>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GanConfig::default().validate().is_ok());
        assert!(GanConfig { lambda: -1.0, ..Default::default() }.validate().is_err());
        assert!(GanConfig { critic_steps: 0, ..Default::default() }.validate().is_err());
        assert!(GanConfig { noise_dim: Some(0), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        assert_eq!(interpolate_with(&a, &b, &[1.0, 1.0]).unwrap(), a);
        assert_eq!(interpolate_with(&a, &b, &[0.0, 0.0]).unwrap(), b);
        let mid = interpolate_with(&a, &b, &[0.5, 0.5]).unwrap();
        assert_eq!(mid.row(0), &[3.0, 4.0]);
        assert!(interpolate_with(&a, &b, &[0.5]).is_err());
    }
}
