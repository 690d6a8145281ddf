//! Seeded synthetic zero-shot benchmark.
//!
//! Each class gets a latent code; semantics are a fixed linear image of the
//! latent plus a little noise. Semantically consistent visual dimensions are a
//! fixed smooth map of the semantics; inconsistent ones are per-class random
//! values unrelated to the semantics. Samples scatter around their class
//! prototype with isotropic Gaussian spread.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split};
use crate::error::{AfrError, Result};
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticBenchmarkConfig {
    pub seen_classes: usize,
    pub unseen_classes: usize,
    pub samples_per_class: usize,
    pub visual_dim: usize,
    pub semantic_dim: usize,
    /// Intrinsic dimensionality of the class semantics.
    pub latent_dim: usize,
    pub sigma_intra: f64,
    pub sigma_inter: f64,
    /// Fraction of visual dimensions unrelated to the semantics.
    pub noise_fraction: f64,
    /// Spread of the semantic vectors off their latent subspace.
    pub semantic_noise: f64,
    /// Fraction of each seen class held out as `test_seen`.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticBenchmarkConfig {
    fn default() -> Self {
        Self {
            seen_classes: 20,
            unseen_classes: 5,
            samples_per_class: 60,
            visual_dim: 32,
            semantic_dim: 16,
            latent_dim: 4,
            sigma_intra: 0.3,
            sigma_inter: 1.0,
            noise_fraction: 0.5,
            semantic_noise: 0.05,
            test_fraction: 0.2,
            seed: 7,
        }
    }
}

impl SyntheticBenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AfrError::Contract(m));
        if !(self.sigma_intra > 0.0) || !(self.sigma_inter > 0.0) {
            return bad(format!(
                "spreads must be positive, got intra={} inter={}",
                self.sigma_intra, self.sigma_inter
            ));
        }
        if !(0.0..=1.0).contains(&self.noise_fraction) {
            return bad(format!("noise fraction {} outside [0, 1]", self.noise_fraction));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test fraction {} outside [0, 1)", self.test_fraction));
        }
        if self.seen_classes < 2 || self.unseen_classes < 1 {
            return bad("need at least 2 seen and 1 unseen class".into());
        }
        if self.samples_per_class < 2 {
            return bad("need at least 2 samples per class".into());
        }
        if self.visual_dim == 0 || self.semantic_dim == 0 || self.latent_dim == 0 {
            return bad("dimensions must be positive".into());
        }
        if !(self.semantic_noise >= 0.0) {
            return bad("semantic noise must be >= 0".into());
        }
        Ok(())
    }

    pub fn noise_dim_count(&self) -> usize {
        (self.visual_dim as f64 * self.noise_fraction).round() as usize
    }

    fn test_per_class(&self) -> usize {
        ((self.samples_per_class as f64 * self.test_fraction).ceil() as usize).clamp(1, self.samples_per_class - 1)
    }
}

/// The dataset plus the ground truth the generator used.
#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub dataset: Dataset,
    /// Visual dimensions unrelated to the semantics, ascending.
    pub noise_dims: Vec<usize>,
    /// Generating prototype of every class (row = class id).
    pub prototypes: Matrix,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate_synthetic_benchmark(config: &SyntheticBenchmarkConfig) -> Result<SyntheticBenchmark> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let classes = config.seen_classes + config.unseen_classes;
    let (v, s, l) = (config.visual_dim, config.semantic_dim, config.latent_dim);

    // Fixed maps drawn first so they do not depend on class counts.
    let lat_scale = 1.0 / (l as f64).sqrt();
    let sem_map: Vec<f64> = (0..s * l).map(|_| normal(&mut rng) * lat_scale).collect();
    let sem_scale = 1.0 / (s as f64).sqrt();
    let vis_map: Vec<f64> = (0..v * s).map(|_| normal(&mut rng) * sem_scale).collect();
    let vis_offset: Vec<f64> = (0..v).map(|_| 0.5 * normal(&mut rng)).collect();
    let mut dims: Vec<usize> = (0..v).collect();
    dims.shuffle(&mut rng);
    let mut noise_dims = dims[..config.noise_dim_count()].to_vec();
    noise_dims.sort_unstable();
    let is_noise: Vec<bool> = (0..v).map(|j| noise_dims.binary_search(&j).is_ok()).collect();

    let mut semantics = Matrix::zeros(classes, s);
    let mut prototypes = Matrix::zeros(classes, v);
    for c in 0..classes {
        let latent: Vec<f64> = (0..l).map(|_| normal(&mut rng)).collect();
        for i in 0..s {
            let e = dot(&sem_map[i * l..(i + 1) * l], &latent) + config.semantic_noise * normal(&mut rng);
            semantics.set(c, i, e);
        }
        for j in 0..v {
            let p = if is_noise[j] {
                config.sigma_inter * normal(&mut rng)
            } else {
                let z = dot(&vis_map[j * s..(j + 1) * s], semantics.row(c)) + vis_offset[j];
                config.sigma_inter * 1.5 * z.tanh()
            };
            prototypes.set(c, j, p);
        }
    }

    let n = config.samples_per_class;
    let mut features = Matrix::zeros(classes * n, v);
    let mut labels = Vec::with_capacity(classes * n);
    for c in 0..classes {
        for k in 0..n {
            let r = c * n + k;
            for j in 0..v {
                features.set(r, j, prototypes.get(c, j) + config.sigma_intra * normal(&mut rng));
            }
            labels.push(c);
        }
    }

    let held = config.test_per_class();
    let seen: Vec<usize> = (0..config.seen_classes).collect();
    let unseen: Vec<usize> = (config.seen_classes..classes).collect();
    let test_seen = seen.iter().flat_map(|&c| (c * n + n - held)..(c * n + n)).collect();
    let test_unseen = unseen.iter().flat_map(|&c| (c * n)..(c * n + n)).collect();
    let dataset = Dataset::new(
        features,
        labels,
        semantics,
        Split {
            seen,
            unseen,
            test_seen,
            test_unseen,
        },
    )?;
    Ok(SyntheticBenchmark {
        dataset,
        noise_dims,
        prototypes,
    })
}
