//! End-to-end run: prototypes, selection, adversarial training, synthesis,
//! classification, and evaluation, all driven by one [`RunConfig`].

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    evaluate_gzsl, evaluate_zsl, prototype_purity, residual_ratio, softmax_fit, EvaluationReport, Evaluator,
    SoftmaxConfig, SoftmaxModel,
};
use crate::data::{read_to_string, Dataset, SyntheticBenchmarkConfig};
use crate::error::{AfrError, Result};
use crate::gan::{self, GanConfig, GanMode, GanModel, GanTrainingSet, SyntheticFeatures};
use crate::matrix::Matrix;
use crate::prototype::{
    apply_selection, compute_prototypes, fit_prototype_predictor, predict_prototypes, select_features, ClassId,
    PredictorBank, PredictorConfig, PrototypeTable,
};

/// Every knob of a run. All fields have defaults; `seed` drives training and
/// synthesis, `benchmark.seed` drives data generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub benchmark: SyntheticBenchmarkConfig,
    pub predictor: PredictorConfig,
    /// Restrict features to the best-predicted dimensions.
    pub selection: bool,
    /// Selected dimension count; `None` keeps half.
    pub k: Option<usize>,
    pub gan: GanConfig,
    pub softmax: SoftmaxConfig,
    /// Synthetic features per unseen class.
    pub per_class: usize,
    pub gzsl: bool,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            benchmark: SyntheticBenchmarkConfig::default(),
            predictor: PredictorConfig::default(),
            selection: true,
            k: None,
            gan: GanConfig::default(),
            softmax: SoftmaxConfig::default(),
            per_class: 300,
            gzsl: false,
            data: None,
            out: None,
        }
    }
}

impl RunConfig {
    /// Copies the run seed into the GAN config.
    pub fn resolved(mut self) -> Self {
        self.gan.seed = self.seed;
        self
    }

    /// Reads a config file. A saved evaluation report is accepted too, in
    /// which case its echoed config is used.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_to_string(path)?;
        let json_err = |e| AfrError::Json {
            path: path.to_path_buf(),
            source: e,
        };
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(json_err)?;
        if value.get("u_acc").is_some() {
            if let Some(echo) = value.get_mut("config") {
                value = echo.take();
            }
        }
        serde_json::from_value(value).map_err(json_err)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Seen-class prototypes and the per-dimension predictors fitted on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeStage {
    pub seen: PrototypeTable,
    pub bank: PredictorBank,
}

pub fn fit_prototype_stage(dataset: &Dataset, predictor: &PredictorConfig) -> Result<PrototypeStage> {
    let (x, y) = dataset.train_set()?;
    let seen_ids = dataset.split().seen.clone();
    let seen = compute_prototypes(&x, &y, &seen_ids)?;
    let bank = fit_prototype_predictor(&seen, &dataset.semantics_for(&seen_ids)?, predictor)?;
    Ok(PrototypeStage { seen, bank })
}

/// Selected dimensions, or every dimension when selection is off.
pub fn selected_dims(bank: &PredictorBank, selection: bool, k: Option<usize>) -> Result<Vec<usize>> {
    if selection {
        select_features(&bank.errors, k)
    } else {
        Ok((0..bank.visual_dim()).collect())
    }
}

/// Everything the adversarial stage needs, already in the compact space.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub selection: Vec<usize>,
    /// Predicted compact prototypes of every class.
    pub predicted: PrototypeTable,
    /// Reduced semantics, row = class id.
    pub conditions: Matrix,
    pub train_x: Matrix,
    pub train_y: Vec<ClassId>,
}

pub fn prepare(dataset: &Dataset, stage: &PrototypeStage, selection: Vec<usize>) -> Result<Prepared> {
    let all = dataset.all_classes();
    let full = predict_prototypes(&stage.bank, &dataset.semantics_for(&all)?, &all)?;
    let predicted = full.with_selection(selection.clone())?.compact_table()?;
    let conditions = stage.bank.pca.transform(dataset.semantics())?;
    let (x, train_y) = dataset.train_set()?;
    Ok(Prepared {
        train_x: apply_selection(&x, &selection)?,
        train_y,
        selection,
        predicted,
        conditions,
    })
}

pub fn train_gan(prepared: &Prepared, config: &GanConfig) -> Result<GanModel> {
    gan::train(
        GanTrainingSet {
            features: &prepared.train_x,
            labels: &prepared.train_y,
            conditions: &prepared.conditions,
            prototypes: Some(&prepared.predicted),
        },
        config,
    )
}

/// Synthesis draws from its own stream of the run seed so it does not
/// overlap the training stream.
pub fn synthesis_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

pub fn synthesize_unseen(model: &GanModel, prepared: &Prepared, dataset: &Dataset, config: &RunConfig) -> Result<SyntheticFeatures> {
    gan::synthesize_dataset(
        model,
        &prepared.conditions,
        Some(&prepared.predicted),
        &dataset.split().unseen,
        config.per_class,
        &mut synthesis_rng(config.seed),
    )
}

/// Reports for the trained classifier and for nearest-prototype matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReports {
    pub afrnet: EvaluationReport,
    pub nn1: EvaluationReport,
    pub selection: Vec<usize>,
}

/// Offsets of the synthetic features from their class prototypes. In
/// residual mode these are the generator outputs.
fn synthetic_offsets(synth: &SyntheticFeatures, mode: GanMode, predicted: &PrototypeTable) -> Result<Matrix> {
    match mode {
        GanMode::Residual => Ok(synth.residuals.clone()),
        GanMode::Baseline => synth.features.sub(&predicted.rows_for_labels(&synth.labels)?),
    }
}

pub fn fit_classifier(prepared: &Prepared, synth: &SyntheticFeatures, dataset: &Dataset, config: &RunConfig) -> Result<SoftmaxModel> {
    let split = dataset.split();
    if config.gzsl {
        let x = Matrix::vstack(&[prepared.train_x.clone(), synth.features.clone()])?;
        let y: Vec<ClassId> = prepared.train_y.iter().chain(&synth.labels).copied().collect();
        softmax_fit(&x, &y, &dataset.all_classes(), &config.softmax)
    } else {
        softmax_fit(&synth.features, &synth.labels, &split.unseen, &config.softmax)
    }
}

pub fn evaluate_run(
    dataset: &Dataset,
    prepared: &Prepared,
    model: &GanModel,
    synth: &SyntheticFeatures,
    classifier: &SoftmaxModel,
    config: &RunConfig,
) -> Result<RunReports> {
    let split = dataset.split();
    let sel = &prepared.selection;
    let (ux, uy) = dataset.test_unseen()?;
    let ux = apply_selection(&ux, sel)?;
    let unseen_protos = prepared.predicted.subset(&split.unseen)?;
    let (mut afrnet, mut nn1) = if config.gzsl {
        let (sx, sy) = dataset.test_seen()?;
        let sx = apply_selection(&sx, sel)?;
        let seen_test = (&sx, sy.as_slice());
        let unseen_test = (&ux, uy.as_slice());
        (
            evaluate_gzsl(Evaluator::Softmax(classifier), seen_test, unseen_test, &split.seen, &split.unseen)?,
            evaluate_gzsl(Evaluator::Nearest(&prepared.predicted), seen_test, unseen_test, &split.seen, &split.unseen)?,
        )
    } else {
        (
            evaluate_zsl(Evaluator::Softmax(classifier), &ux, &uy, &split.unseen)?,
            evaluate_zsl(Evaluator::Nearest(&unseen_protos), &ux, &uy, &split.unseen)?,
        )
    };
    let purity = prototype_purity(&synth.features, &synth.labels, &unseen_protos)?;
    let offsets = synthetic_offsets(synth, model.mode(), &prepared.predicted)?;
    let ratio = residual_ratio(&offsets, &prepared.predicted.prototypes)?;
    let echo = config.to_json();
    for r in [&mut afrnet, &mut nn1] {
        r.purity = Some(purity);
        r.residual_ratio = Some(ratio);
        r.seed = config.seed;
        r.config = echo.clone();
    }
    Ok(RunReports {
        afrnet,
        nn1,
        selection: sel.clone(),
    })
}

/// Every intermediate product of one run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub stage: PrototypeStage,
    pub prepared: Prepared,
    pub model: GanModel,
    pub synthetic: SyntheticFeatures,
    pub classifier: SoftmaxModel,
    pub reports: RunReports,
}

/// Runs the adversarial and classification phases on a fitted prototype
/// stage, so ablations can share it.
pub fn run_from_stage(dataset: &Dataset, stage: &PrototypeStage, config: &RunConfig) -> Result<RunOutcome> {
    let config = config.clone().resolved();
    let selection = selected_dims(&stage.bank, config.selection, config.k)?;
    let prepared = prepare(dataset, stage, selection)?;
    let model = train_gan(&prepared, &config.gan)?;
    let synthetic = synthesize_unseen(&model, &prepared, dataset, &config)?;
    let classifier = fit_classifier(&prepared, &synthetic, dataset, &config)?;
    let reports = evaluate_run(dataset, &prepared, &model, &synthetic, &classifier, &config)?;
    Ok(RunOutcome {
        stage: stage.clone(),
        prepared,
        model,
        synthetic,
        classifier,
        reports,
    })
}

pub fn run_pipeline(dataset: &Dataset, config: &RunConfig) -> Result<RunOutcome> {
    let stage = fit_prototype_stage(dataset, &config.predictor)?;
    run_from_stage(dataset, &stage, config)
}

/// One cell of the mode x selection grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: GanMode,
    pub selection: bool,
    pub afrnet_u: f64,
    pub afrnet_s: Option<f64>,
    pub afrnet_h: Option<f64>,
    pub nn1_u: f64,
    pub purity: f64,
    pub residual_ratio: f64,
}

/// Residual vs baseline and with vs without selection on a shared
/// prototype stage.
pub fn ablate(dataset: &Dataset, config: &RunConfig) -> Result<Vec<AblationRow>> {
    let stage = fit_prototype_stage(dataset, &config.predictor)?;
    let mut rows = Vec::new();
    for mode in [GanMode::Baseline, GanMode::Residual] {
        for selection in [false, true] {
            let mut cfg = config.clone();
            cfg.gan.mode = mode;
            cfg.selection = selection;
            let r = run_from_stage(dataset, &stage, &cfg)?.reports;
            rows.push(AblationRow {
                mode,
                selection,
                afrnet_u: r.afrnet.u_acc,
                afrnet_s: r.afrnet.s_acc,
                afrnet_h: r.afrnet.h_mean,
                nn1_u: r.nn1.u_acc,
                purity: r.afrnet.purity.unwrap_or(f64::NAN),
                residual_ratio: r.afrnet.residual_ratio.map_or(f64::NAN, |x| x.ratio),
            });
        }
    }
    Ok(rows)
}
