//! Command-line front end. Stage products are cached in the output
//! directory and recomputed only when their inputs change.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::hash::{DefaultHasher, Hasher};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::classifier::EvaluationReport;
use crate::data::{
    generate_synthetic_benchmark, load_dataset, load_labels, load_matrix, read_to_string, save_labels, save_matrix,
    save_matrix_csv, write_bytes, Dataset, FEATURES_FILE, LABELS_FILE, SEMANTICS_FILE, SPLIT_FILE,
};
use crate::error::{AfrError, Result};
use crate::gan::{load_checkpoint, save_checkpoint, GanMode, GanModel, SyntheticFeatures};
use crate::matrix::Matrix;
use crate::pipeline::{
    evaluate_run, fit_classifier, fit_prototype_stage, prepare, run_from_stage, selected_dims, synthesize_unseen,
    train_gan, AblationRow, Prepared, PrototypeStage, RunConfig, RunReports,
};

#[derive(Parser, Debug)]
#[command(name = "afrnet", version, about = "Zero-shot learning with adversarial feature residuals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the seeded synthetic benchmark to --out (--seed sets the benchmark seed).
    GenData(Flags),
    /// Fit seen-class prototypes and the per-dimension predictors.
    Prototypes(Flags),
    /// Rank dimensions by prediction error and keep the best K.
    SelectFeatures(Flags),
    /// Train the conditional WGAN.
    Train(Flags),
    /// Generate unseen-class features.
    Synthesize(Flags),
    /// Train the classifier and score the test splits.
    Evaluate(Flags),
    /// Residual vs baseline and with vs without selection.
    Ablate(Flags),
    /// Print the reports saved in --out.
    Report(Flags),
}

#[derive(Args, Debug, Clone, Default)]
struct Flags {
    /// JSON run config, or a saved report whose echoed config is reused.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    selection: Option<Switch>,
    /// Evaluate over seen and unseen classes together.
    #[arg(long)]
    gzsl: bool,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Number of selected dimensions.
    #[arg(long)]
    k: Option<usize>,
    /// Gradient-penalty weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Generator updates.
    #[arg(long)]
    iters: Option<usize>,
    /// Synthetic features per unseen class.
    #[arg(long = "per-class", value_name = "N")]
    per_class: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModeArg {
    Baseline,
    Residual,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Switch {
    On,
    Off,
}

/// Parses `argv` (program name first) and runs the subcommand. Returns 0 on
/// success, 1 on a runtime error, 2 on a usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            1
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(f) => gen_data(&resolve(&f, true)?),
        Command::Prototypes(f) => Session::open(resolve(&f, false)?)?.prototypes().map(|_| ()),
        Command::SelectFeatures(f) => {
            let mut s = Session::open(resolve(&f, false)?)?;
            let (stage, fp) = s.prototypes()?;
            let (sel, _) = s.selection(&stage, &fp)?;
            println!("selected {} of {} dimensions: {sel:?}", sel.len(), stage.bank.visual_dim());
            Ok(())
        }
        Command::Train(f) => {
            let mut s = Session::open(resolve(&f, false)?)?;
            let (_, model, _) = s.through_gan()?;
            if let Some(last) = model.history.last() {
                println!(
                    "trained {} generator steps: critic loss {:.4}, wasserstein {:.4}, generator loss {:.4}",
                    last.iteration, last.critic_loss, last.wasserstein, last.generator_loss
                );
            }
            Ok(())
        }
        Command::Synthesize(f) => {
            let mut s = Session::open(resolve(&f, false)?)?;
            let (prepared, model, fp) = s.through_gan()?;
            let synth = s.synthetic(&prepared, &model, &fp)?;
            println!("synthesized {} features of dimension {}", synth.labels.len(), synth.features.cols());
            Ok(())
        }
        Command::Evaluate(f) => evaluate(Session::open(resolve(&f, false)?)?),
        Command::Ablate(f) => ablate(Session::open(resolve(&f, false)?)?),
        Command::Report(f) => report(&resolve(&f, false)?),
    }
}

fn resolve(flags: &Flags, gen_data: bool) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = flags.seed {
        if gen_data {
            cfg.benchmark.seed = seed;
        } else {
            cfg.seed = seed;
        }
    }
    if let Some(m) = flags.mode {
        cfg.gan.mode = match m {
            ModeArg::Baseline => GanMode::Baseline,
            ModeArg::Residual => GanMode::Residual,
        };
    }
    if let Some(s) = flags.selection {
        cfg.selection = matches!(s, Switch::On);
    }
    cfg.gzsl |= flags.gzsl;
    if flags.out.is_some() {
        cfg.out.clone_from(&flags.out);
    }
    if flags.data.is_some() {
        cfg.data.clone_from(&flags.data);
    }
    if flags.k.is_some() {
        cfg.k = flags.k;
    }
    if let Some(l) = flags.lambda {
        cfg.gan.lambda = l;
    }
    if let Some(i) = flags.iters {
        cfg.gan.iterations = i;
    }
    if let Some(n) = flags.per_class {
        cfg.per_class = n;
    }
    Ok(cfg.resolved())
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| AfrError::Contract(format!("missing {flag} (flag or config field)")))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, to_json(value).as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| AfrError::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

fn fingerprint(parts: &[&str]) -> String {
    let mut h = DefaultHasher::new();
    for p in parts {
        h.write(p.as_bytes());
        h.write_u8(0xff);
    }
    format!("{:016x}", h.finish())
}

fn gen_data(cfg: &RunConfig) -> Result<()> {
    let out = required(&cfg.out, "--out")?;
    let bench = generate_synthetic_benchmark(&cfg.benchmark)?;
    bench.dataset.save(out)?;
    write_json(
        &out.join("benchmark.json"),
        &serde_json::json!({ "config": cfg.benchmark, "noise_dims": bench.noise_dims }),
    )?;
    save_matrix(out.join("true_prototypes.afrm"), &bench.prototypes)?;
    let d = &bench.dataset;
    println!(
        "wrote {} samples ({} seen, {} unseen classes, v={}, s={}) to {}",
        d.labels().len(),
        d.split().seen.len(),
        d.split().unseen.len(),
        d.visual_dim(),
        d.semantic_dim(),
        out.display()
    );
    Ok(())
}

const MANIFEST: &str = "manifest.json";

/// The output directory plus a record of which inputs produced each cached
/// stage.
struct Session {
    cfg: RunConfig,
    dataset: Dataset,
    data_fp: String,
    dir: PathBuf,
    manifest: BTreeMap<String, String>,
}

impl Session {
    fn open(cfg: RunConfig) -> Result<Self> {
        let data = required(&cfg.data, "--data")?.to_path_buf();
        let dir = required(&cfg.out, "--out")?.to_path_buf();
        let dataset = load_dataset(&data)?;
        let mut bytes = Vec::new();
        for name in [FEATURES_FILE, LABELS_FILE, SEMANTICS_FILE, SPLIT_FILE] {
            let p = data.join(name);
            bytes.extend(fs::read(&p).map_err(|e| AfrError::io(&p, e))?);
        }
        let data_fp = fingerprint(&[&String::from_utf8_lossy(&bytes)]);
        fs::create_dir_all(&dir).map_err(|e| AfrError::io(&dir, e))?;
        let manifest_path = dir.join(MANIFEST);
        let manifest = if manifest_path.exists() {
            read_json(&manifest_path)?
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            cfg,
            dataset,
            data_fp,
            dir,
            manifest,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn fresh(&self, stage: &str, fp: &str, files: &[&str]) -> bool {
        self.manifest.get(stage).is_some_and(|f| f == fp) && files.iter().all(|f| self.path(f).exists())
    }

    fn record(&mut self, stage: &str, fp: &str) -> Result<()> {
        self.manifest.insert(stage.to_string(), fp.to_string());
        write_json(&self.path(MANIFEST), &self.manifest)
    }

    fn prototypes(&mut self) -> Result<(PrototypeStage, String)> {
        let fp = fingerprint(&[&self.data_fp, &to_json(&self.cfg.predictor)]);
        if self.fresh("prototypes", &fp, &["stage.json"]) {
            return Ok((read_json(&self.path("stage.json"))?, fp));
        }
        let stage = fit_prototype_stage(&self.dataset, &self.cfg.predictor)?;
        write_json(&self.path("stage.json"), &stage)?;
        save_matrix(self.path("prototypes.afrm"), &stage.seen.prototypes)?;
        let errors = Matrix::new(stage.bank.errors.len(), 1, stage.bank.errors.clone())?;
        save_matrix_csv(self.path("errors.csv"), &errors)?;
        self.record("prototypes", &fp)?;
        println!(
            "fitted {} prototype predictors on {} seen classes (max kkt violation {:.2e})",
            stage.bank.visual_dim(),
            stage.seen.len(),
            stage.bank.max_kkt_violation()
        );
        Ok((stage, fp))
    }

    fn selection(&mut self, stage: &PrototypeStage, upstream: &str) -> Result<(Vec<usize>, String)> {
        let knobs = serde_json::json!({ "selection": self.cfg.selection, "k": self.cfg.k });
        let fp = fingerprint(&[upstream, &knobs.to_string()]);
        if self.fresh("selection", &fp, &["selection.json"]) {
            return Ok((read_json(&self.path("selection.json"))?, fp));
        }
        let sel = selected_dims(&stage.bank, self.cfg.selection, self.cfg.k)?;
        write_json(&self.path("selection.json"), &sel)?;
        self.record("selection", &fp)?;
        Ok((sel, fp))
    }

    fn through_gan(&mut self) -> Result<(Prepared, GanModel, String)> {
        let (stage, fp) = self.prototypes()?;
        let (sel, fp) = self.selection(&stage, &fp)?;
        let prepared = prepare(&self.dataset, &stage, sel)?;
        let fp = fingerprint(&[&fp, &to_json(&self.cfg.gan)]);
        if self.fresh("gan", &fp, &["gan.afrg"]) {
            return Ok((prepared, load_checkpoint(self.path("gan.afrg"))?, fp));
        }
        let model = train_gan(&prepared, &self.cfg.gan)?;
        save_checkpoint(self.path("gan.afrg"), &model)?;
        self.record("gan", &fp)?;
        Ok((prepared, model, fp))
    }

    fn synthetic(&mut self, prepared: &Prepared, model: &GanModel, upstream: &str) -> Result<SyntheticFeatures> {
        let fp = fingerprint(&[upstream, &self.cfg.per_class.to_string(), &self.cfg.seed.to_string()]);
        let files = ["synthetic.afrm", "synthetic_labels.csv", "residuals.afrm"];
        if self.fresh("synthetic", &fp, &files) {
            return Ok(SyntheticFeatures {
                features: load_matrix(self.path(files[0]))?,
                labels: load_labels(self.path(files[1]))?,
                residuals: load_matrix(self.path(files[2]))?,
            });
        }
        let synth = synthesize_unseen(model, prepared, &self.dataset, &self.cfg)?;
        save_matrix(self.path(files[0]), &synth.features)?;
        save_labels(self.path(files[1]), &synth.labels)?;
        save_matrix(self.path(files[2]), &synth.residuals)?;
        self.record("synthetic", &fp)?;
        Ok(synth)
    }
}

fn evaluate(mut s: Session) -> Result<()> {
    let (prepared, model, fp) = s.through_gan()?;
    let synth = s.synthetic(&prepared, &model, &fp)?;
    let classifier = fit_classifier(&prepared, &synth, &s.dataset, &s.cfg)?;
    let reports = evaluate_run(&s.dataset, &prepared, &model, &synth, &classifier, &s.cfg)?;
    write_json(&s.path("report.json"), &reports.afrnet)?;
    write_json(&s.path("nn1_report.json"), &reports.nn1)?;
    write_per_class(&s.path("per_class.csv"), &reports)?;
    print_reports(&reports.afrnet, &reports.nn1);
    Ok(())
}

fn write_per_class(path: &Path, reports: &RunReports) -> Result<()> {
    let mut csv = String::from("class,afrnet,nn1\n");
    for (c, acc) in &reports.afrnet.per_class {
        let nn = reports.nn1.per_class.get(c).copied().unwrap_or(f64::NAN);
        csv.push_str(&format!("{c},{acc:?},{nn:?}\n"));
    }
    write_bytes(path, csv.as_bytes())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

fn print_reports(afrnet: &EvaluationReport, nn1: &EvaluationReport) {
    println!("{:<8} {:>7} {:>7} {:>7} {:>7} {:>9}", "method", "U", "S", "H", "purity", "res.ratio");
    for (name, r) in [("afrnet", afrnet), ("1nn", nn1)] {
        println!(
            "{:<8} {:>7.2} {:>7} {:>7} {:>7} {:>9}",
            name,
            r.u_acc,
            fmt_opt(r.s_acc),
            fmt_opt(r.h_mean),
            fmt_opt(r.purity),
            r.residual_ratio.map_or_else(|| "-".to_string(), |x| format!("{:.3}", x.ratio))
        );
    }
}

fn ablate(mut s: Session) -> Result<()> {
    let (stage, _) = s.prototypes()?;
    let mut rows = Vec::new();
    for mode in [GanMode::Baseline, GanMode::Residual] {
        for selection in [false, true] {
            let mut cfg = s.cfg.clone();
            cfg.gan.mode = mode;
            cfg.selection = selection;
            let r = run_from_stage(&s.dataset, &stage, &cfg)?.reports;
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
    let doc = serde_json::json!({ "rows": rows, "seed": s.cfg.seed, "config": s.cfg.to_json() });
    write_json(&s.path("ablation.json"), &doc)?;
    let mut csv = String::from("mode,selection,afrnet_u,afrnet_s,afrnet_h,nn1_u,purity,residual_ratio\n");
    for r in &rows {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        csv.push_str(&format!(
            "{},{},{:?},{},{},{:?},{:?},{:?}\n",
            r.mode,
            r.selection,
            r.afrnet_u,
            opt(r.afrnet_s),
            opt(r.afrnet_h),
            r.nn1_u,
            r.purity,
            r.residual_ratio
        ));
    }
    write_bytes(&s.path("ablation.csv"), csv.as_bytes())?;
    print_ablation(&rows);
    Ok(())
}

fn print_ablation(rows: &[AblationRow]) {
    println!("{:<9} {:<9} {:>8} {:>8} {:>8} {:>8} {:>9}", "mode", "selection", "afrnet U", "H", "1nn U", "purity", "res.ratio");
    for r in rows {
        println!(
            "{:<9} {:<9} {:>8.2} {:>8} {:>8.2} {:>8.3} {:>9.3}",
            r.mode.to_string(),
            if r.selection { "on" } else { "off" },
            r.afrnet_u,
            fmt_opt(r.afrnet_h),
            r.nn1_u,
            r.purity,
            r.residual_ratio
        );
    }
}

fn report(cfg: &RunConfig) -> Result<()> {
    let out = required(&cfg.out, "--out")?;
    let mut printed = false;
    let report_path = out.join("report.json");
    if report_path.exists() {
        let afrnet: EvaluationReport = read_json(&report_path)?;
        let nn1: EvaluationReport = read_json(&out.join("nn1_report.json"))?;
        print_reports(&afrnet, &nn1);
        printed = true;
    }
    let ablation_path = out.join("ablation.json");
    if ablation_path.exists() {
        let doc: serde_json::Value = read_json(&ablation_path)?;
        let rows: Vec<AblationRow> = serde_json::from_value(doc["rows"].clone()).map_err(|e| AfrError::Json {
            path: ablation_path.clone(),
            source: e,
        })?;
        print_ablation(&rows);
        printed = true;
    }
    if !printed {
        return Err(AfrError::Data(format!("no report.json or ablation.json in {}", out.display())));
    }
    Ok(())
}
