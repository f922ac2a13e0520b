//! Subcommand implementations and the per-run manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use ndarray::Array2;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use shockfuse::burgers::{self, BurgersConfig};
use shockfuse::eval;
use shockfuse::experiment::{self, ExperimentConfig, ModelKind, TrainedModel};
use shockfuse::field_io::{
    self, CaseRecord, ConditionKind, Manifest, PredictedChannel, Split,
};
use shockfuse::rng;

use crate::config;
use crate::{Cli, Command, Global};

/// Bad invocation: exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// True when the failure is a rejected configuration rather than a runtime fault.
pub fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<UsageError>()
            || matches!(
                c.downcast_ref::<shockfuse::Error>(),
                Some(shockfuse::Error::InvalidConfig(_))
            )
    })
}

#[derive(Debug, Serialize)]
struct InputHash {
    path: String,
    sha256: String,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    build: String,
    started_unix: u64,
    elapsed_s: f64,
    seed: Option<u64>,
    config: Value,
    inputs: Vec<InputHash>,
    outputs: Vec<String>,
}

struct Run {
    command: &'static str,
    out: PathBuf,
    started: Instant,
    started_unix: u64,
    seed: Option<u64>,
    config: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(command: &'static str, global: &Global) -> Result<Self> {
        fs::create_dir_all(&global.out)
            .with_context(|| format!("creating {}", global.out.display()))?;
        Ok(Run {
            command,
            out: global.out.clone(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            seed: global.seed,
            config: Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    fn finish(self) -> Result<()> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| {
                let bytes = fs::read(p).with_context(|| format!("hashing {}", p.display()))?;
                Ok(InputHash {
                    path: p.display().to_string(),
                    sha256: hex(&Sha256::digest(&bytes)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            argv: std::env::args().collect(),
            build: build_id(),
            started_unix: self.started_unix,
            elapsed_s: self.started.elapsed().as_secs_f64(),
            seed: self.seed,
            config: self.config,
            inputs,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
        };
        let path = self.out.join("run_manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn build_id() -> String {
    match option_env!("SHOCKFUSE_BUILD_ID") {
        Some(id) => format!("shockfuse {} ({id})", env!("CARGO_PKG_VERSION")),
        None => format!("shockfuse {}", env!("CARGO_PKG_VERSION")),
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::GenBurgers(a) => gen_burgers(g, a),
        Command::Calibrate(a) => calibrate(g, a),
        Command::Train(a) => train(g, a),
        Command::Predict(a) => predict(g, a),
        Command::Eval(a) => evaluate(g, a),
        Command::Compare(a) => compare(g, a),
        Command::Ablate(a) => ablate(g, a),
    }
}

struct Dataset {
    path: PathBuf,
    manifest: Manifest,
}

impl Dataset {
    fn open(global: &Global) -> Result<Self> {
        let path = global
            .manifest
            .clone()
            .ok_or_else(|| usage("this command needs --manifest"))?;
        let manifest = Manifest::load(&path)?;
        if manifest.entries.is_empty() {
            return Err(usage(format!("manifest {} lists no files", path.display())));
        }
        Ok(Dataset { path, manifest })
    }

    fn cases(&self, split: Split, run: &mut Run) -> Result<Vec<CaseRecord>> {
        for (key, e) in &self.manifest.entries {
            if e.split == split {
                run.inputs.push(Manifest::resolve(&self.path, key));
            }
        }
        let cases = self.manifest.load_cases(&self.path, split)?;
        if cases.is_empty() {
            return Err(usage(format!("manifest has no {split:?} files").to_lowercase()));
        }
        Ok(cases)
    }

    fn preset(&self) -> ExperimentConfig {
        let viscous = self
            .manifest
            .entries
            .values()
            .any(|e| e.condition_kind == ConditionKind::Viscosity);
        if viscous {
            ExperimentConfig::burgers()
        } else {
            ExperimentConfig::default()
        }
    }
}

fn experiment_config(global: &Global, data: &Dataset, run: &mut Run) -> Result<ExperimentConfig> {
    let mut cfg = config::load(data.preset(), global.config.as_deref(), &global.overrides)
        .map_err(|e| usage(format!("{e:#}")))?;
    if let Some(seed) = global.seed {
        cfg.train.seed = seed;
    }
    run.seed = Some(cfg.train.seed);
    run.inputs.push(data.path.clone());
    if let Some(c) = &global.config {
        run.inputs.push(c.clone());
    }
    Ok(cfg)
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(usage(format!("unknown split {s:?} (expected train or test)"))),
    }
}

fn file_stem(case: &CaseRecord) -> String {
    Path::new(&case.source_path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "case".into())
}

fn gen_burgers(global: &Global, a: &crate::GenBurgersArgs) -> Result<()> {
    let mut run = Run::new("gen-burgers", global)?;
    let mut cfg = BurgersConfig {
        nx: a.nx,
        nt: a.nt,
        ..BurgersConfig::default()
    };
    if let Some(t) = a.t_end {
        cfg.t_end = t;
    }
    if let Some(r) = a.refine {
        cfg.refine = r;
    }
    if let Some(s) = a.substeps {
        cfg.substeps = s;
    }
    if !(a.nu_ref > 0.0) || !a.nu_ref.is_finite() {
        return Err(usage(format!("--nu-ref must be positive, got {}", a.nu_ref)));
    }
    cfg.nu = a.nu_ref;
    cfg.validate()?;
    run.config = serde_json::to_value(&cfg)?;
    let cases = burgers::dataset_cases(a.nu_ref);
    let paths = burgers::generate_burgers_dataset(&cases, &cfg, &global.out)?;
    run.outputs.extend(paths);
    run.outputs.push(global.out.join(burgers::MANIFEST_FILE));
    for c in &cases {
        println!("{} nu={:.6e} split={:?}", c.file_name, c.nu, c.split);
    }
    run.finish()
}

fn calibrate(global: &Global, a: &crate::CalibrateArgs) -> Result<()> {
    let mut run = Run::new("calibrate", global)?;
    let data = Dataset::open(global)?;
    run.inputs.push(data.path.clone());
    let cases = data.cases(Split::Train, &mut run)?;
    let calib = experiment::calibrate(&cases, a.robust)?;
    let json = calib.to_json();
    run.config = json!({ "robust": a.robust });
    run.write("calibration.json", &json)?;
    println!(
        "a0={:.6e} a1={:.6e} residual={:.3e}",
        calib.a0, calib.a1, calib.residual
    );
    if let Some(r) = &calib.robust {
        println!("robust a0={:.6e} a1={:.6e}", r.a0, r.a1);
    }
    run.finish()
}

fn train(global: &Global, a: &crate::TrainArgs) -> Result<()> {
    let mut run = Run::new("train", global)?;
    let data = Dataset::open(global)?;
    let mut cfg = experiment_config(global, &data, &mut run)?;
    if let Some(v) = &a.variant {
        cfg.model = ModelKind::parse(v).map_err(|e| usage(e.to_string()))?;
    }
    run.config = serde_json::to_value(&cfg)?;
    let cases = data.cases(Split::Train, &mut run)?;
    let model = experiment::train_experiment(&cases, &cfg)?;
    let ckpt = global.out.join("model.ckpt");
    model.save(&ckpt)?;
    run.outputs.push(ckpt.clone());
    run.outputs.push(shockfuse::nn::checkpoint::sidecar_path(&ckpt));
    run.write("history.csv", model.history.to_csv())?;
    run.write("config.json", serde_json::to_string_pretty(&cfg)? + "\n")?;
    println!(
        "trained {} for {} epochs, final val loss {:.4e}",
        cfg.model.as_str(),
        model.history.epochs.len(),
        model.history.final_val_loss().unwrap_or(f64::NAN)
    );
    run.finish()
}

fn predict(global: &Global, a: &crate::PredictArgs) -> Result<()> {
    let mut run = Run::new("predict", global)?;
    let data = Dataset::open(global)?;
    run.inputs.push(data.path.clone());
    run.inputs.push(a.checkpoint.clone());
    let split = parse_split(&a.split)?;
    if a.mc_samples.is_some_and(|n| n < 2) {
        return Err(usage("--mc-samples must be at least 2"));
    }
    let model = TrainedModel::load(&a.checkpoint)?;
    let seed = global.seed.unwrap_or(0);
    run.seed = Some(seed);
    run.config = json!({ "split": a.split, "mc_samples": a.mc_samples, "epsilon": a.epsilon });
    let mut mc_rng = rng::stream(seed, "mc-dropout");
    for case in data.cases(split, &mut run)? {
        let (mean, sigma) = match a.mc_samples {
            Some(n) => {
                let (m, s) = model.mc_predict_case(&case, n, &mut mc_rng)?;
                (m, Some(s))
            }
            None => (model.predict_case(&case)?, None),
        };
        let cols: Vec<Vec<f64>> = mean.columns().into_iter().map(|c| c.to_vec()).collect();
        let sig_cols: Vec<Vec<f64>> = sigma
            .iter()
            .flat_map(|s| s.columns().into_iter().map(|c| c.to_vec()).collect::<Vec<_>>())
            .collect();
        let sig_names: Vec<String> = model.targets.iter().map(|t| format!("Sigma_{t}")).collect();
        let preds: Vec<PredictedChannel> = model
            .targets
            .iter()
            .zip(&cols)
            .map(|(name, v)| PredictedChannel { name, values: v })
            .collect();
        let extra: Vec<PredictedChannel> = sig_names
            .iter()
            .zip(&sig_cols)
            .map(|(name, v)| PredictedChannel { name, values: v })
            .collect();
        let zones = field_io::prediction_zones(&case, &preds, &extra, a.epsilon)?;
        let text = field_io::write_tecplot(case.title.as_deref(), &zones);
        let path = run.write(&format!("{}_pred.dat", file_stem(&case)), text)?;
        println!("{}", path.display());
    }
    run.finish()
}

fn evaluate(global: &Global, a: &crate::EvalArgs) -> Result<()> {
    let mut run = Run::new("eval", global)?;
    let mut reports = Vec::new();
    if let Some(ckpt) = &a.checkpoint {
        let data = Dataset::open(global)?;
        run.inputs.push(data.path.clone());
        run.inputs.push(ckpt.clone());
        let model = TrainedModel::load(ckpt)?;
        let seed = global.seed.unwrap_or(0);
        run.seed = Some(seed);
        for case in data.cases(Split::Test, &mut run)? {
            let pred = model.predict_case(&case)?;
            reports.push(eval::evaluate_prediction(
                &case,
                &model.targets,
                &pred,
                model.kind.as_str(),
                seed,
            )?);
            if let Some(y) = a.centerline {
                let col = pred.column(0).to_vec();
                let rows = eval::centerline_profile(&case, &model.targets[0], &col, None, y)?;
                run.write(
                    &format!("{}_centerline.csv", file_stem(&case)),
                    eval::profile_csv(&rows),
                )?;
            }
        }
    } else {
        let (Some(pred_path), Some(truth_path)) = (&a.pred, &a.truth) else {
            return Err(usage("eval needs --checkpoint or both --pred and --truth"));
        };
        run.inputs.push(pred_path.clone());
        run.inputs.push(truth_path.clone());
        let truth_file = field_io::read_tecplot(truth_path)?;
        let pred_file = field_io::read_tecplot(pred_path)?;
        let condition = match &global.manifest {
            Some(mp) => {
                let m = Manifest::load(mp)?;
                run.inputs.push(mp.clone());
                m.entries
                    .iter()
                    .find(|(k, _)| Manifest::resolve(mp, k) == *truth_path)
                    .map_or(0.0, |(_, e)| e.condition)
            }
            None => 0.0,
        };
        let truth = CaseRecord::new(
            truth_file,
            condition,
            ConditionKind::Viscosity,
            truth_path.to_string_lossy(),
        )?;
        let pred_case = CaseRecord::new(
            pred_file,
            condition,
            ConditionKind::Viscosity,
            pred_path.to_string_lossy(),
        )?;
        let cols = a
            .channels
            .iter()
            .map(|c| pred_case.gather(c))
            .collect::<shockfuse::Result<Vec<_>>>()?;
        let n = truth.n_points();
        let pred = Array2::from_shape_fn((n, cols.len()), |(p, c)| cols[c].get(p).copied().unwrap_or(f64::NAN));
        if cols.iter().any(|c| c.len() != n) {
            return Err(usage(format!(
                "prediction has {} points, truth has {n}",
                pred_case.n_points()
            )));
        }
        reports.push(eval::evaluate_prediction(&truth, &a.channels, &pred, "file", 0)?);
        if let Some(y) = a.centerline {
            let sigma_name = format!("Sigma_{}", a.channels[0]);
            let sigma = pred_case.has_column(&sigma_name).then(|| pred_case.gather(&sigma_name)).transpose()?;
            let rows = eval::centerline_profile(&truth, &a.channels[0], &cols[0], sigma.as_deref(), y)?;
            run.write("centerline.csv", eval::profile_csv(&rows))?;
        }
    }
    run.write("metrics.csv", eval::metrics_csv(&reports))?;
    run.write("metrics.json", serde_json::to_string_pretty(&reports)? + "\n")?;
    for r in &reports {
        for c in &r.channels {
            println!(
                "condition={:.6e} {} rel_l2={:.4e} nrmse={:.3}% nmae={:.3}%",
                r.condition, c.name, c.rel_l2, c.nrmse_pct, c.nmae_pct
            );
        }
    }
    run.finish()
}

fn compare(global: &Global, a: &crate::CompareArgs) -> Result<()> {
    let mut run = Run::new("compare", global)?;
    let data = Dataset::open(global)?;
    let cfg = experiment_config(global, &data, &mut run)?;
    let kinds = a
        .variants
        .iter()
        .map(|v| ModelKind::parse(v).map_err(|e| usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    if a.seeds.is_empty() {
        return Err(usage("--seeds must list at least one seed"));
    }
    run.config = json!({ "experiment": cfg, "seeds": a.seeds });
    let train = data.cases(Split::Train, &mut run)?;
    let test = data.cases(Split::Test, &mut run)?;
    let report = eval::compare_models(&train, &test, &cfg, &kinds, &a.seeds)?;
    run.write("compare.csv", eval::metrics_csv(&report.rows))?;
    run.write("compare.json", serde_json::to_string_pretty(&report)? + "\n")?;
    for (m, v) in &report.median_joint {
        println!("{m}: median joint rel L2 {v:.4e}");
    }
    for i in &report.improvements {
        println!("{} vs {}: {:+.2}%", i.model, i.baseline, i.joint_improvement_pct);
    }
    run.finish()
}

fn ablate(global: &Global, a: &crate::AblateArgs) -> Result<()> {
    let mut run = Run::new("ablate", global)?;
    let data = Dataset::open(global)?;
    let cfg = experiment_config(global, &data, &mut run)?;
    run.config = serde_json::to_value(&cfg)?;
    let train = data.cases(Split::Train, &mut run)?;
    let test = data.cases(Split::Test, &mut run)?;
    let case = match &a.test_case {
        Some(name) => test
            .iter()
            .find(|c| {
                Path::new(&c.source_path)
                    .file_name()
                    .is_some_and(|f| f.to_string_lossy() == *name)
            })
            .ok_or_else(|| usage(format!("--test-case {name:?} is not a test file of the manifest")))?,
        None => {
            let (lo, hi) = train.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), c| {
                (l.min(c.condition), h.max(c.condition))
            });
            test.iter()
                .find(|c| c.condition >= lo && c.condition <= hi)
                .unwrap_or(&test[0])
        }
    };
    let rows = eval::run_ablation(&train, case, &cfg)?;
    run.write("ablation.csv", eval::ablation_csv(&rows))?;
    run.write("ablation.json", serde_json::to_string_pretty(&rows)? + "\n")?;
    for r in &rows {
        let c = &r.metrics.channels[0];
        println!(
            "{:<24} nrmse={:.3}% nmae={:.3}% params={}",
            r.variant.tag(),
            c.nrmse_pct,
            c.nmae_pct,
            r.n_params
        );
    }
    run.finish()
}
