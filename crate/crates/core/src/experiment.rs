//! End-to-end pipeline: calibrate, build features, split, standardize, train
//! and predict.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::features::{
    calibrate_shock_station, calibrate_shock_time, BranchInput, FeatureParams, FeaturePipeline,
    FeatureSet, ShockCalibration,
};
use crate::field_io::{CaseRecord, ConditionKind};
use crate::nn::checkpoint::{self, Checkpoint};
use crate::nn::{mc_dropout_predict, ArchitectureSpec, FusionModel};
use crate::rng::{self, SeededRng};
use crate::trainer::{
    self, case_points, fit_standardizers, group_split, Prepared, PointSet, TrainConfig, TrainHistory,
};

/// The three model families of the baseline comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Hadamard fusion with shock-aware trunk features.
    #[default]
    ShockAware,
    /// Hadamard fusion with raw coordinates in the trunk.
    Fusion,
    /// Dot-product coupling with raw coordinates in the trunk.
    Vanilla,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::ShockAware, ModelKind::Fusion, ModelKind::Vanilla];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::ShockAware => "shock_aware",
            ModelKind::Fusion => "fusion",
            ModelKind::Vanilla => "vanilla",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "shock_aware" => Ok(ModelKind::ShockAware),
            "fusion" | "fusion_orig" => Ok(ModelKind::Fusion),
            "vanilla" => Ok(ModelKind::Vanilla),
            _ => Err(Error::InvalidConfig(format!(
                "unknown model variant {s:?} (expected shock_aware, fusion or vanilla)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    /// Widths of the branch and trunk stacks; the last one is the fusion width
    /// (or the basis size for the dot-product model).
    pub stream_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub dropout: f64,
    pub input_noise: f64,
    /// Halve the fusion and decoder widths and drop one decoder block.
    pub simpler: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            stream_widths: vec![64, 96, 128],
            decoder_widths: vec![128, 128],
            dropout: 0.35,
            input_noise: 0.03,
            simpler: false,
        }
    }
}

impl ArchConfig {
    pub fn build(&self, kind: ModelKind, branch_in: usize, trunk_in: usize, out_dim: usize) -> Result<ArchitectureSpec> {
        let Some((&basis, hidden)) = self.stream_widths.split_last() else {
            return Err(Error::InvalidConfig("stream_widths must not be empty".into()));
        };
        let spec = match kind {
            ModelKind::Vanilla => ArchitectureSpec::dot_product(
                branch_in,
                trunk_in,
                hidden,
                basis,
                out_dim,
                self.dropout,
                self.input_noise,
            ),
            _ => {
                let s = ArchitectureSpec::fusion(
                    branch_in,
                    trunk_in,
                    &self.stream_widths,
                    &self.decoder_widths,
                    out_dim,
                    self.dropout,
                    self.input_noise,
                );
                if self.simpler {
                    s.simpler()
                } else {
                    s
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub arch: ArchConfig,
    pub features: FeatureParams,
    pub train: TrainConfig,
    /// Output channels, in order.
    pub targets: Vec<String>,
    /// Use the Huber-IRLS station map instead of least squares.
    pub robust_calibration: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelKind::ShockAware,
            arch: ArchConfig::default(),
            features: FeatureParams::default(),
            train: TrainConfig::default(),
            targets: vec!["U".into(), "V".into()],
            robust_calibration: false,
        }
    }
}

impl ExperimentConfig {
    /// Space-time Burgers preset: single `U` output, tanh indicator, clipped
    /// envelopes, no input noise, fresh optimizer per phase and capped point
    /// and epoch counts so a run fits a desktop CPU budget.
    pub fn burgers() -> Self {
        let mut train = TrainConfig::default();
        train.phases[0].max_epochs = 40;
        train.phases[1].max_epochs = 60;
        train.max_points_per_case = Some(20000);
        train.max_val_points_per_case = Some(4000);
        train.clean_loss_points = 2048;
        train.reset_optimizer_each_phase = true;
        ExperimentConfig {
            targets: vec!["U".into()],
            features: FeatureParams::space_time(),
            arch: ArchConfig {
                dropout: 0.05,
                input_noise: 0.0,
                ..ArchConfig::default()
            },
            train,
            ..ExperimentConfig::default()
        }
    }

    /// Feature parameters implied by the model family.
    pub fn effective_features(&self) -> FeatureParams {
        let mut f = self.features.clone();
        if self.model != ModelKind::ShockAware {
            f.set = FeatureSet::Coordinates;
            f.branch = BranchInput::Condition;
        }
        f
    }

    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::InvalidConfig("at least one target channel is required".into()));
        }
        self.features.validate()?;
        self.train.validate()
    }
}

/// Station map from training cases: shock time for viscosity-indexed
/// space-time data, streamwise station otherwise.
pub fn calibrate(cases: &[CaseRecord], robust: bool) -> Result<ShockCalibration> {
    let Some(first) = cases.first() else {
        return Err(Error::EmptySelection("no cases to calibrate".into()));
    };
    match first.condition_kind {
        ConditionKind::Viscosity => calibrate_shock_time(cases, robust),
        _ => calibrate_shock_station(cases, robust),
    }
}

/// Everything needed to run a trained model on new cases.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub model: FusionModel,
    pub pipeline: FeaturePipeline,
    pub targets: Vec<String>,
    pub history: TrainHistory,
    pub train_conditions: Vec<f64>,
    pub val_conditions: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metadata {
    kind: ModelKind,
    pipeline: FeaturePipeline,
    targets: Vec<String>,
    train_conditions: Vec<f64>,
    val_conditions: Vec<f64>,
}

impl TrainedModel {
    pub fn metadata(&self) -> Value {
        serde_json::to_value(Metadata {
            kind: self.kind,
            pipeline: self.pipeline.clone(),
            targets: self.targets.clone(),
            train_conditions: self.train_conditions.clone(),
            val_conditions: self.val_conditions.clone(),
        })
        .expect("metadata serializes")
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(path, &self.model, &self.metadata())
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let meta: Metadata = serde_json::from_value(ck.metadata)
            .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        if meta.pipeline.trunk_dim() != ck.model.spec().trunk_in()
            || meta.pipeline.branch_dim() != ck.model.spec().branch_in()
            || meta.targets.len() != ck.model.spec().out_dim
        {
            return Err(Error::Checkpoint(format!(
                "feature pipeline ({} trunk, {} branch, {} outputs) does not match the network ({}, {}, {})",
                meta.pipeline.trunk_dim(),
                meta.pipeline.branch_dim(),
                meta.targets.len(),
                ck.model.spec().trunk_in(),
                ck.model.spec().branch_in(),
                ck.model.spec().out_dim
            )));
        }
        Ok(TrainedModel {
            kind: meta.kind,
            model: ck.model,
            pipeline: meta.pipeline,
            targets: meta.targets,
            history: TrainHistory::default(),
            train_conditions: meta.train_conditions,
            val_conditions: meta.val_conditions,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(checkpoint::load(path)?)
    }

    fn inputs(&self, case: &CaseRecord) -> Result<(Array2<f64>, Array2<f64>)> {
        let trunk = trainer::case_trunk(case, &self.pipeline)?;
        let row = self.pipeline.branch_row(case.condition);
        let branch = Array2::from_shape_fn((trunk.nrows(), row.len()), |(_, c)| row[c]);
        Ok((branch, trunk))
    }

    /// Deterministic prediction for every point of a case (physical units).
    pub fn predict_case(&self, case: &CaseRecord) -> Result<Array2<f64>> {
        let (b, t) = self.inputs(case)?;
        let chunk = 8192;
        let mut parts = Vec::new();
        let mut start = 0;
        while start < t.nrows() {
            let end = (start + chunk).min(t.nrows());
            parts.push(self.model.predict(
                b.slice(ndarray::s![start..end, ..]),
                t.slice(ndarray::s![start..end, ..]),
            )?);
            start = end;
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))
    }

    /// Monte Carlo dropout mean and standard deviation for every point.
    pub fn mc_predict_case(
        &self,
        case: &CaseRecord,
        n_samples: usize,
        rng: &mut SeededRng,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let (b, t) = self.inputs(case)?;
        mc_dropout_predict(&self.model, b.view(), t.view(), n_samples, rng)
    }
}

/// Assembles the point sets of several cases.
fn points_for(
    cases: &[&CaseRecord],
    pipeline: &FeaturePipeline,
    cfg: &ExperimentConfig,
    cap: Option<usize>,
    oversample: bool,
    rng: &mut SeededRng,
) -> Result<PointSet> {
    let parts = cases
        .iter()
        .map(|c| {
            case_points(
                c,
                pipeline,
                &cfg.train.weights,
                &cfg.targets,
                cap,
                if oversample { cfg.train.oversample.as_ref() } else { None },
                rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    PointSet::concat(parts)
}

/// Calibrates on the training groups, builds features, splits by condition,
/// standardizes on the training split and runs the curriculum.
pub fn train_experiment(cases: &[CaseRecord], cfg: &ExperimentConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let conditions: Vec<f64> = cases.iter().map(|c| c.condition).collect();
    let (tr_idx, va_idx) = group_split(&conditions, cfg.train.val_fraction, cfg.train.seed)?;
    let train_cases: Vec<&CaseRecord> = tr_idx.iter().map(|&i| &cases[i]).collect();
    let val_cases: Vec<&CaseRecord> = va_idx.iter().map(|&i| &cases[i]).collect();
    let train_owned: Vec<CaseRecord> = train_cases.iter().map(|c| (*c).clone()).collect();

    let calib = calibrate(&train_owned, cfg.robust_calibration)?;
    let calib = if cfg.robust_calibration { calib.use_robust() } else { calib };
    let pipeline = FeaturePipeline::fit(cfg.effective_features(), calib, &train_owned)?;

    let mut data_rng = rng::stream(cfg.train.seed, "data");
    let train_pts = points_for(&train_cases, &pipeline, cfg, cfg.train.max_points_per_case, true, &mut data_rng)?;
    let val_pts = points_for(&val_cases, &pipeline, cfg, cfg.train.max_val_points_per_case, false, &mut data_rng)?;
    let st = fit_standardizers(&train_pts)?;
    let train = Prepared::new(train_pts, &st)?;
    let val = Prepared::new(val_pts, &st)?;

    let spec = cfg
        .arch
        .build(cfg.model, pipeline.branch_dim(), pipeline.trunk_dim(), cfg.targets.len())?;
    let mut model = FusionModel::new(spec, cfg.train.seed)?;
    model.standardizers = st;
    let history = trainer::train_curriculum(&mut model, &train, &val, &cfg.train)?;

    let uniq = |idx: &[usize]| {
        let mut v: Vec<f64> = idx.iter().map(|&i| conditions[i]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    Ok(TrainedModel {
        kind: cfg.model,
        model,
        pipeline,
        targets: cfg.targets.clone(),
        history,
        train_conditions: uniq(&tr_idx),
        val_conditions: uniq(&va_idx),
    })
}
