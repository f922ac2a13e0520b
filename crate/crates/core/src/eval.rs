//! Error metrics, centerline profiles, baseline comparison and ablation runs.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{train_experiment, ExperimentConfig, ModelKind, TrainedModel};
use crate::features::{BranchInput, FeatureSet, WeightComponents};
use crate::field_io::{median_spacing, Axis, CaseRecord, DX_MIN_DEFAULT};

/// `‖a − â‖₂ / ‖a‖₂`.
pub fn rel_l2(truth: &[f64], pred: &[f64]) -> Result<f64> {
    joint_rel_l2(&[truth], &[pred])
}

/// Relative L2 error of all channels stacked into one vector.
pub fn joint_rel_l2(truth: &[&[f64]], pred: &[&[f64]]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} truth channels, {} predicted",
            truth.len(),
            pred.len()
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (t, p) in truth.iter().zip(pred) {
        if t.len() != p.len() {
            return Err(Error::LengthMismatch {
                what: "prediction".into(),
                expected: t.len(),
                found: p.len(),
            });
        }
        for (a, b) in t.iter().zip(p.iter()) {
            num += (a - b) * (a - b);
            den += a * a;
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((num / den).sqrt())
}

/// `(NRMSE, NMAE)` in percent of the truth range `max − min`.
pub fn range_normalized_errors(truth: &[f64], pred: &[f64]) -> Result<(f64, f64)> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch {
            what: "prediction".into(),
            expected: truth.len(),
            found: pred.len(),
        });
    }
    let (lo, hi) = truth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::ZeroRange);
    }
    let n = truth.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (a, b) in truth.iter().zip(pred) {
        se += (a - b) * (a - b);
        ae += (a - b).abs();
    }
    Ok(((se / n).sqrt() / range * 100.0, ae / n / range * 100.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub name: String,
    pub rel_l2: f64,
    pub nrmse_pct: f64,
    pub nmae_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub condition: f64,
    pub seed: u64,
    pub channels: Vec<ChannelMetrics>,
    pub joint_rel_l2: f64,
    pub n_points: usize,
}

/// Metrics of a prediction matrix (one column per target) against a case.
pub fn evaluate_prediction(
    case: &CaseRecord,
    targets: &[String],
    pred: &Array2<f64>,
    model: &str,
    seed: u64,
) -> Result<MetricsReport> {
    let truths = targets
        .iter()
        .map(|t| case.gather(t))
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<Vec<f64>> = pred.columns().into_iter().map(|c| c.to_vec()).collect();
    if preds.len() != truths.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted channels for {} targets",
            preds.len(),
            truths.len()
        )));
    }
    let mut channels = Vec::new();
    for ((name, t), p) in targets.iter().zip(&truths).zip(&preds) {
        let (nrmse_pct, nmae_pct) = range_normalized_errors(t, p)?;
        channels.push(ChannelMetrics {
            name: name.clone(),
            rel_l2: rel_l2(t, p)?,
            nrmse_pct,
            nmae_pct,
        });
    }
    let tr: Vec<&[f64]> = truths.iter().map(Vec::as_slice).collect();
    let pr: Vec<&[f64]> = preds.iter().map(Vec::as_slice).collect();
    Ok(MetricsReport {
        model: model.to_string(),
        condition: case.condition,
        seed,
        channels,
        joint_rel_l2: joint_rel_l2(&tr, &pr)?,
        n_points: case.n_points(),
    })
}

pub fn evaluate_model(model: &TrainedModel, case: &CaseRecord, tag: &str, seed: u64) -> Result<MetricsReport> {
    let pred = model.predict_case(case)?;
    evaluate_prediction(case, &model.targets, &pred, tag, seed)
}

pub fn metrics_csv(rows: &[MetricsReport]) -> String {
    let mut s = String::from("model,seed,condition,channel,rel_l2,nrmse_pct,nmae_pct,joint_rel_l2\n");
    for r in rows {
        for c in &r.channels {
            let _ = writeln!(
                s,
                "{},{},{:e},{},{:e},{:e},{:e},{:e}",
                r.model, r.seed, r.condition, c.name, c.rel_l2, c.nrmse_pct, c.nmae_pct, r.joint_rel_l2
            );
        }
    }
    s
}

// ---------------------------------------------------------------------------
// Centerline

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub x: f64,
    pub truth: f64,
    pub pred: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Points of the row nearest to `y = axis_value` (within half a cell),
/// sorted by x, with a `pred ± 2σ` band.
pub fn centerline_profile(
    case: &CaseRecord,
    channel: &str,
    pred: &[f64],
    sigma: Option<&[f64]>,
    axis_value: f64,
) -> Result<Vec<ProfileRow>> {
    let truth = case.gather(channel)?;
    if pred.len() != truth.len() || sigma.is_some_and(|s| s.len() != truth.len()) {
        return Err(Error::LengthMismatch {
            what: "profile input".into(),
            expected: truth.len(),
            found: pred.len(),
        });
    }
    let zones: Vec<&_> = case.zones.iter().collect();
    let half_cell = 0.5 * median_spacing(&zones, Axis::Y, DX_MIN_DEFAULT).unwrap_or(0.0);
    let mut xs = Vec::with_capacity(truth.len());
    let mut ys = Vec::with_capacity(truth.len());
    for z in &case.zones {
        xs.extend_from_slice(z.x());
        ys.extend_from_slice(z.y());
    }
    let nearest = ys
        .iter()
        .copied()
        .min_by(|a, b| (a - axis_value).abs().total_cmp(&(b - axis_value).abs()));
    let Some(row_y) = nearest.filter(|y| (y - axis_value).abs() <= half_cell) else {
        return Err(Error::EmptySelection(format!(
            "no grid row within half a cell of y = {axis_value}"
        )));
    };
    let mut rows: Vec<ProfileRow> = (0..truth.len())
        .filter(|&p| ys[p] == row_y)
        .map(|p| {
            let s = sigma.map_or(0.0, |s| s[p]);
            ProfileRow {
                x: xs[p],
                truth: truth[p],
                pred: pred[p],
                lower: pred[p] - 2.0 * s,
                upper: pred[p] + 2.0 * s,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.x.total_cmp(&b.x));
    Ok(rows)
}

pub fn profile_csv(rows: &[ProfileRow]) -> String {
    let mut s = String::from("x,truth,pred,lower_2sigma,upper_2sigma\n");
    for r in rows {
        let _ = writeln!(s, "{:e},{:e},{:e},{:e},{:e}", r.x, r.truth, r.pred, r.lower, r.upper);
    }
    s
}

// ---------------------------------------------------------------------------
// Baseline comparison

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub model: String,
    pub baseline: String,
    /// `(baseline − model) / baseline · 100` on the median joint error.
    pub joint_improvement_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<MetricsReport>,
    /// Median over seeds of the mean joint error over test cases.
    pub median_joint: Vec<(String, f64)>,
    pub improvements: Vec<Improvement>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn improvement_pct(model: f64, baseline: f64) -> f64 {
    (baseline - model) / baseline * 100.0
}

/// Trains every model family with the same data, split, budget and seeds and
/// evaluates each on every test case.
pub fn compare_models(
    train: &[CaseRecord],
    test: &[CaseRecord],
    base: &ExperimentConfig,
    kinds: &[ModelKind],
    seeds: &[u64],
) -> Result<ComparisonReport> {
    let mut rows = Vec::new();
    let mut median_joint = Vec::new();
    for &kind in kinds {
        let mut per_seed = Vec::new();
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.model = kind;
            cfg.train.seed = seed;
            let model = train_experiment(train, &cfg)?;
            let mut joint = 0.0;
            for case in test {
                let r = evaluate_model(&model, case, kind.as_str(), seed)?;
                joint += r.joint_rel_l2;
                rows.push(r);
            }
            per_seed.push(joint / test.len().max(1) as f64);
        }
        median_joint.push((kind.as_str().to_string(), median(&mut per_seed)));
    }
    let mut improvements = Vec::new();
    for (m, mv) in &median_joint {
        for (b, bv) in &median_joint {
            if m != b {
                improvements.push(Improvement {
                    model: m.clone(),
                    baseline: b.clone(),
                    joint_improvement_pct: improvement_pct(*mv, *bv),
                });
            }
        }
    }
    Ok(ComparisonReport {
        rows,
        median_joint,
        improvements,
    })
}

// ---------------------------------------------------------------------------
// Ablation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    BaselineEndToEnd,
    NoGradientWeighting,
    NoRelativeWeighting,
    SimplerArchitecture,
    ExternalCalibration,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::BaselineEndToEnd,
        AblationVariant::NoGradientWeighting,
        AblationVariant::NoRelativeWeighting,
        AblationVariant::SimplerArchitecture,
        AblationVariant::ExternalCalibration,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            AblationVariant::BaselineEndToEnd => "baseline_end_to_end",
            AblationVariant::NoGradientWeighting => "no_gradient_weighting",
            AblationVariant::NoRelativeWeighting => "no_relative_weighting",
            AblationVariant::SimplerArchitecture => "simpler_architecture",
            AblationVariant::ExternalCalibration => "external_calibration",
        }
    }

    /// The base config with this variant's deltas applied. The end-to-end
    /// baseline sees raw coordinates; only external calibration uses the
    /// shock-aware trunk and a branch fed with the condition and station.
    pub fn apply(self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.model = ModelKind::Fusion;
        cfg.train.weights.beta = base.train.weights.beta;
        cfg.train.weights.use_rel_weight = true;
        cfg.arch.simpler = false;
        cfg.robust_calibration = false;
        match self {
            AblationVariant::BaselineEndToEnd => {}
            AblationVariant::NoGradientWeighting => cfg.train.weights.beta = 0.0,
            AblationVariant::NoRelativeWeighting => cfg.train.weights.use_rel_weight = false,
            AblationVariant::SimplerArchitecture => cfg.arch.simpler = true,
            AblationVariant::ExternalCalibration => {
                cfg.model = ModelKind::ShockAware;
                cfg.features.set = FeatureSet::ShockAware;
                cfg.features.branch = BranchInput::ConditionAndStation;
                cfg.robust_calibration = true;
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub metrics: MetricsReport,
    /// `max |W_g − 1|` over the training points (0 when gradient weighting is off).
    pub max_gradient_weight_deviation: f64,
    pub n_params: usize,
}

/// Runs the five variants with shared data and seed and scores each on `test`.
pub fn run_ablation(train: &[CaseRecord], test: &CaseRecord, base: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for variant in AblationVariant::ALL {
        let cfg = variant.apply(base);
        let model = train_experiment(train, &cfg)?;
        let mut dev = 0.0f64;
        for case in train {
            let w = WeightComponents::compute(case, &model.pipeline, &cfg.train.weights)?;
            dev = w.w_g.iter().fold(dev, |m, g| m.max((g - 1.0).abs()));
        }
        let metrics = evaluate_model(&model, test, variant.tag(), cfg.train.seed)?;
        rows.push(AblationRow {
            variant,
            metrics,
            max_gradient_weight_deviation: dev,
            n_params: model.model.n_params(),
        });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,channel,nrmse_pct,nmae_pct,rel_l2,max_gradient_weight_deviation,n_params\n");
    for r in rows {
        for c in &r.metrics.channels {
            let _ = writeln!(
                s,
                "{},{},{:e},{:e},{:e},{:e},{}",
                r.variant.tag(),
                c.name,
                c.nrmse_pct,
                c.nmae_pct,
                c.rel_l2,
                r.max_gradient_weight_deviation,
                r.n_params
            );
        }
    }
    s
}
