//! Grouped splitting, weighted Huber objective and the two-phase curriculum.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeaturePipeline, WeightComponents, WeightParams};
use crate::field_io::{CaseRecord, Axis as GridAxis};
use crate::nn::adamw::{AdamWConfig, OptimizerState};
use crate::nn::{FusionModel, Mode, Standardizer, Standardizers};
use crate::rng::{self, SeededRng};

// ---------------------------------------------------------------------------
// Config

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseName {
    Warmup,
    Focus,
    Finetune,
}

impl PhaseName {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseName::Warmup => "warmup",
            PhaseName::Focus => "focus",
            PhaseName::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumPhase {
    pub name: PhaseName,
    /// Huber threshold.
    pub delta: f64,
    /// Mix between distance (`λ`) and gradient (`1−λ`) weights.
    pub lambda: f64,
    pub max_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.5,
            patience: 10,
            min_lr: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopConfig {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            patience: 25,
            min_delta: 1e-5,
        }
    }
}

/// Cosine decay from the current learning rate to `final_lr`, run after the
/// curriculum with the focus-phase objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineConfig {
    pub epochs: usize,
    pub final_lr: f64,
}

/// Duplicate points close to the shock station, with a small jitter along x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OversampleConfig {
    /// Points with `W_d` above this value are duplicated.
    pub threshold: f64,
    /// Extra copies per selected point.
    pub copies: usize,
    /// Half-width of the uniform x-jitter in grid spacings.
    pub jitter: f64,
}

impl Default for OversampleConfig {
    fn default() -> Self {
        OversampleConfig {
            threshold: 2.0,
            copies: 1,
            jitter: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub phases: Vec<CurriculumPhase>,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub plateau: PlateauConfig,
    pub early_stopping: EarlyStopConfig,
    pub cosine: Option<CosineConfig>,
    pub val_fraction: f64,
    pub seed: u64,
    pub weights: WeightParams,
    pub oversample: Option<OversampleConfig>,
    /// Random subset of points kept per training case (all when `None`).
    pub max_points_per_case: Option<usize>,
    /// Random subset of points kept per validation case.
    pub max_val_points_per_case: Option<usize>,
    /// Size of the fixed training subset used for the clean train loss.
    pub clean_loss_points: usize,
    /// Start each phase with fresh optimizer moments and the initial learning
    /// rate instead of carrying them over.
    pub reset_optimizer_each_phase: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            phases: vec![
                CurriculumPhase {
                    name: PhaseName::Warmup,
                    delta: 1.0,
                    lambda: 0.7,
                    max_epochs: 200,
                },
                CurriculumPhase {
                    name: PhaseName::Focus,
                    delta: 0.5,
                    lambda: 0.4,
                    max_epochs: 300,
                },
            ],
            batch_size: 512,
            optimizer: AdamWConfig::default(),
            plateau: PlateauConfig::default(),
            early_stopping: EarlyStopConfig::default(),
            cosine: None,
            val_fraction: 0.2,
            seed: 0,
            weights: WeightParams::default(),
            oversample: None,
            max_points_per_case: None,
            max_val_points_per_case: None,
            clean_loss_points: 4096,
            reset_optimizer_each_phase: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.phases.is_empty() {
            return bad("at least one curriculum phase is required".into());
        }
        for p in &self.phases {
            if !(p.delta > 0.0) || !(0.0..=1.0).contains(&p.lambda) {
                return bad(format!("phase {:?}: need delta > 0 and lambda in [0, 1]", p.name));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        if !(self.plateau.factor > 0.0 && self.plateau.factor < 1.0) || !(self.plateau.min_lr >= 0.0) {
            return bad("plateau factor must lie in (0, 1) and min_lr >= 0".into());
        }
        if matches!(self.max_points_per_case, Some(0)) || matches!(self.max_val_points_per_case, Some(0)) {
            return bad("point caps must be positive".into());
        }
        self.optimizer.validate()?;
        self.weights.validate()
    }
}

// ---------------------------------------------------------------------------
// Splitting

/// Number of validation groups: `round_half_up(fraction · groups)`, kept in
/// `[1, groups − 1]`.
pub fn n_val_groups(n_groups: usize, val_fraction: f64) -> usize {
    let raw = (val_fraction * n_groups as f64 + 0.5).floor() as usize;
    raw.clamp(1, n_groups - 1)
}

/// Splits cases into `(train, val)` index lists with whole condition groups
/// on each side.
pub fn group_split(conditions: &[f64], val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut groups: Vec<u64> = conditions.iter().map(|c| c.to_bits()).collect();
    groups.sort_unstable_by(|a, b| f64::from_bits(*a).total_cmp(&f64::from_bits(*b)));
    groups.dedup();
    if groups.len() < 2 {
        return Err(Error::TooFewGroups(groups.len()));
    }
    let n_val = n_val_groups(groups.len(), val_fraction);
    let mut rng = rng::stream(seed, "split");
    groups.shuffle(&mut rng);
    let val: BTreeSet<u64> = groups[..n_val].iter().copied().collect();
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (k, c) in conditions.iter().enumerate() {
        if val.contains(&c.to_bits()) {
            valid.push(k);
        } else {
            train.push(k);
        }
    }
    Ok((train, valid))
}

// ---------------------------------------------------------------------------
// Loss

/// Huber function `ℓ_δ(r)` and its derivative.
#[inline]
pub fn huber(r: f64, delta: f64) -> (f64, f64) {
    if r.abs() <= delta {
        (0.5 * r * r, r)
    } else {
        (delta * (r.abs() - 0.5 * delta), delta * r.signum())
    }
}

/// Weighted-mean Huber loss `Σᵢ wᵢ Σ_c ℓ_δ(rᵢc) / Σᵢ wᵢ` and its gradient
/// with respect to `pred`.
pub fn weighted_huber(
    pred: ArrayView2<f64>,
    target: ArrayView2<f64>,
    weights: &[f64],
    delta: f64,
) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() || weights.len() != pred.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "pred {:?}, target {:?}, {} weights",
            pred.dim(),
            target.dim(),
            weights.len()
        )));
    }
    let norm: f64 = weights.iter().sum();
    if !(norm > 0.0) {
        return Err(Error::InvalidConfig("weights sum to zero".into()));
    }
    let mut grad = Array2::zeros(pred.raw_dim());
    let mut loss = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        let scale = w / norm;
        for c in 0..pred.ncols() {
            let (l, g) = huber(pred[[i, c]] - target[[i, c]], delta);
            loss += w * l;
            grad[[i, c]] = scale * g;
        }
    }
    Ok((loss / norm, grad))
}

// ---------------------------------------------------------------------------
// Datasets

/// Flattened, unstandardized point set.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub branch: Array2<f64>,
    pub trunk: Array2<f64>,
    pub target: Array2<f64>,
    pub w_d: Vec<f64>,
    pub w_g: Vec<f64>,
    pub w_rel: Vec<f64>,
    pub condition: Vec<f64>,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.trunk.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(λ W_d + (1−λ) W_g) · w_rel` per point.
    pub fn weights(&self, lambda: f64) -> Vec<f64> {
        WeightComponents {
            w_d: self.w_d.clone(),
            w_g: self.w_g.clone(),
            w_rel: self.w_rel.clone(),
        }
        .combined(lambda)
    }

    pub fn concat(parts: Vec<PointSet>) -> Result<PointSet> {
        let cat = |f: &dyn Fn(&PointSet) -> ArrayView2<f64>| {
            let views: Vec<_> = parts.iter().map(f).collect();
            ndarray::concatenate(Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))
        };
        let flat = |f: &dyn Fn(&PointSet) -> &Vec<f64>| parts.iter().flat_map(|p| f(p).iter().copied()).collect();
        Ok(PointSet {
            branch: cat(&|p| p.branch.view())?,
            trunk: cat(&|p| p.trunk.view())?,
            target: cat(&|p| p.target.view())?,
            w_d: flat(&|p| &p.w_d),
            w_g: flat(&|p| &p.w_g),
            w_rel: flat(&|p| &p.w_rel),
            condition: flat(&|p| &p.condition),
        })
    }

    pub fn select(&self, idx: &[usize]) -> PointSet {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect();
        PointSet {
            branch: self.branch.select(Axis(0), idx),
            trunk: self.trunk.select(Axis(0), idx),
            target: self.target.select(Axis(0), idx),
            w_d: pick(&self.w_d),
            w_g: pick(&self.w_g),
            w_rel: pick(&self.w_rel),
            condition: pick(&self.condition),
        }
    }
}

/// Target matrix of a case, one column per named channel.
pub fn case_targets(case: &CaseRecord, channels: &[String]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((case.n_points(), channels.len()));
    for (c, name) in channels.iter().enumerate() {
        for (dst, v) in out.column_mut(c).iter_mut().zip(case.gather(name)?) {
            *dst = v;
        }
    }
    Ok(out)
}

/// Trunk features of every point of a case, zones concatenated.
pub fn case_trunk(case: &CaseRecord, pipeline: &FeaturePipeline) -> Result<Array2<f64>> {
    let parts = case
        .zones
        .iter()
        .map(|z| pipeline.trunk_features(z, case.condition))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

/// Jittered copies of near-station points, features rebuilt at the moved x.
fn oversampled(
    case: &CaseRecord,
    pipeline: &FeaturePipeline,
    w_d: &[f64],
    cfg: &OversampleConfig,
    rng: &mut SeededRng,
) -> Result<Vec<(Array2<f64>, Vec<usize>)>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for zone in &case.zones {
        let n = zone.n_points();
        let picked: Vec<usize> = (0..n).filter(|&p| w_d[offset + p] > cfg.threshold).collect();
        if !picked.is_empty() {
            let dx = crate::field_io::median_spacing(&[zone], GridAxis::X, pipeline.params.dx_min)?;
            for _ in 0..cfg.copies {
                let mut x = zone.x().to_vec();
                for &p in &picked {
                    x[p] += dx * cfg.jitter * rng.gen_range(-1.0..=1.0);
                }
                let f = pipeline.trunk_features_shifted(zone, case.condition, Some(&x))?;
                let rows = f.select(Axis(0), &picked);
                out.push((rows, picked.iter().map(|p| p + offset).collect()));
            }
        }
        offset += n;
    }
    Ok(out)
}

/// Builds the point set of one case, optionally subsampled and oversampled.
pub fn case_points(
    case: &CaseRecord,
    pipeline: &FeaturePipeline,
    weights: &WeightParams,
    channels: &[String],
    max_points: Option<usize>,
    oversample: Option<&OversampleConfig>,
    rng: &mut SeededRng,
) -> Result<PointSet> {
    let n = case.n_points();
    let comps = WeightComponents::compute(case, pipeline, weights)?;
    let branch_row = pipeline.branch_row(case.condition);
    let trunk = case_trunk(case, pipeline)?;
    let target = case_targets(case, channels)?;
    let full = PointSet {
        branch: Array2::from_shape_fn((n, branch_row.len()), |(_, c)| branch_row[c]),
        trunk,
        target: target.clone(),
        w_d: comps.w_d.clone(),
        w_g: comps.w_g.clone(),
        w_rel: comps.w_rel.clone(),
        condition: vec![case.condition; n],
    };
    let mut parts = Vec::new();
    let keep: Vec<usize> = match max_points {
        Some(m) if m < n => {
            let mut idx = rand::seq::index::sample(rng, n, m).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    };
    let kept: BTreeSet<usize> = keep.iter().copied().collect();
    parts.push(full.select(&keep));
    if let Some(cfg) = oversample {
        for (rows, idx) in oversampled(case, pipeline, &comps.w_d, cfg, rng)? {
            let sel: Vec<usize> = (0..idx.len()).filter(|&k| kept.contains(&idx[k])).collect();
            if sel.is_empty() {
                continue;
            }
            let src: Vec<usize> = sel.iter().map(|&k| idx[k]).collect();
            let mut extra = full.select(&src);
            extra.trunk = rows.select(Axis(0), &sel);
            parts.push(extra);
        }
    }
    PointSet::concat(parts)
}

/// Standardized training tensors.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub branch: Array2<f64>,
    pub trunk: Array2<f64>,
    pub target: Array2<f64>,
    pub points: PointSet,
}

impl Prepared {
    pub fn new(points: PointSet, st: &Standardizers) -> Result<Self> {
        Ok(Prepared {
            branch: st.branch.transform(points.branch.view())?,
            trunk: st.trunk.transform(points.trunk.view())?,
            target: st.target.transform(points.target.view())?,
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Fits all standardizers on the training points only.
pub fn fit_standardizers(train: &PointSet) -> Result<Standardizers> {
    Ok(Standardizers {
        branch: Standardizer::fit(train.branch.view())?,
        trunk: Standardizer::fit(train.trunk.view())?,
        target: Standardizer::fit(train.target.view())?,
    })
}

// ---------------------------------------------------------------------------
// Batching

/// Shuffled index batches covering `0..n` exactly once.
pub fn assemble_batches(n: usize, batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: PhaseName,
    /// Mean batch loss with dropout and input noise active.
    pub train_loss: f64,
    /// Loss on a fixed training subset in inference mode.
    pub clean_train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,phase,train_loss,val_loss,lr,clean_train_loss\n");
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{:e},{:e},{:e},{:e}",
                r.epoch,
                r.phase.as_str(),
                r.train_loss,
                r.val_loss,
                r.lr,
                r.clean_train_loss
            );
        }
        s
    }

    pub fn phase_epochs(&self, phase: PhaseName) -> usize {
        self.epochs.iter().filter(|r| r.phase == phase).count()
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.val_loss)
    }
}

/// Inference-mode loss over a prepared set, in chunks.
pub fn evaluate_loss(model: &FusionModel, data: &Prepared, weights: &[f64], delta: f64) -> Result<f64> {
    let n = data.len();
    let norm: f64 = weights.iter().sum();
    let mut total = 0.0;
    let chunk = 4096;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let b = data.branch.slice(ndarray::s![start..end, ..]);
        let t = data.trunk.slice(ndarray::s![start..end, ..]);
        let (out, _) = model.forward(b, t, Mode::Infer)?;
        let w = &weights[start..end];
        let (l, _) = weighted_huber(out.view(), data.target.slice(ndarray::s![start..end, ..]), w, delta)?;
        total += l * w.iter().sum::<f64>();
        start = end;
    }
    Ok(total / norm)
}

/// Training state that survives between phases.
struct Loop<'a> {
    model: &'a mut FusionModel,
    train: &'a Prepared,
    val: &'a Prepared,
    clean_idx: Prepared,
    cfg: &'a TrainConfig,
    batch_rng: SeededRng,
    dropout_rng: SeededRng,
    history: TrainHistory,
    epoch: usize,
}

impl Loop<'_> {
    fn run_epoch(
        &mut self,
        opt: &mut OptimizerState,
        weights: &[f64],
        delta: f64,
    ) -> Result<f64> {
        let batches = assemble_batches(self.train.len(), self.cfg.batch_size, &mut self.batch_rng);
        let mut total = 0.0;
        let mut wsum = 0.0;
        let mut params = self.model.params().to_vec();
        for idx in batches {
            let b = self.train.branch.select(Axis(0), &idx);
            let t = self.train.trunk.select(Axis(0), &idx);
            let y = self.train.target.select(Axis(0), &idx);
            let w: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
            let (out, cache) = self.model.forward(b.view(), t.view(), Mode::Train(&mut self.dropout_rng))?;
            let (loss, d_out) = weighted_huber(out.view(), y.view(), &w, delta)?;
            let mut grads = self.model.backward(&cache, d_out.view())?;
            opt.step(&mut params, &mut grads)?;
            self.model.set_params(&params);
            let ws: f64 = w.iter().sum();
            total += loss * ws;
            wsum += ws;
        }
        Ok(total / wsum)
    }

    fn record(&mut self, phase: PhaseName, train_loss: f64, lr: f64, weights_val: &[f64], weights_clean: &[f64], delta: f64) -> Result<f64> {
        let val_loss = evaluate_loss(self.model, self.val, weights_val, delta)?;
        let clean = evaluate_loss(self.model, &self.clean_idx, weights_clean, delta)?;
        self.epoch += 1;
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::DivergedTraining { epoch: self.epoch });
        }
        self.history.epochs.push(EpochRecord {
            epoch: self.epoch,
            phase,
            train_loss,
            clean_train_loss: clean,
            val_loss,
            lr,
        });
        Ok(val_loss)
    }

    fn phase(&mut self, phase: &CurriculumPhase, opt: &mut OptimizerState) -> Result<()> {
        let cfg = self.cfg;
        let w_train = self.train.points.weights(phase.lambda);
        let w_val = self.val.points.weights(phase.lambda);
        let w_clean = self.clean_idx.points.weights(phase.lambda);
        let mut best = f64::INFINITY;
        let mut best_params = self.model.params().to_vec();
        let mut stale = 0;
        let mut plateau_best = f64::INFINITY;
        let mut plateau_wait = 0;
        for _ in 0..phase.max_epochs {
            let lr = opt.config.lr;
            let train_loss = self.run_epoch(opt, &w_train, phase.delta)?;
            let val = self.record(phase.name, train_loss, lr, &w_val, &w_clean, phase.delta)?;
            if val < best - cfg.early_stopping.min_delta {
                best = val;
                best_params.copy_from_slice(self.model.params());
                stale = 0;
            } else {
                stale += 1;
                if stale > cfg.early_stopping.patience {
                    break;
                }
            }
            if val < plateau_best - cfg.early_stopping.min_delta {
                plateau_best = val;
                plateau_wait = 0;
            } else {
                plateau_wait += 1;
                if plateau_wait >= cfg.plateau.patience {
                    opt.config.lr = (opt.config.lr * cfg.plateau.factor).max(cfg.plateau.min_lr);
                    plateau_wait = 0;
                }
            }
        }
        self.model.set_params(&best_params);
        Ok(())
    }

    fn finetune(&mut self, cosine: &CosineConfig, phase: &CurriculumPhase, opt: &mut OptimizerState) -> Result<()> {
        let w_train = self.train.points.weights(phase.lambda);
        let w_val = self.val.points.weights(phase.lambda);
        let w_clean = self.clean_idx.points.weights(phase.lambda);
        let start_lr = opt.config.lr;
        let mut best = evaluate_loss(self.model, self.val, &w_val, phase.delta)?;
        let mut best_params = self.model.params().to_vec();
        for e in 0..cosine.epochs {
            let frac = e as f64 / cosine.epochs.max(1) as f64;
            let lr = cosine.final_lr
                + 0.5 * (start_lr - cosine.final_lr) * (1.0 + (std::f64::consts::PI * frac).cos());
            opt.config.lr = lr;
            let train_loss = self.run_epoch(opt, &w_train, phase.delta)?;
            let val = self.record(PhaseName::Finetune, train_loss, lr, &w_val, &w_clean, phase.delta)?;
            if val < best {
                best = val;
                best_params.copy_from_slice(self.model.params());
            }
        }
        self.model.set_params(&best_params);
        Ok(())
    }
}

/// Runs every curriculum phase on standardized data. The optimizer state and
/// learning rate carry over between phases; each phase stops early on a
/// stalled validation loss and ends with its best parameters restored.
pub fn train_curriculum(
    model: &mut FusionModel,
    train: &Prepared,
    val: &Prepared,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptySelection("training or validation set is empty".into()));
    }
    let mut clean_rng = rng::stream(cfg.seed, "clean-subset");
    let n_clean = cfg.clean_loss_points.min(train.len()).max(1);
    let mut clean: Vec<usize> = rand::seq::index::sample(&mut clean_rng, train.len(), n_clean).into_vec();
    clean.sort_unstable();
    let clean_idx = Prepared {
        branch: train.branch.select(Axis(0), &clean),
        trunk: train.trunk.select(Axis(0), &clean),
        target: train.target.select(Axis(0), &clean),
        points: train.points.select(&clean),
    };
    let mut lp = Loop {
        model,
        train,
        val,
        clean_idx,
        cfg,
        batch_rng: rng::stream(cfg.seed, "batching"),
        dropout_rng: rng::stream(cfg.seed, "dropout"),
        history: TrainHistory::default(),
        epoch: 0,
    };
    let mut opt = OptimizerState::new(lp.model.n_params(), cfg.optimizer);
    for (k, phase) in cfg.phases.iter().enumerate() {
        if k > 0 && cfg.reset_optimizer_each_phase {
            opt = OptimizerState::new(lp.model.n_params(), cfg.optimizer);
        }
        lp.phase(phase, &mut opt)?;
    }
    if let Some(cos) = &cfg.cosine {
        let last = *cfg.phases.last().expect("validated");
        lp.finetune(cos, &last, &mut opt)?;
    }
    Ok(lp.history)
}
