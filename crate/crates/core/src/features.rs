//! Shock-station calibration, trunk features and curriculum sample weights.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::burgers::{self, SpaceTimeField};
use crate::error::{Error, Result};
use crate::field_io::{median_spacing, Axis, CaseRecord, ZoneGrid, DX_MIN_DEFAULT};
use crate::fit::{self, AffineFit};
use crate::nn::block::sigmoid;

/// Default Huber threshold for the robust station refit.
pub const HUBER_EPSILON: f64 = 1.35;

/// Gradients at or below this magnitude count as "no signal".
const GRADIENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationPoint {
    pub condition: f64,
    pub location: f64,
}

/// Affine map from the branch condition to the shock station along `axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockCalibration {
    pub a0: f64,
    pub a1: f64,
    pub residual: f64,
    /// Coordinate along which the station is measured (`y` carries time for
    /// space-time data).
    pub axis: Axis,
    pub per_case: Vec<StationPoint>,
    /// Huber-IRLS refit, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robust: Option<AffineFit>,
}

impl ShockCalibration {
    /// Least-squares fit through the given stations.
    pub fn from_points(points: Vec<StationPoint>, axis: Axis, robust: bool) -> Result<Self> {
        let cs: Vec<f64> = points.iter().map(|p| p.condition).collect();
        let ls: Vec<f64> = points.iter().map(|p| p.location).collect();
        let f = fit::fit_affine(&cs, &ls)?;
        let robust = if robust {
            Some(fit::fit_affine_huber(&cs, &ls, HUBER_EPSILON)?)
        } else {
            None
        };
        Ok(ShockCalibration {
            a0: f.a0,
            a1: f.a1,
            residual: f.residual,
            axis,
            per_case: points,
            robust,
        })
    }

    /// Fixed map without fit data (tests, hand-built pipelines).
    pub fn fixed(a0: f64, a1: f64, axis: Axis) -> Self {
        ShockCalibration {
            a0,
            a1,
            residual: 0.0,
            axis,
            per_case: Vec::new(),
            robust: None,
        }
    }

    pub fn station(&self, condition: f64) -> f64 {
        self.a0 + self.a1 * condition
    }

    /// Same calibration with the robust coefficients promoted to the primary map.
    pub fn use_robust(&self) -> Self {
        let mut c = self.clone();
        if let Some(r) = self.robust {
            c.a0 = r.a0;
            c.a1 = r.a1;
            c.residual = r.residual;
        }
        c
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }
}

/// `|∂U/∂x|` at every point, differencing along each I-row (central inside,
/// one-sided at the ends). Rows with repeated x get zero gradient there.
pub fn row_gradient_magnitude(zone: &ZoneGrid, channel: &str) -> Result<Vec<f64>> {
    let u = zone.column(channel)?;
    let x = zone.x();
    let ni = zone.i_count;
    let mut g = vec![0.0; zone.n_points()];
    if ni < 2 {
        return Ok(g);
    }
    for j in 0..zone.j_count {
        let base = j * ni;
        for i in 0..ni {
            let (lo, hi) = match i {
                0 => (0, 1),
                _ if i == ni - 1 => (ni - 2, ni - 1),
                _ => (i - 1, i + 1),
            };
            let dx = x[base + hi] - x[base + lo];
            g[base + i] = if dx != 0.0 {
                ((u[base + hi] - u[base + lo]) / dx).abs()
            } else {
                0.0
            };
        }
    }
    Ok(g)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// x of the maximal row-median streamwise gradient of `U` over all zones;
/// ties go to the smallest x.
pub fn locate_shock_station(case: &CaseRecord) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for zone in &case.zones {
        let g = row_gradient_magnitude(zone, "U")?;
        let x = zone.x();
        for i in 0..zone.i_count {
            let mut col: Vec<f64> = (0..zone.j_count).map(|j| g[zone.point_index(i, j)]).collect();
            let gm = median(&mut col);
            let xi = (0..zone.j_count).map(|j| x[zone.point_index(i, j)]).sum::<f64>()
                / zone.j_count as f64;
            best = match best {
                Some((bg, bx)) if gm < bg || (gm == bg && xi >= bx) => Some((bg, bx)),
                _ => Some((gm, xi)),
            };
        }
    }
    match best {
        Some((g, x)) if g > GRADIENT_TOL => Ok(x),
        _ => Err(Error::NoGradientSignal),
    }
}

/// Station map `x_s(condition)` fitted to the gradient maxima of the cases.
pub fn calibrate_shock_station(cases: &[CaseRecord], robust: bool) -> Result<ShockCalibration> {
    let points = cases
        .iter()
        .map(|c| {
            Ok(StationPoint {
                condition: c.condition,
                location: locate_shock_station(c)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ShockCalibration::from_points(points, Axis::X, robust)
}

/// Shock-time map `t_shock(nu)` for space-time cases (first zone of each).
pub fn calibrate_shock_time(cases: &[CaseRecord], robust: bool) -> Result<ShockCalibration> {
    let points = cases
        .iter()
        .map(|c| {
            let field = SpaceTimeField::from_zone(&c.zones[0])?;
            Ok(StationPoint {
                condition: c.condition,
                location: burgers::estimate_t_shock(&field)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ShockCalibration::from_points(points, Axis::Y, robust)
}

// ---------------------------------------------------------------------------
// Pointwise features

pub fn signed_distance(coord: f64, condition: f64, calib: &ShockCalibration) -> f64 {
    coord - calib.station(condition)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorForm {
    #[default]
    Logistic,
    /// `½(1 + tanh(κ(x_s − x)))` with `κ = k/2`.
    Tanh,
}

/// Soft pre-shock indicator of the signed distance `d`: near 1 upstream,
/// near 0 downstream, exactly ½ at the station.
pub fn soft_indicator(d: f64, k: f64, form: IndicatorForm) -> f64 {
    match form {
        IndicatorForm::Logistic => sigmoid(-k * d),
        IndicatorForm::Tanh => 0.5 * (1.0 + (-0.5 * k * d).tanh()),
    }
}

/// Gaussian envelopes of `d` at widths `scales · dx`.
pub fn rbf_envelopes(d: f64, dx: f64, scales: [f64; 3]) -> [f64; 3] {
    scales.map(|m| {
        let s = m * dx;
        (-d * d / (2.0 * s * s)).exp()
    })
}

pub const DEFAULT_SCALES: [f64; 3] = [3.0, 7.0, 12.0];

/// Which trunk inputs a model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// `[x, y, d, s, |d|, d², φ₁, φ₂, φ₃]` (+ wall distance).
    #[default]
    ShockAware,
    /// Raw `[x, y]` only.
    Coordinates,
}

/// What the branch net receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BranchInput {
    #[default]
    Condition,
    /// Condition plus the calibrated station.
    ConditionAndStation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureParams {
    pub set: FeatureSet,
    pub branch: BranchInput,
    /// Indicator steepness in units of the normalized shock-axis coordinate.
    pub k: f64,
    pub indicator: IndicatorForm,
    pub sigma_scales: [f64; 3],
    /// Lower clip for the envelopes (0 disables clipping).
    pub envelope_floor: f64,
    pub dx_min: f64,
    /// Append the normalized distance to the nearest wall.
    pub wall_distance: bool,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            set: FeatureSet::ShockAware,
            branch: BranchInput::Condition,
            k: 1.8e3,
            indicator: IndicatorForm::Logistic,
            sigma_scales: DEFAULT_SCALES,
            envelope_floor: 0.0,
            dx_min: DX_MIN_DEFAULT,
            wall_distance: false,
        }
    }
}

impl FeatureParams {
    /// Space-time preset: tanh indicator and envelopes clipped to `[1e-12, 1]`.
    pub fn space_time() -> Self {
        FeatureParams {
            indicator: IndicatorForm::Tanh,
            envelope_floor: 1e-12,
            ..FeatureParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.sigma_scales;
        if !(self.k > 0.0) {
            return Err(Error::InvalidConfig(format!("k must be > 0, got {}", self.k)));
        }
        if !(s[0] > 0.0 && s[0] < s[1] && s[1] < s[2]) {
            return Err(Error::InvalidConfig(format!(
                "sigma scales must be positive and increasing, got {s:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.envelope_floor) || !(self.dx_min > 0.0) {
            return Err(Error::InvalidConfig("bad envelope floor or dx_min".into()));
        }
        Ok(())
    }
}

/// Normalized distance of every point to the nearest wall, taking the first
/// and last J-lines of the zone as the wall polylines.
pub fn wall_distance(zone: &ZoneGrid) -> Vec<f64> {
    let (x, y) = (zone.x(), zone.y());
    let ni = zone.i_count;
    let walls: Vec<usize> = if zone.j_count > 1 {
        vec![0, zone.j_count - 1]
    } else {
        vec![0]
    };
    let seg_dist = |px: f64, py: f64, a: usize, b: usize| {
        let (ax, ay, bx, by) = (x[a], y[a], x[b], y[b]);
        let (ex, ey) = (bx - ax, by - ay);
        let len2 = ex * ex + ey * ey;
        let t = if len2 > 0.0 {
            (((px - ax) * ex + (py - ay) * ey) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        ((px - ax - t * ex).powi(2) + (py - ay - t * ey).powi(2)).sqrt()
    };
    let mut dist: Vec<f64> = (0..zone.n_points())
        .map(|p| {
            let mut best = f64::INFINITY;
            for &j in &walls {
                let row = j * ni;
                if ni == 1 {
                    best = best.min(seg_dist(x[p], y[p], row, row));
                }
                for i in 1..ni {
                    best = best.min(seg_dist(x[p], y[p], row + i - 1, row + i));
                }
            }
            best
        })
        .collect();
    let max = dist.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        dist.iter_mut().for_each(|d| *d /= max);
    }
    dist
}

pub const TRUNK_NAMES: [&str; 10] = [
    "x", "y", "d", "s", "abs_d", "d_sq", "phi_1", "phi_2", "phi_3", "wall_dist",
];

/// Everything needed to turn a zone and a condition into network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub params: FeatureParams,
    pub calibration: ShockCalibration,
    /// Span of the shock-axis coordinate over the training cases; `k` acts
    /// on `d / axis_span`.
    pub axis_span: f64,
}

impl FeaturePipeline {
    /// Measures the shock-axis span over `train` and bundles the parts.
    pub fn fit(params: FeatureParams, calibration: ShockCalibration, train: &[CaseRecord]) -> Result<Self> {
        params.validate()?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for z in train.iter().flat_map(|c| &c.zones) {
            for &v in z.coordinate(calibration.axis) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let axis_span = hi - lo;
        if !(axis_span > 0.0) {
            return Err(Error::DegenerateGrid("shock axis has zero span"));
        }
        Ok(FeaturePipeline {
            params,
            calibration,
            axis_span,
        })
    }

    pub fn trunk_dim(&self) -> usize {
        match self.params.set {
            FeatureSet::Coordinates => 2,
            FeatureSet::ShockAware => 9 + usize::from(self.params.wall_distance),
        }
    }

    pub fn branch_dim(&self) -> usize {
        match self.params.branch {
            BranchInput::Condition => 1,
            BranchInput::ConditionAndStation => 2,
        }
    }

    pub fn trunk_names(&self) -> Vec<&'static str> {
        match self.params.set {
            FeatureSet::Coordinates => TRUNK_NAMES[..2].to_vec(),
            FeatureSet::ShockAware => TRUNK_NAMES[..self.trunk_dim()].to_vec(),
        }
    }

    pub fn branch_row(&self, condition: f64) -> Vec<f64> {
        match self.params.branch {
            BranchInput::Condition => vec![condition],
            BranchInput::ConditionAndStation => vec![condition, self.calibration.station(condition)],
        }
    }

    /// Shock-axis spacing of a zone (the `Δx` of the envelopes and weights).
    pub fn spacing(&self, zone: &ZoneGrid) -> Result<f64> {
        median_spacing(&[zone], self.calibration.axis, self.params.dx_min)
    }

    /// Trunk feature matrix, one row per zone point.
    pub fn trunk_features(&self, zone: &ZoneGrid, condition: f64) -> Result<Array2<f64>> {
        self.trunk_features_shifted(zone, condition, None)
    }

    /// As [`FeaturePipeline::trunk_features`] with the x coordinates replaced
    /// (used for jittered oversampling).
    pub fn trunk_features_shifted(
        &self,
        zone: &ZoneGrid,
        condition: f64,
        x_override: Option<&[f64]>,
    ) -> Result<Array2<f64>> {
        let n = zone.n_points();
        let x = x_override.unwrap_or(zone.x());
        let y = zone.y();
        if x.len() != n {
            return Err(Error::LengthMismatch {
                what: "x override".into(),
                expected: n,
                found: x.len(),
            });
        }
        let dim = self.trunk_dim();
        let mut out = Array2::zeros((n, dim));
        if self.params.set == FeatureSet::Coordinates {
            for p in 0..n {
                out[[p, 0]] = x[p];
                out[[p, 1]] = y[p];
            }
            return Ok(out);
        }
        let dx = self.spacing(zone)?;
        let along = match self.calibration.axis {
            Axis::X => x,
            Axis::Y => y,
        };
        let station = self.calibration.station(condition);
        let wall = self.params.wall_distance.then(|| wall_distance(zone));
        let floor = self.params.envelope_floor;
        for p in 0..n {
            let d = along[p] - station;
            let s = soft_indicator(d / self.axis_span, self.params.k, self.params.indicator);
            let phi = rbf_envelopes(d, dx, self.params.sigma_scales);
            let mut row = out.row_mut(p);
            row[0] = x[p];
            row[1] = y[p];
            row[2] = d;
            row[3] = s;
            row[4] = d.abs();
            row[5] = d * d;
            for m in 0..3 {
                row[6 + m] = if floor > 0.0 { phi[m].clamp(floor, 1.0) } else { phi[m] };
            }
            if let Some(w) = &wall {
                row[9] = w[p];
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Sample weights

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightParams {
    /// Distance-kernel amplitude.
    pub alpha: f64,
    /// Gradient-weight amplitude (`gw_scale`).
    pub beta: f64,
    /// Relative-weight amplitude.
    pub gamma: f64,
    pub use_rel_weight: bool,
    /// Percentile used to normalize gradient magnitudes.
    pub q_clip: f64,
    pub eps_rel: f64,
    /// Width of the distance kernel in units of the grid spacing.
    pub kernel_scale: f64,
    /// Field channel whose gradient and magnitude drive the weights.
    pub channel: String,
}

impl Default for WeightParams {
    fn default() -> Self {
        WeightParams {
            alpha: 2.0,
            beta: 0.8,
            gamma: 0.5,
            use_rel_weight: true,
            q_clip: 95.0,
            eps_rel: 1e-6,
            kernel_scale: 7.0,
            channel: "U".into(),
        }
    }
}

impl WeightParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.beta >= 0.0
            && self.gamma >= 0.0
            && (0.0..=100.0).contains(&self.q_clip)
            && self.eps_rel > 0.0
            && self.kernel_scale > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid weight parameters {self:?}")))
        }
    }
}

/// Linear-interpolation percentile (`q` in percent).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// `W_g = 1 + β·clip(g / q, 0, 1)` with `g = |∂U/∂x|` along rows and `q` the
/// `q_clip` percentile of `g` over the zone.
pub fn gradient_weight_field(zone: &ZoneGrid, channel: &str, beta: f64, q_clip: f64) -> Result<Vec<f64>> {
    let g = row_gradient_magnitude(zone, channel)?;
    let q = percentile(&g, q_clip);
    Ok(g.iter()
        .map(|&gi| {
            let gt = if q > GRADIENT_TOL { (gi / q).clamp(0.0, 1.0) } else { 0.0 };
            1.0 + beta * gt
        })
        .collect())
}

/// `W_d = 1 + α·exp(−d² / (2 (scale·dx)²))`.
pub fn distance_weight(d: f64, alpha: f64, dx: f64, kernel_scale: f64) -> f64 {
    let s = kernel_scale * dx;
    1.0 + alpha * (-d * d / (2.0 * s * s)).exp()
}

pub fn combine_weights(w_d: &[f64], w_g: &[f64], lambda: f64) -> Vec<f64> {
    w_d.iter()
        .zip(w_g)
        .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
        .collect()
}

/// `w_rel = 1 + γ(1 − |U| / max|U|)`, or all ones when disabled.
pub fn relative_weight_field(u: &[f64], gamma: f64, eps_rel: f64, enabled: bool) -> Vec<f64> {
    if !enabled {
        return vec![1.0; u.len()];
    }
    let max = u.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(eps_rel);
    u.iter().map(|v| 1.0 + gamma * (1.0 - v.abs() / max)).collect()
}

/// The three phase-independent weight components of every point of a case.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightComponents {
    pub w_d: Vec<f64>,
    pub w_g: Vec<f64>,
    pub w_rel: Vec<f64>,
}

impl WeightComponents {
    pub fn compute(case: &CaseRecord, pipeline: &FeaturePipeline, params: &WeightParams) -> Result<Self> {
        params.validate()?;
        let n = case.n_points();
        let mut w = WeightComponents {
            w_d: Vec::with_capacity(n),
            w_g: Vec::with_capacity(n),
            w_rel: Vec::with_capacity(n),
        };
        let calib = &pipeline.calibration;
        let station = calib.station(case.condition);
        for zone in &case.zones {
            let dx = pipeline.spacing(zone)?;
            let along = zone.coordinate(calib.axis);
            w.w_d.extend(
                along
                    .iter()
                    .map(|&c| distance_weight(c - station, params.alpha, dx, params.kernel_scale)),
            );
            w.w_g
                .extend(gradient_weight_field(zone, &params.channel, params.beta, params.q_clip)?);
            w.w_rel.extend(relative_weight_field(
                zone.column(&params.channel)?,
                params.gamma,
                params.eps_rel,
                params.use_rel_weight,
            ));
        }
        Ok(w)
    }

    /// Final per-point weight `(λ W_d + (1−λ) W_g) · w_rel`.
    pub fn combined(&self, lambda: f64) -> Vec<f64> {
        combine_weights(&self.w_d, &self.w_g, lambda)
            .into_iter()
            .zip(&self.w_rel)
            .map(|(w, r)| w * r)
            .collect()
    }
}
