//! WebAssembly bindings for the browser demo. Every curve is returned as one
//! flat `Float64Array` of equal-length series laid out back to back.

use shockfuse::burgers::{estimate_t_shock, max_abs_gradient, solve_burgers, BurgersConfig, SpaceTimeField};
use shockfuse::features::{distance_weight, rbf_envelopes, soft_indicator, IndicatorForm, DEFAULT_SCALES};
use shockfuse::trainer::huber;
use wasm_bindgen::prelude::*;

fn js(e: shockfuse::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// Solver settings sized for interactive use.
pub fn demo_config(nu: f64, nx: usize, nt: usize) -> BurgersConfig {
    BurgersConfig {
        nu,
        nx,
        nt,
        refine: 4,
        substeps: 2,
        ..BurgersConfig::default()
    }
}

/// A solved space-time field that can be sliced at any time level.
#[wasm_bindgen]
pub struct BurgersDemo {
    field: SpaceTimeField,
}

impl BurgersDemo {
    pub fn solve(nu: f64, nx: usize, nt: usize) -> shockfuse::Result<BurgersDemo> {
        let cfg = demo_config(nu, nx, nt);
        cfg.validate()?;
        Ok(BurgersDemo {
            field: solve_burgers(&cfg)?,
        })
    }

    fn level(&self, t: f64) -> usize {
        let (mut best, mut dist) = (0, f64::INFINITY);
        for (k, &tk) in self.field.t.iter().enumerate() {
            if (tk - t).abs() < dist {
                best = k;
                dist = (tk - t).abs();
            }
        }
        best
    }
}

#[wasm_bindgen]
impl BurgersDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(nu: f64, nx: usize, nt: usize) -> Result<BurgersDemo, JsError> {
        Self::solve(nu, nx, nt).map_err(js)
    }

    pub fn x(&self) -> Vec<f64> {
        self.field.x.clone()
    }

    pub fn t_end(&self) -> f64 {
        *self.field.t.last().unwrap_or(&0.0)
    }

    /// `u(x)` at the stored time level nearest to `t`.
    pub fn row(&self, t: f64) -> Vec<f64> {
        self.field.u.row(self.level(t)).to_vec()
    }

    /// The stored time level nearest to `t`.
    pub fn snapped_time(&self, t: f64) -> f64 {
        self.field.t[self.level(t)]
    }

    /// `max_x |du/dx|` at the time level nearest to `t`.
    pub fn max_gradient(&self, t: f64) -> f64 {
        max_abs_gradient(&self.field.x, &self.row(t))
    }

    /// Time at which the steepest gradient peaks.
    pub fn t_shock(&self) -> Result<f64, JsError> {
        estimate_t_shock(&self.field).map_err(js)
    }
}

/// `[x, s, φ3, φ7, φ12, W_d]`, each of length `n`, over `[lo, hi]` for a
/// shock at `x_s`. The indicator normalizes the distance by the span.
#[wasm_bindgen]
pub fn shock_curves(x_s: f64, k: f64, dx: f64, alpha: f64, kernel_scale: f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let xs = linspace(lo, hi, n);
    let span = (hi - lo).abs().max(f64::MIN_POSITIVE);
    let mut out = vec![0.0; 6 * n];
    for (p, &x) in xs.iter().enumerate() {
        let d = x - x_s;
        let phi = rbf_envelopes(d, dx, DEFAULT_SCALES);
        out[p] = x;
        out[n + p] = soft_indicator(d / span, k, IndicatorForm::Logistic);
        out[2 * n + p] = phi[0];
        out[3 * n + p] = phi[1];
        out[4 * n + p] = phi[2];
        out[5 * n + p] = distance_weight(d, alpha, dx, kernel_scale);
    }
    out
}

/// `[r, huber(r), huber'(r)]`, each of length `n`, over `[-r_max, r_max]`.
#[wasm_bindgen]
pub fn huber_curve(delta: f64, r_max: f64, n: usize) -> Vec<f64> {
    let rs = linspace(-r_max, r_max, n);
    let mut out = vec![0.0; 3 * n];
    for (p, &r) in rs.iter().enumerate() {
        let (v, g) = huber(r, delta);
        out[p] = r;
        out[n + p] = v;
        out[2 * n + p] = g;
    }
    out
}
