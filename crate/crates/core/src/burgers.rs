//! Viscous Burgers reference data.
//!
//! `u_t + (u^2/2)_x = nu u_xx` on `[x_lo, x_hi]` with `u(x, 0) = -sin(pi x)` and
//! homogeneous Dirichlet boundaries. Time integration is trapezoidal
//! (Crank–Nicolson) for both advection and diffusion with second-order
//! central differences; each step is solved by Newton iteration with a
//! tridiagonal Jacobian. The solve runs on a grid refined by `refine` in
//! space and `substeps` in time relative to the output grid, and the output
//! grid is a strict subset of the computational one.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_io::{
    self, Column, ConditionKind, Manifest, ManifestEntry, Split, ZoneGrid, BURGERS_COLUMNS,
};
use crate::fit::{self, AffineFit};

/// `0.01 / pi`, the customary reference viscosity for this problem.
pub const NU_REF: f64 = 0.01 / PI;

/// Training viscosities as multiples of [`NU_REF`].
pub const TRAIN_NU_FACTORS: [f64; 5] = [0.5, 0.75, 1.0, 1.5, 2.0];
/// Held-out viscosity inside the training range.
pub const INTERP_NU_FACTOR: f64 = 1.25;
/// Held-out viscosity below the training range.
pub const EXTRAP_NU_FACTOR: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    NegSinPiX,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    DirichletZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BurgersConfig {
    pub nu: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    /// Output grid points in space.
    pub nx: usize,
    pub t_end: f64,
    /// Output time levels, including `t = 0` and `t = t_end`.
    pub nt: usize,
    pub ic: InitialCondition,
    pub bc: BoundaryCondition,
    /// Computational cells per output cell.
    pub refine: usize,
    /// Computational time steps per output interval.
    pub substeps: usize,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        BurgersConfig {
            nu: NU_REF,
            x_lo: -1.0,
            x_hi: 1.0,
            nx: 256,
            t_end: 1.0,
            nt: 400,
            ic: InitialCondition::NegSinPiX,
            bc: BoundaryCondition::DirichletZero,
            refine: 16,
            substeps: 4,
        }
    }
}

impl BurgersConfig {
    pub fn with_nu(nu: f64) -> Self {
        BurgersConfig {
            nu,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return bad(format!("nu must be positive, got {}", self.nu));
        }
        if self.nx < 3 {
            return bad(format!("nx must be at least 3, got {}", self.nx));
        }
        if self.nt < 2 {
            return bad(format!("nt must be at least 2, got {}", self.nt));
        }
        if !(self.x_lo < self.x_hi) {
            return bad(format!("empty domain [{}, {}]", self.x_lo, self.x_hi));
        }
        if !(self.t_end > 0.0) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if self.refine == 0 || self.substeps == 0 {
            return bad("refine and substeps must be at least 1".into());
        }
        Ok(())
    }

    pub fn x_grid(&self) -> Vec<f64> {
        linspace(self.x_lo, self.x_hi, self.nx)
    }

    pub fn t_grid(&self) -> Vec<f64> {
        linspace(0.0, self.t_end, self.nt)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|k| if k == n - 1 { hi } else { lo + h * k as f64 })
        .collect()
}

/// Solution sampled on the output grid; `u[[k, i]]` is time `t[k]`, point `x[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    pub u: Array2<f64>,
}

impl SpaceTimeField {
    pub fn validate(&self) -> Result<()> {
        if self.u.dim() != (self.t.len(), self.x.len()) {
            return Err(Error::ShapeMismatch(format!(
                "field is {:?}, grid is {}x{}",
                self.u.dim(),
                self.t.len(),
                self.x.len()
            )));
        }
        if self.x.len() < 2 || self.t.is_empty() {
            return Err(Error::ShapeMismatch("field grid too small".into()));
        }
        Ok(())
    }

    /// Inverse of [`SpaceTimeField::to_zone`]: reads `X`, `T`, `U` from a
    /// zone whose I index runs over space and J over time.
    pub fn from_zone(zone: &ZoneGrid) -> Result<Self> {
        let (nx, nt) = (zone.i_count, zone.j_count);
        let xs = zone.column("X")?;
        let ts = zone.column("T")?;
        let us = zone.column("U")?;
        let field = SpaceTimeField {
            x: xs[..nx].to_vec(),
            t: (0..nt).map(|j| ts[j * nx]).collect(),
            u: Array2::from_shape_vec((nt, nx), us.to_vec())
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?,
        };
        field.validate()?;
        Ok(field)
    }

    /// Zone with columns `[X, T, U]`, `x` varying fastest.
    pub fn to_zone(&self) -> ZoneGrid {
        let (nt, nx) = self.u.dim();
        let mut xs = Vec::with_capacity(nx * nt);
        let mut ts = Vec::with_capacity(nx * nt);
        for &t in &self.t {
            xs.extend_from_slice(&self.x);
            ts.extend(std::iter::repeat(t).take(nx));
        }
        let us: Vec<f64> = self.u.iter().copied().collect();
        let columns = [xs, ts, us]
            .into_iter()
            .zip(BURGERS_COLUMNS)
            .map(|(values, name)| Column {
                name: name.to_string(),
                values,
            })
            .collect();
        ZoneGrid::new(nx, nt, columns).expect("consistent burgers zone")
    }
}

fn initial_value(ic: InitialCondition, x: f64) -> f64 {
    match ic {
        InitialCondition::NegSinPiX => -(PI * x).sin(),
    }
}

/// Solves `a[i] x[i-1] + b[i] x[i] + c[i] x[i+1] = d[i]` in place into `d`.
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64], scratch: &mut [f64]) {
    let n = d.len();
    scratch[0] = c[0] / b[0];
    d[0] /= b[0];
    for i in 1..n {
        let m = b[i] - a[i] * scratch[i - 1];
        scratch[i] = c[i] / m;
        d[i] = (d[i] - a[i] * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= scratch[i] * d[i + 1];
    }
}

struct Stepper {
    inv_dt: f64,
    adv: f64,
    diff: f64,
    explicit: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    rhs: Vec<f64>,
    scratch: Vec<f64>,
}

impl Stepper {
    fn new(n_interior: usize, dx: f64, dt: f64, nu: f64) -> Self {
        Stepper {
            inv_dt: 1.0 / dt,
            adv: 1.0 / (4.0 * dx),
            diff: nu / (dx * dx),
            explicit: vec![0.0; n_interior],
            a: vec![0.0; n_interior],
            b: vec![0.0; n_interior],
            c: vec![0.0; n_interior],
            rhs: vec![0.0; n_interior],
            scratch: vec![0.0; n_interior],
        }
    }

    /// Half of the spatial operator `-(u^2/2)_x + nu u_xx` at interior node `i`.
    #[inline]
    fn half_operator(&self, u: &[f64], i: usize) -> f64 {
        let (l, m, r) = (u[i - 1], u[i], u[i + 1]);
        0.5 * (-self.adv * (r * r - l * l) + self.diff * (r - 2.0 * m + l))
    }

    /// Advances `u` (full grid incl. boundary zeros) by one step.
    fn step(&mut self, u: &mut [f64]) -> bool {
        let n = u.len();
        for i in 1..n - 1 {
            self.explicit[i - 1] = u[i] * self.inv_dt + self.half_operator(u, i);
        }
        for _ in 0..30 {
            let mut max_update = 0.0f64;
            for i in 1..n - 1 {
                let k = i - 1;
                // residual F = u/dt - half_op(u) - explicit
                self.rhs[k] = -(u[i] * self.inv_dt - self.half_operator(u, i) - self.explicit[k]);
                self.b[k] = self.inv_dt + self.diff;
                self.a[k] = -self.adv * u[i - 1] - 0.5 * self.diff;
                self.c[k] = self.adv * u[i + 1] - 0.5 * self.diff;
            }
            self.a[0] = 0.0;
            self.c[n - 3] = 0.0;
            thomas(&self.a, &self.b, &self.c, &mut self.rhs, &mut self.scratch);
            for i in 1..n - 1 {
                let du = self.rhs[i - 1];
                u[i] += du;
                max_update = max_update.max(du.abs());
            }
            if !max_update.is_finite() {
                return false;
            }
            if max_update < 1e-13 {
                break;
            }
        }
        true
    }
}

/// Reference solution on the configured output grid.
pub fn solve_burgers(cfg: &BurgersConfig) -> Result<SpaceTimeField> {
    cfg.validate()?;
    let x = cfg.x_grid();
    let t = cfg.t_grid();
    let n_fine = (cfg.nx - 1) * cfg.refine + 1;
    let fine_x = linspace(cfg.x_lo, cfg.x_hi, n_fine);
    let dx = (cfg.x_hi - cfg.x_lo) / (n_fine - 1) as f64;
    let dt = cfg.t_end / ((cfg.nt - 1) * cfg.substeps) as f64;

    let mut u: Vec<f64> = fine_x.iter().map(|&xv| initial_value(cfg.ic, xv)).collect();
    match cfg.bc {
        BoundaryCondition::DirichletZero => {
            u[0] = 0.0;
            u[n_fine - 1] = 0.0;
        }
    }

    let mut out = Array2::zeros((cfg.nt, cfg.nx));
    for (i, &xv) in x.iter().enumerate() {
        out[[0, i]] = initial_value(cfg.ic, xv);
    }
    out[[0, 0]] = 0.0;
    out[[0, cfg.nx - 1]] = 0.0;

    let mut stepper = Stepper::new(n_fine - 2, dx, dt, cfg.nu);
    let mut step_index = 0;
    for k in 1..cfg.nt {
        for _ in 0..cfg.substeps {
            step_index += 1;
            if !stepper.step(&mut u) || u.iter().any(|v| !v.is_finite()) {
                return Err(Error::UnstableStep { step: step_index });
            }
        }
        for i in 0..cfg.nx {
            out[[k, i]] = u[i * cfg.refine];
        }
    }
    Ok(SpaceTimeField { x, t, u: out })
}

/// Largest `|du/dx|` along one time row; central differences inside,
/// one-sided at the two ends.
pub fn max_abs_gradient(x: &[f64], row: &[f64]) -> f64 {
    let n = row.len();
    let mut best = ((row[1] - row[0]) / (x[1] - x[0])).abs();
    best = best.max(((row[n - 1] - row[n - 2]) / (x[n - 1] - x[n - 2])).abs());
    for i in 1..n - 1 {
        let g = ((row[i + 1] - row[i - 1]) / (x[i + 1] - x[i - 1])).abs();
        if g > best {
            best = g;
        }
    }
    best
}

/// Time at which `max_x |du/dx|` peaks; ties go to the earliest time.
pub fn estimate_t_shock(field: &SpaceTimeField) -> Result<f64> {
    field.validate()?;
    let mut best = f64::NEG_INFINITY;
    let mut t_best = field.t[0];
    for (k, row) in field.u.outer_iter().enumerate() {
        let row = row.to_vec();
        let g = max_abs_gradient(&field.x, &row);
        if g > best {
            best = g;
            t_best = field.t[k];
        }
    }
    Ok(t_best)
}

/// Affine map from viscosity to shock-formation time, plus an isotonic refit
/// reported as a diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockTimeCalibration {
    pub a0: f64,
    pub a1: f64,
    /// RMS residual of the affine fit.
    pub residual: f64,
    /// RMS residual of the isotonic refit (monotone in the direction of `a1`).
    pub isotonic_residual: f64,
    /// `(nu, t_shock)` pairs used in the fit.
    pub points: Vec<(f64, f64)>,
}

impl ShockTimeCalibration {
    pub fn from_points(points: Vec<(f64, f64)>) -> Result<Self> {
        let nus: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ts: Vec<f64> = points.iter().map(|p| p.1).collect();
        let AffineFit { a0, a1, residual } = fit::fit_affine(&nus, &ts)?;
        let iso = fit::isotonic(&nus, &ts, a1 >= 0.0);
        let ss: f64 = iso.iter().zip(&ts).map(|(f, t)| (f - t).powi(2)).sum();
        Ok(ShockTimeCalibration {
            a0,
            a1,
            residual,
            isotonic_residual: (ss / ts.len() as f64).sqrt(),
            points,
        })
    }

    pub fn t_shock(&self, nu: f64) -> f64 {
        self.a0 + self.a1 * nu
    }

    pub fn as_affine(&self) -> AffineFit {
        AffineFit {
            a0: self.a0,
            a1: self.a1,
            residual: self.residual,
        }
    }
}

pub fn calibrate_t_shock(solutions: &[(f64, SpaceTimeField)]) -> Result<ShockTimeCalibration> {
    let points = solutions
        .iter()
        .map(|(nu, f)| Ok((*nu, estimate_t_shock(f)?)))
        .collect::<Result<Vec<_>>>()?;
    ShockTimeCalibration::from_points(points)
}

/// One dataset member to generate.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetCase {
    pub file_name: String,
    pub nu: f64,
    pub split: Split,
}

/// Default member list: five training viscosities plus the interpolation and
/// extrapolation test viscosities.
pub fn default_dataset_cases() -> Vec<DatasetCase> {
    dataset_cases(NU_REF)
}

/// The default factor set applied to another reference viscosity.
pub fn dataset_cases(nu_ref: f64) -> Vec<DatasetCase> {
    let mut cases: Vec<DatasetCase> = TRAIN_NU_FACTORS
        .iter()
        .enumerate()
        .map(|(k, f)| DatasetCase {
            file_name: format!("burgers_train_{k:02}.dat"),
            nu: f * nu_ref,
            split: Split::Train,
        })
        .collect();
    cases.push(DatasetCase {
        file_name: "burgers_test_interp.dat".into(),
        nu: INTERP_NU_FACTOR * nu_ref,
        split: Split::Test,
    });
    cases.push(DatasetCase {
        file_name: "burgers_test_extrap.dat".into(),
        nu: EXTRAP_NU_FACTOR * nu_ref,
        split: Split::Test,
    });
    cases
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes one Tecplot file per case plus `manifest.json` into `out_dir`.
/// Returns the written data file paths in case order.
pub fn generate_burgers_dataset(
    cases: &[DatasetCase],
    cfg: &BurgersConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if cases.is_empty() {
        return Err(Error::InvalidConfig("empty viscosity list".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = Manifest::default();
    let mut paths = Vec::with_capacity(cases.len());
    for case in cases {
        let field = solve_burgers(&BurgersConfig {
            nu: case.nu,
            ..cfg.clone()
        })?;
        let mut zone = field.to_zone();
        zone.title = Some("space-time".into());
        let title = format!("burgers nu={}", case.nu);
        let text = field_io::write_tecplot(Some(&title), &[zone]);
        let path = out_dir.join(&case.file_name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        manifest.entries.insert(
            case.file_name.clone(),
            ManifestEntry {
                condition: case.nu,
                condition_kind: ConditionKind::Viscosity,
                split: case.split,
            },
        );
        paths.push(path);
    }
    let mpath = out_dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest.to_json()).map_err(|e| Error::io(&mpath, e))?;
    Ok(paths)
}
