use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel affine standardization fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation per column, std floored at
    /// [`STD_FLOOR`].
    pub fn fit(rows: ArrayView2<f64>) -> Result<Self> {
        if rows.nrows() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "standardizer needs at least two rows, got {}",
                rows.nrows()
            )));
        }
        let n = rows.nrows() as f64;
        let mean: Array1<f64> = rows.sum_axis(Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(rows.ncols());
        for row in rows.outer_iter() {
            for ((v, &x), &m) in var.iter_mut().zip(row.iter()).zip(mean.iter()) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.mapv(|v| (v / n).sqrt().max(STD_FLOOR));
        Ok(Standardizer {
            mean: mean.to_vec(),
            std: std.to_vec(),
        })
    }

    pub fn identity(channels: usize) -> Self {
        Standardizer {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, m: &ArrayView2<f64>) -> Result<()> {
        if m.ncols() != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "standardizer has {} channels, input has {}",
                self.channels(),
                m.ncols()
            )));
        }
        Ok(())
    }

    pub fn transform(&self, m: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&m)?;
        let mut out = m.to_owned();
        for mut row in out.outer_iter_mut() {
            for ((v, &mu), &s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - mu) / s;
            }
        }
        Ok(out)
    }

    pub fn inverse(&self, m: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&m)?;
        let mut out = m.to_owned();
        for mut row in out.outer_iter_mut() {
            for ((v, &mu), &s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + mu;
            }
        }
        Ok(out)
    }
}
