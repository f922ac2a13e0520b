//! Small one-dimensional regressions used by the calibration steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `y ~ a0 + a1 x` with its root-mean-square residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub a0: f64,
    pub a1: f64,
    pub residual: f64,
}

impl AffineFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.a0 + self.a1 * x
    }
}

fn weighted_affine(xs: &[f64], ys: &[f64], ws: &[f64]) -> Result<(f64, f64)> {
    let sw: f64 = ws.iter().sum();
    let mx = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = ys.iter().zip(ws).map(|(y, w)| y * w).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((&x, &y), &w) in xs.iter().zip(ys).zip(ws) {
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
    }
    let scale = xs.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    if sxx <= 1e-24 * scale * scale * sw {
        return Err(Error::RankDeficient(
            "all abscissae are identical".to_string(),
        ));
    }
    let a1 = sxy / sxx;
    Ok((my - a1 * mx, a1))
}

fn rms_residual(xs: &[f64], ys: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let ss: f64 = xs.iter().zip(ys).map(|(&x, &y)| (y - f(x)).powi(2)).sum();
    (ss / xs.len() as f64).sqrt()
}

/// Ordinary least-squares line.
pub fn fit_affine(xs: &[f64], ys: &[f64]) -> Result<AffineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::RankDeficient(format!(
            "need at least two paired points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let ws = vec![1.0; xs.len()];
    let (a0, a1) = weighted_affine(xs, ys, &ws)?;
    let residual = rms_residual(xs, ys, |x| a0 + a1 * x);
    Ok(AffineFit { a0, a1, residual })
}

/// Huber-loss line fitted by iteratively reweighted least squares.
///
/// `epsilon` is the Huber threshold in units of the residual scale, which is
/// re-estimated each iteration from the median absolute deviation.
pub fn fit_affine_huber(xs: &[f64], ys: &[f64], epsilon: f64) -> Result<AffineFit> {
    let mut fit = fit_affine(xs, ys)?;
    let mut ws = vec![1.0; xs.len()];
    for _ in 0..100 {
        let res: Vec<f64> = xs.iter().zip(ys).map(|(&x, &y)| y - fit.eval(x)).collect();
        let mut abs: Vec<f64> = res.iter().map(|r| r.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let mad = abs[abs.len() / 2] / 0.6745;
        let scale = mad.max(1e-12 * (1.0 + fit.a0.abs()));
        let cut = epsilon * scale;
        for (w, r) in ws.iter_mut().zip(&res) {
            *w = if r.abs() <= cut { 1.0 } else { cut / r.abs() };
        }
        let (a0, a1) = weighted_affine(xs, ys, &ws)?;
        let done = (a0 - fit.a0).abs() <= 1e-14 * (1.0 + a0.abs())
            && (a1 - fit.a1).abs() <= 1e-14 * (1.0 + a1.abs());
        fit.a0 = a0;
        fit.a1 = a1;
        if done {
            break;
        }
    }
    fit.residual = rms_residual(xs, ys, |x| fit.eval(x));
    Ok(fit)
}

/// Pool-adjacent-violators regression on points sorted by `xs`.
///
/// Returns fitted values in the original order. `increasing = false` fits a
/// nonincreasing sequence.
pub fn isotonic(xs: &[f64], ys: &[f64], increasing: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let sign = if increasing { 1.0 } else { -1.0 };
    // blocks of (mean, weight, count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for &k in &order {
        blocks.push((sign * ys[k], 1.0, 1));
        while blocks.len() > 1 {
            let n = blocks.len();
            if blocks[n - 2].0 <= blocks[n - 1].0 {
                break;
            }
            let (m2, w2, c2) = blocks.pop().unwrap();
            let (m1, w1, c1) = blocks.pop().unwrap();
            blocks.push(((m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, c1 + c2));
        }
    }
    let mut fitted = vec![0.0; xs.len()];
    let mut pos = 0;
    for (m, _, c) in blocks {
        for &k in &order[pos..pos + c] {
            fitted[k] = sign * m;
        }
        pos += c;
    }
    fitted
}
