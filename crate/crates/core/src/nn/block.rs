//! Dense -> LayerNorm -> activation -> Dropout, with exact reverse mode.
//!
//! Parameters live in one flat `f64` buffer owned by the model; a block only
//! knows its offsets into that buffer.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance floor inside LayerNorm.
pub const LN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Swish,
    Identity,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub dropout_rate: f64,
    pub has_layernorm: bool,
    pub activation: Activation,
}

impl BlockSpec {
    /// Dense + LayerNorm + Swish + Dropout.
    pub fn hidden(in_dim: usize, out_dim: usize, dropout_rate: f64) -> Self {
        BlockSpec {
            in_dim,
            out_dim,
            dropout_rate,
            has_layernorm: true,
            activation: Activation::Swish,
        }
    }

    /// Plain affine map.
    pub fn linear(in_dim: usize, out_dim: usize) -> Self {
        BlockSpec {
            in_dim,
            out_dim,
            dropout_rate: 0.0,
            has_layernorm: false,
            activation: Activation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "block dims must be positive, got {}->{}",
                self.in_dim, self.out_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        let ln = if self.has_layernorm { 2 * self.out_dim } else { 0 };
        self.in_dim * self.out_dim + self.out_dim + ln
    }
}

/// Offsets of one block's tensors in the flat parameter buffer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockLayout {
    pub spec: BlockSpec,
    pub weight: usize,
    pub bias: usize,
    pub gain: usize,
    pub offset: usize,
}

impl BlockLayout {
    pub fn new(spec: BlockSpec, start: usize) -> (Self, usize) {
        let weight = start;
        let bias = weight + spec.in_dim * spec.out_dim;
        let gain = bias + spec.out_dim;
        let offset = gain + spec.out_dim;
        let end = start + spec.n_params();
        (
            BlockLayout {
                spec,
                weight,
                bias,
                gain,
                offset,
            },
            end,
        )
    }

    fn w<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        let n = self.spec.in_dim * self.spec.out_dim;
        ArrayView2::from_shape((self.spec.in_dim, self.spec.out_dim), &p[self.weight..self.weight + n])
            .expect("weight shape")
    }

    fn w_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        let n = self.spec.in_dim * self.spec.out_dim;
        ArrayViewMut2::from_shape(
            (self.spec.in_dim, self.spec.out_dim),
            &mut p[self.weight..self.weight + n],
        )
        .expect("weight shape")
    }

    fn vec<'a>(&self, p: &'a [f64], start: usize) -> ArrayView1<'a, f64> {
        ArrayView1::from(&p[start..start + self.spec.out_dim])
    }

    fn vec_mut<'a>(&self, p: &'a mut [f64], start: usize) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(&mut p[start..start + self.spec.out_dim])
    }

    /// Glorot-uniform weights, zero bias, unit gain, zero offset.
    pub fn init<R: Rng>(&self, p: &mut [f64], rng: &mut R) {
        let limit = (6.0 / (self.spec.in_dim + self.spec.out_dim) as f64).sqrt();
        for w in self.w_mut(p).iter_mut() {
            *w = rng.gen_range(-limit..limit);
        }
        self.vec_mut(p, self.bias).fill(0.0);
        if self.spec.has_layernorm {
            self.vec_mut(p, self.gain).fill(1.0);
            self.vec_mut(p, self.offset).fill(0.0);
        }
    }
}

/// Saved activations of one block.
#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    input: Array2<f64>,
    /// Normalized pre-activations (LayerNorm `xhat`), when LayerNorm is on.
    xhat: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
    /// Input to the activation.
    pre_act: Array2<f64>,
    /// Inverted-dropout multipliers (0 or 1/(1-p)).
    mask: Option<Array2<f64>>,
}

/// Row-wise LayerNorm without gain/offset; returns `(xhat, 1/sqrt(var+eps))`.
pub fn layer_norm_rows(z: &ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let width = z.ncols() as f64;
    let mut xhat = z.to_owned();
    let mut inv_std = Array1::zeros(z.nrows());
    for (mut row, is) in xhat.outer_iter_mut().zip(inv_std.iter_mut()) {
        let mean = row.sum() / width;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / width;
        let s = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * s);
        *is = s;
    }
    (xhat, inv_std)
}

pub(crate) fn block_forward<R: Rng>(
    layout: &BlockLayout,
    params: &[f64],
    input: Array2<f64>,
    dropout_rng: Option<&mut R>,
) -> (Array2<f64>, BlockCache) {
    let spec = layout.spec;
    let mut z = Array2::zeros((input.nrows(), spec.out_dim));
    general_mat_mul(1.0, &input, &layout.w(params), 0.0, &mut z);
    z += &layout.vec(params, layout.bias);

    let (pre_act, xhat, inv_std) = if spec.has_layernorm {
        let (xhat, inv_std) = layer_norm_rows(&z.view());
        let gain = layout.vec(params, layout.gain);
        let offset = layout.vec(params, layout.offset);
        let y = &xhat * &gain + &offset;
        (y, Some(xhat), Some(inv_std))
    } else {
        (z, None, None)
    };

    let mut out = match spec.activation {
        Activation::Swish => pre_act.mapv(swish),
        Activation::Identity => pre_act.clone(),
    };

    let mask = match dropout_rng {
        Some(rng) if spec.dropout_rate > 0.0 => {
            let keep = 1.0 - spec.dropout_rate;
            let scale = 1.0 / keep;
            let mask = Array2::from_shape_simple_fn(out.raw_dim(), || {
                if rng.gen::<f64>() < keep {
                    scale
                } else {
                    0.0
                }
            });
            out *= &mask;
            Some(mask)
        }
        _ => None,
    };

    (
        out,
        BlockCache {
            input,
            xhat,
            inv_std,
            pre_act,
            mask,
        },
    )
}

/// Accumulates parameter gradients into `grads` and returns the input gradient.
pub(crate) fn block_backward(
    layout: &BlockLayout,
    params: &[f64],
    cache: &BlockCache,
    mut d_out: Array2<f64>,
    grads: &mut [f64],
) -> Array2<f64> {
    let spec = layout.spec;
    if let Some(mask) = &cache.mask {
        d_out *= mask;
    }
    if spec.activation == Activation::Swish {
        Zip::from(&mut d_out)
            .and(&cache.pre_act)
            .for_each(|d, &y| *d *= swish_grad(y));
    }

    let d_z = if spec.has_layernorm {
        let xhat = cache.xhat.as_ref().expect("layernorm cache");
        let inv_std = cache.inv_std.as_ref().expect("layernorm cache");
        layout
            .vec_mut(grads, layout.gain)
            .scaled_add(1.0, &(&d_out * xhat).sum_axis(Axis(0)));
        layout
            .vec_mut(grads, layout.offset)
            .scaled_add(1.0, &d_out.sum_axis(Axis(0)));
        let gain = layout.vec(params, layout.gain);
        let mut d_xhat = d_out * &gain;
        let width = spec.out_dim as f64;
        for ((mut dx_row, xh_row), &s) in d_xhat
            .outer_iter_mut()
            .zip(xhat.outer_iter())
            .zip(inv_std.iter())
        {
            let mean_d = dx_row.sum() / width;
            let mean_dx = dx_row.iter().zip(xh_row.iter()).map(|(a, b)| a * b).sum::<f64>() / width;
            Zip::from(&mut dx_row)
                .and(&xh_row)
                .for_each(|d, &xh| *d = s * (*d - mean_d - xh * mean_dx));
        }
        d_xhat
    } else {
        d_out
    };

    general_mat_mul(1.0, &cache.input.t(), &d_z, 1.0, &mut layout.w_mut(grads));
    layout
        .vec_mut(grads, layout.bias)
        .scaled_add(1.0, &d_z.sum_axis(Axis(0)));
    let mut d_in = Array2::zeros((d_z.nrows(), spec.in_dim));
    general_mat_mul(1.0, &d_z, &layout.w(params).t(), 0.0, &mut d_in);
    d_in
}
