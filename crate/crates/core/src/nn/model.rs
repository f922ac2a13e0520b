//! Branch/trunk operator network with Hadamard fusion or dot-product coupling.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::block::{block_backward, block_forward, BlockCache, BlockLayout, BlockSpec};
use super::standardize::Standardizer;
use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `D(b(c) ⊙ g(t))` with an MLP decoder.
    HadamardFusion,
    /// Classical coupling: output `k` is `<branch_k, trunk> + bias_k`.
    DotProduct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub variant: Variant,
    pub branch_blocks: Vec<BlockSpec>,
    pub trunk_blocks: Vec<BlockSpec>,
    /// Empty for the dot-product variant.
    pub decoder_blocks: Vec<BlockSpec>,
    pub out_dim: usize,
    /// Std of Gaussian noise added to standardized trunk inputs while training.
    pub input_noise: f64,
}

fn chain(in_dim: usize, widths: &[usize], dropout: f64) -> Vec<BlockSpec> {
    let mut blocks = Vec::with_capacity(widths.len());
    let mut d = in_dim;
    for &w in widths {
        blocks.push(BlockSpec::hidden(d, w, dropout));
        d = w;
    }
    blocks
}

impl ArchitectureSpec {
    /// Hadamard-fusion network; the fusion width is the last branch/trunk width.
    pub fn fusion(
        branch_in: usize,
        trunk_in: usize,
        stream_widths: &[usize],
        decoder_widths: &[usize],
        out_dim: usize,
        dropout: f64,
        input_noise: f64,
    ) -> Self {
        let fusion = *stream_widths.last().expect("at least one stream block");
        let mut decoder = chain(fusion, decoder_widths, dropout);
        let last = decoder_widths.last().copied().unwrap_or(fusion);
        decoder.push(BlockSpec::linear(last, out_dim));
        ArchitectureSpec {
            variant: Variant::HadamardFusion,
            branch_blocks: chain(branch_in, stream_widths, dropout),
            trunk_blocks: chain(trunk_in, stream_widths, dropout),
            decoder_blocks: decoder,
            out_dim,
            input_noise,
        }
    }

    /// Dot-product network with `basis` trunk functions shared by all outputs.
    pub fn dot_product(
        branch_in: usize,
        trunk_in: usize,
        hidden_widths: &[usize],
        basis: usize,
        out_dim: usize,
        dropout: f64,
        input_noise: f64,
    ) -> Self {
        let last_hidden = hidden_widths.last().copied().unwrap_or(branch_in);
        let mut branch = chain(branch_in, hidden_widths, dropout);
        branch.push(BlockSpec::linear(last_hidden, basis * out_dim));
        let mut trunk_widths = hidden_widths.to_vec();
        trunk_widths.push(basis);
        ArchitectureSpec {
            variant: Variant::DotProduct,
            branch_blocks: branch,
            trunk_blocks: chain(trunk_in, &trunk_widths, dropout),
            decoder_blocks: Vec::new(),
            out_dim,
            input_noise,
        }
    }

    /// Branch 1->[64,96,128], trunk ->[64,96,128], decoder [128,128]->out,
    /// dropout 0.35, input noise 0.03.
    pub fn default_fusion(branch_in: usize, trunk_in: usize, out_dim: usize) -> Self {
        Self::fusion(branch_in, trunk_in, &[64, 96, 128], &[128, 128], out_dim, 0.35, 0.03)
    }

    /// Same streams but with halved fusion/decoder widths and one decoder
    /// block fewer.
    pub fn simpler(&self) -> Self {
        let mut spec = self.clone();
        if spec.variant != Variant::HadamardFusion {
            return spec;
        }
        let fusion = spec.fusion_dim() / 2;
        let dropout = spec.trunk_blocks.last().map_or(0.0, |b| b.dropout_rate);
        for stream in [&mut spec.branch_blocks, &mut spec.trunk_blocks] {
            if let Some(last) = stream.last_mut() {
                last.out_dim = fusion.max(1);
            }
        }
        let hidden: Vec<usize> = spec
            .decoder_blocks
            .iter()
            .filter(|b| b.has_layernorm)
            .map(|b| (b.out_dim / 2).max(1))
            .collect();
        let keep = hidden.len().saturating_sub(1).max(1);
        let mut decoder = chain(fusion.max(1), &hidden[..keep.min(hidden.len())], dropout);
        let last = decoder.last().map_or(fusion.max(1), |b| b.out_dim);
        decoder.push(BlockSpec::linear(last, spec.out_dim));
        spec.decoder_blocks = decoder;
        spec
    }

    pub fn branch_in(&self) -> usize {
        self.branch_blocks.first().map_or(0, |b| b.in_dim)
    }

    pub fn trunk_in(&self) -> usize {
        self.trunk_blocks.first().map_or(0, |b| b.in_dim)
    }

    pub fn fusion_dim(&self) -> usize {
        self.trunk_blocks.last().map_or(0, |b| b.out_dim)
    }

    pub fn has_dropout(&self) -> bool {
        self.all_blocks().any(|b| b.dropout_rate > 0.0)
    }

    fn all_blocks(&self) -> impl Iterator<Item = &BlockSpec> {
        self.branch_blocks
            .iter()
            .chain(&self.trunk_blocks)
            .chain(&self.decoder_blocks)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.branch_blocks.is_empty() || self.trunk_blocks.is_empty() {
            return bad("branch and trunk need at least one block".into());
        }
        if self.out_dim == 0 {
            return bad("out_dim must be positive".into());
        }
        if !(self.input_noise >= 0.0) {
            return bad(format!("input noise must be >= 0, got {}", self.input_noise));
        }
        for b in self.all_blocks() {
            b.validate()?;
        }
        for (name, blocks) in [
            ("branch", &self.branch_blocks),
            ("trunk", &self.trunk_blocks),
            ("decoder", &self.decoder_blocks),
        ] {
            for w in blocks.windows(2) {
                if w[0].out_dim != w[1].in_dim {
                    return bad(format!(
                        "{name}: block output {} feeds input {}",
                        w[0].out_dim, w[1].in_dim
                    ));
                }
            }
        }
        let b_out = self.branch_blocks.last().unwrap().out_dim;
        let t_out = self.fusion_dim();
        match self.variant {
            Variant::HadamardFusion => {
                if b_out != t_out {
                    return bad(format!("branch width {b_out} != trunk width {t_out}"));
                }
                let (Some(first), Some(last)) =
                    (self.decoder_blocks.first(), self.decoder_blocks.last())
                else {
                    return bad("hadamard variant needs a decoder".into());
                };
                if first.in_dim != t_out || last.out_dim != self.out_dim {
                    return bad(format!(
                        "decoder maps {}->{}, expected {}->{}",
                        first.in_dim, last.out_dim, t_out, self.out_dim
                    ));
                }
            }
            Variant::DotProduct => {
                if !self.decoder_blocks.is_empty() {
                    return bad("dot-product variant has no decoder".into());
                }
                if b_out != t_out * self.out_dim {
                    return bad(format!(
                        "branch width {b_out} != basis {t_out} x outputs {}",
                        self.out_dim
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Layout {
    branch: Vec<BlockLayout>,
    trunk: Vec<BlockLayout>,
    decoder: Vec<BlockLayout>,
    out_bias: usize,
    total: usize,
}

impl Layout {
    fn new(spec: &ArchitectureSpec) -> Self {
        let mut pos = 0;
        let mut build = |blocks: &[BlockSpec]| {
            blocks
                .iter()
                .map(|&b| {
                    let (l, end) = BlockLayout::new(b, pos);
                    pos = end;
                    l
                })
                .collect::<Vec<_>>()
        };
        let branch = build(&spec.branch_blocks);
        let trunk = build(&spec.trunk_blocks);
        let decoder = build(&spec.decoder_blocks);
        let out_bias = pos;
        if spec.variant == Variant::DotProduct {
            pos += spec.out_dim;
        }
        Layout {
            branch,
            trunk,
            decoder,
            out_bias,
            total: pos,
        }
    }
}

/// Forward-pass mode.
pub enum Mode<'a> {
    /// Deterministic: no dropout, no input noise.
    Infer,
    /// Dropout masks and trunk input noise drawn from the generator.
    Train(&'a mut SeededRng),
    /// Dropout only (Monte Carlo dropout sampling).
    McDropout(&'a mut SeededRng),
}

/// Activations saved by [`FusionModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    branch: Vec<BlockCache>,
    trunk: Vec<BlockCache>,
    decoder: Vec<BlockCache>,
    branch_out: Array2<f64>,
    trunk_out: Array2<f64>,
    out_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizers {
    pub branch: Standardizer,
    pub trunk: Standardizer,
    pub target: Standardizer,
}

impl Standardizers {
    pub fn identity(spec: &ArchitectureSpec) -> Self {
        Standardizers {
            branch: Standardizer::identity(spec.branch_in()),
            trunk: Standardizer::identity(spec.trunk_in()),
            target: Standardizer::identity(spec.out_dim),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionModel {
    spec: ArchitectureSpec,
    layout: Layout,
    params: Vec<f64>,
    pub standardizers: Standardizers,
    pub seed: u64,
    generation: u64,
}

fn run_blocks(
    layouts: &[BlockLayout],
    params: &[f64],
    mut x: Array2<f64>,
    rng: &mut Option<&mut SeededRng>,
) -> (Array2<f64>, Vec<BlockCache>) {
    let mut caches = Vec::with_capacity(layouts.len());
    for l in layouts {
        let (y, c) = block_forward(l, params, x, rng.as_deref_mut());
        caches.push(c);
        x = y;
    }
    (x, caches)
}

fn back_blocks(
    layouts: &[BlockLayout],
    params: &[f64],
    caches: &[BlockCache],
    mut d: Array2<f64>,
    grads: &mut [f64],
) -> Array2<f64> {
    for (l, c) in layouts.iter().zip(caches).rev() {
        d = block_backward(l, params, c, d, grads);
    }
    d
}

impl FusionModel {
    /// Fresh model with Glorot-uniform weights drawn from the `init` stream of `seed`.
    pub fn new(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        let mut params = vec![0.0; layout.total];
        let mut rng = rng::stream(seed, "init");
        for l in layout.branch.iter().chain(&layout.trunk).chain(&layout.decoder) {
            l.init(&mut params, &mut rng);
        }
        Ok(FusionModel {
            standardizers: Standardizers::identity(&spec),
            spec,
            layout,
            params,
            seed,
            generation: 0,
        })
    }

    /// Rebuilds a model from stored parts (checkpoint loading).
    pub fn from_parts(
        spec: ArchitectureSpec,
        params: Vec<f64>,
        standardizers: Standardizers,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        if params.len() != layout.total {
            return Err(Error::ShapeMismatch(format!(
                "spec needs {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(FusionModel {
            spec,
            layout,
            params,
            standardizers,
            seed,
            generation: 0,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameters; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    pub fn set_params(&mut self, p: &[f64]) {
        self.params_mut().copy_from_slice(p);
    }

    /// Forward pass on standardized inputs; returns standardized outputs.
    pub fn forward(
        &self,
        branch_in: ArrayView2<f64>,
        trunk_in: ArrayView2<f64>,
        mode: Mode<'_>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        let n = branch_in.nrows();
        if branch_in.ncols() != self.spec.branch_in()
            || trunk_in.ncols() != self.spec.trunk_in()
            || trunk_in.nrows() != n
        {
            return Err(Error::ShapeMismatch(format!(
                "inputs {:?} / {:?}, model expects (*, {}) / (*, {})",
                branch_in.dim(),
                trunk_in.dim(),
                self.spec.branch_in(),
                self.spec.trunk_in()
            )));
        }

        let mut trunk_x = trunk_in.to_owned();
        let mut rng: Option<&mut SeededRng> = match mode {
            Mode::Infer => None,
            Mode::Train(r) => {
                if self.spec.input_noise > 0.0 {
                    let sd = self.spec.input_noise;
                    trunk_x.mapv_inplace(|v| v + sd * r.sample::<f64, _>(StandardNormal));
                }
                Some(r)
            }
            Mode::McDropout(r) => Some(r),
        };

        let p = &self.params;
        let (b, branch) = run_blocks(&self.layout.branch, p, branch_in.to_owned(), &mut rng);
        let (t, trunk) = run_blocks(&self.layout.trunk, p, trunk_x, &mut rng);

        let (out, decoder) = match self.spec.variant {
            Variant::HadamardFusion => {
                let fused = &b * &t;
                run_blocks(&self.layout.decoder, p, fused, &mut rng)
            }
            Variant::DotProduct => {
                let basis = t.ncols();
                let mut out = Array2::zeros((n, self.spec.out_dim));
                for k in 0..self.spec.out_dim {
                    let coeff = b.slice(s![.., k * basis..(k + 1) * basis]);
                    let bias = p[self.layout.out_bias + k];
                    let col = (&coeff * &t).sum_axis(Axis(1)) + bias;
                    out.column_mut(k).assign(&col);
                }
                (out, Vec::new())
            }
        };

        Ok((
            out,
            ForwardCache {
                generation: self.generation,
                branch,
                trunk,
                decoder,
                branch_out: b,
                trunk_out: t,
                out_dim: self.spec.out_dim,
            },
        ))
    }

    /// Gradient of `sum(d_out ⊙ output)` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView2<f64>) -> Result<Vec<f64>> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache(format!(
                "cache from parameter generation {}, model is at {}",
                cache.generation, self.generation
            )));
        }
        if d_out.dim() != (cache.branch_out.nrows(), cache.out_dim) {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?}, expected ({}, {})",
                d_out.dim(),
                cache.branch_out.nrows(),
                cache.out_dim
            )));
        }
        let p = &self.params;
        let mut grads = vec![0.0; p.len()];
        let (d_b, d_t) = match self.spec.variant {
            Variant::HadamardFusion => {
                let d_fused =
                    back_blocks(&self.layout.decoder, p, &cache.decoder, d_out.to_owned(), &mut grads);
                (&d_fused * &cache.trunk_out, &d_fused * &cache.branch_out)
            }
            Variant::DotProduct => {
                let basis = cache.trunk_out.ncols();
                let mut d_b = Array2::zeros(cache.branch_out.raw_dim());
                let mut d_t = Array2::zeros(cache.trunk_out.raw_dim());
                for k in 0..self.spec.out_dim {
                    let dk = d_out.column(k).insert_axis(Axis(1));
                    let coeff = cache.branch_out.slice(s![.., k * basis..(k + 1) * basis]);
                    d_b.slice_mut(s![.., k * basis..(k + 1) * basis])
                        .assign(&(&cache.trunk_out * &dk));
                    d_t += &(&coeff * &dk);
                    grads[self.layout.out_bias + k] += d_out.column(k).sum();
                }
                (d_b, d_t)
            }
        };
        back_blocks(&self.layout.branch, p, &cache.branch, d_b, &mut grads);
        back_blocks(&self.layout.trunk, p, &cache.trunk, d_t, &mut grads);
        Ok(grads)
    }

    /// Final trunk embedding (basis functions for the dot-product variant)
    /// for standardized trunk inputs, in inference mode.
    pub fn trunk_embedding(&self, trunk_in: ArrayView2<f64>) -> Result<Array2<f64>> {
        if trunk_in.ncols() != self.spec.trunk_in() {
            return Err(Error::ShapeMismatch(format!(
                "trunk input has {} columns, model expects {}",
                trunk_in.ncols(),
                self.spec.trunk_in()
            )));
        }
        let (t, _) = run_blocks(&self.layout.trunk, &self.params, trunk_in.to_owned(), &mut None);
        Ok(t)
    }

    /// Deterministic prediction in physical units from raw inputs.
    pub fn predict(&self, branch_raw: ArrayView2<f64>, trunk_raw: ArrayView2<f64>) -> Result<Array2<f64>> {
        let b = self.standardizers.branch.transform(branch_raw)?;
        let t = self.standardizers.trunk.transform(trunk_raw)?;
        let (out, _) = self.forward(b.view(), t.view(), Mode::Infer)?;
        self.standardizers.target.inverse(out.view())
    }

    /// Zeroes the last branch block's LayerNorm gain and offset (or weights
    /// and bias when it has no LayerNorm), forcing a zero branch embedding.
    #[doc(hidden)]
    pub fn zero_branch_output(&mut self) {
        let last = *self.layout.branch.last().expect("branch block");
        let spec = last.spec;
        let p = self.params_mut();
        if spec.has_layernorm {
            p[last.gain..last.gain + 2 * spec.out_dim].fill(0.0);
        } else {
            p[last.weight..last.weight + spec.n_params()].fill(0.0);
        }
    }
}

/// Predictive mean and sample standard deviation (physical units) from
/// `n_samples` dropout-active forward passes.
pub fn mc_dropout_predict(
    model: &FusionModel,
    branch_raw: ArrayView2<f64>,
    trunk_raw: ArrayView2<f64>,
    n_samples: usize,
    rng: &mut SeededRng,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if n_samples < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 MC samples, got {n_samples}"
        )));
    }
    if !model.spec().has_dropout() {
        return Err(Error::NoStochasticLayers);
    }
    let st = &model.standardizers;
    let b = st.branch.transform(branch_raw)?;
    let t = st.trunk.transform(trunk_raw)?;
    let shape = (b.nrows(), model.spec().out_dim);
    let mut mean = Array2::<f64>::zeros(shape);
    let mut m2 = Array2::<f64>::zeros(shape);
    for k in 0..n_samples {
        let (out, _) = model.forward(b.view(), t.view(), Mode::McDropout(rng))?;
        let y = st.target.inverse(out.view())?;
        // Welford update
        let kf = (k + 1) as f64;
        let delta = &y - &mean;
        mean.scaled_add(1.0 / kf, &delta);
        let delta2 = &y - &mean;
        m2 += &(&delta * &delta2);
    }
    let sigma = m2.mapv(|v| (v.max(0.0) / (n_samples - 1) as f64).sqrt());
    Ok((mean, sigma))
}
