use ndarray::Array2;
use rand::{Rng, SeedableRng};
use shockfuse::nn::{ArchitectureSpec, FusionModel, Mode};
use shockfuse::rng::SeededRng;

/// Largest relative deviation between the analytic gradient and central
/// differences of `sum(R ⊙ f(θ))`, with dropout masks and input noise replayed.
pub fn max_fd_error(spec: ArchitectureSpec, seed: u64) -> f64 {
    let mut model = FusionModel::new(spec.clone(), seed).unwrap();
    let mut data = SeededRng::seed_from_u64(seed ^ 0xfeed);
    let n = 4;
    let b = Array2::from_shape_simple_fn((n, spec.branch_in()), || data.gen_range(-1.0..1.0));
    let t = Array2::from_shape_simple_fn((n, spec.trunk_in()), || data.gen_range(-1.0..1.0));
    let r = Array2::from_shape_simple_fn((n, spec.out_dim), || data.gen_range(-1.0..1.0));
    // perturb LayerNorm gains/offsets away from their trivial init
    let theta0: Vec<f64> = model
        .params()
        .iter()
        .map(|p| p + 0.1 * data.gen_range(-1.0..1.0))
        .collect();
    model.set_params(&theta0);

    let objective = |m: &FusionModel| {
        let mut rng = SeededRng::seed_from_u64(77);
        let (out, _) = m.forward(b.view(), t.view(), Mode::Train(&mut rng)).unwrap();
        (&out * &r).sum()
    };
    let mut rng = SeededRng::seed_from_u64(77);
    let (_, cache) = model.forward(b.view(), t.view(), Mode::Train(&mut rng)).unwrap();
    let grads = model.backward(&cache, r.view()).unwrap();

    let h = 1e-6;
    let mut worst = 0.0f64;
    for k in 0..theta0.len() {
        let mut p = theta0.clone();
        p[k] += h;
        model.set_params(&p);
        let up = objective(&model);
        p[k] -= 2.0 * h;
        model.set_params(&p);
        let down = objective(&model);
        let fd = (up - down) / (2.0 * h);
        let a = grads[k];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

pub fn with_dropout(mut spec: ArchitectureSpec, rate: f64) -> ArchitectureSpec {
    for b in spec
        .branch_blocks
        .iter_mut()
        .chain(spec.trunk_blocks.iter_mut())
        .chain(spec.decoder_blocks.iter_mut())
    {
        if b.has_layernorm {
            b.dropout_rate = rate;
        }
    }
    spec
}
