mod common;

use common::gradcheck::{max_fd_error, with_dropout};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use shockfuse::nn::{ArchitectureSpec, BlockSpec, FusionModel, Mode, Variant};
use shockfuse::rng::SeededRng;

#[test]
fn hadamard_gradients_match_finite_differences() {
    let spec = ArchitectureSpec::fusion(2, 5, &[8, 8], &[8], 2, 0.3, 0.05);
    assert_eq!(spec.variant, Variant::HadamardFusion);
    let err = max_fd_error(spec, 1);
    assert!(err < 1e-4, "max relative error {err:e}");
}

#[test]
fn dot_product_gradients_match_finite_differences() {
    let spec = with_dropout(ArchitectureSpec::dot_product(1, 2, &[8, 8], 8, 2, 0.0, 0.0), 0.25);
    let err = max_fd_error(spec, 2);
    assert!(err < 1e-4, "max relative error {err:e}");
}

#[test]
fn every_block_kind_passes_gradient_check() {
    use shockfuse::nn::Activation;
    for ln in [false, true] {
        for act in [Activation::Swish, Activation::Identity] {
            for rate in [0.0, 0.4] {
                let mk = |i, o| BlockSpec {
                    in_dim: i,
                    out_dim: o,
                    dropout_rate: rate,
                    has_layernorm: ln,
                    activation: act,
                };
                let spec = ArchitectureSpec {
                    variant: Variant::HadamardFusion,
                    branch_blocks: vec![mk(1, 8)],
                    trunk_blocks: vec![mk(3, 8)],
                    decoder_blocks: vec![mk(8, 8), BlockSpec::linear(8, 1)],
                    out_dim: 1,
                    input_noise: 0.0,
                };
                let err = max_fd_error(spec, 3);
                assert!(err < 1e-4, "ln={ln} act={act:?} rate={rate}: {err:e}");
            }
        }
    }
}

#[test]
fn duplicated_sample_doubles_its_gradient() {
    let model = FusionModel::new(ArchitectureSpec::fusion(1, 3, &[8], &[8], 2, 0.0, 0.0), 4).unwrap();
    let b1 = Array2::from_elem((1, 1), 0.3);
    let t1 = Array2::from_shape_vec((1, 3), vec![0.1, -0.2, 0.7]).unwrap();
    let grad = |b: &Array2<f64>, t: &Array2<f64>| {
        let (out, cache) = model.forward(b.view(), t.view(), Mode::Infer).unwrap();
        model.backward(&cache, Array2::ones(out.raw_dim()).view()).unwrap()
    };
    let g1 = grad(&b1, &t1);
    let b2 = ndarray::concatenate![ndarray::Axis(0), b1, b1];
    let t2 = ndarray::concatenate![ndarray::Axis(0), t1, t1];
    let g2 = grad(&b2, &t2);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn zero_branch_embedding_gives_constant_decoder_output() {
    let mut model = FusionModel::new(ArchitectureSpec::fusion(1, 4, &[8, 8], &[8], 2, 0.0, 0.0), 5).unwrap();
    model.zero_branch_output();
    let mut rng = SeededRng::seed_from_u64(0);
    let b = Array2::from_shape_simple_fn((6, 1), || rng.gen_range(-1.0..1.0));
    let t = Array2::from_shape_simple_fn((6, 4), || rng.gen_range(-3.0..3.0));
    let (out, _) = model.forward(b.view(), t.view(), Mode::Infer).unwrap();
    for row in out.outer_iter() {
        assert_eq!(row, out.row(0));
    }
}

#[test]
fn one_hot_branch_reproduces_trunk_basis() {
    // Identity branch: one linear block whose output equals its input.
    let basis = 3;
    let mut spec = ArchitectureSpec::dot_product(basis, 2, &[], basis, 1, 0.0, 0.0);
    spec.trunk_blocks = vec![BlockSpec::hidden(2, 6, 0.0), BlockSpec::hidden(6, basis, 0.0)];
    spec.validate().unwrap();
    let mut model = FusionModel::new(spec, 6).unwrap();
    // branch weight = I, bias = 0; output bias = 0
    let n = model.n_params();
    let p = model.params_mut();
    p[..basis * basis].fill(0.0);
    for k in 0..basis {
        p[k * basis + k] = 1.0;
    }
    p[basis * basis..basis * basis + basis].fill(0.0);
    p[n - 1] = 0.0;
    let mut rng = SeededRng::seed_from_u64(1);
    let t = Array2::from_shape_simple_fn((5, 2), || rng.gen_range(-1.0..1.0));
    let basis_fns = model.trunk_embedding(t.view()).unwrap();
    for k in 0..basis {
        let mut e = Array2::zeros((5, basis));
        e.column_mut(k).fill(1.0);
        let (out, _) = model.forward(e.view(), t.view(), Mode::Infer).unwrap();
        assert_eq!(out.column(0), basis_fns.column(k));
    }
}
