use hsurf_autodiff::{Dual, Mat, ParameterSet, Tape};
use hsurf_core::losses::{loss_chamfer, Reduction};
use hsurf_core::networks::{
    atlas_cross, occupancy_gradient, probability_gradient, Architecture, HybridModel, LatentMode,
};
use hsurf_core::nn::{Head, Mlp};
use ndarray::{array, Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(mode: LatentMode) -> Architecture {
    Architecture {
        charts: 3,
        atlas_width: 16,
        atlas_depth: 2,
        occ_width: 16,
        occ_depth: 2,
        latent_dim: 8,
        enc_width: 16,
        enc_point_layers: 2,
        enc_head_layers: 2,
        mode,
        ..Architecture::default()
    }
}

fn auto(shapes: usize) -> Architecture {
    small(LatentMode::AutoDecoder { shapes })
}

fn cloud(seed: u64, n: usize) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, 3), |_| rng.gen_range(-0.5..0.5))
}

/// Chart normals of the linear map `uv -> uv * w`.
fn linear_chart_normal(w: Mat) -> Mat {
    let tape = Tape::new();
    let uv = tape.constant(array![[0.2, 0.7], [0.9, 0.1]]).unwrap();
    let du = array![[1.0, 0.0], [1.0, 0.0]];
    let dv = array![[0.0, 1.0], [0.0, 1.0]];
    let d = Dual::seed(uv, vec![du, dv]).unwrap().matmul(tape.constant(w).unwrap()).unwrap();
    (*atlas_cross(&d).unwrap().value()).clone()
}

#[test]
fn planar_chart_normal_follows_orientation() {
    let n = linear_chart_normal(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
    for row in n.rows() {
        assert_eq!(row.to_vec(), vec![0.0, 0.0, 1.0]);
    }
    let n = linear_chart_normal(array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]);
    for row in n.rows() {
        assert_eq!(row.to_vec(), vec![0.0, 0.0, -1.0]);
    }
}

#[test]
fn single_layer_occupancy_gradient_is_closed_form() {
    let mut set = ParameterSet::new("occ");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mlp = Mlp::new(&mut set, "o", &[3, 1], 0, Head::Linear, &mut rng).unwrap();
    set.set_value(mlp.last_bias(), array![[0.3]]).unwrap();
    let w = set.value(mlp.first_weight()).clone();
    let q = array![[0.1, -0.2, 0.3], [0.5, 0.4, -0.1]];
    let tape = Tape::new();
    let dirs = (0..3)
        .map(|k| Array2::from_shape_fn((2, 3), |(_, j)| f64::from(u8::from(j == k))))
        .collect();
    let d = mlp.forward_dual(&set, Dual::seed(tape.constant(q.clone()).unwrap(), dirs).unwrap(), None).unwrap();
    let (grad, _) = probability_gradient(&d).unwrap();
    let grad = grad.value();
    for i in 0..2 {
        let z: f64 = (0..3).map(|k| q[[i, k]] * w[[k, 0]]).sum::<f64>() + 0.3;
        let s = 1.0 / (1.0 + (-z).exp());
        for k in 0..3 {
            let expected = s * (1.0 - s) * w[[k, 0]];
            assert!((grad[[i, k]] - expected).abs() < 1e-14);
        }
    }
}

#[test]
fn zero_weights_give_degenerate_gradient() {
    let mut model = HybridModel::new(auto(1), 2).unwrap();
    let set = &mut model.occ_branch.params;
    for i in 0..set.len() {
        let z = Mat::zeros(set.value(i).dim());
        set.set_value(i, z).unwrap();
    }
    let tape = Tape::new();
    let lat = model.occ_branch.latent(&tape, 0, &cloud(0, 1)).unwrap();
    let q = tape.constant(cloud(1, 5)).unwrap();
    let (g, degenerate) = occupancy_gradient(&model.occupancy, &model.occ_branch.params, lat, q).unwrap();
    assert!(g.value().iter().all(|&x| x == 0.0));
    assert!(degenerate.iter().all(|&d| d));
}

#[test]
fn zeroed_head_gives_one_half() {
    let mut model = HybridModel::new(auto(1), 3).unwrap();
    model.zero_occupancy_head().unwrap();
    let lat = model.occ_branch.latent_plain(0, &cloud(0, 1)).unwrap();
    let p = model.occupancy.eval_plain(&model.occ_branch.params, &lat, &cloud(4, 20));
    assert!(p.iter().all(|&x| x == 0.5));
}

#[test]
fn fresh_atlas_is_bounded_by_gain() {
    let arch = auto(1);
    let model = HybridModel::new(arch.clone(), 4).unwrap();
    let lat = model.atlas_branch.latent_plain(0, &cloud(0, 1)).unwrap();
    let uv = Array2::from_shape_fn((50, 2), |(i, k)| ((i * 3 + k) % 11) as f64 / 10.0);
    for c in 0..arch.charts {
        let p = model.atlas.eval_plain(&model.atlas_branch.params, &lat, c, &uv).unwrap();
        assert!(p.iter().all(|x| x.is_finite() && x.abs() <= arch.chart_gain));
    }
}

#[test]
fn uv_outside_the_square_is_clamped() {
    let model = HybridModel::new(auto(1), 5).unwrap();
    let set = &model.atlas_branch.params;
    let lat = model.atlas_branch.latent_plain(0, &cloud(0, 1)).unwrap();
    let outside = model.atlas.eval_plain(set, &lat, 0, &array![[-0.5, 1.5]]).unwrap();
    let clamped = model.atlas.eval_plain(set, &lat, 0, &array![[0.0, 1.0]]).unwrap();
    assert_eq!(outside, clamped);
    assert!(model.atlas.eval_plain(set, &lat, 7, &array![[0.0, 1.0]]).is_err());
}

#[test]
fn tape_dual_and_plain_evaluations_agree() {
    let model = HybridModel::new(auto(1), 6).unwrap();
    let set = &model.atlas_branch.params;
    let uv = array![[0.1, 0.2], [0.8, 0.5]];
    let tape = Tape::new();
    let lat = model.atlas_branch.latent(&tape, 0, &cloud(0, 1)).unwrap();
    let a = model.atlas.eval(set, lat, 1, &uv).unwrap().value();
    let d = model.atlas.eval_with_tangents(set, lat, 1, &uv).unwrap().primal.value();
    let plain = model.atlas.eval_plain(set, &lat.value(), 1, &uv).unwrap();
    for ((x, y), z) in a.iter().zip(d.iter()).zip(plain.iter()) {
        assert!((x - y).abs() < 1e-14 && (x - z).abs() < 1e-14);
    }
}

#[test]
fn encoder_is_permutation_and_duplication_invariant() {
    let model = HybridModel::new(small(LatentMode::Encoder), 7).unwrap();
    let enc = model.atlas_branch.encoder.as_ref().unwrap();
    let set = &model.atlas_branch.params;
    let c = cloud(8, 40);
    let base = enc.encode_plain(set, &c).unwrap();
    let reversed: Vec<usize> = (0..40).rev().collect();
    let permuted = c.select(Axis(0), &reversed);
    let dup_idx: Vec<usize> = (0..40).chain(0..10).collect();
    let duplicated = c.select(Axis(0), &dup_idx);
    assert_eq!(base, enc.encode_plain(set, &permuted).unwrap());
    assert_eq!(base, enc.encode_plain(set, &duplicated).unwrap());
    let tape = Tape::new();
    let on_tape = enc.encode(set, &tape, &c).unwrap().value();
    for (a, b) in on_tape.iter().zip(base.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(enc.encode_plain(set, &Mat::zeros((0, 3))).is_err());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.hsrf");
    for arch in [auto(2), small(LatentMode::Encoder)] {
        let model = HybridModel::new(arch.clone(), 9).unwrap();
        model.save(&path).unwrap();
        let back = HybridModel::load(&path).unwrap();
        assert_eq!(back.arch, arch);
        for (a, b) in [
            (&model.atlas_branch.params, &back.atlas_branch.params),
            (&model.occ_branch.params, &back.occ_branch.params),
        ] {
            assert_eq!(a.names(), b.names());
            for i in 0..a.len() {
                assert_eq!(a.value(i), b.value(i));
            }
        }
    }
}

#[test]
fn architecture_header_round_trip() {
    let arch = Architecture { occ_sharpness: 12.5, tau: 0.3, ..auto(4) };
    assert_eq!(Architecture::from_header(&arch.to_header()).unwrap(), arch);
    assert!(Architecture::from_header("charts=3\nbogus=1\n").is_err());
    assert!(Architecture::from_header("tau=1.5\n").is_err());
}

#[test]
fn seeds_fix_the_initialization() {
    let a = HybridModel::new(auto(1), 11).unwrap();
    let b = HybridModel::new(auto(1), 11).unwrap();
    let c = HybridModel::new(auto(1), 12).unwrap();
    let w = a.atlas.charts[0].first_weight();
    assert_eq!(a.atlas_branch.params.value(w), b.atlas_branch.params.value(w));
    assert_ne!(a.atlas_branch.params.value(w), c.atlas_branch.params.value(w));
}

/// Chamfer of one chart against fixed points, as a function of the chart's
/// first weight matrix.
fn chart_loss(model: &HybridModel, w: &Mat) -> f64 {
    let mut m = model.clone();
    let idx = m.atlas.charts[0].first_weight();
    m.atlas_branch.params.set_value(idx, w.clone()).unwrap();
    let tape = Tape::new();
    let lat = m.atlas_branch.latent(&tape, 0, &cloud(0, 1)).unwrap();
    let uv = array![[0.1, 0.3], [0.5, 0.5], [0.9, 0.2]];
    let p = m.atlas.eval(&m.atlas_branch.params, lat, 0, &uv).unwrap();
    let gt = [[0.3, 0.1, 0.0], [-0.2, 0.2, 0.4]];
    loss_chamfer(p, &gt, None, Reduction::Sum).unwrap().item()
}

#[test]
fn taylor_remainder_is_second_order() {
    let model = HybridModel::new(auto(1), 13).unwrap();
    let idx = model.atlas.charts[0].first_weight();
    let w = model.atlas_branch.params.value(idx).clone();
    let tape = Tape::new();
    let lat = model.atlas_branch.latent(&tape, 0, &cloud(0, 1)).unwrap();
    let uv = array![[0.1, 0.3], [0.5, 0.5], [0.9, 0.2]];
    let p = model.atlas.eval(&model.atlas_branch.params, lat, 0, &uv).unwrap();
    let gt = [[0.3, 0.1, 0.0], [-0.2, 0.2, 0.4]];
    let loss = loss_chamfer(p, &gt, None, Reduction::Sum).unwrap();
    let grads = tape.backward(loss).unwrap();
    let g = grads.param(model.atlas_branch.params.key(idx)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let d = Array2::from_shape_fn(w.dim(), |_| rng.gen_range(-1.0..1.0));
    let slope: f64 = (g * &d).sum();
    let l0 = chart_loss(&model, &w);
    let remainder = |h: f64| (chart_loss(&model, &(&w + &(&d * h))) - l0 - h * slope).abs();
    let ratio = remainder(1e-3) / remainder(1e-4);
    assert!((50.0..200.0).contains(&ratio), "ratio {ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn probabilities_stay_in_the_unit_interval(seed in 0u64..1000) {
        let model = HybridModel::new(auto(1), seed).unwrap();
        let lat = model.occ_branch.latent_plain(0, &cloud(0, 1)).unwrap();
        let p = model.occupancy.eval_plain(&model.occ_branch.params, &lat, &cloud(seed, 30));
        prop_assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn encoder_ignores_row_order(seed in 0u64..1000, rot in 1usize..29) {
        let model = HybridModel::new(small(LatentMode::Encoder), 21).unwrap();
        let enc = model.atlas_branch.encoder.as_ref().unwrap();
        let c = cloud(seed, 30);
        let idx: Vec<usize> = (0..30).map(|i| (i + rot) % 30).collect();
        let a = enc.encode_plain(&model.atlas_branch.params, &c).unwrap();
        let b = enc.encode_plain(&model.atlas_branch.params, &c.select(Axis(0), &idx)).unwrap();
        prop_assert_eq!(a, b);
    }
}
