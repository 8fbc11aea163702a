//! Finite-difference validation of tape gradients for every network shape
//! used in this workspace, plus replay determinism.

use autodiff_nn::{
    col, forward_mlp, forward_mlp_values, matrix, mlp_leaves, Activation, DetRng, MlpSpec,
    ParamStore, Tape, TimeEmbedding,
};
use proptest::prelude::*;

/// Scalar test loss: mean over the batch of the squared output norm.
fn loss_values(spec: &MlpSpec, params: &ParamStore, x: &autodiff_nn::Tensor, t: Option<&autodiff_nn::Tensor>) -> f64 {
    let y = forward_mlp_values(spec, params, x, t).unwrap();
    y.iter().map(|v| v * v).sum::<f64>() / y.nrows() as f64
}

/// Tape gradient of the same loss w.r.t. (flat params, input).
fn loss_grads(
    spec: &MlpSpec,
    params: &ParamStore,
    x: &autodiff_nn::Tensor,
    t: Option<&autodiff_nn::Tensor>,
) -> (f64, Vec<f64>, autodiff_nn::Tensor) {
    let mut tape = Tape::new();
    let nodes = mlp_leaves(&mut tape, spec, params, true).unwrap();
    let xn = tape.leaf(x.clone(), true);
    let y = forward_mlp(&mut tape, spec, &nodes, xn, t).unwrap();
    let sq = tape.mul(y, y);
    let s = tape.sum(sq);
    let loss = tape.scale(s, 1.0 / x.nrows() as f64);
    let grads = tape.backward(loss).unwrap();
    let flat = autodiff_nn::collect_mlp_grad(&tape, &grads, &nodes);
    let gx = grads.dense(&tape, xn);
    (tape.value(loss)[(0, 0)], flat, gx)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Check tape gradients against central differences on a random subset of
/// parameter coordinates and on every input coordinate.
fn check_spec(spec: &MlpSpec, seed: u64, param_coords: usize) {
    let mut rng = DetRng::stream(seed, "gradcheck");
    let params = ParamStore::init_mlp(spec, &mut rng);
    let b = 4;
    let x = matrix(b, spec.input_dim, (0..b * spec.input_dim).map(|_| rng.normal()).collect());
    let t_store;
    let t = if spec.time_embedding == TimeEmbedding::None {
        None
    } else {
        t_store = col(&(0..b).map(|_| rng.uniform(0.05, 1.0)).collect::<Vec<_>>());
        Some(&t_store)
    };

    let (_, gp, gx) = loss_grads(spec, &params, &x, t);
    let h = 1e-5;

    // Parameter coordinates (all of them for small nets, a sample otherwise).
    let n = params.total_len();
    let coords: Vec<usize> = if n <= param_coords {
        (0..n).collect()
    } else {
        (0..param_coords).map(|_| rng.below(n)).collect()
    };
    let mut flat = params.flat();
    for &i in &coords {
        let orig = flat[i];
        let mut p = params.clone();
        flat[i] = orig + h;
        p.set_flat(&flat).unwrap();
        let up = loss_values(spec, &p, &x, t);
        flat[i] = orig - h;
        p.set_flat(&flat).unwrap();
        let dn = loss_values(spec, &p, &x, t);
        flat[i] = orig;
        let fd = (up - dn) / (2.0 * h);
        assert!(
            rel_err(fd, gp[i]) < 1e-4,
            "param {} ({}): fd={fd:.9e} tape={:.9e}",
            i,
            params.segment_name_at(i),
            gp[i]
        );
    }

    // Every input coordinate.
    for r in 0..b {
        for c in 0..spec.input_dim {
            let mut xp = x.clone();
            xp[(r, c)] += h;
            let up = loss_values(spec, &params, &xp, t);
            xp[(r, c)] -= 2.0 * h;
            let dn = loss_values(spec, &params, &xp, t);
            let fd = (up - dn) / (2.0 * h);
            assert!(
                rel_err(fd, gx[(r, c)]) < 1e-4,
                "input ({r},{c}): fd={fd:.9e} tape={:.9e}",
                gx[(r, c)]
            );
        }
    }
}

#[test]
fn generator_architecture_gradcheck() {
    let spec =
        MlpSpec::new(2, vec![64, 64], 2, Activation::Tanh, TimeEmbedding::None).unwrap();
    for seed in 0..10 {
        check_spec(&spec, 100 + seed, 40);
    }
}

#[test]
fn score_network_architecture_gradcheck() {
    let spec =
        MlpSpec::new(2, vec![128, 128], 2, Activation::Tanh, TimeEmbedding::Sinusoidal(8))
            .unwrap();
    for seed in 0..10 {
        check_spec(&spec, 200 + seed, 40);
    }
}

#[test]
fn discriminator_architecture_gradcheck() {
    let spec = MlpSpec::new(
        2,
        vec![128, 128],
        1,
        Activation::SmoothRectifier,
        TimeEmbedding::Sinusoidal(8),
    )
    .unwrap();
    for seed in 0..10 {
        check_spec(&spec, 300 + seed, 40);
    }
}

#[test]
fn zero_hidden_linear_gradcheck() {
    let spec = MlpSpec::new(2, vec![], 2, Activation::Tanh, TimeEmbedding::None).unwrap();
    for seed in 0..10 {
        check_spec(&spec, 400 + seed, usize::MAX);
    }
}

#[test]
fn scalar_time_concat_gradcheck() {
    let spec =
        MlpSpec::new(1, vec![8], 1, Activation::SmoothRectifier, TimeEmbedding::ConcatScalar)
            .unwrap();
    for seed in 0..10 {
        check_spec(&spec, 500 + seed, usize::MAX);
    }
}

#[test]
fn gradients_are_bit_identical_on_replay() {
    let spec =
        MlpSpec::new(2, vec![32, 32], 2, Activation::Tanh, TimeEmbedding::Sinusoidal(8)).unwrap();
    let mut rng = DetRng::stream(7, "replay");
    let params = ParamStore::init_mlp(&spec, &mut rng);
    let x = matrix(8, 2, (0..16).map(|_| rng.normal()).collect());
    let t = col(&(0..8).map(|_| rng.uniform(0.01, 1.0)).collect::<Vec<_>>());
    let (l1, g1, gx1) = loss_grads(&spec, &params, &x, Some(&t));
    let (l2, g2, gx2) = loss_grads(&spec, &params, &x, Some(&t));
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(gx1.iter().zip(gx2.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// For a tiny tanh network with arbitrary finite parameters and inputs,
    /// the tape gradient matches central differences.
    #[test]
    fn tiny_network_gradient_matches_fd(
        w0 in proptest::collection::vec(-2.0f64..2.0, 3),
        b0 in proptest::collection::vec(-1.0f64..1.0, 3),
        w1 in proptest::collection::vec(-2.0f64..2.0, 3),
        b1 in -1.0f64..1.0,
        x0 in -3.0f64..3.0,
    ) {
        let spec = MlpSpec::new(1, vec![3], 1, Activation::Tanh, TimeEmbedding::None).unwrap();
        let params = ParamStore::from_segments(vec![
            ("layer0.weight".into(), w0),
            ("layer0.bias".into(), b0),
            ("layer1.weight".into(), w1),
            ("layer1.bias".into(), vec![b1]),
        ]).unwrap();
        let x = matrix(1, 1, vec![x0]);
        let (_, gp, gx) = loss_grads(&spec, &params, &x, None);
        let h = 1e-5;
        let mut flat = params.flat();
        for i in 0..flat.len() {
            let orig = flat[i];
            let mut p = params.clone();
            flat[i] = orig + h;
            p.set_flat(&flat).unwrap();
            let up = loss_values(&spec, &p, &x, None);
            flat[i] = orig - h;
            p.set_flat(&flat).unwrap();
            let dn = loss_values(&spec, &p, &x, None);
            flat[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            prop_assert!(rel_err(fd, gp[i]) < 1e-4, "param {i}: fd={fd} tape={}", gp[i]);
        }
        let mut xp = x.clone();
        xp[(0, 0)] += h;
        let up = loss_values(&spec, &params, &xp, None);
        xp[(0, 0)] -= 2.0 * h;
        let dn = loss_values(&spec, &params, &xp, None);
        let fd = (up - dn) / (2.0 * h);
        prop_assert!(rel_err(fd, gx[(0, 0)]) < 1e-4);
    }
}
