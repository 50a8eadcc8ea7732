//! Finite-difference gradient checks for every differentiable op.
//!
//! Central differences in f64 with step 1e-5; the analytic path must agree
//! to a relative error below 1e-4 on randomized small shapes.

mod common;

use common::{fd_max_rel_err, randn, rng, FdInput};
use swathfill_core::tensor::Tape;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn conv3d_gradients_match_finite_differences() {
    let mut r = rng(101);
    // Random 2x3x4x4 spatial input, 3x3x3 kernel, two output channels.
    let x = FdInput::new(&[1, 2, 3, 4, 4], randn(&mut r, 96));
    let w = FdInput::new(&[2, 2, 3, 3, 3], randn(&mut r, 108).iter().map(|v| v * 0.3).collect());
    let b = FdInput::new(&[2], randn(&mut r, 2));
    let proj = randn(&mut r, 96);
    let err = fd_max_rel_err(&[x, w, b], STEP, |tape, vars| {
        let y = tape.conv3d(vars[0], vars[1], vars[2], [1, 1, 1], [1, 1, 1]).unwrap();
        let p = tape.leaf_owned(vec![1, 2, 3, 4, 4], proj.clone(), false);
        let weighted = tape.mul(y, p).unwrap();
        tape.sum_all(weighted)
    });
    assert!(err < TOL, "max rel err {err}");
}

#[test]
fn conv3d_strided_gradients_match_finite_differences() {
    let mut r = rng(102);
    let x = FdInput::new(&[1, 1, 3, 5, 5], randn(&mut r, 75));
    let w = FdInput::new(&[1, 1, 1, 3, 3], randn(&mut r, 9));
    let b = FdInput::new(&[1], randn(&mut r, 1));
    let proj = randn(&mut r, 3 * 2 * 2);
    let err = fd_max_rel_err(&[x, w, b], STEP, |tape, vars| {
        let y = tape.conv3d(vars[0], vars[1], vars[2], [1, 2, 2], [0, 0, 0]).unwrap();
        let p = tape.leaf_owned(vec![1, 1, 3, 2, 2], proj.clone(), false);
        let weighted = tape.mul(y, p).unwrap();
        tape.sum_all(weighted)
    });
    assert!(err < TOL, "max rel err {err}");
}

#[test]
fn conv_transpose3d_gradients_match_finite_differences() {
    let mut r = rng(103);
    let x = FdInput::new(&[1, 2, 2, 3, 3], randn(&mut r, 36));
    let w = FdInput::new(&[2, 1, 1, 2, 2], randn(&mut r, 8));
    let b = FdInput::new(&[1], randn(&mut r, 1));
    let proj = randn(&mut r, 2 * 6 * 6);
    let err = fd_max_rel_err(&[x, w, b], STEP, |tape, vars| {
        let y = tape.conv_transpose3d(vars[0], vars[1], vars[2], [1, 2, 2]).unwrap();
        let p = tape.leaf_owned(vec![1, 1, 2, 6, 6], proj.clone(), false);
        let weighted = tape.mul(y, p).unwrap();
        tape.sum_all(weighted)
    });
    assert!(err < TOL, "max rel err {err}");
}

#[test]
fn maxpool3d_gradient_matches_finite_differences() {
    let mut r = rng(104);
    // Well-separated values keep the argmax stable under the FD step.
    let n = 1 * 1 * 2 * 4 * 4;
    let mut vals = randn(&mut r, n);
    for (i, v) in vals.iter_mut().enumerate() {
        *v = *v * 0.5 + (i % 7) as f64;
    }
    let x = FdInput::new(&[1, 1, 2, 4, 4], vals);
    let proj = randn(&mut r, 8);
    let err = fd_max_rel_err(&[x], STEP, |tape, vars| {
        let y = tape.maxpool3d(vars[0]).unwrap();
        let p = tape.leaf_owned(vec![1, 1, 2, 2, 2], proj.clone(), false);
        let weighted = tape.mul(y, p).unwrap();
        tape.sum_all(weighted)
    });
    assert!(err < TOL, "max rel err {err}");
}

#[test]
fn group_norm_gradients_match_finite_differences() {
    let mut r = rng(105);
    let x = FdInput::new(&[2, 4, 1, 3, 3], randn(&mut r, 72));
    let gamma = FdInput::new(&[4], rand_offset(&mut r, 4, 1.0));
    let beta = FdInput::new(&[4], randn(&mut r, 4));
    let proj = randn(&mut r, 72);
    let err = fd_max_rel_err(&[x, gamma, beta], STEP, |tape, vars| {
        let y = tape.group_norm(vars[0], vars[1], vars[2], 2, 1e-5).unwrap();
        let p = tape.leaf_owned(vec![2, 4, 1, 3, 3], proj.clone(), false);
        let weighted = tape.mul(y, p).unwrap();
        tape.sum_all(weighted)
    });
    assert!(err < TOL, "max rel err {err}");
}

#[test]
fn silu_sigmoid_linear_pool_gradients_match_finite_differences() {
    let mut r = rng(106);
    let x = FdInput::new(&[2, 6], randn(&mut r, 12));
    let w = FdInput::new(&[3, 6], randn(&mut r, 18));
    let b = FdInput::new(&[3], randn(&mut r, 3));
    let proj = randn(&mut r, 6);
    let err = fd_max_rel_err(&[x, w, b], STEP, |tape, vars| {
        let h = tape.linear(vars[0], vars[1], vars[2]).unwrap();
        let s = tape.silu(h);
        let g = tape.sigmoid(s);
        let p = tape.leaf_owned(vec![2, 3], proj.clone(), false);
        let weighted = tape.mul(g, p).unwrap();
        tape.sum_all(weighted)
    });
    assert!(err < TOL, "max rel err {err}");

    let mut r = rng(107);
    let x = FdInput::new(&[1, 3, 2, 2, 2], randn(&mut r, 24));
    let proj = randn(&mut r, 3);
    let err = fd_max_rel_err(&[x], STEP, |tape, vars| {
        let pooled = tape.adaptive_avg_pool3d(vars[0]).unwrap();
        let flat = tape.reshape(pooled, &[1, 3]).unwrap();
        let p = tape.leaf_owned(vec![1, 3], proj.clone(), false);
        let weighted = tape.mul(flat, p).unwrap();
        tape.sum_all(weighted)
    });
    assert!(err < TOL, "max rel err {err}");
}

#[test]
fn elementwise_and_channel_op_gradients_match_finite_differences() {
    let mut r = rng(108);
    let a = FdInput::new(&[1, 2, 1, 2, 2], randn(&mut r, 8));
    let bb = FdInput::new(&[1, 2, 1, 2, 2], randn(&mut r, 8));
    let bias = FdInput::new(&[1, 2], randn(&mut r, 2));
    let gate = FdInput::new(&[1, 2], randn(&mut r, 2));
    let err = fd_max_rel_err(&[a, bb, bias, gate], STEP, |tape, vars| {
        let s = tape.add(vars[0], vars[1]).unwrap();
        let m = tape.mul(s, vars[0]).unwrap();
        let biased = tape.add_channel_bias(m, vars[2]).unwrap();
        let gated = tape.mul_channel(biased, vars[3]).unwrap();
        let scaled = tape.scale(gated, 0.7);
        tape.sum_all(scaled)
    });
    assert!(err < TOL, "max rel err {err}");
}

#[test]
fn composed_conv_norm_silu_graph_matches_finite_differences() {
    let mut r = rng(109);
    let x = FdInput::new(&[1, 2, 2, 4, 4], randn(&mut r, 64));
    let w = FdInput::new(&[4, 2, 3, 3, 3], randn(&mut r, 216).iter().map(|v| v * 0.2).collect());
    let b = FdInput::new(&[4], randn(&mut r, 4));
    let gamma = FdInput::new(&[4], rand_offset(&mut r, 4, 1.0));
    let beta = FdInput::new(&[4], randn(&mut r, 4));
    let err = fd_max_rel_err(&[x, w, b, gamma, beta], STEP, |tape, vars| {
        let y = tape.conv3d(vars[0], vars[1], vars[2], [1, 1, 1], [1, 1, 1]).unwrap();
        let n = tape.group_norm(y, vars[3], vars[4], 2, 1e-5).unwrap();
        let s = tape.silu(n);
        tape.sum_all(s)
    });
    assert!(err < TOL, "max rel err {err}");
}

#[test]
fn conv3d_is_linear_in_input_for_fixed_weights() {
    let mut r = rng(110);
    let xa = randn(&mut r, 48);
    let xb = randn(&mut r, 48);
    let w = randn(&mut r, 27);
    let (ca, cb) = (0.37, -1.21);

    let run = |data: Vec<f64>| -> Vec<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf_owned(vec![1, 1, 3, 4, 4], data, false);
        let wv = tape.leaf_owned(vec![1, 1, 3, 3, 3], w.clone(), false);
        let b = tape.leaf_owned(vec![1], vec![0.0], false);
        let y = tape.conv3d(x, wv, b, [1, 1, 1], [1, 1, 1]).unwrap();
        tape.value(y).to_vec()
    };

    let combined: Vec<f64> = xa.iter().zip(&xb).map(|(&a, &b)| ca * a + cb * b).collect();
    let lhs = run(combined);
    let fa = run(xa);
    let fb = run(xb);
    for ((l, a), b) in lhs.iter().zip(&fa).zip(&fb) {
        assert!((l - (ca * a + cb * b)).abs() < 1e-10);
    }
}

#[test]
fn group_norm_invariant_to_shift_and_scale() {
    let mut r = rng(111);
    let x = randn(&mut r, 32);
    let run = |data: Vec<f64>| -> Vec<f64> {
        let mut tape = Tape::new();
        let xv = tape.leaf_owned(vec![1, 2, 1, 4, 4], data, false);
        let gamma = tape.leaf_owned(vec![2], vec![1.0, 1.0], false);
        let beta = tape.leaf_owned(vec![2], vec![0.0, 0.0], false);
        let y = tape.group_norm(xv, gamma, beta, 2, 1e-12).unwrap();
        tape.value(y).to_vec()
    };
    let base = run(x.clone());
    let shifted_scaled = run(x.iter().map(|&v| 3.5 * v + 0.75).collect());
    for (a, b) in base.iter().zip(&shifted_scaled) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn conv_transpose_then_identity_conv_preserves_constants() {
    // A transposed conv that writes value 1 into each upsampled 2x2 cell
    // reproduces a constant field exactly at doubled resolution.
    let mut tape = Tape::new();
    let x = tape.leaf_owned(vec![1, 1, 2, 3, 3], vec![0.6; 18], false);
    let w = tape.leaf_owned(vec![1, 1, 1, 2, 2], vec![1.0; 4], false);
    let b = tape.leaf_owned(vec![1], vec![0.0], false);
    let up = tape.conv_transpose3d(x, w, b, [1, 2, 2]).unwrap();
    assert_eq!(tape.shape(up), &[1, 1, 2, 6, 6]);
    for &v in tape.value(up) {
        assert!((v - 0.6).abs() < 1e-12);
    }
}

fn rand_offset(r: &mut rand::rngs::StdRng, n: usize, offset: f64) -> Vec<f64> {
    randn(r, n).iter().map(|v| v * 0.3 + offset).collect()
}

mod full_net {
    use super::common::{randn, rng};
    use rand::RngExt;
    use swathfill_core::diffusion::ForwardMode;
    use swathfill_core::tensor::{ParamStore, Tape, Tensor};
    use swathfill_core::unet::{UNet, UNetConfig};

    /// Full-model check on a reduced-depth configuration: analytic parameter
    /// gradients against central differences on a random probe of
    /// coordinates spread over every parameter tensor.
    #[test]
    fn full_toy_unet_matches_finite_differences() {
        let cfg = UNetConfig {
            base_channels: 4,
            ..UNetConfig::default()
        };
        let mut store = ParamStore::new();
        let mut r = rng(42);
        let net = UNet::new(cfg, &mut store, &mut r).unwrap();

        let x = Tensor::from_vec(&[1, 1, 2, 8, 8], randn(&mut r, 128)).unwrap();
        let cond = Tensor::from_vec(&[1, 10, 2, 8, 8], randn(&mut r, 1280)).unwrap();
        let proj = randn(&mut r, 128);
        let t = 7.0;

        let loss_of = |store: &ParamStore| -> f64 {
            let mut tape = Tape::new();
            let mut dummy = super::common::rng(0);
            let out = net
                .forward(&mut tape, store, &x, &[t], &cond, ForwardMode::Eval, &mut dummy)
                .unwrap();
            tape.value(out).iter().zip(&proj).map(|(&o, &p)| o * p).sum()
        };

        // Analytic gradients.
        let mut tape = Tape::new();
        let mut dummy = super::common::rng(0);
        let out = net
            .forward(&mut tape, &mut store, &x, &[t], &cond, ForwardMode::Eval, &mut dummy)
            .unwrap();
        let pv = tape.leaf_owned(vec![1, 1, 2, 8, 8], proj.clone(), false);
        let weighted = tape.mul(out, pv).unwrap();
        let loss = tape.sum_all(weighted);
        tape.backward(loss).unwrap();
        store.zero_grads();
        tape.accumulate_param_grads(&mut store);

        // Probe ~3 coordinates per parameter tensor.
        let step = 1e-5;
        let mut max_rel = 0.0f64;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let n = store.tensor(id).numel();
            let analytic = store.tensor(id).grad.clone().unwrap();
            for _ in 0..3.min(n) {
                let j = r.random_range(0..n);
                let orig = store.tensor(id).data()[j];
                store.tensor_mut(id).data_mut()[j] = orig + step;
                let up = loss_of(&store);
                store.tensor_mut(id).data_mut()[j] = orig - step;
                let down = loss_of(&store);
                store.tensor_mut(id).data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * step);
                let a = analytic[j];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                let rel = (a - numeric).abs() / denom;
                max_rel = max_rel.max(rel);
            }
        }
        assert!(max_rel < 1e-3, "full-net max rel err {max_rel}");
    }
}
