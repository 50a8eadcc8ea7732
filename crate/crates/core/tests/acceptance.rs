//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line. Run with `cargo test -p swathfill-core --test acceptance
//! -- --nocapture` to see the lines.

mod common;

use common::{fd_max_rel_err, randn, rng, FdInput};
use rand::RngExt;
use swathfill_core::condition::{self, ConditionTensor, ExpTransform, LogisticTransform};
use swathfill_core::diffusion::{
    ancestral_step, masked_sample, masked_sample_traced, reconstruct, v_target, Denoiser, SamplerKind,
};
use swathfill_core::field::{FieldVolume, MaskVolume};
use swathfill_core::io::config::RunConfig;
use swathfill_core::metrics::{self, HoleDomain};
use swathfill_core::schedule::NoiseSchedule;
use swathfill_core::tensor::{ParamStore, Tape};
use swathfill_core::unet::{UNet, UNetConfig};

fn pass(criterion: &str) {
    println!("PASS {criterion}");
}

struct FailGuard<'a>(&'a str, bool);

impl<'a> FailGuard<'a> {
    fn new(criterion: &'a str) -> Self {
        FailGuard(criterion, true)
    }
    fn disarm(mut self) {
        self.1 = false;
        pass(self.0);
    }
}

impl Drop for FailGuard<'_> {
    fn drop(&mut self) {
        if self.1 {
            println!("FAIL {}", self.0);
        }
    }
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_gradient_fidelity() {
    let guard = FailGuard::new("criterion 1: gradient fidelity (ops + full toy net vs finite differences)");
    let step = 1e-5;
    let mut r = rng(900);

    // Every differentiable op in one composed graph per family.
    let x = FdInput::new(&[1, 2, 3, 4, 4], randn(&mut r, 96));
    let w = FdInput::new(&[2, 2, 3, 3, 3], randn(&mut r, 108).iter().map(|v| v * 0.3).collect());
    let b = FdInput::new(&[2], randn(&mut r, 2));
    let gamma = FdInput::new(&[2], randn(&mut r, 2).iter().map(|v| v * 0.2 + 1.0).collect());
    let beta = FdInput::new(&[2], randn(&mut r, 2));
    let proj = randn(&mut r, 96);
    let err = fd_max_rel_err(&[x, w, b, gamma, beta], step, |tape, vars| {
        let y = tape.conv3d(vars[0], vars[1], vars[2], [1, 1, 1], [1, 1, 1]).unwrap();
        let n = tape.group_norm(y, vars[3], vars[4], 2, 1e-5).unwrap();
        let s = tape.silu(n);
        let p = tape.leaf_owned(vec![1, 2, 3, 4, 4], proj.clone(), false);
        let weighted = tape.mul(s, p).unwrap();
        tape.sum_all(weighted)
    });
    assert!(err < 1e-4, "conv/norm/silu chain rel err {err}");

    let x = FdInput::new(&[1, 2, 2, 4, 4], randn(&mut r, 64));
    let wt = FdInput::new(&[2, 1, 1, 2, 2], randn(&mut r, 8));
    let bt = FdInput::new(&[1], randn(&mut r, 1));
    let proj = randn(&mut r, 2 * 4 * 4);
    let err = fd_max_rel_err(&[x, wt, bt], step, |tape, vars| {
        let pooled = tape.maxpool3d(vars[0]).unwrap();
        let up = tape.conv_transpose3d(pooled, vars[1], vars[2], [1, 2, 2]).unwrap();
        let sg = tape.sigmoid(up);
        let p = tape.leaf_owned(vec![1, 1, 2, 4, 4], proj.clone(), false);
        let weighted = tape.mul(sg, p).unwrap();
        tape.sum_all(weighted)
    });
    assert!(err < 1e-4, "pool/transpose/sigmoid chain rel err {err}");

    // Full toy network: analytic parameter gradients vs central differences.
    let cfg = UNetConfig {
        base_channels: 4,
        ..UNetConfig::default()
    };
    let mut store = ParamStore::new();
    let net = UNet::new(cfg, &mut store, &mut r).unwrap();
    let x = swathfill_core::tensor::Tensor::from_vec(&[1, 1, 2, 8, 8], randn(&mut r, 128)).unwrap();
    let cond = swathfill_core::tensor::Tensor::from_vec(&[1, 10, 2, 8, 8], randn(&mut r, 1280)).unwrap();
    let proj = randn(&mut r, 128);
    let loss_of = |store: &ParamStore| -> f64 {
        let mut tape = Tape::new();
        let mut dummy = rng(0);
        let out = net
            .forward(&mut tape, store, &x, &[7.0], &cond, swathfill_core::diffusion::ForwardMode::Eval, &mut dummy)
            .unwrap();
        tape.value(out).iter().zip(&proj).map(|(&o, &p)| o * p).sum()
    };
    let mut tape = Tape::new();
    let mut dummy = rng(0);
    let out = net
        .forward(&mut tape, &store, &x, &[7.0], &cond, swathfill_core::diffusion::ForwardMode::Eval, &mut dummy)
        .unwrap();
    let pv = tape.leaf_owned(vec![1, 1, 2, 8, 8], proj.clone(), false);
    let weighted = tape.mul(out, pv).unwrap();
    let loss = tape.sum_all(weighted);
    tape.backward(loss).unwrap();
    store.zero_grads();
    tape.accumulate_param_grads(&mut store);
    let mut max_rel = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.tensor(id).numel();
        let analytic = store.tensor(id).grad.clone().unwrap();
        for _ in 0..2.min(n) {
            let j = r.random_range(0..n);
            let a = analytic[j];
            let mut rel = f64::INFINITY;
            // The loss is piecewise-smooth in the parameters (max pooling);
            // if the probe interval straddles an argmax flip, retry with a
            // smaller step. A genuine gradient defect persists across steps.
            for h in [step, step / 10.0] {
                let orig = store.tensor(id).data()[j];
                store.tensor_mut(id).data_mut()[j] = orig + h;
                let up = loss_of(&store);
                store.tensor_mut(id).data_mut()[j] = orig - h;
                let down = loss_of(&store);
                store.tensor_mut(id).data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                rel = rel.min((a - numeric).abs() / denom);
                if rel < 1e-3 {
                    break;
                }
            }
            max_rel = max_rel.max(rel);
        }
    }
    assert!(max_rel < 1e-3, "full toy net rel err {max_rel}");
    guard.disarm();
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_diffusion_algebra() {
    let guard = FailGuard::new("criterion 2: v/eps reconstruction identity and dual-path ancestral update");
    let sched = NoiseSchedule::linear(200, 1e-4, 0.02).unwrap();
    let mut r = rng(901);
    for _ in 0..1000 {
        let t = r.random_range(1..=200);
        let n = 8;
        let x0: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let eps = randn(&mut r, n);
        let ab = sched.alpha_bar(t);
        let x_t: Vec<f64> = x0
            .iter()
            .zip(&eps)
            .map(|(&x, &e)| ab.sqrt() * x + (1.0 - ab).sqrt() * e)
            .collect();
        let v = v_target(&x0, &eps, t, &sched).unwrap();
        let (eps_hat, x0_hat) = reconstruct(&x_t, &v, t, &sched).unwrap();
        for i in 0..n {
            assert!((eps_hat[i] - eps[i]).abs() < 1e-10, "eps roundtrip at t = {t}");
            assert!((x0_hat[i] - x0[i]).abs() < 1e-10, "x0 roundtrip at t = {t}");
            let recomposed = ab.sqrt() * x0_hat[i] + (1.0 - ab).sqrt() * eps_hat[i];
            assert!((recomposed - x_t[i]).abs() < 1e-10);
        }
    }
    // Ancestral v-parameterized step against an independent
    // eps-parameterized implementation.
    for _ in 0..300 {
        let t = r.random_range(1..=200);
        let n = 8;
        let x_t = randn(&mut r, n);
        let v_hat = randn(&mut r, n);
        let z = if t > 1 { randn(&mut r, n) } else { vec![0.0; n] };
        let got = ancestral_step(&x_t, &v_hat, t, &sched, &z).unwrap();
        let ab = sched.alpha_bar(t);
        let a = sched.alpha(t);
        let beta = sched.beta(t);
        for i in 0..n {
            let eps_hat = ab.sqrt() * v_hat[i] + (1.0 - ab).sqrt() * x_t[i];
            let expect = (x_t[i] - beta / (1.0 - ab).sqrt() * eps_hat) / a.sqrt() + beta.sqrt() * z[i];
            assert!((got[i] - expect).abs() < 1e-10, "dual-path mismatch at t = {t}");
        }
    }
    guard.disarm();
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_schedule_invariants() {
    let guard = FailGuard::new("criterion 3: schedule invariants for linear T in {10, 200, 1000} and cosine");
    let mut schedules = Vec::new();
    for t_steps in [10usize, 200, 1000] {
        schedules.push(NoiseSchedule::linear(t_steps, 1e-4, 0.02).unwrap());
    }
    for t_steps in [10usize, 200, 1000] {
        schedules.push(NoiseSchedule::cosine(t_steps, 0.008).unwrap());
    }
    for sched in &schedules {
        assert_eq!(sched.alpha_bar(0), 1.0);
        let mut acc = 1.0;
        for t in 1..=sched.len() {
            let beta = sched.beta(t);
            assert!(beta > 0.0 && beta < 1.0, "beta({t}) = {beta}");
            assert!(sched.alpha_bar(t) < sched.alpha_bar(t - 1), "not strictly decreasing at {t}");
            acc *= 1.0 - beta;
            assert!((sched.alpha_bar(t) - acc).abs() < 1e-12, "stored vs recomputed at {t}");
            assert!((sched.sigma(t) - beta.sqrt()).abs() == 0.0);
        }
    }
    guard.disarm();
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_4_mask_preservation() {
    let guard = FailGuard::new("criterion 4: observed pixels bit-exact at every step, both samplers, 100 pairs");
    let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
    let mut r = rng(904);
    let junk_model = |x: &[f64], _d: (usize, usize, usize), _t: f64, _c: &ConditionTensor| {
        Ok(x.iter().map(|&v| (v * 1.7).sin()).collect())
    };
    let (l, h, w) = (2usize, 8usize, 8usize);
    let n = l * h * w;
    let cond = ConditionTensor::from_raw(l, h, w, vec![0.0; 10 * n]).unwrap();
    for pair in 0..100 {
        let truth_data: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let truth = FieldVolume::from_vec(l, h, w, truth_data).unwrap();
        let density = r.random_range(0.2..0.9);
        let bits: Vec<u8> = (0..n).map(|_| u8::from(r.random::<f64>() < density)).collect();
        let mask = MaskVolume::from_vec(l, h, w, bits).unwrap();
        let xbar = condition::mask_apply(&truth, &mask).unwrap();
        let sampler = if pair % 2 == 0 {
            SamplerKind::Ancestral
        } else {
            SamplerKind::Ddim { steps: 25 }
        };
        masked_sample_traced(&xbar, &mask, &cond, &junk_model, &sched, &mut r, sampler, |_, state| {
            for (i, (&s, &m)) in state.iter().zip(mask.data()).enumerate() {
                if m == 1 {
                    assert!(s.to_bits() == xbar.data()[i].to_bits(), "pair {pair}: observed pixel {i} drifted");
                }
            }
        })
        .unwrap();
    }
    guard.disarm();
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_5_oracle_convergence() {
    let guard = FailGuard::new("criterion 5: exact-v oracle drives DDIM(50) to the target within 1e-3");
    let sched = NoiseSchedule::linear(200, 1e-4, 0.02).unwrap();
    let mut r = rng(905);
    let (l, h, w) = (3usize, 16usize, 32usize);
    let n = l * h * w;
    let target_data: Vec<f64> = (0..n).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
    let target = FieldVolume::from_vec(l, h, w, target_data).unwrap();

    struct Oracle {
        target: FieldVolume,
        sched: NoiseSchedule,
    }
    impl Denoiser for Oracle {
        fn predict(
            &self,
            x: &[f64],
            _dims: (usize, usize, usize),
            time: f64,
            _cond: &ConditionTensor,
        ) -> swathfill_core::Result<Vec<f64>> {
            let t = time as usize;
            let ab = self.sched.alpha_bar(t);
            Ok(x.iter()
                .zip(self.target.data())
                .map(|(&xt, &x0)| (ab.sqrt() * xt - x0) / (1.0 - ab).sqrt())
                .collect())
        }
    }
    let oracle = Oracle {
        target: target.clone(),
        sched: sched.clone(),
    };
    let bits: Vec<u8> = (0..n).map(|i| u8::from(i % 4 != 1)).collect();
    let mask = MaskVolume::from_vec(l, h, w, bits).unwrap();
    let xbar = condition::mask_apply(&target, &mask).unwrap();
    let cond = ConditionTensor::from_raw(l, h, w, vec![0.0; 10 * n]).unwrap();
    let out = masked_sample(&xbar, &mask, &cond, &oracle, &sched, &mut r, SamplerKind::Ddim { steps: 50 }).unwrap();
    let mut max_abs = 0.0f64;
    for (i, (&got, &want)) in out.data().iter().zip(target.data()).enumerate() {
        if mask.data()[i] == 0 {
            max_abs = max_abs.max((got - want).abs());
        }
    }
    assert!(max_abs < 1e-3, "max abs error in masked region {max_abs}");
    guard.disarm();
}

// ---------------------------------------------------------------- 6

/// The long one: a real training run at desk scale. The corpus, grid,
/// step count, and network width are fixed; the epoch count and the EMA
/// window are sized to this regime (the trailing-10 epoch loss crosses the
/// 10% bar around epoch 125 at the default learning rate, and an EMA decay
/// of 0.99 spans the ~1200 optimizer steps such a run performs).
#[test]
fn criterion_6_training_smoke() {
    let guard = FailGuard::new(
        "criterion 6: training smoke (final loss < 10% of first epoch; beats temporal interpolation)",
    );
    let dir = std::env::temp_dir().join(format!("swathfill-smoke-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("sequences", "64"),
        ("eval_windows", "6"),
        ("epochs", "150"),
        ("ema_decay", "0.99"),
        ("ensemble", "8"),
        ("seed", "7"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.validate().unwrap();
    let data = dir.join("data");
    swathfill_core::pipeline::cmd_gen_data(&cfg, &data).unwrap();
    let summary = swathfill_core::pipeline::cmd_train(&cfg, &data, &dir.join("run"), None).unwrap();

    let first = summary.epoch_losses[0];
    let tail = &summary.epoch_losses[summary.epoch_losses.len() - 10..];
    let tail_mean = tail.iter().sum::<f64>() / tail.len() as f64;
    println!("  training: first-epoch loss {first:.4}, mean of final 10 epochs {tail_mean:.4}");
    assert!(
        tail_mean < 0.1 * first,
        "final loss {tail_mean} not below 10% of first epoch {first}"
    );

    // Held-out windows: ensemble-mean prediction vs temporal interpolation
    // (pure, and with spatial fill of never-observed pixels).
    let (net, store) = swathfill_core::pipeline::load_eval_model(&cfg, &summary.checkpoint).unwrap();
    let mut model_rmse = Vec::new();
    let mut tli_rmse = Vec::new();
    let mut tli_lf_rmse = Vec::new();
    for widx in 0..cfg.eval_windows {
        let item = swathfill_core::pipeline::load_sequence(&data, "eval", widx).unwrap();
        let xbar = condition::mask_apply(&item.x0, &item.mask).unwrap();
        let hole = HoleDomain::from_observation_mask(&item.mask);
        let out = swathfill_core::pipeline::sample_ensemble(
            &cfg,
            &net,
            &store,
            &xbar,
            &item.mask,
            &item.aux,
            cfg.ensemble,
            cfg.seed + widx as u64 * 1000,
        )
        .unwrap();
        model_rmse.push(metrics::rmse_hole(&out.mean, &item.x0, &hole).unwrap());
        tli_rmse.push(metrics::rmse_hole(&swathfill_core::baselines::tli(&xbar), &item.x0, &hole).unwrap());
        tli_lf_rmse.push(
            metrics::rmse_hole(&swathfill_core::baselines::tli_with_fill(&xbar).field, &item.x0, &hole).unwrap(),
        );
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m, t, tlf) = (mean(&model_rmse), mean(&tli_rmse), mean(&tli_lf_rmse));
    println!("  hole-RMSE over {} windows: model {m:.4}, tli {t:.4}, tli-lf {tlf:.4}", cfg.eval_windows);
    assert!(m < t, "model {m} does not beat temporal interpolation {t}");
    assert!(m < tlf, "model {m} does not beat interpolation + spatial fill {tlf}");
    let _ = std::fs::remove_dir_all(&dir);
    guard.disarm();
}

// ---------------------------------------------------------------- 7

fn brute_rmse(pred: &FieldVolume, truth: &FieldVolume, hole: &[u8]) -> f64 {
    let mut acc = 0.0;
    let mut n = 0;
    for (i, &hm) in hole.iter().enumerate() {
        if hm == 1 {
            let d = pred.data()[i] - truth.data()[i];
            acc += d * d;
            n += 1;
        }
    }
    (acc / n as f64).sqrt()
}

fn brute_tg_rmse(pred: &FieldVolume, truth: &FieldVolume, hole: &[u8]) -> f64 {
    let (l, h, w) = pred.dims();
    let mut acc = 0.0;
    let mut n = 0;
    for f in 1..l {
        for i in 0..h {
            for j in 0..w {
                if hole[(f * h + i) * w + j] == 1 {
                    let dp = pred.get(f, i, j) - pred.get(f - 1, i, j);
                    let dt = truth.get(f, i, j) - truth.get(f - 1, i, j);
                    acc += (dp - dt) * (dp - dt);
                    n += 1;
                }
            }
        }
    }
    (acc / n as f64).sqrt()
}

fn brute_pearson(pred: &FieldVolume, truth: &FieldVolume, hole: &[u8]) -> f64 {
    let xs: Vec<f64> = hole
        .iter()
        .enumerate()
        .filter(|(_, &hm)| hm == 1)
        .map(|(i, _)| pred.data()[i])
        .collect();
    let ys: Vec<f64> = hole
        .iter()
        .enumerate()
        .filter(|(_, &hm)| hm == 1)
        .map(|(i, _)| truth.data()[i])
        .collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    cov / (vx * vy).sqrt()
}

fn brute_ssim_single_scale(pred: &FieldVolume, truth: &FieldVolume, hole: &[u8]) -> f64 {
    // Direct translation of the masked per-frame SSIM, S = 1.
    let (l, h, w) = pred.dims();
    let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
    let mut acc = 0.0;
    for f in 0..l {
        let idx: Vec<usize> = (0..h * w).filter(|&p| hole[f * h * w + p] == 1).collect();
        let n = idx.len() as f64;
        let mp = idx.iter().map(|&p| pred.frame(f)[p]).sum::<f64>() / n;
        let mt = idx.iter().map(|&p| truth.frame(f)[p]).sum::<f64>() / n;
        let mut vp = 0.0;
        let mut vt = 0.0;
        let mut cov = 0.0;
        for &p in &idx {
            vp += (pred.frame(f)[p] - mp) * (pred.frame(f)[p] - mp);
            vt += (truth.frame(f)[p] - mt) * (truth.frame(f)[p] - mt);
            cov += (pred.frame(f)[p] - mp) * (truth.frame(f)[p] - mt);
        }
        vp /= n;
        vt /= n;
        cov /= n;
        acc += ((2.0 * mp * mt + c1) * (2.0 * cov + c2)) / ((mp * mp + mt * mt + c1) * (vp + vt + c2));
    }
    acc / l as f64
}

fn brute_bdi(pred: &FieldVolume, truth: &FieldVolume, hole: &[u8]) -> f64 {
    // Dilate the first-frame hole with a 3x3 element and intersect with the
    // complement, then average absolute error there.
    let (_, h, w) = pred.dims();
    let mut acc = 0.0;
    let mut n = 0usize;
    for i in 0..h as i64 {
        for j in 0..w as i64 {
            if hole[(i * w as i64 + j) as usize] == 1 {
                continue;
            }
            let mut touches = false;
            for di in -1..=1i64 {
                for dj in -1..=1i64 {
                    let (ni, nj) = (i + di, j + dj);
                    if ni >= 0 && nj >= 0 && ni < h as i64 && nj < w as i64 && hole[(ni * w as i64 + nj) as usize] == 1
                    {
                        touches = true;
                    }
                }
            }
            if touches {
                acc += (pred.get(0, i as usize, j as usize) - truth.get(0, i as usize, j as usize)).abs();
                n += 1;
            }
        }
    }
    acc / n as f64
}

#[test]
fn criterion_7_metric_oracles() {
    let guard = FailGuard::new("criterion 7: metrics match brute-force oracles to 1e-10; identity cases exact");
    let mut r = rng(907);
    let (l, h, w) = (3usize, 6usize, 8usize);
    let n = l * h * w;
    for _ in 0..50 {
        let pred = FieldVolume::from_vec(l, h, w, (0..n).map(|_| r.random::<f64>()).collect()).unwrap();
        let truth = FieldVolume::from_vec(l, h, w, (0..n).map(|_| r.random::<f64>()).collect()).unwrap();
        // Random observation mask with a guaranteed first-frame hole and at
        // least one observed pixel.
        let mut bits: Vec<u8> = (0..n).map(|_| u8::from(r.random::<f64>() < 0.6)).collect();
        bits[0] = 0;
        bits[1] = 1;
        for f in 1..l {
            bits[f * h * w + 2] = 0;
        }
        let mask = MaskVolume::from_vec(l, h, w, bits.clone()).unwrap();
        let hole = HoleDomain::from_observation_mask(&mask);
        let hole_bits: Vec<u8> = bits.iter().map(|&m| 1 - m).collect();

        let a = metrics::rmse_hole(&pred, &truth, &hole).unwrap();
        assert!((a - brute_rmse(&pred, &truth, &hole_bits)).abs() < 1e-10);
        let a = metrics::tg_rmse(&pred, &truth, &hole).unwrap();
        assert!((a - brute_tg_rmse(&pred, &truth, &hole_bits)).abs() < 1e-10);
        let a = metrics::pearson_hole(&pred, &truth, &hole).unwrap().unwrap();
        assert!((a - brute_pearson(&pred, &truth, &hole_bits)).abs() < 1e-10);
        let (a, _) = metrics::ms_ssim_hole(&pred, &truth, &hole, 1).unwrap();
        assert!((a - brute_ssim_single_scale(&pred, &truth, &hole_bits)).abs() < 1e-10);
        let a = metrics::bdi(&pred, &truth, &hole).unwrap();
        assert!((a - brute_bdi(&pred, &truth, &hole_bits)).abs() < 1e-10);

        // Identity trivial cases, exactly.
        assert_eq!(metrics::rmse_hole(&truth, &truth, &hole).unwrap(), 0.0);
        assert_eq!(metrics::tg_rmse(&truth, &truth, &hole).unwrap(), 0.0);
        assert_eq!(metrics::pearson_hole(&truth, &truth, &hole).unwrap().unwrap(), 1.0);
        assert_eq!(metrics::ms_ssim_hole(&truth, &truth, &hole, 1).unwrap().0, 1.0);
        assert_eq!(metrics::bdi(&truth, &truth, &hole).unwrap(), 0.0);
    }
    guard.disarm();
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_sensitivity_reproduction() {
    let guard = FailGuard::new("criterion 8: published per-group deltas reproduce the published contributions");
    // Reference per-group metric differences (rmse, ms_ssim, tg_rmse, bdi)
    // and the contributions they are documented to yield.
    let groups = [
        "masked_precip",
        "mask",
        "ir",
        "time",
        "topo",
        "lat",
        "lon",
    ];
    let raw: Vec<[f64; 4]> = vec![
        [0.032, -0.025, 0.020, 0.015],
        [0.010, -0.012, 0.006, 0.019],
        [0.018, -0.035, 0.003, 0.003],
        [-0.001, 0.000, 0.000, 0.002],
        [0.004, -0.004, 0.001, 0.001],
        [0.002, -0.001, 0.001, 0.001],
        [-0.000, -0.002, 0.000, 0.001],
    ];
    let published = [0.415, 0.217, 0.273, 0.004, 0.050, 0.028, 0.013];
    let names: Vec<String> = groups.iter().map(|s| s.to_string()).collect();
    let table = metrics::sensitivity_from_raw_deltas(&names, &raw).unwrap();
    let r = table.contribution.expect("nonzero total");
    for (i, (&got, &want)) in r.iter().zip(&published).enumerate() {
        assert!(
            (got - want).abs() <= 0.02,
            "group {}: contribution {got} vs published {want}",
            groups[i]
        );
    }
    let total: f64 = r.iter().sum();
    assert!((total - 1.0).abs() <= 0.001, "contributions sum to {total}");
    guard.disarm();
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_transform_exactness() {
    let guard = FailGuard::new("criterion 9: exponential and logistic transforms hit their anchor points");
    let tf = ExpTransform::new(5.0, 0.99).unwrap();
    assert!((tf.forward(5.0).unwrap() - 0.99).abs() < 1e-10);
    assert!((tf.inverse(0.99).unwrap() - 5.0).abs() < 1e-10);
    for x in [0.0, 0.5, 1.0, 2.5, 5.0, 10.0] {
        let y = tf.forward(x).unwrap();
        assert!((tf.inverse(y).unwrap() - x).abs() < 1e-10, "roundtrip at {x}");
    }
    for y in [0.0, 0.1, 0.5, 0.9, 0.99] {
        let x = tf.inverse(y).unwrap();
        assert!((tf.forward(x).unwrap() - y).abs() < 1e-10, "inverse roundtrip at {y}");
    }
    let ir = LogisticTransform::new(270.0, 230.0, 0.2, 0.8).unwrap();
    assert!((ir.forward(Some(230.0)) - 0.8).abs() < 1e-10);
    assert!((ir.forward(Some(270.0)) - 0.2).abs() < 1e-10);
    assert!((ir.forward(Some(250.0)) - 0.5).abs() < 1e-10);
    guard.disarm();
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_determinism() {
    let guard = FailGuard::new("criterion 10: identical config and seed give bitwise-identical checkpoint and samples");
    let dir = std::env::temp_dir().join(format!("swathfill-determinism-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("grid_h", "8"),
        ("grid_w", "16"),
        ("sequences", "4"),
        ("eval_windows", "1"),
        ("epochs", "2"),
        ("batch", "2"),
        ("base_channels", "4"),
        ("t_steps", "40"),
        ("ddim_steps", "10"),
        ("seed", "33"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.validate().unwrap();
    let data = dir.join("data");
    swathfill_core::pipeline::cmd_gen_data(&cfg, &data).unwrap();
    let mut bins = Vec::new();
    for run in ["a", "b"] {
        let out = dir.join(run);
        swathfill_core::pipeline::cmd_train(&cfg, &data, &out, None).unwrap();
        let sample_dir = out.join("samples");
        swathfill_core::pipeline::cmd_sample(
            &cfg,
            &out.join("checkpoint"),
            &data.join("eval_0000.masked"),
            &data.join("eval_0000.mask"),
            &data.join("eval_0000.aux"),
            &sample_dir,
            2,
        )
        .unwrap();
        let ckpt = std::fs::read(out.join("checkpoint.bin")).unwrap();
        let m0 = std::fs::read(sample_dir.join("member_00.bin")).unwrap();
        let m1 = std::fs::read(sample_dir.join("member_01.bin")).unwrap();
        let mean = std::fs::read(sample_dir.join("mean.bin")).unwrap();
        bins.push((ckpt, m0, m1, mean));
    }
    assert_eq!(bins[0].0, bins[1].0, "checkpoints differ");
    assert_eq!(bins[0].1, bins[1].1, "member 0 differs");
    assert_eq!(bins[0].2, bins[1].2, "member 1 differs");
    assert_eq!(bins[0].3, bins[1].3, "ensemble means differ");
    let _ = std::fs::remove_dir_all(&dir);
    guard.disarm();
}
