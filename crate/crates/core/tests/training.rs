//! Training-path tests: the exact-velocity oracle gives zero loss, random
//! initialization gives a finite positive loss (with condition dropout
//! active), the near-noiseless ancestral chain is a fixed-point map, and
//! the bootstrap interval achieves its nominal coverage.

mod common;

use common::rng;
use rand::rngs::StdRng;
use rand_distr::{Distribution, StandardNormal};
use swathfill_core::diffusion::{
    ancestral_step, lat_weight, reconstruct, rf_train_step, train_step, v_loss, ForwardMode, TapeDenoiser, TrainItem,
};
use swathfill_core::field::{FieldVolume, GridSpec};
use swathfill_core::metrics::bootstrap_ci;
use swathfill_core::schedule::NoiseSchedule;
use swathfill_core::tensor::{AdamConfig, AdamState, EmaState, ParamStore, Tape, Tensor, Var};
use swathfill_core::unet::{UNet, UNetConfig};
use swathfill_core::Result;

/// A tape-level oracle computing the exact velocity from the captured
/// clean targets: `v = (sqrt(abar) x_t - x0) / sqrt(1 - abar)`.
struct VOracle {
    sched: NoiseSchedule,
    x0: Vec<FieldVolume>,
}

impl TapeDenoiser for VOracle {
    fn forward(
        &self,
        tape: &mut Tape,
        _store: &ParamStore,
        x_t: &Tensor,
        times: &[f64],
        _cond: &Tensor,
        _mode: ForwardMode,
        _rng: &mut StdRng,
    ) -> Result<Var> {
        let shape = x_t.shape().to_vec();
        let plane: usize = shape[2..].iter().product();
        let mut out = Vec::with_capacity(x_t.numel());
        for (bi, &t) in times.iter().enumerate() {
            let ab = self.sched.alpha_bar(t as usize);
            let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
            let x_slice = &x_t.data()[bi * plane..(bi + 1) * plane];
            for (xt, &x0) in x_slice.iter().zip(self.x0[bi].data()) {
                out.push((sa * xt - x0) / sb);
            }
        }
        Ok(tape.leaf_owned(shape, out, false))
    }
}

fn make_items(grid: &GridSpec, n: usize, seed: u64) -> Vec<TrainItem> {
    let cfg = swathfill_core::synthgen::SynthConfig {
        grid: *grid,
        seed,
        ..swathfill_core::synthgen::SynthConfig::desk_default(seed)
    };
    swathfill_core::synthgen::gen_dataset(&cfg, n)
        .unwrap()
        .into_iter()
        .map(|s| TrainItem {
            x0: s.truth,
            mask: s.mask,
            aux: s.aux,
        })
        .collect()
}

#[test]
fn exact_velocity_oracle_has_zero_loss() {
    let grid = GridSpec::new(3, 16, 32).unwrap();
    let items = make_items(&grid, 2, 51);
    let sched = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
    let lat = lat_weight(&grid, 0.01).unwrap();
    let mut r = rng(52);
    // The oracle needs the batch's x0 in the order train_step consumes it.
    let oracle = VOracle {
        sched: sched.clone(),
        x0: items.iter().map(|i| i.x0.clone()).collect(),
    };
    let refs: Vec<&TrainItem> = items.iter().collect();
    let store = ParamStore::new();
    let loss = v_loss(&refs, &oracle, &store, &sched, &lat, &mut r, ForwardMode::Eval).unwrap();
    assert!(loss.abs() < 1e-20, "oracle loss {loss}");
}

#[test]
fn random_init_loss_is_finite_positive_with_dropout() {
    let grid = GridSpec::new(2, 8, 16).unwrap();
    let mut items = make_items(&grid, 2, 53);
    for item in &mut items {
        // Shrink to the smaller grid by regenerating is unnecessary; the
        // generator already produced this grid.
        assert_eq!(item.x0.dims(), (2, 8, 16));
    }
    let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
    let lat = lat_weight(&grid, 0.01).unwrap();
    let mut r = rng(54);
    let mut store = ParamStore::new();
    let cfg = UNetConfig {
        base_channels: 4,
        p_drop: 1.0, // force a condition group drop on every item
        ..UNetConfig::default()
    };
    let net = UNet::new(cfg, &mut store, &mut r).unwrap();
    let mut opt = AdamState::new(AdamConfig::default(), &store);
    let mut ema = EmaState::new(0.999, &store).unwrap();
    let refs: Vec<&TrainItem> = items.iter().collect();
    let loss = train_step(&refs, &net, &mut store, &sched, &mut opt, &mut ema, &lat, &mut r).unwrap();
    assert!(loss.is_finite() && loss > 0.0, "loss {loss}");
    // Gradients were defined and consumed: a second step also succeeds.
    let loss2 = train_step(&refs, &net, &mut store, &sched, &mut opt, &mut ema, &lat, &mut r).unwrap();
    assert!(loss2.is_finite() && loss2 > 0.0);

    // Rectified-flow step shares the path and must also stay finite.
    let rf_loss = rf_train_step(&refs, &net, &mut store, &mut opt, &mut ema, &lat, &mut r).unwrap();
    assert!(rf_loss.is_finite() && rf_loss > 0.0);
}

#[test]
fn near_noiseless_ancestral_chain_holds_signal_estimate_fixed() {
    // With beta uniformly tiny the chain is essentially deterministic and
    // the oracle's signal estimate must stay pinned to the target.
    let sched = NoiseSchedule::linear(40, 1e-12, 1e-12).unwrap();
    let n = 32;
    let target: Vec<f64> = (0..n).map(|i| (i % 9) as f64 / 9.0).collect();
    let mut r = rng(55);
    let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
    let mut first_estimate: Option<Vec<f64>> = None;
    for t in (1..=40usize).rev() {
        let ab = sched.alpha_bar(t);
        let v_hat: Vec<f64> = x
            .iter()
            .zip(&target)
            .map(|(&xt, &x0)| (ab.sqrt() * xt - x0) / (1.0 - ab).sqrt())
            .collect();
        let (_, x0_hat) = reconstruct(&x, &v_hat, t, &sched).unwrap();
        match &first_estimate {
            None => first_estimate = Some(x0_hat.clone()),
            Some(first) => {
                for (a, b) in x0_hat.iter().zip(first) {
                    assert!((a - b).abs() < 1e-6, "signal estimate drifted: {a} vs {b}");
                }
            }
        }
        let z = vec![0.0; n];
        x = ancestral_step(&x, &v_hat, t, &sched, &z).unwrap();
    }
    // And the chain lands on the target.
    for (got, want) in x.iter().zip(&target) {
        assert!((got - want).abs() < 1e-6);
    }
}

#[test]
fn bootstrap_interval_achieves_nominal_coverage() {
    // Monte-Carlo coverage study: 95% percentile intervals over Gaussian
    // samples should cover the true mean about 95% of the time (percentile
    // bootstrap undercovers slightly at small n).
    let mut r = rng(56);
    let trials = 400;
    let n = 40;
    let mut covered = 0usize;
    for trial in 0..trials {
        let samples: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let (lo, hi) = bootstrap_ci(&samples, 0.95, 1000, 1000 + trial as u64).unwrap();
        if lo <= 0.0 && 0.0 <= hi {
            covered += 1;
        }
    }
    let coverage = covered as f64 / trials as f64;
    assert!(
        (0.88..=0.985).contains(&coverage),
        "coverage {coverage} outside the expected band"
    );
}

#[test]
fn nan_loss_aborts_before_updates() {
    // A denoiser returning NaN must surface a numeric error from the
    // training step without touching parameters.
    struct NanModel;
    impl TapeDenoiser for NanModel {
        fn forward(
            &self,
            tape: &mut Tape,
            _store: &ParamStore,
            x_t: &Tensor,
            _times: &[f64],
            _cond: &Tensor,
            _mode: ForwardMode,
            _rng: &mut StdRng,
        ) -> Result<Var> {
            let shape = x_t.shape().to_vec();
            let n = x_t.numel();
            Ok(tape.leaf_owned(shape, vec![f64::NAN; n], false))
        }
    }
    let grid = GridSpec::new(2, 8, 16).unwrap();
    let items = make_items(&grid, 1, 57);
    let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
    let lat = lat_weight(&grid, 0.01).unwrap();
    let mut r = rng(58);
    let mut store = ParamStore::new();
    store.register("w", Tensor::from_vec(&[1], vec![0.5]).unwrap());
    let mut opt = AdamState::new(AdamConfig::default(), &store);
    let mut ema = EmaState::new(0.999, &store).unwrap();
    let refs: Vec<&TrainItem> = items.iter().collect();
    let err = train_step(&refs, &NanModel, &mut store, &sched, &mut opt, &mut ema, &lat, &mut r);
    assert!(matches!(err, Err(swathfill_core::Error::Numeric { .. })));
    assert_eq!(opt.step_count(), 0);
}
