//! Diffusion noise schedules.
//!
//! Both schedules precompute `beta`, `alpha`, the cumulative product
//! `alpha_bar` (with `alpha_bar[0] = 1`), and `sigma = sqrt(beta)` for
//! timesteps `t = 1..=T`.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Precomputed noise schedule. Indexing follows diffusion convention:
/// `beta(t)`, `alpha(t)`, `sigma(t)` for `t in 1..=T`; `alpha_bar(t)` for
/// `t in 0..=T` with `alpha_bar(0) = 1`.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    beta: Vec<f64>,      // len T, beta[t-1]
    alpha: Vec<f64>,     // len T
    alpha_bar: Vec<f64>, // len T+1, alpha_bar[0] = 1
    sigma: Vec<f64>,     // len T
}

impl NoiseSchedule {
    /// Linear interpolation of `beta` from `beta_min` (first step) to
    /// `beta_max` (last step).
    pub fn linear(t_steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::invalid("linear_schedule", "T must be >= 1"));
        }
        if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::invalid(
                "linear_schedule",
                format!("need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"),
            ));
        }
        let beta: Vec<f64> = (0..t_steps)
            .map(|i| {
                if t_steps == 1 {
                    beta_min
                } else {
                    beta_min + (i as f64 / (t_steps - 1) as f64) * (beta_max - beta_min)
                }
            })
            .collect();
        Ok(Self::from_betas(ScheduleKind::Linear, beta))
    }

    /// Cosine schedule: `alpha_bar` follows a squared-cosine ramp with
    /// offset `s`; per-step `beta` derived from consecutive ratios and
    /// clamped to at most 0.999.
    pub fn cosine(t_steps: usize, s: f64) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::invalid("cosine_schedule", "T must be >= 1"));
        }
        if s <= 0.0 {
            return Err(Error::invalid("cosine_schedule", format!("offset s must be > 0, got {s}")));
        }
        let f = |t: f64| {
            let a = ((t + s) / (1.0 + s)) * std::f64::consts::FRAC_PI_2;
            a.cos() * a.cos()
        };
        let f0 = f(0.0);
        let mut beta = Vec::with_capacity(t_steps);
        let mut prev = 1.0; // alpha_bar at j = 0 after normalization
        for j in 1..=t_steps {
            let cur = f(j as f64 / t_steps as f64) / f0;
            let b = (1.0 - cur / prev).min(0.999);
            beta.push(b);
            prev = cur;
        }
        Ok(Self::from_betas(ScheduleKind::Cosine, beta))
    }

    fn from_betas(kind: ScheduleKind, beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|&b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len() + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for &a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let sigma = beta.iter().map(|&b| b.sqrt()).collect();
        NoiseSchedule {
            kind,
            beta,
            alpha,
            alpha_bar,
            sigma,
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(Error::invalid(
                "NoiseSchedule",
                format!("timestep {} outside [1, {}]", t, self.len()),
            ));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative product of `alpha`; defined for `t in 0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }
}
