//! Run configuration: desk-scale defaults, a `key = value` file format,
//! and flag-style overrides. Every key can be set from either source;
//! values are validated against module preconditions at load time.

use crate::error::{Error, Result};
use crate::field::GridSpec;
use crate::schedule::{NoiseSchedule, ScheduleKind};
use crate::unet::UNetConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Ddpm,
    RectifiedFlow,
    Supervised,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Ddpm => "ddpm",
            ModelKind::RectifiedFlow => "rf",
            ModelKind::Supervised => "supervised",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(ModelKind::Ddpm),
            "rf" => Ok(ModelKind::RectifiedFlow),
            "supervised" => Ok(ModelKind::Supervised),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerChoice {
    Ancestral,
    Ddim,
}

impl SamplerChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplerChoice::Ancestral => "ancestral",
            SamplerChoice::Ddim => "ddim",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ancestral" => Ok(SamplerChoice::Ancestral),
            "ddim" => Ok(SamplerChoice::Ddim),
            other => Err(Error::Config(format!("unknown sampler {other:?}"))),
        }
    }
}

/// Complete run configuration with desk-scale defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // Grid.
    pub grid_l: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    // Diffusion.
    pub t_steps: usize,
    pub schedule: ScheduleKind,
    pub beta_min: f64,
    pub beta_max: f64,
    pub cosine_s: f64,
    pub sampler: SamplerChoice,
    pub ddim_steps: usize,
    pub rf_steps: usize,
    pub model: ModelKind,
    // Network.
    pub base_channels: usize,
    // Training.
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    pub p_drop: f64,
    pub ema_decay: f64,
    pub lat_eps: f64,
    // Value transforms.
    pub x_ref: f64,
    pub p_sat: f64,
    pub ir_x_low: f64,
    pub ir_x_high: f64,
    pub ir_s_low: f64,
    pub ir_s_high: f64,
    pub topo_x_low: f64,
    pub topo_x_high: f64,
    pub topo_s_low: f64,
    pub topo_s_high: f64,
    // Sampling / evaluation.
    pub ensemble: usize,
    pub ms_ssim_scales: usize,
    pub bootstrap_resamples: usize,
    // Synthetic data.
    pub sequences: usize,
    pub eval_windows: usize,
    pub blobs: usize,
    pub swath_width: usize,
    pub swath_shift: f64,
    pub swath_bands: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid_l: 3,
            grid_h: 16,
            grid_w: 32,
            t_steps: 200,
            schedule: ScheduleKind::Linear,
            beta_min: 1e-4,
            beta_max: 0.02,
            cosine_s: 0.008,
            sampler: SamplerChoice::Ddim,
            ddim_steps: 50,
            rf_steps: 50,
            model: ModelKind::Ddpm,
            base_channels: 16,
            lr: 1e-4,
            weight_decay: 1e-4,
            epochs: 200,
            batch: 8,
            p_drop: 0.2,
            ema_decay: 0.999,
            lat_eps: 0.01,
            x_ref: 5.0,
            p_sat: 0.99,
            ir_x_low: 270.0,
            ir_x_high: 230.0,
            ir_s_low: 0.2,
            ir_s_high: 0.8,
            topo_x_low: 200.0,
            topo_x_high: 2000.0,
            topo_s_low: 0.2,
            topo_s_high: 0.8,
            ensemble: 16,
            ms_ssim_scales: 3,
            bootstrap_resamples: 10_000,
            sequences: 64,
            eval_windows: 12,
            blobs: 5,
            swath_width: 12,
            swath_shift: 7.0,
            swath_bands: 1,
            seed: 42,
        }
    }
}

macro_rules! config_keys {
    ($($key:literal => $field:ident : $kind:tt),+ $(,)?) => {
        /// Every configuration key, in declaration order. The CLI exposes
        /// one override flag per key.
        pub const CONFIG_KEYS: &[&str] = &[$($key),+];

        impl RunConfig {
            /// Applies one `key = value` assignment.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => config_keys!(@set self, $field, $kind, value, $key),)+
                    other => return Err(Error::Config(format!("unknown config key {other:?}"))),
                }
                Ok(())
            }

            /// Serializes every key in declaration order.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(s.push_str(&format!("{} = {}\n", $key, config_keys!(@get self, $field, $kind)));)+
                s
            }
        }
    };
    (@set $self:ident, $field:ident, usize, $value:ident, $key:literal) => {
        $self.$field = $value.parse::<usize>().map_err(|_| Error::Config(format!("{}: expected integer, got {:?}", $key, $value)))?
    };
    (@set $self:ident, $field:ident, u64, $value:ident, $key:literal) => {
        $self.$field = $value.parse::<u64>().map_err(|_| Error::Config(format!("{}: expected integer, got {:?}", $key, $value)))?
    };
    (@set $self:ident, $field:ident, f64, $value:ident, $key:literal) => {
        $self.$field = $value.parse::<f64>().map_err(|_| Error::Config(format!("{}: expected number, got {:?}", $key, $value)))?
    };
    (@set $self:ident, $field:ident, schedule, $value:ident, $key:literal) => {
        $self.$field = match $value {
            "linear" => ScheduleKind::Linear,
            "cosine" => ScheduleKind::Cosine,
            other => return Err(Error::Config(format!("{}: unknown schedule {other:?}", $key))),
        }
    };
    (@set $self:ident, $field:ident, sampler, $value:ident, $key:literal) => {
        $self.$field = SamplerChoice::parse($value)?
    };
    (@set $self:ident, $field:ident, model, $value:ident, $key:literal) => {
        $self.$field = ModelKind::parse($value)?
    };
    (@get $self:ident, $field:ident, schedule) => {
        match $self.$field { ScheduleKind::Linear => "linear", ScheduleKind::Cosine => "cosine" }
    };
    (@get $self:ident, $field:ident, sampler) => { $self.$field.as_str() };
    (@get $self:ident, $field:ident, model) => { $self.$field.as_str() };
    (@get $self:ident, $field:ident, $kind:tt) => { $self.$field };
}

config_keys! {
    "grid_l" => grid_l: usize,
    "grid_h" => grid_h: usize,
    "grid_w" => grid_w: usize,
    "t_steps" => t_steps: usize,
    "schedule" => schedule: schedule,
    "beta_min" => beta_min: f64,
    "beta_max" => beta_max: f64,
    "cosine_s" => cosine_s: f64,
    "sampler" => sampler: sampler,
    "ddim_steps" => ddim_steps: usize,
    "rf_steps" => rf_steps: usize,
    "model" => model: model,
    "base_channels" => base_channels: usize,
    "lr" => lr: f64,
    "weight_decay" => weight_decay: f64,
    "epochs" => epochs: usize,
    "batch" => batch: usize,
    "p_drop" => p_drop: f64,
    "ema_decay" => ema_decay: f64,
    "lat_eps" => lat_eps: f64,
    "x_ref" => x_ref: f64,
    "p_sat" => p_sat: f64,
    "ir_x_low" => ir_x_low: f64,
    "ir_x_high" => ir_x_high: f64,
    "ir_s_low" => ir_s_low: f64,
    "ir_s_high" => ir_s_high: f64,
    "topo_x_low" => topo_x_low: f64,
    "topo_x_high" => topo_x_high: f64,
    "topo_s_low" => topo_s_low: f64,
    "topo_s_high" => topo_s_high: f64,
    "ensemble" => ensemble: usize,
    "ms_ssim_scales" => ms_ssim_scales: usize,
    "bootstrap_resamples" => bootstrap_resamples: usize,
    "sequences" => sequences: usize,
    "eval_windows" => eval_windows: usize,
    "blobs" => blobs: usize,
    "swath_width" => swath_width: usize,
    "swath_shift" => swath_shift: f64,
    "swath_bands" => swath_bands: usize,
    "seed" => seed: u64,
}

impl RunConfig {
    /// Parses a config file: `key = value` lines, `#` comments.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", ln + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// Checks every value against the preconditions of the module that
    /// consumes it.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.grid_l == 0 {
            return fail("grid_l must be >= 1".into());
        }
        if self.grid_h < 3 || self.grid_w < 2 {
            return fail(format!("grid ({}, {}) too small", self.grid_h, self.grid_w));
        }
        if self.grid_h % 8 != 0 || self.grid_w % 8 != 0 {
            return fail(format!(
                "grid ({}, {}) must be divisible by 8",
                self.grid_h, self.grid_w
            ));
        }
        if self.t_steps == 0 {
            return fail("t_steps must be >= 1".into());
        }
        if !(0.0 < self.beta_min && self.beta_min <= self.beta_max && self.beta_max < 1.0) {
            return fail(format!("betas ({}, {}) out of range", self.beta_min, self.beta_max));
        }
        if self.cosine_s <= 0.0 {
            return fail("cosine_s must be > 0".into());
        }
        if self.ddim_steps == 0 || self.ddim_steps > self.t_steps {
            return fail(format!(
                "ddim_steps {} outside [1, t_steps = {}]",
                self.ddim_steps, self.t_steps
            ));
        }
        if self.rf_steps == 0 {
            return fail("rf_steps must be >= 1".into());
        }
        if self.base_channels % 4 != 0 || self.base_channels == 0 {
            return fail(format!("base_channels {} must be a positive multiple of 4", self.base_channels));
        }
        if self.lr <= 0.0 || self.weight_decay < 0.0 {
            return fail("lr must be > 0 and weight_decay >= 0".into());
        }
        if self.batch == 0 {
            return fail("batch must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.p_drop) {
            return fail(format!("p_drop {} outside [0, 1]", self.p_drop));
        }
        if !(0.0 < self.ema_decay && self.ema_decay < 1.0) {
            return fail(format!("ema_decay {} outside (0, 1)", self.ema_decay));
        }
        if !(0.0..=1.0).contains(&self.lat_eps) {
            return fail(format!("lat_eps {} outside [0, 1]", self.lat_eps));
        }
        if self.x_ref <= 0.0 || !(0.0 < self.p_sat && self.p_sat < 1.0) {
            return fail("x_ref must be > 0 and p_sat in (0, 1)".into());
        }
        for (name, lo, hi, sl, sh) in [
            ("ir", self.ir_x_low, self.ir_x_high, self.ir_s_low, self.ir_s_high),
            ("topo", self.topo_x_low, self.topo_x_high, self.topo_s_low, self.topo_s_high),
        ] {
            if lo == hi {
                return fail(format!("{name} thresholds must differ"));
            }
            for s in [sl, sh] {
                if !(0.0 < s && s < 1.0) {
                    return fail(format!("{name} target {s} outside (0, 1)"));
                }
            }
        }
        if self.ensemble == 0 {
            return fail("ensemble must be >= 1".into());
        }
        if self.ms_ssim_scales == 0 {
            return fail("ms_ssim_scales must be >= 1".into());
        }
        if self.bootstrap_resamples == 0 {
            return fail("bootstrap_resamples must be >= 1".into());
        }
        if self.sequences == 0 || self.eval_windows == 0 {
            return fail("sequences and eval_windows must be >= 1".into());
        }
        if self.swath_width == 0 || self.swath_bands == 0 {
            return fail("swath_width and swath_bands must be >= 1".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid_l, self.grid_h, self.grid_w).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        match self.schedule {
            ScheduleKind::Linear => NoiseSchedule::linear(self.t_steps, self.beta_min, self.beta_max),
            ScheduleKind::Cosine => NoiseSchedule::cosine(self.t_steps, self.cosine_s),
        }
        .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn unet_config(&self) -> UNetConfig {
        UNetConfig {
            base_channels: self.base_channels,
            p_drop: self.p_drop,
            with_time: self.model != ModelKind::Supervised,
            ..UNetConfig::default()
        }
    }

    pub fn synth_config(&self) -> Result<crate::synthgen::SynthConfig> {
        Ok(crate::synthgen::SynthConfig {
            grid: self.grid()?,
            blobs: self.blobs,
            advect: (0.3, 1.5),
            advect_jitter: 0.4,
            blob_scale: 1.8,
            amp_max: 1.2 * self.x_ref,
            swath_width: self.swath_width,
            swath_shift: self.swath_shift,
            swath_bands: self.swath_bands,
            transform: crate::condition::ExpTransform::new(self.x_ref, self.p_sat)
                .map_err(|e| Error::Config(e.to_string()))?,
            seed: self.seed,
        })
    }
}
