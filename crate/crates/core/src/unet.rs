//! The 3D U-Net velocity predictor: a three-stage encoder/decoder over
//! `(B, C, L, H, W)` volumes with a parallel condition encoder whose
//! features are added at every stage, sinusoidal time conditioning through
//! per-stage linear projections, and squeeze-and-excitation channel gating
//! inside every double convolution.

use rand::rngs::StdRng;
use rand::RngExt;

use crate::condition::CHANNEL_GROUPS;
use crate::diffusion::{ForwardMode, TapeDenoiser};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Architecture constants. Channel widths scale with `base_channels`; the
/// remaining ratios are fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub cond_channels: usize,
    pub base_channels: usize,
    pub multipliers: [usize; 4],
    pub se_reduction: usize,
    pub time_embed_dim: usize,
    pub time_mlp_hidden: usize,
    pub dropout3d: f64,
    pub p_drop: f64,
    pub with_time: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            in_channels: 1,
            cond_channels: 10,
            base_channels: 16,
            multipliers: [1, 2, 4, 8],
            se_reduction: 16,
            time_embed_dim: 128,
            time_mlp_hidden: 512,
            dropout3d: 0.0,
            p_drop: 0.2,
            with_time: true,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels % 4 != 0 {
            return Err(Error::invalid(
                "UNetConfig",
                format!("base_channels {} must be divisible by 4", self.base_channels),
            ));
        }
        if !self.multipliers.windows(2).all(|p| p[0] < p[1]) {
            return Err(Error::invalid("UNetConfig", "multipliers must be strictly increasing"));
        }
        if self.in_channels == 0 || self.cond_channels == 0 {
            return Err(Error::invalid("UNetConfig", "channel counts must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_drop) || !(0.0..=1.0).contains(&self.dropout3d) {
            return Err(Error::invalid("UNetConfig", "dropout probabilities must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Stage channel widths `[c1, c2, c3, c4]`.
    pub fn stage_channels(&self) -> [usize; 4] {
        self.multipliers.map(|m| m * self.base_channels)
    }
}

/// Group count rule for GroupNorm.
pub fn group_count(channels: usize) -> usize {
    (channels / 4).clamp(4, 32).min(channels)
}

const GN_EPS: f64 = 1e-5;

struct Conv {
    w: ParamId,
    b: ParamId,
    pad: [usize; 3],
}

struct Norm {
    gamma: ParamId,
    beta: ParamId,
    groups: usize,
}

struct LinearP {
    w: ParamId,
    b: ParamId,
}

struct DoubleConv {
    conv1: Conv,
    norm1: Norm,
    conv2: Conv,
    norm2: Norm,
    se_fc1: LinearP,
    se_fc2: LinearP,
}

struct Decoder {
    up_w: ParamId,
    up_b: ParamId,
    dc: DoubleConv,
}

struct TimePath {
    mlp1: LinearP,
    mlp2: LinearP,
    /// inc, e1, e2, e3, d1, d2, d3.
    proj: Vec<LinearP>,
}

/// Parameter handles plus configuration; the values live in a [`ParamStore`].
pub struct UNet {
    cfg: UNetConfig,
    inc: DoubleConv,
    enc: Vec<DoubleConv>,
    dec: Vec<Decoder>,
    head: Conv,
    cond_inc: DoubleConv,
    cond_enc: Vec<DoubleConv>,
    time: Option<TimePath>,
}

fn uniform(rng: &mut StdRng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

fn register_conv(
    store: &mut ParamStore,
    rng: &mut StdRng,
    name: &str,
    co: usize,
    ci: usize,
    k: [usize; 3],
    pad: [usize; 3],
) -> Conv {
    let fan_in = (ci * k[0] * k[1] * k[2]) as f64;
    let bound = 1.0 / fan_in.sqrt();
    let n = co * ci * k[0] * k[1] * k[2];
    let w = Tensor::from_vec(&[co, ci, k[0], k[1], k[2]], uniform(rng, n, bound)).expect("conv weight shape");
    let b = Tensor::from_vec(&[co], uniform(rng, co, bound)).expect("conv bias shape");
    Conv {
        w: store.register(format!("{name}.weight"), w),
        b: store.register(format!("{name}.bias"), b),
        pad,
    }
}

fn register_norm(store: &mut ParamStore, name: &str, channels: usize) -> Norm {
    Norm {
        gamma: store.register(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
        beta: store.register(format!("{name}.beta"), Tensor::zeros(&[channels])),
        groups: group_count(channels),
    }
}

fn register_linear(store: &mut ParamStore, rng: &mut StdRng, name: &str, dout: usize, din: usize) -> LinearP {
    let bound = 1.0 / (din as f64).sqrt();
    let w = Tensor::from_vec(&[dout, din], uniform(rng, dout * din, bound)).expect("linear weight");
    let b = Tensor::from_vec(&[dout], uniform(rng, dout, bound)).expect("linear bias");
    LinearP {
        w: store.register(format!("{name}.weight"), w),
        b: store.register(format!("{name}.bias"), b),
    }
}

fn register_double_conv(
    store: &mut ParamStore,
    rng: &mut StdRng,
    name: &str,
    ci: usize,
    co: usize,
    se_reduction: usize,
) -> DoubleConv {
    let k = [3, 3, 3];
    let pad = [1, 1, 1];
    let bottleneck = (co / se_reduction).max(1);
    DoubleConv {
        conv1: register_conv(store, rng, &format!("{name}.conv1"), co, ci, k, pad),
        norm1: register_norm(store, &format!("{name}.norm1"), co),
        conv2: register_conv(store, rng, &format!("{name}.conv2"), co, co, k, pad),
        norm2: register_norm(store, &format!("{name}.norm2"), co),
        se_fc1: register_linear(store, rng, &format!("{name}.se.fc1"), bottleneck, co),
        se_fc2: register_linear(store, rng, &format!("{name}.se.fc2"), co, bottleneck),
    }
}

impl UNet {
    /// Registers all parameters into `store` with shape-scaled uniform init.
    pub fn new(cfg: UNetConfig, store: &mut ParamStore, rng: &mut StdRng) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.stage_channels();
        let r = cfg.se_reduction;
        let inc = register_double_conv(store, rng, "inc", cfg.in_channels, c[0], r);
        let enc = vec![
            register_double_conv(store, rng, "enc1", c[0], c[1], r),
            register_double_conv(store, rng, "enc2", c[1], c[2], r),
            register_double_conv(store, rng, "enc3", c[2], c[3], r),
        ];
        let mut dec = Vec::new();
        for (i, (hi, lo)) in [(c[3], c[2]), (c[2], c[1]), (c[1], c[0])].iter().enumerate() {
            let name = format!("dec{}", i + 1);
            let bound = 1.0 / (*hi as f64 * 4.0).sqrt();
            let w = Tensor::from_vec(&[*hi, *lo, 1, 2, 2], uniform(rng, hi * lo * 4, bound))
                .expect("transpose weight");
            let b = Tensor::from_vec(&[*lo], uniform(rng, *lo, bound)).expect("transpose bias");
            dec.push(Decoder {
                up_w: store.register(format!("{name}.up.weight"), w),
                up_b: store.register(format!("{name}.up.bias"), b),
                dc: register_double_conv(store, rng, &format!("{name}.conv"), 2 * lo, *lo, r),
            });
        }
        let head = register_conv(store, rng, "head", 1, c[0], [1, 1, 1], [0, 0, 0]);
        let cond_inc = register_double_conv(store, rng, "cond.inc", cfg.cond_channels, c[0], r);
        let cond_enc = vec![
            register_double_conv(store, rng, "cond.enc1", c[0], c[1], r),
            register_double_conv(store, rng, "cond.enc2", c[1], c[2], r),
            register_double_conv(store, rng, "cond.enc3", c[2], c[3], r),
        ];
        let time = if cfg.with_time {
            let proj_dims = [c[0], c[1], c[2], c[3], c[2], c[1], c[0]];
            let names = ["inc", "e1", "e2", "e3", "d1", "d2", "d3"];
            Some(TimePath {
                mlp1: register_linear(store, rng, "time.mlp1", cfg.time_mlp_hidden, cfg.time_embed_dim),
                mlp2: register_linear(store, rng, "time.mlp2", cfg.time_mlp_hidden, cfg.time_mlp_hidden),
                proj: proj_dims
                    .iter()
                    .zip(names)
                    .map(|(&d, n)| register_linear(store, rng, &format!("time.proj.{n}"), d, cfg.time_mlp_hidden))
                    .collect(),
            })
        } else {
            None
        };
        Ok(UNet {
            cfg,
            inc,
            enc,
            dec,
            head,
            cond_inc,
            cond_enc,
            time,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    /// Analytic parameter count; must equal the number of registered values.
    pub fn param_count(cfg: &UNetConfig) -> usize {
        let c = cfg.stage_channels();
        let dc = |ci: usize, co: usize| {
            let bott = (co / cfg.se_reduction).max(1);
            27 * co * ci + co          // conv1
                + 2 * co               // norm1
                + 27 * co * co + co    // conv2
                + 2 * co               // norm2
                + bott * co + bott     // se fc1
                + co * bott + co       // se fc2
        };
        let mut n = dc(cfg.in_channels, c[0]) + dc(c[0], c[1]) + dc(c[1], c[2]) + dc(c[2], c[3]);
        for (hi, lo) in [(c[3], c[2]), (c[2], c[1]), (c[1], c[0])] {
            n += hi * lo * 4 + lo; // transposed conv
            n += dc(2 * lo, lo);
        }
        n += c[0] + 1; // head 1x1x1
        n += dc(cfg.cond_channels, c[0]) + dc(c[0], c[1]) + dc(c[1], c[2]) + dc(c[2], c[3]);
        if cfg.with_time {
            n += cfg.time_mlp_hidden * cfg.time_embed_dim + cfg.time_mlp_hidden;
            n += cfg.time_mlp_hidden * cfg.time_mlp_hidden + cfg.time_mlp_hidden;
            for d in [c[0], c[1], c[2], c[3], c[2], c[1], c[0]] {
                n += d * cfg.time_mlp_hidden + d;
            }
        }
        n
    }

    fn double_conv(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        p: &DoubleConv,
        x: Var,
        mode: ForwardMode,
        rng: &mut StdRng,
    ) -> Result<Var> {
        let mut h = x;
        for (conv, norm) in [(&p.conv1, &p.norm1), (&p.conv2, &p.norm2)] {
            let w = tape.param(store, conv.w);
            let b = tape.param(store, conv.b);
            h = tape.conv3d(h, w, b, [1, 1, 1], conv.pad)?;
            let gamma = tape.param(store, norm.gamma);
            let beta = tape.param(store, norm.beta);
            h = tape.group_norm(h, gamma, beta, norm.groups, GN_EPS)?;
            h = tape.silu(h);
            if mode == ForwardMode::Train && self.cfg.dropout3d > 0.0 {
                let shape = tape.shape(h);
                let (bsz, ch) = (shape[0], shape[1]);
                let p_keep = 1.0 - self.cfg.dropout3d;
                let keep: Vec<f64> = (0..bsz * ch)
                    .map(|_| if rng.random::<f64>() < p_keep { 1.0 / p_keep } else { 0.0 })
                    .collect();
                h = tape.dropout3d(h, keep)?;
            }
        }
        // Squeeze-and-excitation gate.
        let pooled = tape.adaptive_avg_pool3d(h)?;
        let shape = tape.shape(pooled).to_vec();
        let flat = tape.reshape(pooled, &[shape[0], shape[1]])?;
        let w1 = tape.param(store, p.se_fc1.w);
        let b1 = tape.param(store, p.se_fc1.b);
        let mid = tape.linear(flat, w1, b1)?;
        let mid = tape.silu(mid);
        let w2 = tape.param(store, p.se_fc2.w);
        let b2 = tape.param(store, p.se_fc2.b);
        let gate_pre = tape.linear(mid, w2, b2)?;
        let gate = tape.sigmoid(gate_pre);
        tape.mul_channel(h, gate)
    }

    fn encoder_block(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        p: &DoubleConv,
        x: Var,
        mode: ForwardMode,
        rng: &mut StdRng,
    ) -> Result<Var> {
        let pooled = tape.maxpool3d(x)?;
        self.double_conv(tape, store, p, pooled, mode, rng)
    }

    fn decoder_block(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        p: &Decoder,
        x: Var,
        skip: Var,
        mode: ForwardMode,
        rng: &mut StdRng,
    ) -> Result<Var> {
        let w = tape.param(store, p.up_w);
        let b = tape.param(store, p.up_b);
        let up = tape.conv_transpose3d(x, w, b, [1, 2, 2])?;
        let cat = tape.concat(&[up, skip], 1)?;
        self.double_conv(tape, store, &p.dc, cat, mode, rng)
    }

    fn linear_through(&self, tape: &mut Tape, store: &ParamStore, p: &LinearP, x: Var) -> Result<Var> {
        let w = tape.param(store, p.w);
        let b = tape.param(store, p.b);
        tape.linear(x, w, b)
    }

    /// Sinusoidal embedding over a geometric frequency ladder.
    fn sin_embed(&self, times: &[f64]) -> Tensor {
        let dim = self.cfg.time_embed_dim;
        let half = dim / 2;
        let mut data = Vec::with_capacity(times.len() * dim);
        for &t in times {
            for i in 0..half {
                let freq = (-(10_000f64.ln()) * i as f64 / (half - 1) as f64).exp();
                data.push((t * freq).sin());
            }
            for i in 0..half {
                let freq = (-(10_000f64.ln()) * i as f64 / (half - 1) as f64).exp();
                data.push((t * freq).cos());
            }
        }
        Tensor::from_vec(&[times.len(), dim], data).expect("embedding shape")
    }

    /// Per-stage additive time features `[inc, e1, e2, e3, d1, d2, d3]`.
    fn time_features(&self, tape: &mut Tape, store: &ParamStore, times: &[f64]) -> Result<Option<Vec<Var>>> {
        let Some(tp) = &self.time else {
            return Ok(None);
        };
        let emb = self.sin_embed(times);
        let e = tape.leaf(&emb, false);
        let h1 = self.linear_through(tape, store, &tp.mlp1, e)?;
        let h1 = tape.silu(h1);
        let g = self.linear_through(tape, store, &tp.mlp2, h1)?;
        let mut out = Vec::with_capacity(tp.proj.len());
        for p in &tp.proj {
            out.push(self.linear_through(tape, store, p, g)?);
        }
        Ok(Some(out))
    }

    fn add_stage_features(&self, tape: &mut Tape, x: Var, time_feat: Option<&Var>, cond_feat: Var) -> Result<Var> {
        let mut h = x;
        if let Some(&tf) = time_feat {
            h = tape.add_channel_bias(h, tf)?;
        }
        tape.add(h, cond_feat)
    }

    /// Full forward pass. `x`: `(B, in, L, H, W)` with H, W divisible by 8;
    /// `cond`: `(B, cond, L, H, W)`; one time value per batch element.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: &Tensor,
        times: &[f64],
        cond: &Tensor,
        mode: ForwardMode,
        rng: &mut StdRng,
    ) -> Result<Var> {
        let xs = x.shape().to_vec();
        if xs.len() != 5 || xs[1] != self.cfg.in_channels {
            return Err(Error::invalid(
                "unet_forward",
                format!("input shape {:?} does not match (B, {}, L, H, W)", xs, self.cfg.in_channels),
            ));
        }
        let (b, l, h, w) = (xs[0], xs[2], xs[3], xs[4]);
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::invalid(
                "unet_forward",
                format!("H and W must be divisible by 8 for three halvings, got ({h}, {w})"),
            ));
        }
        if cond.shape() != [b, self.cfg.cond_channels, l, h, w] {
            return Err(Error::invalid(
                "unet_forward",
                format!(
                    "condition shape {:?} does not match (B, {}, L, H, W)",
                    cond.shape(),
                    self.cfg.cond_channels
                ),
            ));
        }
        if times.len() != b {
            return Err(Error::invalid("unet_forward", "one time value required per batch element"));
        }

        // Condition dropout in train mode: per element, blank one channel
        // group with probability p_drop.
        let cond_var = if mode == ForwardMode::Train && self.cfg.p_drop > 0.0 {
            let mut data = cond.data().to_vec();
            let plane = l * h * w;
            let per_item = self.cfg.cond_channels * plane;
            for bi in 0..b {
                if rng.random::<f64>() < self.cfg.p_drop {
                    let g = rng.random_range(0..CHANNEL_GROUPS.len());
                    for &c in CHANNEL_GROUPS[g].1 {
                        let base = bi * per_item + c * plane;
                        data[base..base + plane].fill(crate::field::MISSING);
                    }
                }
            }
            tape.leaf_owned(cond.shape().to_vec(), data, false)
        } else {
            tape.leaf(cond, false)
        };

        let tfeat = self.time_features(tape, store, times)?;
        let tf = |i: usize| tfeat.as_ref().map(|v| &v[i]);

        // Condition features, one per stage.
        let z1 = self.double_conv(tape, store, &self.cond_inc, cond_var, mode, rng)?;
        let z2 = self.encoder_block(tape, store, &self.cond_enc[0], z1, mode, rng)?;
        let z3 = self.encoder_block(tape, store, &self.cond_enc[1], z2, mode, rng)?;
        let z4 = self.encoder_block(tape, store, &self.cond_enc[2], z3, mode, rng)?;

        // Encoder path.
        let x_in = tape.leaf(x, false);
        let h0 = self.double_conv(tape, store, &self.inc, x_in, mode, rng)?;
        let x1 = self.add_stage_features(tape, h0, tf(0), z1)?;
        let e1 = self.encoder_block(tape, store, &self.enc[0], x1, mode, rng)?;
        let x2 = self.add_stage_features(tape, e1, tf(1), z2)?;
        let e2 = self.encoder_block(tape, store, &self.enc[1], x2, mode, rng)?;
        let x3 = self.add_stage_features(tape, e2, tf(2), z3)?;
        let e3 = self.encoder_block(tape, store, &self.enc[2], x3, mode, rng)?;
        let x4 = self.add_stage_features(tape, e3, tf(3), z4)?;

        // Decoder path mirrors the condition features back in.
        let d1 = self.decoder_block(tape, store, &self.dec[0], x4, x3, mode, rng)?;
        let u1 = self.add_stage_features(tape, d1, tf(4), z3)?;
        let d2 = self.decoder_block(tape, store, &self.dec[1], u1, x2, mode, rng)?;
        let u2 = self.add_stage_features(tape, d2, tf(5), z2)?;
        let d3 = self.decoder_block(tape, store, &self.dec[2], u2, x1, mode, rng)?;
        let u3 = self.add_stage_features(tape, d3, tf(6), z1)?;

        let hw = tape.param(store, self.head.w);
        let hb = tape.param(store, self.head.b);
        tape.conv3d(u3, hw, hb, [1, 1, 1], self.head.pad)
    }
}

impl TapeDenoiser for UNet {
    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x_t: &Tensor,
        times: &[f64],
        cond: &Tensor,
        mode: ForwardMode,
        rng: &mut StdRng,
    ) -> Result<Var> {
        UNet::forward(self, tape, store, x_t, times, cond, mode, rng)
    }
}

/// An evaluation-mode view over a network and a parameter snapshot,
/// usable by the samplers.
pub struct EvalNet<'a> {
    pub net: &'a UNet,
    pub store: &'a ParamStore,
}

impl crate::diffusion::Denoiser for EvalNet<'_> {
    fn predict(
        &self,
        x: &[f64],
        dims: (usize, usize, usize),
        time: f64,
        cond: &crate::condition::ConditionTensor,
    ) -> Result<Vec<f64>> {
        let (l, h, w) = dims;
        let x_t = Tensor::from_vec(&[1, 1, l, h, w], x.to_vec())?;
        let c = Tensor::from_vec(&[1, crate::condition::CHANNELS, l, h, w], cond.data().to_vec())?;
        let mut tape = Tape::new();
        // Eval mode consumes no randomness; the rng is never touched.
        let mut dummy = <StdRng as rand::SeedableRng>::seed_from_u64(0);
        let out = self
            .net
            .forward(&mut tape, self.store, &x_t, &[time], &c, ForwardMode::Eval, &mut dummy)?;
        Ok(tape.value(out).to_vec())
    }
}
