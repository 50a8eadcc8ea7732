//! Condition-tensor construction: value transforms, observation masking,
//! time embedding, coordinate channels, augmentation, and condition dropout.

use rand::rngs::StdRng;
use rand::RngExt;

use crate::error::{Error, Result};
use crate::field::{FieldVolume, GridSpec, MaskVolume, MISSING};

/// Number of condition channels.
pub const CHANNELS: usize = 10;

/// Channel order is part of the file and model contract.
pub const CHANNEL_NAMES: [&str; CHANNELS] = [
    "masked_precip",
    "mask",
    "ir1",
    "ir2",
    "time",
    "topo",
    "cos_lat",
    "sin_lat",
    "sin_lon",
    "cos_lon",
];

/// The seven channel groups used for condition dropout and ablation:
/// multi-channel conditions (IR, lat, lon) drop together.
pub const CHANNEL_GROUPS: [(&str, &[usize]); 7] = [
    ("masked_precip", &[0]),
    ("mask", &[1]),
    ("ir", &[2, 3]),
    ("time", &[4]),
    ("topo", &[5]),
    ("lat", &[6, 7]),
    ("lon", &[8, 9]),
];

/// The assembled `(10, L, H, W)` condition stack. Values lie in `[0, 1]`
/// except for the missing sentinel `-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionTensor {
    l: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl ConditionTensor {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.l, self.h, self.w)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.l * self.h * self.w;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let plane = self.l * self.h * self.w;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    /// Overwrites every channel in group `g` with the missing sentinel.
    pub fn blank_group(&mut self, g: usize) {
        for &c in CHANNEL_GROUPS[g].1 {
            self.channel_mut(c).fill(MISSING);
        }
    }

    pub fn from_raw(l: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != CHANNELS * l * h * w {
            return Err(Error::invalid(
                "ConditionTensor",
                format!("{} values for (10, {l}, {h}, {w})", data.len()),
            ));
        }
        Ok(ConditionTensor { l, h, w, data })
    }
}

/// Exponential compressor mapping nonnegative intensities into `[0, 1)`.
/// The scale is fixed by requiring that `reference` maps to `saturation`.
#[derive(Clone, Copy, Debug)]
pub struct ExpTransform {
    pub reference: f64,
    pub saturation: f64,
    pub scale: f64,
}

impl ExpTransform {
    pub fn new(reference: f64, saturation: f64) -> Result<Self> {
        if reference <= 0.0 || !(0.0 < saturation && saturation < 1.0) {
            return Err(Error::invalid(
                "ExpTransform",
                format!("need reference > 0 and saturation in (0, 1), got ({reference}, {saturation})"),
            ));
        }
        Ok(ExpTransform {
            reference,
            saturation,
            scale: reference / (-(1.0 - saturation).ln()),
        })
    }

    /// `y = 1 - exp(-x / k)` for `x >= 0`.
    pub fn forward(&self, x: f64) -> Result<f64> {
        if x < 0.0 {
            return Err(Error::invalid("exp_forward", format!("negative intensity {x}")));
        }
        Ok(1.0 - (-x / self.scale).exp())
    }

    /// `x = -k ln(1 - y)` for `y in [0, 1)`.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&y) {
            return Err(Error::invalid("exp_inverse", format!("value {y} outside [0, 1)")));
        }
        Ok(-self.scale * (1.0 - y).ln())
    }
}

/// Logistic squashing with steepness fixed by two (threshold, target) pairs.
/// Missing inputs map to the sentinel `-1`.
#[derive(Clone, Copy, Debug)]
pub struct LogisticTransform {
    pub x_low: f64,
    pub x_high: f64,
    pub s_low: f64,
    pub s_high: f64,
    pub steepness: f64,
}

impl LogisticTransform {
    pub fn new(x_low: f64, x_high: f64, s_low: f64, s_high: f64) -> Result<Self> {
        let in_unit = |s: f64| 0.0 < s && s < 1.0;
        if x_low == x_high || !in_unit(s_low) || !in_unit(s_high) {
            return Err(Error::invalid(
                "LogisticTransform",
                "thresholds must differ and targets must lie in (0, 1)",
            ));
        }
        let logit = |s: f64| (s / (1.0 - s)).ln();
        let steepness = (logit(s_high) - logit(s_low)) / (x_high - x_low);
        Ok(LogisticTransform {
            x_low,
            x_high,
            s_low,
            s_high,
            steepness,
        })
    }

    pub fn forward(&self, x: Option<f64>) -> f64 {
        match x {
            Some(v) if v.is_finite() => {
                let mid = 0.5 * (self.x_high + self.x_low);
                1.0 / (1.0 + (-self.steepness * (v - mid)).exp())
            }
            _ => MISSING,
        }
    }
}

/// Multi-cycle time embedding: fractional days since a reference epoch,
/// mapped through sine/cosine pairs at five wavelengths.
#[derive(Clone, Debug)]
pub struct TimeEmbedSpec {
    /// Reference epoch, seconds.
    pub tau0: f64,
    /// Cycle lengths in days.
    pub cycles: [f64; 5],
}

impl Default for TimeEmbedSpec {
    fn default() -> Self {
        TimeEmbedSpec {
            tau0: 0.0,
            cycles: [7.0, 30.0, 365.0, 3650.0, 36500.0],
        }
    }
}

impl TimeEmbedSpec {
    /// The 10-vector `[sin', cos'] x 5` for one physical time (seconds).
    pub fn embed(&self, tau: f64) -> [f64; 10] {
        let d = (tau - self.tau0) / 86_400.0;
        let mut out = [0.0; 10];
        for (j, &c) in self.cycles.iter().enumerate() {
            let arg = 2.0 * std::f64::consts::PI * d / c;
            out[2 * j] = (arg.sin() + 1.0) / 2.0;
            out[2 * j + 1] = (arg.cos() + 1.0) / 2.0;
        }
        out
    }
}

/// Builds the time-embedding channel: per frame, the 10-vector is tiled down
/// the latitude rows (row `h` holds component `h mod 10`) and replicated
/// across longitude.
pub fn time_embedding(taus: &[f64], spec: &TimeEmbedSpec, grid: &GridSpec) -> Result<FieldVolume> {
    if taus.len() != grid.l {
        return Err(Error::invalid(
            "time_embedding",
            format!("{} frame times for L = {}", taus.len(), grid.l),
        ));
    }
    let mut data = Vec::with_capacity(grid.l * grid.h * grid.w);
    for &tau in taus {
        let v = spec.embed(tau);
        for h in 0..grid.h {
            let val = v[h % 10];
            data.extend(std::iter::repeat(val).take(grid.w));
        }
    }
    FieldVolume::from_vec(grid.l, grid.h, grid.w, data)
}

/// The four static coordinate channels, each `(L, H, W)`:
/// `(cos lat + 1)/2`, `(sin lat + 1)/2`, `(sin lon + 1)/2`, `(cos lon + 1)/2`.
pub fn latlon_channels(grid: &GridSpec) -> [FieldVolume; 4] {
    let plane = grid.h * grid.w;
    let mut maps = [
        Vec::with_capacity(plane),
        Vec::with_capacity(plane),
        Vec::with_capacity(plane),
        Vec::with_capacity(plane),
    ];
    for h in 0..grid.h {
        let lat = grid.lat(h);
        for w in 0..grid.w {
            let lon = grid.lon(w);
            maps[0].push((lat.cos() + 1.0) / 2.0);
            maps[1].push((lat.sin() + 1.0) / 2.0);
            maps[2].push((lon.sin() + 1.0) / 2.0);
            maps[3].push((lon.cos() + 1.0) / 2.0);
        }
    }
    maps.map(|m| {
        let mut data = Vec::with_capacity(grid.l * plane);
        for _ in 0..grid.l {
            data.extend_from_slice(&m);
        }
        FieldVolume::from_vec_unchecked(grid.l, grid.h, grid.w, data)
    })
}

/// Masks a complete field: observed pixels pass through, missing pixels
/// take the sentinel `-1`.
pub fn mask_apply(x0: &FieldVolume, mask: &MaskVolume) -> Result<FieldVolume> {
    if x0.dims() != mask.dims() {
        return Err(Error::invalid(
            "mask_apply",
            format!("field dims {:?} vs mask dims {:?}", x0.dims(), mask.dims()),
        ));
    }
    if !x0.is_complete() {
        return Err(Error::invalid("mask_apply", "input field must be complete"));
    }
    let (l, h, w) = x0.dims();
    let data = x0
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&v, &m)| if m == 1 { v } else { MISSING })
        .collect();
    Ok(FieldVolume::from_vec_unchecked(l, h, w, data))
}

/// Observation mask from satellite metadata: a pixel is invalid when its
/// info flag is at most 1 or its rate is negative; the mask is the
/// complement of that union.
pub fn gsmap_mask_from_flags(
    flags: &[i64],
    rates: &[f64],
    dims: (usize, usize, usize),
) -> Result<MaskVolume> {
    let (l, h, w) = dims;
    if flags.len() != l * h * w || rates.len() != l * h * w {
        return Err(Error::invalid(
            "gsmap_mask_from_flags",
            "flag and rate grids must match the stated dims",
        ));
    }
    let data = flags
        .iter()
        .zip(rates)
        .map(|(&f, &r)| u8::from(!(f <= 1 || r < 0.0)))
        .collect();
    MaskVolume::from_vec(l, h, w, data)
}

/// Number of auxiliary channels (everything that does not derive from the
/// observation mask): ir1, ir2, time, topo, and the four coordinate maps.
pub const AUX_CHANNELS: usize = 8;

/// Channels 2..=9 of the condition stack, as stored in data files. The
/// first two channels (masked precip and mask flag) are derived per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxChannels {
    l: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl AuxChannels {
    pub fn from_raw(l: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != AUX_CHANNELS * l * h * w {
            return Err(Error::invalid(
                "AuxChannels",
                format!("{} values for (8, {l}, {h}, {w})", data.len()),
            ));
        }
        Ok(AuxChannels { l, h, w, data })
    }

    /// Builds from the dynamic IR bands, the time channel, and a static
    /// `(H, W)` topography map; coordinate channels come from the grid.
    pub fn from_parts(
        ir1: &FieldVolume,
        ir2: &FieldVolume,
        time_ch: &FieldVolume,
        topo: &[f64],
        grid: &GridSpec,
    ) -> Result<Self> {
        let dims = (grid.l, grid.h, grid.w);
        for (name, got) in [("ir1", ir1.dims()), ("ir2", ir2.dims()), ("time", time_ch.dims())] {
            if got != dims {
                return Err(Error::invalid(
                    "AuxChannels",
                    format!("channel {name} dims {got:?} do not match grid {dims:?}"),
                ));
            }
        }
        if topo.len() != grid.h * grid.w {
            return Err(Error::invalid(
                "AuxChannels",
                format!("topo has {} values for (H, W) = ({}, {})", topo.len(), grid.h, grid.w),
            ));
        }
        for (i, &v) in topo.iter().enumerate() {
            if !(v == MISSING || (0.0..=1.0).contains(&v)) {
                return Err(Error::invalid(
                    "AuxChannels",
                    format!("topo value {v} at index {i} outside [0, 1] and not missing"),
                ));
            }
        }
        let plane = grid.l * grid.h * grid.w;
        let mut data = Vec::with_capacity(AUX_CHANNELS * plane);
        data.extend_from_slice(ir1.data());
        data.extend_from_slice(ir2.data());
        data.extend_from_slice(time_ch.data());
        for _ in 0..grid.l {
            data.extend_from_slice(topo);
        }
        for ch in latlon_channels(grid) {
            data.extend_from_slice(ch.data());
        }
        AuxChannels::from_raw(grid.l, grid.h, grid.w, data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.l, self.h, self.w)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Channel by global condition index (2..=9).
    pub fn channel(&self, global_c: usize) -> &[f64] {
        let plane = self.l * self.h * self.w;
        let c = global_c - 2;
        &self.data[c * plane..(c + 1) * plane]
    }
}

/// Completes the condition stack from a masked field, its mask, and the
/// auxiliary channels.
pub fn assemble_condition_from_aux(
    xbar: &FieldVolume,
    mask: &MaskVolume,
    aux: &AuxChannels,
) -> Result<ConditionTensor> {
    if xbar.dims() != aux.dims() || mask.dims() != aux.dims() {
        return Err(Error::invalid(
            "assemble_condition",
            format!(
                "dims disagree: field {:?}, mask {:?}, aux {:?}",
                xbar.dims(),
                mask.dims(),
                aux.dims()
            ),
        ));
    }
    let (l, h, w) = aux.dims();
    let plane = l * h * w;
    let mut data = Vec::with_capacity(CHANNELS * plane);
    data.extend_from_slice(xbar.data());
    // Mask channel encodes +1 on newly masked (to inpaint) pixels.
    data.extend(mask.data().iter().map(|&m| f64::from(1 - m)));
    data.extend_from_slice(aux.data());
    ConditionTensor::from_raw(l, h, w, data)
}

/// Assembles the 10-channel condition stack in the fixed channel order.
/// `topo` is a static `(H, W)` map repeated over frames; coordinate channels
/// come from the grid.
pub fn assemble_condition(
    xbar: &FieldVolume,
    mask: &MaskVolume,
    ir1: &FieldVolume,
    ir2: &FieldVolume,
    time_ch: &FieldVolume,
    topo: &[f64],
    grid: &GridSpec,
) -> Result<ConditionTensor> {
    let dims = (grid.l, grid.h, grid.w);
    for (name, got) in [("masked_precip", xbar.dims()), ("mask", mask.dims())] {
        if got != dims {
            return Err(Error::invalid(
                "assemble_condition",
                format!("channel {name} dims {got:?} do not match grid {dims:?}"),
            ));
        }
    }
    let aux = AuxChannels::from_parts(ir1, ir2, time_ch, topo, grid)?;
    assemble_condition_from_aux(xbar, mask, &aux)
}

/// Which horizontal flips an augmentation draw applies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentOps {
    pub flip_lon: bool,
    pub flip_lat: bool,
    pub rot180: bool,
}

impl AugmentOps {
    /// Each operation fires independently with probability 0.5.
    pub fn sample(rng: &mut StdRng) -> Self {
        AugmentOps {
            flip_lon: rng.random::<bool>(),
            flip_lat: rng.random::<bool>(),
            rot180: rng.random::<bool>(),
        }
    }
}

/// Applies flips frame-by-frame to one `(L, H, W)` volume in place.
/// The 180-degree rotation equals a latitude flip composed with a
/// longitude flip.
pub fn apply_flips<T: Copy>(data: &mut [T], l: usize, h: usize, w: usize, ops: AugmentOps) {
    let flip_lat = ops.flip_lat ^ ops.rot180;
    let flip_lon = ops.flip_lon ^ ops.rot180;
    if !flip_lat && !flip_lon {
        return;
    }
    for f in 0..l {
        let frame = &mut data[f * h * w..(f + 1) * h * w];
        if flip_lon {
            for row in frame.chunks_mut(w) {
                row.reverse();
            }
        }
        if flip_lat {
            for hi in 0..h / 2 {
                for wi in 0..w {
                    frame.swap(hi * w + wi, (h - 1 - hi) * w + wi);
                }
            }
        }
    }
}

/// Samples flips and applies them identically to the target field and every
/// condition channel.
pub fn augment(x0: &mut FieldVolume, cond: &mut ConditionTensor, rng: &mut StdRng) -> AugmentOps {
    let ops = AugmentOps::sample(rng);
    let (l, h, w) = x0.dims();
    apply_flips(x0.data_mut(), l, h, w, ops);
    for c in 0..CHANNELS {
        apply_flips(cond.channel_mut(c), l, h, w, ops);
    }
    ops
}

/// With probability `p_drop`, blanks exactly one uniformly chosen channel
/// group to the missing sentinel. Returns the dropped group index, if any.
pub fn cond_dropout(cond: &mut ConditionTensor, p_drop: f64, rng: &mut StdRng) -> Result<Option<usize>> {
    if !(0.0..=1.0).contains(&p_drop) {
        return Err(Error::invalid("cond_dropout", format!("p_drop {p_drop} outside [0, 1]")));
    }
    if p_drop > 0.0 && rng.random::<f64>() < p_drop {
        let g = rng.random_range(0..CHANNEL_GROUPS.len());
        cond.blank_group(g);
        return Ok(Some(g));
    }
    Ok(None)
}
