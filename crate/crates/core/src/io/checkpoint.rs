//! Parameter checkpoints: the grid-file container idea applied to named
//! parameter arrays, with a config header describing the network and
//! schedule the values belong to. Stores both the raw parameters and their
//! exponential moving average.

use std::path::Path;

use super::config::ModelKind;
use super::{atomic_write, f32_to_payload, header_line, payload_to_f32, sidecar_paths};
use crate::error::{Error, Result};
use crate::schedule::ScheduleKind;
use crate::tensor::{EmaState, ParamStore};

pub const CKPT_FORMAT: &str = "swathfill-checkpoint";
pub const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub model: ModelKind,
    pub epoch: usize,
    pub t_steps: usize,
    pub schedule: ScheduleKind,
    pub beta_min: f64,
    pub beta_max: f64,
    pub cosine_s: f64,
    pub base_channels: usize,
    pub with_time: bool,
    pub grid: (usize, usize, usize),
    /// Array names and shapes, in payload order.
    pub arrays: Vec<(String, Vec<usize>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    /// One value vector per header array, same order.
    pub arrays: Vec<Vec<f32>>,
}

impl CheckpointHeader {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("format: {CKPT_FORMAT}\n"));
        s.push_str(&format!("version: {}\n", self.version));
        s.push_str(&format!("model: {}\n", self.model.as_str()));
        s.push_str(&format!("epoch: {}\n", self.epoch));
        s.push_str(&format!("t_steps: {}\n", self.t_steps));
        let kind = match self.schedule {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
        };
        s.push_str(&format!("schedule: {kind}\n"));
        s.push_str(&format!("beta_min: {}\n", self.beta_min));
        s.push_str(&format!("beta_max: {}\n", self.beta_max));
        s.push_str(&format!("cosine_s: {}\n", self.cosine_s));
        s.push_str(&format!("base_channels: {}\n", self.base_channels));
        s.push_str(&format!("with_time: {}\n", self.with_time));
        s.push_str(&format!("grid: {} {} {}\n", self.grid.0, self.grid.1, self.grid.2));
        s.push_str(&format!("arrays: {}\n", self.arrays.len()));
        for (name, shape) in &self.arrays {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            s.push_str(&format!("array: {name} {}\n", dims.join(" ")));
        }
        s
    }

    pub fn parse(text: &str) -> Result<CheckpointHeader> {
        let mut model = None;
        let mut version = None;
        let mut epoch = None;
        let mut t_steps = None;
        let mut schedule = None;
        let mut beta_min = None;
        let mut beta_max = None;
        let mut cosine_s = None;
        let mut base_channels = None;
        let mut with_time = None;
        let mut grid = None;
        let mut declared = None;
        let mut format_seen = false;
        let mut arrays: Vec<(String, Vec<usize>)> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = header_line(line)
                .ok_or_else(|| Error::Data(format!("checkpoint line {}: expected `key: value`", ln + 1)))?;
            let parse_usize =
                |v: &str, what: &str| -> Result<usize> { v.parse().map_err(|_| Error::Data(format!("checkpoint: bad {what} {v:?}"))) };
            let parse_f64 =
                |v: &str, what: &str| -> Result<f64> { v.parse().map_err(|_| Error::Data(format!("checkpoint: bad {what} {v:?}"))) };
            match k {
                "format" => {
                    if v != CKPT_FORMAT {
                        return Err(Error::Data(format!("checkpoint: format {v:?} is not {CKPT_FORMAT:?}")));
                    }
                    format_seen = true;
                }
                "version" => version = Some(parse_usize(v, "version")? as u32),
                "model" => model = Some(ModelKind::parse(v).map_err(|e| Error::Data(e.to_string()))?),
                "epoch" => epoch = Some(parse_usize(v, "epoch")?),
                "t_steps" => t_steps = Some(parse_usize(v, "t_steps")?),
                "schedule" => {
                    schedule = Some(match v {
                        "linear" => ScheduleKind::Linear,
                        "cosine" => ScheduleKind::Cosine,
                        other => return Err(Error::Data(format!("checkpoint: unknown schedule {other:?}"))),
                    })
                }
                "beta_min" => beta_min = Some(parse_f64(v, "beta_min")?),
                "beta_max" => beta_max = Some(parse_f64(v, "beta_max")?),
                "cosine_s" => cosine_s = Some(parse_f64(v, "cosine_s")?),
                "base_channels" => base_channels = Some(parse_usize(v, "base_channels")?),
                "with_time" => {
                    with_time = Some(match v {
                        "true" => true,
                        "false" => false,
                        other => return Err(Error::Data(format!("checkpoint: bad with_time {other:?}"))),
                    })
                }
                "grid" => {
                    let dims: Vec<usize> = v
                        .split_whitespace()
                        .map(|p| parse_usize(p, "grid extent"))
                        .collect::<Result<_>>()?;
                    if dims.len() != 3 {
                        return Err(Error::Data("checkpoint: grid needs 3 extents".into()));
                    }
                    grid = Some((dims[0], dims[1], dims[2]));
                }
                "arrays" => declared = Some(parse_usize(v, "array count")?),
                "array" => {
                    let mut parts = v.split_whitespace();
                    let name = parts
                        .next()
                        .ok_or_else(|| Error::Data("checkpoint: array line without name".into()))?
                        .to_string();
                    let shape: Vec<usize> = parts.map(|p| parse_usize(p, "array extent")).collect::<Result<_>>()?;
                    if shape.is_empty() {
                        return Err(Error::Data(format!("checkpoint: array {name} has no shape")));
                    }
                    shape
                        .iter()
                        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                        .ok_or_else(|| Error::Data(format!("checkpoint: array {name} shape overflows")))?;
                    arrays.push((name, shape));
                }
                other => return Err(Error::Data(format!("checkpoint: unknown key {other:?}"))),
            }
        }
        if !format_seen {
            return Err(Error::Data("checkpoint: missing format line".into()));
        }
        let version = version.ok_or_else(|| Error::Data("checkpoint: missing version".into()))?;
        if version != CKPT_VERSION {
            return Err(Error::Data(format!("checkpoint: unsupported version {version}")));
        }
        let declared = declared.ok_or_else(|| Error::Data("checkpoint: missing arrays count".into()))?;
        if declared != arrays.len() {
            return Err(Error::Data(format!(
                "checkpoint: declared {declared} arrays, found {}",
                arrays.len()
            )));
        }
        Ok(CheckpointHeader {
            version,
            model: model.ok_or_else(|| Error::Data("checkpoint: missing model".into()))?,
            epoch: epoch.ok_or_else(|| Error::Data("checkpoint: missing epoch".into()))?,
            t_steps: t_steps.ok_or_else(|| Error::Data("checkpoint: missing t_steps".into()))?,
            schedule: schedule.ok_or_else(|| Error::Data("checkpoint: missing schedule".into()))?,
            beta_min: beta_min.ok_or_else(|| Error::Data("checkpoint: missing beta_min".into()))?,
            beta_max: beta_max.ok_or_else(|| Error::Data("checkpoint: missing beta_max".into()))?,
            cosine_s: cosine_s.ok_or_else(|| Error::Data("checkpoint: missing cosine_s".into()))?,
            base_channels: base_channels.ok_or_else(|| Error::Data("checkpoint: missing base_channels".into()))?,
            with_time: with_time.ok_or_else(|| Error::Data("checkpoint: missing with_time".into()))?,
            grid: grid.ok_or_else(|| Error::Data("checkpoint: missing grid".into()))?,
            arrays,
        })
    }
}

/// Decodes a header/payload pair into named arrays.
pub fn decode(header_text: &str, payload: &[u8]) -> Result<Checkpoint> {
    let header = CheckpointHeader::parse(header_text)?;
    let values = payload_to_f32(payload)?;
    let mut total = 0usize;
    let mut sizes = Vec::with_capacity(header.arrays.len());
    for (name, shape) in &header.arrays {
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Data(format!("checkpoint: array {name} shape overflows")))?;
        total = total
            .checked_add(n)
            .ok_or_else(|| Error::Data("checkpoint: total size overflows".into()))?;
        sizes.push(n);
    }
    if values.len() != total {
        return Err(Error::Data(format!(
            "checkpoint payload holds {} values, header implies {total}",
            values.len()
        )));
    }
    let mut arrays = Vec::with_capacity(sizes.len());
    let mut off = 0usize;
    for n in sizes {
        arrays.push(values[off..off + n].to_vec());
        off += n;
    }
    Ok(Checkpoint { header, arrays })
}

pub fn write(base: &Path, header: &CheckpointHeader, arrays: &[Vec<f32>]) -> Result<()> {
    if arrays.len() != header.arrays.len() {
        return Err(Error::Data("checkpoint write: array count mismatch".into()));
    }
    let mut payload = Vec::new();
    for ((name, shape), values) in header.arrays.iter().zip(arrays) {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Data(format!(
                "checkpoint write: array {name} has {} values for shape {:?}",
                values.len(),
                shape
            )));
        }
        payload.extend_from_slice(&f32_to_payload(values));
    }
    let (hdr, bin) = sidecar_paths(base);
    atomic_write(&hdr, header.to_text().as_bytes())?;
    atomic_write(&bin, &payload)?;
    Ok(())
}

pub fn read(base: &Path) -> Result<Checkpoint> {
    let (hdr, bin) = sidecar_paths(base);
    let text = std::fs::read_to_string(&hdr)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", hdr.display())))?;
    let payload = std::fs::read(&bin).map_err(|e| Error::Data(format!("cannot read {}: {e}", bin.display())))?;
    decode(&text, &payload)
}

/// Builds the header array list and value vectors from a parameter store
/// and its EMA shadow: `param/<name>` entries first, then `ema/<name>`.
pub fn snapshot(store: &ParamStore, ema: &EmaState) -> (Vec<(String, Vec<usize>)>, Vec<Vec<f32>>) {
    let mut names = Vec::with_capacity(2 * store.len());
    let mut arrays = Vec::with_capacity(2 * store.len());
    for (name, tensor) in store.iter() {
        names.push((format!("param/{name}"), tensor.shape().to_vec()));
        arrays.push(tensor.data().iter().map(|&v| v as f32).collect());
    }
    for ((name, tensor), shadow) in store.iter().zip(ema.shadow()) {
        names.push((format!("ema/{name}"), tensor.shape().to_vec()));
        arrays.push(shadow.iter().map(|&v| v as f32).collect());
    }
    (names, arrays)
}

/// Which side of a checkpoint to load into a parameter store.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadSide {
    Params,
    Ema,
}

/// Loads one side of the checkpoint into the store, matching by name.
pub fn load_into(ckpt: &Checkpoint, side: LoadSide, store: &mut ParamStore) -> Result<()> {
    let prefix = match side {
        LoadSide::Params => "param/",
        LoadSide::Ema => "ema/",
    };
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(store.len());
    for (name, tensor) in store.iter() {
        let want = format!("{prefix}{name}");
        let idx = ckpt
            .header
            .arrays
            .iter()
            .position(|(n, _)| *n == want)
            .ok_or_else(|| Error::Data(format!("checkpoint is missing array {want}")))?;
        let (_, shape) = &ckpt.header.arrays[idx];
        if shape != tensor.shape() {
            return Err(Error::Data(format!(
                "checkpoint array {want} has shape {:?}, expected {:?}",
                shape,
                tensor.shape()
            )));
        }
        values.push(ckpt.arrays[idx].iter().map(|&v| v as f64).collect());
    }
    store.load_values(&values).map_err(|e| Error::Data(e.to_string()))
}
