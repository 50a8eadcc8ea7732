//! Procedural generator of ground-truth field sequences and orbit-like
//! swath masks, so every pipeline stage is testable without external data.
//!
//! Fields are sums of advected anisotropic Gaussian blobs in physical
//! units, thresholded at zero and compressed through the exponential
//! transform. Masks are sinusoidal longitude bands sweeping per frame.

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

use crate::condition::{time_embedding, AuxChannels, ExpTransform, TimeEmbedSpec};
use crate::error::{Error, Result};
use crate::field::{FieldVolume, GridSpec, MaskVolume, MISSING};

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub grid: GridSpec,
    /// Gaussian blobs per sequence.
    pub blobs: usize,
    /// Mean advection velocity in cells per frame (rows, cols).
    pub advect: (f64, f64),
    /// Uniform jitter added per blob to each velocity component.
    pub advect_jitter: f64,
    /// Base blob radius in cells.
    pub blob_scale: f64,
    /// Peak blob intensity in physical units (same units as `transform`).
    pub amp_max: f64,
    /// Swath band width in cells; at least 1.
    pub swath_width: usize,
    /// Longitudinal band shift per frame, in cells.
    pub swath_shift: f64,
    /// Number of parallel bands.
    pub swath_bands: usize,
    pub transform: ExpTransform,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.h % 8 != 0 || self.grid.w % 8 != 0 {
            return Err(Error::invalid(
                "SynthConfig",
                format!("grid ({}, {}) must be divisible by 8", self.grid.h, self.grid.w),
            ));
        }
        if self.swath_width == 0 {
            return Err(Error::invalid("SynthConfig", "swath width must be >= 1"));
        }
        if self.swath_bands == 0 {
            return Err(Error::invalid("SynthConfig", "need at least one swath band"));
        }
        Ok(())
    }

    pub fn desk_default(seed: u64) -> Self {
        SynthConfig {
            grid: GridSpec { l: 3, h: 16, w: 32 },
            blobs: 5,
            advect: (0.3, 1.5),
            advect_jitter: 0.4,
            blob_scale: 1.8,
            amp_max: 6.0,
            swath_width: 12,
            swath_shift: 7.0,
            swath_bands: 1,
            transform: ExpTransform::new(5.0, 0.99).expect("default transform"),
            seed,
        }
    }
}

struct Blob {
    center: (f64, f64),
    vel: (f64, f64),
    sigma: (f64, f64),
    amp: f64,
}

fn seq_rng(cfg: &SynthConfig, index: usize) -> StdRng {
    StdRng::seed_from_u64(cfg.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn sample_blobs(cfg: &SynthConfig, rng: &mut StdRng) -> Vec<Blob> {
    (0..cfg.blobs)
        .map(|_| Blob {
            center: (
                rng.random_range(0.0..cfg.grid.h as f64),
                rng.random_range(0.0..cfg.grid.w as f64),
            ),
            vel: (
                cfg.advect.0 + jitter(rng, cfg.advect_jitter),
                cfg.advect.1 + jitter(rng, cfg.advect_jitter),
            ),
            sigma: (
                cfg.blob_scale * rng.random_range(0.8..1.6),
                cfg.blob_scale * rng.random_range(1.2..2.6),
            ),
            amp: cfg.amp_max * rng.random_range(0.25..1.0),
        })
        .collect()
}

fn jitter(rng: &mut StdRng, j: f64) -> f64 {
    if j == 0.0 {
        0.0
    } else {
        rng.random_range(-j..j)
    }
}

/// Background threshold (physical units) subtracted before clipping at 0.
const BLOB_FLOOR: f64 = 0.05;

fn raw_intensity(cfg: &SynthConfig, blobs: &[Blob], frame: usize, sigma_inflate: f64) -> Vec<f64> {
    let (h, w) = (cfg.grid.h, cfg.grid.w);
    let mut out = vec![0.0; h * w];
    for blob in blobs {
        let ch = blob.center.0 + blob.vel.0 * frame as f64;
        let cw = (blob.center.1 + blob.vel.1 * frame as f64).rem_euclid(w as f64);
        let (sh, sw) = (blob.sigma.0 * sigma_inflate, blob.sigma.1 * sigma_inflate);
        let amp = blob.amp / sigma_inflate;
        for i in 0..h {
            let di = (i as f64 - ch) / sh;
            if di.abs() > 4.0 {
                continue;
            }
            for j in 0..w {
                let mut dj = (j as f64 - cw).abs();
                dj = dj.min(w as f64 - dj); // longitude wraps
                let djn = dj / sw;
                if djn.abs() > 4.0 {
                    continue;
                }
                out[i * w + j] += amp * (-0.5 * (di * di + djn * djn)).exp();
            }
        }
    }
    for v in &mut out {
        *v = (*v - BLOB_FLOOR).max(0.0);
    }
    out
}

fn transform_frame(cfg: &SynthConfig, raw: &[f64]) -> Result<Vec<f64>> {
    raw.iter().map(|&x| cfg.transform.forward(x)).collect()
}

/// Complete ground-truth sequences; bitwise deterministic for a fixed seed.
pub fn gen_fields(cfg: &SynthConfig, n_sequences: usize) -> Result<Vec<FieldVolume>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(n_sequences);
    for idx in 0..n_sequences {
        let mut rng = seq_rng(cfg, idx);
        let blobs = sample_blobs(cfg, &mut rng);
        let (l, h, w) = (cfg.grid.l, cfg.grid.h, cfg.grid.w);
        let mut data = Vec::with_capacity(l * h * w);
        for f in 0..l {
            data.extend(transform_frame(cfg, &raw_intensity(cfg, &blobs, f, 1.0))?);
        }
        out.push(FieldVolume::from_vec(l, h, w, data)?);
    }
    Ok(out)
}

/// Swath observation mask for one sequence: sinusoidal bands of the
/// configured width sweeping longitudinally per frame.
pub fn gen_swath_mask(cfg: &SynthConfig, index: usize) -> Result<MaskVolume> {
    cfg.validate()?;
    let (l, h, w) = (cfg.grid.l, cfg.grid.h, cfg.grid.w);
    if cfg.swath_width >= w {
        return MaskVolume::from_vec(l, h, w, vec![1; l * h * w]);
    }
    let amp = w as f64 / 8.0;
    let half = cfg.swath_width as f64 / 2.0;
    let mut data = vec![0u8; l * h * w];
    for f in 0..l {
        let frame_phase = (index * l + f) as f64 * cfg.swath_shift + index as f64 * 3.0;
        for band in 0..cfg.swath_bands {
            let offset = band as f64 * w as f64 / cfg.swath_bands as f64;
            for i in 0..h {
                let center = (frame_phase + offset + amp * (std::f64::consts::PI * i as f64 / h as f64).sin())
                    .rem_euclid(w as f64);
                for j in 0..w {
                    let mut d = (j as f64 - center).abs();
                    d = d.min(w as f64 - d);
                    if d < half {
                        data[(f * h + i) * w + j] = 1;
                    }
                }
            }
        }
    }
    MaskVolume::from_vec(l, h, w, data)
}

/// One synthetic sequence with everything the pipeline needs.
#[derive(Clone, Debug)]
pub struct SynthSequence {
    pub truth: FieldVolume,
    pub mask: MaskVolume,
    pub aux: AuxChannels,
    /// Physical frame times, seconds.
    pub taus: Vec<f64>,
}

/// Smooth random surface in `[0, 1]`, shared by every sequence of a corpus.
pub fn gen_topography(cfg: &SynthConfig) -> Vec<f64> {
    let (h, w) = (cfg.grid.h, cfg.grid.w);
    let mut rng = StdRng::seed_from_u64(cfg.seed ^ 0xD1B5_4A32_D192_ED03);
    let mut out = vec![0.0; h * w];
    for _ in 0..6 {
        let fh: f64 = rng.random_range(0.5..2.5);
        let fw: f64 = rng.random_range(0.5..3.5);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let amp: f64 = rng.random_range(0.3..1.0);
        for i in 0..h {
            for j in 0..w {
                out[i * w + j] += amp
                    * (std::f64::consts::TAU * (fh * i as f64 / h as f64 + fw * j as f64 / w as f64) + phase).cos();
            }
        }
    }
    let lo = out.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for v in &mut out {
        *v = (*v - lo) / (hi - lo);
    }
    out
}

/// Latitude rows poleward of 60 degrees carry no IR coverage.
const IR_COVERAGE_DEG: f64 = 60.0;

fn ir_band(cfg: &SynthConfig, blobs: &[Blob], inflate: f64) -> Result<FieldVolume> {
    let (l, h, w) = (cfg.grid.l, cfg.grid.h, cfg.grid.w);
    let mut data = Vec::with_capacity(l * h * w);
    for f in 0..l {
        let mut frame = transform_frame(cfg, &raw_intensity(cfg, blobs, f, inflate))?;
        for i in 0..h {
            let lat_deg = cfg.grid.lat(i).to_degrees();
            if lat_deg.abs() > IR_COVERAGE_DEG {
                for v in &mut frame[i * w..(i + 1) * w] {
                    *v = MISSING;
                }
            }
        }
        data.extend(frame);
    }
    Ok(FieldVolume::from_vec(l, h, w, data)?)
}

/// Generates a full corpus: truth fields, swath masks, and the auxiliary
/// condition channels (smoothed-field IR proxies, topography, frame times).
pub fn gen_dataset(cfg: &SynthConfig, n_sequences: usize) -> Result<Vec<SynthSequence>> {
    cfg.validate()?;
    let topo = gen_topography(cfg);
    let time_spec = TimeEmbedSpec::default();
    let mut out = Vec::with_capacity(n_sequences);
    for idx in 0..n_sequences {
        let mut rng = seq_rng(cfg, idx);
        let blobs = sample_blobs(cfg, &mut rng);
        let (l, h, w) = (cfg.grid.l, cfg.grid.h, cfg.grid.w);
        let mut data = Vec::with_capacity(l * h * w);
        for f in 0..l {
            data.extend(transform_frame(cfg, &raw_intensity(cfg, &blobs, f, 1.0))?);
        }
        let truth = FieldVolume::from_vec(l, h, w, data)?;
        let mask = gen_swath_mask(cfg, idx)?;
        let ir1 = ir_band(cfg, &blobs, 1.8)?;
        let ir2 = ir_band(cfg, &blobs, 2.6)?;
        let taus: Vec<f64> = (0..l).map(|n| 3600.0 * (idx * l + n) as f64).collect();
        let time_ch = time_embedding(&taus, &time_spec, &cfg.grid)?;
        let aux = AuxChannels::from_parts(&ir1, &ir2, &time_ch, &topo, &cfg.grid)?;
        out.push(SynthSequence {
            truth,
            mask,
            aux,
            taus,
        });
    }
    Ok(out)
}
