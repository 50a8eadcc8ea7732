//! Hole-domain evaluation metrics, bootstrap confidence intervals, and the
//! per-condition sensitivity contributions.

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

use crate::error::{Error, Result};
use crate::field::{FieldVolume, MaskVolume};

/// The set of space-time pixels a model had to inpaint, plus the one-pixel
/// ring of observed pixels around the first frame's hole.
#[derive(Clone, Debug)]
pub struct HoleDomain {
    l: usize,
    h: usize,
    w: usize,
    /// 1 where the pixel was inpainted (observation mask = 0).
    hole: Vec<u8>,
    /// First-frame boundary: dilation of the hole intersected with its
    /// complement, i.e. observed pixels touching the hole (8-connected).
    boundary: Vec<u8>,
}

impl HoleDomain {
    pub fn from_observation_mask(mask: &MaskVolume) -> Self {
        let (l, h, w) = mask.dims();
        let hole: Vec<u8> = mask.data().iter().map(|&m| 1 - m).collect();
        let mut boundary = vec![0u8; h * w];
        for i in 0..h {
            for j in 0..w {
                if hole[i * w + j] == 1 {
                    continue; // boundary lies outside the hole
                }
                'nb: for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        if di == 0 && dj == 0 {
                            continue;
                        }
                        let (ni, nj) = (i as i64 + di, j as i64 + dj);
                        if ni < 0 || nj < 0 || ni >= h as i64 || nj >= w as i64 {
                            continue;
                        }
                        if hole[ni as usize * w + nj as usize] == 1 {
                            boundary[i * w + j] = 1;
                            break 'nb;
                        }
                    }
                }
            }
        }
        HoleDomain {
            l,
            h,
            w,
            hole,
            boundary,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.l, self.h, self.w)
    }

    #[inline]
    pub fn in_hole(&self, f: usize, i: usize, j: usize) -> bool {
        self.hole[(f * self.h + i) * self.w + j] == 1
    }

    pub fn hole_mask(&self) -> &[u8] {
        &self.hole
    }

    pub fn boundary_mask(&self) -> &[u8] {
        &self.boundary
    }

    pub fn hole_count(&self) -> usize {
        self.hole.iter().filter(|&&v| v == 1).count()
    }
}

fn check_dims(op: &'static str, pred: &FieldVolume, truth: &FieldVolume, hole: &HoleDomain) -> Result<()> {
    if pred.dims() != truth.dims() || pred.dims() != hole.dims() {
        return Err(Error::invalid(op, "prediction, truth and hole dims differ"));
    }
    Ok(())
}

/// Root mean squared error over the hole domain.
pub fn rmse_hole(pred: &FieldVolume, truth: &FieldVolume, hole: &HoleDomain) -> Result<f64> {
    check_dims("rmse_hole", pred, truth, hole)?;
    let mut acc = 0.0;
    let mut n = 0usize;
    for (i, &hm) in hole.hole_mask().iter().enumerate() {
        if hm == 1 {
            let d = pred.data()[i] - truth.data()[i];
            acc += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("rmse_hole", "hole domain is empty"));
    }
    Ok((acc / n as f64).sqrt())
}

/// RMSE of frame-to-frame differences over hole pixels in frames 2..L.
pub fn tg_rmse(pred: &FieldVolume, truth: &FieldVolume, hole: &HoleDomain) -> Result<f64> {
    check_dims("tg_rmse", pred, truth, hole)?;
    let (l, h, w) = pred.dims();
    let mut acc = 0.0;
    let mut n = 0usize;
    for f in 1..l {
        for i in 0..h {
            for j in 0..w {
                if hole.in_hole(f, i, j) {
                    let dp = pred.get(f, i, j) - pred.get(f - 1, i, j);
                    let dt = truth.get(f, i, j) - truth.get(f - 1, i, j);
                    acc += (dp - dt) * (dp - dt);
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid("tg_rmse", "no hole pixels beyond the first frame"));
    }
    Ok((acc / n as f64).sqrt())
}

/// Pearson correlation over the hole domain; `None` when either side has
/// zero variance there.
pub fn pearson_hole(pred: &FieldVolume, truth: &FieldVolume, hole: &HoleDomain) -> Result<Option<f64>> {
    check_dims("pearson_hole", pred, truth, hole)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &hm) in hole.hole_mask().iter().enumerate() {
        if hm == 1 {
            xs.push(pred.data()[i]);
            ys.push(truth.data()[i]);
        }
    }
    if xs.is_empty() {
        return Err(Error::invalid("pearson_hole", "hole domain is empty"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    // sqrt(x * x) == x in IEEE round-to-nearest, so identical inputs give
    // exactly 1.0 here.
    Ok(Some(sxy / (sxx * syy).sqrt()))
}

/// SSIM stabilizers for data in `[0, 1]`.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Masked SSIM of one frame: all statistics restricted to hole pixels.
fn ssim_frame(pred: &[f64], truth: &[f64], hole: &[u8]) -> Option<f64> {
    let idx: Vec<usize> = (0..hole.len()).filter(|&i| hole[i] == 1).collect();
    if idx.is_empty() {
        return None;
    }
    let n = idx.len() as f64;
    let mp = idx.iter().map(|&i| pred[i]).sum::<f64>() / n;
    let mt = idx.iter().map(|&i| truth[i]).sum::<f64>() / n;
    let mut vp = 0.0;
    let mut vt = 0.0;
    let mut cov = 0.0;
    for &i in &idx {
        vp += (pred[i] - mp) * (pred[i] - mp);
        vt += (truth[i] - mt) * (truth[i] - mt);
        cov += (pred[i] - mp) * (truth[i] - mt);
    }
    vp /= n;
    vt /= n;
    cov /= n;
    Some(((2.0 * mp * mt + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((mp * mp + mt * mt + SSIM_C1) * (vp + vt + SSIM_C2)))
}

/// Average-pool a frame and its hole mask by 2x2; odd trailing rows or
/// columns are dropped. The mask re-binarizes at >= 0.5.
fn downsample(frame: &[f64], hole: &[u8], h: usize, w: usize) -> (Vec<f64>, Vec<u8>, usize, usize) {
    let (nh, nw) = (h / 2, w / 2);
    let mut f2 = vec![0.0; nh * nw];
    let mut m2 = vec![0u8; nh * nw];
    for i in 0..nh {
        for j in 0..nw {
            let mut fv = 0.0;
            let mut mv = 0.0;
            for di in 0..2 {
                for dj in 0..2 {
                    fv += frame[(2 * i + di) * w + 2 * j + dj];
                    mv += hole[(2 * i + di) * w + 2 * j + dj] as f64;
                }
            }
            f2[i * nw + j] = fv / 4.0;
            m2[i * nw + j] = u8::from(mv / 4.0 >= 0.5);
        }
    }
    (f2, m2, nh, nw)
}

/// Multi-scale SSIM over the hole: per frame, masked SSIM averaged over
/// `scales` dyadic scales, then averaged over frames. Scales at which the
/// (re-binarized) hole vanishes are skipped; their count is returned.
pub fn ms_ssim_hole(
    pred: &FieldVolume,
    truth: &FieldVolume,
    hole: &HoleDomain,
    scales: usize,
) -> Result<(f64, usize)> {
    check_dims("ms_ssim_hole", pred, truth, hole)?;
    if scales == 0 {
        return Err(Error::invalid("ms_ssim_hole", "need at least one scale"));
    }
    let (l, h, w) = pred.dims();
    let mut frame_scores = Vec::with_capacity(l);
    let mut skipped = 0usize;
    for f in 0..l {
        let mut pf = pred.frame(f).to_vec();
        let mut tf = truth.frame(f).to_vec();
        let mut hm = hole.hole_mask()[f * h * w..(f + 1) * h * w].to_vec();
        let (mut ch, mut cw) = (h, w);
        let mut acc = 0.0;
        let mut used = 0usize;
        for s in 0..scales {
            match ssim_frame(&pf, &tf, &hm) {
                Some(v) => {
                    acc += v;
                    used += 1;
                }
                None => skipped += 1,
            }
            if s + 1 < scales {
                if ch < 2 || cw < 2 {
                    skipped += scales - s - 1;
                    break;
                }
                let (p2, m2, nh, nw) = downsample(&pf, &hm, ch, cw);
                let (t2, _, _, _) = downsample(&tf, &hm, ch, cw);
                pf = p2;
                tf = t2;
                hm = m2;
                ch = nh;
                cw = nw;
            }
        }
        if used == 0 {
            return Err(Error::invalid(
                "ms_ssim_hole",
                format!("frame {f} has no hole pixels at any scale"),
            ));
        }
        frame_scores.push(acc / used as f64);
    }
    Ok((frame_scores.iter().sum::<f64>() / l as f64, skipped))
}

/// Boundary discontinuity: mean absolute error over the one-pixel observed
/// ring around the first frame's hole.
pub fn bdi(pred: &FieldVolume, truth: &FieldVolume, hole: &HoleDomain) -> Result<f64> {
    check_dims("bdi", pred, truth, hole)?;
    let (_, h, w) = pred.dims();
    let mut acc = 0.0;
    let mut n = 0usize;
    for i in 0..h {
        for j in 0..w {
            if hole.boundary_mask()[i * w + j] == 1 {
                acc += (pred.get(0, i, j) - truth.get(0, i, j)).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid("bdi", "first-frame hole boundary is empty"));
    }
    Ok(acc / n as f64)
}

/// Percentile bootstrap confidence interval for the mean, at the given
/// level, with a fixed seed for reproducibility.
pub fn bootstrap_ci(samples: &[f64], level: f64, n_resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::invalid("bootstrap_ci", "need at least two samples"));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::invalid("bootstrap_ci", format!("level {level} outside (0, 1)")));
    }
    if n_resamples == 0 {
        return Err(Error::invalid("bootstrap_ci", "need at least one resample"));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let n = samples.len();
    let mut means = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += samples[rng.random_range(0..n)];
        }
        means.push(acc / n as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite means"));
    let q = |p: f64| -> f64 {
        let pos = p * (n_resamples - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        if lo == hi {
            means[lo]
        } else {
            let frac = pos - lo as f64;
            means[lo] * (1.0 - frac) + means[hi] * frac
        }
    };
    let alpha = 1.0 - level;
    Ok((q(alpha / 2.0), q(1.0 - alpha / 2.0)))
}

/// Metric means entering the sensitivity analysis, in fixed order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricMeans {
    pub rmse: f64,
    pub ms_ssim: f64,
    pub tg_rmse: f64,
    pub bdi: f64,
}

impl MetricMeans {
    fn as_array(&self) -> [f64; 4] {
        [self.rmse, self.ms_ssim, self.tg_rmse, self.bdi]
    }
}

/// Metric orientation: +1 for lower-is-better, -1 for MS-SSIM.
pub const METRIC_SIGNS: [f64; 4] = [1.0, -1.0, 1.0, 1.0];
pub const METRIC_NAMES: [&str; 4] = ["rmse", "ms_ssim", "tg_rmse", "bdi"];

/// Per-group sensitivity table. `contribution` is `None` when the deltas
/// sum to zero and the normalization is undefined.
#[derive(Clone, Debug)]
pub struct SensitivityTable {
    pub groups: Vec<String>,
    /// Signed per-metric degradations `s_m * (mu_ablated - mu_full)`.
    pub delta_per_metric: Vec<[f64; 4]>,
    /// Metric-averaged degradation per group.
    pub delta: Vec<f64>,
    pub contribution: Option<Vec<f64>>,
}

/// Applies the orientation signs to raw metric differences and normalizes
/// the per-group averages into contributions.
pub fn sensitivity_from_raw_deltas(groups: &[String], raw: &[[f64; 4]]) -> Result<SensitivityTable> {
    if groups.len() != raw.len() || groups.is_empty() {
        return Err(Error::invalid("sensitivity", "one raw delta row required per group"));
    }
    let delta_per_metric: Vec<[f64; 4]> = raw
        .iter()
        .map(|row| {
            let mut signed = [0.0; 4];
            for (k, v) in row.iter().enumerate() {
                signed[k] = METRIC_SIGNS[k] * v;
            }
            signed
        })
        .collect();
    let delta: Vec<f64> = delta_per_metric.iter().map(|r| r.iter().sum::<f64>() / 4.0).collect();
    let total: f64 = delta.iter().sum();
    let contribution = if total == 0.0 {
        None
    } else {
        Some(delta.iter().map(|d| d / total).collect())
    };
    Ok(SensitivityTable {
        groups: groups.to_vec(),
        delta_per_metric,
        delta,
        contribution,
    })
}

/// Sensitivity from measured means: full model vs one ablated run per group.
pub fn sensitivity(full: &MetricMeans, ablated: &[(String, MetricMeans)]) -> Result<SensitivityTable> {
    let groups: Vec<String> = ablated.iter().map(|(g, _)| g.clone()).collect();
    let raw: Vec<[f64; 4]> = ablated
        .iter()
        .map(|(_, m)| {
            let a = m.as_array();
            let f = full.as_array();
            [a[0] - f[0], a[1] - f[1], a[2] - f[2], a[3] - f[3]]
        })
        .collect();
    sensitivity_from_raw_deltas(&groups, &raw)
}
