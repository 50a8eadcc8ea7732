//! Non-learned reference methods: per-pixel temporal linear interpolation
//! and harmonic (Laplace) spatial fill.

use crate::field::{FieldVolume, MISSING};

/// Per-pixel temporal linear interpolation.
///
/// Interior gaps interpolate linearly between the nearest observed frames;
/// gaps before the first or after the last observation hold the nearest
/// observed value; a single observation fills the whole timeline; a pixel
/// with no observations stays missing.
pub fn tli(xbar: &FieldVolume) -> FieldVolume {
    let (l, h, w) = xbar.dims();
    let mut out = xbar.clone();
    for i in 0..h {
        for j in 0..w {
            let observed: Vec<usize> = (0..l).filter(|&f| xbar.get(f, i, j) != MISSING).collect();
            match observed.len() {
                0 => {}
                1 => {
                    let v = xbar.get(observed[0], i, j);
                    for f in 0..l {
                        out.set(f, i, j, v);
                    }
                }
                _ => {
                    for f in 0..l {
                        if xbar.get(f, i, j) != MISSING {
                            continue;
                        }
                        let prev = observed.iter().rev().find(|&&t| t < f).copied();
                        let next = observed.iter().find(|&&t| t > f).copied();
                        let v = match (prev, next) {
                            (Some(ti), Some(tj)) => {
                                let (vi, vj) = (xbar.get(ti, i, j), xbar.get(tj, i, j));
                                vi + (f - ti) as f64 / (tj - ti) as f64 * (vj - vi)
                            }
                            (Some(ti), None) => xbar.get(ti, i, j),
                            (None, Some(tj)) => xbar.get(tj, i, j),
                            (None, None) => unreachable!("observed nonempty"),
                        };
                        out.set(f, i, j, v);
                    }
                }
            }
        }
    }
    out
}

/// Result of [`spatial_fill`]: the filled field plus the indices of frames
/// that had no observed pixels at all (filled with zero).
#[derive(Clone, Debug)]
pub struct SpatialFillResult {
    pub field: FieldVolume,
    pub empty_frames: Vec<usize>,
}

const JACOBI_TOL: f64 = 1e-6;
const JACOBI_MAX_ITERS: usize = 10_000;

/// Replaces each frame's remaining missing pixels by the harmonic extension
/// of the observed values: Jacobi iteration of the discrete Laplace
/// equation with observed pixels as Dirichlet boundary. Longitude wraps;
/// latitude edges use their in-grid neighbors only.
pub fn spatial_fill(x: &FieldVolume) -> SpatialFillResult {
    let (l, h, w) = x.dims();
    let mut out = x.clone();
    let mut empty_frames = Vec::new();
    for f in 0..l {
        let frame: Vec<f64> = out.frame(f).to_vec();
        let missing: Vec<usize> = (0..h * w).filter(|&i| frame[i] == MISSING).collect();
        if missing.is_empty() {
            continue;
        }
        let observed: Vec<f64> = frame.iter().copied().filter(|&v| v != MISSING).collect();
        if observed.is_empty() {
            for i in 0..h * w {
                out.data_mut()[f * h * w + i] = 0.0;
            }
            empty_frames.push(f);
            continue;
        }
        let init = observed.iter().sum::<f64>() / observed.len() as f64;
        let mut cur = frame.clone();
        for v in cur.iter_mut() {
            if *v == MISSING {
                *v = init;
            }
        }
        let neighbors = |i: usize| -> [Option<usize>; 4] {
            let (r, c) = (i / w, i % w);
            [
                (r > 0).then(|| (r - 1) * w + c),
                (r + 1 < h).then(|| (r + 1) * w + c),
                Some(r * w + (c + w - 1) % w),
                Some(r * w + (c + 1) % w),
            ]
        };
        for _ in 0..JACOBI_MAX_ITERS {
            let mut next = cur.clone();
            let mut residual = 0.0f64;
            for &i in &missing {
                let mut sum = 0.0;
                let mut count = 0usize;
                for nb in neighbors(i).into_iter().flatten() {
                    sum += cur[nb];
                    count += 1;
                }
                let mean = sum / count as f64;
                residual = residual.max((mean - cur[i]).abs());
                next[i] = mean;
            }
            cur = next;
            if residual < JACOBI_TOL {
                break;
            }
        }
        for &i in &missing {
            out.data_mut()[f * h * w + i] = cur[i];
        }
    }
    SpatialFillResult {
        field: out,
        empty_frames,
    }
}

/// Temporal interpolation followed by spatial fill of whatever remains.
pub fn tli_with_fill(xbar: &FieldVolume) -> SpatialFillResult {
    spatial_fill(&tli(xbar))
}
