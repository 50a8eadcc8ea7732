//! Core gridded data types: field sequences, observation masks, and the
//! latitude/longitude grid they live on.

use crate::error::{Error, Result};

/// Sentinel marking missing or invalid values throughout the pipeline.
pub const MISSING: f64 = -1.0;

/// An `(L, H, W)` sequence of real-valued frames. Observed values lie in
/// `[0, 1]`; missing values carry the sentinel `-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldVolume {
    l: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl FieldVolume {
    pub fn zeros(l: usize, h: usize, w: usize) -> Self {
        FieldVolume {
            l,
            h,
            w,
            data: vec![0.0; l * h * w],
        }
    }

    pub fn from_vec(l: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if l == 0 || h == 0 || w == 0 {
            return Err(Error::invalid("FieldVolume", "extents must be positive"));
        }
        if data.len() != l * h * w {
            return Err(Error::invalid(
                "FieldVolume",
                format!("{} values for ({l}, {h}, {w})", data.len()),
            ));
        }
        for (i, &v) in data.iter().enumerate() {
            if !(v == MISSING || (0.0..=1.0).contains(&v)) {
                return Err(Error::invalid(
                    "FieldVolume",
                    format!("value {v} at flat index {i} outside [0, 1] and not the missing sentinel"),
                ));
            }
        }
        Ok(FieldVolume { l, h, w, data })
    }

    /// Builds without the range check; for trusted internal producers.
    pub(crate) fn from_vec_unchecked(l: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), l * h * w);
        FieldVolume { l, h, w, data }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.l, self.h, self.w)
    }

    pub fn len_frames(&self) -> usize {
        self.l
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn idx(&self, f: usize, i: usize, j: usize) -> usize {
        (f * self.h + i) * self.w + j
    }

    #[inline]
    pub fn get(&self, f: usize, i: usize, j: usize) -> f64 {
        self.data[self.idx(f, i, j)]
    }

    #[inline]
    pub fn set(&mut self, f: usize, i: usize, j: usize, v: f64) {
        let k = self.idx(f, i, j);
        self.data[k] = v;
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        &self.data[f * self.h * self.w..(f + 1) * self.h * self.w]
    }

    /// True when no value carries the missing sentinel.
    pub fn is_complete(&self) -> bool {
        self.data.iter().all(|&v| v != MISSING)
    }
}

/// Binary observation mask over `(L, H, W)`: 1 = observed, 0 = missing.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskVolume {
    l: usize,
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl MaskVolume {
    pub fn filled(l: usize, h: usize, w: usize, observed: bool) -> Self {
        MaskVolume {
            l,
            h,
            w,
            data: vec![observed as u8; l * h * w],
        }
    }

    pub fn from_vec(l: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != l * h * w {
            return Err(Error::invalid(
                "MaskVolume",
                format!("{} values for ({l}, {h}, {w})", data.len()),
            ));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("MaskVolume", "mask values must be 0 or 1"));
        }
        Ok(MaskVolume { l, h, w, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.l, self.h, self.w)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, f: usize, i: usize, j: usize) -> usize {
        (f * self.h + i) * self.w + j
    }

    #[inline]
    pub fn observed(&self, f: usize, i: usize, j: usize) -> bool {
        self.data[self.idx(f, i, j)] == 1
    }

    pub fn count_observed(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn frame(&self, f: usize) -> &[u8] {
        &self.data[f * self.h * self.w..(f + 1) * self.h * self.w]
    }
}

/// Uniform global grid: `H` latitude rows spanning the poles and `W`
/// longitude columns spanning the antimeridian range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub l: usize,
    pub h: usize,
    pub w: usize,
}

impl GridSpec {
    pub fn new(l: usize, h: usize, w: usize) -> Result<Self> {
        if l == 0 || h < 2 || w < 2 {
            return Err(Error::invalid(
                "GridSpec",
                format!("need L >= 1 and H, W >= 2, got ({l}, {h}, {w})"),
            ));
        }
        Ok(GridSpec { l, h, w })
    }

    /// Latitude of row `h` in radians, from -pi/2 to +pi/2 inclusive.
    pub fn lat(&self, row: usize) -> f64 {
        -std::f64::consts::FRAC_PI_2
            + (row as f64 / (self.h - 1) as f64) * std::f64::consts::PI
    }

    /// Longitude of column `w` in radians, from -pi to +pi inclusive.
    pub fn lon(&self, col: usize) -> f64 {
        -std::f64::consts::PI + (col as f64 / (self.w - 1) as f64) * 2.0 * std::f64::consts::PI
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_rejects_out_of_range_values() {
        assert!(FieldVolume::from_vec(1, 1, 2, vec![0.5, 1.5]).is_err());
        assert!(FieldVolume::from_vec(1, 1, 2, vec![0.5, -0.5]).is_err());
        assert!(FieldVolume::from_vec(1, 1, 2, vec![0.5, MISSING]).is_ok());
    }

    #[test]
    fn mask_is_binary() {
        assert!(MaskVolume::from_vec(1, 1, 2, vec![0, 2]).is_err());
        assert!(MaskVolume::from_vec(1, 1, 2, vec![0, 1]).is_ok());
    }

    #[test]
    fn grid_endpoints_hit_poles_and_antimeridian() {
        let g = GridSpec::new(1, 5, 9).unwrap();
        assert!((g.lat(0) + std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((g.lat(4) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((g.lon(0) + std::f64::consts::PI).abs() < 1e-15);
        assert!((g.lon(8) - std::f64::consts::PI).abs() < 1e-15);
        // Uniform spacing.
        let step = g.lat(1) - g.lat(0);
        for r in 1..4 {
            assert!((g.lat(r + 1) - g.lat(r) - step).abs() < 1e-12);
        }
    }
}
