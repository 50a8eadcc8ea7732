//! The grid-file container: a text header describing a little-endian `f32`
//! payload in C order `(channels, L, H, W)`.

use std::path::Path;

use super::{atomic_write, f32_to_payload, header_line, payload_to_f32, sidecar_paths};
use crate::error::{Error, Result};
use crate::field::{FieldVolume, MaskVolume, MISSING};

pub const GRID_FORMAT: &str = "swathfill-grid";
pub const GRID_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct GridHeader {
    pub version: u32,
    /// `(channels, L, H, W)`.
    pub dims: [usize; 4],
    pub channels: Vec<String>,
    pub missing: f64,
    pub units: String,
    pub seed: u64,
}

impl GridHeader {
    pub fn new(dims: [usize; 4], channels: Vec<String>, units: &str, seed: u64) -> Self {
        GridHeader {
            version: GRID_VERSION,
            dims,
            channels,
            missing: MISSING,
            units: units.to_string(),
            seed,
        }
    }

    pub fn numel(&self) -> Option<usize> {
        self.dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("format: {GRID_FORMAT}\n"));
        s.push_str(&format!("version: {}\n", self.version));
        s.push_str(&format!(
            "dims: {} {} {} {}\n",
            self.dims[0], self.dims[1], self.dims[2], self.dims[3]
        ));
        s.push_str("dtype: f32le\n");
        s.push_str(&format!("channels: {}\n", self.channels.join(" ")));
        s.push_str(&format!("missing: {}\n", self.missing));
        s.push_str(&format!("units: {}\n", self.units));
        s.push_str(&format!("seed: {}\n", self.seed));
        s
    }

    pub fn parse(text: &str) -> Result<GridHeader> {
        let mut format = None;
        let mut version = None;
        let mut dims = None;
        let mut dtype = None;
        let mut channels = None;
        let mut missing = None;
        let mut units = None;
        let mut seed = None;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = header_line(line)
                .ok_or_else(|| Error::Data(format!("grid header line {} is not `key: value`", ln + 1)))?;
            match k {
                "format" => format = Some(v.to_string()),
                "version" => {
                    version = Some(v.parse::<u32>().map_err(|_| {
                        Error::Data(format!("grid header: bad version {v:?}"))
                    })?)
                }
                "dims" => {
                    let parts: Vec<usize> = v
                        .split_whitespace()
                        .map(|p| p.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::Data(format!("grid header: bad dims {v:?}")))?;
                    if parts.len() != 4 {
                        return Err(Error::Data(format!(
                            "grid header: dims needs 4 extents, got {}",
                            parts.len()
                        )));
                    }
                    dims = Some([parts[0], parts[1], parts[2], parts[3]]);
                }
                "dtype" => dtype = Some(v.to_string()),
                "channels" => channels = Some(v.split_whitespace().map(str::to_string).collect::<Vec<_>>()),
                "missing" => {
                    missing = Some(v.parse::<f64>().map_err(|_| {
                        Error::Data(format!("grid header: bad missing value {v:?}"))
                    })?)
                }
                "units" => units = Some(v.to_string()),
                "seed" => {
                    seed = Some(v.parse::<u64>().map_err(|_| {
                        Error::Data(format!("grid header: bad seed {v:?}"))
                    })?)
                }
                other => return Err(Error::Data(format!("grid header: unknown key {other:?}"))),
            }
        }
        let format = format.ok_or_else(|| Error::Data("grid header: missing format".into()))?;
        if format != GRID_FORMAT {
            return Err(Error::Data(format!("grid header: format {format:?} is not {GRID_FORMAT:?}")));
        }
        let version = version.ok_or_else(|| Error::Data("grid header: missing version".into()))?;
        if version != GRID_VERSION {
            return Err(Error::Data(format!("grid header: unsupported version {version}")));
        }
        let dtype = dtype.ok_or_else(|| Error::Data("grid header: missing dtype".into()))?;
        if dtype != "f32le" {
            return Err(Error::Data(format!("grid header: unsupported dtype {dtype:?}")));
        }
        let dims = dims.ok_or_else(|| Error::Data("grid header: missing dims".into()))?;
        let channels: Vec<String> = channels.ok_or_else(|| Error::Data("grid header: missing channels".into()))?;
        if channels.len() != dims[0] {
            return Err(Error::Data(format!(
                "grid header: {} channel names for {} channels",
                channels.len(),
                dims[0]
            )));
        }
        let header = GridHeader {
            version,
            dims,
            channels,
            missing: missing.ok_or_else(|| Error::Data("grid header: missing `missing`".into()))?,
            units: units.ok_or_else(|| Error::Data("grid header: missing units".into()))?,
            seed: seed.ok_or_else(|| Error::Data("grid header: missing seed".into()))?,
        };
        header
            .numel()
            .ok_or_else(|| Error::Data("grid header: dims overflow".into()))?;
        Ok(header)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridFile {
    pub header: GridHeader,
    pub data: Vec<f32>,
}

/// Decodes a header/payload pair, validating the length contract.
pub fn decode(header_text: &str, payload: &[u8]) -> Result<GridFile> {
    let header = GridHeader::parse(header_text)?;
    let numel = header
        .numel()
        .ok_or_else(|| Error::Data("grid header: dims overflow".into()))?;
    let data = payload_to_f32(payload)?;
    if data.len() != numel {
        return Err(Error::Data(format!(
            "grid payload has {} values but dims {:?} imply {}",
            data.len(),
            header.dims,
            numel
        )));
    }
    Ok(GridFile { header, data })
}

pub fn write(base: &Path, header: &GridHeader, data: &[f32]) -> Result<()> {
    let numel = header
        .numel()
        .ok_or_else(|| Error::Data("grid header: dims overflow".into()))?;
    if data.len() != numel {
        return Err(Error::Data(format!(
            "grid write: {} values for dims {:?}",
            data.len(),
            header.dims
        )));
    }
    let (hdr, bin) = sidecar_paths(base);
    atomic_write(&hdr, header.to_text().as_bytes())?;
    atomic_write(&bin, &f32_to_payload(data))?;
    Ok(())
}

pub fn read(base: &Path) -> Result<GridFile> {
    let (hdr, bin) = sidecar_paths(base);
    let text = std::fs::read_to_string(&hdr)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", hdr.display())))?;
    let payload = std::fs::read(&bin).map_err(|e| Error::Data(format!("cannot read {}: {e}", bin.display())))?;
    decode(&text, &payload)
}

/// Single-channel grid from a field volume (f64 narrowed to f32).
pub fn from_field(field: &FieldVolume, name: &str, units: &str, seed: u64) -> GridFile {
    let (l, h, w) = field.dims();
    GridFile {
        header: GridHeader::new([1, l, h, w], vec![name.to_string()], units, seed),
        data: field.data().iter().map(|&v| v as f32).collect(),
    }
}

/// Interprets a single-channel grid as a field volume, validating range.
pub fn to_field(grid: &GridFile) -> Result<FieldVolume> {
    if grid.header.dims[0] != 1 {
        return Err(Error::Data(format!(
            "expected a single-channel grid, got {} channels",
            grid.header.dims[0]
        )));
    }
    let [_, l, h, w] = grid.header.dims;
    FieldVolume::from_vec(l, h, w, grid.data.iter().map(|&v| v as f64).collect())
        .map_err(|e| Error::Data(format!("grid is not a valid field: {e}")))
}

/// Interprets a single-channel grid of zeros and ones as a mask.
pub fn to_mask(grid: &GridFile) -> Result<MaskVolume> {
    if grid.header.dims[0] != 1 {
        return Err(Error::Data(format!(
            "expected a single-channel grid, got {} channels",
            grid.header.dims[0]
        )));
    }
    let [_, l, h, w] = grid.header.dims;
    let bits: Vec<u8> = grid
        .data
        .iter()
        .map(|&v| {
            if v == 0.0 {
                Ok(0u8)
            } else if v == 1.0 {
                Ok(1u8)
            } else {
                Err(Error::Data(format!("mask grid holds non-binary value {v}")))
            }
        })
        .collect::<Result<_>>()?;
    MaskVolume::from_vec(l, h, w, bits).map_err(|e| Error::Data(format!("grid is not a valid mask: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_header() -> GridHeader {
        GridHeader::new([2, 3, 4, 8], vec!["a".into(), "b".into()], "normalized", 7)
    }

    #[test]
    fn header_round_trips_through_text() {
        let h = sample_header();
        let parsed = GridHeader::parse(&h.to_text()).unwrap();
        assert_eq!(h, parsed);
    }

    #[test]
    fn decode_validates_payload_length() {
        let h = sample_header();
        let n = h.numel().unwrap();
        let ok = decode(&h.to_text(), &vec![0u8; n * 4]);
        assert!(ok.is_ok());
        assert!(decode(&h.to_text(), &vec![0u8; n * 4 - 4]).is_err());
        assert!(decode(&h.to_text(), &vec![0u8; n * 4 + 2]).is_err());
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(GridHeader::parse("not a header").is_err());
        assert!(GridHeader::parse("format: other\nversion: 1\n").is_err());
        assert!(GridHeader::parse("").is_err());
        // Overflowing dims must error, not panic.
        let txt = "format: swathfill-grid\nversion: 1\ndims: 99999999999 99999999999 4 4\ndtype: f32le\nchannels: a\nmissing: -1\nunits: u\nseed: 0\n";
        assert!(GridHeader::parse(txt).is_err());
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join(format!("swathfill-grid-test-{}", std::process::id()));
        let base = dir.join("vol");
        let h = sample_header();
        let data: Vec<f32> = (0..h.numel().unwrap()).map(|i| (i as f32) * 0.25 - 3.0).collect();
        write(&base, &h, &data).unwrap();
        let back = read(&base).unwrap();
        assert_eq!(back.header, h);
        assert!(back.data.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn field_grid_conversion_checks_range() {
        let f = FieldVolume::from_vec(1, 2, 2, vec![0.0, 0.5, 1.0, MISSING]).unwrap();
        let g = from_field(&f, "field", "normalized", 0);
        let back = to_field(&g).unwrap();
        assert_eq!(back.data(), f.data());
        let mut bad = g.clone();
        bad.data[0] = 2.0;
        assert!(to_field(&bad).is_err());
    }
}
