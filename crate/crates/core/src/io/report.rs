//! Evaluation reports: one text record per window plus one summary record
//! per metric with its bootstrap confidence interval.

use crate::error::{Error, Result};

pub const REPORT_FORMAT: &str = "swathfill-report";
pub const REPORT_VERSION: u32 = 1;

/// Hole-domain metric values for one evaluation window. An undefined
/// Pearson correlation (zero variance) is reported as such.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowMetrics {
    pub rmse: f64,
    pub tg_rmse: f64,
    pub pearson: Option<f64>,
    pub ms_ssim: f64,
    pub bdi: f64,
}

/// Mean and 95% bootstrap interval for one metric across windows.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryLine {
    pub metric: String,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub windows: Vec<WindowMetrics>,
    pub summaries: Vec<SummaryLine>,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        for s in &self.summaries {
            if !(s.lo <= s.mean && s.mean <= s.hi) {
                return Err(Error::Data(format!(
                    "summary for {}: interval [{}, {}] does not contain mean {}",
                    s.metric, s.lo, s.hi, s.mean
                )));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("format: {REPORT_FORMAT}\n"));
        s.push_str(&format!("version: {REPORT_VERSION}\n"));
        s.push_str(&format!("windows: {}\n", self.windows.len()));
        for (i, w) in self.windows.iter().enumerate() {
            let pearson = match w.pearson {
                Some(v) => format!("{v}"),
                None => "undef".to_string(),
            };
            s.push_str(&format!(
                "window: {i} rmse={} tg_rmse={} pearson={pearson} ms_ssim={} bdi={}\n",
                w.rmse, w.tg_rmse, w.ms_ssim, w.bdi
            ));
        }
        for sum in &self.summaries {
            s.push_str(&format!(
                "summary: {} mean={} lo={} hi={}\n",
                sum.metric, sum.mean, sum.lo, sum.hi
            ));
        }
        s
    }

    pub fn parse(text: &str) -> Result<MetricReport> {
        let mut format_ok = false;
        let mut version = None;
        let mut declared = None;
        let mut windows = Vec::new();
        let mut summaries = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::Data(format!("report line {}: expected `key: ...`", ln + 1)))?;
            let v = v.trim();
            match k.trim() {
                "format" => {
                    if v != REPORT_FORMAT {
                        return Err(Error::Data(format!("report: format {v:?} is not {REPORT_FORMAT:?}")));
                    }
                    format_ok = true;
                }
                "version" => {
                    version = Some(
                        v.parse::<u32>()
                            .map_err(|_| Error::Data(format!("report: bad version {v:?}")))?,
                    )
                }
                "windows" => {
                    declared = Some(
                        v.parse::<usize>()
                            .map_err(|_| Error::Data(format!("report: bad window count {v:?}")))?,
                    )
                }
                "window" => {
                    let mut parts = v.split_whitespace();
                    let idx: usize = parts
                        .next()
                        .ok_or_else(|| Error::Data("report: window record without index".into()))?
                        .parse()
                        .map_err(|_| Error::Data("report: bad window index".into()))?;
                    if idx != windows.len() {
                        return Err(Error::Data(format!(
                            "report: window {idx} out of order (expected {})",
                            windows.len()
                        )));
                    }
                    let mut rmse = None;
                    let mut tg = None;
                    let mut pearson = None;
                    let mut ms = None;
                    let mut bdi = None;
                    for field in parts {
                        let (fk, fv) = field
                            .split_once('=')
                            .ok_or_else(|| Error::Data(format!("report: bad field {field:?}")))?;
                        let num = |s: &str| -> Result<f64> {
                            s.parse()
                                .map_err(|_| Error::Data(format!("report: bad number {s:?}")))
                        };
                        match fk {
                            "rmse" => rmse = Some(num(fv)?),
                            "tg_rmse" => tg = Some(num(fv)?),
                            "pearson" => {
                                pearson = Some(if fv == "undef" { None } else { Some(num(fv)?) });
                            }
                            "ms_ssim" => ms = Some(num(fv)?),
                            "bdi" => bdi = Some(num(fv)?),
                            other => return Err(Error::Data(format!("report: unknown field {other:?}"))),
                        }
                    }
                    windows.push(WindowMetrics {
                        rmse: rmse.ok_or_else(|| Error::Data("report: window missing rmse".into()))?,
                        tg_rmse: tg.ok_or_else(|| Error::Data("report: window missing tg_rmse".into()))?,
                        pearson: pearson.ok_or_else(|| Error::Data("report: window missing pearson".into()))?,
                        ms_ssim: ms.ok_or_else(|| Error::Data("report: window missing ms_ssim".into()))?,
                        bdi: bdi.ok_or_else(|| Error::Data("report: window missing bdi".into()))?,
                    });
                }
                "summary" => {
                    let mut parts = v.split_whitespace();
                    let metric = parts
                        .next()
                        .ok_or_else(|| Error::Data("report: summary without metric name".into()))?
                        .to_string();
                    let mut mean = None;
                    let mut lo = None;
                    let mut hi = None;
                    for field in parts {
                        let (fk, fv) = field
                            .split_once('=')
                            .ok_or_else(|| Error::Data(format!("report: bad field {field:?}")))?;
                        let num: f64 = fv
                            .parse()
                            .map_err(|_| Error::Data(format!("report: bad number {fv:?}")))?;
                        match fk {
                            "mean" => mean = Some(num),
                            "lo" => lo = Some(num),
                            "hi" => hi = Some(num),
                            other => return Err(Error::Data(format!("report: unknown field {other:?}"))),
                        }
                    }
                    summaries.push(SummaryLine {
                        metric,
                        mean: mean.ok_or_else(|| Error::Data("report: summary missing mean".into()))?,
                        lo: lo.ok_or_else(|| Error::Data("report: summary missing lo".into()))?,
                        hi: hi.ok_or_else(|| Error::Data("report: summary missing hi".into()))?,
                    });
                }
                other => return Err(Error::Data(format!("report: unknown key {other:?}"))),
            }
        }
        if !format_ok {
            return Err(Error::Data("report: missing format line".into()));
        }
        match version {
            Some(REPORT_VERSION) => {}
            Some(v) => return Err(Error::Data(format!("report: unsupported version {v}"))),
            None => return Err(Error::Data("report: missing version".into())),
        }
        let declared = declared.ok_or_else(|| Error::Data("report: missing window count".into()))?;
        if declared != windows.len() {
            return Err(Error::Data(format!(
                "report: declared {declared} windows, found {}",
                windows.len()
            )));
        }
        Ok(MetricReport { windows, summaries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MetricReport {
        MetricReport {
            windows: vec![
                WindowMetrics {
                    rmse: 0.125,
                    tg_rmse: 0.0625,
                    pearson: Some(0.875),
                    ms_ssim: 0.9375,
                    bdi: 0.0,
                },
                WindowMetrics {
                    rmse: 0.1,
                    tg_rmse: 0.05,
                    pearson: None,
                    ms_ssim: 0.9,
                    bdi: 0.01,
                },
            ],
            summaries: vec![SummaryLine {
                metric: "rmse".into(),
                mean: 0.1125,
                lo: 0.1,
                hi: 0.125,
            }],
        }
    }

    #[test]
    fn report_round_trips_through_text() {
        let r = sample();
        let parsed = MetricReport::parse(&r.to_text()).unwrap();
        assert_eq!(r, parsed);
    }

    #[test]
    fn round_trip_preserves_awkward_floats() {
        let mut r = sample();
        r.windows[0].rmse = 0.1 + 0.2; // 0.30000000000000004
        r.windows[0].ms_ssim = f64::MIN_POSITIVE;
        let parsed = MetricReport::parse(&r.to_text()).unwrap();
        assert_eq!(r, parsed);
    }

    #[test]
    fn parse_rejects_malformed_input() {
        assert!(MetricReport::parse("").is_err());
        assert!(MetricReport::parse("format: swathfill-report\nversion: 1\nwindows: 2\n").is_err());
        assert!(MetricReport::parse("format: nope\nversion: 1\nwindows: 0\n").is_err());
        let bad_order = "format: swathfill-report\nversion: 1\nwindows: 1\nwindow: 5 rmse=0 tg_rmse=0 pearson=0 ms_ssim=0 bdi=0\n";
        assert!(MetricReport::parse(bad_order).is_err());
    }

    #[test]
    fn validate_checks_interval_contains_mean() {
        let mut r = sample();
        r.validate().unwrap();
        r.summaries[0].mean = 0.5;
        assert!(r.validate().is_err());
    }
}
