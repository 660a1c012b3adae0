//! Meter-space error statistics and the moving-average smoothing baseline.

use serde::{Deserialize, Serialize};

use crate::geodesy::{from_grid_xy, grid_xy, ground_distance_in, GeoPoint, Zone};
use crate::{Error, Result};

/// Lane width used for the lane-level rate, meters.
pub const LANE_WIDTH_M: f64 = 3.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    /// Fraction of points with error at most the lane threshold.
    pub lane_level_rate: f64,
    pub count: usize,
}

/// Per-point ground distances between index-aligned tracks.
pub fn point_errors(predicted: &[GeoPoint], truth: &[GeoPoint], zone: Zone) -> Result<Vec<f64>> {
    if predicted.len() != truth.len() {
        return Err(Error::Alignment {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput("track"));
    }
    predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| ground_distance_in(*p, *t, zone))
        .collect()
}

pub fn stats_from_errors(errors: &[f64], lane_threshold: f64) -> Result<ErrorStats> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("errors"));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let sd = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let max = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ErrorStats {
        // rounding in the sum can land a hair outside [min, max] for constant errors
        mean: mean.clamp(min, max),
        sd,
        min,
        max,
        lane_level_rate: errors.iter().filter(|&&e| e <= lane_threshold).count() as f64 / n,
        count: errors.len(),
    })
}

pub fn error_stats(predicted: &[GeoPoint], truth: &[GeoPoint], zone: Zone) -> Result<ErrorStats> {
    error_stats_with_threshold(predicted, truth, zone, LANE_WIDTH_M)
}

pub fn error_stats_with_threshold(
    predicted: &[GeoPoint],
    truth: &[GeoPoint],
    zone: Zone,
    lane_threshold: f64,
) -> Result<ErrorStats> {
    stats_from_errors(&point_errors(predicted, truth, zone)?, lane_threshold)
}

/// Centred moving average of width `window` in `zone`'s grid. Near the ends
/// the window shrinks symmetrically so every output stays centred.
pub fn moving_average_filter(track: &[GeoPoint], window: usize, zone: Zone) -> Result<Vec<GeoPoint>> {
    if track.is_empty() {
        return Err(Error::EmptyInput("track"));
    }
    if window == 0 || window % 2 == 0 {
        return Err(Error::Config(format!("filter window {window} must be odd and positive")));
    }
    let xy = track
        .iter()
        .map(|p| grid_xy(*p, zone))
        .collect::<Result<Vec<_>>>()?;
    let n = xy.len();
    let half = window / 2;
    (0..n)
        .map(|i| {
            if window == 1 {
                return Ok(track[i]);
            }
            let h = half.min(i).min(n - 1 - i);
            let span = &xy[i - h..=i + h];
            let k = span.len() as f64;
            let x = span.iter().map(|p| p.0).sum::<f64>() / k;
            let y = span.iter().map(|p| p.1).sum::<f64>() / k;
            from_grid_xy(x, y, zone)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub name: String,
    pub stats: ErrorStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareTable {
    pub rows: Vec<CompareRow>,
}

const CSV_HEADER: [&str; 7] = ["track", "mean_m", "sd_m", "min_m", "max_m", "lane_level_rate", "count"];

impl CompareTable {
    /// Aligned text with two decimals.
    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(["track".len()])
            .max()
            .unwrap_or(5);
        let mut out = format!(
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}  {:>7}\n",
            "track", "mean (m)", "sd (m)", "min (m)", "max (m)", "lane rate", "count"
        );
        for r in &self.rows {
            let s = &r.stats;
            out.push_str(&format!(
                "{:<width$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>9.2}  {:>9.2}  {:>7}\n",
                r.name, s.mean, s.sd, s.min, s.max, s.lane_level_rate, s.count
            ));
        }
        out
    }

    /// CSV with every value at full precision.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            let s = &r.stats;
            w.write_record([
                r.name.clone(),
                s.mean.to_string(),
                s.sd.to_string(),
                s.min.to_string(),
                s.max.to_string(),
                s.lane_level_rate.to_string(),
                s.count.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let bad = |row: usize, msg: String| Error::Parse {
            path: "<compare table>".into(),
            row,
            msg,
        };
        if r.headers()?.iter().ne(CSV_HEADER) {
            return Err(bad(1, "unexpected columns".into()));
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |j: usize| {
                rec.get(j)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| bad(i + 2, format!("bad value in column {}", CSV_HEADER[j])))
            };
            rows.push(CompareRow {
                name: rec.get(0).unwrap_or_default().to_string(),
                stats: ErrorStats {
                    mean: num(1)?,
                    sd: num(2)?,
                    min: num(3)?,
                    max: num(4)?,
                    lane_level_rate: num(5)?,
                    count: rec
                        .get(6)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad(i + 2, "bad count".into()))?,
                },
            });
        }
        Ok(Self { rows })
    }

    pub fn row(&self, name: &str) -> Option<&ErrorStats> {
        self.rows.iter().find(|r| r.name == name).map(|r| &r.stats)
    }
}

/// One row per named `(predicted, truth)` pair, in the given order.
pub fn compare_table(rows: &[(&str, &[GeoPoint], &[GeoPoint])], zone: Zone) -> Result<CompareTable> {
    let rows = rows
        .iter()
        .map(|(name, p, t)| {
            Ok(CompareRow {
                name: name.to_string(),
                stats: error_stats(p, t, zone)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompareTable { rows })
}
