//! Samples, targets, trajectory splits, and the data sources that feed them:
//! CSV manifests, simulated GPS noise and a procedural image world.

pub mod geojson;
pub mod image;
pub mod manifest;
pub mod noise;
pub mod world;

pub use self::image::GrayImage;
pub use manifest::{load_manifest, write_manifest, Manifest};
pub use noise::{simulate_gps_noise, NoiseConfig, NoiseModel};
pub use world::{generate_synthetic_world, Course, Renderer, SyntheticWorld, SyntheticWorldConfig};

use serde::{Deserialize, Serialize};

use crate::geodesy::{delta_between, DeltaLocation, GeoPoint, Zone};
use crate::{Error, Result};

/// Which point a sample's target is measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// From the sample's own raw GPS fix.
    GpsRelative,
    /// From one fixed ground control point shared by every sample.
    Gcp,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::GpsRelative => "gps-relative",
            Mode::Gcp => "gcp",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gps-relative" => Ok(Mode::GpsRelative),
            "gcp" => Ok(Mode::Gcp),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected gps-relative or gcp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Image path relative to the manifest, or an in-memory id.
    pub image_ref: String,
    pub timestamp: f64,
    pub raw_fix: Option<GeoPoint>,
    pub truth: Option<GeoPoint>,
    pub anchor: Option<GeoPoint>,
    /// `truth - anchor` in meters; set exactly when both are known.
    pub target: Option<DeltaLocation>,
}

impl Sample {
    pub fn new(image_ref: impl Into<String>, timestamp: f64) -> Self {
        Self {
            image_ref: image_ref.into(),
            timestamp,
            raw_fix: None,
            truth: None,
            anchor: None,
            target: None,
        }
    }
}

/// Fills `anchor` and `target`. With `require_truth` every sample must carry
/// its truth (training); otherwise targets are left empty where truth is missing.
pub fn make_targets(
    samples: &[Sample],
    mode: Mode,
    gcp: Option<GeoPoint>,
    zone: Zone,
    require_truth: bool,
) -> Result<Vec<Sample>> {
    match (mode, gcp) {
        (Mode::Gcp, None) => return Err(Error::Config("gcp mode needs a ground control point".into())),
        (Mode::GpsRelative, Some(_)) => {
            return Err(Error::Config("a ground control point is only used in gcp mode".into()))
        }
        _ => {}
    }
    samples
        .iter()
        .enumerate()
        .map(|(row, s)| {
            let anchor = match mode {
                Mode::GpsRelative => s.raw_fix.ok_or(Error::IncompleteSample {
                    row,
                    what: "raw fix",
                })?,
                Mode::Gcp => gcp.expect("checked above"),
            };
            let target = match s.truth {
                Some(t) => Some(delta_between(anchor, t, zone)?),
                None if require_truth => {
                    return Err(Error::IncompleteSample { row, what: "truth" })
                }
                None => None,
            };
            Ok(Sample {
                anchor: Some(anchor),
                target,
                ..s.clone()
            })
        })
        .collect()
}

/// Segment sizes for `n` samples by largest-remainder rounding.
///
/// Leftover samples go to the segments with the largest fractional quotas;
/// equal remainders favour the later segment, so 10 samples at
/// (0.7, 0.15, 0.15) split as (7, 1, 2).
pub fn split_sizes(n: usize, fractions: (f64, f64, f64)) -> Result<[usize; 3]> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|v| !(v.is_finite() && *v > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {f:?} must be positive and sum to 1"
        )));
    }
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot be split three ways"
        )));
    }
    let quotas = f.map(|v| v * n as f64);
    let mut sizes = quotas.map(|q| q.floor() as usize);
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    // remainders closer than this are ties; floating noise must not pick the winner
    let rem = |i: usize| quotas[i] - quotas[i].floor();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (rem(a), rem(b));
        if (ra - rb).abs() < 1e-9 {
            b.cmp(&a)
        } else {
            rb.total_cmp(&ra)
        }
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    Ok(sizes)
}

/// Contiguous (train, validation, test) segments in original order.
pub fn split_trajectory<T: Clone>(
    samples: &[T],
    fractions: (f64, f64, f64),
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let [a, b, _] = split_sizes(samples.len(), fractions)?;
    Ok((
        samples[..a].to_vec(),
        samples[a..a + b].to_vec(),
        samples[a + b..].to_vec(),
    ))
}

/// For each frame time, the index of the nearest fix time. Both slices must be
/// sorted; a frame further than `max_gap` from every fix is an error.
pub fn align_by_timestamp(frame_times: &[f64], fix_times: &[f64], max_gap: f64) -> Result<Vec<usize>> {
    if fix_times.is_empty() {
        return Err(Error::EmptyInput("fix times"));
    }
    let mut j = 0;
    frame_times
        .iter()
        .enumerate()
        .map(|(row, &t)| {
            while j + 1 < fix_times.len() && (fix_times[j + 1] - t).abs() <= (fix_times[j] - t).abs() {
                j += 1;
            }
            if (fix_times[j] - t).abs() > max_gap {
                return Err(Error::IncompleteSample {
                    row,
                    what: "fix within the synchronisation window",
                });
            }
            Ok(j)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_text_round_trip() {
        for m in [Mode::GpsRelative, Mode::Gcp] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("relative".parse::<Mode>().is_err());
    }

    #[test]
    fn alignment_picks_nearest() {
        let idx = align_by_timestamp(&[0.1, 0.9, 1.6, 3.0], &[0.0, 1.0, 2.0, 3.0], 0.5).unwrap();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert!(align_by_timestamp(&[5.0], &[0.0, 1.0], 0.5).is_err());
    }
}
