//! CSV manifest of timestamped frames.
//!
//! ```text
//! #version=1
//! #zone=10N
//! #mode=gps-relative
//! timestamp,image_ref,raw_lat,raw_lon,true_lat,true_lon
//! 0,images/000000.png,37.77489,-122.41941,37.7749,-122.4194
//! ```
//!
//! `#mode=gcp` rows additionally need a `#gcp=lat,lon` line. Empty cells mean
//! "absent"; a column pair is either filled on every row or on none. Image
//! references are relative to the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{Mode, Sample};
use crate::geodesy::{GeoPoint, Zone};
use crate::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const COLUMNS: [&str; 6] = ["timestamp", "image_ref", "raw_lat", "raw_lon", "true_lat", "true_lon"];

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub zone: Zone,
    pub mode: Mode,
    pub gcp: Option<GeoPoint>,
    pub samples: Vec<Sample>,
}

impl Manifest {
    /// Absolute-or-cwd-relative path of a sample's image for a manifest stored at `manifest_path`.
    pub fn image_path(manifest_path: &Path, image_ref: &str) -> PathBuf {
        let r = Path::new(image_ref);
        if r.is_absolute() {
            r.to_path_buf()
        } else {
            manifest_path.parent().unwrap_or(Path::new("")).join(r)
        }
    }

    pub fn truth_track(&self) -> Option<Vec<GeoPoint>> {
        self.samples.iter().map(|s| s.truth).collect()
    }

    pub fn raw_track(&self) -> Option<Vec<GeoPoint>> {
        self.samples.iter().map(|s| s.raw_fix).collect()
    }
}

fn parse_err(path: &Path, row: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        msg: msg.into(),
    }
}

fn parse_point(path: &Path, row: usize, lat: &str, lon: &str, what: &str) -> Result<Option<GeoPoint>> {
    match (lat.trim(), lon.trim()) {
        ("", "") => Ok(None),
        ("", _) | (_, "") => Err(parse_err(path, row, format!("{what} has only one coordinate"))),
        (lat, lon) => {
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| parse_err(path, row, format!("bad {what} coordinate {s:?}")))
            };
            GeoPoint::new(num(lat)?, num(lon)?)
                .map(Some)
                .map_err(|e| parse_err(path, row, format!("{what}: {e}")))
        }
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text, path)
}

/// Parses manifest text; `path` is only used in error messages.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Manifest> {
    let mut header = BTreeMap::new();
    let mut header_lines = 0;
    for line in text.lines() {
        let Some(rest) = line.strip_prefix('#') else { break };
        header_lines += 1;
        let (k, v) = rest
            .split_once('=')
            .ok_or_else(|| parse_err(path, header_lines, "header line is not #key=value"))?;
        if header.insert(k.trim().to_string(), (v.trim().to_string(), header_lines)).is_some() {
            return Err(parse_err(path, header_lines, format!("duplicate header key {k:?}")));
        }
    }
    let mut take = |key: &str| header.remove(key);
    let end = header_lines.max(1);

    let (version, vrow) = take("version").ok_or_else(|| parse_err(path, end, "missing #version"))?;
    if version != MANIFEST_VERSION.to_string() {
        return Err(parse_err(path, vrow, format!("unsupported manifest version {version:?}")));
    }
    let (zone, zrow) = take("zone").ok_or_else(|| parse_err(path, end, "missing #zone"))?;
    let zone: Zone = zone
        .parse()
        .map_err(|e| parse_err(path, zrow, format!("bad zone: {e}")))?;
    let (mode, mrow) = take("mode").ok_or_else(|| parse_err(path, end, "missing #mode"))?;
    let mode: Mode = mode.parse().map_err(|e: Error| parse_err(path, mrow, e.to_string()))?;
    let gcp = match take("gcp") {
        None => None,
        Some((v, row)) => {
            let (lat, lon) = v
                .split_once(',')
                .ok_or_else(|| parse_err(path, row, "gcp must be lat,lon"))?;
            parse_point(path, row, lat, lon, "gcp")?
        }
    };
    match (mode, gcp.is_some()) {
        (Mode::Gcp, false) => return Err(parse_err(path, end, "gcp mode requires a #gcp header")),
        (Mode::GpsRelative, true) => {
            return Err(parse_err(path, end, "#gcp is only allowed in gcp mode"))
        }
        _ => {}
    }
    if let Some((key, (_, row))) = header.into_iter().next() {
        return Err(parse_err(path, row, format!("unknown header key {key:?}")));
    }

    let body: String = text
        .lines()
        .skip(header_lines)
        .flat_map(|l| [l, "\n"])
        .collect();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(body.as_bytes());
    let columns = reader
        .headers()
        .map_err(|e| parse_err(path, header_lines + 1, e.to_string()))?
        .clone();
    if columns.iter().map(str::trim).ne(COLUMNS) {
        return Err(parse_err(
            path,
            header_lines + 1,
            format!("columns must be exactly {}", COLUMNS.join(",")),
        ));
    }

    let mut samples: Vec<Sample> = Vec::new();
    let mut groups: Option<(bool, bool)> = None;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize) + header_lines;
            parse_err(path, row, e.to_string())
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize) + header_lines;
        if record.len() != COLUMNS.len() {
            return Err(parse_err(
                path,
                row,
                format!("expected {} fields, found {}", COLUMNS.len(), record.len()),
            ));
        }
        let timestamp: f64 = record[0]
            .trim()
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite())
            .ok_or_else(|| parse_err(path, row, format!("bad timestamp {:?}", &record[0])))?;
        if let Some(prev) = samples.last() {
            if timestamp < prev.timestamp {
                return Err(parse_err(
                    path,
                    row,
                    format!("timestamp {timestamp} goes back from {}", prev.timestamp),
                ));
            }
        }
        let image_ref = record[1].trim().to_string();
        if image_ref.is_empty() {
            return Err(parse_err(path, row, "empty image_ref"));
        }
        let raw_fix = parse_point(path, row, &record[2], &record[3], "raw fix")?;
        let truth = parse_point(path, row, &record[4], &record[5], "truth")?;
        let present = (raw_fix.is_some(), truth.is_some());
        match groups {
            None => groups = Some(present),
            Some(g) if g != present => {
                return Err(parse_err(
                    path,
                    row,
                    "raw/true columns must be filled on every row or on none",
                ))
            }
            _ => {}
        }
        samples.push(Sample {
            image_ref,
            timestamp,
            raw_fix,
            truth,
            anchor: None,
            target: None,
        });
    }
    Ok(Manifest {
        zone,
        mode,
        gcp,
        samples,
    })
}

/// Serialises `manifest`; floats use the shortest text that parses back to the same value.
pub fn manifest_to_string(manifest: &Manifest) -> Result<String> {
    let mut out = format!(
        "#version={MANIFEST_VERSION}\n#zone={}\n#mode={}\n",
        manifest.zone, manifest.mode
    );
    match (manifest.mode, manifest.gcp) {
        (Mode::Gcp, Some(g)) => out.push_str(&format!("#gcp={},{}\n", g.lat(), g.lon())),
        (Mode::Gcp, None) => return Err(Error::Config("gcp mode manifest without a gcp".into())),
        (Mode::GpsRelative, Some(_)) => {
            return Err(Error::Config("gps-relative manifest cannot carry a gcp".into()))
        }
        (Mode::GpsRelative, None) => {}
    }
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    let pair = |p: Option<GeoPoint>| match p {
        Some(p) => [p.lat().to_string(), p.lon().to_string()],
        None => [String::new(), String::new()],
    };
    let mut groups = None;
    let mut last = f64::NEG_INFINITY;
    for (i, s) in manifest.samples.iter().enumerate() {
        let present = (s.raw_fix.is_some(), s.truth.is_some());
        if *groups.get_or_insert(present) != present {
            return Err(Error::IncompleteSample {
                row: i,
                what: "raw/true columns filled on only some rows",
            });
        }
        if !(s.timestamp >= last) || !s.timestamp.is_finite() {
            return Err(Error::Config(format!("sample {i}: timestamps must be finite and non-decreasing")));
        }
        last = s.timestamp;
        let [rl, ro] = pair(s.raw_fix);
        let [tl, to] = pair(s.truth);
        w.write_record([s.timestamp.to_string(), s.image_ref.clone(), rl, ro, tl, to])?;
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
    Ok(out)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    std::fs::write(path, manifest_to_string(manifest)?)?;
    Ok(())
}
