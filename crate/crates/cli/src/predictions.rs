//! predictions.csv: one predicted position per evaluated sample.

use std::path::Path;

use anyhow::{Context, Result};
use deepgeo::geodesy::GeoPoint;
use deepgeo::Error;

pub const PREDICTIONS_FILE: &str = "predictions.csv";
const HEADER: [&str; 4] = ["timestamp", "image_ref", "pred_lat", "pred_lon"];

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub timestamp: f64,
    pub image_ref: String,
    pub position: GeoPoint,
}

pub fn write(path: &Path, rows: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            r.timestamp.to_string(),
            r.image_ref.clone(),
            r.position.lat().to_string(),
            r.position.lon().to_string(),
        ])?;
    }
    std::fs::write(path, w.into_inner()?).map_err(Error::Io)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<Prediction>> {
    let bad = |row: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        row,
        msg: msg.into(),
    };
    let text = std::fs::read_to_string(path)
        .map_err(Error::Io)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    if r.headers()?.iter().ne(HEADER) {
        return Err(bad(1, "expected columns timestamp,image_ref,pred_lat,pred_lon").into());
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(Error::Csv)?;
        let num = |j: usize| -> Result<f64> {
            Ok(rec
                .get(j)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(row, "malformed number"))?)
        };
        let position = GeoPoint::new(num(2)?, num(3)?).map_err(|e| bad(row, &e.to_string()))?;
        out.push(Prediction {
            timestamp: num(0)?,
            image_ref: rec.get(1).unwrap_or_default().to_string(),
            position,
        });
    }
    Ok(out)
}
