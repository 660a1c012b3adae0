use std::path::Path;

use serde_json::{json, Value};

use crate::geodesy::GeoPoint;
use crate::{Error, Result};

/// Role names used for exported tracks.
pub const ROLE_RAW: &str = "raw";
pub const ROLE_PREDICTED: &str = "predicted";
pub const ROLE_TRUTH: &str = "truth";
pub const ROLE_FILTERED: &str = "filtered";

/// One LineString feature per `(role, track)`, coordinates as `[lon, lat]`.
pub fn tracks_to_geojson(tracks: &[(&str, &[GeoPoint])]) -> Result<Value> {
    let features = tracks
        .iter()
        .map(|(role, track)| {
            if track.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "track {role:?} needs at least two points for a LineString"
                )));
            }
            let coords: Vec<[f64; 2]> = track.iter().map(|p| [p.lon(), p.lat()]).collect();
            Ok(json!({
                "type": "Feature",
                "properties": { "role": role },
                "geometry": { "type": "LineString", "coordinates": coords },
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({ "type": "FeatureCollection", "features": features }))
}

pub fn write_geojson(path: &Path, tracks: &[(&str, &[GeoPoint])]) -> Result<()> {
    let doc = tracks_to_geojson(tracks)?;
    std::fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

/// Reads back every `(role, track)` pair written by [`write_geojson`].
pub fn read_geojson(path: &Path) -> Result<Vec<(String, Vec<GeoPoint>)>> {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let bad = |m: &str| Error::Parse {
        path: path.to_path_buf(),
        row: 0,
        msg: m.to_string(),
    };
    doc["features"]
        .as_array()
        .ok_or_else(|| bad("missing features array"))?
        .iter()
        .map(|f| {
            let role = f["properties"]["role"]
                .as_str()
                .ok_or_else(|| bad("feature without a role"))?;
            let coords = f["geometry"]["coordinates"]
                .as_array()
                .ok_or_else(|| bad("feature without coordinates"))?;
            let track = coords
                .iter()
                .map(|c| match (c[0].as_f64(), c[1].as_f64()) {
                    (Some(lon), Some(lat)) => GeoPoint::new(lat, lon),
                    _ => Err(bad("coordinate is not [lon, lat]")),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((role.to_string(), track))
        })
        .collect()
}
