//! WGS84 <-> UTM conversion and meter-space deltas.
//!
//! The projection uses Krüger's series to sixth order in the third
//! flattening, which keeps the in-zone error at the nanometer level; the
//! inverse recovers latitude from the conformal latitude by Newton iteration.
//! All meter-space work for a trajectory happens in one pinned zone so that
//! deltas never jump across a zone boundary.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;
const K0: f64 = 0.9996;
const FALSE_EASTING: f64 = 500_000.0;
const FALSE_NORTHING_SOUTH: f64 = 10_000_000.0;

/// Southernmost latitude covered by UTM.
pub const MIN_LAT: f64 = -80.0;
/// Northernmost latitude covered by UTM.
pub const MAX_LAT: f64 = 84.0;
/// How far past a zone's 3 degree half-width a pinned-zone projection may go.
pub const MAX_ZONE_OVERSHOOT_DEG: f64 = 1.0;
/// Sanity bound on any delta handled by this crate.
pub const MAX_DELTA_M: f64 = 10_000.0;

/// A WGS84 position in degrees, inside the UTM latitude band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    /// Validates the latitude band and normalizes longitude to [-180, 180).
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !(MIN_LAT..=MAX_LAT).contains(&lat) {
            return Err(Error::OutOfBand { lat });
        }
        if !lon.is_finite() {
            return Err(Error::Domain(format!("non-finite longitude {lon}")));
        }
        Ok(Self {
            lat,
            lon: normalize_lon(lon),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

fn normalize_lon(lon: f64) -> f64 {
    if (-180.0..180.0).contains(&lon) {
        return lon;
    }
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hemisphere {
    North,
    South,
}

/// A UTM zone number together with the hemisphere that fixes the false northing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Zone {
    number: u8,
    hemisphere: Hemisphere,
}

impl Zone {
    pub fn new(number: u8, hemisphere: Hemisphere) -> Result<Self> {
        if !(1..=60).contains(&number) {
            return Err(Error::Domain(format!("zone {number} outside 1..=60")));
        }
        Ok(Self { number, hemisphere })
    }

    /// The standard zone of a point, derived from its longitude alone.
    pub fn of(p: GeoPoint) -> Self {
        let number = (((p.lon + 180.0) / 6.0).floor() as i64 + 1).clamp(1, 60) as u8;
        let hemisphere = if p.lat >= 0.0 {
            Hemisphere::North
        } else {
            Hemisphere::South
        };
        Self { number, hemisphere }
    }

    pub fn number(&self) -> u8 {
        self.number
    }

    pub fn hemisphere(&self) -> Hemisphere {
        self.hemisphere
    }

    pub fn central_meridian(&self) -> f64 {
        f64::from(self.number) * 6.0 - 183.0
    }
}

impl std::fmt::Display for Zone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let h = match self.hemisphere {
            Hemisphere::North => 'N',
            Hemisphere::South => 'S',
        };
        write!(f, "{}{}", self.number, h)
    }
}

impl std::str::FromStr for Zone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Domain(format!("malformed zone '{s}', expected e.g. 10N"));
        let (digits, h) = s.split_at(s.len().checked_sub(1).ok_or_else(bad)?);
        let hemisphere = match h {
            "N" | "n" => Hemisphere::North,
            "S" | "s" => Hemisphere::South,
            _ => return Err(bad()),
        };
        let number = digits.parse::<u8>().map_err(|_| bad())?;
        Zone::new(number, hemisphere)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtmCoord {
    pub easting: f64,
    pub northing: f64,
    pub zone: Zone,
}

/// Offset between two positions in the local east/north meter frame of a pinned zone.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeltaLocation {
    pub d_east: f64,
    pub d_north: f64,
}

impl DeltaLocation {
    pub fn new(d_east: f64, d_north: f64) -> Result<Self> {
        let d = Self { d_east, d_north };
        if !d_east.is_finite() || !d_north.is_finite() || d.norm() >= MAX_DELTA_M {
            return Err(Error::Domain(format!(
                "delta ({d_east}, {d_north}) is not finite or exceeds {MAX_DELTA_M} m"
            )));
        }
        Ok(d)
    }

    pub fn norm(&self) -> f64 {
        self.d_east.hypot(self.d_north)
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.d_east * s, self.d_north * s)
    }
}

impl std::ops::Neg for DeltaLocation {
    type Output = Self;

    fn neg(self) -> Self {
        Self {
            d_east: -self.d_east,
            d_north: -self.d_north,
        }
    }
}

struct Series {
    /// Rectifying radius scaled by k0.
    k0_a: f64,
    e: f64,
    alpha: [f64; 6],
    beta: [f64; 6],
}

fn series() -> &'static Series {
    static SERIES: std::sync::OnceLock<Series> = std::sync::OnceLock::new();
    SERIES.get_or_init(|| {
        let f = WGS84_F;
        let n = f / (2.0 - f);
        let n2 = n * n;
        let n3 = n2 * n;
        let n4 = n3 * n;
        let n5 = n4 * n;
        let n6 = n5 * n;
        let a = WGS84_A / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
        let alpha = [
            n / 2.0 - 2.0 * n2 / 3.0 + 5.0 * n3 / 16.0 + 41.0 * n4 / 180.0 - 127.0 * n5 / 288.0
                + 7891.0 * n6 / 37800.0,
            13.0 * n2 / 48.0 - 3.0 * n3 / 5.0 + 557.0 * n4 / 1440.0 + 281.0 * n5 / 630.0
                - 1_983_433.0 * n6 / 1_935_360.0,
            61.0 * n3 / 240.0 - 103.0 * n4 / 140.0 + 15061.0 * n5 / 26880.0
                + 167_603.0 * n6 / 181_440.0,
            49561.0 * n4 / 161_280.0 - 179.0 * n5 / 168.0 + 6_601_661.0 * n6 / 7_257_600.0,
            34729.0 * n5 / 80640.0 - 3_418_889.0 * n6 / 1_995_840.0,
            212_378_941.0 * n6 / 319_334_400.0,
        ];
        let beta = [
            n / 2.0 - 2.0 * n2 / 3.0 + 37.0 * n3 / 96.0 - n4 / 360.0 - 81.0 * n5 / 512.0
                + 96199.0 * n6 / 604_800.0,
            n2 / 48.0 + n3 / 15.0 - 437.0 * n4 / 1440.0 + 46.0 * n5 / 105.0
                - 1_118_711.0 * n6 / 3_870_720.0,
            17.0 * n3 / 480.0 - 37.0 * n4 / 840.0 - 209.0 * n5 / 4480.0 + 5569.0 * n6 / 90720.0,
            4397.0 * n4 / 161_280.0 - 11.0 * n5 / 504.0 - 830_251.0 * n6 / 7_257_600.0,
            4583.0 * n5 / 161_280.0 - 108_847.0 * n6 / 3_991_680.0,
            20_648_693.0 * n6 / 638_668_800.0,
        ];
        Series {
            k0_a: K0 * a,
            e: (f * (2.0 - f)).sqrt(),
            alpha,
            beta,
        }
    })
}

fn conformal_tan(tau: f64, e: f64) -> f64 {
    let sigma = (e * (e * tau / tau.hypot(1.0)).atanh()).sinh();
    tau * sigma.hypot(1.0) - sigma * tau.hypot(1.0)
}

fn wrap_deg(d: f64) -> f64 {
    (d + 180.0).rem_euclid(360.0) - 180.0
}

/// Transverse Mercator about `cm` (degrees), without false origin; returns (x, y) in meters.
fn tm_forward(lat: f64, lon: f64, cm: f64) -> (f64, f64) {
    let s = series();
    let phi = lat.to_radians();
    let lam = wrap_deg(lon - cm).to_radians();
    let tau_p = conformal_tan(phi.tan(), s.e);
    let xi_p = tau_p.atan2(lam.cos());
    let eta_p = (lam.sin() / tau_p.hypot(lam.cos())).asinh();
    let mut xi = xi_p;
    let mut eta = eta_p;
    for (j, a) in s.alpha.iter().enumerate() {
        let k = 2.0 * (j as f64 + 1.0);
        xi += a * (k * xi_p).sin() * (k * eta_p).cosh();
        eta += a * (k * xi_p).cos() * (k * eta_p).sinh();
    }
    (s.k0_a * eta, s.k0_a * xi)
}

fn tm_inverse(x: f64, y: f64, cm: f64) -> (f64, f64) {
    let s = series();
    let xi = y / s.k0_a;
    let eta = x / s.k0_a;
    let mut xi_p = xi;
    let mut eta_p = eta;
    for (j, b) in s.beta.iter().enumerate() {
        let k = 2.0 * (j as f64 + 1.0);
        xi_p -= b * (k * xi).sin() * (k * eta).cosh();
        eta_p -= b * (k * xi).cos() * (k * eta).sinh();
    }
    let tau_p = xi_p.sin() / eta_p.sinh().hypot(xi_p.cos());
    let lam = eta_p.sinh().atan2(xi_p.cos());

    let e2 = s.e * s.e;
    let mut tau = tau_p;
    for _ in 0..8 {
        let tp_i = conformal_tan(tau, s.e);
        let dtau = (tau_p - tp_i) / tp_i.hypot(1.0) * (1.0 + (1.0 - e2) * tau * tau)
            / ((1.0 - e2) * tau.hypot(1.0));
        tau += dtau;
        if dtau.abs() <= 1e-15 * tau.abs().max(1.0) {
            break;
        }
    }
    (tau.atan().to_degrees(), lam.to_degrees() + cm)
}

fn pinned_xy(p: GeoPoint, zone: Zone) -> Result<(f64, f64)> {
    let cm = zone.central_meridian();
    let offset = wrap_deg(p.lon - cm).abs();
    if offset > 3.0 + MAX_ZONE_OVERSHOOT_DEG {
        return Err(Error::Distortion {
            lon: p.lon,
            zone: zone.number,
            offset,
        });
    }
    Ok(tm_forward(p.lat, p.lon, cm))
}

fn false_northing(h: Hemisphere) -> f64 {
    match h {
        Hemisphere::North => 0.0,
        Hemisphere::South => FALSE_NORTHING_SOUTH,
    }
}

/// Projects into the standard zone of the point.
pub fn geo_to_utm(p: GeoPoint) -> Result<UtmCoord> {
    geo_to_utm_in_zone(p, Zone::of(p))
}

/// Projects into a caller-pinned zone; the point may overshoot the zone by up to a degree.
pub fn geo_to_utm_in_zone(p: GeoPoint, zone: Zone) -> Result<UtmCoord> {
    let (x, y) = pinned_xy(p, zone)?;
    Ok(UtmCoord {
        easting: x + FALSE_EASTING,
        northing: y + false_northing(zone.hemisphere),
        zone,
    })
}

pub fn utm_to_geo(u: UtmCoord) -> Result<GeoPoint> {
    // Pinned-zone coordinates may sit outside the nominal (100 km, 900 km)
    // easting band, so only the wider projection-sane window is enforced here.
    if !u.easting.is_finite() || !(0.0..=1_000_000.0).contains(&u.easting) {
        return Err(Error::Domain(format!("easting {} outside [0, 1000000]", u.easting)));
    }
    if !u.northing.is_finite() || !(0.0..FALSE_NORTHING_SOUTH).contains(&u.northing) {
        return Err(Error::Domain(format!("northing {} outside [0, 10000000)", u.northing)));
    }
    let (lat, lon) = tm_inverse(
        u.easting - FALSE_EASTING,
        u.northing - false_northing(u.zone.hemisphere),
        u.zone.central_meridian(),
    );
    GeoPoint::new(lat, lon)
}

/// East/north offset `b - a` in meters, measured on the grid of `zone`.
pub fn delta_between(a: GeoPoint, b: GeoPoint, zone: Zone) -> Result<DeltaLocation> {
    let (xa, ya) = pinned_xy(a, zone)?;
    let (xb, yb) = pinned_xy(b, zone)?;
    DeltaLocation::new(xb - xa, yb - ya)
}

pub fn apply_delta(a: GeoPoint, d: DeltaLocation, zone: Zone) -> Result<GeoPoint> {
    if !d.d_east.is_finite() || !d.d_north.is_finite() {
        return Err(Error::Domain("non-finite delta".into()));
    }
    let (x, y) = pinned_xy(a, zone)?;
    let (lat, lon) = tm_inverse(x + d.d_east, y + d.d_north, zone.central_meridian());
    let p = GeoPoint::new(lat, lon)?;
    // reject results that drifted out of the pinned zone's usable strip
    pinned_xy(p, zone)?;
    Ok(p)
}

/// Grid distance in meters, pinned to the zone of `a`.
pub fn ground_distance(a: GeoPoint, b: GeoPoint) -> Result<f64> {
    ground_distance_in(a, b, Zone::of(a))
}

pub fn ground_distance_in(a: GeoPoint, b: GeoPoint, zone: Zone) -> Result<f64> {
    Ok(delta_between(a, b, zone)?.norm())
}

/// Local east/north meters of `p` relative to the grid origin of `zone`.
///
/// Cheaper than going through [`delta_between`] when many points share a zone.
pub fn grid_xy(p: GeoPoint, zone: Zone) -> Result<(f64, f64)> {
    pinned_xy(p, zone)
}

/// Inverse of [`grid_xy`].
pub fn from_grid_xy(x: f64, y: f64, zone: Zone) -> Result<GeoPoint> {
    let (lat, lon) = tm_inverse(x, y, zone.central_meridian());
    GeoPoint::new(lat, lon)
}
