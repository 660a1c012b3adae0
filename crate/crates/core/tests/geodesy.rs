//! Geodesy checked against an independent oracle: the classic USGS (Snyder)
//! transverse Mercator power series, plus values frozen from a meridian-arc
//! quadrature at 30 digits.

use deepgeo::geodesy::{
    apply_delta, delta_between, geo_to_utm, geo_to_utm_in_zone, ground_distance, ground_distance_in,
    utm_to_geo, DeltaLocation, GeoPoint, Hemisphere, UtmCoord, Zone,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod snyder {
    const A: f64 = 6_378_137.0;
    const F: f64 = 1.0 / 298.257_223_563;
    const K0: f64 = 0.9996;

    fn meridian_arc(phi: f64) -> f64 {
        let e2 = F * (2.0 - F);
        let (e4, e6) = (e2 * e2, e2 * e2 * e2);
        A * ((1.0 - e2 / 4.0 - 3.0 * e4 / 64.0 - 5.0 * e6 / 256.0) * phi
            - (3.0 * e2 / 8.0 + 3.0 * e4 / 32.0 + 45.0 * e6 / 1024.0) * (2.0 * phi).sin()
            + (15.0 * e4 / 256.0 + 45.0 * e6 / 1024.0) * (4.0 * phi).sin()
            - (35.0 * e6 / 3072.0) * (6.0 * phi).sin())
    }

    /// (easting, northing without false northing)
    pub fn forward(lat: f64, lon: f64, cm: f64) -> (f64, f64) {
        let e2 = F * (2.0 - F);
        let ep2 = e2 / (1.0 - e2);
        let phi = lat.to_radians();
        let n = A / (1.0 - e2 * phi.sin().powi(2)).sqrt();
        let t = phi.tan().powi(2);
        let c = ep2 * phi.cos().powi(2);
        let a = (lon - cm).to_radians() * phi.cos();
        let x = K0
            * n
            * (a + (1.0 - t + c) * a.powi(3) / 6.0
                + (5.0 - 18.0 * t + t * t + 72.0 * c - 58.0 * ep2) * a.powi(5) / 120.0);
        let y = K0
            * (meridian_arc(phi)
                + n * phi.tan()
                    * (a * a / 2.0
                        + (5.0 - t + 9.0 * c + 4.0 * c * c) * a.powi(4) / 24.0
                        + (61.0 - 58.0 * t + t * t + 600.0 * c - 330.0 * ep2) * a.powi(6)
                            / 720.0));
        (x + 500_000.0, y)
    }
}

fn gp(lat: f64, lon: f64) -> GeoPoint {
    GeoPoint::new(lat, lon).unwrap()
}

#[test]
fn equator_greenwich_matches_published_vector() {
    let u = geo_to_utm(gp(0.0, 0.0)).unwrap();
    assert_eq!(u.zone.number(), 31);
    assert_eq!(u.zone.hemisphere(), Hemisphere::North);
    // published: 31N 166021.4431 0.0000
    assert!((u.easting - 166_021.4431).abs() < 1e-3, "{}", u.easting);
    assert!(u.northing.abs() < 1e-9);
    let (e_oracle, _) = snyder::forward(0.0, 0.0, 3.0);
    assert!((u.easting - e_oracle).abs() < 1e-3);

    let back = utm_to_geo(u).unwrap();
    assert!(back.lat().abs() < 1e-9 && back.lon().abs() < 1e-9);
}

#[test]
fn inverse_on_central_meridian_matches_quadrature() {
    let zone = Zone::new(10, Hemisphere::North).unwrap();
    let p = utm_to_geo(UtmCoord {
        easting: 500_000.0,
        northing: 5_000_000.0,
        zone,
    })
    .unwrap();
    // latitude solving k0 * M(lat) = 5e6 by 30-digit quadrature
    assert!((p.lat() - 45.153_477_183_356_02).abs() < 1e-9, "{}", p.lat());
    assert!((p.lon() + 123.0).abs() < 1e-12);
}

#[test]
fn forward_agrees_with_power_series_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2000 {
        let lat = rng.random_range(-80.0..84.0);
        let lon = rng.random_range(-180.0..180.0);
        let p = gp(lat, lon);
        let u = geo_to_utm(p).unwrap();
        let (e, n) = snyder::forward(lat, p.lon(), u.zone.central_meridian());
        let n = if lat < 0.0 { n + 10_000_000.0 } else { n };
        assert!((u.easting - e).abs() < 0.02, "{lat} {lon}: {} vs {e}", u.easting);
        assert!((u.northing - n).abs() < 0.02, "{lat} {lon}: {} vs {n}", u.northing);
    }
}

#[test]
fn easting_band_holds_for_standard_zones() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5000 {
        let p = gp(rng.random_range(-80.0..84.0), rng.random_range(-180.0..180.0));
        let u = geo_to_utm(p).unwrap();
        assert!(u.easting > 100_000.0 && u.easting < 900_000.0);
        assert!((0.0..10_000_000.0).contains(&u.northing));
    }
}

#[test]
fn round_trip_is_exact_to_nano_degrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let p = gp(rng.random_range(-80.0..=84.0), rng.random_range(-180.0..180.0));
        let q = utm_to_geo(geo_to_utm(p).unwrap()).unwrap();
        let dlon = ((q.lon() - p.lon() + 180.0).rem_euclid(360.0) - 180.0).abs();
        worst = worst.max((q.lat() - p.lat()).abs()).max(dlon);
    }
    assert!(worst < 1e-9, "worst round-trip error {worst} deg");
}

#[test]
fn equatorial_millidegree_north() {
    // grid distance on the central meridian is k0 times the ellipsoidal 110.5743 m
    let a = gp(0.0, 3.0);
    let b = gp(0.001, 3.0);
    let zone = Zone::of(a);
    let d = delta_between(a, b, zone).unwrap();
    assert!((d.d_north - 110.530_046_111).abs() < 1e-6, "{}", d.d_north);
    assert!((d.d_north - 110.57).abs() < 0.05);
    assert!(d.d_east.abs() < 1e-9);
    assert!((ground_distance(a, b).unwrap() - d.d_north).abs() < 1e-12);

    let c = apply_delta(a, DeltaLocation::new(0.0, 110.57).unwrap(), zone).unwrap();
    assert!((c.lat() - 0.001).abs() < 1e-6, "{}", c.lat());
    assert!((c.lon() - 3.0).abs() < 1e-12);
}

#[test]
fn delta_apply_inverse_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..1000 {
        let a = gp(rng.random_range(-79.0..83.0), rng.random_range(-179.0..179.0));
        let b = gp(
            a.lat() + rng.random_range(-0.01..0.01),
            a.lon() + rng.random_range(-0.01..0.01),
        );
        let zone = Zone::of(a);
        let d = delta_between(a, b, zone).unwrap();
        let b2 = apply_delta(a, d, zone).unwrap();
        let residual = ground_distance_in(b, b2, zone).unwrap();
        assert!(residual < 1e-6, "residual {residual} m");
    }
}

#[test]
fn pinned_zone_handles_boundary_crossing_track() {
    // a track starting in zone 10 just before the 10/11 boundary
    let start = gp(37.0, -120.01);
    let zone = Zone::of(start);
    assert_eq!(zone.number(), 10);
    let across = gp(37.0, -119.99);
    let u = geo_to_utm_in_zone(across, zone).unwrap();
    assert!(u.easting > 500_000.0);
    let d = delta_between(start, across, zone).unwrap();
    assert!((d.d_east - 1779.0).abs() < 5.0, "{}", d.d_east);
}

proptest! {
    #[test]
    fn delta_is_antisymmetric(lat in -79.0f64..83.0, lon in -178.0f64..178.0,
                              dlat in -0.02f64..0.02, dlon in -0.02f64..0.02) {
        let a = gp(lat, lon);
        let b = gp(lat + dlat, lon + dlon);
        let z = Zone::of(a);
        let ab = delta_between(a, b, z).unwrap();
        let ba = delta_between(b, a, z).unwrap();
        prop_assert!((ab.d_east + ba.d_east).abs() < 1e-9);
        prop_assert!((ab.d_north + ba.d_north).abs() < 1e-9);
    }

    #[test]
    fn ground_distance_is_a_metric(lat in -79.0f64..83.0, lon in -178.0f64..178.0,
                                   o in proptest::array::uniform4(-0.02f64..0.02)) {
        let a = gp(lat, lon);
        let b = gp(lat + o[0], lon + o[1]);
        let c = gp(lat + o[2], lon + o[3]);
        let z = Zone::of(a);
        let ab = ground_distance_in(a, b, z).unwrap();
        let ba = ground_distance_in(b, a, z).unwrap();
        let bc = ground_distance_in(b, c, z).unwrap();
        let ac = ground_distance_in(a, c, z).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert_eq!(ground_distance_in(a, a, z).unwrap(), 0.0);
    }

    #[test]
    fn central_meridian_easting(lat in -80.0f64..=84.0, zone in 1u8..=60) {
        let cm = f64::from(zone) * 6.0 - 183.0;
        let p = gp(lat, cm);
        let u = geo_to_utm(p).unwrap();
        prop_assert_eq!(u.zone.number(), zone);
        prop_assert!((u.easting - 500_000.0).abs() < 1e-6);
    }
}
