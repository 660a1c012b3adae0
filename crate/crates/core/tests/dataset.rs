use std::path::Path;

use deepgeo::dataset::geojson::{read_geojson, write_geojson};
use deepgeo::dataset::manifest::{load_manifest, manifest_to_string, parse_manifest, write_manifest};
use deepgeo::dataset::{
    generate_synthetic_world, make_targets, simulate_gps_noise, split_sizes, split_trajectory,
    Course, GrayImage, Manifest, Mode, NoiseConfig, NoiseModel, Sample, SyntheticWorldConfig,
};
use deepgeo::geodesy::{apply_delta, delta_between, GeoPoint, Zone};
use deepgeo::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

fn zone10() -> Zone {
    "10N".parse().unwrap()
}

fn sf() -> GeoPoint {
    GeoPoint::new(37.7749, -122.4194).unwrap()
}

fn straight_track(n: usize) -> Vec<GeoPoint> {
    (0..n)
        .map(|i| apply_delta(sf(), deepgeo::geodesy::DeltaLocation::new((i % 5000) as f64, 0.0).unwrap(), zone10()).unwrap())
        .collect()
}

// ---- noise ----

#[test]
fn fitted_parameters_match_independent_quadrature_fit() {
    // solved separately by adaptive quadrature of the truncated density
    let (mu, sigma) = NoiseModel::fit(&NoiseConfig::default()).unwrap().log_params().unwrap();
    assert!((mu - 1.675441426981124).abs() < 1e-8, "{mu}");
    assert!((sigma - 1.4617858254133806).abs() < 1e-8, "{sigma}");
}

#[test]
fn million_magnitudes_reproduce_moments_and_range() {
    let model = NoiseModel::fit(&NoiseConfig {
        seed: 11,
        ..NoiseConfig::default()
    })
    .unwrap();
    let d = model.sample_displacements(1_000_000);
    let m: Vec<f64> = d.iter().map(|d| d.norm()).collect();
    let n = m.len() as f64;
    let mean = m.iter().sum::<f64>() / n;
    let sd = (m.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((mean / 9.8772 - 1.0).abs() < 0.02, "mean {mean}");
    assert!((sd / 11.7547 - 1.0).abs() < 0.02, "sd {sd}");
    assert!(m.iter().all(|&x| (0.37419..=61.7118).contains(&x)));
}

#[test]
fn simulated_track_errors_have_the_configured_mean() {
    let truth = straight_track(100_000);
    let model = NoiseModel::fit(&NoiseConfig {
        seed: 12,
        ..NoiseConfig::default()
    })
    .unwrap();
    let raw = simulate_gps_noise(&truth, &model, zone10()).unwrap();
    let mean = raw
        .iter()
        .zip(&truth)
        .map(|(r, t)| delta_between(*t, *r, zone10()).unwrap().norm())
        .sum::<f64>()
        / truth.len() as f64;
    assert!((mean / 9.8772 - 1.0).abs() < 0.02, "mean {mean}");
}

#[test]
fn heading_is_uniform_and_autocorrelated() {
    let model = NoiseModel::fit(&NoiseConfig {
        seed: 13,
        rho: 0.9,
        ..NoiseConfig::default()
    })
    .unwrap();
    let d = model.sample_displacements(200_000);
    let theta: Vec<f64> = d.iter().map(|d| d.d_north.atan2(d.d_east).rem_euclid(std::f64::consts::TAU)).collect();
    let n = theta.len() as f64;
    let c = theta.iter().map(|t| t.cos()).sum::<f64>() / n;
    let s = theta.iter().map(|t| t.sin()).sum::<f64>() / n;
    // the AR(1) chain has an effective sample size of n (1 - rho) / (1 + rho)
    assert!(c.abs() < 0.02 && s.abs() < 0.02, "({c}, {s})");
    let mut hist = [0usize; 8];
    for t in &theta {
        hist[(t / std::f64::consts::TAU * 8.0) as usize % 8] += 1;
    }
    for h in hist {
        assert!((h as f64 / n - 0.125).abs() < 0.01, "{hist:?}");
    }
    // map back to the latent Gaussian and check its lag-one correlation
    let normal = Normal::new(0.0, 1.0).unwrap();
    let z: Vec<f64> = theta
        .iter()
        .map(|t| normal.inverse_cdf((t / std::f64::consts::TAU).clamp(1e-12, 1.0 - 1e-12)))
        .collect();
    let num: f64 = z.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (n - 1.0);
    let var: f64 = z.iter().map(|v| v * v).sum::<f64>() / n;
    assert!((num / var - 0.9).abs() < 0.01, "lag-1 {}", num / var);
}

#[test]
fn degenerate_clip_displaces_exactly() {
    let model = NoiseModel::fit(&NoiseConfig {
        clip_min: 7.5,
        clip_max: 7.5,
        rho: 0.0,
        ..NoiseConfig::default()
    })
    .unwrap();
    let truth = straight_track(500);
    let raw = simulate_gps_noise(&truth, &model, zone10()).unwrap();
    for (r, t) in raw.iter().zip(&truth) {
        let d = delta_between(*t, *r, zone10()).unwrap().norm();
        assert!((d - 7.5).abs() < 1e-6, "{d}");
    }
}

#[test]
fn noise_is_deterministic_per_seed() {
    let truth = straight_track(300);
    let cfg = NoiseConfig {
        seed: 5,
        ..NoiseConfig::default()
    };
    let a = simulate_gps_noise(&truth, &NoiseModel::fit(&cfg).unwrap(), zone10()).unwrap();
    let b = simulate_gps_noise(&truth, &NoiseModel::fit(&cfg).unwrap(), zone10()).unwrap();
    assert_eq!(a, b);
    let other = NoiseConfig { seed: 6, ..cfg };
    let c = simulate_gps_noise(&truth, &NoiseModel::fit(&other).unwrap(), zone10()).unwrap();
    assert_ne!(a, c);
}

#[test]
fn empty_track_is_rejected() {
    let model = NoiseModel::fit(&NoiseConfig::default()).unwrap();
    assert!(matches!(
        simulate_gps_noise(&[], &model, zone10()),
        Err(Error::EmptyInput(_))
    ));
}

// ---- synthetic world ----

#[test]
fn degenerate_course_is_a_config_error() {
    for cfg in [
        SyntheticWorldConfig {
            course_length_m: 0.0,
            ..SyntheticWorldConfig::default()
        },
        SyntheticWorldConfig {
            samples: 0,
            ..SyntheticWorldConfig::default()
        },
    ] {
        assert!(matches!(generate_synthetic_world(&cfg), Err(Error::Config(_))));
    }
}

#[test]
fn course_geometry() {
    let w = generate_synthetic_world(&SyntheticWorldConfig {
        samples: 600,
        ..SyntheticWorldConfig::default()
    })
    .unwrap();
    assert_eq!(w.truth.len(), 600);
    assert_eq!(w.timestamps[599], 599.0);
    let r = 150.0 / std::f64::consts::TAU;
    for (i, p) in w.truth.iter().enumerate() {
        assert!((delta_between(w.origin, *p, w.zone).unwrap().norm() - r).abs() < 1e-6);
        if i > 0 {
            let step = delta_between(w.truth[i - 1], *p, w.zone).unwrap().norm();
            // chord of a 1 m arc
            assert!((step - 1.0).abs() < 1e-4, "{step}");
        }
    }
    // second lap revisits the first
    let d = delta_between(w.truth[10], w.truth[160], w.zone).unwrap().norm();
    assert!(d < 1e-6);
}

#[test]
fn rendering_is_deterministic_and_bounded() {
    let w = generate_synthetic_world(&SyntheticWorldConfig::default()).unwrap();
    let a = w.renderer.render(w.truth[17]).unwrap();
    let b = w.renderer.render(w.truth[17]).unwrap();
    assert_eq!(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let img = w
            .renderer
            .render_local(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0));
        assert_eq!((img.width(), img.height()), (36, 36));
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn ten_meter_shifts_change_the_image() {
    let w = generate_synthetic_world(&SyntheticWorldConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let (x, y) = (rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let p = w.renderer.render_local(x, y);
        let q = w.renderer.render_local(x + 10.0 * a.cos(), y + 10.0 * a.sin());
        worst = worst.min(p.rms_difference(&q).unwrap());
    }
    assert!(worst > 0.05, "smallest normalised L2 difference {worst}");
}

#[test]
fn no_collisions_between_distinct_positions() {
    let w = generate_synthetic_world(&SyntheticWorldConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = f64::INFINITY;
    for _ in 0..10_000 {
        let (x, y): (f64, f64) = (rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
        let (u, v) = loop {
            let (u, v): (f64, f64) = (rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
            if (u - x).hypot(v - y) >= 1.0 {
                break (u, v);
            }
        };
        let p = w.renderer.render_local(x, y).quantized();
        let q = w.renderer.render_local(u, v).quantized();
        worst = worst.min(p.rms_difference(&q).unwrap());
    }
    assert!(worst > 0.0, "two positions rendered to the same 8-bit image");
}

#[test]
fn nearby_positions_differ_in_a_pixel_block() {
    // 1 m apart along any direction: some 4x4 block must change after 8-bit quantisation
    let w = generate_synthetic_world(&SyntheticWorldConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..500 {
        let (x, y) = (rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let p = w.renderer.render_local(x, y).quantized();
        let q = w.renderer.render_local(x + a.cos(), y + a.sin()).quantized();
        let changed = (0..9).any(|b| {
            let (r0, c0) = ((b / 3) * 12, (b % 3) * 12);
            (r0..r0 + 4).any(|r| (c0..c0 + 4).any(|c| p.get(r, c) != q.get(r, c)))
        });
        assert!(changed);
    }
}

#[test]
fn png_round_trip_is_the_quantised_image() {
    let w = generate_synthetic_world(&SyntheticWorldConfig::default()).unwrap();
    let img = w.renderer.render(w.truth[3]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.png");
    img.save_png(&path).unwrap();
    let back = GrayImage::load_png(&path).unwrap();
    assert_eq!(back, img.quantized());
    assert!(matches!(
        GrayImage::load_png(&dir.path().join("missing.png")),
        Err(Error::Io(_))
    ));
}

// ---- targets and splits ----

fn samples_with(truth: &[GeoPoint], raw: &[GeoPoint]) -> Vec<Sample> {
    truth
        .iter()
        .zip(raw)
        .enumerate()
        .map(|(i, (t, r))| Sample {
            raw_fix: Some(*r),
            truth: Some(*t),
            ..Sample::new(format!("{i}.png"), i as f64)
        })
        .collect()
}

#[test]
fn targets_in_gps_relative_mode() {
    let truth = straight_track(50);
    let model = NoiseModel::fit(&NoiseConfig::default()).unwrap();
    let raw = simulate_gps_noise(&truth, &model, zone10()).unwrap();
    let s = make_targets(&samples_with(&truth, &raw), Mode::GpsRelative, None, zone10(), true).unwrap();
    for (i, s) in s.iter().enumerate() {
        assert_eq!(s.anchor, Some(raw[i]));
        let back = apply_delta(raw[i], s.target.unwrap(), zone10()).unwrap();
        assert!(delta_between(back, truth[i], zone10()).unwrap().norm() < 1e-6);
    }
    let same = make_targets(&samples_with(&truth, &truth), Mode::GpsRelative, None, zone10(), true).unwrap();
    assert!(same.iter().all(|s| s.target.unwrap().norm() < 1e-9));
}

#[test]
fn targets_in_gcp_mode_share_one_anchor() {
    let truth = straight_track(20);
    let mut samples = samples_with(&truth, &truth);
    for s in &mut samples {
        s.raw_fix = None;
    }
    let gcp = truth[10];
    let s = make_targets(&samples, Mode::Gcp, Some(gcp), zone10(), true).unwrap();
    assert!(s.iter().all(|s| s.anchor == Some(gcp)));
    assert!((s[0].target.unwrap().d_east + 10.0).abs() < 1e-6);
    assert!(make_targets(&samples, Mode::Gcp, None, zone10(), true).is_err());
    assert!(make_targets(&samples, Mode::GpsRelative, None, zone10(), true).is_err());
}

#[test]
fn missing_truth_is_only_an_error_for_training() {
    let truth = straight_track(5);
    let mut samples = samples_with(&truth, &truth);
    samples[3].truth = None;
    assert!(matches!(
        make_targets(&samples, Mode::GpsRelative, None, zone10(), true),
        Err(Error::IncompleteSample { row: 3, .. })
    ));
    let s = make_targets(&samples, Mode::GpsRelative, None, zone10(), false).unwrap();
    assert!(s[3].target.is_none() && s[3].anchor.is_some() && s[2].target.is_some());
}

#[test]
fn split_examples() {
    assert_eq!(split_sizes(10, (0.7, 0.15, 0.15)).unwrap(), [7, 1, 2]);
    assert_eq!(split_sizes(9, (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)).unwrap(), [3, 3, 3]);
    assert_eq!(split_sizes(10, (0.5, 0.25, 0.25)).unwrap(), [5, 2, 3]);
    assert_eq!(split_sizes(2000, (0.7, 0.15, 0.15)).unwrap(), [1400, 300, 300]);
    assert!(matches!(split_sizes(2, (0.7, 0.15, 0.15)), Err(Error::InsufficientData(_))));
    assert!(split_sizes(10, (0.7, 0.3, 0.0)).is_err());
    assert!(split_sizes(10, (0.7, 0.2, 0.2)).is_err());
}

#[test]
fn split_sizes_enumerated_against_exact_rationals() {
    // largest remainder in exact integer arithmetic over percentages
    for n in 3..200usize {
        for a in 1..98usize {
            for b in 1..(99 - a) {
                let c = 100 - a - b;
                let pct = [a, b, c];
                let mut sizes = pct.map(|p| p * n / 100);
                let rems = pct.map(|p| p * n % 100);
                let mut order = [0usize, 1, 2];
                order.sort_by(|&x, &y| rems[y].cmp(&rems[x]).then(y.cmp(&x)));
                let left = n - sizes.iter().sum::<usize>();
                for &i in order.iter().take(left) {
                    sizes[i] += 1;
                }
                let got = split_sizes(n, (a as f64 / 100.0, b as f64 / 100.0, c as f64 / 100.0)).unwrap();
                assert_eq!(got, sizes, "n={n} pct={pct:?}");
            }
        }
    }
}

proptest! {
    #[test]
    fn splits_are_contiguous_and_proportional(
        n in 3usize..500,
        a in 0.05f64..0.9,
        b in 0.05f64..0.9,
    ) {
        prop_assume!(a + b < 0.95);
        let f = (a, b, 1.0 - a - b);
        let items: Vec<usize> = (0..n).collect();
        let (tr, va, te) = split_trajectory(&items, f).unwrap();
        let joined: Vec<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
        prop_assert_eq!(&joined, &items);
        for (len, frac) in [(tr.len(), f.0), (va.len(), f.1), (te.len(), f.2)] {
            prop_assert!((len as f64 - frac * n as f64).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn manifest_round_trip(
        rows in proptest::collection::vec(
            (0.0f64..10.0, -80.0f64..84.0, -180.0f64..180.0, -80.0f64..84.0, -180.0f64..180.0),
            0..40,
        ),
        with_raw in any::<bool>(),
        with_truth in any::<bool>(),
    ) {
        let mut t = 0.0;
        let samples: Vec<Sample> = rows
            .iter()
            .enumerate()
            .map(|(i, &(dt, la, lo, tla, tlo))| {
                t += dt;
                Sample {
                    raw_fix: with_raw.then(|| GeoPoint::new(la, lo).unwrap()),
                    truth: with_truth.then(|| GeoPoint::new(tla, tlo).unwrap()),
                    ..Sample::new(format!("images/{i:06}.png"), t)
                }
            })
            .collect();
        let m = Manifest { zone: zone10(), mode: Mode::GpsRelative, gcp: None, samples };
        let text = manifest_to_string(&m).unwrap();
        let back = parse_manifest(&text, Path::new("m.csv")).unwrap();
        prop_assert_eq!(back, m);
    }
}

// ---- manifests on disk ----

#[test]
fn manifest_file_round_trip_in_gcp_mode() {
    let truth = straight_track(30);
    let samples: Vec<Sample> = truth
        .iter()
        .enumerate()
        .map(|(i, t)| Sample {
            truth: Some(*t),
            ..Sample::new(format!("images/{i}.png"), 0.5 * i as f64)
        })
        .collect();
    let m = Manifest {
        zone: zone10(),
        mode: Mode::Gcp,
        gcp: Some(truth[15]),
        samples,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.csv");
    write_manifest(&path, &m).unwrap();
    assert_eq!(load_manifest(&path).unwrap(), m);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("#version=1\n#zone=10N\n#mode=gcp\n#gcp="));
}

#[test]
fn writing_an_inconsistent_manifest_fails() {
    let truth = straight_track(3);
    let mut samples = samples_with(&truth, &truth);
    samples[1].raw_fix = None;
    let m = Manifest {
        zone: zone10(),
        mode: Mode::GpsRelative,
        gcp: None,
        samples,
    };
    assert!(manifest_to_string(&m).is_err());
}

#[test]
fn geojson_round_trip() {
    let truth = straight_track(10);
    let raw: Vec<GeoPoint> = truth
        .iter()
        .map(|p| GeoPoint::new(p.lat() + 1e-5, p.lon()).unwrap())
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.geojson");
    write_geojson(&path, &[("raw", &raw), ("truth", &truth)]).unwrap();
    let back = read_geojson(&path).unwrap();
    assert_eq!(back, vec![("raw".to_string(), raw.clone()), ("truth".to_string(), truth.clone())]);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["type"], "FeatureCollection");
    assert_eq!(doc["features"][0]["geometry"]["type"], "LineString");
    assert_eq!(doc["features"][0]["geometry"]["coordinates"][0][0], raw[0].lon());
    assert!(write_geojson(&path, &[("raw", &raw[..1])]).is_err());
}

#[test]
fn course_line_runs_east_west() {
    let w = generate_synthetic_world(&SyntheticWorldConfig {
        course: Course::Line,
        course_length_m: 100.0,
        samples: 250,
        ..SyntheticWorldConfig::default()
    })
    .unwrap();
    for p in &w.truth {
        let d = delta_between(w.origin, *p, w.zone).unwrap();
        assert!(d.d_north.abs() < 1e-6 && d.d_east.abs() <= 50.0 + 1e-6);
    }
}
