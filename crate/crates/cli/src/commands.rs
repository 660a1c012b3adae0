use std::ops::Range;
use std::path::Path;

use anyhow::{Context, Result};
use deepgeo::dataset::geojson::{write_geojson, ROLE_FILTERED, ROLE_PREDICTED, ROLE_RAW, ROLE_TRUTH};
use deepgeo::dataset::image::batch_tensor;
use deepgeo::dataset::{
    generate_synthetic_world, load_manifest, make_targets, simulate_gps_noise, split_sizes,
    write_manifest, GrayImage, Manifest, Mode, NoiseModel, Sample,
};
use deepgeo::evaluation::{compare_table, moving_average_filter};
use deepgeo::geodesy::{geo_to_utm, geo_to_utm_in_zone, GeoPoint, Zone};
use deepgeo::model::{FixEncoding, Localizer};
use deepgeo::training::{self, augment, history_csv, Example};
use deepgeo::Error;

use crate::config::RunConfig;
use crate::predictions::{self, Prediction, PREDICTIONS_FILE};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MODEL_DIR: &str = "model";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TABLE_TEXT_FILE: &str = "eval_table.txt";
pub const TABLE_CSV_FILE: &str = "eval_table.csv";
pub const TRACKS_FILE: &str = "tracks.geojson";

const PREDICT_BATCH: usize = 64;

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .map_err(Error::Io)
        .with_context(|| format!("creating {}", out.display()))
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))
}

/// Refuses to write `target` if it is the input file itself.
fn guard_input(input: &Path, target: &Path) -> Result<()> {
    if let (Ok(a), Ok(b)) = (input.canonicalize(), target.canonicalize()) {
        if a == b {
            return Err(Error::Config(format!(
                "refusing to overwrite input {}; choose another --out",
                input.display()
            ))
            .into());
        }
    }
    Ok(())
}

fn truth_of(m: &Manifest) -> Result<Vec<GeoPoint>> {
    Ok(m.truth_track().ok_or(Error::IncompleteSample {
        row: 0,
        what: "truth columns",
    })?)
}

fn load_images(manifest_path: &Path, samples: &[Sample]) -> Result<Vec<GrayImage>> {
    samples
        .iter()
        .map(|s| {
            let p = Manifest::image_path(manifest_path, &s.image_ref);
            GrayImage::load_png(&p).with_context(|| format!("loading image {}", p.display()))
        })
        .collect()
}

/// Index ranges of the train, validation and test segments.
fn segments(n: usize, config: &RunConfig) -> Result<[Range<usize>; 3]> {
    let [a, b, _] = split_sizes(n, config.split_fractions())?;
    Ok([0..a, a..a + b, a + b..n])
}

pub fn synth(config: &RunConfig, out: &Path) -> Result<()> {
    let world = generate_synthetic_world(&config.world)?;
    create_out(&out.join("images"))?;
    let mut samples = Vec::with_capacity(world.truth.len());
    for (i, (p, t)) in world.truth.iter().zip(&world.timestamps).enumerate() {
        let image_ref = format!("images/frame_{i:06}.png");
        world.renderer.render(*p)?.save_png(&out.join(&image_ref))?;
        let mut s = Sample::new(image_ref, *t);
        s.truth = Some(*p);
        samples.push(s);
    }
    let manifest = Manifest {
        zone: world.zone,
        mode: Mode::GpsRelative,
        gcp: None,
        samples,
    };
    write_manifest(&out.join(MANIFEST_FILE), &manifest)?;
    config.record(out)?;
    eprintln!("wrote {} samples to {}", manifest.samples.len(), out.display());
    Ok(())
}

/// `image_ref` of a manifest at `from`, re-expressed relative to directory `to`.
fn rebase(image_ref: &str, from: &Path, to: &Path) -> Result<String> {
    if Path::new(image_ref).is_absolute() {
        return Ok(image_ref.to_string());
    }
    let image = Manifest::image_path(from, image_ref);
    let image = image
        .canonicalize()
        .map_err(Error::Io)
        .with_context(|| format!("resolving image {}", image.display()))?;
    let base = to.canonicalize().map_err(Error::Io)?;
    let rel = pathdiff::diff_paths(&image, &base).unwrap_or(image);
    Ok(rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/"))
}

pub fn noise(config: &RunConfig, manifest_path: &Path, out: &Path) -> Result<()> {
    let m = read_manifest(manifest_path)?;
    let truth = truth_of(&m)?;
    let model = NoiseModel::fit(&config.noise)?;
    let raw = simulate_gps_noise(&truth, &model, m.zone)?;
    create_out(out)?;
    let target = out.join(MANIFEST_FILE);
    guard_input(manifest_path, &target)?;
    let gcp = match config.mode {
        Mode::Gcp => Some(config.gcp_point()?.unwrap_or(truth[0])),
        Mode::GpsRelative => None,
    };
    let samples = m
        .samples
        .iter()
        .zip(raw)
        .map(|(s, r)| {
            Ok(Sample {
                image_ref: rebase(&s.image_ref, manifest_path, out)?,
                raw_fix: Some(r),
                ..s.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let noised = Manifest {
        zone: m.zone,
        mode: config.mode,
        gcp,
        samples,
    };
    write_manifest(&target, &noised)?;
    config.record(out)?;
    Ok(())
}

fn examples(
    samples: &[Sample],
    images: Vec<GrayImage>,
    encoding: Option<&FixEncoding>,
    zone: Zone,
) -> Result<Vec<Example>> {
    samples
        .iter()
        .zip(images)
        .map(|(s, image)| {
            let t = s.target.expect("targets are built with require_truth");
            let fix = match encoding {
                Some(e) => Some(e.encode(s.anchor.expect("anchors are always set"), zone)?),
                None => None,
            };
            Ok(Example {
                image,
                fix,
                target: [t.d_east, t.d_north],
            })
        })
        .collect()
}

pub fn train(config: &RunConfig, manifest_path: &Path, out: &Path) -> Result<()> {
    let m = read_manifest(manifest_path)?;
    if m.mode == Mode::Gcp && config.model.use_fix_features {
        return Err(Error::Config(
            "manifest is in gcp mode; set model.use_fix_features to false".into(),
        )
        .into());
    }
    let samples = make_targets(&m.samples, m.mode, m.gcp, m.zone, true)?;
    let images = load_images(manifest_path, &samples)?;
    let [tr, va, _] = segments(samples.len(), config)?;
    if tr.is_empty() {
        return Err(Error::InsufficientData("the training segment is empty".into()).into());
    }
    let encoding = if config.model.use_fix_features {
        let anchors: Vec<GeoPoint> = samples[tr.clone()].iter().filter_map(|s| s.anchor).collect();
        Some(FixEncoding::fit(&anchors, m.zone, config.fix_scale)?)
    } else {
        None
    };
    let all = examples(&samples, images, encoding.as_ref(), m.zone)?;
    create_out(out)?;

    let localizer = |params| {
        Localizer::new(
            config.model.clone(),
            params,
            config.train.target_scale,
            m.zone,
            encoding,
        )
    };
    let epochs = config.train.epochs;
    let outcome = training::train(&all[tr], &all[va], &config.model, &config.train, |r, params| {
        match (r.val_loss, r.val_meter_error) {
            (Some(l), Some(e)) => eprintln!(
                "epoch {}/{epochs}  train {:.5}  val {l:.5}  val error {e:.3} m",
                r.epoch, r.train_loss
            ),
            _ => eprintln!("epoch {}/{epochs}  train {:.5}", r.epoch, r.train_loss),
        }
        if config.train.checkpoint_due(r.epoch) {
            let dir = out.join("checkpoints").join(format!("epoch_{:04}", r.epoch));
            localizer(params.clone())?.save(&dir)?;
        }
        Ok(())
    })?;
    localizer(outcome.best_params)?.save(&out.join(MODEL_DIR))?;
    std::fs::write(out.join(TRAIN_LOG_FILE), history_csv(&outcome.state.history)?).map_err(Error::Io)?;
    config.record(out)?;
    eprintln!("best epoch {}", outcome.best_epoch);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

pub enum Source<'a> {
    Model(&'a Path),
    Predictions(&'a Path),
}

fn predict_with_model(
    config: &RunConfig,
    dir: &Path,
    manifest_path: &Path,
    m: &Manifest,
    range: Range<usize>,
) -> Result<Vec<GeoPoint>> {
    let loc = Localizer::load(dir).with_context(|| format!("loading model {}", dir.display()))?;
    if loc.zone != m.zone {
        return Err(Error::Config(format!(
            "model was trained in zone {} but the manifest is pinned to {}",
            loc.zone, m.zone
        ))
        .into());
    }
    let samples = make_targets(&m.samples[range], m.mode, m.gcp, m.zone, false)?;
    let images = load_images(manifest_path, &samples)?;
    let size = loc.config.input_size;
    let mut out = Vec::with_capacity(samples.len());
    for (chunk, imgs) in samples.chunks(PREDICT_BATCH).zip(images.chunks(PREDICT_BATCH)) {
        let crops = imgs
            .iter()
            .map(|i| augment(i, None, config.train.crop_fraction, size))
            .collect::<deepgeo::Result<Vec<_>>>()?;
        let batch = batch_tensor(&crops.iter().collect::<Vec<_>>())?;
        let anchors: Vec<GeoPoint> = chunk.iter().map(|s| s.anchor.expect("anchors are always set")).collect();
        out.extend(loc.predict_absolute(&batch, &anchors)?);
    }
    Ok(out)
}

pub fn eval(config: &RunConfig, manifest_path: &Path, source: Source, split: Split, out: &Path) -> Result<()> {
    let m = read_manifest(manifest_path)?;
    let truth = truth_of(&m)?;
    let range = match split {
        Split::All => 0..truth.len(),
        s => segments(truth.len(), config)?[s as usize].clone(),
    };
    if range.is_empty() {
        return Err(Error::InsufficientData(format!("the {split:?} segment is empty")).into());
    }
    let samples = &m.samples[range.clone()];
    let predicted = match source {
        Source::Model(dir) => predict_with_model(config, dir, manifest_path, &m, range.clone())?,
        Source::Predictions(path) => {
            let rows = predictions::read(path)?;
            if rows.len() != samples.len() {
                return Err(Error::Alignment {
                    predicted: rows.len(),
                    truth: samples.len(),
                }
                .into());
            }
            if let Some(i) = rows.iter().zip(samples).position(|(r, s)| r.image_ref != s.image_ref) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: i + 2,
                    msg: format!("image_ref {:?} does not match the manifest", rows[i].image_ref),
                }
                .into());
            }
            rows.into_iter().map(|r| r.position).collect()
        }
    };
    let truth = &truth[range.clone()];
    let raw: Option<Vec<GeoPoint>> = samples.iter().map(|s| s.raw_fix).collect();
    let filtered = match &raw {
        Some(r) => Some(moving_average_filter(r, config.filter_window, m.zone)?),
        None => None,
    };
    let mut rows: Vec<(&str, &[GeoPoint], &[GeoPoint])> = Vec::new();
    if let (Some(r), Some(f)) = (&raw, &filtered) {
        rows.push(("raw", r, truth));
        rows.push(("filtered", f, truth));
    }
    rows.push(("model", &predicted, truth));
    let table = compare_table(&rows, m.zone)?;

    create_out(out)?;
    let written: Vec<Prediction> = samples
        .iter()
        .zip(&predicted)
        .map(|(s, p)| Prediction {
            timestamp: s.timestamp,
            image_ref: s.image_ref.clone(),
            position: *p,
        })
        .collect();
    let pred_path = out.join(PREDICTIONS_FILE);
    if let Source::Predictions(input) = source {
        guard_input(input, &pred_path)?;
    }
    predictions::write(&pred_path, &written)?;
    let text = table.to_text();
    std::fs::write(out.join(TABLE_TEXT_FILE), &text).map_err(Error::Io)?;
    std::fs::write(out.join(TABLE_CSV_FILE), table.to_csv()?).map_err(Error::Io)?;
    config.record(out)?;
    print!("{text}");
    Ok(())
}

pub fn export(config: &RunConfig, manifest_path: &Path, predictions: Option<&Path>, out: &Path) -> Result<()> {
    let m = read_manifest(manifest_path)?;
    let mut tracks: Vec<(&str, Vec<GeoPoint>)> = Vec::new();
    if let Some(t) = m.truth_track() {
        tracks.push((ROLE_TRUTH, t));
    }
    if let Some(r) = m.raw_track() {
        let f = moving_average_filter(&r, config.filter_window, m.zone)?;
        tracks.push((ROLE_RAW, r));
        tracks.push((ROLE_FILTERED, f));
    }
    if let Some(p) = predictions {
        let rows = predictions::read(p)?;
        tracks.push((ROLE_PREDICTED, rows.into_iter().map(|r| r.position).collect()));
    }
    if tracks.is_empty() {
        return Err(Error::EmptyInput("tracks to export").into());
    }
    create_out(out)?;
    let refs: Vec<(&str, &[GeoPoint])> = tracks.iter().map(|(n, t)| (*n, t.as_slice())).collect();
    write_geojson(&out.join(TRACKS_FILE), &refs)?;
    config.record(out)?;
    Ok(())
}

pub fn convert(lat: f64, lon: f64, zone: Option<Zone>) -> Result<String> {
    let p = GeoPoint::new(lat, lon)?;
    let u = match zone {
        Some(z) => geo_to_utm_in_zone(p, z)?,
        None => geo_to_utm(p)?,
    };
    Ok(format!("{} {:.3} {:.3}", u.zone, u.easting, u.northing))
}
