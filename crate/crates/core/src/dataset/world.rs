//! Procedural stand-in for street imagery.
//!
//! The "camera" looks straight down, north up, at a texture fixed to the ground.
//! Four oriented gratings carry fine detail; their amplitudes, and the mean
//! brightness, vary over a few hundred meters so that an image's statistics
//! say where it was taken. Lattice value noise breaks the periodicity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use crate::geodesy::{from_grid_xy, grid_xy, GeoPoint, Zone};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Course {
    /// A circle centred on the origin, driven round repeatedly.
    Loop,
    /// An east-west segment centred on the origin, driven back and forth.
    Line,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticWorldConfig {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub course: Course,
    /// Loop circumference or line length, meters.
    pub course_length_m: f64,
    /// Distance travelled between consecutive samples.
    pub spacing_m: f64,
    pub samples: usize,
    pub start_time_s: f64,
    pub time_step_s: f64,
    /// Side of the rendered square image, pixels.
    pub image_size: usize,
    pub meters_per_pixel: f64,
    pub texture_seed: u64,
    /// Scales how strongly position modulates the texture; 0 leaves only the fine pattern.
    pub encoding_strength: f64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            origin_lat: 37.7749,
            origin_lon: -122.4194,
            course: Course::Loop,
            course_length_m: 150.0,
            spacing_m: 1.0,
            samples: 2000,
            start_time_s: 0.0,
            time_step_s: 1.0,
            image_size: 36,
            meters_per_pixel: 1.0,
            texture_seed: 0,
            encoding_strength: 1.0,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.course_length_m) || !positive(self.spacing_m) || self.samples == 0 {
            return Err(Error::Config(
                "degenerate trajectory: course length, spacing and sample count must be positive"
                    .into(),
            ));
        }
        if self.image_size == 0 || !positive(self.meters_per_pixel) || !positive(self.time_step_s) {
            return Err(Error::Config(
                "image_size, meters_per_pixel and time_step_s must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.encoding_strength) {
            return Err(Error::Config("encoding_strength must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn extent(&self) -> f64 {
        match self.course {
            Course::Loop => self.course_length_m / std::f64::consts::PI,
            Course::Line => self.course_length_m,
        }
    }

    /// Course position after travelling `s` meters, relative to the origin.
    fn local_position(&self, s: f64) -> (f64, f64) {
        let l = self.course_length_m;
        match self.course {
            Course::Loop => {
                let r = l / std::f64::consts::TAU;
                let phi = s / r;
                (r * phi.cos(), r * phi.sin())
            }
            Course::Line => {
                let s = s.rem_euclid(2.0 * l);
                let u = if s <= l { s } else { 2.0 * l - s };
                (u - 0.5 * l, 0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Grating {
    /// Unit normal of the stripes.
    dir: (f64, f64),
    period: f64,
    phase: f64,
    /// Direction along which this grating's amplitude varies.
    code_dir: (f64, f64),
    code_phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Pattern {
    gratings: Vec<Grating>,
    mean_dir: (f64, f64),
    wavelength: f64,
    strength: f64,
    noise_seed: u64,
    noise_cell: f64,
}

const GRATING_WEIGHT: f64 = 0.1;
const MEAN_WEIGHT: f64 = 0.25;
const NOISE_WEIGHT: f64 = 0.1;

impl Pattern {
    fn new(seed: u64, extent: f64, strength: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = |a: f64| (a.cos(), a.sin());
        let deg = std::f64::consts::PI / 180.0;
        let gratings = (0..4)
            .map(|k| {
                let k = k as f64;
                Grating {
                    dir: unit((45.0 * k + rng.random_range(-5.0..5.0)) * deg),
                    period: 4.0 + 0.8 * k + rng.random_range(-0.2..0.2),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    code_dir: unit((90.0 * k + 22.5 * (k / 2.0).floor()) * deg),
                    code_phase: rng.random_range(-0.3..0.3),
                }
            })
            .collect();
        Self {
            gratings,
            mean_dir: unit(rng.random_range(20.0..70.0) * deg),
            // long enough that the code stays on one monotone flank across the course
            wavelength: 2.5 * (extent + 20.0),
            strength,
            noise_seed: rng.random(),
            noise_cell: 2.5,
        }
    }

    fn intensity(&self, x: f64, y: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        let along = |d: (f64, f64)| d.0 * x + d.1 * y;
        let mut v = 0.5 + MEAN_WEIGHT * self.strength * (tau * along(self.mean_dir) / self.wavelength).sin();
        for g in &self.gratings {
            let code = (tau * along(g.code_dir) / self.wavelength + g.code_phase).sin();
            let amp = 0.55 + 0.45 * self.strength * code;
            v += GRATING_WEIGHT * amp * (tau * along(g.dir) / g.period + g.phase).sin();
        }
        v += NOISE_WEIGHT * self.value_noise(x / self.noise_cell, y / self.noise_cell);
        v.clamp(0.0, 1.0)
    }

    /// Smooth lattice noise in [-1, 1].
    fn value_noise(&self, u: f64, v: f64) -> f64 {
        let (i, j) = (u.floor(), v.floor());
        let (fu, fv) = (smoothstep(u - i), smoothstep(v - j));
        let (i, j) = (i as i64, j as i64);
        let at = |a: i64, b: i64| lattice_value(self.noise_seed, a, b);
        let top = at(i, j) * (1.0 - fu) + at(i + 1, j) * fu;
        let bottom = at(i, j + 1) * (1.0 - fu) + at(i + 1, j + 1) * fu;
        top * (1.0 - fv) + bottom * fv
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn lattice_value(seed: u64, i: i64, j: i64) -> f64 {
    // splitmix64 finaliser over the mixed coordinates
    let mut z = seed
        ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (j as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Deterministic map from a ground position to the image seen there.
#[derive(Debug, Clone, PartialEq)]
pub struct Renderer {
    zone: Zone,
    origin_xy: (f64, f64),
    size: usize,
    meters_per_pixel: f64,
    pattern: Pattern,
}

impl Renderer {
    pub fn zone(&self) -> Zone {
        self.zone
    }

    pub fn image_size(&self) -> usize {
        self.size
    }

    pub fn render(&self, p: GeoPoint) -> Result<GrayImage> {
        let (x, y) = grid_xy(p, self.zone)?;
        Ok(self.render_local(x - self.origin_xy.0, y - self.origin_xy.1))
    }

    /// Image centred `east`, `north` meters from the world origin.
    pub fn render_local(&self, east: f64, north: f64) -> GrayImage {
        let half = (self.size as f64 - 1.0) / 2.0;
        let mpp = self.meters_per_pixel;
        GrayImage::from_fn(self.size, self.size, |r, c| {
            self.pattern.intensity(
                east + (c as f64 - half) * mpp,
                north - (r as f64 - half) * mpp,
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub zone: Zone,
    pub origin: GeoPoint,
    pub truth: Vec<GeoPoint>,
    pub timestamps: Vec<f64>,
    pub renderer: Renderer,
}

pub fn generate_synthetic_world(config: &SyntheticWorldConfig) -> Result<SyntheticWorld> {
    config.validate()?;
    let origin = GeoPoint::new(config.origin_lat, config.origin_lon)?;
    let zone = Zone::of(origin);
    let origin_xy = grid_xy(origin, zone)?;
    let truth = (0..config.samples)
        .map(|i| {
            let (e, n) = config.local_position(i as f64 * config.spacing_m);
            from_grid_xy(origin_xy.0 + e, origin_xy.1 + n, zone)
        })
        .collect::<Result<Vec<_>>>()?;
    let timestamps = (0..config.samples)
        .map(|i| config.start_time_s + i as f64 * config.time_step_s)
        .collect();
    let renderer = Renderer {
        zone,
        origin_xy,
        size: config.image_size,
        meters_per_pixel: config.meters_per_pixel,
        pattern: Pattern::new(config.texture_seed, config.extent(), config.encoding_strength),
    };
    Ok(SyntheticWorld {
        zone,
        origin,
        truth,
        timestamps,
        renderer,
    })
}
