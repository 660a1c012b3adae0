//! Run configuration: one JSON document covering every subcommand.

use std::path::Path;

use anyhow::{Context, Result};
use deepgeo::dataset::{Mode, NoiseConfig, NoiseModel, SyntheticWorldConfig};
use deepgeo::geodesy::GeoPoint;
use deepgeo::model::ModelConfig;
use deepgeo::training::TrainConfig;
use deepgeo::Error;
use serde::{Deserialize, Serialize};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, overrides the texture, noise and training seeds.
    pub seed: Option<u64>,
    pub world: SyntheticWorldConfig,
    pub noise: NoiseConfig,
    /// Target mode written into noised manifests.
    pub mode: Mode,
    /// Ground control point `[lat, lon]` for gcp mode; defaults to the first truth sample.
    pub gcp: Option<[f64; 2]>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Train, validation and test fractions of the trajectory.
    pub split: [f64; 3],
    /// Meters per fix-feature unit.
    pub fix_scale: f64,
    /// Moving-average window of the filtered baseline.
    pub filter_window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            world: SyntheticWorldConfig::default(),
            noise: NoiseConfig::default(),
            mode: Mode::GpsRelative,
            gcp: None,
            model: ModelConfig {
                use_fix_features: true,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 100,
                ..TrainConfig::default()
            },
            split: [0.7, 0.15, 0.15],
            fix_scale: 50.0,
            filter_window: 9,
        }
    }
}

impl RunConfig {
    /// Reads `path` (or the defaults) and applies the `--seed` override.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut config: RunConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(Error::Io)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .map_err(Error::Json)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if seed.is_some() {
            config.seed = seed;
        }
        if let Some(s) = config.seed {
            config.world.texture_seed = s;
            config.noise.seed = s;
            config.train.seed = s;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        NoiseModel::fit(&self.noise)?;
        self.model.validate()?;
        self.train.validate()?;
        let [a, b, c] = self.split;
        deepgeo::dataset::split_sizes(3, (a, b, c))?;
        if !(self.fix_scale > 0.0 && self.fix_scale.is_finite()) {
            return Err(Error::Config("fix_scale must be positive".into()).into());
        }
        if self.filter_window % 2 == 0 {
            return Err(Error::Config("filter_window must be odd".into()).into());
        }
        if self.mode == Mode::Gcp && self.model.use_fix_features {
            return Err(Error::Config(
                "gcp mode has no per-sample fixes; set model.use_fix_features to false".into(),
            )
            .into());
        }
        if self.mode == Mode::GpsRelative && self.gcp.is_some() {
            return Err(Error::Config("gcp is only used with mode \"gcp\"".into()).into());
        }
        self.gcp_point()?;
        Ok(())
    }

    pub fn gcp_point(&self) -> Result<Option<GeoPoint>> {
        Ok(match self.gcp {
            Some([lat, lon]) => Some(GeoPoint::new(lat, lon)?),
            None => None,
        })
    }

    pub fn split_fractions(&self) -> (f64, f64, f64) {
        (self.split[0], self.split[1], self.split[2])
    }

    /// Writes the resolved config into `dir`.
    pub fn record(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(dir.join(RESOLVED_CONFIG_FILE), text).map_err(Error::Io)?;
        Ok(())
    }
}
