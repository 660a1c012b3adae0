//! The CNN + LSTM delta-location regressor.
//!
//! image -> stem conv -> max-pool -> residual stages -> global average pool
//! -> FC to an n-vector -> stacked LSTM cells -> affine head -> (d_east, d_north)
//! in units of the target scale.
//!
//! The n-vector is handed to the LSTM whole, as a sequence of length one.
//! `sequence_chunks > 1` splits it into equal pieces instead; that path exists
//! for ablations only.

use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::geodesy::{apply_delta, grid_xy, DeltaLocation, GeoPoint, Zone};
use crate::layers::{
    conv, fully_connected, init_conv, init_linear, init_lstm, init_residual_block, lstm_cell,
    residual_block, BoundParams, LayerParams, LstmState,
};
use crate::{Error, Result};

pub type ModelParams = LayerParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Side of the square network input, in pixels.
    pub input_size: usize,
    pub channels: usize,
    /// Output width of each residual stage; every stage after the first halves the resolution.
    pub stage_widths: Vec<usize>,
    /// Width n of the backbone feature vector.
    pub feature_dim: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    /// Feed the anchor position to the LSTM alongside the image features.
    pub use_fix_features: bool,
    pub sequence_chunks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            channels: 1,
            stage_widths: vec![8, 16, 32],
            feature_dim: 64,
            lstm_layers: 2,
            lstm_hidden: 32,
            use_fix_features: false,
            sequence_chunks: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.lstm_layers < 1 {
            return fail("lstm_layers must be at least 1");
        }
        if self.feature_dim < 4 {
            return fail("feature_dim must be at least 4");
        }
        if self.lstm_hidden < 1 || self.channels < 1 {
            return fail("lstm_hidden and channels must be positive");
        }
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return fail("stage_widths must be non-empty and positive");
        }
        if self.sequence_chunks < 1 || self.feature_dim % self.sequence_chunks != 0 {
            return fail("sequence_chunks must divide feature_dim");
        }
        // stem pooling halves once, each later stage halves again
        let min = 2usize << (self.stage_widths.len() - 1);
        if self.input_size < min.max(4) {
            return Err(Error::Config(format!(
                "input_size {} too small for {} stages (need >= {})",
                self.input_size,
                self.stage_widths.len(),
                min.max(4)
            )));
        }
        Ok(())
    }

    fn lstm_input_dim(&self) -> usize {
        self.feature_dim / self.sequence_chunks + if self.use_fix_features { 2 } else { 0 }
    }
}

pub fn init_params(config: &ModelConfig, rng: &mut impl Rng) -> Result<ModelParams> {
    config.validate()?;
    let mut p = LayerParams::new();
    let w0 = config.stage_widths[0];
    init_conv(&mut p, "stem", w0, config.channels, 3, rng)?;
    let mut in_ch = w0;
    for (i, &w) in config.stage_widths.iter().enumerate() {
        let stride = if i == 0 { 1 } else { 2 };
        init_residual_block(&mut p, &format!("stage{}", i + 1), in_ch, w, stride, rng)?;
        in_ch = w;
    }
    init_linear(&mut p, "fc", in_ch, config.feature_dim, rng)?;
    let mut d = config.lstm_input_dim();
    for l in 0..config.lstm_layers {
        init_lstm(&mut p, &format!("lstm{l}"), d, config.lstm_hidden, rng)?;
        d = config.lstm_hidden;
    }
    init_linear(&mut p, "head", config.lstm_hidden, 2, rng)?;
    Ok(p)
}

/// Checks that `params` holds exactly the tensors `config` calls for.
pub fn validate_params(config: &ModelConfig, params: &ModelParams) -> Result<()> {
    let reference = init_params(config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
    for (k, t) in reference.iter() {
        let have = params.get(k)?;
        if have.shape() != t.shape() {
            return Err(Error::Shape {
                op: "model params",
                lhs: have.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
    }
    if let Some(extra) = params.keys().find(|k| reference.get(k).is_err()) {
        return Err(Error::Key(format!("unexpected parameter {extra}")));
    }
    Ok(())
}

/// Forward pass on an existing tape. `image` is (B, C, S, S) in [0, 1]; `fix`
/// is (B, 2) and only consumed when `use_fix_features` is set.
pub fn forward<'t>(
    image: Var<'t>,
    fix: Option<Var<'t>>,
    params: &BoundParams<'t>,
    config: &ModelConfig,
) -> Result<Var<'t>> {
    let s = image.shape();
    if s.len() != 4 || s[1] != config.channels {
        return Err(Error::Shape {
            op: "model input",
            lhs: s,
            rhs: vec![0, config.channels, config.input_size, config.input_size],
        });
    }
    let batch = s[0];
    let fix = if config.use_fix_features {
        let f = fix.ok_or_else(|| Error::Config("model expects fix features".into()))?;
        if f.shape() != [batch, 2] {
            return Err(Error::Shape {
                op: "fix features",
                lhs: f.shape(),
                rhs: vec![batch, 2],
            });
        }
        Some(f)
    } else {
        None
    };

    let mut x = conv(image, params, "stem", 1, 1)?.relu().maxpool2d(2, 2)?;
    for i in 0..config.stage_widths.len() {
        let stride = if i == 0 { 1 } else { 2 };
        x = residual_block(x, params, &format!("stage{}", i + 1), stride)?;
    }
    let features = fully_connected(x.global_avg_pool()?, params, "fc")?;

    let chunk = config.feature_dim / config.sequence_chunks;
    let tape = image.tape();
    let mut states: Vec<LstmState<'t>> = (0..config.lstm_layers)
        .map(|_| LstmState::zeros(tape, batch, config.lstm_hidden))
        .collect();
    let mut top = None;
    for step in 0..config.sequence_chunks {
        let mut input = if config.sequence_chunks == 1 {
            features
        } else {
            features.slice(1, step * chunk, chunk)?
        };
        if let Some(f) = fix {
            input = Var::concat(&[input, f], 1)?;
        }
        for (l, state) in states.iter_mut().enumerate() {
            let (h, next) = lstm_cell(input, *state, params, &format!("lstm{l}"))?;
            *state = next;
            input = h;
        }
        top = Some(input);
    }
    let top = top.expect("at least one sequence step");
    fully_connected(top, params, "head")
}

/// Maps an anchor position to the two network fix features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixEncoding {
    pub origin_east: f64,
    pub origin_north: f64,
    /// Meters per feature unit.
    pub scale: f64,
}

impl FixEncoding {
    /// Centres on the mean of `anchors`.
    pub fn fit(anchors: &[GeoPoint], zone: Zone, scale: f64) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::EmptyInput("anchors"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config("fix scale must be positive".into()));
        }
        let (mut sx, mut sy) = (0.0, 0.0);
        for a in anchors {
            let (x, y) = grid_xy(*a, zone)?;
            sx += x;
            sy += y;
        }
        let n = anchors.len() as f64;
        Ok(Self {
            origin_east: sx / n,
            origin_north: sy / n,
            scale,
        })
    }

    pub fn encode(&self, p: GeoPoint, zone: Zone) -> Result<[f64; 2]> {
        let (x, y) = grid_xy(p, zone)?;
        Ok([
            (x - self.origin_east) / self.scale,
            (y - self.origin_north) / self.scale,
        ])
    }
}

/// A trained model together with everything needed to turn its output into positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Localizer {
    pub config: ModelConfig,
    pub params: ModelParams,
    /// Meters per network output unit.
    pub target_scale: f64,
    pub zone: Zone,
    pub fix_encoding: Option<FixEncoding>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: u32,
    config: ModelConfig,
    target_scale: f64,
    zone: String,
    fix_encoding: Option<FixEncoding>,
}

const SIDECAR_FORMAT: u32 = 1;
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SIDECAR_FILE: &str = "model.json";

impl Localizer {
    pub fn new(
        config: ModelConfig,
        params: ModelParams,
        target_scale: f64,
        zone: Zone,
        fix_encoding: Option<FixEncoding>,
    ) -> Result<Self> {
        validate_params(&config, &params)?;
        if !(target_scale > 0.0) {
            return Err(Error::Config("target_scale must be positive".into()));
        }
        if config.use_fix_features && fix_encoding.is_none() {
            return Err(Error::Config("fix features enabled without an encoding".into()));
        }
        Ok(Self {
            config,
            params,
            target_scale,
            zone,
            fix_encoding,
        })
    }

    /// Fix-feature tensor (B, 2) for a batch of anchors, if the model uses one.
    pub fn fix_features(&self, anchors: &[GeoPoint]) -> Result<Option<Tensor>> {
        match (&self.fix_encoding, self.config.use_fix_features) {
            (Some(enc), true) => {
                let mut data = Vec::with_capacity(anchors.len() * 2);
                for a in anchors {
                    data.extend(enc.encode(*a, self.zone)?);
                }
                Ok(Some(Tensor::new([anchors.len(), 2], data)?))
            }
            _ => Ok(None),
        }
    }

    /// Raw network output (B, 2) in target-scale units.
    pub fn forward(&self, images: &Tensor, fix: Option<&Tensor>) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let img = tape.leaf(images.clone());
        let fix = fix.map(|f| tape.leaf(f.clone()));
        let out = forward(img, fix, &bound, &self.config)?;
        let value = (*out.value()).clone();
        Ok(value)
    }

    /// Predicted meter offsets from each anchor.
    pub fn predict_deltas(&self, images: &Tensor, anchors: &[GeoPoint]) -> Result<Vec<DeltaLocation>> {
        let fix = self.fix_features(anchors)?;
        let out = self.forward(images, fix.as_ref())?;
        out.data()
            .chunks(2)
            .map(|d| DeltaLocation::new(d[0] * self.target_scale, d[1] * self.target_scale))
            .collect()
    }

    /// Absolute position for each image: its anchor shifted by the predicted delta.
    pub fn predict_absolute(&self, images: &Tensor, anchors: &[GeoPoint]) -> Result<Vec<GeoPoint>> {
        let deltas = self.predict_deltas(images, anchors)?;
        anchors
            .iter()
            .zip(deltas)
            .map(|(a, d)| apply_delta(*a, d, self.zone))
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.params.save(&dir.join(CHECKPOINT_FILE))?;
        let sidecar = Sidecar {
            format: SIDECAR_FORMAT,
            config: self.config.clone(),
            target_scale: self.target_scale,
            zone: self.zone.to_string(),
            fix_encoding: self.fix_encoding,
        };
        std::fs::write(dir.join(SIDECAR_FILE), serde_json::to_string_pretty(&sidecar)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let sidecar: Sidecar =
            serde_json::from_str(&std::fs::read_to_string(dir.join(SIDECAR_FILE))?)?;
        if sidecar.format != SIDECAR_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported sidecar format {}",
                sidecar.format
            )));
        }
        let params = LayerParams::load(&dir.join(CHECKPOINT_FILE))?;
        Self::new(
            sidecar.config,
            params,
            sidecar.target_scale,
            sidecar.zone.parse()?,
            sidecar.fix_encoding,
        )
    }
}

/// Predicted position for one (C, S, S) image: `anchor` moved by the network's delta.
pub fn predict_absolute(localizer: &Localizer, image: &Tensor, anchor: GeoPoint) -> Result<GeoPoint> {
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    let batch = image.clone().reshaped(shape)?;
    Ok(localizer.predict_absolute(&batch, &[anchor])?[0])
}
