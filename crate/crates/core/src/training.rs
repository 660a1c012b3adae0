//! Plain minibatch SGD on the smooth-L1 delta-location objective.
//!
//! Everything random is derived from the configured seed: the initial weights,
//! the per-epoch shuffle from (seed, epoch) and each crop from
//! (seed, epoch, sample index), so a run is reproducible bit for bit.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::dataset::image::{batch_tensor, GrayImage};
use crate::layers::LayerParams;
use crate::model::{forward, init_params, ModelConfig, ModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Side of the random training crop as a fraction of the source image.
    pub crop_fraction: f64,
    /// Meters per network output unit.
    pub target_scale: f64,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 keeps only the best and last.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.045,
            batch_size: 8,
            epochs: 30,
            crop_fraction: 0.875,
            target_scale: 10.0,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.crop_fraction > 0.0 && self.crop_fraction <= 1.0) {
            return Err(Error::Config("crop_fraction must lie in (0, 1]".into()));
        }
        if !(self.target_scale > 0.0 && self.target_scale.is_finite()) {
            return Err(Error::Config("target_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn checkpoint_due(&self, epoch: usize) -> bool {
        self.checkpoint_every > 0 && epoch % self.checkpoint_every == 0
    }
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub image: GrayImage,
    /// Encoded anchor position, for models that use it.
    pub fix: Option<[f64; 2]>,
    /// Offset from the anchor to the truth, meters east and north.
    pub target: [f64; 2],
}

/// Crop then bilinear resize to `input_size`. With an rng the crop offset is
/// random; without one it is centred.
pub fn augment(
    image: &GrayImage,
    rng: Option<&mut ChaCha8Rng>,
    crop_fraction: f64,
    input_size: usize,
) -> Result<GrayImage> {
    let side = |len: usize| (len as f64 * crop_fraction).round() as usize;
    let (ch, cw) = (side(image.height()), side(image.width()));
    if ch == 0 || cw == 0 || ch > image.height() || cw > image.width() {
        return Err(Error::Image(format!(
            "cannot take a {crop_fraction} crop of a {}x{} image",
            image.height(),
            image.width()
        )));
    }
    let (top, left) = match rng {
        Some(rng) => (
            rng.random_range(0..=image.height() - ch),
            rng.random_range(0..=image.width() - cw),
        ),
        None => ((image.height() - ch) / 2, (image.width() - cw) / 2),
    };
    image.crop(top, left, ch, cw)?.resize(input_size, input_size)
}

/// `p <- p - lr * g` for every parameter.
pub fn sgd_step(params: &mut LayerParams, grads: &LayerParams, learning_rate: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Key(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (k, p) in params.iter_mut() {
        let g = grads.get(k)?;
        if g.shape() != p.shape() {
            return Err(Error::Shape {
                op: "sgd_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= learning_rate * d;
        }
    }
    Ok(())
}

fn derived_rng(seed: u64, a: u64, b: u64, tag: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, v) in [seed, a, b, tag].into_iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_CROP: u64 = 3;

/// Initial weights for a run with `seed`.
pub fn initial_params(model: &ModelConfig, seed: u64) -> Result<ModelParams> {
    init_params(model, &mut derived_rng(seed, 0, 0, TAG_INIT))
}

struct Batch {
    images: Tensor,
    fix: Option<Tensor>,
    targets: Tensor,
}

fn make_batch(
    examples: &[&Example],
    images: Vec<GrayImage>,
    model: &ModelConfig,
    target_scale: f64,
) -> Result<Batch> {
    let refs: Vec<&GrayImage> = images.iter().collect();
    let images = batch_tensor(&refs)?;
    let fix = if model.use_fix_features {
        let mut data = Vec::with_capacity(examples.len() * 2);
        for (i, e) in examples.iter().enumerate() {
            let f = e.fix.ok_or(Error::IncompleteSample {
                row: i,
                what: "fix features",
            })?;
            data.extend(f);
        }
        Some(Tensor::new([examples.len(), 2], data)?)
    } else {
        None
    };
    let targets = Tensor::new(
        [examples.len(), 2],
        examples
            .iter()
            .flat_map(|e| e.target.map(|t| t / target_scale))
            .collect(),
    )?;
    Ok(Batch {
        images,
        fix,
        targets,
    })
}

const EVAL_BATCH: usize = 64;

/// Network outputs in meters for every example, using centre crops.
pub fn predict(
    examples: &[Example],
    params: &ModelParams,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<Vec<[f64; 2]>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_BATCH) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let images = chunk
            .iter()
            .map(|e| augment(&e.image, None, train.crop_fraction, model.input_size))
            .collect::<Result<Vec<_>>>()?;
        let batch = make_batch(&refs, images, model, train.target_scale)?;
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let y = forward(
            tape.leaf(batch.images),
            batch.fix.map(|f| tape.leaf(f)),
            &bound,
            model,
        )?;
        let y = y.value();
        out.extend(
            y.data()
                .chunks(2)
                .map(|r| [r[0] * train.target_scale, r[1] * train.target_scale]),
        );
    }
    Ok(out)
}

/// Mean smooth-L1 loss in scaled units over centre-cropped examples, and the
/// mean meter error of the predicted offsets.
pub fn evaluate(
    examples: &[Example],
    params: &ModelParams,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("evaluation examples"));
    }
    let pred = predict(examples, params, model, train)?;
    let (mut loss, mut meters) = (0.0, 0.0);
    for (p, e) in pred.iter().zip(examples) {
        for j in 0..2 {
            loss += crate::autodiff::smooth_l1_value((p[j] - e.target[j]) / train.target_scale);
        }
        meters += (p[0] - e.target[0]).hypot(p[1] - e.target[1]);
    }
    let n = examples.len() as f64;
    Ok((loss / (2.0 * n), meters / n))
}

pub fn evaluate_loss(
    examples: &[Example],
    params: &ModelParams,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<f64> {
    Ok(evaluate(examples, params, model, train)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_meter_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    /// Completed epochs; the next epoch's rng streams derive from this.
    pub epoch: usize,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(params: ModelParams, seed: u64) -> Self {
        Self {
            params,
            epoch: 0,
            seed,
            history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Parameters with the lowest validation meter error (the last ones without validation data).
    pub best_params: ModelParams,
    pub best_epoch: usize,
}

/// Runs one epoch in place and returns the mean training loss.
pub fn train_epoch(
    state: &mut TrainState,
    train: &[Example],
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<f64> {
    let epoch = state.epoch + 1;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut derived_rng(state.seed, epoch as u64, 0, TAG_SHUFFLE));
    let mut total = 0.0;
    for (b, idx) in order.chunks(config.batch_size).enumerate() {
        let refs: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
        let images = idx
            .iter()
            .map(|&i| {
                let mut rng = derived_rng(state.seed, epoch as u64, i as u64, TAG_CROP);
                augment(&train[i].image, Some(&mut rng), config.crop_fraction, model.input_size)
            })
            .collect::<Result<Vec<_>>>()?;
        let batch = make_batch(&refs, images, model, config.target_scale)?;

        let tape = Tape::new();
        let bound = state.params.bind(&tape);
        let y = forward(
            tape.leaf(batch.images),
            batch.fix.map(|f| tape.leaf(f)),
            &bound,
            model,
        )?;
        let loss = y.smooth_l1_loss(tape.leaf(batch.targets))?;
        let value = loss.value().item()?;
        if !value.is_finite() {
            return Err(Error::Divergence { epoch, batch: b });
        }
        let grads = tape.backward(loss)?;
        if state.epoch == 0 && b == 0 {
            let dead = bound.unreached(&grads)?;
            if !dead.is_empty() {
                return Err(Error::Key(format!(
                    "parameters without a gradient path: {}",
                    dead.join(", ")
                )));
            }
        }
        let grads = bound.gradients(&grads)?;
        sgd_step(&mut state.params, &grads, config.learning_rate)?;
        total += value * idx.len() as f64;
    }
    state.epoch = epoch;
    Ok(total / train.len() as f64)
}

/// Trains from the seed's initial weights. `observer` sees every finished
/// epoch with the parameters at that point.
pub fn train(
    train: &[Example],
    val: &[Example],
    model: &ModelConfig,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord, &ModelParams) -> Result<()>,
) -> Result<TrainOutcome> {
    let params = initial_params(model, config.seed)?;
    train_from(TrainState::new(params, config.seed), train, val, model, config, &mut observer)
}

/// Continues `state` until `config.epochs` epochs are complete.
pub fn train_from(
    mut state: TrainState,
    train: &[Example],
    val: &[Example],
    model: &ModelConfig,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord, &ModelParams) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training split".into()));
    }
    let mut best: Option<(f64, usize, ModelParams)> = None;
    while state.epoch < config.epochs {
        let train_loss = train_epoch(&mut state, train, model, config)?;
        let (val_loss, val_meter_error) = if val.is_empty() {
            (None, None)
        } else {
            let (l, m) = evaluate(val, &state.params, model, config)?;
            (Some(l), Some(m))
        };
        let record = EpochRecord {
            epoch: state.epoch,
            train_loss,
            val_loss,
            val_meter_error,
        };
        if let Some(m) = val_meter_error {
            if best.as_ref().is_none_or(|(b, _, _)| m < *b) {
                best = Some((m, state.epoch, state.params.clone()));
            }
        }
        observer(&record, &state.params)?;
        state.history.push(record);
    }
    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (e, p),
        None => (state.epoch, state.params.clone()),
    };
    Ok(TrainOutcome {
        state,
        best_params,
        best_epoch,
    })
}

/// CSV training log: `epoch,train_loss,val_loss,val_meter_error`.
pub fn history_csv(history: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "val_loss", "val_meter_error"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            opt(r.val_loss),
            opt(r.val_meter_error),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
