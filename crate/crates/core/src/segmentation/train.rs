use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::dataset::{Dataset, DatasetError, DatasetSplit, Sample};
use super::infer::{ModelError, ModelManifest, SegModel};
use super::loss::dice_loss_grad;
use super::metrics::{ConfusionCounts, IoUReport};
use super::net::{argmax, image_to_input, softmax, softmax_backward, Adam, Net, NetError, DEFAULT_ARCH};
use super::ClassSchema;
use crate::mask::LabelMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub arch: String,
    /// Channels of the hidden layers.
    pub width: usize,
    /// Square side images are resampled to before training and inference.
    pub input_size: u32,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub epochs: u32,
    pub decay_factor: f64,
    /// First (1-indexed) epoch trained at the decayed rate.
    pub decay_epoch: u32,
    pub loss: String,
    pub optimizer: String,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Weights file of a previously trained model of the same architecture;
    /// every layer but the head is initialised from it.
    pub pretrained_encoder: Option<PathBuf>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            arch: DEFAULT_ARCH.to_owned(),
            width: 16,
            input_size: 64,
            batch_size: 1,
            initial_lr: 1e-4,
            epochs: 40,
            decay_factor: 0.1,
            decay_epoch: 25,
            loss: "dice".to_owned(),
            optimizer: "adam".to_owned(),
            augment: AugmentConfig::default(),
            seed: 0,
            pretrained_encoder: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::BadConfig(m.to_owned()));
        if !(self.initial_lr > 0.0 && self.decay_factor > 0.0) {
            return bad("initial_lr and decay_factor must be positive");
        }
        if self.epochs == 0 || self.decay_epoch == 0 || self.decay_epoch > self.epochs {
            return bad("need 1 <= decay_epoch <= epochs");
        }
        if self.width == 0 || self.input_size == 0 || self.batch_size == 0 {
            return bad("width, input_size and batch_size must be positive");
        }
        if self.loss != "dice" || self.optimizer != "adam" {
            return bad("only the dice loss and the adam optimizer are available");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("epoch {epoch} outside 1..={epochs}")]
    EpochOutOfRange { epoch: u32, epochs: u32 },
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: u32, step: usize, loss: f64 },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Step schedule: `initial_lr` before `decay_epoch`, scaled by
/// `decay_factor` from it on.
pub fn lr_at_epoch(config: &TrainingConfig, epoch: u32) -> Result<f64, TrainError> {
    if epoch == 0 || epoch > config.epochs {
        return Err(TrainError::EpochOutOfRange {
            epoch,
            epochs: config.epochs,
        });
    }
    Ok(if epoch < config.decay_epoch {
        config.initial_lr
    } else {
        config.initial_lr * config.decay_factor
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub loss: f64,
    pub val_mean_iou: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Weights of the best validation epoch.
    pub model: SegModel,
    pub metrics: Vec<EpochMetrics>,
}

struct Prepared {
    input: Vec<f32>,
    labels: Vec<u8>,
}

fn prepare(samples: &[Sample], size: u32) -> Vec<Prepared> {
    samples
        .par_iter()
        .map(|s| Prepared {
            input: image_to_input(&s.image.resize_nearest(size, size)),
            labels: s.mask.resize_nearest(size, size).labels().to_vec(),
        })
        .collect()
}

fn sample_rng(seed: u64, epoch: u32, index: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..12].copy_from_slice(&epoch.to_le_bytes());
    key[12..20].copy_from_slice(&(index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Validation counts of `net` over prepared samples at side `size`.
fn evaluate(net: &Net, data: &[Prepared], size: usize) -> ConfusionCounts {
    let mut counts = ConfusionCounts::new(net.num_classes);
    for p in data {
        let pred = argmax(&net.forward(&p.input, size, size), net.num_classes);
        let pred = LabelMask::new(size as u32, size as u32, pred).expect("sized");
        let gt = LabelMask::new(size as u32, size as u32, p.labels.clone()).expect("sized");
        counts.add(&pred, &gt).expect("same size, labels in range");
    }
    counts
}

/// Train on in-memory samples, checkpointing the best validation mean IoU.
pub fn train(
    schema: &ClassSchema,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    let classes = schema.num_classes();
    let mut net = Net::build(&config.arch, classes, config.width, config.seed)?;
    if let Some(path) = &config.pretrained_encoder {
        net.load_encoder(&SegModel::read_weights(path)?)?;
    }
    let size = config.input_size as usize;
    let train_data = prepare(train_set, config.input_size);
    let val_data = prepare(val_set, config.input_size);

    let mut params = net.params();
    let mut adam = Adam::new(params.len());
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut best: Option<(f64, u32, Vec<f32>)> = None;
    let mut metrics = Vec::with_capacity(config.epochs as usize);

    for epoch in 1..=config.epochs {
        let lr = lr_at_epoch(config, epoch)?;
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<(f64, Vec<f32>)> = batch
                .par_iter()
                .map(|&idx| {
                    let p = &train_data[idx];
                    let mut rng = sample_rng(config.seed, epoch, idx);
                    let (x, labels) =
                        augment(&config.augment, &mut rng, p.input.clone(), p.labels.clone(), size, size);
                    let acts = net.forward_cached(x, size, size);
                    let probs = softmax(&acts.logits, classes);
                    let (loss, dprobs) =
                        dice_loss_grad(&probs, classes, &labels).expect("shapes fixed by prepare");
                    let dlogits = softmax_backward(&probs, &dprobs, classes);
                    (loss, net.backward(&acts, dlogits))
                })
                .collect();
            let mut grad = vec![0.0f32; params.len()];
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let inv = 1.0 / results.len() as f32;
            grad.iter_mut().for_each(|g| *g *= inv);
            batch_loss /= results.len() as f64;
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::Diverged {
                    epoch,
                    step,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss * results.len() as f64;
            adam.step(&mut params, &grad, lr);
            net.set_params(&params)?;
        }
        let val = IoUReport::from_counts(evaluate(&net, &val_data, size), schema, false);
        let m = EpochMetrics {
            epoch,
            loss: loss_sum / train_data.len() as f64,
            val_mean_iou: val.mean_iou,
            lr,
        };
        on_epoch(&m);
        if best.as_ref().is_none_or(|(b, _, _)| m.val_mean_iou > *b) {
            best = Some((m.val_mean_iou, epoch, params.clone()));
        }
        metrics.push(m);
    }

    let (best_val, best_epoch, best_params) = best.expect("at least one epoch");
    net.set_params(&best_params)?;
    let manifest = ModelManifest {
        arch: config.arch.clone(),
        width: config.width,
        num_classes: classes,
        input_size: config.input_size,
        schema: schema.clone(),
        config: config.clone(),
        split_seed: None,
        best_epoch,
        best_val_mean_iou: best_val,
        training_hash: String::new(),
    };
    Ok(TrainOutcome {
        model: SegModel::new(net, manifest),
        metrics,
    })
}

/// Train on a dataset split and write the model directory, including the
/// per-epoch `metrics.jsonl`.
pub fn train_dataset(
    dataset: &Dataset,
    split: &DatasetSplit,
    config: &TrainingConfig,
    out_dir: &Path,
) -> Result<TrainOutcome, TrainError> {
    let train_set = dataset.load_many(&split.train)?;
    let val_set = dataset.load_many(&split.val)?;
    std::fs::create_dir_all(out_dir).map_err(|source| TrainError::Io {
        path: out_dir.to_owned(),
        source,
    })?;
    let log_path = out_dir.join("metrics.jsonl");
    let io = |source| TrainError::Io {
        path: log_path.clone(),
        source,
    };
    let mut log = BufWriter::new(File::create(&log_path).map_err(io)?);
    let mut log_err = None;
    let mut outcome = train(dataset.schema(), &train_set, &val_set, config, |m| {
        let line = serde_json::to_string(m).expect("plain data");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
        tracing::info!(epoch = m.epoch, loss = m.loss, val_mean_iou = m.val_mean_iou, lr = m.lr, "epoch");
    })?;
    if let Some(e) = log_err {
        return Err(io(e));
    }
    outcome.model.manifest_mut().split_seed = Some(split.seed);
    outcome.model.save(out_dir)?;
    Ok(outcome)
}
