use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{encoder_config_for, select_device, EncoderConfig, ModelHandle};
use crate::builder::{Split, StatementDataset, StatementRecord};
use crate::error::{Error, Result};

/// Fine-tuning hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_max_len")]
    pub max_sequence_length: usize,
    /// Stop after this many epochs without a validation improvement.
    #[serde(default)]
    pub early_stop_patience: Option<usize>,
}

fn default_max_len() -> usize {
    256
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::preset("mdeberta-v3-base").expect("preset exists")
    }
}

impl TrainConfig {
    fn encoder_recipe(epochs: usize, learning_rate: f64) -> Self {
        TrainConfig {
            epochs,
            batch_size: 16,
            learning_rate,
            weight_decay: 0.1,
            warmup_ratio: 0.1,
            seed: None,
            max_sequence_length: 256,
            early_stop_patience: None,
        }
    }

    /// Recipes per backend id. The four pretrained encoders follow the
    /// published fine-tuning table; the scratch encoders use a larger step
    /// size since they start from random weights.
    pub fn preset(backend_id: &str) -> Option<Self> {
        Some(match backend_id {
            "mbert" => Self::encoder_recipe(20, 1e-6),
            "mdeberta-v3-base" => Self::encoder_recipe(15, 2e-6),
            "xlmr-base" => Self::encoder_recipe(15, 1e-6),
            "xlmr-large" => Self::encoder_recipe(15, 2e-6),
            "tiny-encoder" | "small-encoder" => TrainConfig {
                epochs: 4,
                batch_size: 32,
                learning_rate: 1e-3,
                weight_decay: 0.01,
                warmup_ratio: 0.1,
                seed: None,
                max_sequence_length: 128,
                early_stop_patience: None,
            },
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio must be in [0, 1), got {}", self.warmup_ratio));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if self.weight_decay < 0.0 {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.max_sequence_length < 2 {
            return bad("max_sequence_length must be at least 2".into());
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("serializes")))
    }

    /// Learning rate at optimizer step `step` (1-based) of `total`:
    /// linear warmup to the peak, then linear decay to zero.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let warmup = (self.warmup_ratio * total as f64).ceil() as usize;
        if step <= warmup && warmup > 0 {
            return self.learning_rate * step as f64 / warmup as f64;
        }
        let rest = (total - warmup).max(1) as f64;
        self.learning_rate * ((total - step.min(total)) as f64 / rest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_accuracy: Option<f64>,
}

/// Trains `backend_id` on the dataset's train split, selecting the epoch
/// with the best validation accuracy.
pub fn train(dataset: &StatementDataset, config: &TrainConfig, backend_id: &str) -> Result<ModelHandle> {
    let cfg = encoder_config_for(backend_id)?;
    train_on(dataset, config, backend_id, cfg, select_device()?)
}

pub fn train_on(
    dataset: &StatementDataset,
    config: &TrainConfig,
    backend_id: &str,
    encoder: EncoderConfig,
    device: Device,
) -> Result<ModelHandle> {
    config.validate()?;
    let train_set: Vec<&StatementRecord> = dataset.split(Split::Train).collect();
    if train_set.is_empty() {
        return Err(Error::InvalidInput("dataset has no training records".into()));
    }
    let val_set: Vec<&StatementRecord> = dataset.split(Split::Validation).collect();
    let seed = config.seed.unwrap_or(dataset.header.seed);
    let mut handle = ModelHandle::init_with(backend_id, encoder, seed, config.max_sequence_length, device)?;

    let train_enc: Vec<_> = train_set.iter().map(|r| handle.tokenizer.encode(&r.statement)).collect();
    let labels: Vec<u32> = train_set.iter().map(|r| r.truth as u32).collect();
    let steps_per_epoch = train_set.len().div_ceil(config.batch_size);
    let total = steps_per_epoch * config.epochs;

    let mut opt = AdamW::new(
        handle.varmap().all_vars(),
        ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: config.weight_decay,
            ..ParamsAdamW::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Snapshot)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=config.epochs {
        // The first pass follows the builder's order.
        if epoch > 1 {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            opt.set_learning_rate(config.lr_at(step, total));
            let encs: Vec<_> = chunk.iter().map(|&i| train_enc[i].clone()).collect();
            let y: Vec<u32> = chunk.iter().map(|&i| labels[i]).collect();
            let y = Tensor::new(y.as_slice(), handle.device())?;
            let logits = handle.logits(&encs)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &y)?;
            opt.backward_step(&loss)?;
            loss_sum += loss.to_scalar::<f32>()? as f64 * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let validation_accuracy = if val_set.is_empty() {
            None
        } else {
            Some(accuracy(&handle, &val_set, config.batch_size.max(64))?)
        };
        info!("epoch {epoch}: loss {train_loss:.4}, validation accuracy {validation_accuracy:?}");
        history.push(EpochStats {
            epoch,
            train_loss,
            validation_accuracy,
        });
        let score = validation_accuracy.unwrap_or(-train_loss);
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, snapshot(&handle)?));
            since_best = 0;
        } else {
            since_best += 1;
            if config.early_stop_patience.is_some_and(|p| since_best >= p) {
                info!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let (_, best_epoch, weights) = best.expect("at least one epoch");
    restore(&handle, &weights)?;
    handle.provenance.train_config = Some(config.clone());
    handle.provenance.config_digest = Some(config.digest());
    handle.provenance.dataset_digest = Some(dataset.digest());
    handle.provenance.best_epoch = Some(best_epoch);
    handle.provenance.validation_accuracy = history[best_epoch - 1].validation_accuracy;
    handle.provenance.history = history;
    Ok(handle)
}

fn accuracy(handle: &ModelHandle, records: &[&StatementRecord], chunk: usize) -> Result<f64> {
    let mut correct = 0usize;
    for part in records.chunks(chunk) {
        let texts: Vec<String> = part.iter().map(|r| r.statement.clone()).collect();
        let encs: Vec<_> = texts.iter().map(|t| handle.tokenizer.encode(t)).collect();
        let pred = handle.logits(&encs)?.argmax(1)?.to_vec1::<u32>()?;
        correct += pred.iter().zip(part).filter(|(p, r)| (**p == 1) == r.truth).count();
    }
    Ok(correct as f64 / records.len() as f64)
}

type Snapshot = Vec<(String, Tensor)>;

fn snapshot(handle: &ModelHandle) -> Result<Snapshot> {
    let data = handle.varmap().data().lock().expect("varmap lock");
    data.iter()
        .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
        .collect()
}

fn restore(handle: &ModelHandle, weights: &[(String, Tensor)]) -> Result<()> {
    let data = handle.varmap().data().lock().expect("varmap lock");
    for (k, t) in weights {
        data[k].set(t)?;
    }
    Ok(())
}
