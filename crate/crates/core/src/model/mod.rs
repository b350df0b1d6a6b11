//! Binary statement discriminator: a small transformer encoder trained from
//! scratch with candle, scored as P(true | statement).

mod checkpoint;
mod encoder;
mod tokenizer;
mod train;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use candle_core::{Device, Tensor};
use candle_nn::VarMap;
use log::warn;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_model, save_model};
pub use encoder::{EncoderConfig, Encoder};
pub use tokenizer::{Encoding, HashTokenizer, TruncationSide};
pub use train::{train, train_on, EpochStats, TrainConfig};

use crate::error::{Error, Result};

/// Anything that maps statements to probabilities of being true.
pub trait StatementScorer: Sync {
    /// One probability per statement, in input order. Each call is one
    /// forward batch.
    fn score(&self, statements: &[String]) -> Result<Vec<f64>>;

    /// Blocks until queued device work has finished.
    fn synchronize(&self) -> Result<()> {
        Ok(())
    }

    fn describe(&self) -> String {
        "scorer".into()
    }
}

impl<T: StatementScorer + ?Sized> StatementScorer for &T {
    fn score(&self, statements: &[String]) -> Result<Vec<f64>> {
        (**self).score(statements)
    }
    fn synchronize(&self) -> Result<()> {
        (**self).synchronize()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Statements and their scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBatch {
    pub statements: Vec<String>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Scratch,
    Pretrained { hub_id: &'static str },
}

#[derive(Debug, Clone, Copy)]
pub struct BackendInfo {
    pub id: &'static str,
    pub kind: BackendKind,
    pub description: &'static str,
}

pub const BACKENDS: &[BackendInfo] = &[
    BackendInfo {
        id: "tiny-encoder",
        kind: BackendKind::Scratch,
        description: "2-layer 128-wide hashed-vocabulary encoder, about 4.5M parameters",
    },
    BackendInfo {
        id: "small-encoder",
        kind: BackendKind::Scratch,
        description: "4-layer 256-wide hashed-vocabulary encoder, about 20M parameters",
    },
    BackendInfo {
        id: "mdeberta-v3-base",
        kind: BackendKind::Pretrained { hub_id: "microsoft/mdeberta-v3-base" },
        description: "mDeBERTa-v3 base",
    },
    BackendInfo {
        id: "mbert",
        kind: BackendKind::Pretrained { hub_id: "google-bert/bert-base-multilingual-cased" },
        description: "multilingual BERT base, cased",
    },
    BackendInfo {
        id: "xlmr-base",
        kind: BackendKind::Pretrained { hub_id: "FacebookAI/xlm-roberta-base" },
        description: "XLM-R base",
    },
    BackendInfo {
        id: "xlmr-large",
        kind: BackendKind::Pretrained { hub_id: "FacebookAI/xlm-roberta-large" },
        description: "XLM-R large",
    },
];

pub fn backend_info(id: &str) -> Result<&'static BackendInfo> {
    BACKENDS.iter().find(|b| b.id == id).ok_or_else(|| {
        let known: Vec<&str> = BACKENDS.iter().map(|b| b.id).collect();
        Error::Backend(format!("unknown backend `{id}`; known: {}", known.join(", ")))
    })
}

fn encoder_config_for(id: &str) -> Result<EncoderConfig> {
    let info = backend_info(id)?;
    match (info.kind, info.id) {
        (BackendKind::Scratch, "tiny-encoder") => Ok(EncoderConfig::tiny()),
        (BackendKind::Scratch, _) => Ok(EncoderConfig::small()),
        (BackendKind::Pretrained { hub_id }, _) => Err(Error::Backend(format!(
            "`{id}` needs pretrained `{hub_id}` weights, which this build cannot fetch or convert"
        ))),
    }
}

/// Compute device from `ST_DEVICE` (`cpu`, `cuda[:N]`, `metal`, `auto`).
pub fn select_device() -> Result<Device> {
    let want = std::env::var("ST_DEVICE").unwrap_or_default();
    let want = want.trim().to_ascii_lowercase();
    match want.as_str() {
        "" | "auto" => Ok(Device::Cpu),
        "cpu" => Ok(Device::Cpu),
        s if s.starts_with("cuda") => {
            let ordinal = s
                .strip_prefix("cuda")
                .and_then(|r| r.strip_prefix(':'))
                .map(|n| n.parse::<usize>())
                .transpose()
                .map_err(|_| Error::Environment(format!("bad ST_DEVICE `{s}`")))?
                .unwrap_or(0);
            Device::new_cuda(ordinal).map_err(|e| Error::Environment(format!("ST_DEVICE={s}: {e}")))
        }
        "metal" => Device::new_metal(0).map_err(|e| Error::Environment(format!("ST_DEVICE=metal: {e}"))),
        other => Err(Error::Environment(format!("unrecognized ST_DEVICE `{other}`"))),
    }
}

/// Where a handle's weights came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend_id: String,
    pub seed: u64,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
    #[serde(default)]
    pub config_digest: Option<String>,
    #[serde(default)]
    pub dataset_digest: Option<String>,
    #[serde(default)]
    pub validation_accuracy: Option<f64>,
    #[serde(default)]
    pub best_epoch: Option<usize>,
    #[serde(default)]
    pub history: Vec<EpochStats>,
}

/// A loaded discriminator in evaluation mode.
pub struct ModelHandle {
    pub backend_id: String,
    pub checkpoint: Option<PathBuf>,
    pub tokenizer: HashTokenizer,
    pub provenance: Provenance,
    encoder: Encoder,
    varmap: VarMap,
    device: Device,
    memory_budget: Option<u64>,
    truncations: AtomicUsize,
}

impl std::fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelHandle")
            .field("backend_id", &self.backend_id)
            .field("checkpoint", &self.checkpoint)
            .field("encoder", &self.encoder.config)
            .field("device", &self.device)
            .finish()
    }
}

impl ModelHandle {
    /// Freshly initialized (untrained) model for a scratch backend.
    pub fn init(backend_id: &str, seed: u64, max_sequence_length: usize) -> Result<Self> {
        let cfg = encoder_config_for(backend_id)?;
        Self::init_with(backend_id, cfg, seed, max_sequence_length, select_device()?)
    }

    pub fn init_with(
        backend_id: &str,
        mut cfg: EncoderConfig,
        seed: u64,
        max_sequence_length: usize,
        device: Device,
    ) -> Result<Self> {
        if max_sequence_length < 2 {
            return Err(Error::InvalidConfig(format!(
                "max_sequence_length must be at least 2, got {max_sequence_length}"
            )));
        }
        cfg.max_positions = cfg.max_positions.max(max_sequence_length);
        let (encoder, varmap) = encoder::build(&cfg, &device)?;
        encoder::init_weights(&varmap, cfg.init_std, seed)?;
        Ok(ModelHandle {
            backend_id: backend_id.to_string(),
            checkpoint: None,
            tokenizer: HashTokenizer::new(cfg.vocab_size as u32, max_sequence_length),
            provenance: Provenance {
                backend_id: backend_id.to_string(),
                seed,
                train_config: None,
                config_digest: None,
                dataset_digest: None,
                validation_accuracy: None,
                best_epoch: None,
                history: Vec::new(),
            },
            encoder,
            varmap,
            device,
            memory_budget: None,
            truncations: AtomicUsize::new(0),
        })
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    pub fn parameter_count(&self) -> usize {
        self.encoder.config.parameter_count()
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Forward batches whose estimated activation memory exceeds `bytes`
    /// fail with [`Error::OutOfMemory`].
    pub fn set_memory_budget(&mut self, bytes: Option<u64>) {
        self.memory_budget = bytes;
    }

    /// Statements truncated so far.
    pub fn truncation_count(&self) -> usize {
        self.truncations.load(Ordering::Relaxed)
    }

    pub(crate) fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub(crate) fn encode_batch(&self, statements: &[String]) -> Vec<Encoding> {
        let encs: Vec<Encoding> = statements.iter().map(|s| self.tokenizer.encode(s)).collect();
        let cut = encs.iter().filter(|e| e.truncated).count();
        if cut > 0 {
            self.truncations.fetch_add(cut, Ordering::Relaxed);
            warn!(
                "{cut} statement(s) truncated to {} tokens",
                self.tokenizer.max_sequence_length
            );
        }
        encs
    }

    pub(crate) fn logits(&self, encs: &[Encoding]) -> Result<Tensor> {
        let (ids, seen, mask) = batch_tensors(encs, self.encoder.config.overlap_buckets, &self.device)?;
        self.encoder.forward(&ids, &seen, &mask)
    }

    pub fn score_batch(&self, statements: Vec<String>) -> Result<ScoreBatch> {
        let probabilities = self.score(&statements)?;
        Ok(ScoreBatch {
            statements,
            probabilities,
        })
    }

    /// Scores in forward batches of at most `chunk` statements.
    pub fn score_chunked(&self, statements: &[String], chunk: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(statements.len());
        for part in statements.chunks(chunk.max(1)) {
            out.extend(self.score(part)?);
        }
        Ok(out)
    }
}

impl StatementScorer for ModelHandle {
    fn score(&self, statements: &[String]) -> Result<Vec<f64>> {
        if statements.is_empty() {
            return Err(Error::InvalidInput("no statements to score".into()));
        }
        let encs = self.encode_batch(statements);
        if let Some(budget) = self.memory_budget {
            let seq = encs.iter().map(|e| e.ids.len()).max().unwrap_or(1);
            if self.encoder.config.activation_bytes(encs.len(), seq) > budget {
                return Err(Error::OutOfMemory {
                    batch_size: encs.len(),
                });
            }
        }
        let probs = candle_nn::ops::softmax_last_dim(&self.logits(&encs)?)?
            .narrow(1, 1, 1)?
            .squeeze(1)?
            .to_vec1::<f32>()?;
        Ok(probs.into_iter().map(f64::from).collect())
    }

    fn synchronize(&self) -> Result<()> {
        Ok(self.device.synchronize()?)
    }

    fn describe(&self) -> String {
        format!("{} ({:?})", self.backend_id, self.device)
    }
}

/// How many times each token occurred earlier in the sequence, capped at
/// `buckets - 1`.
pub(crate) fn seen_counts(ids: &[u32], buckets: usize) -> Vec<u32> {
    let cap = buckets.saturating_sub(1) as u32;
    let mut counts = std::collections::HashMap::new();
    ids.iter()
        .map(|&id| {
            let c = counts.entry(id).or_insert(0u32);
            let v = (*c).min(cap);
            *c += 1;
            v
        })
        .collect()
}

/// Right-padded id, occurrence and mask tensors for a batch of encodings.
pub(crate) fn batch_tensors(
    encs: &[Encoding],
    buckets: usize,
    device: &Device,
) -> Result<(Tensor, Tensor, Tensor)> {
    let seq = encs.iter().map(|e| e.ids.len()).max().unwrap_or(1);
    let n = encs.len() * seq;
    let (mut ids, mut seen, mut mask) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for e in encs {
        let pad = seq - e.ids.len();
        ids.extend_from_slice(&e.ids);
        seen.extend(seen_counts(&e.ids, buckets));
        mask.extend(std::iter::repeat_n(1f32, e.ids.len()));
        ids.extend(std::iter::repeat_n(tokenizer::PAD, pad));
        seen.extend(std::iter::repeat_n(0, pad));
        mask.extend(std::iter::repeat_n(0f32, pad));
    }
    let shape = (encs.len(), seq);
    Ok((
        Tensor::from_vec(ids, shape, device)?,
        Tensor::from_vec(seen, shape, device)?,
        Tensor::from_vec(mask, shape, device)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn handle() -> ModelHandle {
        ModelHandle::init_with("tiny-encoder", EncoderConfig::tiny(), 5, 64, Device::Cpu).unwrap()
    }

    #[test]
    fn shape_order_and_duplicates() {
        let h = handle();
        let s: Vec<String> = ["a", "b", "a"].iter().map(|s| s.to_string()).collect();
        let p = h.score(&s).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
        assert_eq!(p[0], p[2]);
        assert!(matches!(h.score(&[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn over_length_is_truncated_not_rejected() {
        let h = handle();
        let long = vec!["w ".repeat(500)];
        assert!(h.score(&long).is_ok());
        assert_eq!(h.truncation_count(), 1);
    }

    #[test]
    fn memory_budget_reports_oom() {
        let mut h = handle();
        let one = h.encoder.config.activation_bytes(1, 3);
        h.set_memory_budget(Some(one * 4));
        let s = |n: usize| vec!["x y".to_string(); n];
        assert!(h.score(&s(4)).is_ok());
        assert!(matches!(h.score(&s(5)), Err(Error::OutOfMemory { batch_size: 5 })));
    }

    #[test]
    fn seen_counts_cap() {
        assert_eq!(seen_counts(&[1, 7, 7, 8, 7, 7, 7], 4), vec![0, 0, 1, 0, 2, 3, 3]);
        assert_eq!(seen_counts(&[7, 7], 0), vec![0, 0]);
    }

    #[test]
    fn pretrained_backends_fail_with_cause() {
        let err = ModelHandle::init("mdeberta-v3-base", 0, 256).unwrap_err();
        assert!(err.to_string().contains("microsoft/mdeberta-v3-base"), "{err}");
        assert!(ModelHandle::init("nope", 0, 256).is_err());
    }
}
