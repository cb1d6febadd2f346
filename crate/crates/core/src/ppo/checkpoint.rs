use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::buffer::ReplayBuffer;
use super::optim::AdamW;
use super::trainer::{Trainer, TrainerConfig};
use crate::error::{Error, Result};
use crate::policy::{PolicyParams, ReferencePolicy, ValueParams};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Exact position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// `u128` as decimal text; JSON numbers cannot hold it.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Mismatch(format!("bad rng word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything needed to resume training bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub vocab_size: usize,
    pub clock: u64,
    pub updates: u64,
    pub trainer_config: TrainerConfig,
    pub policy: PolicyParams,
    pub reference: ReferencePolicy,
    pub value: ValueParams,
    pub actor_opt: AdamW,
    pub value_opt: AdamW,
    pub buffer: ReplayBuffer,
    pub rng: RngState,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

impl Checkpoint {
    pub fn capture(trainer: &Trainer, config_hash: &str) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            vocab_size: trainer.policy.dims.vocab,
            clock: trainer.clock,
            updates: trainer.updates,
            trainer_config: trainer.config.clone(),
            policy: trainer.policy.clone(),
            reference: trainer.reference.clone(),
            value: trainer.value.clone(),
            actor_opt: trainer.actor_opt.clone(),
            value_opt: trainer.value_opt.clone(),
            buffer: trainer.buffer.clone(),
            rng: RngState::capture(&trainer.rng),
        }
    }

    /// Hash of the trainable parameters only.
    pub fn content_hash(&self) -> String {
        let body = serde_json::to_vec(&(&self.policy, &self.value)).expect("parameters serialize");
        sha256_hex(&body)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fail = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let raw: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| fail(format!("not valid JSON: {e}")))?;
        match raw.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => {
                return Err(fail(format!(
                    "version {v} is not supported (expected {CHECKPOINT_VERSION})"
                )))
            }
            None => return Err(fail("missing version field".into())),
        }
        let ck: Checkpoint =
            serde_json::from_value(raw).map_err(|e| fail(format!("malformed contents: {e}")))?;
        if ck.policy.dims.vocab != ck.vocab_size {
            return Err(fail(format!(
                "policy vocabulary {} disagrees with recorded size {}",
                ck.policy.dims.vocab, ck.vocab_size
            )));
        }
        Ok(ck)
    }

    /// Rebuilds a trainer, checking the vocabulary against the caller's.
    pub fn into_trainer(self, expected_vocab: usize) -> Result<Trainer> {
        if self.vocab_size != expected_vocab {
            return Err(Error::Mismatch(format!(
                "checkpoint vocabulary size {} does not match {expected_vocab}",
                self.vocab_size
            )));
        }
        Ok(Trainer {
            rng: self.rng.restore()?,
            config: self.trainer_config,
            policy: self.policy,
            reference: self.reference,
            value: self.value,
            actor_opt: self.actor_opt,
            value_opt: self.value_opt,
            buffer: self.buffer,
            clock: self.clock,
            updates: self.updates,
        })
    }
}
