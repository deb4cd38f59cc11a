//! Run configuration: a JSON document in which every field is optional.
//!
//! Unknown keys are rejected at every level. Command-line overrides use
//! dotted paths (`sac.alpha=0.1`) and are applied to the JSON tree before
//! it is deserialised, so they go through the same validation.

use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encoder::{ContextMode, EncoderConfig, TargetEncoding, DEFAULT_CONTEXT_DIM, DEFAULT_SEGMENT_LEN};
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::optim::DEFAULT_LR;
use crate::replay::DEFAULT_CAPACITY;
use crate::sac::SacConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSettings {
    /// 0 disables the encoder entirely (plain SAC).
    pub context_dim: usize,
    pub embed_width: usize,
    pub lstm_hidden: usize,
    pub mode: ContextMode,
    pub target: TargetEncoding,
    pub segment_len: usize,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub lr: f64,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        EncoderSettings {
            context_dim: DEFAULT_CONTEXT_DIM,
            embed_width: 128,
            lstm_hidden: 128,
            mode: ContextMode::Deterministic,
            target: TargetEncoding::Transition,
            segment_len: DEFAULT_SEGMENT_LEN,
            batch: 128,
            beta1: 0.0,
            beta2: 0.2,
            lr: DEFAULT_LR,
        }
    }
}

impl EncoderSettings {
    pub fn enabled(&self) -> bool {
        self.context_dim > 0
    }

    pub fn encoder_config(&self, state_dim: usize, action_dim: usize) -> EncoderConfig {
        EncoderConfig {
            state_dim,
            action_dim,
            context_dim: self.context_dim,
            embed_width: self.embed_width,
            lstm_hidden: self.lstm_hidden,
            mode: self.mode,
            target: self.target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub warmup: u64,
    /// RL trigger period `N_rl`.
    pub rl_every: u64,
    /// Gradient steps per RL trigger; `null` means `rl_every`.
    pub rl_updates: Option<u64>,
    /// Encoder trigger period `N_c`; `null` never trains the encoder.
    pub encoder_every: Option<u64>,
    pub encoder_updates: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seed: u64,
    pub replay_capacity: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 200_000,
            warmup: 2000,
            rl_every: 50,
            rl_updates: None,
            encoder_every: Some(500),
            encoder_updates: 50,
            eval_every: 10_000,
            eval_episodes: 10,
            seed: 0,
            replay_capacity: DEFAULT_CAPACITY,
        }
    }
}

impl TrainConfig {
    pub fn updates_per_trigger(&self) -> u64 {
        self.rl_updates.unwrap_or(self.rl_every)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub sac: SacConfig,
    pub encoder: EncoderSettings,
    pub train: TrainConfig,
    pub out_dir: Option<String>,
}

/// Single-word override keys and the dotted path they stand for.
const ALIASES: &[(&str, &str)] = &[
    ("seed", "train.seed"),
    ("steps", "train.total_steps"),
    ("env", "env.name"),
];

fn config_err(e: serde_json::Error) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(config_err)
    }

    /// Parses `text` (empty means all defaults), applies `key=value`
    /// overrides in order and validates the result.
    pub fn load(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut tree: Value = if text.trim().is_empty() {
            Value::Object(Default::default())
        } else {
            serde_json::from_str(text).map_err(config_err)?
        };
        for (k, v) in overrides {
            apply_override(&mut tree, k, v)?;
        }
        let cfg: RunConfig = serde_json::from_value(tree).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Stable hash of the serialised config.
    pub fn hash_hex(&self) -> String {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        serde_json::to_string(self).expect("config serialises").hash(&mut h);
        format!("{:016x}", h.finish())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.sac.validate()?;
        self.env.build()?;
        let t = &self.train;
        if t.total_steps < t.warmup {
            return bad(format!(
                "train.total_steps ({}) must be at least train.warmup ({})",
                t.total_steps, t.warmup
            ));
        }
        if t.rl_every == 0 {
            return bad("train.rl_every must be at least 1".into());
        }
        if t.encoder_every == Some(0) {
            return bad("train.encoder_every must be at least 1".into());
        }
        if let Some(nc) = t.encoder_every {
            if self.encoder.enabled() && nc <= t.rl_every {
                return bad(format!(
                    "train.encoder_every ({nc}) must exceed train.rl_every ({})",
                    t.rl_every
                ));
            }
        }
        if t.eval_every == 0 || t.eval_episodes == 0 {
            return bad("train.eval_every and train.eval_episodes must be at least 1".into());
        }
        if t.replay_capacity == 0 {
            return bad("train.replay_capacity must be at least 1".into());
        }
        let e = &self.encoder;
        if e.enabled() {
            if e.segment_len < 2 {
                return bad("encoder.segment_len must be at least 2".into());
            }
            if e.batch < 2 {
                return bad("encoder.batch must be at least 2".into());
            }
            if e.embed_width == 0 || e.lstm_hidden == 0 {
                return bad("encoder widths must be at least 1".into());
            }
            if !(e.beta1 >= 0.0 && e.beta2 >= 0.0) {
                return bad("encoder.beta1 and encoder.beta2 must be non-negative".into());
            }
            if !(e.lr > 0.0 && e.lr.is_finite()) {
                return bad("encoder.lr must be positive".into());
            }
        }
        Ok(())
    }
}

/// Sets `path` (dotted) in `tree` to `raw`, parsed as JSON when possible
/// and as a string otherwise.
pub fn apply_override(tree: &mut Value, path: &str, raw: &str) -> Result<()> {
    let path = ALIASES
        .iter()
        .find(|(alias, _)| *alias == path)
        .map_or(path, |(_, full)| full);
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = tree;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(Error::Config(format!("malformed override key {path:?}")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {path:?} descends into a non-object")))?;
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config("empty override key".into()))
}
