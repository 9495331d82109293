//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; missing keys keep their defaults. Paths with an empty value are
//! unset. `level_modes` is a comma-separated list of `ie`, `cls_single`,
//! `cls_multi`; `max_depth = 0` means no cap beyond the schema depth.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::engine::{ExtractConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::model::optim::OptimConfig;
use crate::model::ModelConfig;
use crate::query::QueryConfig;
use crate::schema::Mode;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub max_len: usize,
    pub max_prompt_len: usize,
    pub delta_ie: f64,
    pub delta_cls: f64,
    pub hidden: usize,
    pub head_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub final_norm: bool,
    pub rotary: bool,
    pub isolation: bool,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub grad_clip: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_std: f64,
    pub eval_every: usize,
    pub stop_when_perfect: bool,
    pub level_modes: Vec<Mode>,
    pub max_depth: usize,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub schema: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        let optim = OptimConfig::default();
        Self {
            max_len: 512,
            max_prompt_len: 256,
            delta_ie: 0.0,
            delta_cls: 0.9,
            hidden: 64,
            head_dim: 64,
            layers: 2,
            heads: 4,
            ffn: 256,
            final_norm: true,
            rotary: true,
            isolation: true,
            learning_rate: optim.learning_rate,
            weight_decay: optim.weight_decay,
            warmup_ratio: optim.warmup_ratio,
            grad_clip: optim.grad_clip,
            epochs: 10,
            batch_size: 8,
            seed: 42,
            init_std: 0.02,
            eval_every: 1,
            stop_when_perfect: false,
            level_modes: vec![Mode::Extract],
            max_depth: 0,
            jobs: 0,
            schema: None,
            data: None,
            vocab: None,
            checkpoint: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl Config {
    pub const KEYS: [&'static str; 29] = [
        "max_len",
        "max_prompt_len",
        "delta_ie",
        "delta_cls",
        "hidden",
        "head_dim",
        "layers",
        "heads",
        "ffn",
        "final_norm",
        "rotary",
        "isolation",
        "learning_rate",
        "weight_decay",
        "warmup_ratio",
        "grad_clip",
        "epochs",
        "batch_size",
        "seed",
        "init_std",
        "eval_every",
        "stop_when_perfect",
        "level_modes",
        "max_depth",
        "jobs",
        "schema",
        "data",
        "vocab",
        "checkpoint",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "max_len" => self.max_len = parse(key, v)?,
            "max_prompt_len" => self.max_prompt_len = parse(key, v)?,
            "delta_ie" => self.delta_ie = parse(key, v)?,
            "delta_cls" => self.delta_cls = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "head_dim" => self.head_dim = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "ffn" => self.ffn = parse(key, v)?,
            "final_norm" => self.final_norm = parse(key, v)?,
            "rotary" => self.rotary = parse(key, v)?,
            "isolation" => self.isolation = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "warmup_ratio" => self.warmup_ratio = parse(key, v)?,
            "grad_clip" => self.grad_clip = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "init_std" => self.init_std = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "stop_when_perfect" => self.stop_when_perfect = parse(key, v)?,
            "level_modes" => {
                self.level_modes = v
                    .split(',')
                    .map(|m| m.trim().parse::<Mode>())
                    .collect::<Result<_>>()
                    .map_err(|e| Error::InvalidConfig(format!("level_modes: {e}")))?
            }
            "max_depth" => self.max_depth = parse(key, v)?,
            "jobs" => self.jobs = parse(key, v)?,
            "schema" => self.schema = path(v),
            "data" => self.data = path(v),
            "vocab" => self.vocab = path(v),
            "checkpoint" => self.checkpoint = path(v),
            other => return Err(Error::InvalidConfig(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "max_len" => self.max_len.to_string(),
            "max_prompt_len" => self.max_prompt_len.to_string(),
            "delta_ie" => self.delta_ie.to_string(),
            "delta_cls" => self.delta_cls.to_string(),
            "hidden" => self.hidden.to_string(),
            "head_dim" => self.head_dim.to_string(),
            "layers" => self.layers.to_string(),
            "heads" => self.heads.to_string(),
            "ffn" => self.ffn.to_string(),
            "final_norm" => self.final_norm.to_string(),
            "rotary" => self.rotary.to_string(),
            "isolation" => self.isolation.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "warmup_ratio" => self.warmup_ratio.to_string(),
            "grad_clip" => self.grad_clip.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "seed" => self.seed.to_string(),
            "init_std" => self.init_std.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "stop_when_perfect" => self.stop_when_perfect.to_string(),
            "level_modes" => self.level_modes.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","),
            "max_depth" => self.max_depth.to_string(),
            "jobs" => self.jobs.to_string(),
            "schema" => show(&self.schema),
            "data" => show(&self.data),
            "vocab" => show(&self.vocab),
            "checkpoint" => show(&self.checkpoint),
            _ => return None,
        })
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut config = Config::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            config.set(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.max_prompt_len >= self.max_len {
            return bad("max_prompt_len must be below max_len");
        }
        if !(self.delta_cls > 0.0 && self.delta_cls < 1.0) {
            return bad("delta_cls must lie in (0, 1)");
        }
        if [self.hidden, self.head_dim, self.heads, self.ffn, self.max_len, self.batch_size].contains(&0) {
            return bad("dimensions and batch_size must be positive");
        }
        if self.level_modes.is_empty() {
            return bad("level_modes must not be empty");
        }
        if !self.delta_ie.is_finite() || self.learning_rate < 0.0 || self.init_std < 0.0 {
            return bad("delta_ie must be finite, learning_rate and init_std non-negative");
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            hidden: self.hidden,
            heads: self.heads,
            layers: self.layers,
            ffn: self.ffn,
            head_dim: self.head_dim,
            max_len: self.max_len,
            final_norm: self.final_norm,
            rotary: self.rotary,
        }
    }

    pub fn query_config(&self) -> QueryConfig {
        QueryConfig {
            max_len: self.max_len,
            max_prompt_len: self.max_prompt_len,
            isolation: self.isolation,
        }
    }

    pub fn extract_config(&self) -> ExtractConfig {
        ExtractConfig {
            query: self.query_config(),
            delta_ie: self.delta_ie,
            delta_cls: self.delta_cls,
            max_depth: (self.max_depth > 0).then_some(self.max_depth),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            optim: OptimConfig {
                learning_rate: self.learning_rate,
                weight_decay: self.weight_decay,
                warmup_ratio: self.warmup_ratio,
                grad_clip: self.grad_clip,
                ..OptimConfig::default()
            },
            eval_every: self.eval_every,
            stop_when_perfect: self.stop_when_perfect,
        }
    }
}
