//! Flat `key = value` configuration text and the training configuration it
//! fills.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}`: {message}")]
    Value {
        key: String,
        value: String,
        message: String,
    },
}

/// Parse `key = value` lines. `#` starts a comment; blank lines are
/// ignored; keys are `[A-Za-z0-9_.-]+`; repeated keys are an error.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |m: &str| ConfigError::Syntax {
            line: i + 1,
            message: m.to_string(),
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| syntax("expected `key = value`"))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty()
            || !k
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c))
        {
            return Err(syntax("invalid key"));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(syntax(&format!("duplicate key `{k}`")));
        }
    }
    Ok(out)
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        message: e.to_string(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Decoder,
    Synthetic,
    Real,
}

impl Stage {
    pub fn index(self) -> u32 {
        match self {
            Stage::Decoder => 1,
            Stage::Synthetic => 2,
            Stage::Real => 3,
        }
    }

    pub fn default_lr(self) -> f64 {
        match self {
            Stage::Real => 1e-4,
            _ => 1e-3,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Decoder => "decoder",
            Stage::Synthetic => "synthetic",
            Stage::Real => "real",
        })
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "decoder" | "1" => Ok(Stage::Decoder),
            "synthetic" | "2" => Ok(Stage::Synthetic),
            "real" | "3" => Ok(Stage::Real),
            _ => Err("expected decoder, synthetic or real".into()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub rec: f64,
    pub lat: f64,
    pub nf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 1.0,
            lat: 1.0,
            nf: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lr: f64,
    pub lr_floor: f64,
    pub weights: LossWeights,
    /// Encoder and flow only, trained with the latent and flow terms.
    pub decoder_free: bool,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub plateau_factor: f64,
    pub early_stop_window: usize,
    pub improvement_threshold: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(stage: Stage) -> Self {
        Self {
            stage,
            lr: stage.default_lr(),
            lr_floor: 1e-6,
            weights: LossWeights::default(),
            decoder_free: false,
            batch_size: 64,
            max_epochs: 400,
            patience: 10,
            plateau_factor: 0.5,
            early_stop_window: 30,
            improvement_threshold: 1e-4,
            weight_decay: 1e-2,
            seed: 0,
        }
    }

    /// Effective loss weights: the decoder-free mode drops reconstruction.
    pub fn effective_weights(&self) -> LossWeights {
        if self.decoder_free {
            LossWeights {
                rec: 0.0,
                ..self.weights
            }
        } else {
            self.weights
        }
    }

    /// Set one key. Returns `Ok(false)` for keys this struct does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        match key {
            "stage" => {
                self.stage = parse_value(key, value)?;
                self.lr = self.stage.default_lr();
            }
            "lr" => self.lr = parse_value(key, value)?,
            "lr_floor" => self.lr_floor = parse_value(key, value)?,
            "w_rec" => self.weights.rec = parse_value(key, value)?,
            "w_lat" => self.weights.lat = parse_value(key, value)?,
            "w_nf" => self.weights.nf = parse_value(key, value)?,
            "decoder_free" => self.decoder_free = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "plateau_factor" => self.plateau_factor = parse_value(key, value)?,
            "early_stop_window" => self.early_stop_window = parse_value(key, value)?,
            "improvement_threshold" => self.improvement_threshold = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Apply every entry; `stage` is applied first so an explicit `lr`
    /// overrides the stage default.
    pub fn apply(&mut self, kv: &BTreeMap<String, String>) -> Result<(), ConfigError> {
        if let Some(s) = kv.get("stage") {
            self.set("stage", s)?;
        }
        for (k, v) in kv.iter().filter(|(k, _)| k.as_str() != "stage") {
            if !self.set(k, v)? {
                return Err(ConfigError::UnknownKey(k.clone()));
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, value: String, message: &str| {
            Err(ConfigError::Value {
                key: key.into(),
                value,
                message: message.into(),
            })
        };
        let w = self.weights;
        if [w.rec, w.lat, w.nf]
            .iter()
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return bad(
                "weights",
                format!("{w:?}"),
                "loss weights must be finite and >= 0",
            );
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "0".into(), "need at least one epoch");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "0".into(), "must be positive");
        }
        if !(self.lr >= 0.0) || !(self.lr_floor >= 0.0) {
            return bad("lr", self.lr.to_string(), "learning rates must be >= 0");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(
                "plateau_factor",
                self.plateau_factor.to_string(),
                "must lie in (0, 1)",
            );
        }
        Ok(())
    }

    /// `key = value` rendering of the effective configuration.
    pub fn to_kv(&self) -> String {
        let w = self.weights;
        format!(
            "stage = {}\nlr = {}\nlr_floor = {}\nw_rec = {}\nw_lat = {}\nw_nf = {}\ndecoder_free = {}\n\
             batch_size = {}\nmax_epochs = {}\npatience = {}\nplateau_factor = {}\nearly_stop_window = {}\n\
             improvement_threshold = {}\nweight_decay = {}\nseed = {}\n",
            self.stage,
            self.lr,
            self.lr_floor,
            w.rec,
            w.lat,
            w.nf,
            self.decoder_free,
            self.batch_size,
            self.max_epochs,
            self.patience,
            self.plateau_factor,
            self.early_stop_window,
            self.improvement_threshold,
            self.weight_decay,
            self.seed
        )
    }
}
