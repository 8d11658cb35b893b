use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config_parse_value as parse_value;
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    /// Smooth-L1 transition point.
    pub beta: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    /// Evaluations without a new best validation ADE before stopping.
    pub patience: usize,
    /// Shuffling seed; also the model initialization seed.
    pub seed: u64,
    /// Seed of the track-level train/val/test split.
    pub split_seed: u64,
    pub grad_clip: f64,
    pub stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr: 1e-4,
            beta: 1.0,
            batch_size: 64,
            max_steps: 2000,
            eval_every: 100,
            patience: 10,
            seed: 0,
            split_seed: 0,
            grad_clip: 5.0,
            stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0) || !(self.beta > 0.0) || !(self.grad_clip > 0.0) {
            return fail("lr, beta and grad_clip must be positive");
        }
        if self.batch_size == 0 || self.max_steps == 0 || self.eval_every == 0 || self.stride == 0 {
            return fail("batch_size, max_steps, eval_every and stride must be >= 1");
        }
        if self.patience == 0 {
            return fail("patience must be >= 1");
        }
        if self.model.seed != self.seed {
            return fail("model seed and training seed differ");
        }
        Ok(())
    }

    /// Applies one setting; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lr" => self.lr = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "max_steps" => self.max_steps = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "split_seed" => self.split_seed = parse_value(key, value)?,
            "grad_clip" => self.grad_clip = parse_value(key, value)?,
            "stride" => self.stride = parse_value(key, value)?,
            "seed" => {
                self.seed = parse_value(key, value)?;
                self.model.seed = self.seed;
            }
            _ => {
                if !self.model.set(key, value)? {
                    return Err(Error::Config(format!("unknown config key `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment, blank lines are
    /// skipped. Keys not present keep their defaults.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| err(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Canonical text form, one `key = value` per line in a fixed order.
    pub fn to_text(&self) -> String {
        self.to_pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Every setting as `(key, value)`, model keys first.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut pairs = self.model.to_pairs();
        pairs.extend([
            ("lr", format!("{:?}", self.lr)),
            ("beta", format!("{:?}", self.beta)),
            ("batch_size", self.batch_size.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("patience", self.patience.to_string()),
            ("split_seed", self.split_seed.to_string()),
            ("grad_clip", format!("{:?}", self.grad_clip)),
            ("stride", self.stride.to_string()),
        ]);
        pairs
    }
}
