//! Training and model configuration, read from `key = value` files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::AdamConfig;

/// Neighborhood normalization `z_v^r` in the graph encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// `z = 1`.
    Constant,
    /// `z = |N_r(v)|`.
    Degree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub embed_dim: usize,
    pub rgcn_layers: usize,
    pub norm_mode: NormMode,
    pub gamma: f64,
    pub damping_normalize: bool,
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub pretrain_epochs: usize,
    pub joint_epochs: usize,
    pub batch_pretrain: usize,
    pub batch_joint: usize,
    pub neg_samples: usize,
    pub seed: u64,
    pub finetune_encoders: bool,
    pub token_buckets: usize,
    pub patience: usize,
    pub top_k: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            embed_dim: 128,
            rgcn_layers: 1,
            norm_mode: NormMode::Constant,
            gamma: 0.95,
            damping_normalize: true,
            lambda: 0.3,
            lr: 0.001,
            weight_decay: 0.01,
            pretrain_epochs: 10,
            joint_epochs: 30,
            batch_pretrain: 10,
            batch_joint: 30,
            neg_samples: 4,
            seed: 0,
            finetune_encoders: false,
            token_buckets: 50_021,
            patience: 3,
            top_k: 10,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize, source: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        path: source.to_string(),
        line,
        msg: format!("invalid value `{value}` for `{key}`"),
    })
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut c = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: source.to_string(),
                line: lineno,
                msg: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "embed_dim" => c.embed_dim = parse_value(key, value, lineno, source)?,
                "rgcn_layers" => c.rgcn_layers = parse_value(key, value, lineno, source)?,
                "norm_mode" => {
                    c.norm_mode = match value {
                        "constant" | "1" => NormMode::Constant,
                        "degree" => NormMode::Degree,
                        _ => {
                            return Err(Error::Parse {
                                path: source.to_string(),
                                line: lineno,
                                msg: format!("norm_mode must be `constant` or `degree`, got `{value}`"),
                            })
                        }
                    }
                }
                "gamma" => c.gamma = parse_value(key, value, lineno, source)?,
                "damping_normalize" => c.damping_normalize = parse_value(key, value, lineno, source)?,
                "lambda" => c.lambda = parse_value(key, value, lineno, source)?,
                "lr" => c.lr = parse_value(key, value, lineno, source)?,
                "weight_decay" => c.weight_decay = parse_value(key, value, lineno, source)?,
                "pretrain_epochs" => c.pretrain_epochs = parse_value(key, value, lineno, source)?,
                "joint_epochs" => c.joint_epochs = parse_value(key, value, lineno, source)?,
                "batch_pretrain" => c.batch_pretrain = parse_value(key, value, lineno, source)?,
                "batch_joint" => c.batch_joint = parse_value(key, value, lineno, source)?,
                "neg_samples" => c.neg_samples = parse_value(key, value, lineno, source)?,
                "seed" => c.seed = parse_value(key, value, lineno, source)?,
                "finetune_encoders" => c.finetune_encoders = parse_value(key, value, lineno, source)?,
                "token_buckets" => c.token_buckets = parse_value(key, value, lineno, source)?,
                "patience" => c.patience = parse_value(key, value, lineno, source)?,
                "top_k" => c.top_k = parse_value(key, value, lineno, source)?,
                _ => {
                    return Err(Error::Parse {
                        path: source.to_string(),
                        line: lineno,
                        msg: format!("unknown key `{key}`"),
                    })
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if self.batch_pretrain == 0 || self.batch_joint == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.token_buckets == 0 {
            return Err(Error::Config("token_buckets must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reported_settings() {
        let c = Config::default();
        assert_eq!(c.embed_dim, 128);
        assert_eq!(c.rgcn_layers, 1);
        assert_eq!(c.norm_mode, NormMode::Constant);
        assert_eq!(c.gamma, 0.95);
        assert_eq!(c.lr, 0.001);
        assert_eq!(c.weight_decay, 0.01);
        assert_eq!((c.batch_pretrain, c.batch_joint), (10, 30));
        assert_eq!(c.neg_samples, 4);
    }

    #[test]
    fn parses_overrides_and_comments() {
        let c = Config::parse("# test\nembed_dim = 16\nfinetune_encoders = true\nnorm_mode = degree # trailing\n", "c").unwrap();
        assert_eq!(c.embed_dim, 16);
        assert!(c.finetune_encoders);
        assert_eq!(c.norm_mode, NormMode::Degree);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Config::parse("colour = red", "c").unwrap_err().to_string().contains("unknown key"));
        assert!(Config::parse("gamma = 1.5", "c").is_err());
        assert!(Config::parse("lr = fast", "c").unwrap_err().to_string().contains("c:1"));
    }
}
