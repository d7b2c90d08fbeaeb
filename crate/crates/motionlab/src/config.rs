//! Run configuration: the hyperparameters of the pipeline and the ablation
//! flags, parsed from a flat `key = value` text format.
//!
//! Defaults follow the reference training recipe: hidden size 512, dropout
//! 0.25, learning rate 0.001 decayed by 0.9 every 10,000 steps, 30 epochs
//! at batch size 32, loss weights beta = 0.2 and lambda = 0.01, and past
//! windows of 9, 27, or 54 frames with a 20-frame future horizon.
//!
//! Unknown keys are hard errors so a typo in an experiment file cannot
//! silently fall back to a default.

use crate::metrics::MaeMode;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("CONFIG_PARSE: line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("CONFIG_PARSE: line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("CONFIG_INVALID: {0}")]
    Invalid(String),
    #[error("CONFIG_IO: {0}")]
    Io(#[from] std::io::Error),
}

/// Which refinement path the Global Refinement module uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrMode {
    /// GRU-R path only.
    Gru,
    /// ConvED path only.
    Conved,
    /// Fixed 50/50 blend of the two paths.
    BlendFixed,
    /// Learned sigmoid weighting vector (the full module).
    BlendAdaptive,
}

impl fmt::Display for GrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GrMode::Gru => "gru",
            GrMode::Conved => "conved",
            GrMode::BlendFixed => "blend_fixed",
            GrMode::BlendAdaptive => "blend_adaptive",
        };
        f.write_str(s)
    }
}

impl FromStr for GrMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gru" => Ok(GrMode::Gru),
            "conved" => Ok(GrMode::Conved),
            "blend_fixed" => Ok(GrMode::BlendFixed),
            "blend_adaptive" => Ok(GrMode::BlendAdaptive),
            other => Err(format!(
                "unknown gr_mode '{other}' (expected gru, conved, blend_fixed, blend_adaptive)"
            )),
        }
    }
}

/// Full run configuration. Field names double as the config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// Observed past window length T; one of 9, 27, 54.
    pub past_frames: usize,
    /// Future prediction horizon K used during training.
    pub future_frames: usize,
    /// Hidden state size of every recurrent model.
    pub hidden: usize,
    /// Stacked recurrent layers in the encoder/decoder.
    pub layers: usize,
    /// Dropout rate after nonlinearities.
    pub dropout: f64,
    /// Initial learning rate.
    pub lr: f64,
    /// Steps between learning-rate decays (0 disables decay).
    pub decay_every: usize,
    /// Multiplicative decay factor.
    pub decay_factor: f64,
    /// SGD momentum.
    pub momentum: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Weight of the refinement loss.
    pub beta: f64,
    /// Weight of the self-projection consistency regularizer.
    pub lambda: f64,
    /// Global gradient-norm clip threshold (0 disables clipping).
    pub clip_norm: f64,
    pub seed: u64,
    /// Window tiling stride over trajectories.
    pub stride: usize,
    /// Fraction of trajectories assigned to the training split.
    pub train_ratio: f64,
    /// Training batches per epoch; 0 covers every training window once.
    pub batches_per_epoch: usize,
    /// Drop Lie-representation supervision from the sequence losses.
    pub no_lie: bool,
    /// Train the lifting network alone, without the motion generator.
    pub no_mgn: bool,
    /// Disable the global refinement module.
    pub no_gr: bool,
    pub gr_mode: GrMode,
    pub mae_mode: MaeMode,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            past_frames: 27,
            future_frames: 20,
            hidden: 512,
            layers: 2,
            dropout: 0.25,
            lr: 0.001,
            decay_every: 10_000,
            decay_factor: 0.9,
            momentum: 0.0,
            epochs: 30,
            batch: 32,
            beta: 0.2,
            lambda: 0.01,
            clip_norm: 5.0,
            seed: 42,
            stride: 10,
            train_ratio: 0.8,
            batches_per_epoch: 0,
            no_lie: false,
            no_mgn: false,
            no_gr: false,
            gr_mode: GrMode::BlendAdaptive,
            mae_mode: MaeMode::Omega,
        }
    }
}

impl Config {
    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment; blank lines are ignored; unknown keys are errors.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut config = Config::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Parse {
                    line,
                    detail: format!("expected 'key = value', got '{content}'"),
                });
            };
            config.set(key.trim(), value.trim(), line)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    /// Applies one key/value pair; used by both the file parser and CLI
    /// `--set key=value` overrides.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value.parse().map_err(|e| ConfigError::Parse {
                line,
                detail: format!("bad value for '{key}': {e}"),
            })
        }

        match key {
            "past_frames" => self.past_frames = parse(key, value, line)?,
            "future_frames" => self.future_frames = parse(key, value, line)?,
            "hidden" => self.hidden = parse(key, value, line)?,
            "layers" => self.layers = parse(key, value, line)?,
            "dropout" => self.dropout = parse(key, value, line)?,
            "lr" => self.lr = parse(key, value, line)?,
            "decay_every" => self.decay_every = parse(key, value, line)?,
            "decay_factor" => self.decay_factor = parse(key, value, line)?,
            "momentum" => self.momentum = parse(key, value, line)?,
            "epochs" => self.epochs = parse(key, value, line)?,
            "batch" => self.batch = parse(key, value, line)?,
            "beta" => self.beta = parse(key, value, line)?,
            "lambda" => self.lambda = parse(key, value, line)?,
            "clip_norm" => self.clip_norm = parse(key, value, line)?,
            "seed" => self.seed = parse(key, value, line)?,
            "stride" => self.stride = parse(key, value, line)?,
            "train_ratio" => self.train_ratio = parse(key, value, line)?,
            "batches_per_epoch" => self.batches_per_epoch = parse(key, value, line)?,
            "no_lie" => self.no_lie = parse(key, value, line)?,
            "no_mgn" => self.no_mgn = parse(key, value, line)?,
            "no_gr" => self.no_gr = parse(key, value, line)?,
            "gr_mode" => {
                self.gr_mode = value.parse().map_err(|e| ConfigError::Parse {
                    line,
                    detail: format!("{e}"),
                })?
            }
            "mae_mode" => {
                self.mae_mode = value.parse().map_err(|e: String| ConfigError::Parse {
                    line,
                    detail: e,
                })?
            }
            other => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: other.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if ![9, 27, 54].contains(&self.past_frames) {
            problems.push(format!("past_frames must be 9, 27, or 54, got {}", self.past_frames));
        }
        if self.future_frames == 0 {
            problems.push("future_frames must be >= 1".to_string());
        }
        if self.hidden == 0 || self.layers == 0 || self.batch == 0 || self.epochs == 0 {
            problems.push("hidden, layers, batch, epochs must all be >= 1".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.lr <= 0.0 {
            problems.push(format!("lr must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.train_ratio) && self.train_ratio != 1.0 {
            problems.push(format!("train_ratio must be in (0, 1], got {}", self.train_ratio));
        }
        if self.stride == 0 {
            problems.push("stride must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems.join("; ")))
        }
    }

    /// Differences on keys that determine the network architecture or the
    /// evaluation protocol, formatted as `key: self vs other`. Evaluation
    /// and prediction refuse to run when any are present.
    pub fn architecture_mismatches(&self, other: &Config) -> Vec<String> {
        let mut out = Vec::new();
        macro_rules! check {
            ($field:ident) => {
                if self.$field != other.$field {
                    out.push(format!(
                        "{}: {} vs {}",
                        stringify!($field),
                        self.$field,
                        other.$field
                    ));
                }
            };
        }
        check!(past_frames);
        check!(future_frames);
        check!(hidden);
        check!(layers);
        check!(no_lie);
        check!(no_mgn);
        check!(no_gr);
        check!(gr_mode);
        out
    }

    /// Renders the configuration back to the flat key = value format.
    pub fn to_key_values(&self) -> String {
        format!(
            "past_frames = {}\nfuture_frames = {}\nhidden = {}\nlayers = {}\n\
             dropout = {}\nlr = {}\ndecay_every = {}\ndecay_factor = {}\n\
             momentum = {}\nepochs = {}\nbatch = {}\nbeta = {}\nlambda = {}\n\
             clip_norm = {}\nseed = {}\nstride = {}\ntrain_ratio = {}\n\
             batches_per_epoch = {}\nno_lie = {}\nno_mgn = {}\nno_gr = {}\n\
             gr_mode = {}\nmae_mode = {}\n",
            self.past_frames,
            self.future_frames,
            self.hidden,
            self.layers,
            self.dropout,
            self.lr,
            self.decay_every,
            self.decay_factor,
            self.momentum,
            self.epochs,
            self.batch,
            self.beta,
            self.lambda,
            self.clip_norm,
            self.seed,
            self.stride,
            self.train_ratio,
            self.batches_per_epoch,
            self.no_lie,
            self.no_mgn,
            self.no_gr,
            self.gr_mode,
            self.mae_mode,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_recipe() {
        let c = Config::default();
        assert_eq!(c.past_frames, 27);
        assert_eq!(c.future_frames, 20);
        assert_eq!(c.hidden, 512);
        assert_eq!(c.layers, 2);
        assert_eq!(c.dropout, 0.25);
        assert_eq!(c.lr, 0.001);
        assert_eq!(c.decay_every, 10_000);
        assert_eq!(c.decay_factor, 0.9);
        assert_eq!(c.epochs, 30);
        assert_eq!(c.batch, 32);
        assert_eq!(c.beta, 0.2);
        assert_eq!(c.lambda, 0.01);
        assert_eq!(c.clip_norm, 5.0);
        assert_eq!(c.momentum, 0.0);
        assert_eq!(c.gr_mode, GrMode::BlendAdaptive);
        assert_eq!(c.mae_mode, MaeMode::Omega);
        assert!(!c.no_lie && !c.no_mgn && !c.no_gr);
    }

    #[test]
    fn parses_overrides_and_comments() {
        let text = "\
# toy preset
past_frames = 9
hidden = 64   # small model
no_gr = true
gr_mode = conved
mae_mode = euler
";
        let c = Config::parse_str(text).unwrap();
        assert_eq!(c.past_frames, 9);
        assert_eq!(c.hidden, 64);
        assert!(c.no_gr);
        assert_eq!(c.gr_mode, GrMode::Conved);
        assert_eq!(c.mae_mode, MaeMode::Euler);
        // Untouched keys keep defaults.
        assert_eq!(c.batch, 32);
    }

    #[test]
    fn unknown_key_is_a_hard_error() {
        let err = Config::parse_str("hiden = 64\n").unwrap_err();
        match err {
            ConfigError::UnknownKey { line, key } => {
                assert_eq!(line, 1);
                assert_eq!(key, "hiden");
            }
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn bad_values_are_rejected_with_line_numbers() {
        let err = Config::parse_str("\n\nbatch = many\n").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected Parse, got {other:?}"),
        }
        assert!(Config::parse_str("past_frames = 10\n").is_err());
        assert!(Config::parse_str("dropout = 1.0\n").is_err());
    }

    #[test]
    fn key_value_round_trip() {
        let mut c = Config::default();
        c.past_frames = 54;
        c.no_lie = true;
        c.gr_mode = GrMode::BlendFixed;
        c.lr = 0.0005;
        let back = Config::parse_str(&c.to_key_values()).unwrap();
        assert_eq!(back, c);
    }
}
