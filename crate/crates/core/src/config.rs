//! Run configuration: defaults, `key = value` files and a stable digest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::concept::{SynthesisConfig, WordMode};
use crate::formats::{self, FormatError, Provenance};
use crate::mapping::{Activation, TrainConfig};
use crate::scenario::CompositionMode;
use crate::svm::SvmParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub concept_count: usize,
    pub dim: usize,
    pub word_mode: WordMode,
    pub word_noise: f64,
    pub mode: CompositionMode,
    pub learning_rate: f64,
    pub epochs: usize,
    pub init_scale: f64,
    pub activation: Activation,
    pub svm_gamma: Option<f64>,
    pub svm_c: f64,
    pub svm_tolerance: f64,
    pub svm_max_iter: usize,
    pub folds: usize,
    /// External feature tables; when both are set `gen` ingests instead of
    /// synthesizing.
    pub visual_input: Option<PathBuf>,
    pub word_input: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthesisConfig::default();
        let train = TrainConfig::default();
        let svm = SvmParams::default();
        Self {
            seed: 0,
            concept_count: synth.concept_count,
            dim: synth.dim,
            word_mode: synth.word_mode,
            word_noise: synth.word_noise,
            mode: CompositionMode::default(),
            learning_rate: train.learning_rate,
            epochs: train.epochs,
            init_scale: train.init_scale,
            activation: train.activation,
            svm_gamma: svm.gamma,
            svm_c: svm.c,
            svm_tolerance: svm.tolerance,
            svm_max_iter: svm.max_iter,
            folds: 5,
            visual_input: None,
            word_input: None,
            out: PathBuf::from("out"),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("bad value {value:?} for {key}"))
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "concept_count" => self.concept_count = parse_value(key, value)?,
            "dim" => self.dim = parse_value(key, value)?,
            "word_mode" => self.word_mode = value.parse().map_err(|_| format!("bad word_mode {value:?}"))?,
            "word_noise" => self.word_noise = parse_value(key, value)?,
            "mode" => self.mode = value.parse().map_err(|_| format!("bad mode {value:?}"))?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "init_scale" => self.init_scale = parse_value(key, value)?,
            "activation" => self.activation = value.parse().map_err(|_| format!("bad activation {value:?}"))?,
            "svm_gamma" => {
                self.svm_gamma = match value {
                    "auto" | "" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "svm_c" => self.svm_c = parse_value(key, value)?,
            "svm_tolerance" => self.svm_tolerance = parse_value(key, value)?,
            "svm_max_iter" => self.svm_max_iter = parse_value(key, value)?,
            "folds" => self.folds = parse_value(key, value)?,
            "visual_input" => self.visual_input = optional_path(value),
            "word_input" => self.word_input = optional_path(value),
            "out" => self.out = PathBuf::from(value),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Overlays the settings in `text` on `self`. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_str(&mut self, path: &Path, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| ConfigError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value".to_string()))?;
            self.set(k.trim(), v.trim()).map_err(err)?;
        }
        Ok(())
    }

    /// Defaults overlaid with the file at `path`.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_str(path, &formats::read_text(path)?)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.synthesis()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train(0)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.folds < 2 {
            return Err(ConfigError::Invalid("folds must be at least 2".into()));
        }
        if !(self.svm_c > 0.0 && self.svm_c.is_finite()) {
            return Err(ConfigError::Invalid("svm_c must be positive".into()));
        }
        if !(self.svm_tolerance > 0.0 && self.svm_tolerance.is_finite()) {
            return Err(ConfigError::Invalid("svm_tolerance must be positive".into()));
        }
        if self.svm_gamma.is_some_and(|g| !(g > 0.0 && g.is_finite())) {
            return Err(ConfigError::Invalid("svm_gamma must be positive".into()));
        }
        if self.svm_max_iter == 0 {
            return Err(ConfigError::Invalid("svm_max_iter must be positive".into()));
        }
        if self.visual_input.is_some() != self.word_input.is_some() {
            return Err(ConfigError::Invalid(
                "visual_input and word_input must be given together".into(),
            ));
        }
        Ok(())
    }

    pub fn synthesis(&self) -> SynthesisConfig {
        SynthesisConfig {
            concept_count: self.concept_count,
            dim: self.dim,
            word_mode: self.word_mode,
            word_noise: self.word_noise,
            seed: self.seed,
        }
    }

    pub fn train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed,
            init_scale: self.init_scale,
            activation: self.activation,
        }
    }

    pub fn svm(&self) -> SvmParams {
        SvmParams {
            gamma: self.svm_gamma,
            c: self.svm_c,
            tolerance: self.svm_tolerance,
            max_iter: self.svm_max_iter,
        }
    }

    pub fn ingesting(&self) -> bool {
        self.visual_input.is_some() && self.word_input.is_some()
    }

    /// Keys that affect results, in a fixed order.
    fn semantic_lines(&self) -> String {
        let mut s = String::new();
        let gamma = self.svm_gamma.map_or("auto".to_string(), |g| g.to_string());
        let _ = write!(
            s,
            "seed = {}\nconcept_count = {}\ndim = {}\nword_mode = {}\nword_noise = {}\nmode = {}\n\
             learning_rate = {}\nepochs = {}\ninit_scale = {}\nactivation = {}\n\
             svm_gamma = {gamma}\nsvm_c = {}\nsvm_tolerance = {}\nsvm_max_iter = {}\nfolds = {}\n",
            self.seed,
            self.concept_count,
            self.dim,
            self.word_mode.as_str(),
            self.word_noise,
            self.mode.as_str(),
            self.learning_rate,
            self.epochs,
            self.init_scale,
            self.activation.as_str(),
            self.svm_c,
            self.svm_tolerance,
            self.svm_max_iter,
            self.folds,
        );
        s
    }

    /// SHA-256 over the result-affecting keys (paths excluded), hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.semantic_lines().as_bytes());
        h.update(if self.ingesting() { "source = ingest\n" } else { "source = synthetic\n" });
        h.finalize().iter().fold(String::with_capacity(64), |mut acc, b| {
            let _ = write!(acc, "{b:02x}");
            acc
        })
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            digest: self.digest(),
            seed: self.seed,
        }
    }

    /// Full serialization; `from_file` on the result reproduces `self`.
    pub fn to_conf_string(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        format!(
            "{}visual_input = {}\nword_input = {}\nout = {}\n",
            self.semantic_lines(),
            path(&self.visual_input),
            path(&self.word_input),
            self.out.display()
        )
    }
}
