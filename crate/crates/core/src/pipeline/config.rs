use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::corpus::{LabelSet, ParseOptions, DEFAULT_MAX_SPEAKERS, DEFAULT_SNIPPET_LEN};
use crate::emitter::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{GraphOptions, InterjectionLexicon, Lexicons, PronounLexicon};

/// Which part of the full model is switched off.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Independent per-token predictions trained with cross-entropy.
    NoGcrf,
    /// Graph refinement is skipped.
    NoRefine,
    /// No spine edges; the vertical transition matrix stays at zero.
    NoVertical,
}

impl Ablation {
    pub fn from_flags(no_gcrf: bool, no_refine: bool, no_vertical: bool) -> Result<Self> {
        match (no_gcrf, no_refine, no_vertical) {
            (false, false, false) => Ok(Ablation::Full),
            (true, false, false) => Ok(Ablation::NoGcrf),
            (false, true, false) => Ok(Ablation::NoRefine),
            (false, false, true) => Ok(Ablation::NoVertical),
            _ => Err(Error::Config(
                "no_gcrf, no_refine and no_vertical are mutually exclusive".into(),
            )),
        }
    }

    pub fn graph_options(self) -> GraphOptions {
        GraphOptions {
            refine: self != Ablation::NoRefine,
            vertical: self != Ablation::NoVertical,
        }
    }
}

/// Flat key/value run configuration, read from TOML. Relative paths are
/// resolved against the directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub pronouns: Option<PathBuf>,
    pub interjections: Option<PathBuf>,
    /// Checkpoint directory written by training.
    pub output: PathBuf,
    /// Training log; defaults to `train_log.jsonl` next to the checkpoint.
    pub log: Option<PathBuf>,

    pub snippet_len: usize,
    pub max_speakers: usize,
    pub min_freq: usize,

    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub head_hidden: usize,
    pub max_len: usize,
    pub residual_norm: bool,
    pub share_embeddings: bool,
    pub dropout: f64,

    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many epochs without a dev improvement.
    pub patience: Option<usize>,

    pub no_gcrf: bool,
    pub no_refine: bool,
    pub no_vertical: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let adam = AdamConfig::default();
        Self {
            train: PathBuf::new(),
            dev: None,
            test: None,
            labels: None,
            pronouns: None,
            interjections: None,
            output: PathBuf::from("checkpoint"),
            log: None,
            snippet_len: DEFAULT_SNIPPET_LEN,
            max_speakers: DEFAULT_MAX_SPEAKERS,
            min_freq: 1,
            d_model: model.d_model,
            heads: model.heads,
            layers: model.layers,
            ff_dim: model.ff_dim,
            head_hidden: model.head_hidden,
            max_len: model.max_len,
            residual_norm: model.residual_norm,
            share_embeddings: model.share_embeddings,
            dropout: model.dropout,
            learning_rate: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.eps,
            batch_size: 1,
            epochs: 30,
            seed: 0,
            patience: None,
            no_gcrf: false,
            no_refine: false,
            no_vertical: false,
        }
    }
}

impl RunConfig {
    /// Parses TOML text, resolving relative paths against `base`, and
    /// validates the result.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.train);
        fix(&mut self.output);
        for p in [
            &mut self.dev,
            &mut self.test,
            &mut self.labels,
            &mut self.pronouns,
            &mut self.interjections,
            &mut self.log,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Checks values and that every configured path exists.
    pub fn validate(&self) -> Result<()> {
        self.validate_values()?;
        let required = std::iter::once(&self.train)
            .chain(self.dev.iter())
            .chain(self.test.iter())
            .chain(self.labels.iter())
            .chain(self.pronouns.iter())
            .chain(self.interjections.iter());
        for p in required {
            if !p.exists() {
                return Err(Error::Config(format!("path does not exist: {}", p.display())));
            }
        }
        Ok(())
    }

    /// Checks values only.
    pub fn validate_values(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.snippet_len == 0 || self.min_freq == 0 {
            return Err(Error::Config("batch_size, snippet_len and min_freq must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        self.ablation()?;
        self.model_config().validate()
    }

    pub fn ablation(&self) -> Result<Ablation> {
        Ablation::from_flags(self.no_gcrf, self.no_refine, self.no_vertical)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            heads: self.heads,
            layers: self.layers,
            ff_dim: self.ff_dim,
            head_hidden: self.head_hidden,
            max_len: self.max_len,
            max_speakers: self.max_speakers,
            residual_norm: self.residual_norm,
            share_embeddings: self.share_embeddings,
            dropout: self.dropout,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.epsilon,
        }
    }

    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            snippet_len: self.snippet_len,
            max_speakers: self.max_speakers,
            ..ParseOptions::default()
        }
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        match &self.labels {
            Some(p) => LabelSet::load(p),
            None => Ok(LabelSet::default_inventory()),
        }
    }

    pub fn lexicons(&self, labels: &LabelSet) -> Result<Lexicons> {
        Ok(Lexicons {
            pronouns: match &self.pronouns {
                Some(p) => PronounLexicon::load(p, labels)?,
                None => PronounLexicon::default_for(labels),
            },
            interjections: match &self.interjections {
                Some(p) => InterjectionLexicon::load(p)?,
                None => InterjectionLexicon::default(),
            },
        })
    }

    pub fn log_path(&self) -> PathBuf {
        self.log.clone().unwrap_or_else(|| self.output.join("train_log.jsonl"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_keys_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("train.jsonl"), "").unwrap();
        let text = "train = \"train.jsonl\"\nepochs = 3\nd_model = 16\nseed = 9\nno_vertical = true\n";
        let cfg = RunConfig::from_toml(text, dir.path()).unwrap();
        assert_eq!(cfg.train, dir.path().join("train.jsonl"));
        assert_eq!((cfg.epochs, cfg.d_model, cfg.seed, cfg.snippet_len), (3, 16, 9, 8));
        assert_eq!(cfg.ablation().unwrap(), Ablation::NoVertical);
        assert_eq!(cfg.output, dir.path().join("checkpoint"));
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap(), dir.path()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("t.jsonl"), "").unwrap();
        let bad = [
            "train = \"t.jsonl\"\nepochs = 0\n",
            "train = \"missing.jsonl\"\n",
            "train = \"t.jsonl\"\nno_gcrf = true\nno_refine = true\n",
            "train = \"t.jsonl\"\nheads = 3\n",
            "train = \"t.jsonl\"\nunknown_key = 1\n",
        ];
        for text in bad {
            assert!(matches!(RunConfig::from_toml(text, dir.path()), Err(Error::Config(_))), "{text}");
        }
    }
}
