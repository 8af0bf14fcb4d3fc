use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neurons::Thresholds;
use crate::probes::ProbeHyper;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Intervene,
    Logitlens,
    Cka,
    Neurons,
    ProbeIng,
    ProbeWic,
    Subjoiner,
    Repeat,
    Locality,
    Swapsim,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 10] = [
        ExperimentKind::Intervene,
        ExperimentKind::Logitlens,
        ExperimentKind::Cka,
        ExperimentKind::Neurons,
        ExperimentKind::ProbeIng,
        ExperimentKind::ProbeWic,
        ExperimentKind::Subjoiner,
        ExperimentKind::Repeat,
        ExperimentKind::Locality,
        ExperimentKind::Swapsim,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Intervene => "intervene",
            ExperimentKind::Logitlens => "logitlens",
            ExperimentKind::Cka => "cka",
            ExperimentKind::Neurons => "neurons",
            ExperimentKind::ProbeIng => "probe-ing",
            ExperimentKind::ProbeWic => "probe-wic",
            ExperimentKind::Subjoiner => "subjoiner",
            ExperimentKind::Repeat => "repeat",
            ExperimentKind::Locality => "locality",
            ExperimentKind::Swapsim => "swapsim",
        }
    }

    /// Kinds whose raw-text corpus must go through the tokenizer, or that
    /// decode tokens.
    pub fn needs_vocab(self) -> bool {
        matches!(
            self,
            ExperimentKind::ProbeIng | ExperimentKind::ProbeWic | ExperimentKind::Subjoiner
        )
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config {
                field: "kind".into(),
                detail: format!(
                    "unknown experiment kind {s:?}; expected one of {}",
                    Self::ALL.map(Self::as_str).join(", ")
                ),
            })
    }
}

fn default_tokens() -> usize {
    50_000
}

fn default_window() -> usize {
    512
}

fn default_true() -> bool {
    true
}

/// Kind-specific parameters; each kind reads the fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KindParams {
    /// swapsim: restrict to one swap layer.
    pub layer: Option<usize>,
    /// repeat: block length and extra passes.
    pub block_len: usize,
    pub times: usize,
    /// locality: a single `k` instead of the default set; probe-ing:
    /// largest ensemble size.
    pub k: Option<usize>,
    pub thresholds: Thresholds,
    /// intervene: one schedule (notation) instead of the full sweep.
    pub schedule: Option<String>,
    pub probe: ProbeHyper,
    /// probe-ing: neurons per class, and a cap on examples per class.
    pub neurons_per_class: usize,
    pub max_examples_per_class: Option<usize>,
    /// subjoiner: windows per class.
    pub max_windows_per_class: usize,
}

impl Default for KindParams {
    fn default() -> Self {
        Self {
            layer: None,
            block_len: 5,
            times: 1,
            k: None,
            thresholds: Thresholds::default(),
            schedule: None,
            probe: ProbeHyper::default(),
            neurons_per_class: 32,
            max_examples_per_class: None,
            max_windows_per_class: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Directory holding `model.safetensors` and `config.json`, or the
    /// safetensors file itself.
    pub model: PathBuf,
    /// Defaults to `config.json` next to the weights.
    #[serde(default)]
    pub model_config: Option<PathBuf>,
    /// Directory with `vocab.json` and `merges.txt`; defaults to the model
    /// directory.
    #[serde(default)]
    pub vocab: Option<PathBuf>,
    /// Raw text, or little-endian `u32` ids when the extension is `.bin`.
    /// probe-wic reads a WiC TSV here.
    pub corpus: PathBuf,
    #[serde(default = "default_tokens")]
    pub tokens: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
    /// Fold layer norms and center weights before running.
    #[serde(default = "default_true")]
    pub preprocess: bool,
    #[serde(default)]
    pub params: KindParams,
}

fn field_err(field: &str, detail: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        detail: detail.into(),
    }
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, model: PathBuf, corpus: PathBuf, out: PathBuf) -> Self {
        Self {
            kind,
            model,
            model_config: None,
            vocab: None,
            corpus,
            tokens: default_tokens(),
            window: default_window(),
            seed: 0,
            out,
            preprocess: true,
            params: KindParams::default(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "config".into());
            field_err(&field, msg)
        })?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn weights_path(&self) -> PathBuf {
        if self.model.is_dir() {
            self.model.join("model.safetensors")
        } else {
            self.model.clone()
        }
    }

    fn model_dir(&self) -> PathBuf {
        if self.model.is_dir() {
            self.model.clone()
        } else {
            self.model.parent().map(Path::to_path_buf).unwrap_or_default()
        }
    }

    pub fn model_config_path(&self) -> PathBuf {
        self.model_config
            .clone()
            .unwrap_or_else(|| self.model_dir().join("config.json"))
    }

    pub fn vocab_paths(&self) -> (PathBuf, PathBuf) {
        let dir = self.vocab.clone().unwrap_or_else(|| self.model_dir());
        (dir.join("vocab.json"), dir.join("merges.txt"))
    }

    pub fn corpus_is_pretokenized(&self) -> bool {
        self.corpus.extension().is_some_and(|e| e == "bin")
    }

    /// Checks value ranges and that every input path exists.
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(field_err("window", "must be positive"));
        }
        if self.tokens < self.window {
            return Err(field_err(
                "tokens",
                format!("budget {} is below the window length {}", self.tokens, self.window),
            ));
        }
        let exists = |field: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(field_err(field, format!("{} does not exist", p.display())))
            }
        };
        exists("model", &self.weights_path())?;
        exists("model_config", &self.model_config_path())?;
        exists("corpus", &self.corpus)?;
        if self.kind.needs_vocab() || !self.corpus_is_pretokenized() {
            let (v, m) = self.vocab_paths();
            exists("vocab", &v)?;
            exists("vocab", &m)?;
        }
        let p = &self.params;
        if self.kind == ExperimentKind::Repeat && p.block_len == 0 {
            return Err(field_err("params.block_len", "must be positive"));
        }
        if p.k == Some(0) {
            return Err(field_err("params.k", "must be positive"));
        }
        if !(p.probe.lr > 0.0 && p.probe.lr.is_finite()) {
            return Err(field_err("params.probe.lr", "must be a positive number"));
        }
        if !(p.probe.train_frac > 0.0 && p.probe.train_frac < 1.0) {
            return Err(field_err("params.probe.train_frac", "must lie in (0, 1)"));
        }
        if p.probe.l2 < 0.0 {
            return Err(field_err("params.probe.l2", "must be non-negative"));
        }
        if self.kind == ExperimentKind::ProbeIng && p.neurons_per_class == 0 {
            return Err(field_err("params.neurons_per_class", "must be positive"));
        }
        Ok(())
    }
}
