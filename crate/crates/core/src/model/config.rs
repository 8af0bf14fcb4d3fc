use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Wiring {
    /// `x += attn(ln1(x)); x += mlp(ln2(x))`
    #[default]
    Sequential,
    /// `x += attn(ln1(x)) + mlp(ln2(x))`; accepted in configs, not executed.
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Positions {
    #[default]
    Learned,
    /// Accepted in configs, not executed.
    Rotary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub ln_eps: f32,
    pub wiring: Wiring,
    pub positions: Positions,
}

/// Accepts both this crate's field names and the Hugging Face GPT-2
/// `config.json` names; unrelated keys in HF configs are ignored.
#[derive(Deserialize)]
struct RawConfig {
    #[serde(alias = "n_layer")]
    n_layers: usize,
    #[serde(alias = "n_head")]
    n_heads: usize,
    #[serde(alias = "n_embd")]
    d_model: usize,
    #[serde(default)]
    d_head: Option<usize>,
    #[serde(default, alias = "n_inner")]
    d_mlp: Option<usize>,
    vocab_size: usize,
    #[serde(alias = "n_positions", default)]
    max_positions: Option<usize>,
    #[serde(default)]
    n_ctx: Option<usize>,
    #[serde(default = "default_eps", alias = "layer_norm_epsilon")]
    ln_eps: f32,
    #[serde(default)]
    wiring: Wiring,
    #[serde(default)]
    positions: Positions,
}

fn default_eps() -> f32 {
    1e-5
}

impl<'de> Deserialize<'de> for ModelConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawConfig::deserialize(d)?;
        let d_head = match raw.d_head {
            Some(h) => h,
            None if raw.n_heads > 0 => raw.d_model / raw.n_heads,
            None => 0,
        };
        let cfg = ModelConfig {
            n_layers: raw.n_layers,
            n_heads: raw.n_heads,
            d_model: raw.d_model,
            d_head,
            d_mlp: raw.d_mlp.unwrap_or(4 * raw.d_model),
            vocab_size: raw.vocab_size,
            max_positions: raw
                .max_positions
                .or(raw.n_ctx)
                .ok_or_else(|| serde::de::Error::missing_field("n_positions"))?,
            ln_eps: raw.ln_eps,
            wiring: raw.wiring,
            positions: raw.positions,
        };
        cfg.validate().map_err(serde::de::Error::custom)?;
        Ok(cfg)
    }
}

impl ModelConfig {
    /// GPT-2 small.
    pub fn gpt2_small() -> Self {
        Self {
            n_layers: 12,
            n_heads: 12,
            d_model: 768,
            d_head: 64,
            d_mlp: 3072,
            vocab_size: 50257,
            max_positions: 1024,
            ln_eps: 1e-5,
            wiring: Wiring::Sequential,
            positions: Positions::Learned,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("d_mlp", self.d_mlp),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(Error::Config {
                    field: field.into(),
                    detail: "must be positive".into(),
                });
            }
        }
        if self.n_heads * self.d_head != self.d_model {
            return Err(Error::Config {
                field: "d_head".into(),
                detail: format!(
                    "n_heads ({}) × d_head ({}) != d_model ({})",
                    self.n_heads, self.d_head, self.d_model
                ),
            });
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config {
                field: "ln_eps".into(),
                detail: "must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::Config {
            field: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    /// Rejects variants the forward pass does not execute.
    pub fn ensure_supported(&self) -> Result<()> {
        if self.wiring != Wiring::Sequential {
            return Err(Error::UnsupportedVariant(
                "parallel attention/MLP wiring".into(),
            ));
        }
        if self.positions != Positions::Learned {
            return Err(Error::UnsupportedVariant("rotary position embeddings".into()));
        }
        Ok(())
    }
}
