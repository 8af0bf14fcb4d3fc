//! A small random GPT-2-shaped model with a byte-level vocabulary, exposed
//! to the browser. Three operations: run a layer schedule against the
//! identity baseline, a layer-by-layer CKA heatmap, and per-layer attention
//! locality.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use stagescope::metrics::{attention_locality, CkaMatrix, MetricAccumulator};
use stagescope::numkernel::Matrix;
use stagescope::{Capture, LayerSchedule, ModelConfig, Result, TransformerWeights};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleView {
    pub notation: String,
    pub steps: Vec<usize>,
    pub kl_nats: f64,
    pub top1_agreement: f64,
    pub baseline_entropy_nats: f64,
    pub entropy_nats: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalityView {
    pub k: usize,
    pub locality: Vec<f64>,
}

#[wasm_bindgen]
pub struct Demo {
    weights: TransformerWeights,
    tokens: Vec<u32>,
}

pub fn demo_config(n_layers: usize) -> ModelConfig {
    ModelConfig {
        n_layers,
        n_heads: 4,
        d_model: 32,
        d_head: 8,
        d_mlp: 128,
        vocab_size: 256,
        max_positions: 128,
        ..ModelConfig::gpt2_small()
    }
}

impl Demo {
    pub fn build(n_layers: usize, seed: u64) -> Result<Self> {
        let weights = TransformerWeights::random(&demo_config(n_layers), seed)?.preprocess()?;
        let mut demo = Self {
            weights,
            tokens: Vec::new(),
        };
        demo.load_text("The quick brown fox jumps over the lazy dog.");
        Ok(demo)
    }

    /// One token per byte, truncated to the context length.
    pub fn load_text(&mut self, text: &str) -> usize {
        self.tokens = text
            .bytes()
            .take(self.weights.config.max_positions)
            .map(u32::from)
            .collect();
        self.tokens.len()
    }

    fn check_tokens(&self, min: usize) -> Result<()> {
        if self.tokens.len() < min {
            return Err(stagescope::Error::InvalidArgument(format!(
                "need at least {min} characters of text, have {}",
                self.tokens.len()
            )));
        }
        Ok(())
    }

    pub fn schedule_view(&self, notation: &str) -> Result<ScheduleView> {
        self.check_tokens(2)?;
        let n = self.weights.config.n_layers;
        let schedule = LayerSchedule::parse(notation, n)?;
        let base = self.weights.forward(&self.tokens, &LayerSchedule::identity(n)?, Capture::logits_only())?;
        let run = self.weights.forward(&self.tokens, &schedule, Capture::logits_only())?;
        let mut same = MetricAccumulator::default();
        same.add_window(base.logits()?, base.logits()?, &self.tokens)?;
        let mut acc = MetricAccumulator::default();
        acc.add_window(base.logits()?, run.logits()?, &self.tokens)?;
        Ok(ScheduleView {
            notation: schedule.to_string(),
            steps: schedule.steps().to_vec(),
            kl_nats: acc.mean_kl(),
            top1_agreement: acc.agreement(),
            baseline_entropy_nats: same.mean_entropy(),
            entropy_nats: acc.mean_entropy(),
        })
    }

    /// Residual snapshots with token positions as samples.
    pub fn cka_view(&self) -> Result<CkaMatrix> {
        self.check_tokens(4)?;
        let n = self.weights.config.n_layers;
        let capture = Capture {
            residuals: true,
            ..Capture::none()
        };
        let trace = self.weights.forward(&self.tokens, &LayerSchedule::identity(n)?, capture)?;
        let features: Vec<Matrix<f64>> = trace.residuals()?.iter().map(|m| m.cast()).collect();
        CkaMatrix::from_features((0..=n).map(|i| i as i64 - 1).collect(), &features)
    }

    pub fn locality_view(&self, k: usize) -> Result<LocalityView> {
        self.check_tokens(2)?;
        let capture = Capture {
            attention: true,
            ..Capture::none()
        };
        let n = self.weights.config.n_layers;
        let trace = self.weights.forward(&self.tokens, &LayerSchedule::identity(n)?, capture)?;
        Ok(LocalityView {
            k,
            locality: attention_locality(&trace, k)?,
        })
    }
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(n_layers: usize, seed: u32) -> std::result::Result<Demo, JsError> {
        Self::build(n_layers, seed.into()).map_err(|e| JsError::new(&e.to_string()))
    }

    #[wasm_bindgen(js_name = nLayers)]
    pub fn n_layers(&self) -> usize {
        self.weights.config.n_layers
    }

    /// Returns the number of tokens kept.
    #[wasm_bindgen(js_name = setText)]
    pub fn set_text(&mut self, text: &str) -> usize {
        self.load_text(text)
    }

    /// JSON `ScheduleView`.
    #[wasm_bindgen(js_name = runSchedule)]
    pub fn run_schedule(&self, notation: &str) -> std::result::Result<String, JsError> {
        to_js(self.schedule_view(notation))
    }

    /// JSON `{layers, values, n_samples}`.
    #[wasm_bindgen(js_name = ckaHeatmap)]
    pub fn cka_heatmap(&self) -> std::result::Result<String, JsError> {
        to_js(self.cka_view())
    }

    /// JSON `{k, locality}`.
    pub fn locality(&self, k: usize) -> std::result::Result<String, JsError> {
        to_js(self.locality_view(k))
    }
}
