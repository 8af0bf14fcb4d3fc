//! Prediction / suppression neuron taxonomy.
//!
//! A neuron's logit effect is `W_U · w_out`, the vocabulary-space vector its
//! output column writes. Heavy-tailed effects (high excess kurtosis) with
//! positive skew promote a few tokens (prediction); with negative skew they
//! demote a few tokens (suppression).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Capture, TransformerWeights};
use crate::numkernel::{matmul_transposed, moments, Matrix, Moments};
use crate::schedule::LayerSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronClass {
    Prediction,
    Suppression,
    Neither,
}

impl NeuronClass {
    pub fn as_str(self) -> &'static str {
        match self {
            NeuronClass::Prediction => "prediction",
            NeuronClass::Suppression => "suppression",
            NeuronClass::Neither => "neither",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub kurtosis_min: f64,
    pub skew_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            kurtosis_min: 10.0,
            skew_min: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeuronStat {
    pub layer: usize,
    pub neuron: usize,
    pub variance_act: Option<f64>,
    pub skew: Option<f64>,
    pub excess_kurtosis: Option<f64>,
    pub class: NeuronClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerDensity {
    pub layer: usize,
    pub prediction_frac: f64,
    pub suppression_frac: f64,
}

fn check_neuron(w: &TransformerWeights, layer: usize, neuron: usize) -> Result<()> {
    if layer >= w.config.n_layers || neuron >= w.config.d_mlp {
        return Err(Error::InvalidArgument(format!(
            "neuron ({layer}, {neuron}) out of range for {} layers × {} neurons",
            w.config.n_layers, w.config.d_mlp
        )));
    }
    Ok(())
}

/// `W_U · W_out[:, neuron]` at `layer`.
pub fn logit_effect(w: &TransformerWeights, layer: usize, neuron: usize) -> Result<Vec<f32>> {
    check_neuron(w, layer, neuron)?;
    let column = w.blocks[layer].mlp_out.weight.column(neuron);
    let col = Matrix::new(1, column.len(), column)?;
    Ok(matmul_transposed(&col, &w.unembed.weight)?.into_data())
}

pub fn classify_moments(m: &Moments, t: Thresholds) -> NeuronClass {
    match (m.skew, m.excess_kurtosis) {
        (Some(s), Some(k)) if k > t.kurtosis_min && s > t.skew_min => NeuronClass::Prediction,
        (Some(s), Some(k)) if k > t.kurtosis_min && s < -t.skew_min => NeuronClass::Suppression,
        _ => NeuronClass::Neither,
    }
}

pub fn classify_neuron(effect: &[f32], t: Thresholds) -> Result<NeuronClass> {
    if effect.len() < 2 {
        return Err(Error::InvalidArgument("logit effect needs at least 2 entries".into()));
    }
    Ok(classify_moments(&moments(effect)?, t))
}

const NEURON_CHUNK: usize = 256;

/// Moments of every neuron's logit effect in one layer.
pub fn layer_effect_moments(w: &TransformerWeights, layer: usize) -> Result<Vec<Moments>> {
    check_neuron(w, layer, 0)?;
    let w_out_t = w.blocks[layer].mlp_out.weight.transpose();
    let d_mlp = w_out_t.rows();
    let starts: Vec<usize> = (0..d_mlp).step_by(NEURON_CHUNK).collect();
    let chunks = crate::par_map(&starts, |&start| {
        let len = NEURON_CHUNK.min(d_mlp - start);
        let rows = Matrix::new(
            len,
            w_out_t.cols(),
            w_out_t.data()[start * w_out_t.cols()..(start + len) * w_out_t.cols()].to_vec(),
        )?;
        let effects = matmul_transposed(&rows, &w.unembed.weight)?;
        effects.iter_rows().map(moments).collect::<Result<Vec<_>>>()
    })?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Classifies every MLP neuron. Requires preprocessed (centered) weights so
/// a constant logit offset cannot pass for skew.
pub fn neuron_stats(
    w: &TransformerWeights,
    t: Thresholds,
    activation_variance: Option<&[Vec<f64>]>,
) -> Result<Vec<NeuronStat>> {
    if !w.preprocessed {
        return Err(Error::InvalidArgument(
            "neuron classification expects preprocessed weights".into(),
        ));
    }
    let mut out = Vec::with_capacity(w.config.n_layers * w.config.d_mlp);
    for layer in 0..w.config.n_layers {
        for (neuron, m) in layer_effect_moments(w, layer)?.into_iter().enumerate() {
            out.push(NeuronStat {
                layer,
                neuron,
                variance_act: activation_variance.and_then(|v| v.get(layer)?.get(neuron).copied()),
                skew: m.skew,
                excess_kurtosis: m.excess_kurtosis,
                class: classify_moments(&m, t),
            });
        }
    }
    Ok(out)
}

pub fn densities_from_stats(stats: &[NeuronStat], n_layers: usize) -> Vec<LayerDensity> {
    (0..n_layers)
        .map(|layer| {
            let in_layer: Vec<_> = stats.iter().filter(|s| s.layer == layer).collect();
            let n = in_layer.len().max(1) as f64;
            let count = |c| in_layer.iter().filter(|s| s.class == c).count() as f64;
            LayerDensity {
                layer,
                prediction_frac: count(NeuronClass::Prediction) / n,
                suppression_frac: count(NeuronClass::Suppression) / n,
            }
        })
        .collect()
}

pub fn layer_densities(w: &TransformerWeights, t: Thresholds) -> Result<Vec<LayerDensity>> {
    Ok(densities_from_stats(&neuron_stats(w, t, None)?, w.config.n_layers))
}

/// Population variance of each post-GELU MLP activation at the penultimate
/// position of every window; `[layer][neuron]`.
pub fn activation_variance(w: &TransformerWeights, windows: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
    if windows.is_empty() || windows.iter().any(|w| w.len() < 2) {
        return Err(Error::InvalidArgument(
            "activation variance needs windows of at least 2 tokens".into(),
        ));
    }
    let schedule = LayerSchedule::identity(w.config.n_layers)?;
    let capture = Capture {
        mlp_activations: true,
        ..Capture::none()
    };
    let per_window = crate::par_map(windows, |win| {
        let trace = w.forward(win, &schedule, capture)?;
        let pos = win.len() - 2;
        Ok(trace
            .mlp_activations()?
            .iter()
            .map(|a| a.row(pos).to_vec())
            .collect::<Vec<_>>())
    })?;
    let (n_layers, d_mlp) = (w.config.n_layers, w.config.d_mlp);
    let n = per_window.len() as f64;
    let mut sum = vec![vec![0.0f64; d_mlp]; n_layers];
    let mut sq = vec![vec![0.0f64; d_mlp]; n_layers];
    for win in &per_window {
        for (l, acts) in win.iter().enumerate() {
            for (j, &a) in acts.iter().enumerate() {
                sum[l][j] += a as f64;
                sq[l][j] += (a as f64) * (a as f64);
            }
        }
    }
    Ok(sum
        .iter()
        .zip(&sq)
        .map(|(s, q)| {
            s.iter()
                .zip(q)
                .map(|(&s, &q)| (q / n - (s / n).powi(2)).max(0.0))
                .collect()
        })
        .collect())
}

/// The `k` highest-variance neurons of a class, ties by (layer, neuron).
pub fn top_variance_neurons(stats: &[NeuronStat], class: NeuronClass, k: usize) -> Vec<(usize, usize)> {
    let mut picked: Vec<&NeuronStat> = stats.iter().filter(|s| s.class == class).collect();
    picked.sort_by(|a, b| {
        let va = a.variance_act.unwrap_or(0.0);
        let vb = b.variance_act.unwrap_or(0.0);
        vb.total_cmp(&va).then((a.layer, a.neuron).cmp(&(b.layer, b.neuron)))
    });
    picked.into_iter().take(k).map(|s| (s.layer, s.neuron)).collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9}")).unwrap_or_default()
}

/// `layer,neuron,skew,excess_kurtosis,variance_act,class`.
pub fn stats_csv(stats: &[NeuronStat]) -> String {
    let mut out = String::from("layer,neuron,skew,excess_kurtosis,variance_act,class\n");
    for s in stats {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.layer,
            s.neuron,
            fmt_opt(s.skew),
            fmt_opt(s.excess_kurtosis),
            fmt_opt(s.variance_act),
            s.class.as_str()
        ));
    }
    out
}

pub fn densities_csv(d: &[LayerDensity]) -> String {
    let mut out = String::from("layer,prediction_frac,suppression_frac\n");
    for x in d {
        out.push_str(&format!("{},{:.9},{:.9}\n", x.layer, x.prediction_frac, x.suppression_frac));
    }
    out
}
