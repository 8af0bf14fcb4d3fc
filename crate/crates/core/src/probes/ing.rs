//! The `-ing` suffix task: does the last token of a 24-token window end in
//! "ing"? Probes read the penultimate position.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{FeatureSpec, ProbeDataset};
use crate::error::{Error, Result};
use crate::model::{Capture, TransformerWeights};
use crate::numkernel::{argmax, Matrix};
use crate::schedule::LayerSchedule;
use crate::tokenizer::{BpeVocab, TokenStream};

pub const ING_CONTEXT: usize = 24;

/// Leading whitespace stripped, case-insensitive.
pub fn ends_with_ing(token_text: &str) -> bool {
    token_text.trim().to_lowercase().ends_with("ing")
}

/// Balanced sliding windows with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct IngWindows {
    pub windows: Vec<Vec<u32>>,
    pub labels: Vec<bool>,
    pub positives_found: usize,
    pub negatives_found: usize,
}

fn label_table(vocab: &BpeVocab) -> Result<Vec<bool>> {
    (0..vocab.len() as u32)
        .map(|id| Ok(ends_with_ing(&vocab.token_text(id)?)))
        .collect()
}

/// Stride-1 windows of `context` tokens, majority class downsampled with a
/// seeded shuffle; windows keep corpus order. `max_per_class` caps both
/// classes.
pub fn build_ing_dataset(
    corpus: &TokenStream,
    vocab: &BpeVocab,
    context: usize,
    max_per_class: Option<usize>,
    seed: u64,
) -> Result<IngWindows> {
    if context < 2 {
        return Err(Error::InvalidArgument("-ing context needs at least 2 tokens".into()));
    }
    if corpus.len() < context {
        return Err(Error::InvalidArgument(format!(
            "corpus has {} tokens, -ing windows need {context}",
            corpus.len()
        )));
    }
    corpus.validate(vocab.len())?;
    let table = label_table(vocab)?;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for start in 0..=corpus.len() - context {
        let last = corpus.ids[start + context - 1] as usize;
        if table[last] {
            pos.push(start);
        } else {
            neg.push(start);
        }
    }
    if pos.is_empty() {
        return Err(Error::InvalidArgument("no window ends in an -ing token".into()));
    }
    if neg.is_empty() {
        return Err(Error::InvalidArgument("every window ends in an -ing token".into()));
    }
    let (positives_found, negatives_found) = (pos.len(), neg.len());
    let n = pos.len().min(neg.len()).min(max_per_class.unwrap_or(usize::MAX));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut chosen: Vec<(usize, bool)> = pos[..n]
        .iter()
        .map(|&s| (s, true))
        .chain(neg[..n].iter().map(|&s| (s, false)))
        .collect();
    chosen.sort_unstable();
    Ok(IngWindows {
        windows: chosen
            .iter()
            .map(|&(s, _)| corpus.ids[s..s + context].to_vec())
            .collect(),
        labels: chosen.iter().map(|&(_, l)| l).collect(),
        positives_found,
        negatives_found,
    })
}

/// Post-GELU activations of `neurons` at the penultimate position; only the
/// blocks up to the deepest selected layer are run.
pub fn extract_neuron_features(
    w: &TransformerWeights,
    windows: &[Vec<u32>],
    labels: &[bool],
    neurons: &[(usize, usize)],
) -> Result<ProbeDataset> {
    if neurons.is_empty() {
        return Err(Error::InvalidArgument("no neurons selected".into()));
    }
    if let Some(&(l, n)) = neurons
        .iter()
        .find(|&&(l, n)| l >= w.config.n_layers || n >= w.config.d_mlp)
    {
        return Err(Error::InvalidArgument(format!(
            "neuron ({l}, {n}) out of range for {} layers × {} neurons",
            w.config.n_layers, w.config.d_mlp
        )));
    }
    if windows.iter().any(|win| win.len() < 2) {
        return Err(Error::InvalidArgument("feature windows need at least 2 tokens".into()));
    }
    let deepest = neurons.iter().map(|&(l, _)| l).max().unwrap_or(0);
    let schedule = LayerSchedule::custom(w.config.n_layers, (0..=deepest).collect())?;
    let capture = Capture {
        mlp_activations: true,
        ..Capture::none()
    };
    let rows = crate::par_map(windows, |win| {
        let trace = w.forward(win, &schedule, capture)?;
        let acts = trace.mlp_activations()?;
        let pos = win.len() - 2;
        Ok(neurons
            .iter()
            .map(|&(l, n)| acts[l].get(pos, n) as f64)
            .collect::<Vec<_>>())
    })?;
    let features = if rows.is_empty() {
        Matrix::zeros(0, neurons.len())
    } else {
        Matrix::from_rows(&rows)?
    };
    ProbeDataset::new(
        features,
        labels.to_vec(),
        FeatureSpec::Neurons {
            neurons: neurons.to_vec(),
        },
    )
}

/// Fraction of windows where "the model's argmax at the penultimate position
/// ends in -ing" matches the label.
pub fn model_ing_accuracy(
    w: &TransformerWeights,
    vocab: &BpeVocab,
    windows: &[Vec<u32>],
    labels: &[bool],
) -> Result<f64> {
    if windows.is_empty() || windows.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} windows, {} labels",
            windows.len(),
            labels.len()
        )));
    }
    let table = label_table(vocab)?;
    let schedule = LayerSchedule::identity(w.config.n_layers)?;
    let capture = Capture {
        residuals: true,
        ..Capture::none()
    };
    let hits = crate::par_map(windows, |win| {
        if win.len() < 2 {
            return Err(Error::InvalidArgument("feature windows need at least 2 tokens".into()));
        }
        let trace = w.forward(win, &schedule, capture)?;
        let last = trace.residuals()?.last().expect("embedding snapshot");
        let row = last.row(win.len() - 2).to_vec();
        let logits = w.lens_logits(&Matrix::new(1, row.len(), row)?)?;
        let pred = argmax(logits.row(0)).unwrap_or(0);
        Ok(table.get(pred).copied().unwrap_or(false))
    })?;
    let correct = hits.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / labels.len() as f64)
}
