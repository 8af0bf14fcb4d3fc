//! Word-in-context pairs: does the target word carry the same sense in both
//! sentences? Probed per residual snapshot.

use serde::Serialize;

use super::dataset::{FeatureSpec, ProbeDataset};
use super::logistic::{train_probe, ProbeHyper};
use crate::error::{Error, Result};
use crate::model::{Capture, TransformerWeights};
use crate::numkernel::Matrix;
use crate::schedule::LayerSchedule;
use crate::tokenizer::BpeVocab;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WicPair {
    pub word: String,
    /// Whitespace-separated word positions of the target in each sentence.
    pub word_index1: usize,
    pub word_index2: usize,
    pub sentence1: String,
    pub sentence2: String,
    pub label: bool,
}

fn parse_label(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "t" | "true" | "1" => Some(true),
        "f" | "false" | "0" => Some(false),
        _ => None,
    }
}

/// `word<TAB>idx1-idx2<TAB>sentence1<TAB>sentence2<TAB>label`; blank lines
/// are skipped.
pub fn parse_wic_tsv(text: &str) -> Result<Vec<WicPair>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::InvalidArgument(format!("WiC line {}: {what}", n + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(&format!("expected 5 tab-separated fields, found {}", f.len())));
        }
        let (i1, i2) = f[1].split_once('-').ok_or_else(|| bad("index field is not idx1-idx2"))?;
        let idx = |s: &str| s.trim().parse::<usize>().map_err(|_| bad("index is not a number"));
        out.push(WicPair {
            word: f[0].to_string(),
            word_index1: idx(i1)?,
            word_index2: idx(i2)?,
            sentence1: f[2].to_string(),
            sentence2: f[3].to_string(),
            label: parse_label(f[4]).ok_or_else(|| bad("label must be T/F or 1/0"))?,
        });
    }
    Ok(out)
}

/// Tokens of `sentence` and the index of the final subword of its
/// `word_index`-th whitespace word (trailing punctuation ignored). `None`
/// when the word is missing or its end is not a token boundary.
pub fn resolve_target(vocab: &BpeVocab, sentence: &str, word_index: usize) -> Option<(Vec<u32>, usize)> {
    let mut words = sentence
        .split_whitespace()
        .map(|w| (w.as_ptr() as usize - sentence.as_ptr() as usize, w));
    let (start, word) = words.nth(word_index)?;
    let core = word.trim_end_matches(|c: char| !c.is_alphanumeric());
    if core.is_empty() {
        return None;
    }
    let prefix = vocab.encode(&sentence[..start + core.len()]).ids;
    let full = vocab.encode(sentence).ids;
    if prefix.is_empty() || !full.starts_with(&prefix) {
        return None;
    }
    let idx = prefix.len() - 1;
    Some((full, idx))
}

/// `[h1, h2, h1⊙h2, |h1−h2|]`.
pub fn wic_features(h1: &[f32], h2: &[f32]) -> Vec<f64> {
    let a = h1.iter().map(|&v| v as f64);
    let b = h2.iter().map(|&v| v as f64);
    a.clone()
        .chain(b.clone())
        .chain(a.clone().zip(b.clone()).map(|(x, y)| x * y))
        .chain(a.zip(b).map(|(x, y)| (x - y).abs()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WicLayerResult {
    /// Residual snapshot; −1 is the embedding.
    pub layer: i64,
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WicSweep {
    pub layers: Vec<WicLayerResult>,
    pub n_pairs: usize,
    pub n_skipped: usize,
}

type Resolved = ((Vec<u32>, usize), (Vec<u32>, usize), bool);

/// One probe per residual snapshot on pair features of the two target
/// tokens.
pub fn wic_probe_sweep(
    w: &TransformerWeights,
    vocab: &BpeVocab,
    pairs: &[WicPair],
    hyper: ProbeHyper,
) -> Result<WicSweep> {
    let max = w.config.max_positions;
    let resolved: Vec<Resolved> = pairs
        .iter()
        .filter_map(|p| {
            let a = resolve_target(vocab, &p.sentence1, p.word_index1)?;
            let b = resolve_target(vocab, &p.sentence2, p.word_index2)?;
            (a.0.len() <= max && b.0.len() <= max).then_some((a, b, p.label))
        })
        .collect();
    let n_skipped = pairs.len() - resolved.len();
    if resolved.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "{} of {} WiC pairs resolved; need at least 2",
            resolved.len(),
            pairs.len()
        )));
    }

    let schedule = LayerSchedule::identity(w.config.n_layers)?;
    let capture = Capture {
        residuals: true,
        ..Capture::none()
    };
    let target_states = |tokens: &[u32], idx: usize| -> Result<Vec<Vec<f32>>> {
        let trace = w.forward(tokens, &schedule, capture)?;
        Ok(trace.residuals()?.iter().map(|r| r.row(idx).to_vec()).collect())
    };
    let per_pair = crate::par_map(&resolved, |((t1, i1), (t2, i2), _)| {
        Ok((target_states(t1, *i1)?, target_states(t2, *i2)?))
    })?;
    let labels: Vec<bool> = resolved.iter().map(|r| r.2).collect();

    let snapshots: Vec<usize> = (0..=w.config.n_layers).collect();
    let layers = crate::par_map(&snapshots, |&s| {
        let rows: Vec<Vec<f64>> = per_pair.iter().map(|(h1, h2)| wic_features(&h1[s], &h2[s])).collect();
        let data = ProbeDataset::new(
            Matrix::from_rows(&rows)?,
            labels.clone(),
            FeatureSpec::WicPair {
                layer: s as i64 - 1,
                d_model: w.config.d_model,
            },
        )?;
        let p = train_probe(&data, hyper)?;
        Ok(WicLayerResult {
            layer: s as i64 - 1,
            train_accuracy: p.train_accuracy,
            eval_accuracy: p.eval_accuracy,
        })
    })?;
    Ok(WicSweep {
        layers,
        n_pairs: resolved.len(),
        n_skipped,
    })
}

impl WicSweep {
    /// `layer_or_neuron,train_acc,eval_acc`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer_or_neuron,train_acc,eval_acc\n");
        for r in &self.layers {
            out.push_str(&format!("{},{:.9},{:.9}\n", r.layer, r.train_accuracy, r.eval_accuracy));
        }
        out
    }
}
