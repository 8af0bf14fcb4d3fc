//! Subjoiner heads move the first subword of a multi-token word into its
//! final token. Score: attention from `T−1` to `T−4` on windows whose last
//! four tokens form one word, minus the same on baseline windows.

use crate::error::{Error, Result};
use crate::model::{Capture, TransformerWeights};
use crate::numkernel::Matrix;
use crate::schedule::LayerSchedule;
use crate::tokenizer::{BpeVocab, TokenStream};

pub const SUBJOINER_WINDOW: usize = 16;

/// `[step][head]` attention weight from the last position to `T−4`.
pub fn subjoiner_pattern_score(attention: &[Vec<Matrix>]) -> Result<Matrix<f64>> {
    let n_heads = attention.first().map_or(0, Vec::len);
    let mut out = Matrix::zeros(attention.len(), n_heads);
    for (step, heads) in attention.iter().enumerate() {
        for (h, a) in heads.iter().enumerate() {
            let t = a.rows();
            if t < 4 {
                return Err(Error::InvalidArgument(format!("subjoiner pattern needs ≥ 4 positions, got {t}")));
            }
            out.set(step, h, a.get(t - 1, t - 4) as f64);
        }
    }
    Ok(out)
}

fn class_mean(w: &TransformerWeights, windows: &[Vec<u32>], what: &str) -> Result<Matrix<f64>> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} class is empty")));
    }
    if let Some(bad) = windows.iter().find(|w| w.len() != SUBJOINER_WINDOW) {
        return Err(Error::InvalidArgument(format!(
            "{what} window has {} tokens, expected {SUBJOINER_WINDOW}",
            bad.len()
        )));
    }
    let schedule = LayerSchedule::identity(w.config.n_layers)?;
    let capture = Capture {
        attention: true,
        ..Capture::none()
    };
    let scores = crate::par_map(windows, |win| {
        subjoiner_pattern_score(w.forward(win, &schedule, capture)?.attention()?)
    })?;
    let mut sum = Matrix::zeros(w.config.n_layers, w.config.n_heads);
    for s in &scores {
        for (a, b) in sum.data_mut().iter_mut().zip(s.data()) {
            *a += b;
        }
    }
    Ok(sum.map(|v| v / windows.len() as f64))
}

/// `n_layers × n_heads` scores.
pub fn subjoiner_score(
    w: &TransformerWeights,
    word_class: &[Vec<u32>],
    baseline_class: &[Vec<u32>],
) -> Result<Matrix<f64>> {
    let word = class_mean(w, word_class, "word")?;
    let base = class_mean(w, baseline_class, "baseline")?;
    Ok(Matrix::from_fn(word.rows(), word.cols(), |r, c| word.get(r, c) - base.get(r, c)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece {
    /// Space followed by letters.
    WordStart,
    /// Letters only.
    Continuation,
    Other,
}

fn piece(text: &str) -> Piece {
    let letters = |s: &str| !s.is_empty() && s.chars().all(char::is_alphabetic);
    match text.strip_prefix(' ') {
        Some(rest) if letters(rest) => Piece::WordStart,
        None if letters(text) => Piece::Continuation,
        _ => Piece::Other,
    }
}

/// Windows for [`subjoiner_score`] mined from a corpus, in corpus order.
/// Word class: the last four tokens are one word (a word start followed by
/// three continuations). Baseline class: the last four tokens are four
/// separate words. In both, the next token must not continue the word.
pub fn subjoiner_classes(
    corpus: &TokenStream,
    vocab: &BpeVocab,
    max_per_class: usize,
) -> Result<(Vec<Vec<u32>>, Vec<Vec<u32>>)> {
    corpus.validate(vocab.len())?;
    let pieces = (0..vocab.len() as u32)
        .map(|id| Ok(piece(&vocab.token_text(id)?)))
        .collect::<Result<Vec<_>>>()?;
    let ids = &corpus.ids;
    let (mut word, mut base) = (Vec::new(), Vec::new());
    if ids.len() < SUBJOINER_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "corpus has {} tokens, subjoiner windows need {SUBJOINER_WINDOW}",
            ids.len()
        )));
    }
    for s in 0..=ids.len() - SUBJOINER_WINDOW {
        let tail: Vec<Piece> = ids[s + SUBJOINER_WINDOW - 4..s + SUBJOINER_WINDOW]
            .iter()
            .map(|&t| pieces[t as usize])
            .collect();
        let ends = ids
            .get(s + SUBJOINER_WINDOW)
            .map_or(true, |&t| pieces[t as usize] != Piece::Continuation);
        if !ends {
            continue;
        }
        let win = || ids[s..s + SUBJOINER_WINDOW].to_vec();
        if tail[0] == Piece::WordStart && tail[1..].iter().all(|&p| p == Piece::Continuation) {
            if word.len() < max_per_class {
                word.push(win());
            }
        } else if tail.iter().all(|&p| p == Piece::WordStart) && base.len() < max_per_class {
            base.push(win());
        }
    }
    if word.is_empty() || base.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "corpus yielded {} four-token words and {} four-word tails",
            word.len(),
            base.len()
        )));
    }
    Ok((word, base))
}

pub(crate) fn scores_csv(scores: &Matrix<f64>) -> String {
    let mut out = String::from("layer,head,score\n");
    for l in 0..scores.rows() {
        for h in 0..scores.cols() {
            out.push_str(&format!("{l},{h},{:.9}\n", scores.get(l, h)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LayerNormParams, Linear, ModelConfig};

    const MARK: u32 = 3;

    /// One layer, one head: every query is a constant vector and only the
    /// marker token produces a matching key, so the head attends to
    /// wherever the marker sits.
    fn marker_head() -> TransformerWeights {
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 1,
            d_model: 4,
            d_head: 4,
            d_mlp: 4,
            vocab_size: 8,
            max_positions: 16,
            ..ModelConfig::gpt2_small()
        };
        let mut w = TransformerWeights::random(&cfg, 0).unwrap();
        w.embed = Matrix::from_fn(8, 4, |t, c| match (t as u32 == MARK, c) {
            (false, 0) => 1.0,
            (false, 1) => -1.0,
            (true, 2) => 1.0,
            (true, 3) => -1.0,
            _ => 0.0,
        });
        w.pos_embed = Matrix::zeros(16, 4);
        let b = &mut w.blocks[0];
        b.ln1 = LayerNormParams::identity(4);
        b.q = Linear {
            weight: Matrix::zeros(4, 4),
            bias: vec![40.0, 0.0, 0.0, 0.0],
        };
        b.k = Linear {
            weight: Matrix::from_fn(4, 4, |r, c| if (r, c) == (0, 2) { 1.0 } else { 0.0 }),
            bias: vec![0.0; 4],
        };
        w
    }

    #[test]
    fn constructed_head_scores_near_one() {
        let w = marker_head();
        let mut word = vec![1u32; 16];
        word[12] = MARK;
        let mut base = vec![1u32; 16];
        base[0] = MARK;
        let s = subjoiner_score(&w, &[word.clone(), word], &[base]).unwrap();
        assert_eq!(s.shape(), (1, 1));
        assert!((s.get(0, 0) - 1.0).abs() < 1e-6, "{}", s.get(0, 0));
    }

    #[test]
    fn mines_word_and_baseline_windows() {
        let v = crate::tokenizer::tests::toy_vocab();
        // " rabc" is one word of four pieces: "Ġr", "a", "b", "c"
        let text = "x x x x x x x x x x x x rabc d r r r r r r r r r r r r r r r r";
        let stream = v.encode(text);
        let (word, base) = subjoiner_classes(&stream, &v, 100).unwrap();
        assert_eq!(word.len(), 1);
        let tail: Vec<_> = word[0][12..].iter().map(|&t| v.token_str(t).unwrap()).collect();
        assert_eq!(tail, vec!["Ġr", "a", "b", "c"]);
        assert!(!base.is_empty());
        for b in &base {
            assert!(b[12..].iter().all(|&t| v.token_str(t).unwrap().starts_with('Ġ')));
        }
    }

    #[test]
    fn symmetric_classes_score_zero() {
        let w = TransformerWeights::random(
            &ModelConfig {
                n_layers: 2,
                n_heads: 2,
                d_model: 8,
                d_head: 4,
                d_mlp: 8,
                vocab_size: 20,
                max_positions: 16,
                ..ModelConfig::gpt2_small()
            },
            1,
        )
        .unwrap();
        let win: Vec<u32> = (0..16).collect();
        let s = subjoiner_score(&w, &[win.clone()], &[win]).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
        assert!(subjoiner_score(&w, &[vec![0; 15]], &[vec![0; 16]]).is_err());
        let csv = scores_csv(&s);
        assert_eq!(csv.lines().count(), 5);
    }
}
