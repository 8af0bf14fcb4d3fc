//! Linear CKA built on the unbiased HSIC estimator.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Capture, TransformerWeights};
use crate::numkernel::{matmul_transposed, Matrix};
use crate::schedule::LayerSchedule;
use crate::tokenizer::TokenStream;

/// A linear-kernel Gram matrix with its diagonal zeroed, plus the
/// row sums the estimator needs.
pub struct CenteredGram {
    k: Matrix<f64>,
    row_sums: Vec<f64>,
    total: f64,
}

impl CenteredGram {
    pub fn new(x: &Matrix<f64>) -> Result<Self> {
        let n = x.rows();
        if n < 4 {
            return Err(Error::InvalidArgument(format!(
                "unbiased HSIC needs at least 4 samples, got {n}"
            )));
        }
        let mut k = matmul_transposed(x, x)?;
        for i in 0..n {
            k.set(i, i, 0.0);
        }
        let row_sums: Vec<f64> = k.iter_rows().map(|r| r.iter().sum()).collect();
        let total = row_sums.iter().sum();
        Ok(Self { k, row_sums, total })
    }

    pub fn n(&self) -> usize {
        self.k.rows()
    }
}

/// Unbiased HSIC of two zero-diagonal Gram matrices.
pub fn hsic_unbiased(k: &CenteredGram, l: &CenteredGram) -> Result<f64> {
    let n = k.n();
    if l.n() != n {
        return Err(Error::shape("hsic_unbiased", format!("{n} vs {} samples", l.n())));
    }
    let nf = n as f64;
    // both matrices are symmetric, so tr(KL) = Σ K∘L and 1ᵀKL1 = (K1)·(L1)
    let trace: f64 = k.k.data().iter().zip(l.k.data()).map(|(a, b)| a * b).sum();
    let cross: f64 = k.row_sums.iter().zip(&l.row_sums).map(|(a, b)| a * b).sum();
    let value = trace + k.total * l.total / ((nf - 1.0) * (nf - 2.0)) - 2.0 / (nf - 2.0) * cross;
    Ok(value / (nf * (nf - 3.0)))
}

fn cka_from_grams(k: &CenteredGram, l: &CenteredGram, hkk: f64, hll: f64) -> Result<f64> {
    if !(hkk > 0.0) || !(hll > 0.0) {
        return Err(Error::Degenerate(
            "CKA undefined: a representation has non-positive self-HSIC".into(),
        ));
    }
    Ok(hsic_unbiased(k, l)? / (hkk * hll).sqrt())
}

/// Linear CKA between paired `n × d` and `n × d′` feature matrices.
pub fn cka_unbiased(x: &Matrix<f64>, y: &Matrix<f64>) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::shape("cka_unbiased", format!("{} vs {} samples", x.rows(), y.rows())));
    }
    let k = CenteredGram::new(x)?;
    let l = CenteredGram::new(y)?;
    let hkk = hsic_unbiased(&k, &k)?;
    let hll = hsic_unbiased(&l, &l)?;
    cka_from_grams(&k, &l, hkk, hll)
}

#[derive(Debug, Clone, Serialize)]
pub struct CkaMatrix {
    /// Residual snapshot index per row/column: −1 is the embedding,
    /// `i` is the output of block `i`.
    pub layers: Vec<i64>,
    pub values: Vec<Vec<f64>>,
    pub n_samples: usize,
}

impl CkaMatrix {
    /// CKA over every pair of feature sets (one per layer).
    pub fn from_features(layers: Vec<i64>, features: &[Matrix<f64>]) -> Result<Self> {
        let grams = features.iter().map(CenteredGram::new).collect::<Result<Vec<_>>>()?;
        let selves = grams
            .iter()
            .map(|g| hsic_unbiased(g, g))
            .collect::<Result<Vec<_>>>()?;
        let n = grams.len();
        let mut values = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let v = if i == j {
                    if !(selves[i] > 0.0) {
                        return Err(Error::Degenerate(format!(
                            "layer {} features have non-positive self-HSIC",
                            layers[i]
                        )));
                    }
                    1.0
                } else {
                    cka_from_grams(&grams[i], &grams[j], selves[i], selves[j])?
                };
                values[i][j] = v;
                values[j][i] = v;
            }
        }
        Ok(Self {
            layers,
            values,
            n_samples: features.first().map_or(0, Matrix::rows),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer");
        for l in &self.layers {
            out.push_str(&format!(",{l}"));
        }
        out.push('\n');
        for (l, row) in self.layers.iter().zip(&self.values) {
            out.push_str(&l.to_string());
            for v in row {
                out.push_str(&format!(",{v:.9}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Layer-by-layer CKA of final-position residuals, one sample per
/// non-overlapping window of the corpus.
pub fn cka_layer_matrix(
    w: &TransformerWeights,
    corpus: &TokenStream,
    n_seqs: usize,
    window: usize,
    include_embedding: bool,
) -> Result<CkaMatrix> {
    if n_seqs < 4 {
        return Err(Error::InvalidArgument(format!("CKA needs at least 4 sequences, got {n_seqs}")));
    }
    let windows: Vec<&[u32]> = corpus.windows(window).take(n_seqs).collect();
    if windows.len() < n_seqs {
        return Err(Error::InvalidArgument(format!(
            "corpus holds {} windows of {window} tokens, need {n_seqs}",
            windows.len()
        )));
    }
    let schedule = LayerSchedule::identity(w.config.n_layers)?;
    let capture = Capture {
        residuals: true,
        ..Capture::none()
    };
    let n_snap = w.config.n_layers + 1;
    let d = w.config.d_model;
    let mut features = vec![Matrix::<f64>::zeros(n_seqs, d); n_snap];
    let traces = crate::par_map(&windows, |win| w.forward(win, &schedule, capture))?;
    for (s, trace) in traces.iter().enumerate() {
        for (snap, res) in trace.residuals()?.iter().enumerate() {
            let last = res.row(res.rows() - 1);
            for (dst, &v) in features[snap].row_mut(s).iter_mut().zip(last) {
                *dst = v as f64;
            }
        }
    }
    let start = usize::from(!include_embedding);
    let layers = (start..n_snap).map(|i| i as i64 - 1).collect();
    CkaMatrix::from_features(layers, &features[start..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, d: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn self_similarity_is_one() {
        let x = random(10, 4, 1);
        assert!((cka_unbiased(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_small_and_degenerate() {
        let x = random(3, 4, 1);
        assert!(cka_unbiased(&x, &x).is_err());
        let zero = Matrix::<f64>::zeros(6, 3);
        assert!(matches!(cka_unbiased(&zero, &random(6, 3, 2)), Err(Error::Degenerate(_))));
        assert!(cka_unbiased(&random(6, 3, 1), &random(7, 3, 1)).is_err());
    }

    #[test]
    fn duplicated_layers_are_fully_similar() {
        let a = random(12, 5, 3);
        let b = random(12, 7, 4);
        let m = CkaMatrix::from_features(vec![0, 1, 2], &[a.clone(), b, a]).unwrap();
        assert!((m.values[0][2] - 1.0).abs() < 1e-6);
        for i in 0..3 {
            assert_eq!(m.values[i][i], 1.0);
            for j in 0..3 {
                assert_eq!(m.values[i][j], m.values[j][i]);
            }
        }
        let csv = m.to_csv();
        assert!(csv.starts_with("layer,0,1,2\n"));
    }
}
