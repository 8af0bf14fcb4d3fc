//! Parameter tensors, safetensors I/O with GPT-2 naming, and the
//! layer-norm folding / centering preprocessing.
//!
//! Every projection is stored output-major (`out × in`) so that a layer is
//! `y = x · Wᵀ + b`. GPT-2 checkpoints store `Conv1D` weights input-major;
//! those are transposed once at load.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numkernel::{add_row_bias, matmul_transposed, Matrix};

const PREPROCESSED_KEY: &str = "stagescope.preprocessed";

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = matmul_transposed(x, &self.weight)?;
        add_row_bias(&mut y, &self.bias)?;
        Ok(y)
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    /// `W ← W·diag(γ)`, `b ← b + W·β`.
    fn fold_norm(&mut self, ln: &mut LayerNormParams) {
        let (rows, cols) = self.weight.shape();
        for r in 0..rows {
            let row = self.weight.row_mut(r);
            let shift: f64 = row
                .iter()
                .zip(&ln.beta)
                .map(|(&w, &b)| w as f64 * b as f64)
                .sum();
            self.bias[r] = (self.bias[r] as f64 + shift) as f32;
            for c in 0..cols {
                row[c] *= ln.gamma[c];
            }
        }
        ln.gamma.iter_mut().for_each(|g| *g = 1.0);
        ln.beta.iter_mut().for_each(|b| *b = 0.0);
    }

    /// Removes each row's mean over the input dimension.
    fn center_rows(&mut self) {
        center_rows(&mut self.weight);
    }

    /// Removes the mean over the output dimension from each column and the
    /// bias, so every write has zero mean across the residual.
    fn center_columns(&mut self) {
        center_columns(&mut self.weight);
        center_vec(&mut self.bias);
    }
}

fn center_rows(m: &mut Matrix) {
    for r in 0..m.rows() {
        center_vec(m.row_mut(r));
    }
}

fn center_columns(m: &mut Matrix) {
    let (rows, cols) = m.shape();
    if rows == 0 {
        return;
    }
    let mut means = vec![0.0f64; cols];
    for r in 0..rows {
        for (acc, &v) in means.iter_mut().zip(m.row(r)) {
            *acc += v as f64;
        }
    }
    means.iter_mut().for_each(|v| *v /= rows as f64);
    for r in 0..rows {
        for (v, &mu) in m.row_mut(r).iter_mut().zip(&means) {
            *v = (*v as f64 - mu) as f32;
        }
    }
}

fn center_vec(v: &mut [f32]) {
    if v.is_empty() {
        return;
    }
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x = (*x as f64 - mean) as f32);
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

impl LayerNormParams {
    pub fn identity(d: usize) -> Self {
        Self {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNormParams,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNormParams,
    /// `d_mlp × d_model`.
    pub mlp_in: Linear,
    /// `d_model × d_mlp`.
    pub mlp_out: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerWeights {
    pub config: ModelConfig,
    /// `V × d_model`.
    pub embed: Matrix,
    /// `max_positions × d_model`.
    pub pos_embed: Matrix,
    pub blocks: Vec<Block>,
    pub ln_final: LayerNormParams,
    /// `V × d_model`, with a vocabulary bias that is zero until folding.
    pub unembed: Linear,
    pub preprocessed: bool,
}

fn gpt2_names(i: usize) -> [String; 12] {
    [
        format!("h.{i}.ln_1.weight"),
        format!("h.{i}.ln_1.bias"),
        format!("h.{i}.attn.c_attn.weight"),
        format!("h.{i}.attn.c_attn.bias"),
        format!("h.{i}.attn.c_proj.weight"),
        format!("h.{i}.attn.c_proj.bias"),
        format!("h.{i}.ln_2.weight"),
        format!("h.{i}.ln_2.bias"),
        format!("h.{i}.mlp.c_fc.weight"),
        format!("h.{i}.mlp.c_fc.bias"),
        format!("h.{i}.mlp.c_proj.weight"),
        format!("h.{i}.mlp.c_proj.bias"),
    ]
}

struct TensorSource<'a> {
    st: SafeTensors<'a>,
    prefix: &'static str,
}

impl<'a> TensorSource<'a> {
    fn new(st: SafeTensors<'a>) -> Self {
        let prefix = if st.names().iter().any(|n| n.starts_with("transformer.")) {
            "transformer."
        } else {
            ""
        };
        Self { st, prefix }
    }

    fn lookup(&self, name: &str) -> Option<TensorView<'_>> {
        self.st
            .tensor(&format!("{}{name}", self.prefix))
            .or_else(|_| self.st.tensor(name))
            .ok()
    }

    fn has(&self, name: &str) -> bool {
        self.lookup(name).is_some()
    }

    fn get(&self, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
        let view = self
            .lookup(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        if view.shape() != shape {
            return Err(Error::TensorShape {
                name: name.to_string(),
                expected: shape.to_vec(),
                actual: view.shape().to_vec(),
            });
        }
        decode_floats(name, view.dtype(), view.data())
    }

    fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        Matrix::new(rows, cols, self.get(name, &[rows, cols])?)
    }
}

fn decode_floats(name: &str, dtype: Dtype, bytes: &[u8]) -> Result<Vec<f32>> {
    Ok(match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as f32)
            .collect(),
        Dtype::F16 => bytes
            .chunks_exact(2)
            .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect(),
        Dtype::BF16 => bytes
            .chunks_exact(2)
            .map(|c| half::bf16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect(),
        other => {
            return Err(Error::UnsupportedDtype {
                name: name.to_string(),
                dtype: format!("{other:?}"),
            })
        }
    })
}

/// Splits an input-major fused `d × 3d` QKV weight into three `d × d`
/// output-major projections.
fn split_qkv(w: &Matrix, b: &[f32], d: usize) -> [Linear; 3] {
    std::array::from_fn(|part| Linear {
        weight: Matrix::from_fn(d, d, |out, inp| w.get(inp, part * d + out)),
        bias: b[part * d..(part + 1) * d].to_vec(),
    })
}

impl TransformerWeights {
    /// Loads a GPT-2-convention safetensors container.
    pub fn from_safetensors_bytes(bytes: &[u8], config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (_, meta) = SafeTensors::read_metadata(bytes)?;
        let preprocessed = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get(PREPROCESSED_KEY))
            .is_some_and(|v| v == "true");
        let src = TensorSource::new(SafeTensors::deserialize(bytes)?);
        let ModelConfig {
            d_model: d,
            d_mlp,
            vocab_size: v,
            max_positions,
            n_layers,
            ..
        } = *config;

        let embed = src.matrix("wte.weight", v, d)?;
        let pos_embed = src.matrix("wpe.weight", max_positions, d)?;
        let mut blocks = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let n = gpt2_names(i);
            // orientation audit: fused QKV must be exactly input-major
            let c_attn = src.matrix(&n[2], d, 3 * d)?;
            let [q, k, vv] = split_qkv(&c_attn, &src.get(&n[3], &[3 * d])?, d);
            let conv = |w: &str, b: &str, inp: usize, out: usize| -> Result<Linear> {
                Ok(Linear {
                    weight: src.matrix(w, inp, out)?.transpose(),
                    bias: src.get(b, &[out])?,
                })
            };
            blocks.push(Block {
                ln1: LayerNormParams {
                    gamma: src.get(&n[0], &[d])?,
                    beta: src.get(&n[1], &[d])?,
                },
                q,
                k,
                v: vv,
                o: conv(&n[4], &n[5], d, d)?,
                ln2: LayerNormParams {
                    gamma: src.get(&n[6], &[d])?,
                    beta: src.get(&n[7], &[d])?,
                },
                mlp_in: conv(&n[8], &n[9], d, d_mlp)?,
                mlp_out: conv(&n[10], &n[11], d_mlp, d)?,
            });
        }
        let ln_final = LayerNormParams {
            gamma: src.get("ln_f.weight", &[d])?,
            beta: src.get("ln_f.bias", &[d])?,
        };
        let unembed_weight = if src.has("lm_head.weight") {
            src.matrix("lm_head.weight", v, d)?
        } else {
            embed.clone()
        };
        let unembed_bias = if src.has("lm_head.bias") {
            src.get("lm_head.bias", &[v])?
        } else {
            vec![0.0; v]
        };
        Ok(Self {
            config: config.clone(),
            embed,
            pos_embed,
            blocks,
            ln_final,
            unembed: Linear {
                weight: unembed_weight,
                bias: unembed_bias,
            },
            preprocessed,
        })
    }

    pub fn load(path: &Path, config: &ModelConfig) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_safetensors_bytes(&bytes, config)
    }

    /// Serializes with GPT-2 tensor names; `lm_head.*` is written only when
    /// the unembedding is not tied to the embedding.
    pub fn to_safetensors_bytes(&self) -> Result<Vec<u8>> {
        let d = self.config.d_model;
        let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = vec![
            ("wte.weight".into(), vec![self.embed.rows(), d], self.embed.data().to_vec()),
            (
                "wpe.weight".into(),
                vec![self.pos_embed.rows(), d],
                self.pos_embed.data().to_vec(),
            ),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let n = gpt2_names(i);
            let mut fused = Matrix::zeros(d, 3 * d);
            for (part, lin) in [&b.q, &b.k, &b.v].into_iter().enumerate() {
                for out in 0..d {
                    for inp in 0..d {
                        fused.set(inp, part * d + out, lin.weight.get(out, inp));
                    }
                }
            }
            let fused_bias = [b.q.bias.as_slice(), &b.k.bias, &b.v.bias].concat();
            let conv = |lin: &Linear| lin.weight.transpose();
            let o = conv(&b.o);
            let fc = conv(&b.mlp_in);
            let proj = conv(&b.mlp_out);
            tensors.extend([
                (n[0].clone(), vec![d], b.ln1.gamma.clone()),
                (n[1].clone(), vec![d], b.ln1.beta.clone()),
                (n[2].clone(), vec![d, 3 * d], fused.into_data()),
                (n[3].clone(), vec![3 * d], fused_bias),
                (n[4].clone(), vec![d, d], o.into_data()),
                (n[5].clone(), vec![d], b.o.bias.clone()),
                (n[6].clone(), vec![d], b.ln2.gamma.clone()),
                (n[7].clone(), vec![d], b.ln2.beta.clone()),
                (n[8].clone(), vec![fc.rows(), fc.cols()], fc.into_data()),
                (n[9].clone(), vec![b.mlp_in.bias.len()], b.mlp_in.bias.clone()),
                (n[10].clone(), vec![proj.rows(), proj.cols()], proj.into_data()),
                (n[11].clone(), vec![d], b.mlp_out.bias.clone()),
            ]);
        }
        tensors.push(("ln_f.weight".into(), vec![d], self.ln_final.gamma.clone()));
        tensors.push(("ln_f.bias".into(), vec![d], self.ln_final.beta.clone()));
        if self.unembed.weight != self.embed {
            tensors.push((
                "lm_head.weight".into(),
                vec![self.unembed.weight.rows(), d],
                self.unembed.weight.data().to_vec(),
            ));
        }
        if self.unembed.bias.iter().any(|&b| b != 0.0) {
            tensors.push((
                "lm_head.bias".into(),
                vec![self.unembed.bias.len()],
                self.unembed.bias.clone(),
            ));
        }

        let raw: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
            .into_iter()
            .map(|(n, s, v)| (n, s, v.iter().flat_map(|x| x.to_le_bytes()).collect()))
            .collect();
        let views = raw
            .iter()
            .map(|(n, s, b)| Ok((n.as_str(), TensorView::new(Dtype::F32, s.clone(), b)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut meta = HashMap::new();
        meta.insert("format".to_string(), "pt".to_string());
        meta.insert(PREPROCESSED_KEY.to_string(), self.preprocessed.to_string());
        Ok(safetensors::serialize(views, &Some(meta))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_safetensors_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Folds layer-norm scales/shifts into the reading weights, centers the
    /// reading weights per row, the writing weights per column, and the
    /// unembedding across the vocabulary.
    ///
    /// Output distributions are unchanged: every removed component is either
    /// along the all-ones residual direction (erased by the next layer norm)
    /// or a constant logit offset (erased by softmax).
    pub fn preprocess(mut self) -> Result<Self> {
        if self.preprocessed {
            return Err(Error::AlreadyPreprocessed);
        }
        center_rows(&mut self.embed);
        center_rows(&mut self.pos_embed);
        for b in &mut self.blocks {
            let d = b.ln1.gamma.len();
            let ln1 = std::mem::replace(&mut b.ln1, LayerNormParams::identity(d));
            for lin in [&mut b.q, &mut b.k, &mut b.v] {
                lin.fold_norm(&mut ln1.clone());
                lin.center_rows();
            }
            b.mlp_in.fold_norm(&mut b.ln2);
            b.mlp_in.center_rows();
            b.o.center_columns();
            b.mlp_out.center_columns();
        }
        self.unembed.fold_norm(&mut self.ln_final);
        self.unembed.center_rows();
        self.unembed.center_columns();
        self.preprocessed = true;
        Ok(self)
    }

    /// Gaussian-initialized weights for experiments and tests. Layer norms
    /// get random (non-trivial) scales and shifts.
    pub fn random(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Normal::new(0.0f32, 0.2).expect("valid sigma");
        let small = Normal::new(0.0f32, 0.05).expect("valid sigma");
        let mut mat = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| w.sample(&mut rng));
        let ModelConfig {
            d_model: d,
            d_mlp,
            vocab_size: v,
            max_positions,
            ..
        } = *config;
        let embed = mat(v, d);
        let pos_embed = mat(max_positions, d);
        let mut blocks = Vec::new();
        for _ in 0..config.n_layers {
            blocks.push(Block {
                ln1: LayerNormParams::identity(d),
                q: Linear { weight: mat(d, d), bias: vec![0.0; d] },
                k: Linear { weight: mat(d, d), bias: vec![0.0; d] },
                v: Linear { weight: mat(d, d), bias: vec![0.0; d] },
                o: Linear { weight: mat(d, d), bias: vec![0.0; d] },
                ln2: LayerNormParams::identity(d),
                mlp_in: Linear { weight: mat(d_mlp, d), bias: vec![0.0; d_mlp] },
                mlp_out: Linear { weight: mat(d, d_mlp), bias: vec![0.0; d] },
            });
        }
        let unembed = embed.clone();
        let mut out = Self {
            config: config.clone(),
            embed,
            pos_embed,
            blocks,
            ln_final: LayerNormParams::identity(d),
            unembed: Linear { weight: unembed, bias: vec![0.0; v] },
            preprocessed: false,
        };
        let perturb = |ln: &mut LayerNormParams, rng: &mut ChaCha8Rng| {
            ln.gamma.iter_mut().for_each(|g| *g = 1.0 + 4.0 * small.sample(rng));
            ln.beta.iter_mut().for_each(|b| *b = small.sample(rng));
        };
        for b in &mut out.blocks {
            perturb(&mut b.ln1, &mut rng);
            perturb(&mut b.ln2, &mut rng);
            for bias in [&mut b.q.bias, &mut b.k.bias, &mut b.v.bias, &mut b.o.bias, &mut b.mlp_in.bias, &mut b.mlp_out.bias] {
                bias.iter_mut().for_each(|x| *x = small.sample(&mut rng));
            }
        }
        perturb(&mut out.ln_final, &mut rng);
        Ok(out)
    }
}
