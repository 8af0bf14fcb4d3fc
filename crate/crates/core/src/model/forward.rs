//! Schedule-driven forward pass with optional activation capture.

use super::weights::{Block, TransformerWeights};
use crate::error::{Error, Result};
use crate::metrics::TokenDistribution;
use crate::numkernel::{
    gelu_in_place, l2_norm, layer_norm_into, layer_norm_rows, matmul, matmul_transposed,
    softmax_in_place, Matrix,
};
use crate::schedule::LayerSchedule;

/// Which intermediates a forward pass records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capture {
    /// Final logits for every position (the unembedding dominates the cost
    /// for large vocabularies).
    pub logits: bool,
    /// Residual stream after the embedding and after every step.
    pub residuals: bool,
    /// Per step, per head `T × T` causal attention weights.
    pub attention: bool,
    /// Per step, per position Euclidean norm of the MLP output.
    pub mlp_norms: bool,
    /// Per step attention-output and MLP-output vectors.
    pub component_outputs: bool,
    /// Per step post-GELU MLP activations (`T × d_mlp`).
    pub mlp_activations: bool,
}

impl Default for Capture {
    fn default() -> Self {
        Self {
            logits: true,
            residuals: false,
            attention: false,
            mlp_norms: false,
            component_outputs: false,
            mlp_activations: false,
        }
    }
}

impl Capture {
    pub fn logits_only() -> Self {
        Self::default()
    }

    pub fn everything() -> Self {
        Self {
            logits: true,
            residuals: true,
            attention: true,
            mlp_norms: true,
            component_outputs: true,
            mlp_activations: true,
        }
    }

    pub fn none() -> Self {
        Self {
            logits: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub schedule: LayerSchedule,
    /// `len(schedule) + 1` snapshots, embedding first; each is `T × d_model`.
    pub residuals: Option<Vec<Matrix>>,
    /// `[step][head]` → `T × T`, rows sum to one, zero above the diagonal.
    pub attention: Option<Vec<Vec<Matrix>>>,
    pub mlp_out_norms: Option<Vec<Vec<f32>>>,
    pub attn_outputs: Option<Vec<Matrix>>,
    pub mlp_outputs: Option<Vec<Matrix>>,
    pub mlp_activations: Option<Vec<Matrix>>,
    /// `T × V`.
    pub logits: Option<Matrix>,
    pub capture: Capture,
}

impl ForwardTrace {
    pub fn logits(&self) -> Result<&Matrix> {
        self.logits.as_ref().ok_or(Error::NotCaptured("logits"))
    }

    pub fn residuals(&self) -> Result<&[Matrix]> {
        self.residuals.as_deref().ok_or(Error::NotCaptured("residuals"))
    }

    pub fn attention(&self) -> Result<&[Vec<Matrix>]> {
        self.attention.as_deref().ok_or(Error::NotCaptured("attention"))
    }

    pub fn mlp_out_norms(&self) -> Result<&[Vec<f32>]> {
        self.mlp_out_norms.as_deref().ok_or(Error::NotCaptured("MLP output norms"))
    }

    pub fn attn_outputs(&self) -> Result<&[Matrix]> {
        self.attn_outputs.as_deref().ok_or(Error::NotCaptured("attention outputs"))
    }

    pub fn mlp_outputs(&self) -> Result<&[Matrix]> {
        self.mlp_outputs.as_deref().ok_or(Error::NotCaptured("MLP outputs"))
    }

    pub fn mlp_activations(&self) -> Result<&[Matrix]> {
        self.mlp_activations.as_deref().ok_or(Error::NotCaptured("MLP activations"))
    }

    pub fn n_positions(&self) -> usize {
        self.logits
            .as_ref()
            .map(Matrix::rows)
            .or_else(|| self.residuals.as_ref().map(|r| r[0].rows()))
            .unwrap_or(0)
    }
}

struct BlockOutput {
    attn_out: Matrix,
    pattern: Option<Vec<Matrix>>,
    mlp_out: Matrix,
    activations: Matrix,
}

fn causal_attention(
    block: &Block,
    x: &Matrix,
    n_heads: usize,
    d_head: usize,
    eps: f32,
    keep_pattern: bool,
) -> Result<(Matrix, Option<Vec<Matrix>>)> {
    let t = x.rows();
    let h = layer_norm_rows(x, &block.ln1.gamma, &block.ln1.beta, eps)?;
    let q = block.q.forward(&h)?;
    let k = block.k.forward(&h)?;
    let v = block.v.forward(&h)?;
    let scale = 1.0 / (d_head as f32).sqrt();
    let mut z = Matrix::zeros(t, n_heads * d_head);
    let mut patterns = keep_pattern.then(|| Vec::with_capacity(n_heads));
    for head in 0..n_heads {
        let off = head * d_head;
        let qh = q.column_block(off, d_head);
        let kh = k.column_block(off, d_head);
        let vh = v.column_block(off, d_head);
        let mut scores = matmul_transposed(&qh, &kh)?;
        for i in 0..t {
            let row = scores.row_mut(i);
            for (j, s) in row.iter_mut().enumerate() {
                if j > i {
                    *s = f32::NEG_INFINITY;
                } else {
                    *s *= scale;
                }
            }
            softmax_in_place(&mut row[..=i]);
            row[i + 1..].iter_mut().for_each(|s| *s = 0.0);
        }
        let zh = matmul(&scores, &vh)?;
        for i in 0..t {
            z.row_mut(i)[off..off + d_head].copy_from_slice(zh.row(i));
        }
        if let Some(p) = patterns.as_mut() {
            p.push(scores);
        }
    }
    Ok((block.o.forward(&z)?, patterns))
}

fn run_block(
    w: &TransformerWeights,
    block: &Block,
    x: &mut Matrix,
    keep_pattern: bool,
) -> Result<BlockOutput> {
    let cfg = &w.config;
    let (attn_out, pattern) =
        causal_attention(block, x, cfg.n_heads, cfg.d_head, cfg.ln_eps, keep_pattern)?;
    add_in_place(x, &attn_out);
    let h = layer_norm_rows(x, &block.ln2.gamma, &block.ln2.beta, cfg.ln_eps)?;
    let mut activations = block.mlp_in.forward(&h)?;
    gelu_in_place(activations.data_mut());
    let mlp_out = block.mlp_out.forward(&activations)?;
    add_in_place(x, &mlp_out);
    Ok(BlockOutput {
        attn_out,
        pattern,
        mlp_out,
        activations,
    })
}

fn add_in_place(x: &mut Matrix, y: &Matrix) {
    for (a, b) in x.data_mut().iter_mut().zip(y.data()) {
        *a += b;
    }
}

impl TransformerWeights {
    /// Token plus window-relative position embeddings.
    pub fn embed_tokens(&self, tokens: &[u32]) -> Result<Matrix> {
        let cfg = &self.config;
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("empty token window".into()));
        }
        if tokens.len() > cfg.max_positions {
            return Err(Error::InvalidArgument(format!(
                "window of {} tokens exceeds max_positions {}",
                tokens.len(),
                cfg.max_positions
            )));
        }
        let mut x = Matrix::zeros(tokens.len(), cfg.d_model);
        for (pos, &tok) in tokens.iter().enumerate() {
            if tok as usize >= cfg.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id: tok,
                    vocab_size: cfg.vocab_size,
                });
            }
            let row = x.row_mut(pos);
            for ((o, &e), &p) in row
                .iter_mut()
                .zip(self.embed.row(tok as usize))
                .zip(self.pos_embed.row(pos))
            {
                *o = e + p;
            }
        }
        Ok(x)
    }

    /// Runs the blocks named by `schedule` in order over one token window.
    pub fn forward(
        &self,
        tokens: &[u32],
        schedule: &LayerSchedule,
        capture: Capture,
    ) -> Result<ForwardTrace> {
        self.config.ensure_supported()?;
        schedule.validate(self.config.n_layers)?;
        let mut x = self.embed_tokens(tokens)?;

        let n_steps = schedule.len();
        fn with<T>(on: bool, n: usize) -> Option<Vec<T>> {
            on.then(|| Vec::with_capacity(n + 1))
        }
        let mut residuals = with(capture.residuals, n_steps);
        let mut attention = with(capture.attention, n_steps);
        let mut mlp_norms = with(capture.mlp_norms, n_steps);
        let mut attn_outputs = with(capture.component_outputs, n_steps);
        let mut mlp_outputs = with(capture.component_outputs, n_steps);
        let mut activations = with(capture.mlp_activations, n_steps);

        if let Some(r) = residuals.as_mut() {
            r.push(x.clone());
        }
        for &b in schedule.steps() {
            let out = run_block(self, &self.blocks[b], &mut x, capture.attention)?;
            if let Some(r) = residuals.as_mut() {
                r.push(x.clone());
            }
            if let (Some(a), Some(p)) = (attention.as_mut(), out.pattern) {
                a.push(p);
            }
            if let Some(n) = mlp_norms.as_mut() {
                n.push(out.mlp_out.iter_rows().map(|r| l2_norm(r) as f32).collect());
            }
            if let Some(a) = attn_outputs.as_mut() {
                a.push(out.attn_out);
            }
            if let Some(m) = mlp_outputs.as_mut() {
                m.push(out.mlp_out);
            }
            if let Some(a) = activations.as_mut() {
                a.push(out.activations);
            }
        }
        let logits = if capture.logits {
            Some(self.lens_logits(&x)?)
        } else {
            None
        };
        Ok(ForwardTrace {
            schedule: schedule.clone(),
            residuals,
            attention,
            mlp_out_norms: mlp_norms,
            attn_outputs,
            mlp_outputs,
            mlp_activations: activations,
            logits,
            capture,
        })
    }

    /// `unembed(final_ln(x))` for each row of `x`.
    pub fn lens_logits(&self, x: &Matrix) -> Result<Matrix> {
        let h = layer_norm_rows(x, &self.ln_final.gamma, &self.ln_final.beta, self.config.ln_eps)?;
        self.unembed.forward(&h)
    }

    /// Next-token distribution read off a single residual vector.
    pub fn logit_lens(&self, residual: &[f32]) -> Result<TokenDistribution> {
        let mut h = vec![0.0; residual.len()];
        layer_norm_into(
            residual,
            &self.ln_final.gamma,
            &self.ln_final.beta,
            self.config.ln_eps,
            &mut h,
        )?;
        let row = Matrix::new(1, h.len(), h)?;
        let logits = self.unembed.forward(&row)?;
        Ok(TokenDistribution::from_logits(logits.row(0)))
    }
}
