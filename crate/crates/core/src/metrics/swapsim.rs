//! Cosine diagnostics for an adjacent swap at layer `l`.
//!
//! * self: block `l+1` moved to step `l` vs block `l+1` in the baseline.
//! * index: block `l+1` at step `l` vs block `l` in the baseline (the
//!   output it replaced).
//! * adjacent: blocks `l` and `l+1` in the baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Capture, ForwardTrace, TransformerWeights};
use crate::numkernel::{cosine, Matrix};
use crate::schedule::LayerSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Attention,
    Mlp,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::Attention => "attention",
            Component::Mlp => "mlp",
        }
    }
}

/// Mean cosines; `None` when every position had a zero output vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwapSimilarity {
    pub self_sim: Option<f64>,
    pub index_sim: Option<f64>,
    pub adjacent_sim: Option<f64>,
}

fn outputs(trace: &ForwardTrace, c: Component) -> Result<&[Matrix]> {
    match c {
        Component::Attention => trace.attn_outputs(),
        Component::Mlp => trace.mlp_outputs(),
    }
}

fn mean_cosine(a: &Matrix, b: &Matrix) -> Result<Option<f64>> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in a.iter_rows().zip(b.iter_rows()) {
        if let Some(c) = cosine(x, y)? {
            sum += c;
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

pub fn swap_similarity_triplet(
    w: &TransformerWeights,
    tokens: &[u32],
    layer: usize,
    component: Component,
) -> Result<SwapSimilarity> {
    let n = w.config.n_layers;
    let swapped_schedule = LayerSchedule::swap(n, layer).map_err(|_| {
        Error::InvalidArgument(format!("swap similarity needs 0 ≤ l ≤ {}, got {layer}", n.saturating_sub(2)))
    })?;
    let capture = Capture {
        component_outputs: true,
        ..Capture::none()
    };
    let base = w.forward(tokens, &LayerSchedule::identity(n)?, capture)?;
    let swapped = w.forward(tokens, &swapped_schedule, capture)?;
    swap_similarity_from_traces(&base, &swapped, layer, component)
}

/// Same triplet from an identity trace and a `swap(layer)` trace, both
/// captured with component outputs.
pub fn swap_similarity_from_traces(
    base: &ForwardTrace,
    swapped: &ForwardTrace,
    layer: usize,
    component: Component,
) -> Result<SwapSimilarity> {
    let base_out = outputs(base, component)?;
    let swap_out = outputs(swapped, component)?;
    if layer + 1 >= base_out.len() || swap_out.len() != base_out.len() {
        return Err(Error::InvalidArgument(format!(
            "swap at {layer} does not fit traces of {} and {} steps",
            base_out.len(),
            swap_out.len()
        )));
    }
    // in the swapped run step `layer` executes block `layer + 1`
    let moved = &swap_out[layer];
    Ok(SwapSimilarity {
        self_sim: mean_cosine(moved, &base_out[layer + 1])?,
        index_sim: mean_cosine(moved, &base_out[layer])?,
        adjacent_sim: mean_cosine(&base_out[layer], &base_out[layer + 1])?,
    })
}
