use crate::error::{Error, Result};
use crate::model::ForwardTrace;

/// Per executed step: mean over heads and query positions `t ≥ 1` of the
/// attention mass on the `k` tokens immediately before `t` (self excluded).
pub fn attention_locality(trace: &ForwardTrace, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("locality window k must be ≥ 1".into()));
    }
    trace
        .attention()?
        .iter()
        .map(|heads| {
            let mut total = 0.0;
            let mut count = 0usize;
            for pattern in heads {
                for t in 1..pattern.rows() {
                    let row = pattern.row(t);
                    let lo = t.saturating_sub(k);
                    total += row[lo..t].iter().map(|&a| a as f64).sum::<f64>();
                    count += 1;
                }
            }
            Ok(if count == 0 { 0.0 } else { total / count as f64 })
        })
        .collect()
}

/// Per executed step: mean Euclidean norm of the MLP output over positions.
pub fn mlp_norms(trace: &ForwardTrace) -> Result<Vec<f64>> {
    Ok(trace
        .mlp_out_norms()?
        .iter()
        .map(|norms| {
            if norms.is_empty() {
                0.0
            } else {
                norms.iter().map(|&n| n as f64).sum::<f64>() / norms.len() as f64
            }
        })
        .collect())
}
