use crate::error::{Error, Result};
use crate::numkernel::{argmax, log_softmax_f64, softmax_f64, Matrix};

/// Floor applied to the second argument of KL so single terms stay finite
/// (bounds each term at about 27.6 nats).
pub const KL_Q_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument("probabilities must be finite and non-negative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn from_logits(logits: &[f32]) -> Self {
        Self {
            probs: softmax_f64(logits),
        }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// `KL(p ‖ q)` in nats; zero-probability terms of `p` contribute nothing.
pub fn kl_divergence(p: &TokenDistribution, q: &TokenDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("kl_divergence", format!("{} vs {}", p.len(), q.len())));
    }
    Ok(p.probs
        .iter()
        .zip(&q.probs)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.max(KL_Q_FLOOR).ln()))
        .sum::<f64>()
        .max(0.0))
}

pub fn entropy(p: &TokenDistribution) -> f64 {
    -p.probs
        .iter()
        .filter(|&&pi| pi > 0.0)
        .map(|&pi| pi * pi.ln())
        .sum::<f64>()
}

/// `KL(p ‖ q)` from log-probabilities.
pub(crate) fn kl_from_log_probs(log_p: &[f64], log_q: &[f64]) -> f64 {
    let floor = KL_Q_FLOOR.ln();
    log_p
        .iter()
        .zip(log_q)
        .map(|(&lp, &lq)| {
            let p = lp.exp();
            if p > 0.0 {
                p * (lp - lq.max(floor))
            } else {
                0.0
            }
        })
        .sum::<f64>()
        .max(0.0)
}

pub(crate) fn entropy_from_log_probs(log_p: &[f64]) -> f64 {
    -log_p
        .iter()
        .map(|&lp| {
            let p = lp.exp();
            if p > 0.0 {
                p * lp
            } else {
                0.0
            }
        })
        .sum::<f64>()
}

/// Fraction of positions whose argmax agrees (ties go to the lowest id).
pub fn top1_agreement(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::shape(
            "top1_agreement",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    if a.rows() == 0 {
        return Err(Error::InvalidArgument("top1_agreement on zero positions".into()));
    }
    let same = a
        .iter_rows()
        .zip(b.iter_rows())
        .filter(|(x, y)| argmax(x) == argmax(y))
        .count();
    Ok(same as f64 / a.rows() as f64)
}

/// Mean `−ln p(target)` over rows; row `t` predicts `targets[t]`.
pub fn cross_entropy(logits: &Matrix, targets: &[u32]) -> Result<f64> {
    if logits.rows() != targets.len() {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} logit rows for {} targets", logits.rows(), targets.len()),
        ));
    }
    if targets.is_empty() {
        return Err(Error::InvalidArgument("cross_entropy on zero targets".into()));
    }
    let mut total = 0.0;
    for (row, &t) in logits.iter_rows().zip(targets) {
        let lp = log_softmax_f64(row);
        let v = lp.get(t as usize).ok_or(Error::TokenOutOfRange {
            id: t,
            vocab_size: lp.len(),
        })?;
        total -= v;
    }
    Ok(total / targets.len() as f64)
}
