//! Streaming accumulators and CSV rows for intervention sweeps.

use serde::Serialize;

use super::distribution::{entropy_from_log_probs, kl_from_log_probs, KL_Q_FLOOR};
use crate::error::{Error, Result};
use crate::numkernel::{argmax, log_softmax_f64, Matrix};
use crate::schedule::ScheduleKind;

pub const KL_DIRECTION: &str = "KL(P_baseline || P_intervened)";

/// Running sums over positions; merge is associative.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricAccumulator {
    pub n_positions: u64,
    pub kl_sum: f64,
    pub agree: u64,
    pub entropy_sum: f64,
    pub loss_sum: f64,
    pub n_loss: u64,
}

impl MetricAccumulator {
    /// Adds one window. `baseline` and `intervened` are `T × V` logits for
    /// `tokens`; position `t < T−1` is scored against `tokens[t+1]`.
    pub fn add_window(&mut self, baseline: &Matrix, intervened: &Matrix, tokens: &[u32]) -> Result<()> {
        if baseline.shape() != intervened.shape() || baseline.rows() != tokens.len() {
            return Err(Error::shape(
                "MetricAccumulator::add_window",
                format!(
                    "baseline {:?}, intervened {:?}, {} tokens",
                    baseline.shape(),
                    intervened.shape(),
                    tokens.len()
                ),
            ));
        }
        for t in 0..tokens.len() {
            let (b, i) = (baseline.row(t), intervened.row(t));
            let lp = log_softmax_f64(b);
            let lq = log_softmax_f64(i);
            self.kl_sum += kl_from_log_probs(&lp, &lq);
            self.entropy_sum += entropy_from_log_probs(&lq);
            self.agree += u64::from(argmax(b) == argmax(i));
            self.n_positions += 1;
            if let Some(&target) = tokens.get(t + 1) {
                self.loss_sum -= lq[target as usize];
                self.n_loss += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        self.n_positions += other.n_positions;
        self.kl_sum += other.kl_sum;
        self.agree += other.agree;
        self.entropy_sum += other.entropy_sum;
        self.loss_sum += other.loss_sum;
        self.n_loss += other.n_loss;
    }

    pub fn mean_kl(&self) -> f64 {
        self.kl_sum / self.n_positions.max(1) as f64
    }

    pub fn agreement(&self) -> f64 {
        self.agree as f64 / self.n_positions.max(1) as f64
    }

    pub fn mean_entropy(&self) -> f64 {
        self.entropy_sum / self.n_positions.max(1) as f64
    }

    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.n_loss.max(1) as f64
    }

    pub fn finish(&self, kind: ScheduleKind, layer: Option<usize>) -> Result<InterventionRow> {
        if self.n_positions == 0 {
            return Err(Error::InvalidArgument(format!("no tokens scored for {kind}")));
        }
        Ok(InterventionRow {
            schedule_kind: kind,
            layer,
            kl_nats: self.mean_kl(),
            top1_agreement: self.agreement(),
            entropy_nats: self.mean_entropy(),
            loss_nats: self.mean_loss(),
            n_tokens: self.n_positions,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterventionRow {
    pub schedule_kind: ScheduleKind,
    pub layer: Option<usize>,
    pub kl_nats: f64,
    pub top1_agreement: f64,
    pub entropy_nats: f64,
    pub loss_nats: f64,
    pub n_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterventionReport {
    pub kl_direction: &'static str,
    pub kl_q_floor: f64,
    pub rows: Vec<InterventionRow>,
}

impl InterventionReport {
    pub fn new(rows: Vec<InterventionRow>) -> Self {
        Self {
            kl_direction: KL_DIRECTION,
            kl_q_floor: KL_Q_FLOOR,
            rows,
        }
    }

    pub fn row(&self, kind: ScheduleKind, layer: Option<usize>) -> Option<&InterventionRow> {
        self.rows
            .iter()
            .find(|r| r.schedule_kind == kind && r.layer == layer)
    }

    /// `schedule_kind,layer,kl_nats,top1_agreement,entropy_nats,loss_nats,n_tokens`;
    /// the layer field is empty for the identity row.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("schedule_kind,layer,kl_nats,top1_agreement,entropy_nats,loss_nats,n_tokens\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.9},{:.9},{:.9},{:.9},{}\n",
                r.schedule_kind,
                r.layer.map(|l| l.to_string()).unwrap_or_default(),
                r.kl_nats,
                r.top1_agreement,
                r.entropy_nats,
                r.loss_nats,
                r.n_tokens
            ));
        }
        out
    }
}
