//! Measurements comparing runs and characterizing depth.

mod cka;
mod distribution;
mod locality;
mod report;
mod swapsim;

pub use cka::{cka_layer_matrix, cka_unbiased, hsic_unbiased, CenteredGram, CkaMatrix};
pub use distribution::{
    cross_entropy, entropy, kl_divergence, top1_agreement, TokenDistribution, KL_Q_FLOOR,
};
pub use locality::{attention_locality, mlp_norms};
pub use report::{InterventionReport, InterventionRow, MetricAccumulator, KL_DIRECTION};
pub use swapsim::{
    swap_similarity_from_traces, swap_similarity_triplet, Component, SwapSimilarity,
};

pub(crate) use distribution::{entropy_from_log_probs, kl_from_log_probs};
