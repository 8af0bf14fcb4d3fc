//! Layer-schedule inference and depth-wise analysis for GPT-2-class
//! decoder-only transformers.
//!
//! The engine runs any ordering of transformer blocks (drop, adjacent
//! swap, repeat, or a custom sequence) and records what the analyses need:
//! residual snapshots, attention patterns, component outputs, MLP
//! activations and logits. On top of that sit the measurement modules:
//!
//! * [`metrics`]: KL, entropy, loss, top-1 agreement, attention locality,
//!   MLP norms, unbiased linear CKA, and swap cosine diagnostics.
//! * [`neurons`]: prediction / suppression neuron taxonomy from weights.
//! * [`probes`]: logistic probes, top-k neuron ensembles, the `-ing`
//!   suffix task, word-in-context probing and subjoiner-head scores.
//! * [`runner`]: experiment configs, sweeps, and CSV/JSON reports.
//!
//! Layer indices are 0-based everywhere.

pub mod error;
pub mod metrics;
pub mod model;
pub mod neurons;
pub mod numkernel;
pub mod probes;
pub mod runner;
pub mod schedule;
pub mod tokenizer;

pub use error::{Error, Result};
pub use model::{Capture, ForwardTrace, ModelConfig, TransformerWeights};
pub use schedule::LayerSchedule;
pub use runner::{run, ExperimentConfig, ExperimentKind, RunManifest};
pub use tokenizer::{load_pretokenized, write_pretokenized, BpeVocab, TokenStream};

/// Order-preserving map, parallel when the `parallel` feature is on.
pub(crate) fn par_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
