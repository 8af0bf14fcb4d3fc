//! Linear probing: datasets, logistic probes and neuron ensembles, the
//! `-ing` suffix task, word-in-context pairs and subjoiner-head scores.

mod dataset;
mod ing;
mod logistic;
mod subjoiner;
mod wic;

pub use dataset::{FeatureSpec, ProbeDataset};
pub use ing::{
    build_ing_dataset, ends_with_ing, extract_neuron_features, model_ing_accuracy, IngWindows,
    ING_CONTEXT,
};
pub use logistic::{
    ensemble_topk, loss_and_grad, rank_probes, single_feature_probes, split_indices, train_probe,
    Probe, ProbeHyper,
};
pub(crate) use subjoiner::scores_csv as subjoiner_csv;
pub use subjoiner::{subjoiner_classes, subjoiner_pattern_score, subjoiner_score, SUBJOINER_WINDOW};
pub use wic::{
    parse_wic_tsv, resolve_target, wic_features, wic_probe_sweep, WicLayerResult, WicPair,
    WicSweep,
};

/// `layer_or_neuron,train_acc,eval_acc`.
pub fn probe_report_csv<'a>(rows: impl IntoIterator<Item = (String, &'a Probe)>) -> String {
    let mut out = String::from("layer_or_neuron,train_acc,eval_acc\n");
    for (name, p) in rows {
        out.push_str(&format!("{name},{:.9},{:.9}\n", p.train_accuracy, p.eval_accuracy));
    }
    out
}
