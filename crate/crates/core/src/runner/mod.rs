//! Experiment configs, sweep orchestration and report files.
//!
//! [`run`] validates a config, loads the model and corpus, runs one
//! experiment kind and writes its CSV reports plus `manifest.json` into the
//! output directory.

mod config;
mod manifest;
mod sweeps;

use std::path::Path;

pub use config::{ExperimentConfig, ExperimentKind, KindParams};
pub use manifest::{config_hash, sha256_hex, ModelIdentity, RunManifest, MANIFEST_FILE};
pub use sweeps::{
    compare_to_baseline, intervention_schedules, lens_csv, run_intervention_sweep, run_locality,
    run_logit_lens, run_repeat_sweep, run_swapsim, swapsim_csv, sweep_windows, LensRow,
    LocalityReport, RepeatReport, RepeatRow, SweepStats, SwapSimRow, DEFAULT_LOCALITY_KS,
};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, TransformerWeights};
use crate::neurons::{
    activation_variance, densities_csv, densities_from_stats, neuron_stats, stats_csv,
    top_variance_neurons, NeuronClass,
};
use crate::probes::{
    build_ing_dataset, ensemble_topk, extract_neuron_features, model_ing_accuracy,
    parse_wic_tsv, probe_report_csv, single_feature_probes, subjoiner_classes, subjoiner_csv,
    subjoiner_score, wic_probe_sweep, Probe, ING_CONTEXT,
};
use crate::schedule::LayerSchedule;
use crate::tokenizer::{load_pretokenized, BpeVocab, TokenStream};

fn config_err(field: &str, detail: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        detail: detail.into(),
    }
}

/// Loads (and optionally preprocesses) the weights named by `cfg`.
pub fn load_model(cfg: &ExperimentConfig) -> Result<(TransformerWeights, ModelIdentity)> {
    let config = ModelConfig::from_file(&cfg.model_config_path())?;
    let path = cfg.weights_path();
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = TransformerWeights::from_safetensors_bytes(&bytes, &config).map_err(|e| match e {
        Error::MissingTensor(name) => Error::MissingTensor(format!("{name} in {}", path.display())),
        other => other,
    })?;
    if cfg.preprocess && !w.preprocessed {
        w = w.preprocess()?;
    }
    let identity = ModelIdentity {
        weights: path.display().to_string(),
        weights_sha256: sha256_hex(&bytes),
        n_layers: w.config.n_layers,
        d_model: w.config.d_model,
        vocab_size: w.config.vocab_size,
        preprocessed: w.preprocessed,
    };
    Ok((w, identity))
}

pub fn load_vocab(cfg: &ExperimentConfig) -> Result<BpeVocab> {
    let (v, m) = cfg.vocab_paths();
    BpeVocab::from_files(&v, &m)
}

/// The corpus truncated to the token budget.
pub fn load_corpus(cfg: &ExperimentConfig, vocab: Option<&BpeVocab>, vocab_size: usize) -> Result<TokenStream> {
    let mut stream = if cfg.corpus_is_pretokenized() {
        load_pretokenized(&cfg.corpus, vocab_size)?
    } else {
        let vocab = vocab.ok_or_else(|| config_err("vocab", "raw-text corpus needs a vocabulary"))?;
        let text = std::fs::read_to_string(&cfg.corpus).map_err(|e| Error::io(&cfg.corpus, e))?;
        let s = vocab.encode(&text);
        s.validate(vocab_size)?;
        s
    };
    stream.ids.truncate(cfg.tokens);
    Ok(stream)
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Outputs<'_> {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

const ENSEMBLE_SIZES: [usize; 6] = [1, 2, 4, 8, 16, 32];

/// Runs the experiment and writes its reports and manifest.
pub fn run(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let started = manifest::now_unix_ms();
    if matches!(cfg.kind, ExperimentKind::Neurons | ExperimentKind::ProbeIng) && !cfg.preprocess {
        return Err(config_err("preprocess", "neuron classification needs preprocessed weights"));
    }
    let (w, identity) = load_model(cfg)?;
    if cfg.window > w.config.max_positions {
        return Err(config_err(
            "window",
            format!("{} exceeds the model's {} positions", cfg.window, w.config.max_positions),
        ));
    }
    let vocab = if cfg.kind.needs_vocab() || !cfg.corpus_is_pretokenized() {
        Some(load_vocab(cfg)?)
    } else {
        None
    };
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let mut out = Outputs {
        dir: &cfg.out,
        files: Vec::new(),
    };
    let mut manifest = RunManifest::new(cfg, identity, started);
    let p = &cfg.params;
    let n = w.config.n_layers;

    if cfg.kind == ExperimentKind::ProbeWic {
        let text = std::fs::read_to_string(&cfg.corpus).map_err(|e| Error::io(&cfg.corpus, e))?;
        let pairs = parse_wic_tsv(&text)?;
        let vocab = vocab.as_ref().expect("vocab loaded for probe-wic");
        let hyper = crate::probes::ProbeHyper { seed: cfg.seed, ..p.probe };
        let sweep = wic_probe_sweep(&w, vocab, &pairs, hyper)?;
        out.write("wic_probe.csv", &sweep.to_csv())?;
        out.write(
            "wic_summary.json",
            &serde_json::to_string_pretty(&serde_json::json!({
                "n_pairs": sweep.n_pairs,
                "n_skipped": sweep.n_skipped,
            }))?,
        )?;
        manifest.files = out.files;
        manifest.emit(&cfg.out)?;
        return Ok(manifest);
    }

    let corpus = load_corpus(cfg, vocab.as_ref(), w.config.vocab_size)?;
    let windows = sweep_windows(&corpus, cfg.tokens, cfg.window)?;

    match cfg.kind {
        ExperimentKind::Intervene => {
            let schedules = match &p.schedule {
                Some(notation) => vec![
                    LayerSchedule::identity(n)?,
                    LayerSchedule::parse(notation, n)?,
                ],
                None => intervention_schedules(n)?,
            };
            let (report, stats) = run_intervention_sweep(&w, &windows, &schedules)?;
            out.write("intervene.csv", &report.to_csv())?;
            manifest.baseline_forwards = Some(stats.baseline_forwards);
            manifest.intervened_forwards = Some(stats.intervened_forwards);
        }
        ExperimentKind::Repeat => {
            let (report, stats) = run_repeat_sweep(&w, &windows, p.block_len, p.times)?;
            out.write("repeat.csv", &report.to_csv())?;
            manifest.baseline_forwards = Some(stats.baseline_forwards);
            manifest.intervened_forwards = Some(stats.intervened_forwards);
        }
        ExperimentKind::Logitlens => {
            out.write("logitlens.csv", &lens_csv(&run_logit_lens(&w, &windows)?))?;
        }
        ExperimentKind::Cka => {
            let cka = crate::metrics::cka_layer_matrix(&w, &corpus, windows.len(), cfg.window, true)?;
            out.write("cka.csv", &cka.to_csv())?;
        }
        ExperimentKind::Locality => {
            let ks: Vec<usize> = p.k.map_or_else(|| DEFAULT_LOCALITY_KS.to_vec(), |k| vec![k]);
            let report = run_locality(&w, &windows, &ks)?;
            out.write("locality.csv", &report.locality_csv())?;
            out.write("mlp_norms.csv", &report.mlp_norms_csv())?;
        }
        ExperimentKind::Swapsim => {
            let layers: Vec<usize> = match p.layer {
                Some(l) => vec![l],
                None => (0..n.saturating_sub(1)).collect(),
            };
            out.write("swapsim.csv", &swapsim_csv(&run_swapsim(&w, &windows, &layers)?))?;
        }
        ExperimentKind::Neurons => {
            let var = activation_variance(&w, &windows)?;
            let stats = neuron_stats(&w, p.thresholds, Some(&var))?;
            out.write("neurons.csv", &stats_csv(&stats))?;
            out.write("neuron_density.csv", &densities_csv(&densities_from_stats(&stats, n)))?;
        }
        ExperimentKind::ProbeIng => {
            let vocab = vocab.as_ref().expect("vocab loaded for probe-ing");
            let var = activation_variance(&w, &windows)?;
            let stats = neuron_stats(&w, p.thresholds, Some(&var))?;
            let data = build_ing_dataset(&corpus, vocab, ING_CONTEXT, p.max_examples_per_class, cfg.seed)?;
            let hyper = crate::probes::ProbeHyper { seed: cfg.seed, ..p.probe };
            let k_max = p.k.unwrap_or(32);
            let mut rows: Vec<(String, Probe)> = Vec::new();
            for class in [NeuronClass::Prediction, NeuronClass::Suppression] {
                let neurons = top_variance_neurons(&stats, class, p.neurons_per_class);
                if neurons.is_empty() {
                    continue;
                }
                let features = extract_neuron_features(&w, &data.windows, &data.labels, &neurons)?;
                let singles = single_feature_probes(&features, hyper)?;
                for (&(l, j), probe) in neurons.iter().zip(&singles) {
                    rows.push((format!("{}:L{l}N{j}", class.as_str()), probe.clone()));
                }
                let sizes = ENSEMBLE_SIZES
                    .iter()
                    .copied()
                    .filter(|&k| k <= k_max.min(neurons.len()));
                for k in sizes {
                    let (_, probe) = ensemble_topk(&singles, &features, k, hyper)?;
                    rows.push((format!("ensemble:{}:top{k}", class.as_str()), probe));
                }
            }
            let acc = model_ing_accuracy(&w, vocab, &data.windows, &data.labels)?;
            let model_row = Probe {
                weights: Vec::new(),
                bias: 0.0,
                train_accuracy: acc,
                eval_accuracy: acc,
                n_train: 0,
                n_eval: data.labels.len(),
                hyperparams: hyper,
                majority_only: false,
                loss_history: Vec::new(),
            };
            rows.push(("model_top1".into(), model_row));
            out.write("ing_probe.csv", &probe_report_csv(rows.iter().map(|(s, p)| (s.clone(), p))))?;
        }
        ExperimentKind::Subjoiner => {
            let vocab = vocab.as_ref().expect("vocab loaded for subjoiner");
            let (word, base) = subjoiner_classes(&corpus, vocab, p.max_windows_per_class)?;
            out.write("subjoiner.csv", &subjoiner_csv(&subjoiner_score(&w, &word, &base)?))?;
        }
        ExperimentKind::ProbeWic => unreachable!("handled above"),
    }
    manifest.files = out.files;
    manifest.emit(&cfg.out)?;
    Ok(manifest)
}
