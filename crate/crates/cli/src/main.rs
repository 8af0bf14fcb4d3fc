//! `stagescope <kind> --model <dir> --corpus <file> --out <dir> [options]`
//!
//! Exit status: 0 on success, 2 when the arguments or config are invalid,
//! 1 when the run itself fails.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use stagescope::neurons::Thresholds;
use stagescope::{ExperimentConfig, ExperimentKind};

#[derive(Debug, Parser)]
#[command(name = "stagescope", version, about = "Layer-schedule experiments on GPT-2-class models")]
struct Args {
    /// intervene, repeat, logitlens, cka, locality, swapsim, neurons,
    /// probe-ing, probe-wic or subjoiner
    #[arg(value_parser = parse_kind)]
    kind: ExperimentKind,

    /// JSON experiment config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Directory with model.safetensors and config.json.
    #[arg(long)]
    model: Option<PathBuf>,

    /// Directory with vocab.json and merges.txt (defaults to --model).
    #[arg(long)]
    vocab: Option<PathBuf>,

    /// Raw text, .bin token ids, or a WiC TSV for probe-wic.
    #[arg(long)]
    corpus: Option<PathBuf>,

    #[arg(long)]
    tokens: Option<usize>,

    #[arg(long)]
    window: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    out: Option<PathBuf>,

    /// Run on the raw weights (no layer-norm folding or centering).
    #[arg(long)]
    no_preprocess: bool,

    #[arg(long)]
    layer: Option<usize>,

    #[arg(long)]
    block_len: Option<usize>,

    #[arg(long)]
    times: Option<usize>,

    #[arg(long)]
    k: Option<usize>,

    /// Excess-kurtosis and skew thresholds, e.g. `10,1`.
    #[arg(long, value_parser = parse_thresholds)]
    thresholds: Option<Thresholds>,

    /// Schedule notation such as `swap:3` or `repeat:4+5x1`.
    #[arg(long)]
    schedule: Option<String>,

    /// Print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    s.parse::<ExperimentKind>().map_err(|e| e.to_string())
}

fn parse_thresholds(s: &str) -> Result<Thresholds, String> {
    let (k, sk) = s.split_once(',').ok_or("expected kurtosis,skew")?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("{v:?} is not a number"));
    Ok(Thresholds {
        kurtosis_min: num(k)?,
        skew_min: num(sk)?,
    })
}

fn missing(field: &str) -> stagescope::Error {
    stagescope::Error::Config {
        field: field.into(),
        detail: format!("--{field} is required without a --config that sets it"),
    }
}

fn resolve(args: &Args) -> Result<ExperimentConfig, stagescope::Error> {
    let mut cfg = match &args.config {
        Some(path) => {
            let cfg = ExperimentConfig::from_file(path)?;
            if cfg.kind != args.kind {
                return Err(stagescope::Error::Config {
                    field: "kind".into(),
                    detail: format!("config says {}, command line says {}", cfg.kind, args.kind),
                });
            }
            cfg
        }
        None => ExperimentConfig::new(
            args.kind,
            args.model.clone().ok_or_else(|| missing("model"))?,
            args.corpus.clone().ok_or_else(|| missing("corpus"))?,
            args.out.clone().ok_or_else(|| missing("out"))?,
        ),
    };
    if let Some(v) = &args.model {
        cfg.model = v.clone();
    }
    if let Some(v) = &args.corpus {
        cfg.corpus = v.clone();
    }
    if let Some(v) = &args.out {
        cfg.out = v.clone();
    }
    if args.vocab.is_some() {
        cfg.vocab = args.vocab.clone();
    }
    cfg.tokens = args.tokens.unwrap_or(cfg.tokens);
    cfg.window = args.window.unwrap_or(cfg.window);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    if args.no_preprocess {
        cfg.preprocess = false;
    }
    let p = &mut cfg.params;
    p.layer = args.layer.or(p.layer);
    p.block_len = args.block_len.unwrap_or(p.block_len);
    p.times = args.times.unwrap_or(p.times);
    p.k = args.k.or(p.k);
    p.thresholds = args.thresholds.unwrap_or(p.thresholds);
    if args.schedule.is_some() {
        p.schedule = args.schedule.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = resolve(&args).map_err(anyhow::Error::from).and_then(|cfg| {
        if args.dry_run {
            println!("{}", cfg.to_json());
            return Ok(());
        }
        let manifest = stagescope::run(&cfg).with_context(|| format!("{} run failed", cfg.kind))?;
        for f in &manifest.files {
            println!("{}", cfg.out.join(f).display());
        }
        println!("{}", cfg.out.join(stagescope::runner::MANIFEST_FILE).display());
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let invalid = e
                .chain()
                .filter_map(|c| c.downcast_ref::<stagescope::Error>())
                .any(stagescope::Error::is_validation);
            ExitCode::from(if invalid { 2 } else { 1 })
        }
    }
}
