//! Sweeps over token windows. Windows are processed in parallel; each
//! returns per-schedule accumulators that are merged in window order, so
//! results do not depend on the thread count.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{
    attention_locality, entropy_from_log_probs, kl_from_log_probs, mlp_norms,
    swap_similarity_from_traces, Component, InterventionReport, MetricAccumulator,
};
use crate::model::{Capture, TransformerWeights};
use crate::numkernel::{log_softmax_f64, Matrix};
use crate::schedule::{LayerSchedule, ScheduleKind};
use crate::tokenizer::TokenStream;

/// Forward-pass counts for one sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SweepStats {
    pub windows: usize,
    pub baseline_forwards: usize,
    pub intervened_forwards: usize,
}

/// Non-overlapping windows from the first `budget` tokens; the trailing
/// partial window is dropped.
pub fn sweep_windows(corpus: &TokenStream, budget: usize, window: usize) -> Result<Vec<&[u32]>> {
    if window == 0 {
        return Err(Error::InvalidArgument("window length must be positive".into()));
    }
    let n = corpus.len().min(budget);
    let windows: Vec<&[u32]> = corpus.ids[..n].chunks_exact(window).collect();
    if windows.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{n} tokens do not fill one window of {window}"
        )));
    }
    Ok(windows)
}

/// Identity, then `swap(ℓ)` for `ℓ ≤ L−2`, then `drop(ℓ)` for `ℓ ≤ L−1`.
pub fn intervention_schedules(n_layers: usize) -> Result<Vec<LayerSchedule>> {
    let mut out = vec![LayerSchedule::identity(n_layers)?];
    for l in 0..n_layers.saturating_sub(1) {
        out.push(LayerSchedule::swap(n_layers, l)?);
    }
    for l in 0..n_layers {
        out.push(LayerSchedule::drop(n_layers, l)?);
    }
    Ok(out)
}

/// Scores every schedule against one identity run per window. Identity
/// schedules reuse the baseline logits.
pub fn compare_to_baseline(
    w: &TransformerWeights,
    windows: &[&[u32]],
    schedules: &[LayerSchedule],
) -> Result<(Vec<MetricAccumulator>, SweepStats)> {
    let identity = LayerSchedule::identity(w.config.n_layers)?;
    for s in schedules {
        s.validate(w.config.n_layers)?;
    }
    let baseline_runs = AtomicUsize::new(0);
    let intervened_runs = AtomicUsize::new(0);
    let per_window = crate::par_map(windows, |win| {
        let base = w.forward(win, &identity, Capture::logits_only())?;
        baseline_runs.fetch_add(1, Ordering::Relaxed);
        let base_logits = base.logits()?;
        schedules
            .iter()
            .map(|s| {
                let mut acc = MetricAccumulator::default();
                if s.kind() == ScheduleKind::Identity {
                    acc.add_window(base_logits, base_logits, win)?;
                } else {
                    let run = w.forward(win, s, Capture::logits_only())?;
                    intervened_runs.fetch_add(1, Ordering::Relaxed);
                    acc.add_window(base_logits, run.logits()?, win)?;
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut totals = vec![MetricAccumulator::default(); schedules.len()];
    for accs in &per_window {
        for (t, a) in totals.iter_mut().zip(accs) {
            t.merge(a);
        }
    }
    let stats = SweepStats {
        windows: windows.len(),
        baseline_forwards: baseline_runs.into_inner(),
        intervened_forwards: intervened_runs.into_inner(),
    };
    Ok((totals, stats))
}

pub fn run_intervention_sweep(
    w: &TransformerWeights,
    windows: &[&[u32]],
    schedules: &[LayerSchedule],
) -> Result<(InterventionReport, SweepStats)> {
    let (accs, stats) = compare_to_baseline(w, windows, schedules)?;
    let rows = schedules
        .iter()
        .zip(&accs)
        .map(|(s, a)| a.finish(s.kind(), s.key_layer()))
        .collect::<Result<Vec<_>>>()?;
    Ok((InterventionReport::new(rows), stats))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatRow {
    /// `None` for the unmodified model.
    pub start_layer: Option<usize>,
    pub entropy_nats: f64,
    pub loss_nats: f64,
    pub kl_nats: f64,
    pub top1_agreement: f64,
    pub n_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatReport {
    pub block_len: usize,
    pub times: usize,
    pub rows: Vec<RepeatRow>,
}

impl RepeatReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("start_layer,block_len,times,entropy_nats,loss_nats,kl_nats,top1_agreement,n_tokens\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.9},{:.9},{:.9},{:.9},{}\n",
                r.start_layer.map(|l| l.to_string()).unwrap_or_default(),
                self.block_len,
                self.times,
                r.entropy_nats,
                r.loss_nats,
                r.kl_nats,
                r.top1_agreement,
                r.n_tokens
            ));
        }
        out
    }

    /// Start layer with the lowest mean entropy; ties go to the earliest.
    pub fn min_entropy_start(&self) -> Option<&RepeatRow> {
        self.rows
            .iter()
            .filter(|r| r.start_layer.is_some())
            .min_by(|a, b| a.entropy_nats.total_cmp(&b.entropy_nats))
    }

    pub fn baseline(&self) -> Option<&RepeatRow> {
        self.rows.iter().find(|r| r.start_layer.is_none())
    }
}

/// Baseline row, then one row per start layer `0..=L−block_len`.
pub fn run_repeat_sweep(
    w: &TransformerWeights,
    windows: &[&[u32]],
    block_len: usize,
    times: usize,
) -> Result<(RepeatReport, SweepStats)> {
    let n = w.config.n_layers;
    if block_len == 0 || block_len > n {
        return Err(Error::Schedule(format!(
            "repeat block length {block_len} must lie in 1..={n}"
        )));
    }
    let mut schedules = vec![LayerSchedule::identity(n)?];
    for start in 0..=n - block_len {
        schedules.push(LayerSchedule::repeat(n, start, block_len, times)?);
    }
    let (accs, stats) = compare_to_baseline(w, windows, &schedules)?;
    let rows = accs
        .iter()
        .enumerate()
        .map(|(i, a)| RepeatRow {
            start_layer: i.checked_sub(1),
            entropy_nats: a.mean_entropy(),
            loss_nats: a.mean_loss(),
            kl_nats: a.mean_kl(),
            top1_agreement: a.agreement(),
            n_tokens: a.n_positions,
        })
        .collect();
    Ok((RepeatReport { block_len, times, rows }, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LensRow {
    /// Residual snapshot; −1 is the embedding.
    pub layer: i64,
    pub entropy_nats: f64,
    pub kl_to_final_nats: f64,
    pub n_tokens: u64,
}

pub fn lens_csv(rows: &[LensRow]) -> String {
    let mut out = String::from("layer,entropy_nats,kl_to_final_nats,n_tokens\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.9},{:.9},{}\n",
            r.layer, r.entropy_nats, r.kl_to_final_nats, r.n_tokens
        ));
    }
    out
}

const LENS_CHUNK: usize = 64;

/// Lens entropy and `KL(final ‖ lens)` per residual snapshot.
pub fn run_logit_lens(w: &TransformerWeights, windows: &[&[u32]]) -> Result<Vec<LensRow>> {
    let identity = LayerSchedule::identity(w.config.n_layers)?;
    let capture = Capture {
        residuals: true,
        ..Capture::none()
    };
    let n_snap = w.config.n_layers + 1;
    let per_window = crate::par_map(windows, |win| {
        let trace = w.forward(win, &identity, capture)?;
        let res = trace.residuals()?;
        let final_res = &res[n_snap - 1];
        let mut ent = vec![0.0f64; n_snap];
        let mut kl = vec![0.0f64; n_snap];
        for start in (0..win.len()).step_by(LENS_CHUNK) {
            let len = LENS_CHUNK.min(win.len() - start);
            let rows = |m: &Matrix| {
                Matrix::new(len, m.cols(), m.data()[start * m.cols()..(start + len) * m.cols()].to_vec())
            };
            let final_lp: Vec<Vec<f64>> = w
                .lens_logits(&rows(final_res)?)?
                .iter_rows()
                .map(log_softmax_f64)
                .collect();
            for (s, snap) in res.iter().enumerate() {
                let logits = w.lens_logits(&rows(snap)?)?;
                for (row, fp) in logits.iter_rows().zip(&final_lp) {
                    let lp = log_softmax_f64(row);
                    ent[s] += entropy_from_log_probs(&lp);
                    kl[s] += kl_from_log_probs(fp, &lp);
                }
            }
        }
        Ok((ent, kl))
    })?;
    let mut ent = vec![0.0f64; n_snap];
    let mut kl = vec![0.0f64; n_snap];
    let mut n = 0u64;
    for (e, k) in &per_window {
        for s in 0..n_snap {
            ent[s] += e[s];
            kl[s] += k[s];
        }
    }
    for win in windows {
        n += win.len() as u64;
    }
    Ok((0..n_snap)
        .map(|s| LensRow {
            layer: s as i64 - 1,
            entropy_nats: ent[s] / n as f64,
            kl_to_final_nats: kl[s] / n as f64,
            n_tokens: n,
        })
        .collect())
}

pub const DEFAULT_LOCALITY_KS: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalityReport {
    pub ks: Vec<usize>,
    /// `[layer][k index]`.
    pub locality: Vec<Vec<f64>>,
    pub mlp_norms: Vec<f64>,
}

impl LocalityReport {
    pub fn locality_csv(&self) -> String {
        let mut out = String::from("layer,k,locality\n");
        for (l, vals) in self.locality.iter().enumerate() {
            for (k, v) in self.ks.iter().zip(vals) {
                out.push_str(&format!("{l},{k},{v:.9}\n"));
            }
        }
        out
    }

    pub fn mlp_norms_csv(&self) -> String {
        let mut out = String::from("layer,mlp_norm\n");
        for (l, v) in self.mlp_norms.iter().enumerate() {
            out.push_str(&format!("{l},{v:.9}\n"));
        }
        out
    }
}

/// Attention locality per layer for each `k`, and mean MLP output norms,
/// averaged over windows.
pub fn run_locality(w: &TransformerWeights, windows: &[&[u32]], ks: &[usize]) -> Result<LocalityReport> {
    if ks.is_empty() {
        return Err(Error::InvalidArgument("no locality window sizes given".into()));
    }
    let identity = LayerSchedule::identity(w.config.n_layers)?;
    let capture = Capture {
        attention: true,
        mlp_norms: true,
        ..Capture::none()
    };
    let per_window = crate::par_map(windows, |win| {
        let trace = w.forward(win, &identity, capture)?;
        let loc = ks
            .iter()
            .map(|&k| attention_locality(&trace, k))
            .collect::<Result<Vec<_>>>()?;
        Ok((loc, mlp_norms(&trace)?))
    })?;
    let n_layers = w.config.n_layers;
    let mut locality = vec![vec![0.0; ks.len()]; n_layers];
    let mut norms = vec![0.0; n_layers];
    for (loc, mn) in &per_window {
        for (ki, per_layer) in loc.iter().enumerate() {
            for (l, v) in per_layer.iter().enumerate() {
                locality[l][ki] += v;
            }
        }
        for (l, v) in mn.iter().enumerate() {
            norms[l] += v;
        }
    }
    let n = windows.len() as f64;
    locality.iter_mut().flatten().for_each(|v| *v /= n);
    norms.iter_mut().for_each(|v| *v /= n);
    Ok(LocalityReport {
        ks: ks.to_vec(),
        locality,
        mlp_norms: norms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwapSimRow {
    pub layer: usize,
    pub component: Component,
    pub self_sim: Option<f64>,
    pub index_sim: Option<f64>,
    pub adjacent_sim: Option<f64>,
}

pub fn swapsim_csv(rows: &[SwapSimRow]) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
    let mut out = String::from("layer,component,self_sim,index_sim,adjacent_sim\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.layer,
            r.component.as_str(),
            f(r.self_sim),
            f(r.index_sim),
            f(r.adjacent_sim)
        ));
    }
    out
}

#[derive(Default, Clone, Copy)]
struct OptMean {
    sum: f64,
    n: usize,
}

impl OptMean {
    fn add(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.sum += v;
            self.n += 1;
        }
    }

    fn get(self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// Swap cosine triplets for the given swap layers and both components,
/// averaged over windows.
pub fn run_swapsim(w: &TransformerWeights, windows: &[&[u32]], layers: &[usize]) -> Result<Vec<SwapSimRow>> {
    let n = w.config.n_layers;
    let identity = LayerSchedule::identity(n)?;
    let swaps = layers
        .iter()
        .map(|&l| LayerSchedule::swap(n, l))
        .collect::<Result<Vec<_>>>()?;
    let capture = Capture {
        component_outputs: true,
        ..Capture::none()
    };
    const COMPONENTS: [Component; 2] = [Component::Attention, Component::Mlp];
    let per_window = crate::par_map(windows, |win| {
        let base = w.forward(win, &identity, capture)?;
        let mut out = Vec::with_capacity(layers.len() * 2);
        for (&l, s) in layers.iter().zip(&swaps) {
            let swapped = w.forward(win, s, capture)?;
            for c in COMPONENTS {
                out.push(swap_similarity_from_traces(&base, &swapped, l, c)?);
            }
        }
        Ok(out)
    })?;
    let mut means = vec![[OptMean::default(); 3]; layers.len() * 2];
    for sims in &per_window {
        for (m, s) in means.iter_mut().zip(sims) {
            m[0].add(s.self_sim);
            m[1].add(s.index_sim);
            m[2].add(s.adjacent_sim);
        }
    }
    Ok(means
        .iter()
        .enumerate()
        .map(|(i, m)| SwapSimRow {
            layer: layers[i / 2],
            component: COMPONENTS[i % 2],
            self_sim: m[0].get(),
            index_sim: m[1].get(),
            adjacent_sim: m[2].get(),
        })
        .collect())
}
