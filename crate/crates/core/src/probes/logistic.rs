//! L2-regularized logistic regression by full-batch gradient descent.
//!
//! Features are standardized with training-split statistics before descent;
//! the stored weights are mapped back so `predict` takes raw features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::ProbeDataset;
use crate::error::{Error, Result};
use crate::numkernel::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeHyper {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    pub train_frac: f64,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 500,
            l2: 1e-3,
            seed: 0,
            train_frac: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
    pub n_train: usize,
    pub n_eval: usize,
    pub hyperparams: ProbeHyper,
    /// Training split held one class; the probe predicts it everywhere.
    pub majority_only: bool,
    /// Regularized loss before each epoch, then after the last one.
    pub loss_history: Vec<f64>,
}

impl Probe {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.bias + x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.logit(x) > 0.0
    }

    pub fn accuracy(&self, data: &ProbeDataset) -> f64 {
        accuracy_on(self, &data.features, &data.labels, &(0..data.len()).collect::<Vec<_>>())
    }
}

fn accuracy_on(p: &Probe, x: &Matrix<f64>, y: &[bool], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let hits = idx.iter().filter(|&&i| p.predict(x.row(i)) == y[i]).count();
    hits as f64 / idx.len() as f64
}

/// Seeded permutation split into `(train, eval)`; both sides non-empty.
pub fn split_indices(n: usize, train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("probe needs at least 2 examples, got {n}")));
    }
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidArgument(format!("train_frac must lie in (0, 1), got {train_frac}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * train_frac).round() as usize).clamp(1, n - 1);
    let eval = idx.split_off(n_train);
    Ok((idx, eval))
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean cross-entropy plus `l2/2 · ‖w‖²` (bias unpenalized), with gradients
/// `(loss, ∂w, ∂b)`.
pub fn loss_and_grad(x: &Matrix<f64>, y: &[bool], w: &[f64], b: f64, l2: f64) -> (f64, Vec<f64>, f64) {
    let n = x.rows().max(1) as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (row, &label) in x.iter_rows().zip(y) {
        let z = b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        let t = f64::from(u8::from(label));
        loss += softplus(z) - t * z;
        let r = sigmoid(z) - t;
        gb += r;
        for (g, &v) in gw.iter_mut().zip(row) {
            *g += r * v;
        }
    }
    loss /= n;
    gb /= n;
    for (g, &wi) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
    }
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    (loss, gw, gb)
}

pub fn train_probe(data: &ProbeDataset, hyper: ProbeHyper) -> Result<Probe> {
    if data.dim() == 0 {
        return Err(Error::InvalidArgument("probe needs at least one feature".into()));
    }
    let (train, eval) = split_indices(data.len(), hyper.train_frac, hyper.seed)?;
    let d = data.dim();
    let pos = train.iter().filter(|&&i| data.labels[i]).count();

    if pos == 0 || pos == train.len() {
        let probe = Probe {
            weights: vec![0.0; d],
            bias: if pos == 0 { -1.0 } else { 1.0 },
            train_accuracy: 0.0,
            eval_accuracy: 0.0,
            n_train: train.len(),
            n_eval: eval.len(),
            hyperparams: hyper,
            majority_only: true,
            loss_history: Vec::new(),
        };
        return Ok(finish(probe, data, &train, &eval));
    }

    let mut mean = vec![0.0; d];
    for &i in &train {
        for (m, &v) in mean.iter_mut().zip(data.features.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    let mut scale = vec![0.0; d];
    for &i in &train {
        for ((s, &v), &m) in scale.iter_mut().zip(data.features.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut scale {
        *s = (*s / train.len() as f64).sqrt();
        if *s == 0.0 || !s.is_finite() {
            *s = 1.0;
        }
    }
    let x = Matrix::from_fn(train.len(), d, |r, c| (data.features.get(train[r], c) - mean[c]) / scale[c]);
    let y: Vec<bool> = train.iter().map(|&i| data.labels[i]).collect();

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut loss_history = Vec::with_capacity(hyper.epochs + 1);
    for _ in 0..hyper.epochs {
        let (loss, gw, gb) = loss_and_grad(&x, &y, &w, b, hyper.l2);
        loss_history.push(loss);
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= hyper.lr * g;
        }
        b -= hyper.lr * gb;
    }
    loss_history.push(loss_and_grad(&x, &y, &w, b, hyper.l2).0);

    let weights: Vec<f64> = w.iter().zip(&scale).map(|(wi, s)| wi / s).collect();
    let bias = b - weights.iter().zip(&mean).map(|(wi, m)| wi * m).sum::<f64>();
    let probe = Probe {
        weights,
        bias,
        train_accuracy: 0.0,
        eval_accuracy: 0.0,
        n_train: train.len(),
        n_eval: eval.len(),
        hyperparams: hyper,
        majority_only: false,
        loss_history,
    };
    Ok(finish(probe, data, &train, &eval))
}

fn finish(mut p: Probe, data: &ProbeDataset, train: &[usize], eval: &[usize]) -> Probe {
    p.train_accuracy = accuracy_on(&p, &data.features, &data.labels, train);
    p.eval_accuracy = accuracy_on(&p, &data.features, &data.labels, eval);
    p
}

/// One probe per feature column, trained concurrently.
pub fn single_feature_probes(data: &ProbeDataset, hyper: ProbeHyper) -> Result<Vec<Probe>> {
    let cols: Vec<usize> = (0..data.dim()).collect();
    crate::par_map(&cols, |&c| train_probe(&data.select_columns(&[c])?, hyper))
}

/// Column order by eval accuracy, best first; ties by column index.
pub fn rank_probes(probes: &[Probe]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probes.len()).collect();
    order.sort_by(|&a, &b| {
        probes[b]
            .eval_accuracy
            .total_cmp(&probes[a].eval_accuracy)
            .then(a.cmp(&b))
    });
    order
}

/// Fresh probe on the columns of the `k` best single-feature probes.
/// `probes[i]` must be the probe for column `i` of `data`.
pub fn ensemble_topk(
    probes: &[Probe],
    data: &ProbeDataset,
    k: usize,
    hyper: ProbeHyper,
) -> Result<(Vec<usize>, Probe)> {
    if k == 0 {
        return Err(Error::InvalidArgument("ensemble size k must be positive".into()));
    }
    if k > probes.len() || probes.len() != data.dim() {
        return Err(Error::InvalidArgument(format!(
            "ensemble of {k} from {} probes over {} features",
            probes.len(),
            data.dim()
        )));
    }
    let columns: Vec<usize> = rank_probes(probes).into_iter().take(k).collect();
    let probe = train_probe(&data.select_columns(&columns)?, hyper)?;
    Ok((columns, probe))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::FeatureSpec;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(n: usize, sep: f64, seed: u64) -> ProbeDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let x = Matrix::from_fn(n, 2, |r, _| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let centre = if labels[r] { sep } else { -sep };
            centre + 0.5 * noise
        });
        ProbeDataset::new(x, labels, FeatureSpec::Synthetic).unwrap()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_fn(30, 4, |_, _| rng.gen_range(-2.0..2.0));
        let y: Vec<bool> = (0..30).map(|_| rng.gen_bool(0.5)).collect();
        let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = 0.3;
        let (_, gw, gb) = loss_and_grad(&x, &y, &w, b, 0.01);
        let h = 1e-5;
        for i in 0..4 {
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let fd = (loss_and_grad(&x, &y, &wp, b, 0.01).0 - loss_and_grad(&x, &y, &wm, b, 0.01).0) / (2.0 * h);
            assert!((fd - gw[i]).abs() / gw[i].abs().max(1e-8) < 1e-4, "w[{i}]: {fd} vs {}", gw[i]);
        }
        let fd = (loss_and_grad(&x, &y, &w, b + h, 0.01).0 - loss_and_grad(&x, &y, &w, b - h, 0.01).0) / (2.0 * h);
        assert!((fd - gb).abs() / gb.abs().max(1e-8) < 1e-4);
    }

    #[test]
    fn separable_blobs_fit_exactly() {
        let p = train_probe(&blobs(200, 3.0, 1), ProbeHyper::default()).unwrap();
        assert_eq!(p.train_accuracy, 1.0);
        assert!(!p.majority_only);
        assert_eq!((p.n_train, p.n_eval), (160, 40));
    }

    #[test]
    fn small_step_descent_is_monotone() {
        let hyper = ProbeHyper {
            lr: 1e-3,
            ..ProbeHyper::default()
        };
        let p = train_probe(&blobs(100, 0.5, 2), hyper).unwrap();
        assert_eq!(p.loss_history.len(), 501);
        for pair in p.loss_history.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
    }

    #[test]
    fn single_class_gives_majority_probe() {
        let x = Matrix::from_fn(10, 2, |r, c| (r + c) as f64);
        let data = ProbeDataset::new(x, vec![true; 10], FeatureSpec::Synthetic).unwrap();
        let p = train_probe(&data, ProbeHyper::default()).unwrap();
        assert!(p.majority_only);
        assert_eq!(p.train_accuracy, 1.0);
        assert_eq!(p.eval_accuracy, 1.0);
    }

    #[test]
    fn shuffled_labels_score_near_chance() {
        let mut total = 0.0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let n = 1000;
            let x = Matrix::from_fn(n, 8, |_, _| rng.gen_range(-1.0..1.0));
            let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            let data = ProbeDataset::new(x, labels, FeatureSpec::Synthetic).unwrap();
            let p = train_probe(&data, ProbeHyper { seed, ..ProbeHyper::default() }).unwrap();
            total += p.eval_accuracy;
        }
        let mean = total / 20.0;
        assert!((0.4..=0.6).contains(&mean), "{mean}");
    }

    #[test]
    fn duplicated_columns_keep_accuracy() {
        let data = blobs(300, 0.8, 4);
        let dup = data.select_columns(&[0, 1, 0, 1]).unwrap();
        let a = train_probe(&data, ProbeHyper::default()).unwrap();
        let b = train_probe(&dup, ProbeHyper::default()).unwrap();
        assert!((a.eval_accuracy - b.eval_accuracy).abs() < 1e-3);
        assert!((a.train_accuracy - b.train_accuracy).abs() < 1e-3);
    }

    #[test]
    fn ensembles_rank_and_concatenate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 400;
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        // column signal grows with index, last column is constant
        let x = Matrix::from_fn(n, 5, |r, c| {
            if c == 4 {
                return 1.0;
            }
            let noise: f64 = StandardNormal.sample(&mut rng);
            let s = if labels[r] { 1.0 } else { -1.0 };
            s * 0.3 * c as f64 + noise
        });
        let data = ProbeDataset::new(x, labels, FeatureSpec::Synthetic).unwrap();
        assert_eq!(data.constant_columns, vec![4]);
        let probes = single_feature_probes(&data, ProbeHyper::default()).unwrap();
        let ranking = rank_probes(&probes);
        assert_eq!(ranking[0], 3);

        let (cols, one) = ensemble_topk(&probes, &data, 1, ProbeHyper::default()).unwrap();
        assert_eq!(cols, vec![3]);
        assert!((one.eval_accuracy - probes[3].eval_accuracy).abs() < 1e-12);

        let (cols, three) = ensemble_topk(&probes, &data, 3, ProbeHyper::default()).unwrap();
        assert_eq!(three.weights.len(), cols.len());
        assert!(ensemble_topk(&probes, &data, 0, ProbeHyper::default()).is_err());
        assert!(ensemble_topk(&probes, &data, 6, ProbeHyper::default()).is_err());
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (a, b) = split_indices(50, 0.8, 7).unwrap();
        assert_eq!(split_indices(50, 0.8, 7).unwrap(), (a.clone(), b.clone()));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert!(split_indices(1, 0.8, 0).is_err());
    }
}
