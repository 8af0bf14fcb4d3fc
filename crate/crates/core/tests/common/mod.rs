#![allow(dead_code)]

use std::path::PathBuf;

use stagescope::model::{ModelConfig, TransformerWeights};
use stagescope::BpeVocab;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig::from_file(&fixtures().join("tiny-gpt2/config.json")).unwrap()
}

pub fn tiny_weights() -> TransformerWeights {
    TransformerWeights::load(&fixtures().join("tiny-gpt2/model.safetensors"), &tiny_config()).unwrap()
}

pub fn gpt2_vocab() -> BpeVocab {
    let dir = fixtures().join("gpt2-tokenizer");
    BpeVocab::from_files(&dir.join("vocab.json"), &dir.join("merges.txt")).unwrap()
}

pub fn toy_config(n_layers: usize, vocab: usize) -> ModelConfig {
    ModelConfig {
        n_layers,
        n_heads: 2,
        d_model: 8,
        d_head: 4,
        d_mlp: 16,
        vocab_size: vocab,
        max_positions: 32,
        ..ModelConfig::gpt2_small()
    }
}

#[derive(serde::Deserialize)]
pub struct ReferenceCase {
    pub schedule: String,
    pub steps: Vec<usize>,
    pub tokens: Vec<u32>,
    pub logits: Vec<Vec<f64>>,
}

#[derive(serde::Deserialize)]
pub struct ReferenceLogits {
    pub gelu: String,
    pub dtype: String,
    pub cases: Vec<ReferenceCase>,
}

pub fn reference_logits() -> ReferenceLogits {
    let s = std::fs::read_to_string(fixtures().join("tiny-gpt2/reference_logits.json")).unwrap();
    serde_json::from_str(&s).unwrap()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

fn layer_norm(x: &[f64], gamma: &[f32], beta: &[f32], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .zip(gamma)
        .zip(beta)
        .map(|((v, &g), &b)| (v - mean) / (var + eps).sqrt() * g as f64 + b as f64)
        .collect()
}

fn linear(x: &[f64], l: &stagescope::model::Linear) -> Vec<f64> {
    (0..l.weight.rows())
        .map(|o| {
            l.bias[o] as f64
                + l.weight.row(o).iter().zip(x).map(|(&w, v)| w as f64 * v).sum::<f64>()
        })
        .collect()
}

/// Scalar-loop f64 forward pass used as an oracle.
pub fn naive_forward(w: &TransformerWeights, tokens: &[u32], steps: &[usize]) -> Vec<Vec<f64>> {
    let c = &w.config;
    let eps = c.ln_eps as f64;
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(t, &tok)| {
            w.embed
                .row(tok as usize)
                .iter()
                .zip(w.pos_embed.row(t))
                .map(|(&a, &b)| a as f64 + b as f64)
                .collect()
        })
        .collect();
    for &s in steps {
        let b = &w.blocks[s];
        let h: Vec<Vec<f64>> = x.iter().map(|r| layer_norm(r, &b.ln1.gamma, &b.ln1.beta, eps)).collect();
        let q: Vec<Vec<f64>> = h.iter().map(|r| linear(r, &b.q)).collect();
        let k: Vec<Vec<f64>> = h.iter().map(|r| linear(r, &b.k)).collect();
        let v: Vec<Vec<f64>> = h.iter().map(|r| linear(r, &b.v)).collect();
        let mut z = vec![vec![0.0; c.d_model]; tokens.len()];
        for head in 0..c.n_heads {
            let r = head * c.d_head..(head + 1) * c.d_head;
            for t in 0..tokens.len() {
                let scores: Vec<f64> = (0..=t)
                    .map(|u| {
                        q[t][r.clone()].iter().zip(&k[u][r.clone()]).map(|(a, b)| a * b).sum::<f64>()
                            / (c.d_head as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let total: f64 = e.iter().sum();
                for (u, ev) in e.iter().enumerate() {
                    for (j, idx) in r.clone().enumerate() {
                        z[t][head * c.d_head + j] += ev / total * v[u][idx];
                    }
                }
            }
        }
        for t in 0..tokens.len() {
            let a = linear(&z[t], &b.o);
            x[t].iter_mut().zip(&a).for_each(|(xi, ai)| *xi += ai);
            let h2 = layer_norm(&x[t], &b.ln2.gamma, &b.ln2.beta, eps);
            let m: Vec<f64> = linear(&h2, &b.mlp_in).into_iter().map(gelu).collect();
            let out = linear(&m, &b.mlp_out);
            x[t].iter_mut().zip(&out).for_each(|(xi, oi)| *xi += oi);
        }
    }
    x.iter()
        .map(|r| linear(&layer_norm(r, &w.ln_final.gamma, &w.ln_final.beta, eps), &w.unembed))
        .collect()
}

pub fn max_abs_diff(a: &stagescope::numkernel::Matrix, b: &[Vec<f64>]) -> f64 {
    let mut m = 0.0f64;
    for (r, row) in b.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            m = m.max((a.get(r, c) as f64 - v).abs());
        }
    }
    m
}

/// GPT-2's printable stand-ins for raw bytes.
pub fn byte_chars() -> Vec<char> {
    let mut printable: Vec<u32> = (b'!' as u32..=b'~' as u32).chain(0xA1..=0xAC).chain(0xAE..=0xFF).collect();
    let mut table = vec!['\0'; 256];
    let mut extra = 0;
    for b in 0..256u32 {
        if printable.contains(&b) {
            table[b as usize] = char::from_u32(b).unwrap();
        } else {
            printable.push(b);
            table[b as usize] = char::from_u32(256 + extra).unwrap();
            extra += 1;
        }
    }
    table
}

pub const TOY_MERGES: [(&str, &str); 5] = [("i", "n"), ("in", "g"), ("Ġ", "r"), ("Ġ", "s"), ("Ġs", "ing")];
const TOY_WORDS: [&str; 10] = [" x", " r", " ring", " sing", " rabc", " d", " the", " thing", " ab", " r r r"];

/// A model directory (weights, config, vocab) plus corpora in a temp dir.
pub struct ToyRun {
    pub dir: tempfile::TempDir,
    pub n_layers: usize,
}

impl ToyRun {
    pub fn model(&self) -> PathBuf {
        self.dir.path().join("model")
    }
    pub fn corpus_txt(&self) -> PathBuf {
        self.dir.path().join("corpus.txt")
    }
    pub fn corpus_bin(&self) -> PathBuf {
        self.dir.path().join("corpus.bin")
    }
    pub fn wic(&self) -> PathBuf {
        self.dir.path().join("wic.tsv")
    }
    pub fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join("out").join(name)
    }
    pub fn vocab(&self) -> BpeVocab {
        let m = self.model();
        BpeVocab::from_files(&m.join("vocab.json"), &m.join("merges.txt")).unwrap()
    }
    pub fn weights(&self) -> TransformerWeights {
        let m = self.model();
        TransformerWeights::load(
            &m.join("model.safetensors"),
            &ModelConfig::from_file(&m.join("config.json")).unwrap(),
        )
        .unwrap()
    }
    pub fn config(&self, kind: stagescope::ExperimentKind) -> stagescope::ExperimentConfig {
        let corpus = if kind == stagescope::ExperimentKind::ProbeWic { self.wic() } else { self.corpus_txt() };
        let mut cfg = stagescope::ExperimentConfig::new(kind, self.model(), corpus, self.out(kind.as_str()));
        cfg.window = 32;
        cfg.tokens = 2000;
        cfg.params.block_len = 1;
        cfg.params.probe.epochs = 100;
        cfg.params.neurons_per_class = 4;
        cfg.params.max_windows_per_class = 8;
        cfg.params.max_examples_per_class = Some(40);
        cfg
    }
}

/// Random `n_layers` model over a 261-token toy vocabulary. Layer 0 neuron
/// 0 writes along a direction only the "ing" unembedding reads (a
/// prediction neuron); neuron 1 writes the opposite way (suppression).
pub fn toy_run(n_layers: usize) -> ToyRun {
    use rand::{Rng, SeedableRng};
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model");
    std::fs::create_dir_all(&model).unwrap();

    let mut vocab: std::collections::BTreeMap<String, u32> =
        byte_chars().iter().enumerate().map(|(i, c)| (c.to_string(), i as u32)).collect();
    for (a, b) in TOY_MERGES {
        let id = vocab.len() as u32;
        vocab.insert(format!("{a}{b}"), id);
    }
    std::fs::write(model.join("vocab.json"), serde_json::to_string(&vocab).unwrap()).unwrap();
    let merges: String = TOY_MERGES.iter().map(|(a, b)| format!("{a} {b}\n")).collect();
    std::fs::write(model.join("merges.txt"), format!("#version: 0.2\n{merges}")).unwrap();

    let config = serde_json::json!({
        "model_type": "gpt2",
        "vocab_size": vocab.len(),
        "n_positions": 64,
        "n_embd": 16,
        "n_layer": n_layers,
        "n_head": 2,
        "n_inner": null,
        "layer_norm_epsilon": 1e-5,
        "activation_function": "gelu_new",
    });
    std::fs::write(model.join("config.json"), config.to_string()).unwrap();
    let cfg = ModelConfig::from_json(&config.to_string()).unwrap();
    let mut w = TransformerWeights::random(&cfg, 7).unwrap();
    let ing = vocab["ing"] as usize;
    for v in 0..cfg.vocab_size {
        w.unembed.weight.set(v, 0, if v == ing { 30.0 } else { 0.0 });
    }
    let out = &mut w.blocks[0].mlp_out.weight;
    for r in 0..cfg.d_model {
        out.set(r, 0, if r == 0 { 1.0 } else { 0.0 });
        out.set(r, 1, if r == 0 { -1.0 } else { 0.0 });
    }
    w.save(&model.join("model.safetensors")).unwrap();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let text: String = (0..900).map(|_| TOY_WORDS[rng.gen_range(0..TOY_WORDS.len())]).collect();
    std::fs::write(dir.path().join("corpus.txt"), &text).unwrap();
    let bpe = BpeVocab::from_files(&model.join("vocab.json"), &model.join("merges.txt")).unwrap();
    stagescope::write_pretokenized(&dir.path().join("corpus.bin"), &bpe.encode(&text).ids).unwrap();

    let mut wic = String::new();
    for i in 0..24 {
        let (a, b) = (TOY_WORDS[i % 10].trim(), TOY_WORDS[(i * 7 + 3) % 10].trim());
        wic.push_str(&format!(
            "ring\t1-2\tthe ring {a} d\tx the ring {b}\t{}\n",
            if i % 2 == 0 { "T" } else { "F" }
        ));
    }
    std::fs::write(dir.path().join("wic.tsv"), wic).unwrap();
    ToyRun { dir, n_layers }
}
