#![allow(dead_code)]

use gate_core::corpus::{build_vocab, DepSentence, Span, Task, TaskInstance, Token};
use gate_core::encoder::{AttentionMode, EncoderConfig, Model};
use gate_core::syntax::{default_schedule, DeltaSchedule};
use gate_core::Array64;
use rand::seq::SliceRandom;
use rand::Rng;

const UPOS: [&str; 4] = ["NOUN", "VERB", "ADJ", "DET"];
const DEPREL: [&str; 4] = ["nsubj", "obj", "amod", "det"];
const ENTITY: [&str; 4] = ["O", "PER", "ORG", "LOC"];

/// Uniformly labeled random tree: recursive attachment, then a random relabeling.
pub fn random_heads<R: Rng>(rng: &mut R, n: usize) -> Vec<Option<usize>> {
    let parent: Vec<Option<usize>> = (0..n)
        .map(|i| if i == 0 { None } else { Some(rng.gen_range(0..i)) })
        .collect();
    let mut label: Vec<usize> = (0..n).collect();
    label.shuffle(rng);
    let mut heads = vec![None; n];
    for i in 0..n {
        heads[label[i]] = parent[i].map(|p| label[p]);
    }
    heads
}

pub fn random_sentence<R: Rng>(rng: &mut R, n: usize, id: &str) -> DepSentence {
    let heads = random_heads(rng, n);
    let tokens = heads
        .into_iter()
        .map(|head| Token {
            form: format!("w{}", rng.gen_range(0..6)),
            upos: UPOS.choose(rng).unwrap().to_string(),
            deprel: DEPREL.choose(rng).unwrap().to_string(),
            entity_type: ENTITY.choose(rng).unwrap().to_string(),
            head,
        })
        .collect();
    DepSentence { id: id.into(), tokens }
}

/// All-pairs shortest paths on the undirected tree, unit diagonal.
pub fn floyd_warshall(heads: &[Option<usize>]) -> Vec<Vec<u32>> {
    let n = heads.len();
    let inf = u32::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        if let Some(h) = heads[i] {
            d[i][h] = 1;
            d[h][i] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 1;
    }
    d
}

pub fn small_config(task: Task, d_model: usize) -> EncoderConfig {
    EncoderConfig {
        task,
        d_model,
        n_layers: 1,
        n_heads: 8,
        ffn_dim: 2 * d_model,
        dropout: 0.5,
        word_emb_dim: 8,
        feature_emb_dim: 4,
        delta_schedule: default_schedule(task, 8).unwrap(),
        attention_mode: AttentionMode::Gate,
        external_word_features: false,
        position_embedding: false,
        trigger_type_feature: false,
        max_len: 64,
    }
}

pub fn plain_unbounded(mut cfg: EncoderConfig) -> EncoderConfig {
    cfg.attention_mode = AttentionMode::Plain;
    cfg.delta_schedule = DeltaSchedule::unbounded(cfg.n_heads);
    cfg
}

/// 8-token sentence with two relation instances over it.
pub fn fixture_8() -> (DepSentence, Vec<TaskInstance>) {
    // "The committee in Paris approved the new budget"
    let rows = [
        ("The", "DET", "det", "O", Some(1)),
        ("committee", "NOUN", "nsubj", "ORG", Some(4)),
        ("in", "ADP", "case", "O", Some(3)),
        ("Paris", "PROPN", "nmod", "GPE", Some(1)),
        ("approved", "VERB", "root", "O", None),
        ("the", "DET", "det", "O", Some(7)),
        ("new", "ADJ", "amod", "O", Some(7)),
        ("budget", "NOUN", "obj", "O", Some(4)),
    ];
    let tokens = rows
        .iter()
        .map(|&(form, upos, deprel, ent, head)| Token {
            form: form.into(),
            upos: upos.into(),
            deprel: deprel.into(),
            entity_type: ent.into(),
            head,
        })
        .collect();
    let s = DepSentence {
        id: "fx8".into(),
        tokens,
    };
    let inst = |a: Span, b: Span, label: &str| TaskInstance {
        sentence_id: "fx8".into(),
        task: Task::Re,
        span_a: a,
        span_b: b,
        label: label.into(),
        trigger_type: None,
    };
    let instances = vec![
        inst(Span::new(0, 2), Span::single(3), "PHYS:Located"),
        inst(Span::single(3), Span::new(5, 8), "None"),
        inst(Span::single(7), Span::new(0, 2), "ORG-AFF"),
    ];
    (s, instances)
}

pub fn model_for(cfg: EncoderConfig, sentences: &[DepSentence], instances: &[TaskInstance], seed: u64) -> Model<f64> {
    use rand::SeedableRng;
    let vocab = build_vocab(sentences, instances);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Model::init(cfg, vocab, &mut rng).unwrap()
}

// ---- reference vanilla Transformer layer, plain loops over Vec<Vec<f64>> ----

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(a: &Array64) -> Mat {
    (0..a.rows()).map(|i| a.row(i).to_vec()).collect()
}

pub fn mm(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            out[i][j] = (0..k).map(|t| a[i][t] * b[t][j]).sum();
        }
    }
    out
}

fn add_bias(a: &Mat, b: &[f64]) -> Mat {
    a.iter()
        .map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect()
}

fn layer_norm(a: &Mat, g: &[f64], b: &[f64]) -> Mat {
    a.iter()
        .map(|r| {
            let d = r.len() as f64;
            let mean = r.iter().sum::<f64>() / d;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d;
            let s = (var + 1e-5).sqrt();
            r.iter()
                .enumerate()
                .map(|(j, x)| (x - mean) / s * g[j] + b[j])
                .collect()
        })
        .collect()
}

pub struct RefHead {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
}

pub struct RefLayer {
    pub heads: Vec<RefHead>,
    pub wo: Mat,
    pub bo: Vec<f64>,
    pub ln1: (Vec<f64>, Vec<f64>),
    pub ff1: (Mat, Vec<f64>),
    pub ff2: (Mat, Vec<f64>),
    pub ln2: (Vec<f64>, Vec<f64>),
}

impl RefLayer {
    pub fn from_model(model: &Model<f64>, layer: usize) -> Self {
        let p = &model.params;
        let l = &model.layout.layers[layer];
        let m = |id| to_mat(p.get(id));
        let v = |id| p.get(id).data().to_vec();
        RefLayer {
            heads: l
                .heads
                .iter()
                .map(|h| RefHead {
                    wq: m(h.wq),
                    wk: m(h.wk),
                    wv: m(h.wv),
                })
                .collect(),
            wo: m(l.wo),
            bo: v(l.bo),
            ln1: (v(l.ln1_gain), v(l.ln1_bias)),
            ff1: (m(l.ff1_w), v(l.ff1_b)),
            ff2: (m(l.ff2_w), v(l.ff2_b)),
            ln2: (v(l.ln2_gain), v(l.ln2_bias)),
        }
    }

    /// Standard post-norm Transformer encoder layer, unmasked softmax attention.
    pub fn forward(&self, h: &Mat) -> Mat {
        let n = h.len();
        let mut cat: Mat = vec![Vec::new(); n];
        for head in &self.heads {
            let q = mm(h, &head.wq);
            let k = mm(h, &head.wk);
            let v = mm(h, &head.wv);
            let dk = head.wk[0].len() as f64;
            for i in 0..n {
                let s: Vec<f64> = (0..n)
                    .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / dk.sqrt())
                    .collect();
                let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|x| (x - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..v[0].len() {
                    cat[i].push((0..n).map(|j| e[j] / z * v[j][c]).sum());
                }
            }
        }
        let attn = add_bias(&mm(&cat, &self.wo), &self.bo);
        let res: Mat = h
            .iter()
            .zip(&attn)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        let h1 = layer_norm(&res, &self.ln1.0, &self.ln1.1);
        let f = add_bias(&mm(&h1, &self.ff1.0), &self.ff1.1);
        let f: Mat = f.iter().map(|r| r.iter().map(|x| x.max(0.0)).collect()).collect();
        let f = add_bias(&mm(&f, &self.ff2.0), &self.ff2.1);
        let res: Mat = h1
            .iter()
            .zip(&f)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        layer_norm(&res, &self.ln2.0, &self.ln2.1)
    }
}

pub fn max_abs(a: &Mat, b: &Array64) -> f64 {
    let mut m: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            m = m.max((x - b.get(i, j)).abs());
        }
    }
    m
}
