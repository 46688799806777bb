//! Random labeled dependency trees in two surface orders.
//!
//! Every sentence is realized once in a canonical pre-order traversal
//! (source order) and once under a seeded permutation (reordered). Tree
//! topology, tags, spans and labels are identical across the pair; only
//! token positions differ. Labels follow a distance rule: positive iff the
//! tree distance between the two marked tokens is at most `k`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{write_conllu, write_instances, DepSentence, Span, Task, TaskInstance, Token, NONE_LABEL};
use crate::error::{invalid, Result};
use crate::syntax::distances_from_heads;

const UPOS: [&str; 8] = ["ADJ", "ADP", "ADV", "DET", "NOUN", "PRON", "PROPN", "VERB"];
const DEPREL: [&str; 8] = ["amod", "case", "compound", "conj", "det", "nmod", "nsubj", "obj"];
const DISTRACTOR_TYPES: [&str; 5] = ["O", "O", "O", "LOC", "GPE"];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Distance threshold of the labeling rule.
    pub k: u32,
    pub task: Task,
    pub n_forms: usize,
    pub positive_label: String,
    /// Entity types marking the first and second span.
    pub span_types: (String, String),
    /// Probability of sampling a pair within distance `k` when both kinds exist.
    pub positive_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 100,
            min_len: 5,
            max_len: 20,
            k: 2,
            task: Task::Re,
            n_forms: 50,
            positive_label: "Near".into(),
            span_types: ("PER".into(), "ORG".into()),
            positive_rate: 0.5,
        }
    }
}

/// One sentence set with its instances.
#[derive(Clone, Debug, PartialEq)]
pub struct Realization {
    pub sentences: Vec<DepSentence>,
    pub instances: Vec<TaskInstance>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub source: Realization,
    pub reordered: Realization,
    /// `permutations[s][i]` is the reordered position of source token `i`.
    pub permutations: Vec<Vec<usize>>,
}

impl SyntheticCorpus {
    /// Writes `source.conllu`, `source.jsonl`, `reordered.conllu`,
    /// `reordered.jsonl` and `permutation.txt` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (name, r) in [("source", &self.source), ("reordered", &self.reordered)] {
            fs::write(dir.join(format!("{name}.conllu")), write_conllu(&r.sentences))?;
            fs::write(dir.join(format!("{name}.jsonl")), write_instances(&r.instances)?)?;
        }
        let mut perm = String::new();
        for p in &self.permutations {
            let line: Vec<String> = p.iter().map(usize::to_string).collect();
            perm.push_str(&line.join(" "));
            perm.push('\n');
        }
        fs::write(dir.join("permutation.txt"), perm)?;
        Ok(())
    }
}

fn preorder(children: &[Vec<usize>], root: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(children.len());
    let mut stack = vec![root];
    while let Some(u) = stack.pop() {
        order.push(u);
        stack.extend(children[u].iter().rev());
    }
    order
}

pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SyntheticCorpus> {
    if cfg.min_len > cfg.max_len {
        return Err(invalid(format!(
            "empty length range [{}, {}]",
            cfg.min_len, cfg.max_len
        )));
    }
    if cfg.min_len < 2 {
        return Err(invalid("sentences need at least 2 tokens to hold two spans"));
    }
    if cfg.n_forms == 0 {
        return Err(invalid("n_forms must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = SyntheticCorpus {
        source: Realization {
            sentences: Vec::new(),
            instances: Vec::new(),
        },
        reordered: Realization {
            sentences: Vec::new(),
            instances: Vec::new(),
        },
        permutations: Vec::new(),
    };
    for s in 0..cfg.count {
        let n = rng.gen_range(cfg.min_len..=cfg.max_len);
        // random recursive tree over nodes 0..n, rooted at 0
        let parent: Vec<Option<usize>> = (0..n)
            .map(|i| if i == 0 { None } else { Some(rng.gen_range(0..i)) })
            .collect();
        let mut children = vec![Vec::new(); n];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                children[p].push(i);
            }
        }
        let order = preorder(&children, 0);
        let mut pos = vec![0; n];
        for (p, &node) in order.iter().enumerate() {
            pos[node] = p;
        }
        let heads: Vec<Option<usize>> = order.iter().map(|&node| parent[node].map(|h| pos[h])).collect();
        let dist = distances_from_heads(&heads);

        let a = rng.gen_range(0..n);
        let (near, far): (Vec<usize>, Vec<usize>) = (0..n).filter(|&j| j != a).partition(|&j| dist.get(a, j) <= cfg.k);
        let want_near = rng.gen_bool(cfg.positive_rate);
        let pool = match (want_near, near.is_empty(), far.is_empty()) {
            (true, false, _) | (false, _, true) => &near,
            _ => &far,
        };
        let b = *pool.choose(&mut rng).expect("n >= 2 leaves a candidate");
        let label = if dist.get(a, b) <= cfg.k {
            cfg.positive_label.clone()
        } else {
            NONE_LABEL.to_string()
        };

        let tokens: Vec<Token> = heads
            .iter()
            .enumerate()
            .map(|(i, &head)| {
                let entity_type = if i == a {
                    cfg.span_types.0.clone()
                } else if i == b {
                    cfg.span_types.1.clone()
                } else {
                    DISTRACTOR_TYPES.choose(&mut rng).unwrap().to_string()
                };
                Token {
                    form: format!("w{}", rng.gen_range(0..cfg.n_forms)),
                    upos: UPOS.choose(&mut rng).unwrap().to_string(),
                    deprel: if head.is_none() {
                        "root".into()
                    } else {
                        DEPREL.choose(&mut rng).unwrap().to_string()
                    },
                    entity_type,
                    head,
                }
            })
            .collect();
        let sentence = DepSentence {
            id: format!("synth-{s:05}"),
            tokens,
        };
        let instance = TaskInstance {
            sentence_id: sentence.id.clone(),
            task: cfg.task,
            span_a: Span::single(a),
            span_b: Span::single(b),
            label,
            trigger_type: None,
        };

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let reordered = sentence.permuted(&perm)?;
        let reordered_instance = TaskInstance {
            span_a: Span::single(perm[a]),
            span_b: Span::single(perm[b]),
            ..instance.clone()
        };

        corpus.source.sentences.push(sentence);
        corpus.source.instances.push(instance);
        corpus.reordered.sentences.push(reordered);
        corpus.reordered.instances.push(reordered_instance);
        corpus.permutations.push(perm);
    }
    Ok(corpus)
}
