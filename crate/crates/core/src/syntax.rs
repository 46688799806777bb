//! Syntactic distances over dependency trees and the per-head attention
//! masks derived from them.
//!
//! Distances ignore arc direction and put `1` on the diagonal, so a
//! threshold of `1` recovers the adjacency matrix plus self-loops.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{DepSentence, Task};
use crate::error::{invalid, Error, Result};

/// Symmetric all-pairs hop counts with a unit diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<u32>,
}

impl DistanceMatrix {
    /// Wraps raw distances. Used to override `D` in experiments.
    pub fn from_raw(n: usize, d: Vec<u32>) -> Result<Self> {
        if d.len() != n * n {
            return Err(invalid(format!("{} distances for {n} tokens", d.len())));
        }
        if d.contains(&0) {
            return Err(invalid("distances must be positive"));
        }
        Ok(DistanceMatrix { n, d })
    }

    /// Constant-one matrix; makes distance reweighting the identity.
    pub fn ones(n: usize) -> Self {
        DistanceMatrix { n, d: vec![1; n * n] }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.d[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    /// Relabels tokens: the result has `out[perm[i]][perm[j]] = self[i][j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n, "permutation length");
        let mut d = vec![0; self.n * self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                d[perm[i] * self.n + perm[j]] = self.get(i, j);
            }
        }
        DistanceMatrix { n: self.n, d }
    }

    /// Tab-separated dump: a header of token forms, then one row per token.
    pub fn to_tsv(&self, forms: &[&str]) -> String {
        let mut out = String::new();
        if !forms.is_empty() {
            out.push_str(&forms.join("\t"));
            out.push('\n');
        }
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(u32::to_string).collect();
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }
}

/// Undirected shortest-path distances on the sentence's dependency tree,
/// one BFS per token.
pub fn pairwise_distances(sentence: &DepSentence) -> DistanceMatrix {
    let heads: Vec<Option<usize>> = sentence.tokens.iter().map(|t| t.head).collect();
    distances_from_heads(&heads)
}

pub(crate) fn distances_from_heads(heads: &[Option<usize>]) -> DistanceMatrix {
    let n = heads.len();
    let mut adj = vec![Vec::new(); n];
    for (i, h) in heads.iter().enumerate() {
        if let Some(h) = *h {
            adj[i].push(h);
            adj[h].push(i);
        }
    }
    let mut d = vec![0u32; n * n];
    let mut queue = VecDeque::with_capacity(n);
    for src in 0..n {
        let row = &mut d[src * n..(src + 1) * n];
        let mut seen = vec![false; n];
        seen[src] = true;
        queue.clear();
        queue.push_back((src, 0u32));
        while let Some((u, du)) = queue.pop_front() {
            row[u] = du;
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back((v, du + 1));
                }
            }
        }
        row[src] = 1;
    }
    DistanceMatrix { n, d }
}

/// Per-head distance threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Delta {
    Bounded(u32),
    Unbounded,
}

impl Delta {
    pub fn admits(self, distance: u32) -> bool {
        match self {
            Delta::Bounded(k) => distance <= k,
            Delta::Unbounded => true,
        }
    }
}

impl fmt::Display for Delta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Delta::Bounded(k) => write!(f, "{k}"),
            Delta::Unbounded => f.write_str("inf"),
        }
    }
}

impl FromStr for Delta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s == "∞" {
            return Ok(Delta::Unbounded);
        }
        let k: u32 = s.parse().map_err(|_| invalid(format!("bad delta `{s}`")))?;
        if k == 0 {
            return Err(invalid("delta must be at least 1"));
        }
        Ok(Delta::Bounded(k))
    }
}

/// Which pairs of tokens a head may attend between.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    allow: Vec<bool>,
    delta: Delta,
}

impl AttentionMask {
    /// Mask with every pair allowed (the plain Transformer default).
    pub fn all_allowed(n: usize) -> Self {
        AttentionMask {
            n,
            allow: vec![true; n * n],
            delta: Delta::Unbounded,
        }
    }

    pub fn from_allow(n: usize, allow: Vec<bool>) -> Result<Self> {
        if allow.len() != n * n {
            return Err(invalid(format!("{} mask entries for {n} tokens", allow.len())));
        }
        Ok(AttentionMask {
            n,
            allow,
            delta: Delta::Unbounded,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn delta(&self) -> Delta {
        self.delta
    }

    #[inline]
    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.n + j]
    }

    pub fn allowed_count(&self) -> usize {
        self.allow.iter().filter(|&&a| a).count()
    }
}

/// `ALLOW` exactly where `d[i][j] ≤ δ`.
pub fn build_mask(d: &DistanceMatrix, delta: Delta) -> Result<AttentionMask> {
    if delta == Delta::Bounded(0) {
        return Err(invalid("delta = 0 would forbid the self-loop"));
    }
    let allow = d.d.iter().map(|&x| delta.admits(x)).collect();
    Ok(AttentionMask { n: d.n, allow, delta })
}

/// One threshold per attention head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaSchedule(Vec<Delta>);

impl DeltaSchedule {
    pub fn new(deltas: Vec<Delta>) -> Result<Self> {
        if deltas.is_empty() {
            return Err(invalid("empty delta schedule"));
        }
        if deltas.contains(&Delta::Bounded(0)) {
            return Err(invalid("delta must be at least 1"));
        }
        Ok(DeltaSchedule(deltas))
    }

    pub fn unbounded(n_heads: usize) -> Self {
        DeltaSchedule(vec![Delta::Unbounded; n_heads])
    }

    pub fn deltas(&self) -> &[Delta] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn masks(&self, d: &DistanceMatrix) -> Result<Vec<AttentionMask>> {
        self.0.iter().map(|&delta| build_mask(d, delta)).collect()
    }
}

impl fmt::Display for DeltaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

/// Comma list with `inf`, e.g. `2,2,4,4,inf,inf,inf,inf`.
impl FromStr for DeltaSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let deltas = s.split(',').map(str::parse).collect::<Result<Vec<Delta>>>()?;
        DeltaSchedule::new(deltas)
    }
}

/// Tuned per-head thresholds for the eight-head configuration.
pub fn default_schedule(task: Task, n_heads: usize) -> Result<DeltaSchedule> {
    use Delta::{Bounded as B, Unbounded as U};
    if n_heads != 8 {
        return Err(invalid(format!(
            "explicit schedule required for {n_heads} heads (defaults exist for 8)"
        )));
    }
    let deltas = match task {
        Task::Earl => vec![B(2), B(2), B(4), B(4), U, U, U, U],
        Task::Re => vec![B(1), B(1), B(2), B(2), U, U, U, U],
    };
    Ok(DeltaSchedule(deltas))
}
