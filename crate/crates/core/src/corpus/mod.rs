//! Dependency-parsed sentences, task instances, vocabularies and the
//! synthetic word-order corpus.

mod conllu;
mod instances;
pub mod synth;
mod vocab;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use conllu::{parse_conllu, parse_conllu_with, read_conllu, write_conllu, ParseOptions};
pub use instances::{load_instances, parse_instances, write_instances};
pub use synth::{generate_synthetic, SynthConfig, SyntheticCorpus};
pub use vocab::{build_vocab, Lexicon, Vocab};

/// Default cap on sentence length.
pub const DEFAULT_MAX_LEN: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub form: String,
    pub upos: String,
    pub deprel: String,
    /// ACE entity type or `"O"`.
    pub entity_type: String,
    /// 0-based head index; `None` marks the root.
    pub head: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepSentence {
    pub id: String,
    pub tokens: Vec<Token>,
}

impl DepSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }

    pub fn heads(&self) -> Vec<Option<usize>> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    /// Checks the single-rooted tree invariant.
    pub fn validate(&self) -> Result<()> {
        validate_heads(&self.heads()).map_err(|(_, msg)| invalid(format!("sentence {}: {msg}", self.id)))
    }

    /// Moves token `i` to position `perm[i]`, relabeling heads to match.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.len())?;
        let mut slots: Vec<Option<Token>> = vec![None; self.len()];
        for (i, tok) in self.tokens.iter().enumerate() {
            let mut t = tok.clone();
            t.head = t.head.map(|h| perm[h]);
            slots[perm[i]] = Some(t);
        }
        Ok(DepSentence {
            id: self.id.clone(),
            tokens: slots
                .into_iter()
                .map(|t| t.expect("permutation is a bijection"))
                .collect(),
        })
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(invalid(format!("permutation of length {} for {n} tokens", perm.len())));
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(invalid(format!("not a permutation: {perm:?}")));
        }
    }
    Ok(())
}

/// Validates a head vector. On failure returns the offending token index
/// (if any) and a message.
pub(crate) fn validate_heads(heads: &[Option<usize>]) -> std::result::Result<(), (Option<usize>, String)> {
    let n = heads.len();
    if n == 0 {
        return Err((None, "empty sentence".into()));
    }
    let mut roots = heads.iter().enumerate().filter(|(_, h)| h.is_none()).map(|(i, _)| i);
    let root = roots.next();
    if let Some(extra) = roots.next() {
        return Err((Some(extra), "multiple roots".into()));
    }
    for (i, h) in heads.iter().enumerate() {
        match *h {
            Some(h) if h == i => return Err((Some(i), "token is its own head".into())),
            Some(h) if h >= n => return Err((Some(i), format!("head {} out of range", h + 1))),
            _ => {}
        }
    }
    // 0 = unvisited, 1 = on current path, 2 = reaches root
    let mut state = vec![0u8; n];
    for start in 0..n {
        let mut path = Vec::new();
        let mut cur = start;
        loop {
            match state[cur] {
                2 => break,
                1 => return Err((Some(cur), "cycle detected".into())),
                _ => {}
            }
            state[cur] = 1;
            path.push(cur);
            match heads[cur] {
                Some(h) => cur = h,
                None => break,
            }
        }
        for p in path {
            state[p] = 2;
        }
    }
    if root.is_none() {
        return Err((None, "no root".into()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    /// Relation extraction.
    #[serde(rename = "RE")]
    Re,
    /// Event argument role labeling.
    #[serde(rename = "EARL")]
    Earl,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Re => "RE",
            Task::Earl => "EARL",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "RE" | "re" => Ok(Task::Re),
            "EARL" | "earl" => Ok(Task::Earl),
            other => Err(invalid(format!("unknown task tag `{other}`"))),
        }
    }
}

/// Half-open token range `[begin, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub begin: usize,
    pub end: usize,
}

impl Span {
    pub fn new(begin: usize, end: usize) -> Self {
        Span { begin, end }
    }

    pub fn single(i: usize) -> Self {
        Span { begin: i, end: i + 1 }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.begin)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.begin
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.is_empty() {
            return Err(invalid("empty span"));
        }
        if self.end > n {
            return Err(invalid(format!(
                "span out of bounds: [{}, {}) for {n} tokens",
                self.begin, self.end
            )));
        }
        Ok(())
    }
}

impl From<[usize; 2]> for Span {
    fn from([begin, end]: [usize; 2]) -> Self {
        Span { begin, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.begin, s.end]
    }
}

/// Label of the negative class.
pub const NONE_LABEL: &str = "None";

/// A relation (subject, object) or event-argument (trigger, argument) candidate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskInstance {
    pub sentence_id: String,
    pub task: Task,
    /// Subject mention (RE) or trigger (EARL).
    pub span_a: Span,
    /// Object mention (RE) or argument candidate (EARL).
    pub span_b: Span,
    pub label: String,
    /// Event type of the trigger, used only when the trigger-type feature is on.
    pub trigger_type: Option<String>,
}

impl TaskInstance {
    pub fn key(&self) -> (String, Span, Span) {
        (self.sentence_id.clone(), self.span_a, self.span_b)
    }
}

/// Sentences indexed by id.
#[derive(Clone, Debug, Default)]
pub struct Treebank {
    sentences: Vec<DepSentence>,
    by_id: HashMap<String, usize>,
}

impl Treebank {
    pub fn new(sentences: Vec<DepSentence>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(sentences.len());
        for (i, s) in sentences.iter().enumerate() {
            if by_id.insert(s.id.clone(), i).is_some() {
                return Err(invalid(format!("duplicate sentence id `{}`", s.id)));
            }
        }
        Ok(Treebank { sentences, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&DepSentence> {
        self.by_id.get(id).map(|&i| &self.sentences[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn sentences(&self) -> &[DepSentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_validation() {
        assert!(validate_heads(&[None]).is_ok());
        assert!(validate_heads(&[Some(1), None, Some(1)]).is_ok());
        assert_eq!(
            validate_heads(&[Some(1), Some(0), None]).unwrap_err().1,
            "cycle detected"
        );
        assert_eq!(validate_heads(&[None, None]).unwrap_err().1, "multiple roots");
        assert_eq!(validate_heads(&[Some(1), Some(0)]).unwrap_err().1, "cycle detected");
        assert!(validate_heads(&[Some(0)]).is_err());
    }

    #[test]
    fn span_checks() {
        assert_eq!(
            Span::new(3, 3).check(4).unwrap_err().to_string(),
            "invalid argument: empty span"
        );
        assert!(Span::new(2, 9)
            .check(4)
            .unwrap_err()
            .to_string()
            .contains("span out of bounds"));
        assert!(Span::new(0, 4).check(4).is_ok());
    }
}
