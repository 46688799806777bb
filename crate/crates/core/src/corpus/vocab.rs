use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{DepSentence, TaskInstance, NONE_LABEL};
use crate::error::{invalid, Result};

pub const UNKNOWN: &str = "<unk>";

/// Bijective string ↔ index map. Index 0 is reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Lexicon {
    /// `reserved` takes index 0; the rest are deduplicated and sorted.
    pub fn new<'a>(reserved: &str, entries: impl IntoIterator<Item = &'a str>) -> Self {
        let sorted: BTreeSet<&str> = entries.into_iter().filter(|e| *e != reserved).collect();
        let names: Vec<String> = std::iter::once(reserved).chain(sorted).map(str::to_string).collect();
        Self::from_names(names).expect("deduplicated")
    }

    fn from_names(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(invalid(format!("duplicate vocabulary entry `{n}`")));
            }
        }
        Ok(Lexicon { names, index })
    }

    pub fn get(&self, s: &str) -> Option<usize> {
        self.index.get(s).copied()
    }

    /// Index of `s`, falling back to the reserved slot 0.
    pub fn index_or_reserved(&self, s: &str) -> usize {
        self.get(s).unwrap_or(0)
    }

    pub fn name(&self, i: usize) -> Option<&str> {
        self.names.get(i).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl Serialize for Lexicon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Lexicon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        Lexicon::from_names(names).map_err(serde::de::Error::custom)
    }
}

/// Feature and label vocabularies. Feature maps reserve index 0 for unknown
/// strings; the label map reserves index 0 for `None`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub form: Lexicon,
    pub upos: Lexicon,
    pub deprel: Lexicon,
    pub entity_type: Lexicon,
    pub label: Lexicon,
    pub trigger_type: Lexicon,
}

/// Deterministic vocabularies: unique strings sorted lexicographically from index 1.
pub fn build_vocab(sentences: &[DepSentence], instances: &[TaskInstance]) -> Vocab {
    let toks = || sentences.iter().flat_map(|s| s.tokens.iter());
    Vocab {
        form: Lexicon::new(UNKNOWN, toks().map(|t| t.form.as_str())),
        upos: Lexicon::new(UNKNOWN, toks().map(|t| t.upos.as_str())),
        deprel: Lexicon::new(UNKNOWN, toks().map(|t| t.deprel.as_str())),
        entity_type: Lexicon::new(UNKNOWN, toks().map(|t| t.entity_type.as_str())),
        label: Lexicon::new(NONE_LABEL, instances.iter().map(|i| i.label.as_str())),
        trigger_type: Lexicon::new(UNKNOWN, instances.iter().filter_map(|i| i.trigger_type.as_deref())),
    }
}
