//! Micro precision/recall/F1 over non-`None` decisions, and confusion matrices.
//!
//! A prediction is correct when its key `(sentence_id, span_a, span_b)`
//! matches a gold instance with the same non-`None` label. Keys present on
//! only one side count as `None` on the other.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Span, Task, TaskInstance, NONE_LABEL};
use crate::error::{invalid, Error, Result};

pub type InstanceKey = (String, Span, Span);

/// One line of a prediction file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sentence_id: String,
    pub span_a: Span,
    pub span_b: Span,
    pub label: String,
    pub probability: f64,
}

impl Prediction {
    pub fn key(&self) -> InstanceKey {
        (self.sentence_id.clone(), self.span_a, self.span_b)
    }
}

pub fn write_predictions(predictions: &[Prediction]) -> Result<String> {
    let mut out = String::new();
    for p in predictions {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Instance {
            path: path.display().to_string(),
            line: k + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

/// Rows are gold labels, columns predicted labels; index 0 is `None`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn get(&self, gold: &str, predicted: &str) -> usize {
        let (Some(g), Some(p)) = (self.index(gold), self.index(predicted)) else {
            return 0;
        };
        self.counts[g][p]
    }

    fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// `(correct, predicted non-None, gold non-None)`.
    pub fn totals(&self) -> (usize, usize, usize) {
        let k = self.labels.len();
        let correct = (1..k).map(|i| self.counts[i][i]).sum();
        let predicted = (0..k)
            .flat_map(|g| (1..k).map(move |p| (g, p)))
            .map(|(g, p)| self.counts[g][p])
            .sum();
        let gold = (1..k).map(|g| self.counts[g].iter().sum::<usize>()).sum();
        (correct, predicted, gold)
    }

    /// Micro `(precision, recall, f1)` derived from the matrix.
    pub fn micro_prf(&self) -> (f64, f64, f64) {
        let (c, p, g) = self.totals();
        prf(c, p, g)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `f1 = 2c / (p + g)`, equal to `2PR / (P + R)` and `0` when both vanish.
fn prf(correct: usize, predicted: usize, gold: usize) -> (f64, f64, f64) {
    (
        ratio(correct, predicted),
        ratio(correct, gold),
        ratio(2 * correct, predicted + gold),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub task: Task,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
    pub per_label: BTreeMap<String, LabelCounts>,
    pub confusion: Confusion,
}

impl ScoreReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task      {}", self.task);
        let _ = writeln!(
            s,
            "precision {:.4} ({}/{})",
            self.precision, self.correct, self.predicted
        );
        let _ = writeln!(s, "recall    {:.4} ({}/{})", self.recall, self.correct, self.gold);
        let _ = writeln!(s, "f1        {:.4}", self.f1);
        let _ = writeln!(s, "\n{:<24} {:>8} {:>9} {:>6}", "label", "correct", "predicted", "gold");
        for (label, c) in &self.per_label {
            let _ = writeln!(s, "{:<24} {:>8} {:>9} {:>6}", label, c.correct, c.predicted, c.gold);
        }
        let _ = writeln!(s, "\nconfusion (rows gold, columns predicted)");
        let _ = writeln!(s, "{:<24} {}", "", self.confusion.labels.join("\t"));
        for (label, row) in self.confusion.labels.iter().zip(&self.confusion.counts) {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{:<24} {}", label, cells.join("\t"));
        }
        s
    }
}

fn index_unique<'a, I>(items: I, what: &str) -> Result<HashMap<InstanceKey, &'a str>>
where
    I: IntoIterator<Item = (InstanceKey, &'a str)>,
{
    let mut map = HashMap::new();
    for (key, label) in items {
        if map.insert(key.clone(), label).is_some() {
            return Err(invalid(format!(
                "duplicate {what} key ({}, [{}, {}), [{}, {}))",
                key.0, key.1.begin, key.1.end, key.2.begin, key.2.end
            )));
        }
    }
    Ok(map)
}

/// Aligned `(gold, predicted)` label pairs over the union of keys.
fn align<'a>(predictions: &'a [Prediction], gold: &'a [TaskInstance]) -> Result<Vec<(&'a str, &'a str)>> {
    let pred = index_unique(predictions.iter().map(|p| (p.key(), p.label.as_str())), "prediction")?;
    let gold = index_unique(gold.iter().map(|g| (g.key(), g.label.as_str())), "gold")?;
    let keys: BTreeSet<&InstanceKey> = pred.keys().chain(gold.keys()).collect();
    Ok(keys
        .into_iter()
        .map(|k| {
            (
                gold.get(k).copied().unwrap_or(NONE_LABEL),
                pred.get(k).copied().unwrap_or(NONE_LABEL),
            )
        })
        .collect())
}

pub fn confusion(predictions: &[Prediction], gold: &[TaskInstance]) -> Result<Confusion> {
    let pairs = align(predictions, gold)?;
    Ok(confusion_from_pairs(&pairs))
}

fn confusion_from_pairs(pairs: &[(&str, &str)]) -> Confusion {
    let others: BTreeSet<&str> = pairs
        .iter()
        .flat_map(|&(g, p)| [g, p])
        .filter(|&l| l != NONE_LABEL)
        .collect();
    let labels: Vec<String> = std::iter::once(NONE_LABEL).chain(others).map(str::to_string).collect();
    let pos: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut counts = vec![vec![0; labels.len()]; labels.len()];
    for &(g, p) in pairs {
        counts[pos[g]][pos[p]] += 1;
    }
    Confusion { labels, counts }
}

pub fn score(predictions: &[Prediction], gold: &[TaskInstance], task: Task) -> Result<ScoreReport> {
    if let Some(g) = gold.iter().find(|g| g.task != task) {
        return Err(invalid(format!(
            "gold instance for task {} while scoring {task}",
            g.task
        )));
    }
    let pairs = align(predictions, gold)?;
    let mut per_label: BTreeMap<String, LabelCounts> = BTreeMap::new();
    let (mut correct, mut predicted, mut gold_count) = (0, 0, 0);
    for &(g, p) in &pairs {
        if p != NONE_LABEL {
            predicted += 1;
            per_label.entry(p.to_string()).or_default().predicted += 1;
        }
        if g != NONE_LABEL {
            gold_count += 1;
            per_label.entry(g.to_string()).or_default().gold += 1;
            if g == p {
                correct += 1;
                per_label.entry(g.to_string()).or_default().correct += 1;
            }
        }
    }
    let (precision, recall, f1) = prf(correct, predicted, gold_count);
    Ok(ScoreReport {
        task,
        precision,
        recall,
        f1,
        correct,
        predicted,
        gold: gold_count,
        per_label,
        confusion: confusion_from_pairs(&pairs),
    })
}

/// Fraction of keys whose predicted label equals the gold label, `None` included.
pub fn accuracy(predictions: &[Prediction], gold: &[TaskInstance]) -> Result<f64> {
    let pairs = align(predictions, gold)?;
    let hits = pairs.iter().filter(|(g, p)| g == p).count();
    Ok(ratio(hits, pairs.len()))
}
