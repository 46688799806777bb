//! Syntax-aware Transformer encoder.
//!
//! Each head attends only to tokens within its distance threshold and,
//! in [`AttentionMode::Gate`], divides the resulting attention weights by
//! the syntactic distance before renormalizing. There is no sequential
//! position signal unless the position-embedding control is switched on,
//! so encoder outputs are equivariant under token permutations that
//! relabel the tree consistently.

mod config;
mod features;
mod params;

use rand::RngCore;

pub use config::{AttentionMode, EncoderConfig};
pub use features::{parse_word_features, read_word_features, WordFeatures};
pub use params::{
    Bound, ClassifierLayout, EmbeddingLayout, HeadLayout, LayerLayout, Layout, Model, ParamId, ParamStore,
};

use crate::corpus::{DepSentence, Vocab};
use crate::error::{invalid, Error, Result};
use crate::numerics::{Array, Tape, Var};
use crate::scalar::Scalar;
use crate::syntax::{pairwise_distances, AttentionMask, DeltaSchedule, DistanceMatrix};

/// Training applies dropout with the given generator; evaluation does not.
pub enum Phase<'r> {
    Eval,
    Train(&'r mut dyn RngCore),
}

impl Phase<'_> {
    fn dropout<T: Scalar>(&mut self, tape: &mut Tape<'_, T>, x: Var, rate: f64) -> Result<Var> {
        match self {
            Phase::Eval => Ok(x),
            Phase::Train(rng) => tape.dropout(x, rate, &mut **rng, true),
        }
    }
}

/// A sentence resolved against a vocabulary with its distances and masks.
#[derive(Clone, Debug)]
pub struct PreparedSentence<T: Scalar> {
    pub id: String,
    pub form: Vec<usize>,
    pub upos: Vec<usize>,
    pub deprel: Vec<usize>,
    pub entity_type: Vec<usize>,
    pub distances: DistanceMatrix,
    /// One mask per head.
    pub masks: Vec<AttentionMask>,
    pub word_features: Option<Array<T>>,
}

impl<T: Scalar> PreparedSentence<T> {
    pub fn new(
        sentence: &DepSentence,
        vocab: &Vocab,
        schedule: &DeltaSchedule,
        word_features: Option<Array<T>>,
    ) -> Result<Self> {
        let distances = pairwise_distances(sentence);
        Self::with_distances(sentence, vocab, schedule, word_features, distances)
    }

    /// Uses `distances` in place of the tree distances.
    pub fn with_distances(
        sentence: &DepSentence,
        vocab: &Vocab,
        schedule: &DeltaSchedule,
        word_features: Option<Array<T>>,
        distances: DistanceMatrix,
    ) -> Result<Self> {
        let n = sentence.len();
        if distances.len() != n {
            return Err(invalid(format!("{} distances for {n} tokens", distances.len())));
        }
        if let Some(f) = &word_features {
            if f.rows() != n {
                return Err(invalid(format!(
                    "sentence {}: {} external feature rows for {n} tokens",
                    sentence.id,
                    f.rows()
                )));
            }
        }
        let idx = |f: fn(&crate::corpus::Token) -> &str, lex: &crate::corpus::Lexicon| {
            sentence
                .tokens
                .iter()
                .map(|t| lex.index_or_reserved(f(t)))
                .collect::<Vec<_>>()
        };
        Ok(PreparedSentence {
            id: sentence.id.clone(),
            form: idx(|t| &t.form, &vocab.form),
            upos: idx(|t| &t.upos, &vocab.upos),
            deprel: idx(|t| &t.deprel, &vocab.deprel),
            entity_type: idx(|t| &t.entity_type, &vocab.entity_type),
            masks: schedule.masks(&distances)?,
            distances,
            word_features,
        })
    }

    pub fn len(&self) -> usize {
        self.form.len()
    }

    pub fn is_empty(&self) -> bool {
        self.form.is_empty()
    }
}

/// `H⁰`: concatenated word and tag embeddings projected to `d_model` (plus the
/// position embedding when the control is on), then dropout.
pub fn embed<T: Scalar>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    bound: &Bound,
    sentence: &PreparedSentence<T>,
    phase: &mut Phase<'_>,
) -> Result<Var> {
    let cfg = &model.config;
    let lay = &model.layout.embedding;
    let n = sentence.len();
    if n > cfg.max_len {
        return Err(invalid(format!(
            "sentence of {n} tokens exceeds max length {}",
            cfg.max_len
        )));
    }
    let word = match (lay.word, &sentence.word_features) {
        (Some(table), _) => tape.gather_rows(bound.var(table), &sentence.form)?,
        (None, Some(features)) => {
            if features.cols() != cfg.word_emb_dim {
                return Err(Error::Shape {
                    op: "embed",
                    detail: format!("feature width {} != word_emb_dim {}", features.cols(), cfg.word_emb_dim),
                });
            }
            tape.constant(features.clone())
        }
        (None, None) => {
            return Err(invalid(format!(
                "sentence {} has no external word features",
                sentence.id
            )))
        }
    };
    let parts = [
        word,
        tape.gather_rows(bound.var(lay.upos), &sentence.upos)?,
        tape.gather_rows(bound.var(lay.deprel), &sentence.deprel)?,
        tape.gather_rows(bound.var(lay.entity_type), &sentence.entity_type)?,
    ];
    let x = tape.concat(&parts, 1)?;
    let h = tape.matmul(x, bound.var(lay.proj_w))?;
    let mut h = tape.add_row(h, bound.var(lay.proj_b))?;
    if let Some(pos) = lay.position {
        let positions: Vec<usize> = (0..n).collect();
        let p = tape.gather_rows(bound.var(pos), &positions)?;
        h = tape.add(h, p)?;
    }
    phase.dropout(tape, h, cfg.dropout)
}

/// One attention head: `F(masked_softmax(QKᵀ/√d_k)) · V` in GATE mode,
/// `masked_softmax(QKᵀ/√d_k) · V` in plain mode.
#[allow(clippy::too_many_arguments)]
pub fn gate_attention_head<T: Scalar>(
    tape: &mut Tape<'_, T>,
    h: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    mask: &AttentionMask,
    distances: &DistanceMatrix,
    mode: AttentionMode,
) -> Result<Var> {
    let q = tape.matmul(h, wq)?;
    let k = tape.matmul(h, wk)?;
    let v = tape.matmul(h, wv)?;
    let d_k = tape.value(wk).cols();
    let scores = tape.matmul_t(q, k)?;
    let scores = tape.scale(scores, T::one() / T::of(d_k as f64).sqrt())?;
    let p = tape.masked_softmax(scores, mask)?;
    let attn = match mode {
        AttentionMode::Gate => tape.distance_reweight(p, distances, mask)?,
        AttentionMode::Plain => p,
    };
    tape.matmul(attn, v)
}

/// Multi-head attention, residual and layer norm, then the position-wise
/// feed-forward block with its own residual and layer norm.
#[allow(clippy::too_many_arguments)]
pub fn encoder_layer<T: Scalar>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    bound: &Bound,
    layer: usize,
    h: Var,
    masks: &[AttentionMask],
    distances: &DistanceMatrix,
    phase: &mut Phase<'_>,
) -> Result<Var> {
    let cfg = &model.config;
    let lay = &model.layout.layers[layer];
    if masks.len() != lay.heads.len() {
        return Err(invalid(format!("{} masks for {} heads", masks.len(), lay.heads.len())));
    }
    let mut heads = Vec::with_capacity(lay.heads.len());
    for (head, mask) in lay.heads.iter().zip(masks) {
        heads.push(gate_attention_head(
            tape,
            h,
            bound.var(head.wq),
            bound.var(head.wk),
            bound.var(head.wv),
            mask,
            distances,
            cfg.attention_mode,
        )?);
    }
    let cat = tape.concat(&heads, 1)?;
    let attn = tape.matmul(cat, bound.var(lay.wo))?;
    let attn = tape.add_row(attn, bound.var(lay.bo))?;
    let attn = phase.dropout(tape, attn, cfg.dropout)?;
    let res = tape.add(h, attn)?;
    let h1 = tape.layer_norm(res, bound.var(lay.ln1_gain), bound.var(lay.ln1_bias))?;

    let ff = tape.matmul(h1, bound.var(lay.ff1_w))?;
    let ff = tape.add_row(ff, bound.var(lay.ff1_b))?;
    let ff = tape.relu(ff);
    let ff = tape.matmul(ff, bound.var(lay.ff2_w))?;
    let ff = tape.add_row(ff, bound.var(lay.ff2_b))?;
    let ff = phase.dropout(tape, ff, cfg.dropout)?;
    let res = tape.add(h1, ff)?;
    tape.layer_norm(res, bound.var(lay.ln2_gain), bound.var(lay.ln2_bias))
}

/// `H^L` for a prepared sentence; one distance matrix shared by all layers and heads.
pub fn encode<T: Scalar>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    bound: &Bound,
    sentence: &PreparedSentence<T>,
    phase: &mut Phase<'_>,
) -> Result<Var> {
    let mut h = embed(tape, model, bound, sentence, phase)?;
    for layer in 0..model.layout.layers.len() {
        h = encoder_layer(
            tape,
            model,
            bound,
            layer,
            h,
            &sentence.masks,
            &sentence.distances,
            phase,
        )?;
    }
    Ok(h)
}

impl<T: Scalar> Model<T> {
    pub fn prepare(&self, sentence: &DepSentence, features: Option<Array<T>>) -> Result<PreparedSentence<T>> {
        PreparedSentence::new(sentence, &self.vocab, &self.config.delta_schedule, features)
    }

    /// Contextual representations without dropout.
    pub fn encode_eval(&self, sentence: &PreparedSentence<T>) -> Result<Array<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let h = encode(&mut tape, self, &bound, sentence, &mut Phase::Eval)?;
        Ok(tape.value(h).clone())
    }
}
