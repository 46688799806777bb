//! Relation-extraction and argument-role-labeling heads.
//!
//! Both tasks pool the two spans and the whole sentence, concatenate
//! `[first; second; sentence]` and apply a linear layer with softmax. The
//! first slot is the subject (RE) or the trigger (EARL).

use crate::corpus::{Span, TaskInstance};
use crate::encoder::{Bound, Model};
use crate::error::{invalid, Result};
use crate::numerics::{Tape, Var};
use crate::scalar::Scalar;

/// Column-wise max over the rows of `h` inside `span`.
pub fn span_pool<T: Scalar>(tape: &mut Tape<'_, T>, h: Var, span: Span) -> Result<Var> {
    span.check(tape.value(h).rows())?;
    let rows = tape.slice_rows(h, span.begin, span.end)?;
    tape.max_pool_rows(rows)
}

/// Unnormalized class scores `Wᵀ[ê_a; ê_b; ŝ] + b`.
pub fn classify_logits<T: Scalar>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    bound: &Bound,
    h: Var,
    instance: &TaskInstance,
) -> Result<Var> {
    if instance.task != model.config.task {
        return Err(invalid(format!(
            "{} instance given to a {} classifier",
            instance.task, model.config.task
        )));
    }
    let n = tape.value(h).rows();
    let a = span_pool(tape, h, instance.span_a)?;
    let b = span_pool(tape, h, instance.span_b)?;
    let s = span_pool(tape, h, Span::new(0, n))?;
    let mut parts = vec![a, b, s];
    let lay = &model.layout.classifier;
    if let Some(table) = lay.trigger_type {
        let idx = instance
            .trigger_type
            .as_deref()
            .map_or(0, |t| model.vocab.trigger_type.index_or_reserved(t));
        parts.push(tape.gather_rows(bound.var(table), &[idx])?);
    }
    let x = tape.concat(&parts, 1)?;
    let logits = tape.matmul(x, bound.var(lay.w))?;
    tape.add_row(logits, bound.var(lay.b))
}

/// Class probabilities for one instance.
pub fn classify<T: Scalar>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    bound: &Bound,
    h: Var,
    instance: &TaskInstance,
) -> Result<Var> {
    let logits = classify_logits(tape, model, bound, h, instance)?;
    Ok(tape.softmax(logits))
}

pub fn label_index<T: Scalar>(model: &Model<T>, instance: &TaskInstance) -> Result<usize> {
    model
        .vocab
        .label
        .get(&instance.label)
        .ok_or_else(|| invalid(format!("unknown label `{}`", instance.label)))
}

/// Cross-entropy of the gold label.
pub fn instance_loss<T: Scalar>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    bound: &Bound,
    h: Var,
    instance: &TaskInstance,
) -> Result<Var> {
    let target = label_index(model, instance)?;
    let logits = classify_logits(tape, model, bound, h, instance)?;
    tape.cross_entropy(logits, target)
}
