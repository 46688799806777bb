//! Mini-batch SGD with per-epoch learning-rate decay, global-norm gradient
//! clipping, dev-set model selection and checkpoints.

mod checkpoint;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, RngState, FORMAT_VERSION};

use crate::corpus::{build_vocab, DepSentence, TaskInstance, Treebank, NONE_LABEL};
use crate::encoder::{encode, Bound, EncoderConfig, Model, Phase, PreparedSentence, WordFeatures};
use crate::error::{invalid, Error, Result};
use crate::evaluation::{score, Prediction};
use crate::numerics::{finite_diff_check, Array, GradCheckReport, Tape, Var};
use crate::scalar::Scalar;
use crate::tasks::{classify, instance_loss};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_start_epoch: usize,
    pub batch_size: usize,
    pub max_grad_norm: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// SGD hyperparameters of the reference setup; `epochs` has no default.
    pub fn with_epochs(epochs: usize) -> Self {
        TrainConfig {
            lr: 0.1,
            lr_decay: 0.9,
            decay_start_epoch: 5,
            batch_size: 50,
            max_grad_norm: 5.0,
            epochs,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(invalid(format!("learning rate {} must be non-negative", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(invalid(format!("lr_decay {} outside (0, 1]", self.lr_decay)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if self.max_grad_norm.is_nan() || self.max_grad_norm <= 0.0 {
            return Err(invalid("max_grad_norm must be positive"));
        }
        Ok(())
    }
}

/// `lr · decay^max(0, epoch − decay_start_epoch)` for 1-based `epoch`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let steps = epoch.saturating_sub(cfg.decay_start_epoch);
    cfg.lr * cfg.lr_decay.powi(steps as i32)
}

pub fn global_norm<T: Scalar>(grads: &[Array<T>]) -> T {
    grads.iter().map(Array::norm_sq).sum::<T>().sqrt()
}

/// Rescales all gradients by `max_norm / norm` when their global L2 norm exceeds `max_norm`.
pub fn clip_gradients<T: Scalar>(grads: &mut [Array<T>], max_norm: T) -> T {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// `θ ← θ − lr · g` for every parameter.
pub fn sgd_step<T: Scalar>(params: &mut [Array<T>], grads: &[Array<T>], lr: T) {
    for (p, g) in params.iter_mut().zip(grads) {
        for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * d;
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_p: f64,
    pub dev_r: f64,
    pub dev_f1: f64,
}

pub fn metrics_jsonl(log: &[EpochMetrics]) -> Result<String> {
    let mut out = String::new();
    for m in log {
        out.push_str(&serde_json::to_string(m)?);
        out.push('\n');
    }
    Ok(out)
}

/// Instances paired with their prepared sentences.
pub struct Dataset<T: Scalar> {
    pub sentences: Vec<PreparedSentence<T>>,
    pub instances: Vec<TaskInstance>,
    sentence_of: Vec<usize>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        model: &Model<T>,
        sentences: &[DepSentence],
        instances: &[TaskInstance],
        features: Option<&WordFeatures<T>>,
    ) -> Result<Self> {
        let bank = Treebank::new(sentences.to_vec())?;
        let mut prepared = Vec::with_capacity(sentences.len());
        for s in sentences {
            let f = match features {
                Some(map) => Some(
                    map.get(&s.id)
                        .cloned()
                        .ok_or_else(|| invalid(format!("no word features for sentence `{}`", s.id)))?,
                ),
                None => None,
            };
            prepared.push(model.prepare(s, f)?);
        }
        let mut sentence_of = Vec::with_capacity(instances.len());
        for inst in instances {
            let Some(k) = bank.index_of(&inst.sentence_id) else {
                return Err(invalid(format!("unknown sentence_id `{}`", inst.sentence_id)));
            };
            inst.span_a.check(sentences[k].len())?;
            inst.span_b.check(sentences[k].len())?;
            sentence_of.push(k);
        }
        Ok(Dataset {
            sentences: prepared,
            instances: instances.to_vec(),
            sentence_of,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn sentence(&self, instance: usize) -> &PreparedSentence<T> {
        &self.sentences[self.sentence_of[instance]]
    }
}

/// Loss and parameter gradients for a single instance.
pub fn instance_gradients<T: Scalar>(
    model: &Model<T>,
    sentence: &PreparedSentence<T>,
    instance: &TaskInstance,
    phase: &mut Phase<'_>,
) -> Result<(T, Vec<Option<Array<T>>>)> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let h = encode(&mut tape, model, &bound, sentence, phase)?;
    let loss = instance_loss(&mut tape, model, &bound, h, instance)?;
    let grads = tape.backward(loss)?;
    let per_param = bound.vars().iter().map(|&v| grads.get(v).cloned()).collect();
    Ok((tape.scalar(loss)?, per_param))
}

/// Mean loss over `batch` and its gradient, one array per parameter.
/// Each instance draws its dropout stream from `rng` in batch order.
pub fn batch_gradients<T: Scalar>(
    model: &Model<T>,
    data: &Dataset<T>,
    batch: &[usize],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(T, Vec<Array<T>>)> {
    let mut acc: Vec<Array<T>> = model
        .params
        .arrays()
        .iter()
        .map(|a| Array::zeros(a.rows(), a.cols()))
        .collect();
    let mut total = T::zero();
    let mut rng = rng;
    for &i in batch {
        let mut stream;
        let mut phase = match rng.as_deref_mut() {
            Some(r) => {
                stream = ChaCha8Rng::seed_from_u64(r.next_u64());
                Phase::Train(&mut stream)
            }
            None => Phase::Eval,
        };
        let (loss, grads) = instance_gradients(model, data.sentence(i), &data.instances[i], &mut phase)?;
        total += loss;
        for (a, g) in acc.iter_mut().zip(grads) {
            if let Some(g) = g {
                a.add_assign(&g)?;
            }
        }
    }
    let inv = T::one() / T::of(batch.len() as f64);
    for a in &mut acc {
        for v in a.data_mut() {
            *v *= inv;
        }
    }
    Ok((total * inv, acc))
}

/// Mean instance loss over one sentence, built on leaves supplied by the caller.
pub fn sentence_loss<T: Scalar>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    vars: &[Var],
    sentence: &PreparedSentence<T>,
    instances: &[TaskInstance],
) -> Result<Var> {
    let bound = Bound::from_vars(vars.to_vec());
    let h = encode(tape, model, &bound, sentence, &mut Phase::Eval)?;
    let losses = instances
        .iter()
        .map(|inst| instance_loss(tape, model, &bound, h, inst))
        .collect::<Result<Vec<_>>>()?;
    tape.mean(&losses)
}

/// Central-difference check of the full loss (embedding, encoder layers,
/// classifier, cross-entropy) over every parameter, dropout off.
pub fn check_model_gradients<T: Scalar>(
    model: &Model<T>,
    sentence: &PreparedSentence<T>,
    instances: &[TaskInstance],
    eps: T,
) -> Result<GradCheckReport> {
    finite_diff_check(
        |tape, vars| sentence_loss(tape, model, vars, sentence, instances),
        model.params.arrays(),
        eps,
    )
}

/// Most probable label per instance (first index on ties).
pub fn predict<T: Scalar>(model: &Model<T>, data: &Dataset<T>) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(data.len());
    let mut cache: Option<(usize, Array<T>)> = None;
    for (i, inst) in data.instances.iter().enumerate() {
        let sid = data.sentence_of[i];
        if cache.as_ref().map(|c| c.0) != Some(sid) {
            cache = Some((sid, model.encode_eval(&data.sentences[sid])?));
        }
        let h_val = &cache.as_ref().expect("filled").1;
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let h = tape.leaf(h_val);
        let probs = classify(&mut tape, model, &bound, h, inst)?;
        let p = tape.value(probs);
        let (best, prob) =
            p.data().iter().enumerate().fold(
                (0, T::neg_infinity()),
                |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc },
            );
        out.push(Prediction {
            sentence_id: inst.sentence_id.clone(),
            span_a: inst.span_a,
            span_b: inst.span_b,
            label: model.vocab.label.name(best).unwrap_or(NONE_LABEL).to_string(),
            probability: prob.as_f64(),
        });
    }
    Ok(out)
}

pub struct TrainOutcome<T: Scalar> {
    /// Parameters from the epoch with the best dev F1 (earliest on ties).
    pub best: Checkpoint<T>,
    /// State after the final epoch, suitable for resuming.
    pub last: Checkpoint<T>,
    pub log: Vec<EpochMetrics>,
}

/// Epoch-0 state: vocabulary from the training data, parameters and rng from `cfg.seed`.
pub fn initial_checkpoint<T: Scalar>(
    sentences: &[DepSentence],
    instances: &[TaskInstance],
    encoder: EncoderConfig,
    cfg: &TrainConfig,
) -> Result<Checkpoint<T>> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(invalid("empty training set"));
    }
    let vocab = build_vocab(sentences, instances);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::init(encoder, vocab, &mut rng)?;
    Ok(Checkpoint {
        model,
        epoch: 0,
        rng: RngState::capture(&rng),
    })
}

/// Builds the vocabulary from the training data, initializes a model from
/// `cfg.seed` and trains it. Without a dev set, selection uses the training set.
pub fn train<T: Scalar>(
    sentences: &[DepSentence],
    instances: &[TaskInstance],
    dev: Option<(&[DepSentence], &[TaskInstance])>,
    features: Option<&WordFeatures<T>>,
    encoder: EncoderConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let start = initial_checkpoint(sentences, instances, encoder, cfg)?;
    let train_data = Dataset::new(&start.model, sentences, instances, features)?;
    let dev_data = match dev {
        Some((s, i)) => Some(Dataset::new(&start.model, s, i, features)?),
        None => None,
    };
    resume(start, &train_data, dev_data.as_ref(), cfg)
}

/// Continues training from `start` for `cfg.epochs` further epochs.
pub fn resume<T: Scalar>(
    start: Checkpoint<T>,
    train_data: &Dataset<T>,
    dev_data: Option<&Dataset<T>>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(invalid("empty training set"));
    }
    let dev_data = dev_data.unwrap_or(train_data);
    let mut rng = start.rng.restore()?;
    let mut model = start.model.clone();
    let first_epoch = start.epoch + 1;
    let mut best = start.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    for epoch in first_epoch..first_epoch + cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, mut grads) = match batch_gradients(&model, train_data, batch, Some(&mut rng)) {
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch, loss: f64::NAN }),
                r => r?,
            };
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            loss_sum += loss * batch.len() as f64;
            clip_gradients(&mut grads, T::of(cfg.max_grad_norm));
            sgd_step(model.params.arrays_mut(), &grads, T::of(lr));
        }
        let train_loss = loss_sum / train_data.len() as f64;
        let report = score(&predict(&model, dev_data)?, &dev_data.instances, model.config.task)?;
        log.push(EpochMetrics {
            epoch,
            lr,
            train_loss,
            dev_p: report.precision,
            dev_r: report.recall,
            dev_f1: report.f1,
        });
        if report.f1 > best_f1 {
            best_f1 = report.f1;
            best = Checkpoint {
                model: model.clone(),
                epoch,
                rng: RngState::capture(&rng),
            };
        }
    }
    let last = Checkpoint {
        epoch: first_epoch - 1 + cfg.epochs,
        rng: RngState::capture(&rng),
        model,
    };
    Ok(TrainOutcome { best, last, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::with_epochs(10);
        for e in 1..=5 {
            assert_eq!(lr_at_epoch(&cfg, e), 0.1);
        }
        assert_eq!(lr_at_epoch(&cfg, 6), 0.1 * 0.9);
        let flat = TrainConfig { lr_decay: 1.0, ..cfg };
        assert_eq!(lr_at_epoch(&flat, 40), 0.1);
    }

    #[test]
    fn clipping_cases() {
        let mut g = vec![Array::row_vector(vec![3.0])];
        clip_gradients(&mut g, 5.0);
        assert_eq!(g[0].data(), &[3.0]);
        let mut g = vec![Array::row_vector(vec![3.0, 4.0])];
        clip_gradients(&mut g, 5.0);
        assert_eq!(g[0].data(), &[3.0, 4.0]);
        let mut g = vec![Array::row_vector(vec![6.0]), Array::row_vector(vec![8.0])];
        assert_eq!(clip_gradients(&mut g, 5.0), 10.0);
        assert_eq!((g[0].data(), g[1].data()), (&[3.0][..], &[4.0][..]));
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut p = vec![Array::row_vector(vec![1.0, -1.0])];
        sgd_step(&mut p, &[Array::row_vector(vec![0.5, 2.0])], 0.1);
        assert_eq!(p[0].data(), &[1.0 - 0.05, -1.0 - 0.2]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            lr_decay: 0.0,
            ..TrainConfig::with_epochs(1)
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..TrainConfig::with_epochs(1)
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lr: 0.0,
            ..TrainConfig::with_epochs(1)
        }
        .validate()
        .is_ok());
    }
}
