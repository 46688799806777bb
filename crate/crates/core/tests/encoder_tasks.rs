mod common;

use gate_core::corpus::{DepSentence, Span, Task, TaskInstance, Token};
use gate_core::encoder::{embed, encode, gate_attention_head, parse_word_features, AttentionMode, Phase};
use gate_core::numerics::{Array, Tape};
use gate_core::syntax::{pairwise_distances, AttentionMask};
use gate_core::tasks::{classify, classify_logits, instance_loss, span_pool};
use gate_core::training::{batch_gradients, instance_gradients, Dataset};
use gate_core::{Array64, Model64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn token(form: &str, head: Option<usize>) -> Token {
    Token {
        form: form.into(),
        upos: "NOUN".into(),
        deprel: "dep".into(),
        entity_type: "O".into(),
        head,
    }
}

/// Root `hub` with `leaves` identical dependents.
fn star(leaves: usize) -> DepSentence {
    let mut tokens = vec![token("hub", None)];
    tokens.extend((0..leaves).map(|_| token("leaf", Some(0))));
    DepSentence {
        id: "star".into(),
        tokens,
    }
}

fn relation(id: &str, a: Span, b: Span, label: &str) -> TaskInstance {
    TaskInstance {
        sentence_id: id.into(),
        task: Task::Re,
        span_a: a,
        span_b: b,
        label: label.into(),
        trigger_type: None,
    }
}

fn zero_named(model: &mut Model64, prefix: &str) {
    let names: Vec<String> = model.params.names().to_vec();
    for (name, a) in names.iter().zip(model.params.arrays_mut()) {
        if name.starts_with(prefix) {
            *a = Array::zeros(a.rows(), a.cols());
        }
    }
}

#[test]
fn encoder_output_shape_and_determinism() {
    let (s, inst) = common::fixture_8();
    for layers in [1, 2] {
        let mut cfg = common::small_config(Task::Re, 24);
        cfg.n_layers = layers;
        let model = common::model_for(cfg, std::slice::from_ref(&s), &inst, 1);
        let prep = model.prepare(&s, None).unwrap();
        let h = model.encode_eval(&prep).unwrap();
        assert_eq!(h.shape(), [8, 24]);
        assert!(h.is_finite());
        assert_eq!(h, model.encode_eval(&prep).unwrap());
    }
}

#[test]
fn symmetric_identical_tokens_get_identical_rows() {
    let s = star(4);
    let model = common::model_for(common::small_config(Task::Re, 16), std::slice::from_ref(&s), &[], 2);
    let h = model.encode_eval(&model.prepare(&s, None).unwrap()).unwrap();
    for i in 2..5 {
        assert!(h.row(1).iter().zip(h.row(i)).all(|(a, b)| (a - b).abs() < 1e-12));
    }
    assert!(h.row(0).iter().zip(h.row(1)).any(|(a, b)| (a - b).abs() > 1e-6));
}

#[test]
fn zero_projection_leaves_bias_rows() {
    let (s, inst) = common::fixture_8();
    let mut model = common::model_for(common::small_config(Task::Re, 16), std::slice::from_ref(&s), &inst, 3);
    zero_named(&mut model, "emb.proj.w");
    let bias_id = model.layout.embedding.proj_b;
    *model.params.get_mut(bias_id) = Array::row_vector((0..16).map(|k| k as f64 * 0.25).collect());
    let prep = model.prepare(&s, None).unwrap();
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let h0 = embed(&mut tape, &model, &bound, &prep, &mut Phase::Eval).unwrap();
    for i in 0..8 {
        assert_eq!(tape.value(h0).row(i), model.params.get(bias_id).row(0));
    }
}

#[test]
fn reweighting_dampens_distant_tokens() {
    // With zero query/key weights P is uniform over allowed tokens; an identity
    // value path exposes the attention weights directly.
    let s = DepSentence {
        id: "chain".into(),
        tokens: (0..5)
            .map(|i| token("w", if i == 0 { None } else { Some(i - 1) }))
            .collect(),
    };
    let d = pairwise_distances(&s);
    let mask = AttentionMask::all_allowed(5);
    let (h, zero, id) = (Array64::identity(5), Array64::zeros(5, 5), Array64::identity(5));
    let mut tape = Tape::new();
    let (hv, q, k, v) = (tape.leaf(&h), tape.leaf(&zero), tape.leaf(&zero), tape.leaf(&id));
    let gate = gate_attention_head(&mut tape, hv, q, k, v, &mask, &d, AttentionMode::Gate).unwrap();
    let plain = gate_attention_head(&mut tape, hv, q, k, v, &mask, &d, AttentionMode::Plain).unwrap();
    for i in 0..5 {
        let z: f64 = (0..5).map(|j| 1.0 / d.get(i, j) as f64).sum();
        for j in 0..5 {
            assert!((tape.value(plain).get(i, j) - 0.2).abs() < 1e-15);
            assert!((tape.value(gate).get(i, j) - 1.0 / (d.get(i, j) as f64 * z)).abs() < 1e-15);
        }
        assert!(tape.value(gate).get(0, 1) > tape.value(gate).get(0, 4));
    }
}

#[test]
fn zeroed_parameters_stay_finite() {
    let (s, inst) = common::fixture_8();
    let mut model = common::model_for(common::small_config(Task::Re, 16), std::slice::from_ref(&s), &inst, 4);
    zero_named(&mut model, "");
    let data = Dataset::new(&model, std::slice::from_ref(&s), &inst, None).unwrap();
    let h = model.encode_eval(&data.sentences[0]).unwrap();
    assert!(h.is_finite());
    let (loss, grads) = batch_gradients(&model, &data, &[0, 1, 2], None).unwrap();
    assert!(loss.is_finite() && grads.iter().all(|g| g.is_finite()));
}

#[test]
fn external_word_features_replace_word_table() {
    let (s, inst) = common::fixture_8();
    let mut cfg = common::small_config(Task::Re, 16);
    cfg.external_word_features = true;
    cfg.word_emb_dim = 3;
    let model = common::model_for(cfg, std::slice::from_ref(&s), &inst, 5);
    assert!(model.layout.embedding.word.is_none());
    let text: String = (0..8).map(|i| format!("fx8\t{i}\t0.5\t-1\n")).collect();
    let feats = parse_word_features::<f64>(&text, 3).unwrap();
    let prep = model.prepare(&s, feats.get("fx8").cloned()).unwrap();
    assert_eq!(model.encode_eval(&prep).unwrap().shape(), [8, 16]);
    let missing = model.prepare(&s, None).unwrap();
    assert!(model.encode_eval(&missing).is_err());
    let narrow = parse_word_features::<f64>(&text.replace("\t-1", ""), 2).unwrap();
    assert!(model
        .encode_eval(&model.prepare(&s, narrow.get("fx8").cloned()).unwrap())
        .is_err());
}

fn pair_model(d_model: usize, seed: u64) -> (DepSentence, Vec<TaskInstance>, Model64) {
    let (s, _) = common::fixture_8();
    let inst = vec![
        relation("fx8", Span::new(0, 2), Span::single(3), "R"),
        relation("fx8", Span::single(3), Span::new(0, 2), "None"),
    ];
    let model = common::model_for(
        common::small_config(Task::Re, d_model),
        std::slice::from_ref(&s),
        &inst,
        seed,
    );
    (s, inst, model)
}

#[test]
fn zero_classifier_is_uniform_with_ln2_loss() {
    let (s, inst, mut model) = pair_model(16, 6);
    zero_named(&mut model, "cls.");
    let prep = model.prepare(&s, None).unwrap();
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let h = encode(&mut tape, &model, &bound, &prep, &mut Phase::Eval).unwrap();
    let p = classify(&mut tape, &model, &bound, h, &inst[0]).unwrap();
    assert_eq!(tape.value(p).data(), &[0.5, 0.5]);
    let loss = instance_loss(&mut tape, &model, &bound, h, &inst[0]).unwrap();
    assert!((tape.scalar(loss).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn classifier_matches_hand_computation() {
    // d_model 8: the classifier input is [max a; max b; max all], 24 wide.
    let (_, inst, mut model) = pair_model(8, 7);
    let (w_id, b_id) = (model.layout.classifier.w, model.layout.classifier.b);
    assert_eq!(model.params.get(w_id).shape(), [24, 2]);
    let mut w = Array64::zeros(24, 2);
    w.set(0, 1, 1.0); // max over span a, feature 0
    w.set(8, 1, -2.0); // max over span b, feature 0
    w.set(17, 0, 0.5); // max over sentence, feature 1
    *model.params.get_mut(w_id) = w;
    *model.params.get_mut(b_id) = Array::row_vector(vec![0.0, 0.25]);
    let mut h = Array64::zeros(8, 8);
    for i in 0..8 {
        h.set(i, 0, i as f64 * 0.1);
        h.set(i, 1, if i == 5 { 3.0 } else { -1.0 });
    }
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let hv = tape.leaf(&h);
    let logits = classify_logits(&mut tape, &model, &bound, hv, &inst[0]).unwrap();
    // span a = rows 0..2 -> 0.1, span b = row 3 -> 0.3, sentence feature 1 max = 3.0
    let expect = [0.5 * 3.0, 0.1 - 2.0 * 0.3 + 0.25];
    for (got, want) in tape.value(logits).data().iter().zip(expect) {
        assert!((got - want).abs() < 1e-15);
    }
    let p = classify(&mut tape, &model, &bound, hv, &inst[0]).unwrap();
    let z = expect[0].exp() + expect[1].exp();
    assert!((tape.value(p).get(0, 0) - expect[0].exp() / z).abs() < 1e-15);
}

#[test]
fn pooling_ignores_row_order_inside_span() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h: Array64 = Array::from_vec(
        6,
        4,
        (0..24).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect(),
    )
    .unwrap();
    let mut swapped = h.clone();
    for c in 0..4 {
        swapped.set(2, c, h.get(4, c));
        swapped.set(4, c, h.get(2, c));
    }
    let pool = |a: &Array64| {
        let mut tape = Tape::new();
        let v = tape.leaf(a);
        let p = span_pool(&mut tape, v, Span::new(1, 5)).unwrap();
        tape.value(p).clone()
    };
    assert_eq!(pool(&h), pool(&swapped));
    let mut tape = Tape::new();
    let v = tape.leaf(&h);
    assert!(span_pool(&mut tape, v, Span::new(4, 7)).is_err());
    assert!(span_pool(&mut tape, v, Span::new(3, 3)).is_err());
}

#[test]
fn swapping_spans_changes_prediction_inputs() {
    let (s, inst, model) = pair_model(16, 9);
    let prep = model.prepare(&s, None).unwrap();
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let h = encode(&mut tape, &model, &bound, &prep, &mut Phase::Eval).unwrap();
    let ab = classify(&mut tape, &model, &bound, h, &inst[0]).unwrap();
    let ba = classify(&mut tape, &model, &bound, h, &inst[1]).unwrap();
    assert!(tape.value(ab).max_abs_diff(tape.value(ba)) > 1e-6);
    for p in [ab, ba] {
        assert!((tape.value(p).sum() - 1.0).abs() < 1e-12);
        assert!(tape.value(p).data().iter().all(|&x| x > 0.0));
    }
}

#[test]
fn task_mismatch_and_unknown_label_rejected() {
    let (s, mut inst, model) = pair_model(8, 10);
    let data = Dataset::new(&model, std::slice::from_ref(&s), &inst, None).unwrap();
    inst[0].task = Task::Earl;
    assert!(instance_gradients(&model, &data.sentences[0], &inst[0], &mut Phase::Eval).is_err());
    inst[0].task = Task::Re;
    inst[0].label = "Unseen".into();
    assert!(instance_gradients(&model, &data.sentences[0], &inst[0], &mut Phase::Eval).is_err());
}

#[test]
fn batch_loss_is_mean_of_instance_losses() {
    let (s, inst, model) = pair_model(8, 11);
    let data = Dataset::new(&model, std::slice::from_ref(&s), &inst, None).unwrap();
    let (l0, g0) = instance_gradients(&model, &data.sentences[0], &inst[0], &mut Phase::Eval).unwrap();
    let (l1, g1) = instance_gradients(&model, &data.sentences[0], &inst[1], &mut Phase::Eval).unwrap();
    let (mean, grads) = batch_gradients(&model, &data, &[0, 1], None).unwrap();
    assert!((mean - (l0 + l1) / 2.0).abs() < 1e-15);
    for ((g, a), b) in grads.iter().zip(g0).zip(g1) {
        let (a, b) = (a.unwrap(), b.unwrap());
        let want = a.add(&b).unwrap().scale(0.5);
        assert!(g.max_abs_diff(&want) < 1e-15);
    }
}
