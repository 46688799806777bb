use std::fs;
use std::path::Path;

use gate_core::corpus::{
    generate_synthetic, load_instances, parse_conllu_with, parse_instances, read_conllu, DepSentence, ParseOptions,
    TaskInstance, Treebank, DEFAULT_MAX_LEN,
};
use gate_core::encoder::{read_word_features, EncoderConfig, WordFeatures};
use gate_core::evaluation::{read_predictions, score, write_predictions, ScoreReport};
use gate_core::syntax::pairwise_distances;
use gate_core::training::{
    check_model_gradients, initial_checkpoint, metrics_jsonl, predict as predict_labels, resume, Checkpoint, Dataset,
};
use gate_core::{Error, Model64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::settings::Settings;
use crate::CliError;

const FIXTURE_CONLLU: &str = include_str!("../fixtures/gradcheck.conllu");
const FIXTURE_INSTANCES: &str = include_str!("../fixtures/gradcheck.jsonl");

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn input_error(path: &Path, e: Error) -> CliError {
    CliError::usage(format!("{}: {e}", path.display()))
}

fn load_treebank(path: &Path, max_len: usize) -> Result<Treebank, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let sentences = parse_conllu_with(&text, ParseOptions { max_len }).map_err(|e| input_error(path, e))?;
    Treebank::new(sentences).map_err(|e| input_error(path, e))
}

/// Instances of `path`, all of which must belong to `cfg.task`.
fn load_task_instances(path: &Path, bank: &Treebank, cfg: &EncoderConfig) -> Result<Vec<TaskInstance>, CliError> {
    let instances = load_instances(path, bank).map_err(|e| match e {
        Error::Instance { .. } => CliError::usage(e),
        e => input_error(path, e),
    })?;
    if let Some(bad) = instances.iter().find(|i| i.task != cfg.task) {
        return Err(CliError::usage(format!(
            "{}: {} instance for a {} model",
            path.display(),
            bad.task,
            cfg.task
        )));
    }
    Ok(instances)
}

fn load_features(settings: &Settings, cfg: &EncoderConfig) -> Result<Option<WordFeatures<f64>>, CliError> {
    match (settings.path("features"), cfg.external_word_features) {
        (Some(path), true) => read_word_features(&path, cfg.word_emb_dim)
            .map(Some)
            .map_err(|e| input_error(&path, e)),
        (None, true) => Err(CliError::usage("model expects external word features; set `features`")),
        (_, false) => Ok(None),
    }
}

fn load_dev_features(settings: &Settings, cfg: &EncoderConfig) -> Result<Option<WordFeatures<f64>>, CliError> {
    match settings.path("dev_features") {
        Some(path) if cfg.external_word_features => read_word_features(&path, cfg.word_emb_dim)
            .map(Some)
            .map_err(|e| input_error(&path, e)),
        _ => load_features(settings, cfg),
    }
}

fn load_checkpoint(settings: &Settings, key: &str) -> Result<Checkpoint<f64>, CliError> {
    let path = settings.require_path(key)?;
    Checkpoint::load(&path).map_err(|e| input_error(&path, e))
}

/// Gold data resolved against a trained model.
struct Evaluation {
    sentences: Vec<DepSentence>,
    instances: Vec<TaskInstance>,
    features: Option<WordFeatures<f64>>,
}

impl Evaluation {
    fn load(settings: &Settings, cfg: &EncoderConfig) -> Result<Self, CliError> {
        let bank = load_treebank(&settings.require_path("treebank")?, cfg.max_len)?;
        let instances = load_task_instances(&settings.require_path("instances")?, &bank, cfg)?;
        let features = load_features(settings, cfg)?;
        Ok(Evaluation {
            sentences: bank.sentences().to_vec(),
            instances,
            features,
        })
    }

    fn predictions(&self, model: &Model64) -> Result<Vec<gate_core::evaluation::Prediction>, CliError> {
        let data =
            Dataset::new(model, &self.sentences, &self.instances, self.features.as_ref()).map_err(CliError::usage)?;
        predict_labels(model, &data).map_err(CliError::runtime)
    }
}

pub fn distances(treebank: &Path, sentence_id: &str, header: bool) -> Result<(), CliError> {
    let sentences = read_conllu(treebank).map_err(|e| input_error(treebank, e))?;
    let s = sentences
        .iter()
        .find(|s| s.id == sentence_id)
        .ok_or_else(|| CliError::usage(format!("{}: unknown sentence_id `{sentence_id}`", treebank.display())))?;
    let forms = if header { s.forms() } else { Vec::new() };
    print!("{}", pairwise_distances(s).to_tsv(&forms));
    Ok(())
}

pub fn synth(settings: &Settings, out: &Path) -> Result<(), CliError> {
    let cfg = settings.synth()?;
    let seed = settings.get_or("seed", 1)?;
    let corpus = generate_synthetic(&cfg, seed).map_err(CliError::usage)?;
    ensure_dir(out)?;
    corpus.write_to(out).map_err(CliError::runtime)?;
    eprintln!("wrote {} sentences per realization to {}", cfg.count, out.display());
    Ok(())
}

pub fn train(settings: &Settings, out: &Path) -> Result<(), CliError> {
    let tc = settings.train()?;
    let start = match settings.path("resume") {
        Some(_) => Some(load_checkpoint(settings, "resume")?),
        None => None,
    };
    let cfg = match &start {
        Some(c) => c.model.config.clone(),
        None => settings.encoder(EncoderConfig::for_task(settings.task()?))?,
    };
    let bank = load_treebank(&settings.require_path("train_treebank")?, cfg.max_len)?;
    let instances = load_task_instances(&settings.require_path("train_instances")?, &bank, &cfg)?;
    let dev = match (settings.path("dev_treebank"), settings.path("dev_instances")) {
        (Some(t), Some(i)) => {
            let dev_bank = load_treebank(&t, cfg.max_len)?;
            let dev_instances = load_task_instances(&i, &dev_bank, &cfg)?;
            Some((dev_bank.sentences().to_vec(), dev_instances))
        }
        (None, None) => None,
        _ => {
            return Err(CliError::usage(
                "set both `dev_treebank` and `dev_instances`, or neither",
            ))
        }
    };
    let features = load_features(settings, &cfg)?;
    let dev_features = match dev {
        Some(_) => load_dev_features(settings, &cfg)?,
        None => None,
    };
    ensure_dir(out)?;

    let start = match start {
        Some(ckpt) => ckpt,
        None => initial_checkpoint(bank.sentences(), &instances, cfg, &tc).map_err(CliError::usage)?,
    };
    let data = Dataset::new(&start.model, bank.sentences(), &instances, features.as_ref()).map_err(CliError::usage)?;
    let dev_data = match &dev {
        Some((s, i)) => Some(Dataset::new(&start.model, s, i, dev_features.as_ref()).map_err(CliError::usage)?),
        None => None,
    };
    let outcome = resume(start, &data, dev_data.as_ref(), &tc).map_err(CliError::runtime)?;

    for m in &outcome.log {
        eprintln!(
            "epoch {:>3}  lr {:.5}  loss {:.4}  dev p {:.4} r {:.4} f1 {:.4}",
            m.epoch, m.lr, m.train_loss, m.dev_p, m.dev_r, m.dev_f1
        );
    }
    write(
        &out.join("metrics.jsonl"),
        metrics_jsonl(&outcome.log).map_err(CliError::runtime)?,
    )?;
    outcome.best.save(out.join("best.ckpt")).map_err(CliError::runtime)?;
    outcome.last.save(out.join("last.ckpt")).map_err(CliError::runtime)?;
    eprintln!("best epoch {}; checkpoints in {}", outcome.best.epoch, out.display());
    Ok(())
}

fn write_report(report: &ScoreReport, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let text = report.to_text();
    write(&out.join("report.txt"), &text)?;
    let json = serde_json::to_string_pretty(report).map_err(CliError::runtime)?;
    write(&out.join("report.json"), json + "\n")?;
    print!("{text}");
    Ok(())
}

pub fn eval(settings: &Settings, out: &Path) -> Result<(), CliError> {
    match (settings.path("checkpoint"), settings.path("predictions")) {
        (Some(_), Some(_)) => Err(CliError::usage("give either `checkpoint` or `predictions`, not both")),
        (None, None) => Err(CliError::usage(
            "missing required setting `checkpoint` (or `predictions`)",
        )),
        (Some(_), None) => {
            let ckpt = load_checkpoint(settings, "checkpoint")?;
            let cfg = &ckpt.model.config;
            let gold = Evaluation::load(settings, cfg)?;
            let pred = gold.predictions(&ckpt.model)?;
            let report = score(&pred, &gold.instances, cfg.task).map_err(CliError::runtime)?;
            write_report(&report, out)
        }
        (None, Some(path)) => {
            let task = settings.task()?;
            let bank = load_treebank(&settings.require_path("treebank")?, DEFAULT_MAX_LEN)?;
            let gold_path = settings.require_path("instances")?;
            let gold = load_instances(&gold_path, &bank).map_err(|e| input_error(&gold_path, e))?;
            let pred = read_predictions(&path).map_err(|e| input_error(&path, e))?;
            let report = score(&pred, &gold, task).map_err(CliError::usage)?;
            write_report(&report, out)
        }
    }
}

pub fn predict(settings: &Settings, out: &Path) -> Result<(), CliError> {
    let ckpt = load_checkpoint(settings, "checkpoint")?;
    let data = Evaluation::load(settings, &ckpt.model.config)?;
    let pred = data.predictions(&ckpt.model)?;
    ensure_dir(out)?;
    write(
        &out.join("predictions.jsonl"),
        write_predictions(&pred).map_err(CliError::runtime)?,
    )?;
    eprintln!(
        "wrote {} predictions to {}",
        pred.len(),
        out.join("predictions.jsonl").display()
    );
    Ok(())
}

/// Small model defaults; every key of the config still applies.
fn gradcheck_base(settings: &Settings) -> Result<EncoderConfig, CliError> {
    let mut base = EncoderConfig::for_task(settings.task()?);
    base.d_model = 16;
    base.ffn_dim = 32;
    base.word_emb_dim = 8;
    base.feature_emb_dim = 4;
    base.dropout = 0.0;
    settings.encoder(base)
}

pub fn gradcheck(settings: &Settings) -> Result<(), CliError> {
    let cfg = gradcheck_base(settings)?;
    if cfg.external_word_features {
        return Err(CliError::usage(
            "gradcheck uses learned word embeddings; unset `features`",
        ));
    }
    let sentences = gate_core::corpus::parse_conllu(FIXTURE_CONLLU).map_err(CliError::runtime)?;
    let bank = Treebank::new(sentences).map_err(CliError::runtime)?;
    let instances: Vec<TaskInstance> = parse_instances(FIXTURE_INSTANCES, &bank, "fixture")
        .map_err(CliError::runtime)?
        .into_iter()
        .filter(|i| i.task == cfg.task)
        .collect();
    let vocab = gate_core::corpus::build_vocab(bank.sentences(), &instances);
    let seed: u64 = settings.get_or("seed", 1)?;
    let eps: f64 = settings.get_or("gradcheck_eps", 1e-5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model64::init(cfg, vocab, &mut rng).map_err(CliError::usage)?;
    let sentence = model.prepare(&bank.sentences()[0], None).map_err(CliError::runtime)?;
    let report = check_model_gradients(&model, &sentence, &instances, eps).map_err(CliError::runtime)?;
    let worst = report
        .worst
        .map(|(p, e)| {
            let a = &model.params.arrays()[p];
            format!(" at {}[{}, {}]", model.params.names()[p], e / a.cols(), e % a.cols())
        })
        .unwrap_or_default();
    println!(
        "max relative error {:.3e}{worst} over {} parameters ({} instances)",
        report.max_rel_error,
        report.entries_checked,
        instances.len()
    );
    if report.max_rel_error < 1e-4 {
        Ok(())
    } else {
        Err(CliError::runtime(format!(
            "gradient check failed: {:.3e} >= 1e-4",
            report.max_rel_error
        )))
    }
}
