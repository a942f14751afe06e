use std::fs;
use std::io::{BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{adam_step, Gradients};
use crate::corpus::{build_vocab, parse_corpus, LabelSet, Snippet};
use crate::emitter::Dropout;
use crate::error::{Error, Result};
use crate::graph::Lexicons;

use super::{evaluate, Model, RunConfig};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-snippet training loss.
    pub loss: f64,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_f1: f64,
    /// Whether this epoch produced the best model so far.
    pub best: bool,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub best: Model,
    pub best_epoch: usize,
    pub best_f1: f64,
    pub history: Vec<EpochLog>,
}

/// Builds the vocabulary from `train`, assigns its ids and initializes a
/// model from `cfg.seed`.
pub fn init_model(cfg: &RunConfig, labels: LabelSet, lexicons: Lexicons, train: &mut [Snippet]) -> Result<Model> {
    cfg.validate_values()?;
    let vocab = build_vocab(train, cfg.min_freq)?;
    vocab.assign(train);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Model::init(
        &cfg.model_config(),
        cfg.ablation()?,
        labels,
        vocab,
        lexicons,
        cfg.snippet_len,
        &mut rng,
    )
}

/// Trains on already-parsed snippets. Vocabulary ids are assigned here from
/// a vocabulary built on `train`. Selection uses `dev` when given and the
/// training set otherwise. `on_epoch` sees every epoch's log line together
/// with the current best model.
pub fn fit(
    cfg: &RunConfig,
    labels: LabelSet,
    lexicons: Lexicons,
    mut train: Vec<Snippet>,
    mut dev: Option<Vec<Snippet>>,
    on_epoch: impl FnMut(&EpochLog, &Model) -> Result<()>,
) -> Result<FitOutcome> {
    let model = init_model(cfg, labels, lexicons, &mut train)?;
    if let Some(dev) = dev.as_mut() {
        model.vocab.assign(dev);
    }
    fit_model(cfg, model, &train, dev.as_deref(), on_epoch)
}

/// Optimizes an existing model on snippets whose vocabulary ids are
/// already assigned.
pub fn fit_model(
    cfg: &RunConfig,
    mut model: Model,
    train: &[Snippet],
    dev: Option<&[Snippet]>,
    mut on_epoch: impl FnMut(&EpochLog, &Model) -> Result<()>,
) -> Result<FitOutcome> {
    cfg.validate_values()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let adam = cfg.adam();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(Model, usize, f64)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros(&model.store);
            for &i in batch {
                let snippet = &train[i];
                let dropout = (cfg.dropout > 0.0).then_some(Dropout {
                    rate: cfg.dropout,
                    rng: &mut rng,
                });
                let (loss, g) = model.loss_and_gradients(snippet, dropout)?;
                if !loss.is_finite() || !g.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss or gradient on snippet {} in epoch {epoch} (loss {loss})",
                        snippet.id
                    )));
                }
                total += loss;
                grads.accumulate(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut model.store, &grads, &adam)?;
        }
        let report = evaluate(&model, dev.unwrap_or(train))?;
        let improved = best.as_ref().is_none_or(|(_, _, f)| report.f1 > *f);
        if improved {
            best = Some((model.clone(), epoch, report.f1));
            stale = 0;
        } else {
            stale += 1;
        }
        let log = EpochLog {
            epoch,
            loss: total / train.len() as f64,
            dev_precision: report.precision,
            dev_recall: report.recall,
            dev_f1: report.f1,
            best: improved,
        };
        on_epoch(&log, &best.as_ref().expect("set on first epoch").0)?;
        history.push(log);
        if cfg.patience.is_some_and(|p| stale >= p) {
            break;
        }
    }
    let (best, best_epoch, best_f1) = best.expect("at least one epoch");
    Ok(FitOutcome {
        best,
        best_epoch,
        best_f1,
        history,
    })
}

fn read_snippets(path: &Path, labels: &LabelSet, cfg: &RunConfig) -> Result<Vec<Snippet>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), labels, &cfg.parse_options())
}

/// Reads the corpora named in `cfg`, trains, writes the best checkpoint to
/// `cfg.output` whenever it improves and appends one JSON line per epoch to
/// the training log.
pub fn train(cfg: &RunConfig) -> Result<FitOutcome> {
    let labels = cfg.label_set()?;
    let lexicons = cfg.lexicons(&labels)?;
    let train = read_snippets(&cfg.train, &labels, cfg)?;
    if train.is_empty() {
        return Err(Error::Data(format!("no snippets in {}", cfg.train.display())));
    }
    let dev = cfg.dev.as_ref().map(|p| read_snippets(p, &labels, cfg)).transpose()?;
    fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    let log_path = cfg.log_path();
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    fit(cfg, labels, lexicons, train, dev, |line, best| {
        if line.best {
            best.save(&cfg.output)?;
        }
        writeln!(log, "{}", serde_json::to_string(line)?).map_err(|e| Error::io(&log_path, e))
    })
}
