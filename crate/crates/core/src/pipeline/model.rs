use std::fs;
use std::io::BufReader;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{load_params, save_params, Gradients, ParamId, ParamStore, Tape, Tensor, Var};
use crate::corpus::{parse_corpus, LabelSet, ParseOptions, Snippet, Vocab};
use crate::autodiff::{finite_diff_check, GradCheckReport};
use crate::emitter::{Dropout, Emitter, ModelConfig};
use crate::error::{Error, Result};
use crate::graph::{build_graph, CombGraph, InterjectionLexicon, Lexicons, PronounLexicon};
use crate::inference::{decode, independent_decode, nll_on_tape, EmissionTable, GcrfParams, LabelAssignment};

use super::Ablation;

const MODEL_FILE: &str = "model.json";
const LABELS_FILE: &str = "labels.txt";
const VOCAB_FILE: &str = "vocab.txt";
const PRONOUNS_FILE: &str = "pronouns.tsv";
const INTERJECTIONS_FILE: &str = "interjections.txt";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    model: ModelConfig,
    ablation: Ablation,
    snippet_len: usize,
    min_freq: usize,
}

/// Everything needed to run the tagger: label inventory, vocabulary,
/// lexicons, emitter and transition parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub labels: LabelSet,
    pub vocab: Vocab,
    pub lexicons: Lexicons,
    pub ablation: Ablation,
    pub snippet_len: usize,
    pub emitter: Emitter,
    pub store: ParamStore,
    pub a1: ParamId,
    pub a2: ParamId,
}

impl Model {
    pub fn init(
        config: &ModelConfig,
        ablation: Ablation,
        labels: LabelSet,
        vocab: Vocab,
        lexicons: Lexicons,
        snippet_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let k = labels.len();
        let mut store = ParamStore::new();
        let emitter = Emitter::init(config, vocab.len(), k, &mut store, rng)?;
        let a1 = store.insert("crf.a1", Tensor::zeros(&[k, k]))?;
        let a2 = store.insert("crf.a2", Tensor::zeros(&[k, k]))?;
        Ok(Self {
            labels,
            vocab,
            lexicons,
            ablation,
            snippet_len,
            emitter,
            store,
            a1,
            a2,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_params(&self.store, dir)?;
        let meta = ModelFile {
            version: MODEL_VERSION,
            model: self.emitter.config().clone(),
            ablation: self.ablation,
            snippet_len: self.snippet_len,
            min_freq: self.vocab.min_freq(),
        };
        let files = [
            (MODEL_FILE, serde_json::to_string_pretty(&meta)?),
            (LABELS_FILE, self.labels.to_text()),
            (VOCAB_FILE, self.vocab.to_text()),
            (PRONOUNS_FILE, self.lexicons.pronouns.to_text(&self.labels)),
            (INTERJECTIONS_FILE, self.lexicons.interjections.to_text()),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_FILE);
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let meta: ModelFile = serde_json::from_reader(BufReader::new(file))?;
        if meta.version != MODEL_VERSION {
            return Err(Error::Data(format!("unsupported model version {}", meta.version)));
        }
        let labels = LabelSet::load(&dir.join(LABELS_FILE))?;
        let vocab = Vocab::load(&dir.join(VOCAB_FILE), meta.min_freq)?;
        let lexicons = Lexicons {
            pronouns: PronounLexicon::load(&dir.join(PRONOUNS_FILE), &labels)?,
            interjections: InterjectionLexicon::load(&dir.join(INTERJECTIONS_FILE))?,
        };
        let store = load_params(dir)?;
        let k = labels.len();
        let emitter = Emitter::from_store(&meta.model, vocab.len(), k, &store)?;
        let a1 = store.id("crf.a1")?;
        let a2 = store.id("crf.a2")?;
        for id in [a1, a2] {
            if store.value(id).shape() != [k, k] {
                return Err(Error::shape("load_model", &[store.value(id).shape(), &[k, k]]));
            }
        }
        Ok(Self {
            labels,
            vocab,
            lexicons,
            ablation: meta.ablation,
            snippet_len: meta.snippet_len,
            emitter,
            store,
            a1,
            a2,
        })
    }

    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            snippet_len: self.snippet_len,
            max_speakers: self.emitter.config().max_speakers,
            ..ParseOptions::default()
        }
    }

    /// Parses a JSONL corpus with this model's labels and vocabulary.
    pub fn read_corpus(&self, path: &Path) -> Result<Vec<Snippet>> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut snippets = parse_corpus(BufReader::new(file), &self.labels, &self.parse_options())?;
        self.vocab.assign(&mut snippets);
        Ok(snippets)
    }

    pub fn graph(&self, snippet: &Snippet) -> CombGraph {
        build_graph(snippet, &self.lexicons, self.ablation.graph_options())
    }

    pub fn gcrf_params(&self) -> GcrfParams {
        GcrfParams {
            a1: self.store.value(self.a1).clone(),
            a2: self.store.value(self.a2).clone(),
        }
    }


    pub fn emissions(&self, snippet: &Snippet) -> Result<EmissionTable> {
        let mut tape = Tape::new();
        let out = self.emitter.emit_snippet(&mut tape, &self.store, snippet, &self.vocab, None)?;
        let table = EmissionTable::new(
            self.labels.len(),
            out.iter().map(|u| tape.value(u.logits).clone()).collect(),
        )?;
        if table.utterances().iter().any(|t| !t.is_finite()) {
            return Err(Error::Numeric(format!("non-finite emission scores in snippet {}", snippet.id)));
        }
        Ok(table)
    }

    pub fn predict(&self, snippet: &Snippet) -> Result<LabelAssignment> {
        let p = self.emissions(snippet)?;
        if self.ablation == Ablation::NoGcrf {
            return Ok(independent_decode(&p));
        }
        Ok(decode(&self.graph(snippet), &p, &self.gcrf_params())?.labels)
    }

    /// Training loss of one snippet recorded on `tape`: the structured
    /// negative log-likelihood, or summed per-token cross-entropy without
    /// the CRF layer.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        snippet: &Snippet,
        gold: &LabelAssignment,
        dropout: Option<Dropout<'_>>,
    ) -> Result<Var> {
        let out = self.emitter.emit_snippet(tape, store, snippet, &self.vocab, dropout)?;
        let logits: Vec<Var> = out.iter().map(|u| u.logits).collect();
        if self.ablation == Ablation::NoGcrf {
            let k = self.labels.len();
            let mut total = tape.leaf(Tensor::scalar(0.0));
            for (&p, labels) in logits.iter().zip(gold) {
                let z = tape.logsumexp(p, 1)?;
                let z = tape.sum(z);
                let idx: Vec<usize> = labels.iter().enumerate().map(|(j, &l)| j * k + l).collect();
                let picked = tape.gather(p, &idx)?;
                let picked = tape.sum(picked);
                let ce = tape.sub(z, picked)?;
                total = tape.add(total, ce)?;
            }
            return Ok(total);
        }
        let a1 = tape.param(store, self.a1);
        let a2 = tape.param(store, self.a2);
        nll_on_tape(tape, &self.graph(snippet), &logits, a1, a2, gold)
    }

    /// Loss and gradients for every parameter of one labeled snippet.
    pub fn loss_and_gradients(&self, snippet: &Snippet, dropout: Option<Dropout<'_>>) -> Result<(f64, Gradients)> {
        let gold = gold_of(snippet)?;
        let mut tape = Tape::new();
        let loss = self.loss_on_tape(&mut tape, &self.store, snippet, &gold, dropout)?;
        let value = tape.value(loss).item();
        let mut grads = tape.backward(loss)?.into_gradients(&self.store);
        if self.ablation == Ablation::NoVertical {
            grads.zero(self.a2);
        }
        Ok((value, grads))
    }

    /// Compares analytic gradients of the training loss on `snippet` with
    /// central differences for every parameter.
    pub fn gradient_check(&self, snippet: &Snippet, step: f64, tol: f64) -> Result<GradCheckReport> {
        let gold = gold_of(snippet)?;
        let mut tape = Tape::new();
        let loss = self.loss_on_tape(&mut tape, &self.store, snippet, &gold, None)?;
        let grads = tape.backward(loss)?.into_gradients(&self.store);
        let mut store = self.store.clone();
        finite_diff_check(
            |s: &ParamStore| {
                let mut tape = Tape::new();
                let loss = self.loss_on_tape(&mut tape, s, snippet, &gold, None)?;
                Ok(tape.value(loss).item())
            },
            &mut store,
            &grads,
            step,
            tol,
        )
    }
}

pub(crate) fn gold_of(snippet: &Snippet) -> Result<LabelAssignment> {
    snippet
        .gold()
        .ok_or_else(|| Error::Data(format!("snippet {} has unlabeled tokens", snippet.id)))
}
