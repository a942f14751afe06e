use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dpgcrf::corpus::{corpus_stats, parse_corpus, parse_records, LabelSet, ParseOptions};
use dpgcrf::pipeline::{
    evaluate, export_attention, init_model, synthesize, train, transitions_csv, write_jsonl, predict_records, Model, Pattern,
    RunConfig, SynthOptions,
};
use dpgcrf::Error;

#[derive(Parser)]
#[command(name = "dpgcrf", version, about = "Dropped pronoun recovery with a transformer emitter and a comb CRF")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML run configuration and write the best checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a labeled corpus with a checkpoint.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Label file that must match the checkpoint's inventory.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Add a `predicted` label list to every turn of a corpus.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corpus statistics and utterance-initial pronoun pair counts.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = dpgcrf::corpus::DEFAULT_SNIPPET_LEN)]
        snippet_len: usize,
        /// Also print the pair counts as CSV.
        #[arg(long)]
        pairs: bool,
    },
    /// Write a transition matrix as CSV.
    ExportTransitions {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = Which::Vertical)]
        which: Which,
        /// Keep the `None` row and column.
        #[arg(long)]
        include_none: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write interaction-attention weights for one utterance, one CSV per
    /// decoder layer and head.
    ExportAttention {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Snippet id, `<record id>#<window>`.
        #[arg(long)]
        snippet: String,
        /// Utterance index inside the snippet.
        #[arg(long)]
        utterance: usize,
        /// Directory for the CSV files; stdout when omitted.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients for a freshly
    /// initialized model built from a run configuration.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        /// Number of training snippets to check.
        #[arg(long, default_value_t = 1)]
        snippets: usize,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Generate a labeled synthetic corpus as JSONL.
    Synth {
        #[arg(long, value_parser = parse_pattern)]
        pattern: Pattern,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        utterances: Option<usize>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Vertical,
    Horizontal,
}

fn parse_pattern(s: &str) -> Result<Pattern, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Raised when a gradient check finds mismatches.
#[derive(Debug)]
struct GradientMismatch;

impl std::fmt::Display for GradientMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("gradient check failed")
    }
}

impl std::error::Error for GradientMismatch {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<GradientMismatch>().is_some() {
        return EXIT_NUMERIC;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Numeric(_)) => EXIT_NUMERIC,
        Some(Error::Config(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_model(dir: &Path) -> Result<Model> {
    Model::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let out = train(&cfg)?;
            for line in &out.history {
                eprintln!(
                    "epoch {:>3}  loss {:.4}  P {:.4}  R {:.4}  F {:.4}{}",
                    line.epoch,
                    line.loss,
                    line.dev_precision,
                    line.dev_recall,
                    line.dev_f1,
                    if line.best { "  *" } else { "" }
                );
            }
            println!(
                "best F {:.4} at epoch {}; checkpoint {}",
                out.best_f1,
                out.best_epoch,
                cfg.output.display()
            );
        }
        Command::Eval { model, data, labels, json } => {
            let model = load_model(&model)?;
            if let Some(path) = labels {
                let expected = LabelSet::load(&path)?;
                if expected != model.labels {
                    return Err(Error::Data(format!(
                        "label set {} does not match the checkpoint's labels",
                        path.display()
                    ))
                    .into());
                }
            }
            let mut snippets = model.read_corpus(&data)?;
            model.vocab.assign(&mut snippets);
            let report = evaluate(&model, &snippets)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                println!("precision {:.4}", report.precision);
                println!("recall    {:.4}", report.recall);
                println!("f1        {:.4}", report.f1);
                println!("predicted {}  gold {}  correct {}", report.predicted, report.gold, report.correct);
                for c in report.per_label.iter().filter(|c| c.gold + c.predicted > 0) {
                    println!("  {:<8} predicted {:>5}  gold {:>5}  correct {:>5}", c.label, c.predicted, c.gold, c.correct);
                }
            }
        }
        Command::Predict { model, data, out } => {
            let model = load_model(&model)?;
            let file = fs::File::open(&data).map_err(|e| Error::Io { path: data.clone(), source: e })?;
            let records = parse_records(BufReader::new(file))?;
            let predicted = predict_records(&model, &records)?;
            let mut w = output(out.as_deref())?;
            write_jsonl(&predicted, &mut w)?;
            w.flush()?;
        }
        Command::Stats { data, labels, snippet_len, pairs } => {
            let labels = match labels {
                Some(p) => LabelSet::load(&p)?,
                None => LabelSet::default_inventory(),
            };
            let file = fs::File::open(&data).map_err(|e| Error::Io { path: data.clone(), source: e })?;
            let opts = ParseOptions { snippet_len, ..ParseOptions::default() };
            let snippets = parse_corpus(BufReader::new(file), &labels, &opts)?;
            let r = corpus_stats(&snippets, &labels);
            println!("snippets {}", r.snippets);
            println!("utterances {}", r.utterances);
            println!("tokens {}", r.tokens);
            println!("dropped pronouns {}", r.dropped_pronouns);
            println!("utterance-initial {} ({:.4})", r.utterance_initial, r.initial_fraction);
            println!("initial pronoun pairs {}", r.pair_total());
            if pairs {
                print!("{}", r.pairs_csv());
            }
        }
        Command::ExportTransitions { model, which, include_none, out } => {
            let model = load_model(&model)?;
            let id = match which {
                Which::Vertical => model.a2,
                Which::Horizontal => model.a1,
            };
            let csv = transitions_csv(&model.labels, model.store.value(id), include_none)?;
            let mut w = output(out.as_deref())?;
            w.write_all(csv.as_bytes())?;
            w.flush()?;
        }
        Command::ExportAttention { model, data, snippet, utterance, out_dir } => {
            let model = load_model(&model)?;
            let mut snippets = model.read_corpus(&data)?;
            let Some(pos) = snippets.iter().position(|s| s.id == snippet) else {
                return Err(Error::Data(format!("no snippet with id {snippet:?} in {}", data.display())).into());
            };
            model.vocab.assign(std::slice::from_mut(&mut snippets[pos]));
            let exports = export_attention(&model, &snippets[pos], utterance)?;
            match out_dir {
                Some(dir) => {
                    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                    for e in &exports {
                        let path = dir.join(format!("attention_l{}_h{}.csv", e.layer, e.head));
                        fs::write(&path, &e.csv).with_context(|| format!("writing {}", path.display()))?;
                        println!("{}", path.display());
                    }
                }
                None => {
                    for e in &exports {
                        println!("# layer {} head {}", e.layer, e.head);
                        print!("{}", e.csv);
                    }
                }
            }
        }
        Command::Gradcheck { config, snippets, step, tol } => gradcheck(&config, snippets, step, tol)?,
        Command::Synth { pattern, n, seed, utterances, labels, out } => {
            let labels = match labels {
                Some(p) => LabelSet::load(&p)?,
                None => LabelSet::default_inventory(),
            };
            let mut opts = SynthOptions::new(pattern, n, seed);
            if let Some(u) = utterances {
                opts.utterances = u;
            }
            let convs = synthesize(&labels, &opts)?;
            let mut w = output(out.as_deref())?;
            write_jsonl(&convs, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn gradcheck(config: &Path, count: usize, step: f64, tol: f64) -> Result<()> {
    if count == 0 {
        bail!(Error::Config("--snippets must be at least 1".into()));
    }
    let cfg = RunConfig::load(config)?;
    let labels = cfg.label_set()?;
    let lexicons = cfg.lexicons(&labels)?;
    let file = fs::File::open(&cfg.train).map_err(|e| Error::Io { path: cfg.train.clone(), source: e })?;
    let mut snippets = parse_corpus(BufReader::new(file), &labels, &cfg.parse_options())?;
    if snippets.is_empty() {
        bail!(Error::Data(format!("no snippets in {}", cfg.train.display())));
    }
    let model = init_model(&cfg, labels, lexicons, &mut snippets)?;
    let mut failed = false;
    for s in snippets.iter().take(count) {
        let report = model.gradient_check(s, step, tol)?;
        println!("snippet {}: max relative error {:.3e}", s.id, report.max_rel_error());
        for p in &report.params {
            let mark = if p.flagged > 0 { "  FLAGGED" } else { "" };
            println!("  {:<24} entries {:>6}  max rel {:.3e}{mark}", p.name, p.entries, p.max_rel_error);
        }
        failed |= !report.passed();
    }
    if failed {
        bail!(GradientMismatch);
    }
    Ok(())
}
