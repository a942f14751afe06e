use super::*;
use crate::corpus::{parse_corpus, parse_records, Conversation, LabelSet, ParseOptions, Snippet};
use crate::error::Error;
use crate::graph::{Lexicons, SpineEntry};
use crate::inference::{decode, horizontal_message, independent_decode, Mode};

fn tiny_config() -> RunConfig {
    RunConfig {
        d_model: 8,
        heads: 2,
        layers: 1,
        ff_dim: 8,
        head_hidden: 8,
        max_len: 64,
        epochs: 2,
        learning_rate: 1e-2,
        seed: 3,
        ..RunConfig::default()
    }
}

fn corpus(pattern: Pattern, n: usize, seed: u64) -> (LabelSet, Vec<Conversation>, Vec<Snippet>) {
    let labels = LabelSet::default_inventory();
    let convs = synthesize(&labels, &SynthOptions::new(pattern, n, seed)).unwrap();
    let text: String = convs.iter().map(|c| c.to_json_line().unwrap() + "\n").collect();
    let snippets = parse_corpus(text.as_bytes(), &labels, &ParseOptions::default()).unwrap();
    (labels, convs, snippets)
}

fn fit_tiny(cfg: &RunConfig, pattern: Pattern) -> FitOutcome {
    let (labels, _, snippets) = corpus(pattern, 6, 1);
    let lex = Lexicons::default_for(&labels);
    fit(cfg, labels, lex, snippets, None, |_, _| Ok(())).unwrap()
}

fn bits(model: &Model) -> Vec<Vec<u64>> {
    model
        .store
        .iter()
        .map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()).collect())
        .collect()
}

#[test]
fn zero_learning_rate_keeps_initialization() {
    let mut cfg = tiny_config();
    cfg.epochs = 1;
    cfg.learning_rate = 0.0;
    let out = fit_tiny(&cfg, Pattern::Mixed);
    let (labels, _, mut snippets) = corpus(Pattern::Mixed, 6, 1);
    let vocab = crate::corpus::build_vocab(&snippets, 1).unwrap();
    vocab.assign(&mut snippets);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed);
    let lex = Lexicons::default_for(&labels);
    let init = Model::init(&cfg.model_config(), Ablation::Full, labels, vocab, lex, 8, &mut rng).unwrap();
    assert_eq!(bits(&out.best), bits(&init));
}

#[test]
fn identical_config_gives_identical_checkpoints() {
    let cfg = tiny_config();
    let a = fit_tiny(&cfg, Pattern::Reply);
    let b = fit_tiny(&cfg, Pattern::Reply);
    assert_eq!(bits(&a.best), bits(&b.best));
    assert_eq!(a.history, b.history);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(bits(&fit_tiny(&other, Pattern::Reply).best), bits(&a.best));
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let out = fit_tiny(&tiny_config(), Pattern::Mixed);
    let dir = tempfile::tempdir().unwrap();
    out.best.save(dir.path()).unwrap();
    let loaded = Model::load(dir.path()).unwrap();
    assert_eq!(bits(&loaded), bits(&out.best));
    let (_, _, mut snippets) = corpus(Pattern::Mixed, 4, 9);
    out.best.vocab.assign(&mut snippets);
    for s in &snippets {
        let a = out.best.emissions(s).unwrap();
        let b = loaded.emissions(s).unwrap();
        assert_eq!(a, b);
        assert_eq!(out.best.predict(s).unwrap(), loaded.predict(s).unwrap());
    }
    assert_eq!(evaluate(&out.best, &snippets).unwrap(), evaluate(&loaded, &snippets).unwrap());
}

#[test]
fn prediction_file_reproduces_the_report() {
    let out = fit_tiny(&tiny_config(), Pattern::Mixed);
    let model = &out.best;
    let (labels, convs, _) = corpus(Pattern::Mixed, 5, 4);
    let text: String = convs.iter().map(|c| c.to_json_line().unwrap() + "\n").collect();
    let records = parse_records(text.as_bytes()).unwrap();
    let predicted = predict_records(model, &records).unwrap();
    let mut buf = Vec::new();
    write_jsonl(&predicted, &mut buf).unwrap();
    let again = predict_records(model, &records).unwrap();
    assert_eq!(predicted, again);

    // Swap predictions into the label slot and score that file.
    let reread = parse_records(buf.as_slice()).unwrap();
    let mut as_gold = Vec::new();
    let mut gold_convs = Vec::new();
    for (_, conv) in &reread {
        let mut g = conv.clone();
        let mut p = conv.clone();
        for (gt, pt) in g.turns.iter_mut().zip(p.turns.iter_mut()) {
            assert_eq!(pt.predicted.as_ref().unwrap().len(), pt.tokens.len());
            pt.labels = pt.predicted.take().unwrap();
            gt.predicted = None;
        }
        as_gold.push(p);
        gold_convs.push(g);
    }
    let parse = |cs: &[Conversation]| {
        let t: String = cs.iter().map(|c| c.to_json_line().unwrap() + "\n").collect();
        let s = parse_corpus(t.as_bytes(), &labels, &ParseOptions::default()).unwrap();
        s.iter().map(|s| s.gold().unwrap()).collect::<Vec<_>>()
    };
    let from_file = score_predictions(&labels, &parse(&gold_convs), &parse(&as_gold)).unwrap();
    let mut snippets = parse_corpus(text.as_bytes(), &labels, &ParseOptions::default()).unwrap();
    model.vocab.assign(&mut snippets);
    assert_eq!(from_file, evaluate(model, &snippets).unwrap());
}

#[test]
fn no_gcrf_predicts_per_token_argmax() {
    let mut cfg = tiny_config();
    cfg.no_gcrf = true;
    let out = fit_tiny(&cfg, Pattern::Reply);
    let (_, _, mut snippets) = corpus(Pattern::Reply, 3, 5);
    out.best.vocab.assign(&mut snippets);
    for s in &snippets {
        let p = out.best.emissions(s).unwrap();
        assert_eq!(out.best.predict(s).unwrap(), independent_decode(&p));
    }
    // The transition matrices never receive gradient.
    assert!(out.best.store.value(out.best.a1).data().iter().all(|&v| v == 0.0));
}

#[test]
fn no_vertical_decodes_each_chain_alone() {
    let mut cfg = tiny_config();
    cfg.no_vertical = true;
    let out = fit_tiny(&cfg, Pattern::Cycle);
    let model = &out.best;
    assert!(model.store.value(model.a2).data().iter().all(|&v| v == 0.0));
    let (_, _, mut snippets) = corpus(Pattern::Cycle, 3, 6);
    model.vocab.assign(&mut snippets);
    let params = model.gcrf_params();
    for s in &snippets {
        let g = model.graph(s);
        assert!(g.spine.is_empty());
        let p = model.emissions(s).unwrap();
        let chains: Vec<Vec<usize>> = p
            .utterances()
            .iter()
            .map(|e| {
                let m = horizontal_message(e, &params.a1, Mode::Max);
                m.trace(crate::autodiff::argmax(&m.scores))
            })
            .collect();
        assert_eq!(model.predict(s).unwrap(), chains);
    }
}

#[test]
fn full_model_uses_refined_graph() {
    let out = fit_tiny(&tiny_config(), Pattern::Cycle);
    let (_, _, mut snippets) = corpus(Pattern::Cycle, 2, 7);
    out.best.vocab.assign(&mut snippets);
    let g = out.best.graph(&snippets[0]);
    assert!(matches!(g.spine[0], SpineEntry::Observed { .. }));
    let p = out.best.emissions(&snippets[0]).unwrap();
    let d = decode(&g, &p, &out.best.gcrf_params()).unwrap();
    assert_eq!(out.best.predict(&snippets[0]).unwrap(), d.labels);
}

#[test]
fn non_finite_loss_names_the_snippet() {
    let cfg = tiny_config();
    let (labels, _, mut snippets) = corpus(Pattern::Reply, 2, 8);
    let vocab = crate::corpus::build_vocab(&snippets, 1).unwrap();
    vocab.assign(&mut snippets);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    let lex = Lexicons::default_for(&labels);
    let mut model = Model::init(&cfg.model_config(), Ablation::Full, labels, vocab, lex, 8, &mut rng).unwrap();
    model.store.value_mut(model.a1).data_mut()[0] = f64::NAN;
    let err = fit_model(&cfg, model, &snippets, None, |_, _| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)));
    assert!(err.to_string().contains("reply-"), "{err}");
}

#[test]
fn train_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let (_, convs, _) = corpus(Pattern::Reply, 4, 10);
    let text: String = convs.iter().map(|c| c.to_json_line().unwrap() + "\n").collect();
    std::fs::write(dir.path().join("train.jsonl"), &text).unwrap();
    let toml = "train = \"train.jsonl\"\ndev = \"train.jsonl\"\nd_model = 8\nlayers = 1\nff_dim = 8\nhead_hidden = 8\nepochs = 3\nseed = 2\noutput = \"ckpt\"\n";
    let cfg = RunConfig::from_toml(toml, dir.path()).unwrap();
    let out = train(&cfg).unwrap();
    let log = std::fs::read_to_string(dir.path().join("ckpt/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let loaded = Model::load(&dir.path().join("ckpt")).unwrap();
    assert_eq!(bits(&loaded), bits(&out.best));
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 1);
    assert_eq!(first["best"], true);
}

#[test]
fn gradient_check_passes_on_a_small_model() {
    let mut cfg = tiny_config();
    cfg.epochs = 1;
    let (labels, _, snippets) = corpus(Pattern::Mixed, 2, 11);
    let lex = Lexicons::default_for(&labels);
    let out = fit(&cfg, labels, lex, snippets.clone(), None, |_, _| Ok(())).unwrap();
    let mut s = snippets[0].clone();
    s.utterances.truncate(3);
    out.best.vocab.assign(std::slice::from_mut(&mut s));
    let report = out.best.gradient_check(&s, 1e-4, 1e-4).unwrap();
    let worst: Vec<_> = report.params.iter().filter(|p| p.flagged > 0).collect();
    assert!(report.passed(), "{worst:?}");
}

#[test]
fn attention_export_rows_are_distributions() {
    let out = fit_tiny(&tiny_config(), Pattern::Mixed);
    let (_, _, mut snippets) = corpus(Pattern::Mixed, 1, 12);
    out.best.vocab.assign(&mut snippets);
    let exports = export_attention(&out.best, &snippets[0], 3).unwrap();
    assert_eq!(exports.len(), 2);
    for e in &exports {
        for r in 0..e.weights.rows() {
            assert!((e.weights.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let mut lines = e.csv.lines();
        assert!(lines.next().unwrap().starts_with("target,"));
        assert_eq!(lines.count(), snippets[0].utterances[3].len());
    }
    assert!(export_attention(&out.best, &snippets[0], 8).is_err());
}

#[test]
fn expansion_training_restores_the_speakers_pronoun() {
    let cfg = RunConfig {
        d_model: 16,
        ff_dim: 32,
        head_hidden: 16,
        layers: 1,
        epochs: 15,
        seed: 13,
        ..RunConfig::default()
    };
    let (labels, _, snippets) = corpus(Pattern::Expansion, 150, 13);
    let lex = Lexicons::default_for(&labels);
    let model = fit(&cfg, labels.clone(), lex, snippets, None, |_, _| Ok(())).unwrap().best;
    let turn = |speaker: &str, tokens: &[&str], labels: &[&str]| crate::corpus::Turn {
        speaker: speaker.into(),
        tokens: tokens.iter().map(|t| t.to_string()).collect(),
        labels: labels.iter().map(|t| t.to_string()).collect(),
        predicted: None,
    };
    // The second speaker states 我 overtly, then drops it in a follow-up.
    let conv = Conversation {
        id: "expansion".into(),
        turns: vec![
            turn("S0", &["吃", "饭"], &["你", "None"]),
            turn("S1", &["我", "喜欢", "电影"], &["None", "None", "None"]),
            turn("S1", &["看", "书"], &["我", "None"]),
        ],
    };
    let text = conv.to_json_line().unwrap() + "\n";
    let mut s = parse_corpus(text.as_bytes(), &labels, &ParseOptions::default()).unwrap();
    model.vocab.assign(&mut s);
    let predicted = model.predict(&s[0]).unwrap();
    assert_eq!(labels.name(predicted[2][0]), "我");
}
