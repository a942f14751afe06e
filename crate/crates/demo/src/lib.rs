//! Browser demo over the `dpgcrf` library. The plain functions return
//! serializable views and are tested natively; the `wasm_bindgen` exports
//! wrap them as JSON strings.

use dpgcrf::autodiff::Tensor;
use dpgcrf::corpus::{build_vocab, conversation_snippets, Conversation, LabelSet, ParseOptions, Snippet, Turn};
use dpgcrf::emitter::ModelConfig;
use dpgcrf::graph::{build_graph, CombGraph, GraphOptions, Lexicons, SpineEntry};
use dpgcrf::inference::{decode, EmissionTable, GcrfParams};
use dpgcrf::pipeline::{export_attention, Ablation, Model};
use dpgcrf::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Longest dialogue the page accepts.
pub const MAX_UTTERANCES: usize = 16;
const PRONOUNS: [&str; 3] = ["我", "你", "他"];
const UNLIKELY: f64 = -5.0;

/// Parses one turn per non-blank line, `speaker: token token ...`. Lines
/// without a speaker prefix alternate between `A` and `B`.
pub fn parse_dialogue(text: &str) -> Result<Snippet> {
    let mut turns = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (speaker, body) = match line.split_once([':', '：']) {
            Some((s, b)) if !s.trim().is_empty() && !s.contains(char::is_whitespace) => (s.trim().to_string(), b),
            _ => ((if turns.len() % 2 == 0 { "A" } else { "B" }).to_string(), line),
        };
        let tokens: Vec<String> = body.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(Error::Data(format!("turn {} has no tokens", turns.len() + 1)));
        }
        turns.push(Turn {
            speaker,
            tokens,
            labels: Vec::new(),
            predicted: None,
        });
    }
    if turns.is_empty() {
        return Err(Error::Data("enter at least one turn".into()));
    }
    let conv = Conversation {
        id: "demo".into(),
        turns,
    };
    let opts = ParseOptions {
        snippet_len: MAX_UTTERANCES,
        ..ParseOptions::default()
    };
    let mut snippets = conversation_snippets(&conv, 1, &LabelSet::default_inventory(), &opts)?;
    if snippets.len() > 1 || snippets[0].len() > MAX_UTTERANCES {
        return Err(Error::Data(format!("at most {MAX_UTTERANCES} utterances")));
    }
    Ok(snippets.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum SpineRole {
    Latent,
    Observed { label: String },
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UtteranceView {
    pub speaker: usize,
    pub tokens: Vec<String>,
    #[serde(flatten)]
    pub role: SpineRole,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphView {
    pub utterances: Vec<UtteranceView>,
    /// Utterance indices in spine order.
    pub spine: Vec<usize>,
}

fn refined(snippet: &Snippet, labels: &LabelSet) -> CombGraph {
    build_graph(snippet, &Lexicons::default_for(labels), GraphOptions::default())
}

pub fn graph_view(text: &str) -> Result<GraphView> {
    let snippet = parse_dialogue(text)?;
    let labels = LabelSet::default_inventory();
    let graph = refined(&snippet, &labels);
    let mut roles = vec![SpineRole::Skipped; snippet.len()];
    for e in &graph.spine {
        roles[e.utterance()] = match *e {
            SpineEntry::Latent(_) => SpineRole::Latent,
            SpineEntry::Observed { label, .. } => SpineRole::Observed {
                label: labels.name(label).to_string(),
            },
        };
    }
    Ok(GraphView {
        utterances: snippet
            .utterances
            .iter()
            .zip(roles)
            .map(|(u, role)| UtteranceView {
                speaker: u.speaker,
                tokens: u.tokens.iter().map(|t| t.surface.clone()).collect(),
                role,
            })
            .collect(),
        spine: graph.spine.iter().map(|e| e.utterance()).collect(),
    })
}

/// Hand-set scores standing in for a trained model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transitions {
    /// Vertical weight for keeping the same pronoun.
    pub expansion: f64,
    /// Vertical weight between 我 and 你.
    pub reply: f64,
    /// Emission score of 我/你/他 at utterance heads, relative to `None`.
    pub drop_prior: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecodeView {
    /// Per utterance, the restored pronoun before each token or `None`.
    pub labels: Vec<Vec<Option<String>>>,
    /// Utterances with restored pronouns in parentheses.
    pub rendered: Vec<String>,
    pub score: f64,
}

/// The drop prior applies only at latent spine heads; interjection and
/// overt-pronoun openers carry no dropped pronoun.
fn demo_scores(
    snippet: &Snippet,
    graph: &CombGraph,
    labels: &LabelSet,
    t: Transitions,
) -> Result<(EmissionTable, GcrfParams)> {
    let k = labels.len();
    let latent: Vec<bool> = (0..snippet.len())
        .map(|i| graph.spine.contains(&SpineEntry::Latent(i)))
        .collect();
    let none = labels.none_index();
    let pronouns: Vec<usize> = PRONOUNS.iter().map(|p| labels.index(p).expect("default inventory")).collect();
    let emissions = snippet
        .utterances
        .iter()
        .zip(&latent)
        .map(|(u, &latent)| {
            let mut data = vec![UNLIKELY; u.len() * k];
            for j in 0..u.len() {
                data[j * k + none] = 0.0;
                if j == 0 && latent {
                    for &p in &pronouns {
                        data[p] = t.drop_prior;
                    }
                }
            }
            Tensor::matrix(u.len(), k, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut a2 = Tensor::zeros(&[k, k]);
    for &p in &pronouns {
        a2.data_mut()[p * k + p] = t.expansion;
    }
    let (wo, ni) = (pronouns[0], pronouns[1]);
    a2.data_mut()[wo * k + ni] = t.reply;
    a2.data_mut()[ni * k + wo] = t.reply;
    Ok((EmissionTable::new(k, emissions)?, GcrfParams::new(Tensor::zeros(&[k, k]), a2)?))
}

pub fn decode_view(text: &str, t: Transitions) -> Result<DecodeView> {
    let snippet = parse_dialogue(text)?;
    let labels = LabelSet::default_inventory();
    let graph = refined(&snippet, &labels);
    let (p, params) = demo_scores(&snippet, &graph, &labels, t)?;
    let d = decode(&graph, &p, &params)?;
    let names: Vec<Vec<Option<String>>> = d
        .labels
        .iter()
        .map(|row| {
            row.iter()
                .map(|&l| (!labels.is_none(l)).then(|| labels.name(l).to_string()))
                .collect()
        })
        .collect();
    let rendered = snippet
        .utterances
        .iter()
        .zip(&names)
        .map(|(u, row)| {
            u.tokens
                .iter()
                .zip(row)
                .map(|(tok, l)| match l {
                    Some(l) => format!("({l}) {}", tok.surface),
                    None => tok.surface.clone(),
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    Ok(DecodeView {
        labels: names,
        rendered,
        score: d.score,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionView {
    pub targets: Vec<String>,
    pub context: Vec<String>,
    /// `heads[layer][head][target][context]`.
    pub heads: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Interaction attention of an untrained emitter initialized from `seed`.
pub fn attention_view(text: &str, utterance: usize, seed: u64) -> Result<AttentionView> {
    let mut snippet = parse_dialogue(text)?;
    if utterance >= snippet.len() {
        return Err(Error::Data(format!("utterance {utterance} out of range 0..{}", snippet.len())));
    }
    let labels = LabelSet::default_inventory();
    let vocab = build_vocab(std::slice::from_ref(&snippet), 1)?;
    vocab.assign(std::slice::from_mut(&mut snippet));
    let config = ModelConfig {
        d_model: 16,
        heads: 2,
        layers: 2,
        ff_dim: 32,
        head_hidden: 16,
        ..ModelConfig::default()
    };
    let lexicons = Lexicons::default_for(&labels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::init(&config, Ablation::Full, labels, vocab, lexicons, MAX_UTTERANCES, &mut rng)?;
    let exports = export_attention(&model, &snippet, utterance)?;
    let context = exports
        .first()
        .and_then(|e| e.csv.lines().next())
        .map(|h| h.split(',').skip(1).map(str::to_string).collect())
        .unwrap_or_default();
    let mut heads = vec![Vec::new(); config.layers];
    for e in exports {
        heads[e.layer].push((0..e.weights.rows()).map(|r| e.weights.row(r).to_vec()).collect());
    }
    Ok(AttentionView {
        targets: snippet.utterances[utterance].tokens.iter().map(|t| t.surface.clone()).collect(),
        context,
        heads,
    })
}

fn to_js<T: Serialize>(value: Result<T>) -> Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn graph(text: &str) -> Result<String, JsError> {
    to_js(graph_view(text))
}

#[wasm_bindgen]
pub fn decode_dialogue(text: &str, expansion: f64, reply: f64, drop_prior: f64) -> Result<String, JsError> {
    to_js(decode_view(
        text,
        Transitions {
            expansion,
            reply,
            drop_prior,
        },
    ))
}

#[wasm_bindgen]
pub fn attention(text: &str, utterance: usize, seed: u64) -> Result<String, JsError> {
    to_js(attention_view(text, utterance, seed))
}
