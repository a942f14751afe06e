//! Conversation corpora: JSONL records, snippets, vocabulary, context windows
//! and corpus statistics.

mod context;
mod labels;
mod stats;
mod vocab;

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

pub use context::{attach_context, ContextToken, ContextWindow, CONTEXT_AFTER, CONTEXT_BEFORE};
pub use labels::{LabelSet, NONE_LABEL};
pub use stats::{corpus_stats, StatsReport};
pub use vocab::{build_vocab, Vocab, SEP_TOKEN, UNK_TOKEN};

use crate::error::{Error, Result};
use crate::graph::{split_compound, PunctuationSet};

pub const DEFAULT_SNIPPET_LEN: usize = 8;
pub const DEFAULT_MAX_SPEAKERS: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub vocab_id: usize,
    /// Tag for the pronoun dropped immediately before this token.
    pub gold_label: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub tokens: Vec<Token>,
    pub speaker: usize,
    /// Turn index within the source record.
    pub source_turn: usize,
    /// Offset of the first token within that turn.
    pub token_offset: usize,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn first_surface(&self) -> &str {
        &self.tokens[0].surface
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snippet {
    pub id: String,
    pub record_id: String,
    pub utterances: Vec<Utterance>,
}

impl Snippet {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.utterances.iter().map(Utterance::len).sum()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.utterances.iter().map(Utterance::len).collect()
    }

    /// Gold labels per utterance, or `None` if any token is unlabeled.
    pub fn gold(&self) -> Option<Vec<Vec<usize>>> {
        self.utterances
            .iter()
            .map(|u| u.tokens.iter().map(|t| t.gold_label).collect())
            .collect()
    }
}

/// One turn of a JSONL conversation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Vec<String>>,
}

/// One line of a corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Clone, Debug)]
pub struct ParseOptions {
    pub snippet_len: usize,
    pub max_speakers: usize,
    /// Compound turns are split on these tokens before windowing.
    pub punctuation: PunctuationSet,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            snippet_len: DEFAULT_SNIPPET_LEN,
            max_speakers: DEFAULT_MAX_SPEAKERS,
            punctuation: PunctuationSet::default(),
        }
    }
}

/// Reads one conversation per non-blank line. Returned pairs carry the
/// 1-based line number.
pub fn parse_records<R: BufRead>(reader: R) -> Result<Vec<(usize, Conversation)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let conv: Conversation = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, conv));
    }
    Ok(out)
}

/// Parses a JSONL corpus into snippets of at most `opts.snippet_len` simple
/// utterances, in document order. Vocabulary ids are left at the UNK id;
/// call [`Vocab::assign`] afterwards.
pub fn parse_corpus<R: BufRead>(reader: R, labels: &LabelSet, opts: &ParseOptions) -> Result<Vec<Snippet>> {
    let mut snippets = Vec::new();
    for (line, conv) in parse_records(reader)? {
        snippets.extend(conversation_snippets(&conv, line, labels, opts)?);
    }
    Ok(snippets)
}

pub fn conversation_snippets(
    conv: &Conversation,
    line: usize,
    labels: &LabelSet,
    opts: &ParseOptions,
) -> Result<Vec<Snippet>> {
    if opts.snippet_len == 0 {
        return Err(Error::Config("snippet length must be at least 1".into()));
    }
    let err = |message: String| Error::Parse { line, message };
    let mut speakers: HashMap<&str, usize> = HashMap::new();
    let mut utterances = Vec::new();
    for (t, turn) in conv.turns.iter().enumerate() {
        if turn.tokens.is_empty() {
            return Err(err(format!("record {:?}: turn {t} is empty", conv.id)));
        }
        if !turn.labels.is_empty() && turn.labels.len() != turn.tokens.len() {
            return Err(err(format!(
                "record {:?}: turn {t} has {} tokens but {} labels",
                conv.id,
                turn.tokens.len(),
                turn.labels.len()
            )));
        }
        let next = speakers.len();
        let speaker = *speakers.entry(turn.speaker.as_str()).or_insert(next);
        if speaker >= opts.max_speakers {
            return Err(err(format!(
                "record {:?}: more than {} speakers",
                conv.id, opts.max_speakers
            )));
        }
        let mut tokens = Vec::with_capacity(turn.tokens.len());
        for (j, surface) in turn.tokens.iter().enumerate() {
            let gold_label = match turn.labels.get(j) {
                None => None,
                Some(name) => Some(
                    labels
                        .index(name)
                        .ok_or_else(|| err(format!("unknown label {name:?} in record {:?}", conv.id)))?,
                ),
            };
            tokens.push(Token {
                surface: surface.clone(),
                vocab_id: vocab::UNK_ID,
                gold_label,
            });
        }
        let turn_utt = Utterance {
            tokens,
            speaker,
            source_turn: t,
            token_offset: 0,
        };
        utterances.extend(split_compound(&turn_utt, &opts.punctuation));
    }
    Ok(utterances
        .chunks(opts.snippet_len)
        .enumerate()
        .map(|(w, chunk)| Snippet {
            id: format!("{}#{w}", conv.id),
            record_id: conv.id.clone(),
            utterances: chunk.to_vec(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn labels() -> LabelSet {
        LabelSet::default_inventory()
    }

    fn parse(text: &str) -> Result<Vec<Snippet>> {
        parse_corpus(text.as_bytes(), &labels(), &ParseOptions::default())
    }

    #[test]
    fn two_turns_all_none() {
        let text = r#"{"id":"c1","turns":[{"speaker":"A","tokens":["a","b","c"],"labels":["None","None","None"]},{"speaker":"B","tokens":["d","e","f"],"labels":["None","None","None"]}]}"#;
        let snippets = parse(text).unwrap();
        assert_eq!(snippets.len(), 1);
        assert_eq!(snippets[0].len(), 2);
        let none = labels().none_index();
        assert!(snippets[0]
            .utterances
            .iter()
            .flat_map(|u| &u.tokens)
            .all(|t| t.gold_label == Some(none)));
        assert_eq!(snippets[0].utterances[1].speaker, 1);
    }

    #[test]
    fn pronoun_label_resolves() {
        let text = r#"{"id":"c1","turns":[{"speaker":"A","tokens":["a","b","c"],"labels":["None","None","None"]},{"speaker":"B","tokens":["d","e","f"],"labels":["None","None","我"]}]}"#;
        let s = &parse(text).unwrap()[0];
        assert_eq!(s.utterances[1].tokens[2].gold_label, labels().index("我"));
    }

    #[test]
    fn unknown_label_names_label_and_line() {
        let ok = r#"{"id":"c0","turns":[{"speaker":"A","tokens":["x"],"labels":["None"]}]}"#;
        let bad = r#"{"id":"c1","turns":[{"speaker":"A","tokens":["a"],"labels":["XYZ"]}]}"#;
        let err = parse(&format!("{ok}\n{bad}\n")).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{msg}");
        assert!(msg.contains("XYZ"), "{msg}");
    }

    #[test]
    fn empty_turn_is_an_error() {
        let text = r#"{"id":"c1","turns":[{"speaker":"A","tokens":[],"labels":[]}]}"#;
        assert!(matches!(parse(text), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn compound_turns_split_before_windowing() {
        let turns: Vec<String> = (0..5)
            .map(|i| format!(r#"{{"speaker":"S{}","tokens":["x","，","y"]}}"#, i % 2))
            .collect();
        let text = format!(r#"{{"id":"c","turns":[{}]}}"#, turns.join(","));
        let snippets = parse(&text).unwrap();
        // 5 turns × 2 simple utterances = 10 → windows of 8 and 2
        assert_eq!(snippets.iter().map(Snippet::len).collect::<Vec<_>>(), vec![8, 2]);
        assert_eq!(snippets[1].id, "c#1");
        let u = &snippets[0].utterances[1];
        assert_eq!((u.source_turn, u.token_offset), (0, 2));
        assert!(snippets[0].gold().is_none());
    }

    fn arb_conversation() -> impl Strategy<Value = Conversation> {
        let label_names = labels().names().to_vec();
        let surfaces = ["好", "，", "走", "吧", "我", "嗯", "。", "x"];
        proptest::collection::vec(
            (0usize..3, proptest::collection::vec((0..surfaces.len(), 0..label_names.len()), 1..6)),
            1..12,
        )
        .prop_map(move |turns| Conversation {
            id: "p".into(),
            turns: turns
                .into_iter()
                .map(|(spk, toks)| Turn {
                    speaker: format!("S{spk}"),
                    tokens: toks.iter().map(|(s, _)| surfaces[*s].to_string()).collect(),
                    labels: toks.iter().map(|(_, l)| label_names[*l].clone()).collect(),
                    predicted: None,
                })
                .collect(),
        })
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(conv in arb_conversation()) {
            let line = conv.to_json_line().unwrap();
            let mut once = parse(&line).unwrap();
            let vocab = build_vocab(&once, 2).unwrap();
            vocab.assign(&mut once);
            let again_conv: Vec<_> = parse_records(line.as_bytes()).unwrap();
            prop_assert_eq!(&again_conv[0].1, &conv);
            let mut twice = parse(&again_conv[0].1.to_json_line().unwrap()).unwrap();
            vocab.assign(&mut twice);
            prop_assert_eq!(once, twice);
        }
    }
}
