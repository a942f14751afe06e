use super::{Snippet, Vocab};

/// Utterances before the target included in its context.
pub const CONTEXT_BEFORE: usize = 5;
/// Utterances after the target included in its context.
pub const CONTEXT_AFTER: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextToken {
    pub surface: String,
    pub vocab_id: usize,
    pub speaker: usize,
    /// Source utterance, `None` for delimiters.
    pub utterance: Option<usize>,
}

/// Flattened context of one target utterance with `[SEP]` between utterances.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextWindow {
    pub target_index: usize,
    pub context_utterances: Vec<usize>,
    pub tokens: Vec<ContextToken>,
    pub sep_positions: Vec<usize>,
}

impl ContextWindow {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Context for utterance `i`: the in-snippet members of `i-5..i-1, i+1, i+2`.
/// Out-of-range neighbors are dropped silently. A delimiter takes the speaker
/// of the utterance it follows.
pub fn attach_context(snippet: &Snippet, i: usize, vocab: &Vocab) -> ContextWindow {
    assert!(i < snippet.len(), "target utterance {i} out of range");
    let n = snippet.len();
    let lo = i.saturating_sub(CONTEXT_BEFORE);
    let hi = (i + CONTEXT_AFTER).min(n - 1);
    let context_utterances: Vec<usize> = (lo..=hi).filter(|&u| u != i).collect();
    let mut tokens = Vec::new();
    let mut sep_positions = Vec::new();
    for (pos, &u) in context_utterances.iter().enumerate() {
        let utt = &snippet.utterances[u];
        if pos > 0 {
            let prev = &snippet.utterances[context_utterances[pos - 1]];
            sep_positions.push(tokens.len());
            tokens.push(ContextToken {
                surface: super::SEP_TOKEN.to_string(),
                vocab_id: vocab.sep_id(),
                speaker: prev.speaker,
                utterance: None,
            });
        }
        for t in &utt.tokens {
            tokens.push(ContextToken {
                surface: t.surface.clone(),
                vocab_id: t.vocab_id,
                speaker: utt.speaker,
                utterance: Some(u),
            });
        }
    }
    ContextWindow {
        target_index: i,
        context_utterances,
        tokens,
        sep_positions,
    }
}
