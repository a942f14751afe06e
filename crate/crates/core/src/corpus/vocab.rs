use std::collections::HashMap;
use std::path::Path;

use super::Snippet;
use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "[UNK]";
pub const SEP_TOKEN: &str = "[SEP]";
pub(crate) const UNK_ID: usize = 0;
pub(crate) const SEP_ID: usize = 1;

/// Surface → id map. Ids are dense: `[UNK]` is 0, `[SEP]` is 1, then words by
/// descending frequency with lexicographic tie-break.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
    min_freq: usize,
}

pub fn build_vocab(snippets: &[Snippet], min_freq: usize) -> Result<Vocab> {
    if min_freq == 0 {
        return Err(Error::Config("min_freq must be at least 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in snippets.iter().flat_map(|s| &s.utterances).flat_map(|u| &u.tokens) {
        *counts.entry(t.surface.as_str()).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(w, c)| *c >= min_freq && *w != UNK_TOKEN && *w != SEP_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocab::from_words(kept.into_iter().map(|(w, _)| w.to_string()), min_freq)
}

impl Vocab {
    /// Builds from the ordered word list (excluding the two reserved tokens).
    pub fn from_words(words: impl IntoIterator<Item = String>, min_freq: usize) -> Result<Self> {
        let mut all = vec![UNK_TOKEN.to_string(), SEP_TOKEN.to_string()];
        all.extend(words);
        let mut index = HashMap::with_capacity(all.len());
        for (i, w) in all.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        Ok(Self {
            words: all,
            index,
            min_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn unk_id(&self) -> usize {
        UNK_ID
    }

    pub fn sep_id(&self) -> usize {
        SEP_ID
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, surface: &str) -> usize {
        self.index.get(surface).copied().unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    /// Writes vocabulary ids into every token.
    pub fn assign(&self, snippets: &mut [Snippet]) {
        for t in snippets
            .iter_mut()
            .flat_map(|s| &mut s.utterances)
            .flat_map(|u| &mut u.tokens)
        {
            t.vocab_id = self.id(&t.surface);
        }
    }

    /// One word per line in id order (reserved tokens included).
    pub fn to_text(&self) -> String {
        let mut s = self.words.join("\n");
        s.push('\n');
        s
    }

    pub fn parse(text: &str, min_freq: usize) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(UNK_TOKEN) || lines.next() != Some(SEP_TOKEN) {
            return Err(Error::Data("vocabulary must start with [UNK] and [SEP]".into()));
        }
        Self::from_words(lines.map(str::to_string), min_freq)
    }

    pub fn load(path: &Path, min_freq: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, min_freq)
    }
}
