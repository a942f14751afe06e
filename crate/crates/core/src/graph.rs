//! Comb-shaped factor graph over a snippet: one horizontal chain per simple
//! utterance plus a vertical spine through the utterance-initial nodes,
//! refined for overt pronouns and interjections.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use crate::corpus::{LabelSet, Snippet, Utterance};
use crate::error::{Error, Result};

const DEFAULT_PRONOUNS: &str = include_str!("../data/pronouns.tsv");
const DEFAULT_INTERJECTIONS: &str = include_str!("../data/interjections.txt");

fn entries(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// Tokens after which a compound utterance is split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PunctuationSet(HashSet<String>);

impl Default for PunctuationSet {
    fn default() -> Self {
        Self::new(["，", "。", "？", "！", "；", ",", ".", "?", "!", ";"])
    }
}

impl PunctuationSet {
    pub fn new<S: Into<String>>(marks: impl IntoIterator<Item = S>) -> Self {
        Self(marks.into_iter().map(Into::into).collect())
    }

    /// A set that never splits.
    pub fn empty() -> Self {
        Self(HashSet::new())
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.0.contains(surface)
    }
}

/// Splits after every punctuation token. Punctuation stays with the fragment
/// it ends; empty fragments never occur.
pub fn split_compound(turn: &Utterance, punctuation: &PunctuationSet) -> Vec<Utterance> {
    let mut out = Vec::new();
    let mut start = 0;
    for (j, t) in turn.tokens.iter().enumerate() {
        if punctuation.contains(&t.surface) || j + 1 == turn.tokens.len() {
            out.push(Utterance {
                tokens: turn.tokens[start..=j].to_vec(),
                speaker: turn.speaker,
                source_turn: turn.source_turn,
                token_offset: turn.token_offset + start,
            });
            start = j + 1;
        }
    }
    out
}

/// Overt pronoun surfaces and the label each one pins on the spine.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PronounLexicon(HashMap<String, usize>);

impl PronounLexicon {
    pub fn new(entries: impl IntoIterator<Item = (String, usize)>) -> Self {
        Self(entries.into_iter().collect())
    }

    /// Parses `surface<TAB>label` lines against `labels`.
    pub fn parse(text: &str, labels: &LabelSet) -> Result<Self> {
        let mut map = HashMap::new();
        for (line, l) in entries(text) {
            let (surface, label) = l.split_once('\t').ok_or_else(|| Error::Parse {
                line,
                message: "pronoun lexicon lines are surface<TAB>label".into(),
            })?;
            let idx = labels.index(label.trim()).ok_or_else(|| Error::Parse {
                line,
                message: format!("unknown label {label:?}"),
            })?;
            map.insert(surface.trim().to_string(), idx);
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path, labels: &LabelSet) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, labels)
    }

    /// Bundled lexicon, keeping only entries whose label exists in `labels`.
    pub fn default_for(labels: &LabelSet) -> Self {
        Self(
            entries(DEFAULT_PRONOUNS)
                .filter_map(|(_, l)| l.split_once('\t'))
                .filter_map(|(s, l)| labels.index(l).map(|i| (s.to_string(), i)))
                .collect(),
        )
    }

    pub fn get(&self, surface: &str) -> Option<usize> {
        self.0.get(surface).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `surface<TAB>label` lines, sorted by surface.
    pub fn to_text(&self, labels: &LabelSet) -> String {
        let mut rows: Vec<_> = self.0.iter().collect();
        rows.sort();
        rows.iter()
            .map(|(s, l)| format!("{s}\t{}\n", labels.name(**l)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterjectionLexicon(HashSet<String>);

impl Default for InterjectionLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_INTERJECTIONS)
    }
}

impl InterjectionLexicon {
    pub fn new<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Self {
        Self(words.into_iter().map(Into::into).collect())
    }

    pub fn parse(text: &str) -> Self {
        Self(entries(text).map(|(_, l)| l.trim().to_string()).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.0.contains(surface)
    }

    pub fn to_text(&self) -> String {
        let mut words: Vec<_> = self.0.iter().collect();
        words.sort();
        words.iter().map(|w| format!("{w}\n")).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicons {
    pub pronouns: PronounLexicon,
    pub interjections: InterjectionLexicon,
}

impl Lexicons {
    pub fn default_for(labels: &LabelSet) -> Self {
        Self {
            pronouns: PronounLexicon::default_for(labels),
            interjections: InterjectionLexicon::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TokenNode {
    pub utterance: usize,
    pub position: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpineEntry {
    /// The utterance's first-token node sits on the spine.
    Latent(usize),
    /// An observed node with a fixed label replaces the utterance's
    /// first-token node on the spine; the chain itself is detached.
    Observed { utterance: usize, label: usize },
}

impl SpineEntry {
    pub fn utterance(self) -> usize {
        match self {
            SpineEntry::Latent(i) | SpineEntry::Observed { utterance: i, .. } => i,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CombGraph {
    pub chains: Vec<Vec<TokenNode>>,
    pub spine: Vec<SpineEntry>,
}

impl CombGraph {
    pub fn chain_lengths(&self) -> Vec<usize> {
        self.chains.iter().map(Vec::len).collect()
    }

    pub fn token_count(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    /// Utterances whose head is a latent spine node, in spine order.
    pub fn latent_utterances(&self) -> impl Iterator<Item = usize> + '_ {
        self.spine.iter().filter_map(|e| match e {
            SpineEntry::Latent(i) => Some(*i),
            SpineEntry::Observed { .. } => None,
        })
    }

    /// Utterances whose chain is not attached to the spine.
    pub fn detached_utterances(&self) -> Vec<usize> {
        let attached: HashSet<usize> = self.latent_utterances().collect();
        (0..self.chains.len()).filter(|i| !attached.contains(i)).collect()
    }

    /// Same chains, no vertical edges.
    pub fn without_spine(&self) -> Self {
        Self {
            chains: self.chains.clone(),
            spine: Vec::new(),
        }
    }

    fn node_count(&self) -> usize {
        self.token_count()
            + self
                .spine
                .iter()
                .filter(|e| matches!(e, SpineEntry::Observed { .. }))
                .count()
    }

    /// All edges as pairs of dense node ids. Token nodes come first in
    /// utterance order, then one node per observed spine entry.
    fn edges(&self) -> Option<Vec<(usize, usize)>> {
        let mut offsets = Vec::with_capacity(self.chains.len());
        let mut total = 0;
        for c in &self.chains {
            offsets.push(total);
            total += c.len();
        }
        let mut edges = Vec::new();
        for (i, c) in self.chains.iter().enumerate() {
            for j in 1..c.len() {
                edges.push((offsets[i] + j - 1, offsets[i] + j));
            }
        }
        let mut observed = total;
        let mut spine_nodes = Vec::with_capacity(self.spine.len());
        for e in &self.spine {
            match *e {
                SpineEntry::Latent(i) => {
                    if self.chains.get(i).is_none_or(Vec::is_empty) {
                        return None;
                    }
                    spine_nodes.push(offsets[i]);
                }
                SpineEntry::Observed { .. } => {
                    spine_nodes.push(observed);
                    observed += 1;
                }
            }
        }
        for w in spine_nodes.windows(2) {
            edges.push((w[0], w[1]));
        }
        Some(edges)
    }

    /// Number of connected components (observed nodes included).
    pub fn component_count(&self) -> usize {
        let n = self.node_count();
        let mut uf = UnionFind::new(n);
        for (a, b) in self.edges().unwrap_or_default() {
            uf.union(a, b);
        }
        (0..n).filter(|&i| uf.find(i) == i).count()
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

/// One chain per utterance and a latent spine entry for every utterance.
pub fn build_initial_graph(snippet: &Snippet) -> CombGraph {
    CombGraph {
        chains: snippet
            .utterances
            .iter()
            .enumerate()
            .map(|(i, u)| {
                (0..u.len())
                    .map(|j| TokenNode {
                        utterance: i,
                        position: j,
                    })
                    .collect()
            })
            .collect(),
        spine: (0..snippet.len()).map(SpineEntry::Latent).collect(),
    }
}

/// Replaces latent spine entries whose first token is an overt pronoun by an
/// observed entry carrying the pronoun's label.
pub fn refine_ovp(graph: &CombGraph, snippet: &Snippet, lexicon: &PronounLexicon) -> CombGraph {
    let spine = graph
        .spine
        .iter()
        .map(|&e| match e {
            SpineEntry::Latent(i) => match lexicon.get(snippet.utterances[i].first_surface()) {
                Some(label) => SpineEntry::Observed { utterance: i, label },
                None => e,
            },
            observed => observed,
        })
        .collect();
    CombGraph {
        chains: graph.chains.clone(),
        spine,
    }
}

/// Drops latent spine entries whose first token is an interjection; the spine
/// closes over the gap. Observed entries are kept, so an overt pronoun that is
/// also listed as an interjection stays on the spine.
pub fn refine_interjections(graph: &CombGraph, snippet: &Snippet, lexicon: &InterjectionLexicon) -> CombGraph {
    CombGraph {
        chains: graph.chains.clone(),
        spine: graph
            .spine
            .iter()
            .copied()
            .filter(|e| match e {
                SpineEntry::Latent(i) => !lexicon.contains(snippet.utterances[*i].first_surface()),
                SpineEntry::Observed { .. } => true,
            })
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphOptions {
    /// Apply the overt-pronoun and interjection refinements.
    pub refine: bool,
    /// Keep the vertical spine at all.
    pub vertical: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            refine: true,
            vertical: true,
        }
    }
}

pub fn build_graph(snippet: &Snippet, lexicons: &Lexicons, opts: GraphOptions) -> CombGraph {
    let mut g = build_initial_graph(snippet);
    if opts.refine {
        g = refine_ovp(&g, snippet, &lexicons.pronouns);
        g = refine_interjections(&g, snippet, &lexicons.interjections);
    }
    if !opts.vertical {
        g = g.without_spine();
    }
    g
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    SpineOrder { position: usize },
    SpineUtteranceOutOfRange { utterance: usize },
    LabelOutOfRange { utterance: usize, label: usize },
    ChainMismatch { utterance: usize },
    Cycle,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SpineOrder { position } => {
                write!(f, "spine not strictly increasing at entry {position}")
            }
            Violation::SpineUtteranceOutOfRange { utterance } => {
                write!(f, "spine references missing utterance {utterance}")
            }
            Violation::LabelOutOfRange { utterance, label } => {
                write!(f, "label out of range: observed label {label} at utterance {utterance}")
            }
            Violation::ChainMismatch { utterance } => {
                write!(f, "chain {utterance} does not list its tokens in order")
            }
            Violation::Cycle => write!(f, "graph contains a cycle"),
        }
    }
}

/// Checks spine ordering, observed label range, chain/token bijection and the
/// forest property. Returns every violation found.
pub fn validate_graph(graph: &CombGraph, label_count: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, chain) in graph.chains.iter().enumerate() {
        let ok = !chain.is_empty()
            && chain
                .iter()
                .enumerate()
                .all(|(j, n)| n.utterance == i && n.position == j);
        if !ok {
            out.push(Violation::ChainMismatch { utterance: i });
        }
    }
    for (p, w) in graph.spine.windows(2).enumerate() {
        if w[0].utterance() >= w[1].utterance() {
            out.push(Violation::SpineOrder { position: p + 1 });
        }
    }
    for e in &graph.spine {
        if e.utterance() >= graph.chains.len() {
            out.push(Violation::SpineUtteranceOutOfRange { utterance: e.utterance() });
        }
        if let SpineEntry::Observed { utterance, label } = *e {
            if label >= label_count {
                out.push(Violation::LabelOutOfRange { utterance, label });
            }
        }
    }
    if out.is_empty() {
        let mut uf = UnionFind::new(graph.node_count());
        match graph.edges() {
            Some(edges) => {
                if edges.into_iter().any(|(a, b)| !uf.union(a, b)) {
                    out.push(Violation::Cycle);
                }
            }
            None => out.push(Violation::Cycle),
        }
    }
    out
}
