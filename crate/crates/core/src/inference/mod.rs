//! Exact scoring, MAP decoding and log-partition over a [`CombGraph`].
//!
//! Horizontal chains are reduced tail-to-head into a message indexed by the
//! head label, the spine is solved with those messages as unary scores, and
//! every detached chain is handled on its own. The refined graph is a forest,
//! so both the max and the sum versions are exact.

mod brute;
mod tape;

use crate::autodiff::{argmax, logsumexp, Tensor};
use crate::error::{Error, Result};
use crate::graph::{CombGraph, SpineEntry};

pub use brute::{brute_force, BruteForce, MAX_BRUTE_FORCE_K, MAX_BRUTE_FORCE_TOKENS};
pub use tape::{joint_score_on_tape, log_partition_on_tape, nll, nll_on_tape, NllOutput};

/// Per-utterance labels, shaped like the snippet.
pub type LabelAssignment = Vec<Vec<usize>>;

/// Emission log-scores: one `m_i × k` matrix per utterance. The ragged
/// layout means padded positions simply do not exist.
#[derive(Clone, Debug, PartialEq)]
pub struct EmissionTable {
    k: usize,
    rows: Vec<Tensor>,
}

impl EmissionTable {
    pub fn new(k: usize, rows: Vec<Tensor>) -> Result<Self> {
        for r in &rows {
            if r.rank() != 2 || r.cols() != k || r.rows() == 0 {
                return Err(Error::shape("emission_table", &[r.shape(), &[k]]));
            }
        }
        Ok(Self { k, rows })
    }

    pub fn label_count(&self) -> usize {
        self.k
    }

    pub fn utterances(&self) -> &[Tensor] {
        &self.rows
    }

    pub fn utterance(&self, i: usize) -> &Tensor {
        &self.rows[i]
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.rows.iter().map(Tensor::rows).collect()
    }

    /// Per-token argmax, lowest index on ties.
    pub fn argmax_labels(&self) -> LabelAssignment {
        self.rows
            .iter()
            .map(|r| (0..r.rows()).map(|j| argmax(r.row(j))).collect())
            .collect()
    }

    /// Adds `c` to every entry.
    pub fn shifted(&self, c: f64) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|r| Tensor::new(r.shape().to_vec(), r.data().iter().map(|v| v + c).collect()).expect("same shape"))
            .collect();
        Self { k: self.k, rows }
    }
}

/// Horizontal (`a1`) and vertical (`a2`) transition log-scores, `from × to`.
#[derive(Clone, Debug, PartialEq)]
pub struct GcrfParams {
    pub a1: Tensor,
    pub a2: Tensor,
}

impl GcrfParams {
    pub fn new(a1: Tensor, a2: Tensor) -> Result<Self> {
        let k = a1.rows();
        if a1.shape() != [k, k] || a2.shape() != [k, k] {
            return Err(Error::shape("gcrf_params", &[a1.shape(), a2.shape()]));
        }
        if !a1.is_finite() || !a2.is_finite() {
            return Err(Error::Numeric("transition matrices must be finite".into()));
        }
        Ok(Self { a1, a2 })
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            a1: Tensor::zeros(&[k, k]),
            a2: Tensor::zeros(&[k, k]),
        }
    }

    pub fn label_count(&self) -> usize {
        self.a1.rows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Max,
    Sum,
}

/// Head-indexed summary of one horizontal chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainMessage {
    /// `scores[l]`: best (or log-summed) score of the chain given head label
    /// `l`, head emission included.
    pub scores: Vec<f64>,
    /// `backpointers[j][l]`: best label at position `j+1` given label `l` at
    /// position `j`. Empty in sum mode and for single-token chains.
    pub backpointers: Vec<Vec<usize>>,
}

impl ChainMessage {
    /// Full chain labels given the head label.
    pub fn trace(&self, head: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.backpointers.len() + 1);
        out.push(head);
        for bp in &self.backpointers {
            let prev = *out.last().expect("non-empty");
            out.push(bp[prev]);
        }
        out
    }
}

/// Runs the chain dynamic program from the tail toward the head.
pub fn horizontal_message(emissions: &Tensor, a1: &Tensor, mode: Mode) -> ChainMessage {
    let k = emissions.cols();
    let m = emissions.rows();
    let mut beta = emissions.row(m - 1).to_vec();
    let mut backpointers = Vec::new();
    let mut scratch = vec![0.0; k];
    for j in (0..m - 1).rev() {
        let e = emissions.row(j);
        let mut next = vec![0.0; k];
        let mut bp = vec![0; k];
        for l in 0..k {
            let trans = a1.row(l);
            for (s, (t, b)) in scratch.iter_mut().zip(trans.iter().zip(&beta)) {
                *s = t + b;
            }
            next[l] = e[l]
                + match mode {
                    Mode::Max => {
                        bp[l] = argmax(&scratch);
                        scratch[bp[l]]
                    }
                    Mode::Sum => logsumexp(&scratch),
                };
        }
        beta = next;
        if mode == Mode::Max {
            backpointers.push(bp);
        }
    }
    backpointers.reverse();
    ChainMessage {
        scores: beta,
        backpointers,
    }
}

fn check_shapes(graph: &CombGraph, p: &EmissionTable, params: &GcrfParams) -> Result<usize> {
    let k = p.label_count();
    if params.label_count() != k {
        return Err(Error::shape("gcrf", &[&[k], params.a1.shape()]));
    }
    if graph.chain_lengths() != p.lengths() {
        return Err(Error::shape("gcrf", &[&graph.chain_lengths(), &p.lengths()]));
    }
    for e in &graph.spine {
        if let SpineEntry::Observed { label, .. } = e {
            if *label >= k {
                return Err(Error::Data(format!("observed label {label} out of range for k={k}")));
            }
        }
    }
    Ok(k)
}

/// Value of a spine label `T_i`: the observed label, or the head token label.
fn spine_label(entry: SpineEntry, y: &LabelAssignment) -> usize {
    match entry {
        SpineEntry::Latent(i) => y[i][0],
        SpineEntry::Observed { label, .. } => label,
    }
}

/// Chain transitions and emissions of every utterance plus vertical
/// transitions between consecutive spine entries.
pub fn joint_score(graph: &CombGraph, p: &EmissionTable, params: &GcrfParams, y: &LabelAssignment) -> Result<f64> {
    let k = check_shapes(graph, p, params)?;
    let lengths: Vec<usize> = y.iter().map(Vec::len).collect();
    if lengths != p.lengths() || y.iter().flatten().any(|&l| l >= k) {
        return Err(Error::shape("joint_score", &[&lengths, &p.lengths()]));
    }
    Ok(score_unchecked(graph, p, params, y))
}

pub(crate) fn score_unchecked(graph: &CombGraph, p: &EmissionTable, params: &GcrfParams, y: &LabelAssignment) -> f64 {
    let mut total = 0.0;
    for (i, labels) in y.iter().enumerate() {
        let e = p.utterance(i);
        for (j, &l) in labels.iter().enumerate() {
            total += e.at(j, l);
        }
        for w in labels.windows(2) {
            total += params.a1.at(w[0], w[1]);
        }
    }
    for w in graph.spine.windows(2) {
        total += params.a2.at(spine_label(w[0], y), spine_label(w[1], y));
    }
    total
}

/// Labels a spine entry may take: all `k`, or only the observed one.
fn allowed(entry: SpineEntry, k: usize) -> std::ops::Range<usize> {
    match entry {
        SpineEntry::Latent(_) => 0..k,
        SpineEntry::Observed { label, .. } => label..label + 1,
    }
}

/// Unary spine score of `entry` at label `l`.
fn spine_unary(entry: SpineEntry, messages: &[ChainMessage], l: usize) -> f64 {
    match entry {
        SpineEntry::Latent(i) => messages[i].scores[l],
        SpineEntry::Observed { .. } => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub labels: LabelAssignment,
    /// Joint score of `labels`.
    pub score: f64,
}

/// Exact MAP assignment. Ties resolve to the lowest label index at every max.
pub fn decode(graph: &CombGraph, p: &EmissionTable, params: &GcrfParams) -> Result<Decoded> {
    let k = check_shapes(graph, p, params)?;
    let n = graph.chains.len();
    let messages: Vec<ChainMessage> =
        (0..n).map(|i| horizontal_message(p.utterance(i), &params.a1, Mode::Max)).collect();
    let mut heads: Vec<Option<usize>> = vec![None; n];

    if !graph.spine.is_empty() {
        let mut delta = vec![0.0; k];
        for l in allowed(graph.spine[0], k) {
            delta[l] = spine_unary(graph.spine[0], &messages, l);
        }
        let mut back: Vec<Vec<usize>> = Vec::with_capacity(graph.spine.len());
        for w in graph.spine.windows(2) {
            let (prev, cur) = (w[0], w[1]);
            let mut next = vec![0.0; k];
            let mut bp = vec![0; k];
            for l in allowed(cur, k) {
                let mut best: Option<(usize, f64)> = None;
                for lp in allowed(prev, k) {
                    let v = delta[lp] + params.a2.at(lp, l);
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((lp, v));
                    }
                }
                let (lp, v) = best.expect("non-empty range");
                bp[l] = lp;
                next[l] = v + spine_unary(cur, &messages, l);
            }
            delta = next;
            back.push(bp);
        }
        let last = *graph.spine.last().expect("non-empty");
        let mut label = allowed(last, k)
            .fold(None, |best: Option<usize>, l| match best {
                Some(b) if delta[b] >= delta[l] => Some(b),
                _ => Some(l),
            })
            .expect("non-empty range");
        for (t, entry) in graph.spine.iter().enumerate().rev() {
            if let SpineEntry::Latent(i) = *entry {
                heads[i] = Some(label);
            }
            if t > 0 {
                label = back[t - 1][label];
            }
        }
    }

    let labels: LabelAssignment = (0..n)
        .map(|i| {
            let msg = &messages[i];
            let head = heads[i].unwrap_or_else(|| argmax(&msg.scores));
            msg.trace(head)
        })
        .collect();
    let score = score_unchecked(graph, p, params, &labels);
    Ok(Decoded { labels, score })
}

/// Exact `log Z` over all assignments consistent with the observed entries.
pub fn log_partition(graph: &CombGraph, p: &EmissionTable, params: &GcrfParams) -> Result<f64> {
    let k = check_shapes(graph, p, params)?;
    let n = graph.chains.len();
    let messages: Vec<ChainMessage> =
        (0..n).map(|i| horizontal_message(p.utterance(i), &params.a1, Mode::Sum)).collect();
    let mut total = 0.0;
    for i in graph.detached_utterances() {
        total += logsumexp(&messages[i].scores);
    }
    if let Some(&first) = graph.spine.first() {
        let mut alpha = vec![0.0; k];
        for l in allowed(first, k) {
            alpha[l] = spine_unary(first, &messages, l);
        }
        let mut scratch = Vec::with_capacity(k);
        for w in graph.spine.windows(2) {
            let (prev, cur) = (w[0], w[1]);
            let mut next = vec![0.0; k];
            for l in allowed(cur, k) {
                scratch.clear();
                scratch.extend(allowed(prev, k).map(|lp| alpha[lp] + params.a2.at(lp, l)));
                next[l] = logsumexp(&scratch) + spine_unary(cur, &messages, l);
            }
            alpha = next;
        }
        let last = *graph.spine.last().expect("non-empty");
        let finals: Vec<f64> = allowed(last, k).map(|l| alpha[l]).collect();
        total += logsumexp(&finals);
    }
    Ok(total)
}

/// Independent per-token argmax, the decoder used without the CRF layer.
pub fn independent_decode(p: &EmissionTable) -> LabelAssignment {
    p.argmax_labels()
}

#[cfg(test)]
mod tests;
