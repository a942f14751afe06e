use super::{check_shapes, score_unchecked, EmissionTable, GcrfParams, LabelAssignment};
use crate::autodiff::{logsumexp, Tensor};
use crate::error::{Error, Result};
use crate::graph::CombGraph;

pub const MAX_BRUTE_FORCE_TOKENS: usize = 12;
pub const MAX_BRUTE_FORCE_K: usize = 4;

/// Everything exhaustive enumeration yields.
#[derive(Clone, Debug)]
pub struct BruteForce {
    /// First maximizer in lexicographic enumeration order.
    pub argmax: LabelAssignment,
    pub max_score: f64,
    pub log_partition: f64,
    /// Per-token posterior marginals, one `m_i × k` matrix per utterance.
    pub marginals: Vec<Tensor>,
}

/// Enumerates every token labeling. Observed spine labels are fixed by the
/// graph, so they never enter the enumeration.
pub fn brute_force(graph: &CombGraph, p: &EmissionTable, params: &GcrfParams) -> Result<BruteForce> {
    let k = check_shapes(graph, p, params)?;
    let lengths = p.lengths();
    let n: usize = lengths.iter().sum();
    if n > MAX_BRUTE_FORCE_TOKENS || k > MAX_BRUTE_FORCE_K {
        return Err(Error::Config(format!(
            "brute force limited to {MAX_BRUTE_FORCE_TOKENS} tokens and k <= {MAX_BRUTE_FORCE_K}, got {n} tokens and k = {k}"
        )));
    }
    let mut digits = vec![0usize; n];
    let mut scores = Vec::with_capacity(k.pow(n as u32));
    let mut states = Vec::with_capacity(scores.capacity());
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let y = unflatten(&digits, &lengths);
        let s = score_unchecked(graph, p, params, &y);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, digits.clone()));
        }
        scores.push(s);
        states.push(digits.clone());
        if !increment(&mut digits, k) {
            break;
        }
    }
    let log_partition = logsumexp(&scores);
    let mut flat = vec![0.0; n * k];
    for (s, d) in scores.iter().zip(&states) {
        let w = (s - log_partition).exp();
        for (t, &l) in d.iter().enumerate() {
            flat[t * k + l] += w;
        }
    }
    let mut marginals = Vec::with_capacity(lengths.len());
    let mut offset = 0;
    for &m in &lengths {
        marginals.push(Tensor::matrix(m, k, flat[offset * k..(offset + m) * k].to_vec())?);
        offset += m;
    }
    let (max_score, digits) = best.expect("at least one assignment");
    Ok(BruteForce {
        argmax: unflatten(&digits, &lengths),
        max_score,
        log_partition,
        marginals,
    })
}

fn unflatten(digits: &[usize], lengths: &[usize]) -> LabelAssignment {
    let mut out = Vec::with_capacity(lengths.len());
    let mut offset = 0;
    for &m in lengths {
        out.push(digits[offset..offset + m].to_vec());
        offset += m;
    }
    out
}

/// Odometer step with the last digit fastest. Returns false on wrap-around.
fn increment(digits: &mut [usize], k: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < k {
            return true;
        }
        *d = 0;
    }
    false
}
