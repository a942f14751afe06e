//! The same dynamic programs recorded on a [`Tape`], so gradients of the
//! negative log-likelihood come from reverse-mode differentiation.

use super::{EmissionTable, GcrfParams, LabelAssignment};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{CombGraph, SpineEntry};

enum SpineState {
    /// Log-scores over all `k` labels, shape `[k]`.
    Free(Var),
    /// Only one label is allowed; scalar log-score.
    Clamped(usize, Var),
}

fn label_count(tape: &Tape, graph: &CombGraph, emissions: &[Var], a1: Var, a2: Var) -> Result<usize> {
    let k = tape.value(a1).rows();
    if tape.value(a1).shape() != [k, k] || tape.value(a2).shape() != [k, k] {
        return Err(Error::shape("gcrf_tape", &[tape.value(a1).shape(), tape.value(a2).shape()]));
    }
    if emissions.len() != graph.chains.len() {
        return Err(Error::shape("gcrf_tape", &[&[emissions.len()], &[graph.chains.len()]]));
    }
    for (e, chain) in emissions.iter().zip(&graph.chains) {
        if tape.value(*e).shape() != [chain.len(), k] {
            return Err(Error::shape("gcrf_tape", &[tape.value(*e).shape(), &[chain.len(), k]]));
        }
    }
    for entry in &graph.spine {
        if let SpineEntry::Observed { label, .. } = entry {
            if *label >= k {
                return Err(Error::Data(format!("observed label {label} out of range for k={k}")));
            }
        }
    }
    Ok(k)
}

fn row(tape: &mut Tape, m: Var, r: usize, k: usize) -> Result<Var> {
    let s = tape.slice(m, 0, r, r + 1)?;
    tape.reshape(s, &[k])
}

fn scalar_at(tape: &mut Tape, m: Var, flat: usize) -> Result<Var> {
    let g = tape.gather(m, &[flat])?;
    Ok(tape.sum(g))
}

/// Sum-mode chain message, shape `[k]`, indexed by the head label.
fn chain_message(tape: &mut Tape, emissions: Var, a1: Var, k: usize) -> Result<Var> {
    let m = tape.value(emissions).rows();
    let mut beta = row(tape, emissions, m - 1, k)?;
    for j in (0..m - 1).rev() {
        let t = tape.add_row(a1, beta)?;
        let l = tape.logsumexp(t, 1)?;
        let e = row(tape, emissions, j, k)?;
        beta = tape.add(e, l)?;
    }
    Ok(beta)
}

pub fn log_partition_on_tape(tape: &mut Tape, graph: &CombGraph, emissions: &[Var], a1: Var, a2: Var) -> Result<Var> {
    let k = label_count(tape, graph, emissions, a1, a2)?;
    let mut messages = Vec::with_capacity(emissions.len());
    for &e in emissions {
        messages.push(chain_message(tape, e, a1, k)?);
    }
    let mut total = tape.leaf(Tensor::scalar(0.0));
    for i in graph.detached_utterances() {
        let z = tape.logsumexp(messages[i], 0)?;
        total = tape.add(total, z)?;
    }
    let mut state: Option<SpineState> = None;
    for &entry in &graph.spine {
        state = Some(match (state, entry) {
            (None, SpineEntry::Latent(i)) => SpineState::Free(messages[i]),
            (None, SpineEntry::Observed { label, .. }) => SpineState::Clamped(label, tape.leaf(Tensor::scalar(0.0))),
            (Some(SpineState::Free(alpha)), SpineEntry::Latent(i)) => {
                let t = tape.add_col(a2, alpha)?;
                let l = tape.logsumexp(t, 0)?;
                SpineState::Free(tape.add(l, messages[i])?)
            }
            (Some(SpineState::Free(alpha)), SpineEntry::Observed { label, .. }) => {
                let idx: Vec<usize> = (0..k).map(|lp| lp * k + label).collect();
                let col = tape.gather(a2, &idx)?;
                let s = tape.add(alpha, col)?;
                SpineState::Clamped(label, tape.logsumexp(s, 0)?)
            }
            (Some(SpineState::Clamped(y, v)), SpineEntry::Latent(i)) => {
                let r = row(tape, a2, y, k)?;
                let rep = tape.gather(v, &vec![0; k])?;
                let s = tape.add(r, rep)?;
                SpineState::Free(tape.add(s, messages[i])?)
            }
            (Some(SpineState::Clamped(y, v)), SpineEntry::Observed { label, .. }) => {
                let t = scalar_at(tape, a2, y * k + label)?;
                SpineState::Clamped(label, tape.add(v, t)?)
            }
        });
    }
    match state {
        None => Ok(total),
        Some(SpineState::Free(alpha)) => {
            let z = tape.logsumexp(alpha, 0)?;
            tape.add(total, z)
        }
        Some(SpineState::Clamped(_, v)) => tape.add(total, v),
    }
}

pub fn joint_score_on_tape(
    tape: &mut Tape,
    graph: &CombGraph,
    emissions: &[Var],
    a1: Var,
    a2: Var,
    y: &LabelAssignment,
) -> Result<Var> {
    let k = label_count(tape, graph, emissions, a1, a2)?;
    let lengths: Vec<usize> = y.iter().map(Vec::len).collect();
    if lengths != graph.chain_lengths() || y.iter().flatten().any(|&l| l >= k) {
        return Err(Error::shape("joint_score_on_tape", &[&lengths, &graph.chain_lengths()]));
    }
    let mut total = tape.leaf(Tensor::scalar(0.0));
    let mut horizontal = Vec::new();
    for (i, labels) in y.iter().enumerate() {
        let idx: Vec<usize> = labels.iter().enumerate().map(|(j, &l)| j * k + l).collect();
        let g = tape.gather(emissions[i], &idx)?;
        let s = tape.sum(g);
        total = tape.add(total, s)?;
        horizontal.extend(labels.windows(2).map(|w| w[0] * k + w[1]));
    }
    if !horizontal.is_empty() {
        let g = tape.gather(a1, &horizontal)?;
        let s = tape.sum(g);
        total = tape.add(total, s)?;
    }
    let vertical: Vec<usize> = graph
        .spine
        .windows(2)
        .map(|w| super::spine_label(w[0], y) * k + super::spine_label(w[1], y))
        .collect();
    if !vertical.is_empty() {
        let g = tape.gather(a2, &vertical)?;
        let s = tape.sum(g);
        total = tape.add(total, s)?;
    }
    Ok(total)
}

/// `log Z - score(gold)`.
pub fn nll_on_tape(
    tape: &mut Tape,
    graph: &CombGraph,
    emissions: &[Var],
    a1: Var,
    a2: Var,
    gold: &LabelAssignment,
) -> Result<Var> {
    let z = log_partition_on_tape(tape, graph, emissions, a1, a2)?;
    let s = joint_score_on_tape(tape, graph, emissions, a1, a2, gold)?;
    tape.sub(z, s)
}

/// Loss and gradients for fixed inputs.
#[derive(Clone, Debug)]
pub struct NllOutput {
    pub loss: f64,
    pub grad_emissions: Vec<Tensor>,
    pub grad_a1: Tensor,
    pub grad_a2: Tensor,
}

pub fn nll(graph: &CombGraph, p: &EmissionTable, params: &GcrfParams, gold: &LabelAssignment) -> Result<NllOutput> {
    let mut tape = Tape::new();
    let emissions: Vec<Var> = p.utterances().iter().map(|e| tape.leaf(e.clone())).collect();
    let a1 = tape.leaf(params.a1.clone());
    let a2 = tape.leaf(params.a2.clone());
    let loss = nll_on_tape(&mut tape, graph, &emissions, a1, a2, gold)?;
    let back = tape.backward(loss)?;
    let grad = |v: Var| back.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()));
    Ok(NllOutput {
        loss: tape.value(loss).item(),
        grad_emissions: emissions.iter().map(|&e| grad(e)).collect(),
        grad_a1: grad(a1),
        grad_a2: grad(a2),
    })
}
