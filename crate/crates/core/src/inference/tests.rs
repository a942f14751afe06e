use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{validate_graph, TokenNode};

fn chains(lengths: &[usize]) -> Vec<Vec<TokenNode>> {
    lengths
        .iter()
        .enumerate()
        .map(|(i, &m)| (0..m).map(|j| TokenNode { utterance: i, position: j }).collect())
        .collect()
}

fn full_graph(lengths: &[usize]) -> CombGraph {
    CombGraph {
        chains: chains(lengths),
        spine: (0..lengths.len()).map(SpineEntry::Latent).collect(),
    }
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

/// Random graph with latent, observed and skipped spine entries.
fn random_instance(rng: &mut ChaCha8Rng) -> (CombGraph, EmissionTable, GcrfParams) {
    let k = rng.gen_range(2..=4);
    let n = rng.gen_range(1..=4);
    let budget = if k == 4 { 7 } else { 10 };
    let mut lengths = Vec::new();
    for i in 0..n {
        let left = budget - lengths.iter().sum::<usize>() - (n - i - 1);
        lengths.push(rng.gen_range(1..=left.clamp(1, 3)));
    }
    let mut spine = Vec::new();
    for i in 0..n {
        match rng.gen_range(0..4) {
            0 => spine.push(SpineEntry::Observed {
                utterance: i,
                label: rng.gen_range(0..k),
            }),
            1 => {}
            _ => spine.push(SpineEntry::Latent(i)),
        }
    }
    let graph = CombGraph {
        chains: chains(&lengths),
        spine,
    };
    let p = EmissionTable::new(k, lengths.iter().map(|&m| random_tensor(&[m, k], rng)).collect()).unwrap();
    let params = GcrfParams::new(random_tensor(&[k, k], rng), random_tensor(&[k, k], rng)).unwrap();
    (graph, p, params)
}

#[test]
fn chain_message_small_example() {
    let p = Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
    let a1 = Tensor::matrix(2, 2, vec![0.0, 2.0, 0.0, 0.0]).unwrap();
    let msg = horizontal_message(&p, &a1, Mode::Max);
    // Oracle: enumerate the tail label for each head label.
    for head in 0..2 {
        let best = (0..2)
            .map(|tail| p.at(0, head) + a1.at(head, tail) + p.at(1, tail))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(msg.scores[head], best);
    }
    assert_eq!(msg.scores, vec![2.0, 1.0]);
    assert_eq!(msg.backpointers, vec![vec![1, 0]]);
    assert_eq!(msg.trace(0), vec![0, 1]);
}

#[test]
fn single_token_reduces_to_argmax_and_logsumexp() {
    let graph = full_graph(&[1]);
    let row = vec![0.3, 1.7, -0.2];
    let p = EmissionTable::new(3, vec![Tensor::matrix(1, 3, row.clone()).unwrap()]).unwrap();
    let params = GcrfParams::zeros(3);
    let d = decode(&graph, &p, &params).unwrap();
    assert_eq!(d.labels, vec![vec![1]]);
    assert_eq!(d.score, 1.7);
    let z = log_partition(&graph, &p, &params).unwrap();
    let expected = row.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
    assert!((z - expected).abs() < 1e-12);
}

#[test]
fn joint_score_straight_line() {
    // Spine: latent 0, observed label 1 on utterance 1, latent 2.
    let graph = CombGraph {
        chains: chains(&[2, 2, 1]),
        spine: vec![
            SpineEntry::Latent(0),
            SpineEntry::Observed { utterance: 1, label: 1 },
            SpineEntry::Latent(2),
        ],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = EmissionTable::new(2, vec![random_tensor(&[2, 2], &mut rng), random_tensor(&[2, 2], &mut rng), random_tensor(&[1, 2], &mut rng)]).unwrap();
    let params = GcrfParams::new(random_tensor(&[2, 2], &mut rng), random_tensor(&[2, 2], &mut rng)).unwrap();
    let y = vec![vec![1, 0], vec![0, 0], vec![1]];
    let e = |i: usize, j: usize, l: usize| p.utterance(i).at(j, l);
    let expected = e(0, 0, 1) + e(0, 1, 0) + params.a1.at(1, 0)
        + e(1, 0, 0) + e(1, 1, 0) + params.a1.at(0, 0)
        + e(2, 0, 1)
        + params.a2.at(1, 1)
        + params.a2.at(1, 1);
    let got = joint_score(&graph, &p, &params, &y).unwrap();
    assert!((got - expected).abs() < 1e-12);
}

#[test]
fn decode_and_partition_match_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let (graph, p, params) = random_instance(&mut rng);
        assert!(validate_graph(&graph, p.label_count()).is_empty());
        let oracle = brute_force(&graph, &p, &params).unwrap();
        let d = decode(&graph, &p, &params).unwrap();
        assert!((d.score - oracle.max_score).abs() < 1e-9, "case {case}: {} vs {}", d.score, oracle.max_score);
        assert_eq!(d.labels, oracle.argmax, "case {case}");
        let z = log_partition(&graph, &p, &params).unwrap();
        assert!((z - oracle.log_partition).abs() < 1e-9, "case {case}");
        let mut tape = crate::autodiff::Tape::new();
        let ev: Vec<_> = p.utterances().iter().map(|e| tape.leaf(e.clone())).collect();
        let a1 = tape.leaf(params.a1.clone());
        let a2 = tape.leaf(params.a2.clone());
        let zt = log_partition_on_tape(&mut tape, &graph, &ev, a1, a2).unwrap();
        assert!((tape.value(zt).item() - z).abs() < 1e-9, "case {case}");
        let st = joint_score_on_tape(&mut tape, &graph, &ev, a1, a2, &d.labels).unwrap();
        assert!((tape.value(st).item() - d.score).abs() < 1e-12, "case {case}");
    }
}

#[test]
fn emission_gradient_is_marginal_minus_gold() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..30 {
        let (graph, p, params) = random_instance(&mut rng);
        let k = p.label_count();
        let gold: LabelAssignment = p.lengths().iter().map(|&m| (0..m).map(|_| rng.gen_range(0..k)).collect()).collect();
        let out = nll(&graph, &p, &params, &gold).unwrap();
        let oracle = brute_force(&graph, &p, &params).unwrap();
        let score = joint_score(&graph, &p, &params, &gold).unwrap();
        assert!((out.loss - (oracle.log_partition - score)).abs() < 1e-9);
        assert!(out.loss >= -1e-12);
        for (i, g) in out.grad_emissions.iter().enumerate() {
            for (j, &gold_label) in gold[i].iter().enumerate() {
                for l in 0..k {
                    let onehot = if gold_label == l { 1.0 } else { 0.0 };
                    let expected = oracle.marginals[i].at(j, l) - onehot;
                    assert!((g.at(j, l) - expected).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn transition_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-5;
    for _ in 0..20 {
        let (graph, p, params) = random_instance(&mut rng);
        let k = p.label_count();
        let gold: LabelAssignment = p.lengths().iter().map(|&m| (0..m).map(|_| rng.gen_range(0..k)).collect()).collect();
        let out = nll(&graph, &p, &params, &gold).unwrap();
        let loss = |params: &GcrfParams| {
            log_partition(&graph, &p, params).unwrap() - joint_score(&graph, &p, params, &gold).unwrap()
        };
        for which in 0..2 {
            for idx in 0..k * k {
                let mut plus = params.clone();
                let mut minus = params.clone();
                let (tp, tm) = if which == 0 { (&mut plus.a1, &mut minus.a1) } else { (&mut plus.a2, &mut minus.a2) };
                tp.data_mut()[idx] += h;
                tm.data_mut()[idx] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let analytic = if which == 0 { out.grad_a1.data()[idx] } else { out.grad_a2.data()[idx] };
                assert!(crate::autodiff::relative_error(analytic, numeric) < 1e-6, "{analytic} vs {numeric}");
            }
        }
    }
}

#[test]
fn shifting_emissions_keeps_decode_and_shifts_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (graph, p, params) = random_instance(&mut rng);
        let c = rng.gen_range(-10.0..10.0);
        let shifted = p.shifted(c);
        let n = graph.token_count() as f64;
        assert_eq!(decode(&graph, &p, &params).unwrap().labels, decode(&graph, &shifted, &params).unwrap().labels);
        let z = log_partition(&graph, &p, &params).unwrap();
        let zs = log_partition(&graph, &shifted, &params).unwrap();
        assert!((zs - z - c * n).abs() < 1e-9);
    }
}

#[test]
fn single_label_has_zero_loss() {
    let graph = full_graph(&[3, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = EmissionTable::new(1, vec![random_tensor(&[3, 1], &mut rng), random_tensor(&[2, 1], &mut rng)]).unwrap();
    let params = GcrfParams::new(random_tensor(&[1, 1], &mut rng), random_tensor(&[1, 1], &mut rng)).unwrap();
    let out = nll(&graph, &p, &params, &vec![vec![0; 3], vec![0; 2]]).unwrap();
    assert!(out.loss.abs() <= 1e-12);
}

#[test]
fn vertical_transitions_drive_spine_labels() {
    // Flat emissions; a strong 0 -> 1 vertical preference after an observed 0.
    let graph = CombGraph {
        chains: chains(&[1, 1]),
        spine: vec![SpineEntry::Observed { utterance: 0, label: 0 }, SpineEntry::Latent(1)],
    };
    let p = EmissionTable::new(2, vec![Tensor::zeros(&[1, 2]), Tensor::zeros(&[1, 2])]).unwrap();
    let mut params = GcrfParams::zeros(2);
    params.a2.data_mut()[1] = 3.0;
    let d = decode(&graph, &p, &params).unwrap();
    assert_eq!(d.labels[1], vec![1]);
    assert_eq!(d.score, 3.0);
}

#[test]
fn rejects_mismatched_shapes_and_oversized_brute_force() {
    let graph = full_graph(&[2]);
    let p = EmissionTable::new(3, vec![Tensor::zeros(&[3, 3])]).unwrap();
    assert!(matches!(decode(&graph, &p, &GcrfParams::zeros(3)), Err(Error::Shape { .. })));
    let p = EmissionTable::new(2, vec![Tensor::zeros(&[2, 2])]).unwrap();
    assert!(decode(&graph, &p, &GcrfParams::zeros(3)).is_err());
    assert!(joint_score(&graph, &p, &GcrfParams::zeros(2), &vec![vec![0, 2]]).is_err());
    assert!(EmissionTable::new(2, vec![Tensor::zeros(&[2, 3])]).is_err());
    let big = full_graph(&[13]);
    let p = EmissionTable::new(2, vec![Tensor::zeros(&[13, 2])]).unwrap();
    assert!(matches!(brute_force(&big, &p, &GcrfParams::zeros(2)), Err(Error::Config(_))));
}

mod properties {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn decode_is_a_valid_maximizer(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (graph, p, params) = random_instance(&mut rng);
            let d = decode(&graph, &p, &params).unwrap();
            prop_assert_eq!(d.labels.iter().map(Vec::len).collect::<Vec<_>>(), p.lengths());
            prop_assert!(d.labels.iter().flatten().all(|&l| l < p.label_count()));
            let z = log_partition(&graph, &p, &params).unwrap();
            prop_assert!(d.score <= z + 1e-9);
        }
    }
}
