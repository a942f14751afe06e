use serde::Serialize;

use super::{LabelSet, Snippet};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatsReport {
    pub labels: Vec<String>,
    pub snippets: usize,
    pub utterances: usize,
    pub tokens: usize,
    pub dropped_pronouns: usize,
    pub utterance_initial: usize,
    /// Share of dropped pronouns sitting before an utterance's first token.
    pub initial_fraction: f64,
    /// `pair_counts[a][b]`: consecutive utterances whose first tokens carry
    /// dropped pronouns `a` then `b`.
    pub pair_counts: Vec<Vec<u64>>,
}

impl StatsReport {
    pub fn pair_total(&self) -> u64 {
        self.pair_counts.iter().flatten().sum()
    }

    pub fn pairs_csv(&self) -> String {
        let mut out = String::from("from\\to");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.pair_counts) {
            out.push_str(l);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn corpus_stats(snippets: &[Snippet], labels: &LabelSet) -> StatsReport {
    let k = labels.len();
    let dp = |l: Option<usize>| l.filter(|&l| !labels.is_none(l));
    let mut report = StatsReport {
        labels: labels.names().to_vec(),
        snippets: snippets.len(),
        utterances: 0,
        tokens: 0,
        dropped_pronouns: 0,
        utterance_initial: 0,
        initial_fraction: 0.0,
        pair_counts: vec![vec![0; k]; k],
    };
    for s in snippets {
        report.utterances += s.len();
        for u in &s.utterances {
            report.tokens += u.len();
            for (j, t) in u.tokens.iter().enumerate() {
                if dp(t.gold_label).is_some() {
                    report.dropped_pronouns += 1;
                    if j == 0 {
                        report.utterance_initial += 1;
                    }
                }
            }
        }
        for pair in s.utterances.windows(2) {
            if let (Some(a), Some(b)) = (dp(pair[0].tokens[0].gold_label), dp(pair[1].tokens[0].gold_label)) {
                report.pair_counts[a][b] += 1;
            }
        }
    }
    if report.dropped_pronouns > 0 {
        report.initial_fraction = report.utterance_initial as f64 / report.dropped_pronouns as f64;
    }
    report
}
