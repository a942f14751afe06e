use crate::autodiff::Tensor;
use crate::corpus::{LabelSet, Snippet};
use crate::error::{Error, Result};

use super::Model;

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::Data(format!("csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(csv_error)?;
    String::from_utf8(bytes).map_err(csv_error)
}

/// `k × k` matrix with label names on both axes. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn transitions_csv(labels: &LabelSet, matrix: &Tensor, include_none: bool) -> Result<String> {
    let k = labels.len();
    if matrix.shape() != [k, k] {
        return Err(Error::shape("transitions_csv", &[matrix.shape(), &[k, k]]));
    }
    let keep: Vec<usize> = (0..k).filter(|&i| include_none || !labels.is_none(i)).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = std::iter::once("from\\to").chain(keep.iter().map(|&i| labels.name(i)));
    w.write_record(header).map_err(csv_error)?;
    for &r in &keep {
        let row = std::iter::once(labels.name(r).to_string()).chain(keep.iter().map(|&c| matrix.at(r, c).to_string()));
        w.write_record(row).map_err(csv_error)?;
    }
    finish(w)
}

/// Inverse of [`transitions_csv`]: label names and the matrix.
pub fn parse_transitions_csv(text: &str) -> Result<(Vec<String>, Tensor)> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let names: Vec<String> = r.headers().map_err(csv_error)?.iter().skip(1).map(str::to_string).collect();
    let mut data = Vec::with_capacity(names.len() * names.len());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        if rec.get(0) != names.get(i).map(String::as_str) || rec.len() != names.len() + 1 {
            return Err(Error::Data(format!("transition row {i} does not match the header")));
        }
        for v in rec.iter().skip(1) {
            data.push(v.parse::<f64>().map_err(csv_error)?);
        }
    }
    let k = names.len();
    Ok((names, Tensor::matrix(k, k, data)?))
}

/// One interaction-attention head of one decoder layer.
#[derive(Clone, Debug)]
pub struct AttentionExport {
    pub layer: usize,
    pub head: usize,
    /// Rows follow target tokens, columns follow context tokens.
    pub weights: Tensor,
    pub csv: String,
}

pub fn export_attention(model: &Model, snippet: &Snippet, utterance: usize) -> Result<Vec<AttentionExport>> {
    let mut tape = crate::autodiff::Tape::new();
    let out = model
        .emitter
        .emit_utterance(&mut tape, &model.store, snippet, utterance, &model.vocab, None)?;
    let targets: Vec<&str> = snippet.utterances[utterance].tokens.iter().map(|t| t.surface.as_str()).collect();
    let mut exports = Vec::new();
    for (layer, heads) in out.interaction.iter().enumerate() {
        for (head, &w) in heads.iter().enumerate() {
            let weights = tape.value(w).clone();
            let mut wr = csv::Writer::from_writer(Vec::new());
            let header = std::iter::once("target").chain(out.context.tokens.iter().map(|t| t.surface.as_str()));
            wr.write_record(header).map_err(csv_error)?;
            for (r, surface) in targets.iter().enumerate() {
                let row = std::iter::once(surface.to_string()).chain(weights.row(r).iter().map(f64::to_string));
                wr.write_record(row).map_err(csv_error)?;
            }
            exports.push(AttentionExport {
                layer,
                head,
                weights,
                csv: finish(wr)?,
            });
        }
    }
    Ok(exports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_csv_round_trips_exactly() {
        let labels = LabelSet::parse("None\n我\n你\n").unwrap();
        let m = Tensor::matrix(3, 3, vec![0.1, -2.5e-17, 1.0 / 3.0, 7.0, f64::MIN_POSITIVE, -0.0, 1e300, 2.0, 0.7]).unwrap();
        let text = transitions_csv(&labels, &m, true).unwrap();
        let (names, back) = parse_transitions_csv(&text).unwrap();
        assert_eq!(names, labels.names());
        assert_eq!(back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());

        let text = transitions_csv(&labels, &m, false).unwrap();
        let (names, back) = parse_transitions_csv(&text).unwrap();
        assert_eq!(names, vec!["我", "你"]);
        assert_eq!(back.data(), &[f64::MIN_POSITIVE, -0.0, 2.0, 0.7]);
    }

    #[test]
    fn zero_matrix_exports_zeros() {
        let labels = LabelSet::parse("None\nA\n").unwrap();
        let text = transitions_csv(&labels, &Tensor::zeros(&[2, 2]), true).unwrap();
        assert_eq!(text, "from\\to,None,A\nNone,0,0\nA,0,0\n");
    }
}
