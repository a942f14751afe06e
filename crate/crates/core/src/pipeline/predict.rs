use std::io::Write;

use crate::corpus::{conversation_snippets, Conversation, NONE_LABEL};
use crate::error::{Error, Result};

use super::Model;

/// Copies each record with a `predicted` label list on every turn. Tokens
/// the model never labels keep `None`.
pub fn predict_records(model: &Model, records: &[(usize, Conversation)]) -> Result<Vec<Conversation>> {
    let opts = model.parse_options();
    let mut out = Vec::with_capacity(records.len());
    for (line, conv) in records {
        let mut snippets = conversation_snippets(conv, *line, &model.labels, &opts)?;
        model.vocab.assign(&mut snippets);
        let mut labeled = conv.clone();
        for turn in &mut labeled.turns {
            turn.predicted = Some(vec![NONE_LABEL.to_string(); turn.tokens.len()]);
        }
        for snippet in &snippets {
            let labels = model.predict(snippet)?;
            for (utt, row) in snippet.utterances.iter().zip(&labels) {
                let predicted = labeled.turns[utt.source_turn].predicted.as_mut().expect("initialized");
                for (j, &l) in row.iter().enumerate() {
                    predicted[utt.token_offset + j] = model.labels.name(l).to_string();
                }
            }
        }
        out.push(labeled);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(records: &[Conversation], mut w: W) -> Result<()> {
    for r in records {
        writeln!(w, "{}", r.to_json_line()?).map_err(|e| Error::Data(format!("write failed: {e}")))?;
    }
    Ok(())
}
