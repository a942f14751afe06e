//! Training, evaluation, prediction, exports and synthetic data.

mod config;
mod eval;
mod export;
mod model;
mod predict;
mod synth;
mod train;

pub use config::{Ablation, RunConfig};
pub use eval::{evaluate, f_score, predict_all, score_predictions, EvalReport, LabelCounts};
pub use export::{export_attention, parse_transitions_csv, transitions_csv, AttentionExport};
pub use model::Model;
pub use predict::{predict_records, write_jsonl};
pub use synth::{synthesize, Pattern, SynthOptions, CUE_TOKEN};
pub use train::{fit, fit_model, init_model, train, EpochLog, FitOutcome};

#[cfg(test)]
mod tests;
