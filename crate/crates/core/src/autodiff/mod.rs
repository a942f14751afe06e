//! Dense `f64` tensors with tape-based reverse-mode gradients, Glorot
//! initialization, Adam, a finite-difference checker and parameter
//! checkpoints.

mod adam;
mod checkpoint;
mod gradcheck;
mod init;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{decode_f64s, encode_f64s, load_params, save_params, Manifest, ManifestEntry};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, ParamCheck, RELATIVE_FLOOR};
pub use init::{glorot_bound, glorot_uniform};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tape::{Backward, Tape, Var};
pub use tensor::{argmax, logsumexp, Tensor};
