pub mod autodiff;
pub mod corpus;
pub mod emitter;
pub mod error;
pub mod graph;
pub mod inference;
pub mod pipeline;

pub use error::{Error, Result};
