//! Knowledge-conditioned report generation at desk scale.
//!
//! A multi-label node classifier predicts which knowledge-graph nodes an image
//! shows; the predicted node names are encoded as text and fused into the
//! visual features by cross-attention; a text decoder then writes the report.
//! Everything trains from scratch on a synthetic long-tailed corpus using the
//! small autodiff engine in [`tensor`].

pub mod classifier;
pub mod corpus;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod experiment;
pub mod model;
pub mod nlg;
pub mod objectives;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ParamId, ParamStore, Tape, Tensor, Var};
