//! Harvest point and pair quality judgments from a teacher model endpoint
//! that exposes per-token log-probabilities, writing the same signal files
//! the synthetic oracle produces.

pub mod client;
pub mod extract;
pub mod harvest;
pub mod template;

pub use client::{
    build_pair_request, build_point_request, HttpTransport, MockTransport, Transport,
    TransportError, TOKEN_ENV_VAR,
};
pub use extract::{extract_pair_logits, extract_point_logits, PointExtraction};
pub use harvest::{harvest, HarvestConfig, HarvestReport, ItemFailure, RetryPolicy};
pub use template::{render_pair_prompt, render_point_prompt, PromptTemplates};

use qdistill_core::error::CoreError;
use thiserror::Error;

/// Failures specific to talking to a teacher endpoint.
#[derive(Debug, Error)]
pub enum TeacherError {
    /// A prompt template is missing a required slot or candidate word.
    #[error("template error: {0}")]
    Template(String),

    /// A response arrived but the needed logits could not be found in it.
    #[error("unparseable response: {reason}; raw response: {raw}")]
    Unparseable { reason: String, raw: String },

    /// Harvest-level configuration problem.
    #[error("harvest configuration error: {0}")]
    Config(String),

    /// The run as a whole failed (e.g. every item errored).
    #[error("harvest failed: {0}")]
    Harvest(String),

    /// Transport-level failure outside the per-item retry loop.
    #[error("transport error: {0}")]
    Transport(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T> = std::result::Result<T, TeacherError>;
