//! Statistical analysis of message corpora: recover the handshake
//! template, session-token bindings, and command templates.

mod align;
mod analyze;
mod cluster;
mod commands;
mod length;
mod similarity;
mod tokens;

pub use align::align_handshake;
pub use analyze::{analyze_capture_files, infer_model, AnalyzeError, AnalyzeOptions, AnalyzeOutput};
pub use cluster::{cluster_bytes, cluster_messages};
pub use commands::{identify_commands, IdentifiedCommands};
pub use length::infer_length_field;
pub use similarity::{canonical_order, similarity, SimilarityScore};
pub use tokens::{detect_tokens, TokenDetection};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("similarity threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("need at least 2 sessions to align, got {got}")]
    NotEnoughSessions { got: usize },
    #[error("session {session} has {got} messages, handshake needs {needed}")]
    SessionTooShort {
        session: String,
        needed: usize,
        got: usize,
    },
    #[error("handshake is not fixed-shape at step {step}: {detail}")]
    StructureMismatch { step: usize, detail: String },
}
