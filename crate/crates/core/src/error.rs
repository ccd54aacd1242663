//! Error type shared by every engine module.

use std::io;

use thiserror::Error;

/// Errors raised by the concept-exploration engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or configuration (empty corpus, `top_k = 0`, bad config file).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent data (unknown token, artwork with no concepts).
    #[error("data error: {0}")]
    Data(String),

    /// Embedding dimension/kind mismatch or an embedder that could not produce a vector.
    #[error("embedding error: {0}")]
    Embedding(String),

    /// A call argument outside its documented domain.
    #[error("argument error: {0}")]
    Argument(String),

    /// No eligible concept could be produced by a sampler.
    #[error("sampler exhausted: {0}")]
    SamplerExhausted(String),

    /// The LLM inspiration backend never produced a usable suggestion.
    #[error("inspiration failure: {0}")]
    InspirationFailure(String),

    /// The compositor response failed validation after the repair round-trip.
    #[error("composition error: {0}")]
    Composition(String),

    /// Bradley–Terry fitting failed (disconnected comparison graph, no finite MLE).
    #[error("fitting error: {0}")]
    Fitting(String),

    /// Transport or schema failure talking to an external bridge adapter.
    #[error("bridge error: {0}")]
    Bridge(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
