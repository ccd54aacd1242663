//! Open-ended concept exploration.
//!
//! The crate is organised bottom-up:
//!
//! * [`vocab`] builds the concept vocabulary and tags artworks with concepts.
//! * [`datasets`] turns artworks and artists into training sequences.
//! * [`scorer`] defines the autoregressive [`scorer::SequenceScorer`] contract and a
//!   smoothed co-occurrence reference model.
//! * [`sampler`] implements the cultural alien sampler and the baseline inspiration
//!   strategies.
//! * [`embed`] provides text/image embeddings and cosine utilities.
//! * [`agent`] runs the inspiration → composition → image → novelty loop.
//! * [`analysis`] holds validity metrics, repetition analysis, trajectory metrics and
//!   Bradley–Terry fitting.
//! * [`bridge`] is the HTTP client side of the external model protocol.

pub mod agent;
pub mod analysis;
pub mod bridge;
pub mod datasets;
pub mod embed;
mod error;
pub mod fixture;
pub mod prompts;
pub mod sampler;
pub mod scorer;
pub mod util;
pub mod vocab;

pub use error::{Error, Result};
