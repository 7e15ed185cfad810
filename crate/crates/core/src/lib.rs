//! Picture-relevance pipeline for picture-description transcripts.
//!
//! Sentences of each transcript are scored against the stimulus picture and
//! its sub-regions in a joint image-text space. Those scores drive sentence
//! filtering, a search for the most label-separating sub-region, and
//! grouping of sentences into picture "focused areas". The resulting
//! features go to a margin classifier evaluated with few-shot episodes.

pub mod classify;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod filtering;
pub mod focused_areas;
pub mod picture;
pub mod pipeline;
pub mod regions;
pub mod relevance;
pub mod subimage;
pub mod synth;
pub mod viz;

pub use error::{Error, Result};
