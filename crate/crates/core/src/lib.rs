//! Few-shot temporal activity detection over synthetic clip-level features.
//!
//! The pipeline: a seeded corpus generator ([`synthcorpus`]), base/novel class
//! splits ([`splits`]), N-way k-shot episodes ([`episodes`]), a two-stage
//! class-agnostic proposal network ([`proposals`]), a cosine-similarity
//! classifier with an adaptation loss ([`fewshot`]) and the training and
//! evaluation driver ([`engine`]). Gradients are hand-derived in [`diffmath`].

mod container;
pub mod diffmath;
pub mod engine;
pub mod episodes;
pub mod error;
pub mod fewshot;
pub mod proposals;
pub mod splits;
pub mod synthcorpus;

pub use error::{Error, Result};
