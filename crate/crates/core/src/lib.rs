//! Token-level hallucination detection for retrieval-augmented generation
//! outputs.
//!
//! The pipeline: load span-annotated records ([`corpus`]), optionally translate
//! them while preserving span markers ([`tagproto`]), project character spans
//! onto tokens ([`align`]), train and run a token classifier ([`detector`]),
//! and score predictions per task slice ([`metrics`]).

pub mod align;
pub mod cli;
pub mod corpus;
pub mod detector;
pub mod metrics;
pub mod synthetic;
pub mod tagproto;
