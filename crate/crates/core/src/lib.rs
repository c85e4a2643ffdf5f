//! Security patch identification from diff code and commit messages.
//!
//! The pipeline parses a commit, rebuilds the unpatched and patched code
//! streams, lexes and abstracts them into fixed-length token sequences, turns
//! the commit message into stems, and feeds both through a twin bi-LSTM code
//! branch and a bi-LSTM message branch whose vectors are fused into a
//! two-way softmax.

pub mod abstraction;
pub mod cli;
pub mod embedding;
pub mod eval;
pub mod lexer;
pub mod message;
pub mod model;
pub mod nn;
pub mod patch;
pub mod pipeline;
pub mod vocab;
