//! Session buy prediction with a two-step statistical filter.
//!
//! A session's clicked items are first screened by a count-based
//! likelihood-ratio test over binned session features, then by item
//! popularity weighted by in-session clicks. See the README for the
//! command-line tool built on top of this crate.

pub mod cli;
pub mod config;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod likelihood;
pub mod pipeline;
pub mod popularity;
pub mod stats;
pub mod synth;
