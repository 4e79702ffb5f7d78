//! Command-line interface and HTTP service for the ctrlf word spotter.

pub mod cli;
pub mod eval;
pub mod http;
