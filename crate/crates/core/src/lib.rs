//! Toolkit for proxemics zone coding in group-agent interaction studies.
//!
//! The pipeline runs from coded annotation files through per-track
//! proximity metrics and coder reliability, ingests bonding surveys, and
//! joins both sides into a standardized table for correlation analysis.

pub mod cli;
pub mod config;
pub mod metrics;
pub mod model;
pub mod reliability;
pub mod service;
pub mod stats;
pub mod survey;
pub mod synth;
pub mod triangulate;
