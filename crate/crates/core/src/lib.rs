//! Core library for the tickerwire news structuring pipeline.
//!
//! The pipeline turns raw financial news articles into structured records:
//! ingest fetches and normalizes feed items, extract calls a language-model
//! provider for companies/sentiment/summary, validate pins every company
//! mention to a real ticker from the reference database (recovering from
//! hallucinated symbols via multi-metric string matching), enrich expands
//! share classes by CIK, and the store serves the final records over HTTP.

pub mod api;
pub mod config;
pub mod enrich;
pub mod evaluation;
pub mod extract;
pub mod ingest;
pub mod matcher;
pub mod pipeline;
pub mod refdata;
pub mod store;
pub mod validate;
