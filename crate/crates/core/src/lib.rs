//! Training and evaluation engine for multilingual news-article similarity
//! regression.
//!
//! The pipeline runs end to end on plain files: ingest article JSON plus a
//! CSV pair index, optionally augment the dataset through a pluggable
//! translator, encode pairs with a hashing tokenizer and head-tail
//! truncation, train a small cross-encoder under a weighted multi-label /
//! consistency loss with k-fold cross-validation, and report Pearson
//! correlations per language pair.

pub mod augment;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod model;
pub mod tokenize;
pub mod train;
