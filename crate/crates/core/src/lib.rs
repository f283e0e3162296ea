//! Graph learning laboratory for catastrophe-bond spread prediction.
//!
//! The pipeline runs end to end on contract records:
//!
//! 1. [`ingest`] parses or synthesizes contracts and builds the
//!    heterogeneous multi-relational [`graph`].
//! 2. [`topology`] computes network statistics: degree distribution,
//!    adjusted power-law fit with bootstrap, centralities, assortativity,
//!    robustness threshold, path statistics and fitness dynamics.
//! 3. [`rgcn`] trains a relational graph convolutional network with basis
//!    decomposition to regress spreads.
//! 4. [`experiments`] runs out-of-sample and out-of-time protocols with
//!    topological-feature ablation, a ridge baseline and random search.
//! 5. [`explain`] learns edge and feature masks to explain predictions.
// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod experiments;
pub mod explain;
pub mod graph;
pub mod ingest;
pub mod rgcn;
pub mod topology;
