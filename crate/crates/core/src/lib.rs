//! Corpus processing for anchor-aware link prediction pre-training.
//!
//! The crate turns a hyperlinked corpus into staged training shards:
//! ingest and clean documents, build the link graph, classify each
//! query segment's neighbors into relation classes, sample positives and
//! negatives per curriculum stage, and plan anchor-aware token masking.

pub mod classify;
pub mod corpus;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod mask;
pub mod mask_shards;
pub mod pipeline;
pub mod sampler;
pub mod seed;
pub mod store;
pub mod synth;

pub use classify::{
    classify_link, partition_neighbors, LinkRelation, NeighborhoodPartition, OutOfSegmentPolicy,
};
pub use corpus::{Anchor, AnchorTarget, Corpus, DocId, Document, Segment, Span};
pub use error::{Error, Result};
pub use graph::{build_graph, LinkGraph, LinkOccurrence};
pub use mask::{apply_mask, plan_mask, MaskAction, MaskConfig, MaskPlan, Vocab};
pub use sampler::{generate_shards, sample_example, SamplerConfig, Stage};
pub use synth::{generate, SynthSpec};
