//! Packed levitated markers for span classification (NER) and span-pair
//! classification (relation extraction).
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: documents, BIO / JSON-lines readers, context windows
//! - [`spanspace`]: span enumeration, packing, directed relation labels
//! - [`layout`]: slot sequences with levitated and solid markers
//! - [`encoder`]: a small transformer honouring arbitrary visibility masks
//! - [`heads`]: span / pair features, classifiers, bidirectional scoring
//! - [`pipeline`]: training and prediction for NER and RE
//! - [`metrics`]: span-level and relation F1
//! - [`toolbench`]: group-size throughput sweeps
//!
//! Window-level work runs on rayon when the default `parallel` feature is
//! enabled; without it every code path is sequential.

pub mod corpus;
pub mod encoder;
pub mod heads;
pub mod layout;
pub mod metrics;
pub mod optim;
pub mod parallel;
pub mod pipeline;
pub mod spanspace;
pub mod synthetic;
pub mod tensor;
pub mod toolbench;
pub mod vocab;

pub use corpus::{Corpus, Document, EntityMention, LabelSchema, RelationMention};
pub use spanspace::Span;
