//! Multi-granularity retrieval with temperature routing and confidence
//! gating.
//!
//! A corpus is segmented into up to five granularity layers (document,
//! paragraph, sentence, two window sizes), each embedded with its own hashed
//! embedding function and stored in an exact cosine index. A query is
//! searched in every layer; layers are weighted by a temperature softmax over
//! their scores, and their readouts are fused into one context vector.
//! Low-confidence retrieval paths can be gated out before a small softmax
//! generator consumes the context. The generator is trained on
//! negative log-likelihood plus entropy and ensemble-variance penalties.
//!
//! ```
//! use mgrag::corpus::{Corpus, Document};
//! use mgrag::embedder::EmbedderSpec;
//! use mgrag::index::MemoryHierarchy;
//! use mgrag::router::{route, RouterConfig};
//!
//! let corpus = Corpus::new(vec![
//!     Document::new(1, "", "Indexing of periodicals. Citation analysis.\n\nLibrary use."),
//!     Document::new(2, "", "Automatic classification of documents."),
//! ])?;
//! let hier = MemoryHierarchy::build(&corpus, &EmbedderSpec::default(), 3)?;
//! let ctx = route(&hier, &hier.encode_query("citation analysis"), &RouterConfig::default())?;
//! let total: f64 = ctx.weights.as_slice().iter().sum();
//! assert!((total - 1.0).abs() < 1e-9);
//! # Ok::<(), mgrag::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod confidence;
pub mod config;
pub mod corpus;
pub mod embedder;
mod error;
pub mod eval;
pub mod generator;
pub mod hashing;
pub mod index;
pub mod router;
pub mod sweep;
pub mod synth;

pub use error::{Error, Result};

/// Book chapters compiled as doc-tests so their snippets stay in sync.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/granularity.md")]
    pub mod granularity {}
    #[doc = include_str!("../../../book/src/routing.md")]
    pub mod routing {}
    #[doc = include_str!("../../../book/src/confidence.md")]
    pub mod confidence {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
}
