//! Session-aware hierarchical transformer for knowledge tracing.

pub mod config;
pub mod datamodel;
pub mod embedding;
pub mod error;
pub mod ingest;
pub mod kernel;
pub mod kv;
pub mod model;
pub mod segmentation;
pub mod store;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};

/// The guide in `book/`, compiled here so that its snippets run as doc-tests.
#[doc(hidden)]
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/sessions.md")]
    pub mod sessions {}
    #[doc = include_str!("../../../book/src/decay.md")]
    pub mod decay {}
    #[doc = include_str!("../../../book/src/model.md")]
    pub mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
