//! Conversational query reformulation aligned to retriever preferences.

pub mod annotation;
pub mod corpus;
pub mod decoding;
pub mod dense;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod model;
pub mod pipeline;
pub mod retrieval;
pub mod sparse;
pub mod text;
pub mod toy;
pub mod training;

pub use error::{Error, Result};

// The guide's snippets run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/annotation.md")]
    mod annotation {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
