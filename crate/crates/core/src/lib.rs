//! Triage of web search snippets: collection, annotation, a weighted
//! logistic-regression classifier, evaluation and operator feedback.
//!
//! The modules follow the flow of data through the system:
//!
//! - [`collector`] expands an inquiry into queries and gathers snippets.
//! - [`annotation`] assigns snippets to annotators and adjudicates verdicts.
//! - [`corpus`] stores labeled snippets, splits them and reports their mix.
//! - [`features`] turns snippet text into TF-IDF vectors.
//! - [`trainer`] fits the classifier with Adam and early stopping.
//! - [`metrics`] scores predictions.
//! - [`triage`] maps probabilities to verdicts and records operator feedback.
//! - [`pipeline`] ties the pieces together for one inquiry.
//!
//! ```
//! use triage_core::triage::{verdict, Thresholds, Verdict};
//!
//! let t = Thresholds::default();
//! assert_eq!(verdict(0.75, &t).unwrap(), Verdict::Red);
//! assert_eq!(verdict(0.5, &t).unwrap(), Verdict::Yellow);
//! assert_eq!(verdict(0.1, &t).unwrap(), Verdict::Green);
//! ```

pub mod annotation;
pub mod collector;
pub mod corpus;
pub mod features;
pub mod fixtures;
pub mod metrics;
pub mod pipeline;
pub mod trainer;
pub mod triage;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/collection.md")]
    mod collection {}
    #[doc = include_str!("../../../book/src/annotation.md")]
    mod annotation {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/triage.md")]
    mod triage {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
