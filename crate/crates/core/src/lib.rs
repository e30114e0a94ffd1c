//! Source-code vulnerability classification over line graphs.
//!
//! The pipeline embeds each source line, propagates line features once
//! along the forward line graph, pools them into a snippet vector and
//! classifies it into one of five CWE classes. A perturbation-based local
//! surrogate then attributes the prediction back to individual lines.

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod explain;
pub mod gcn;
pub mod linegraph;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pipeline;

pub use corpus::{Corpus, CweClass, Sample, CLASS_COUNT};
pub use error::{Error, Result};
pub use linegraph::Snippet;
pub use pipeline::{fit_pipeline, PipelineConfig, SnippetScorer, TrainedPipeline};
