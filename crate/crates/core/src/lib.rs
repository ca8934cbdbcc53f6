//! Learning quantifiers and cardinals from composed visual scenes.
//!
//! The crate builds synthetic (or ingested) concept inventories, composes
//! 9-cell scenes with a controlled share of target objects, and provides two
//! analyses over them: a vision-only similarity study (cosine vs. dot
//! product, with an RBF SVM comparison) and cross-modal mapping models that
//! retrieve the right scenes for each quantified expression.

pub mod concept;
pub mod config;
pub mod formats;
pub mod mapping;
pub mod par;
pub mod pipeline;
pub mod retrieval;
pub mod scenario;
pub mod svm;
pub mod vecmath;
pub mod vision;

pub use concept::{synthesize_inventory, ConceptInventory, SynthesisConfig, WordMode};
pub use config::RunConfig;
pub use mapping::{train, Activation, MappingModel, TrainConfig, Variant};
pub use par::Execution;
pub use pipeline::PipelineError as Error;
pub use retrieval::{evaluate, RetrievalReport};
pub use scenario::{build_dataset, CompositionMode, Dataset, Expression, QuantKind, Split};
pub use vision::{Measure, SvmComparison};
