//! Fit linear and rotation maps between the embedding spaces of independently
//! trained face-verification models, and measure how well mapped embeddings
//! verify against the target model.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the file formats and the CLI use.

pub mod error;
pub mod experiments;
pub mod mapping;
pub mod scalar;
pub mod store;
pub mod synthetic;
pub mod verification;

pub use error::{Error, Result};
pub use mapping::{apply_map, fit, fit_linear, fit_rotation, identity_map, FitReport, MapKind};
pub use scalar::Real;
pub use store::{align_pairs, MediaEntry, MediaManifest, PairList, Split, SplitAssignment};
pub use verification::{build_templates, roc, score_pairs, RocReport, ScoredPairs};

pub type EmbeddingSet = store::EmbeddingSet<f64>;
pub type EmbeddingSet32 = store::EmbeddingSet<f32>;
pub type MappingMatrix = mapping::MappingMatrix<f64>;
pub type MappingMatrix32 = mapping::MappingMatrix<f32>;
pub type TemplateSet = verification::TemplateSet<f64>;
pub type TemplateSet32 = verification::TemplateSet<f32>;
pub type ModelEmbeddings = experiments::ModelEmbeddings<f64>;
pub type World = synthetic::World<f64>;
