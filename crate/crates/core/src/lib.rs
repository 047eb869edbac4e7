//! Joint video / tag / knowledge-graph embedding at desk scale.
//!
//! One shared vector space holds video embeddings, tag embeddings and
//! relation vectors. Content objectives (tag classification, contrastive
//! video–tag alignment) and a translational graph objective are trained
//! jointly in three stages, then evaluated on five ranking tasks with mean
//! rank and HITS@n under raw and filtered protocols. Everything is seeded
//! and single-threaded deterministic: same seed, same bytes.

pub mod baselines;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod export;
pub mod gradcheck;
pub mod kge;
pub mod linalg;
pub mod objectives;
pub mod training;

pub use data::{Dataset, EntityId, RelationId, TagId, Triplet, VideoId};
pub use error::{Error, Result};
pub use linalg::Mat;
pub use training::{ModelState, TrainConfig};
