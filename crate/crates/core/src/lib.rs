//! Unsupervised bilingual lexicon induction with two jointly trained linear
//! maps between embedding spaces, tied together by a cycle-consistency loss.
//!
//! The pieces, bottom up:
//!
//! * [`embeddings`]: word vector spaces and their text format.
//! * [`mapping`]: linear maps, orthogonalization, Procrustes.
//! * [`adversarial`]: discriminators and their losses.
//! * [`trainer`]: the joint training loop and Procrustes refinement.
//! * [`retrieval`]: CSLS nearest-neighbor translation.
//! * [`selection`]: the unsupervised model selection criterion.
//! * [`evaluation`]: gold-dictionary precision and round-trip consistency.
//! * [`synthetic`]: rotated point clouds with known ground truth.

pub mod adversarial;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod mapping;
pub mod retrieval;
pub mod selection;
pub mod synthetic;
pub mod textmat;
pub mod trainer;

pub use adversarial::{Discriminator, DiscriminatorConfig};
pub use embeddings::{EmbeddingSpace, Normalization};
pub use error::{Error, Result};
pub use evaluation::{evaluate, inconsistency_rate, precision_at_1, BilingualLexicon, EvalReport};
pub use mapping::{procrustes_solve, LinearMapping};
pub use retrieval::CslsIndex;
pub use selection::{criterion_s, criterion_sa, SelectionConfig, SelectionScore};
pub use synthetic::{generate, SyntheticPair};
pub use trainer::{refine_procrustes, RefineConfig, TrainConfig, TrainRun};
