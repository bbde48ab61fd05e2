//! Closed-form embedding extraction for implicit-feedback collaborative
//! filtering.
//!
//! The crate covers the whole pipeline:
//!
//! - [`data`] / [`sparse`]: ingestion, filtering and strong-generalization
//!   splits of binary feedback matrices.
//! - [`slim`]: dense reference solvers (EASE, SLIM-LLE, the LLE embedding
//!   step, the explicit ImplicitSLIM solution).
//! - [`implicit`]: the ImplicitSLIM fast path, which never forms an I×I
//!   matrix.
//! - [`models`]: ALS matrix factorization and PLRec with the ImplicitSLIM /
//!   SLIM-LLE initialization and regularization setups.
//! - [`eval`]: Recall@k / NDCG@k and the fold-in evaluation loop.
//! - [`sweep`]: grid search over hyperparameters.
//! - [`synth`]: seeded synthetic data with planted item clusters.
//! - [`formats`]: the binary matrix files and model/split directories.

pub mod data;
pub mod dense;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod formats;
pub mod implicit;
pub mod models;
pub mod slim;
pub mod sparse;
pub mod sweep;
pub mod synth;

pub use data::{DatasetSplit, IdMap, SplitParams};
pub use dense::DenseMatrix;
pub use embedding::{EmbeddingMatrix, EntityKind};
pub use error::{Error, ErrorClass, Result};
pub use eval::{EvalReport, Scorer};
pub use implicit::ImplicitSlimParams;
pub use models::{MfModel, PlrecModel, Setup, TrainConfig};
pub use sparse::InteractionMatrix;
