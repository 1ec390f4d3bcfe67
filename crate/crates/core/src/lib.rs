//! Multivariate time-series classification with pruned random-convolution
//! ensembles.
//!
//! The pipeline is:
//!
//! ```text
//! Dataset ──znormalize──▶ KernelBank (MiniRocket-style, PPV pooling)
//!         ──▶ ridge classifier ──SFD pruning──▶ DetachModel
//!         ×N ──performance-weighted vote──▶ EnsembleModel
//!                                           ├─ label probabilities
//!                                           └─ channel relevance
//! ```
//!
//! Each module owns one stage: [`data`] (tensors, I/O, splits),
//! [`transform`] (kernel bank and PPV features), [`ridge`] (closed-form
//! ridge classifier with leave-one-out alpha selection), [`detach`]
//! (sequential feature detachment and size selection), [`ensemble`]
//! (weighted voting and relevance), [`synth`] (controlled benchmark) and
//! [`eval`] (metrics, ROC, leave-one-subject-out).

pub mod cli;
pub mod data;
pub mod detach;
pub mod ensemble;
pub mod error;
pub mod eval;
mod io_util;
pub mod ridge;
pub mod synth;
pub mod transform;

pub use data::{Dataset, NormStats, SplitSpec};
pub use detach::{DetachConfig, DetachModel, PruningCurve};
pub use ensemble::{ChannelRelevance, EnsembleConfig, EnsembleModel};
pub use error::{Error, Result};
pub use ridge::RidgeModel;
pub use transform::{FeatureMatrix, KernelBank};
