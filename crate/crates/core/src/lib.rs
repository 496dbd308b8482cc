//! Evaluation tooling for mitotic figure annotation studies.
//!
//! * [`model`]: annotation, detection and image types plus the JSON formats.
//! * [`consensus`]: sequential distance-based clustering and rater-count
//!   thresholds, including leave-one-out consensus.
//! * [`agreement`]: greedy point matching, precision/recall/F1 against
//!   consensus, ICC(2,1) of mitotic counts and threshold sweeps.
//! * [`detection`]: detector scoring and average precision across competing
//!   ground-truth definitions.
//! * [`fusion`]: the dual-stain `ReLU(Conv1x1(LayerNorm(Cat(H, P))))` block
//!   with forward, backward and a finite-difference check.
//! * [`sim`]: synthetic rater studies, Monte Carlo splits and patch plans.
//! * [`cli`]: the `mitoeval` command-line front end.
//!
//! Distances are always in micrometers; coordinates are stored in pixels and
//! converted through each image's `mpp`.

pub mod agreement;
pub mod cli;
pub mod consensus;
pub mod detection;
pub mod error;
pub mod fusion;
pub mod manifest;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
