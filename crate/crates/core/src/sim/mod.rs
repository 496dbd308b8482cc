//! Synthetic rater studies and dataset planning.
//!
//! All randomness flows from one `u64` seed. Every entity (an image's ground
//! truth, one rater on one image, one split fold) draws from its own ChaCha8
//! stream seeded with [`derive_seed`], so adding raters or images never shifts
//! the draws of the others.

mod plan;
mod study;

pub use plan::{monte_carlo_splits, patch_sampling_plan, write_patch_csv, PatchRect, SplitPlan, SplitRatios};
pub use study::{
    generate_ground_truth, simulate_rater, simulate_study, synthetic_images, RaterProfile, StudyPreset,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// First eight bytes (little endian) of `SHA-256(seed_le ‖ entity)`.
pub fn derive_seed(seed: u64, entity: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(entity.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub(crate) fn entity_rng(seed: u64, entity: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, entity))
}
