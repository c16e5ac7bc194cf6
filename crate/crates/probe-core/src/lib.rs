//! Probabilistic occupancy bird's-eye-view encoding for LiDAR place
//! recognition.
//!
//! A scan is projected into a polar BEV grid of maximum heights with a
//! binary occupancy mask. Isotropic translation uncertainty is pushed
//! through the polar Jacobian as a separable, density-adaptive Gaussian
//! blur, turning each cell into a Bernoulli variable `(mu, sigma)`.
//! Pairs are aligned by FFT circular cross-correlation over the height
//! grid and scored by a shrinkage-regularized Bernoulli-KL Jaccard fused
//! multiplicatively with the height cosine. Ring-mean keys feed a KD-tree
//! for candidate retrieval, and the `eval` module produces PR/AUC reports
//! for single- and multi-session runs. `synth` holds scene generators and
//! the brute-force / Monte-Carlo oracles used to validate the analytic
//! pipeline.

pub mod descriptor;
pub mod error;
pub mod eval;
pub mod matching;
pub mod pointcloud;
pub mod retrieval;
pub mod synth;

pub use descriptor::{Descriptor, PolarConfig};
pub use error::{Error, Result};
pub use matching::{MatchScore, ScoreMode};
pub use pointcloud::{PointCloud, Trajectory};
