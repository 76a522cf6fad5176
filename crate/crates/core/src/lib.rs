//! Joint forecasting of discrete action labels and characteristic 3D human
//! poses, supervised only by 2D poses through a differentiable camera
//! projection and regularized by a Wasserstein critic trained on an
//! unrelated 3D pose database.

pub mod critic;
pub mod data;
pub mod error;
pub mod eval;
pub mod forecaster;
pub mod geometry;
pub mod nn;
pub mod overrides;
pub mod pose;
pub mod rollout;
pub mod training;

pub use error::{Error, Result};
pub use pose::{
    ActionLabel, Camera, JointLayout, ObjectLabel, SequenceSample, Skeleton2D, Skeleton3D, Step,
};
pub use critic::{Critic, CriticConfig, Lipschitz};
pub use forecaster::{Forecaster, ForecasterConfig, ForecasterOutput};
pub use training::{TrainConfig, Trainer};
