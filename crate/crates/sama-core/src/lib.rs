//! Pose lifting with selective state-space scans.
//!
//! The crate implements a 2D-to-3D pose lifting network built from
//! selective scan kernels with two extensions: structure-aware fusion of
//! joint features and hidden states through a learnable skeleton adjacency,
//! and motion-adaptive discretization timescales driven by adjacent-frame
//! features. Training, evaluation metrics, a synthetic data pipeline and a
//! CLI are included, along with a tape-based reverse-mode differentiation
//! engine and a finite-difference gradient checker that validate every
//! kernel.

pub mod attention;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod msm;
pub mod network;
pub mod optim;
pub mod param;
pub mod pose;
pub mod rng;
pub mod ssi;
pub mod ssm;
pub mod tape;
pub mod trainer;
pub mod tensor;
pub mod verify;

pub use config::{ModelConfig, MsmVariant};
pub use error::SamaError;
pub use graph::JointGraph;
pub use param::{Init, Param, ParamId, ParamStore};
pub use pose::PoseSeq;
pub use rng::Rng;
pub use tensor::Tensor;
