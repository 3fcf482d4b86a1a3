//! Distortion-robust 2D→3D human pose lifting.
//!
//! Synthetic motion capture ([`datagen`]) is projected through a pinhole camera
//! with Brown–Conrady lens distortion ([`camera`]). Randomly distorted tasks
//! ([`taskgen`]) drive second-order meta-learning of a temporal-convolution
//! lifter ([`lifter`], [`training`]), which is then adapted to a single target
//! camera with a few labels or with label-free bone-symmetry and bone-length
//! consistency losses ([`adaptation`]). [`experiments`] scripts the desk-scale
//! trend studies.

pub mod adaptation;
pub mod autodiff;
pub mod camera;
pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod lifter;
pub mod metrics;
pub mod optim;
pub mod report;
pub mod rng;
pub mod skeleton;
pub mod taskgen;
pub mod training;

pub use adaptation::{AdaptConfig, AdaptCurve};
pub use camera::{distort_pixel, DistortionParams, Intrinsics, NormalizedPoint, PixelPoint};
pub use checkpoint::Checkpoint;
pub use config::Config;
pub use datagen::{DataConfig, DatasetEntry, MotionSequence, Trajectory2D};
pub use error::{Error, Result};
pub use lifter::{LifterConfig, LifterParams};
pub use metrics::{MetricReport, MetricRow};
pub use skeleton::{default_topology, Pose3D, Pose3DSequence, SkeletonTopology};
pub use taskgen::DistortionTask;
pub use training::{TrainConfig, TrainReport};
