//! `motionlab` is a self-contained toolkit for skeletal human-motion modelling.
//!
//! It covers the full pipeline from monocular 2D keypoint sequences to 3D pose
//! and future motion:
//!
//! * [`skeleton`]: a 16-joint kinematic tree organised as five chains.
//! * [`lie`] / [`pose`]: twists in se(3), exponential/logarithm maps, and
//!   differentiable forward kinematics mapping per-bone twists to joint
//!   coordinates.
//! * [`autodiff`]: a small reverse-mode automatic differentiation engine with
//!   the tensor primitives needed by the networks, including forward
//!   kinematics as a differentiable operation.
//! * [`models`]: the pose lifting network (PLN), the motion generation
//!   network (MGN), mixture-of-experts self-projection heads tying the
//!   coordinate and Lie representations together, and a dual-path global
//!   refinement stage.
//! * [`metrics`]: MPJPE, Procrustes-aligned MPJPE, and angular MAE against a
//!   zero-velocity baseline.
//! * [`synth`] / [`data`]: synthetic motion generation, pinhole camera
//!   projection, trajectory file I/O, and sliding-window datasets.
//! * [`train`] / [`eval`] / [`commands`]: training loop, evaluation reports,
//!   and the CLI entry points (`synth`, `train`, `eval`, `predict`,
//!   `ablate`).
//!
//! The `examples/` directory demonstrates each capability end to end on
//! synthetic data; `cargo run --example toy_train` is a good starting point.

pub mod ablate;
pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod data;
pub mod eval;
pub mod lie;
pub mod metrics;
pub mod models;
pub mod pose;
pub mod skeleton;
pub mod synth;
pub mod train;

pub use config::Config;
pub use lie::{RigidTransform, Twist};
pub use pose::{CoordPose, LiePose};
pub use skeleton::Skeleton;
