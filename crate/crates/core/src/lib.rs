//! Checkerboard-based LiDAR-camera extrinsic calibration.
//!
//! The crate turns ring-structured LiDAR scans and detected checkerboard
//! corners into the rigid transform `T^c_l` that maps LiDAR points into
//! the camera frame:
//!
//! * [`lidar`] selects the board in a raw scan and extracts its plane,
//!   projected planar points and ring end points;
//! * [`camera`] recovers the board pose from corners, samples its outline
//!   and propagates the normal's uncertainty;
//! * [`calib`] initializes from plane constraints and refines with
//!   point-to-plane and point-to-line terms over random frame subsets;
//! * [`qpep`] holds the globally verified pose solvers underneath;
//! * [`synth`] renders analytic scenes with known ground truth;
//! * [`metrics`] and [`io`] cover evaluation and file formats;
//! * [`cli`] runs the commands of the `lcalib` binary.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod camera;
pub mod cli;
pub mod error;
pub mod geom;
pub mod io;
pub mod lidar;
pub mod metrics;
pub mod qpep;
pub mod synth;

pub use error::{Error, Result};
pub use geom::{Pose, Rotation};
