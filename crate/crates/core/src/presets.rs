//! A worked example system used throughout the documentation and tests:
//! a single-link robot arm with angle measurement.
//!
//! ```text
//! x1' = x2
//! x2' = -sin(x1) + u + w
//! y   = x1
//! ```
//!
//! In plant form: `A = [[0,1],[0,0]]`, `B = (0;1)`, `C = (1,0)`, `D = 0`,
//! `E = (0;-1)`, `Ew = (0;1)`, `Fw = 0`, `Cq = (1,0)`, `p(q) = sin(q)`.
//! The nonlinearity is globally Lipschitz with constant 1.

use alloc::vec;

use crate::iqc::{self, MultiplierFactorization, Nonlinearity, PlantModel};
use crate::mat::Mat;
use crate::synthesis::GainSet;

/// The single-link arm plant.
pub fn single_link_arm() -> PlantModel {
    PlantModel::new(
        Mat::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]),
        Mat::col(&[0.0, 1.0]),
        Mat::row(&[1.0, 0.0]),
        Mat::scalar(0.0),
        Mat::row(&[1.0, 0.0]),
        Mat::col(&[0.0, -1.0]),
        Mat::col(&[0.0, 1.0]),
        Mat::scalar(0.0),
    )
    .expect("example plant is well-formed")
}

/// `p(q) = sin(q)` with Lipschitz constant 1.
pub fn single_link_arm_nonlinearity() -> Nonlinearity {
    Nonlinearity::sine(1)
}

/// Unit-Lipschitz multiplier for the arm: `M = diag(1, -1)`, `T = I`.
pub fn single_link_arm_multiplier() -> MultiplierFactorization {
    iqc::mm_lipschitz(1.0, 1, 1).expect("unit Lipschitz multiplier is valid")
}

/// A known stabilizing gain set for the arm, used as a regression fixture:
/// `L1 = -1`, `L2 = (-5.1294, -18.0352)`, `K1 = (-7.3936, -3.9937)`,
/// `K2 = 1`.
pub fn single_link_arm_reference_gains() -> GainSet {
    GainSet {
        l1: Mat::scalar(-1.0),
        l2: Mat::col(&[-5.1294, -18.0352]),
        k1: Mat::row(&[-7.3936, -3.9937]),
        k2: Mat::scalar(1.0),
    }
}

/// Initial plant/observer states used in the worked example:
/// `x0 = (0.1, -0.15)`, `xhat0 = (-0.1, 0.05)`.
pub fn single_link_arm_initial_states() -> (alloc::vec::Vec<f64>, alloc::vec::Vec<f64>) {
    (vec![0.1, -0.15], vec![-0.1, 0.05])
}
