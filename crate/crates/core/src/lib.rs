//! Dissipative Jaynes-Cummings model of a qubit coupled to a leaky resonator
//! in the single-excitation sector.

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bessel;
pub mod entanglement;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod model;
pub mod seed;
pub mod simplex;
pub mod synthetic;
pub mod tomography;
pub mod topology;
pub mod units;

pub use error::{Error, Result};
pub use model::{
    b_from_params, distance_to_wer, eigensystem, params_from_b, wer_geometry, BVector,
    BiorthEigensystem, LeftCoVector, SingleExcState, SystemParams, WerGeometry,
};
