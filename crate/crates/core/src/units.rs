//! Unit conventions.
//!
//! Every rate inside the crate is an angular frequency in rad/µs and every
//! time is in µs. Figure axes quoted as "B/2π in MHz" are ordinary
//! frequencies and must be converted at the boundary with these helpers.

use std::f64::consts::PI;

/// Photon decay rate of the readout resonator, rad/µs.
pub const KAPPA: f64 = 5.0;

/// On-resonance qubit-resonator coupling, 2π × 41 MHz in rad/µs.
pub const LAMBDA_R: f64 = 2.0 * PI * 41.0;

/// Duration of the resonator-to-qubit mapping, µs.
pub const MAPPING_T2: f64 = 0.118;

/// Ordinary frequency (MHz) to angular frequency (rad/µs).
pub fn mhz_to_angular(f_mhz: f64) -> f64 {
    2.0 * PI * f_mhz
}

/// Angular frequency (rad/µs) to ordinary frequency (MHz).
pub fn angular_to_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}
