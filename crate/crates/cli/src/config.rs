//! Run configuration. Radii are in units of κ, every other rate in rad/µs.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use weyl_ring::topology::DEFAULT_REFINE_DEPTH;
use weyl_ring::units::{mhz_to_angular, KAPPA, LAMBDA_R};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub kappa: f64,
    pub seed: u64,
    /// Worker threads for sweeps; results do not depend on it.
    pub workers: Option<usize>,
    pub pipeline: PipelineMode,
    pub berry: BerryConfig,
    pub chern: ChernConfig,
    pub concurrence: ConcurrenceConfig,
    pub drive: DriveConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PipelineMode {
    Analytic,
    SyntheticNoiseless,
    SyntheticShots { shots: u64, seeds: u64 },
}

impl PipelineMode {
    pub fn name(&self) -> &'static str {
        match self {
            PipelineMode::Analytic => "analytic",
            PipelineMode::SyntheticNoiseless => "synthetic-noiseless",
            PipelineMode::SyntheticShots { .. } => "synthetic-shots",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BerryConfig {
    pub radii: Vec<f64>,
    /// Points per loop cycle.
    pub steps: usize,
    pub refine_depth: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChernConfig {
    pub radii: Vec<f64>,
    /// Interior polar angles kπ/(n+1) sampled on the φ = 0 meridian.
    pub n_theta: usize,
    /// Grid of the plaquette integral.
    pub integral_n_theta: usize,
    pub integral_n_phi: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConcurrenceConfig {
    /// Loops whose concurrence is traced against φ.
    pub radii: Vec<f64>,
    pub steps: usize,
    /// Radii of the E(π) curve, below the loop centre κ/2.
    pub e_pi_radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveConfig {
    pub lambda_r: f64,
    pub omega_r: f64,
    /// Modulation frequencies.
    pub nu: Vec<f64>,
    /// Target J₁(ε/ν); zero runs the undriven reference.
    pub j1: Vec<f64>,
    pub n_max: usize,
    /// Rabi periods simulated per run.
    pub periods: f64,
    /// Length of the undriven reference, µs.
    pub flat_duration: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            kappa: KAPPA,
            seed: 0,
            workers: None,
            pipeline: PipelineMode::Analytic,
            berry: BerryConfig::default(),
            chern: ChernConfig::default(),
            concurrence: ConcurrenceConfig::default(),
            drive: DriveConfig::default(),
        }
    }
}

impl Default for BerryConfig {
    fn default() -> Self {
        BerryConfig {
            radii: vec![0.126, 0.15, 0.2, 0.22, 0.24, 0.26, 0.28, 0.3, 0.35, 0.427],
            steps: 64,
            refine_depth: DEFAULT_REFINE_DEPTH,
        }
    }
}

impl Default for ChernConfig {
    fn default() -> Self {
        ChernConfig {
            radii: vec![0.151, 0.18, 0.22, 0.24, 0.26, 0.28, 0.33, 0.41, 0.503],
            n_theta: 15,
            integral_n_theta: 64,
            integral_n_phi: 64,
        }
    }
}

impl Default for ConcurrenceConfig {
    fn default() -> Self {
        ConcurrenceConfig {
            radii: vec![mhz_to_angular(0.18) / KAPPA, mhz_to_angular(0.34) / KAPPA],
            steps: 256,
            e_pi_radii: (1..25).map(|k| 0.02 * k as f64).collect(),
        }
    }
}

impl Default for DriveConfig {
    fn default() -> Self {
        DriveConfig {
            lambda_r: LAMBDA_R,
            omega_r: 2.0 * PI * 6656.0,
            nu: vec![2.0 * PI * 660.0],
            j1: vec![0.0, 0.05, 0.1, 0.15],
            n_max: 2,
            periods: 3.0,
            flat_duration: 0.05,
        }
    }
}

fn check(ok: bool, msg: impl Into<String>) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg.into()))
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg: RunConfig = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check(
            self.schema_version == SCHEMA_VERSION,
            format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version),
        )?;
        check(positive(self.kappa), "kappa must be positive")?;
        check(self.workers != Some(0), "workers must be at least 1")?;
        if let PipelineMode::SyntheticShots { shots, seeds } = self.pipeline {
            check(shots > 0 && seeds > 0, "shots and seeds must be at least 1")?;
        }
        let radii_ok = |v: &[f64]| !v.is_empty() && v.iter().all(|&r| positive(r));
        check(radii_ok(&self.berry.radii), "berry.radii must be non-empty and positive")?;
        check(self.berry.steps >= 8, "berry.steps must be at least 8")?;
        check(radii_ok(&self.chern.radii), "chern.radii must be non-empty and positive")?;
        check(self.chern.n_theta >= 3, "chern.n_theta must be at least 3")?;
        check(
            self.chern.integral_n_theta >= 2 && self.chern.integral_n_phi >= 3,
            "chern integral grid needs at least 2 × 3 points",
        )?;
        check(radii_ok(&self.concurrence.radii), "concurrence.radii must be non-empty and positive")?;
        check(self.concurrence.steps >= 8, "concurrence.steps must be at least 8")?;
        check(
            radii_ok(&self.concurrence.e_pi_radii) && self.concurrence.e_pi_radii.iter().all(|&r| r < 0.5),
            "concurrence.e_pi_radii must lie in (0, 0.5)",
        )?;
        let d = &self.drive;
        check(
            positive(d.lambda_r) && positive(d.omega_r) && positive(d.periods) && positive(d.flat_duration),
            "drive rates, periods and flat_duration must be positive",
        )?;
        check(!d.nu.is_empty() && d.nu.iter().all(|&v| positive(v)), "drive.nu must be non-empty and positive")?;
        check(
            !d.j1.is_empty() && d.j1.iter().all(|&v| v.is_finite() && (0.0..0.58).contains(&v)),
            "drive.j1 values must lie in [0, 0.58)",
        )?;
        check(d.n_max >= 1, "drive.n_max must be at least 1")
    }

    /// SHA-256 of the canonical JSON form, without the worker count.
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            workers: None,
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
