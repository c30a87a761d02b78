//! Qubit–resonator concurrence in the single-excitation subspace.

use nalgebra::{Matrix4, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{eigensystem, mean_energy, SingleExcState, SystemParams};
use crate::tomography::{kron, SubspaceDensity, TwoQubitDensity};
use crate::topology::{track_loop, EigenSource, LoopSpec};

/// 2|α||β| for α|e,0⟩ + β|g,1⟩.
pub fn concurrence_pure(state: &SingleExcState) -> f64 {
    let n = state.norm_sqr();
    (2.0 * state.c_e0().norm() * state.c_g1().norm() / n).min(1.0)
}

/// Wootters concurrence max(0, μ₁ − μ₂ − μ₃ − μ₄), μ the descending square
/// roots of the eigenvalues of ρ(σ_y⊗σ_y)ρ*(σ_y⊗σ_y). They are computed as
/// the eigenvalues of the Hermitian √ρ·ρ̃·√ρ.
pub fn concurrence_mixed(rho: &TwoQubitDensity) -> Result<f64> {
    rho.validate()?;
    let sy = nalgebra::Matrix2::new(
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, -1.0),
        Complex64::new(0.0, 1.0),
        Complex64::new(0.0, 0.0),
    );
    let yy = kron(&sy, &sy);
    let tilde = yy * rho.0.conjugate() * yy;
    let eig = SymmetricEigen::new(rho.0);
    let mut sqrt_rho = Matrix4::zeros();
    for k in 0..4 {
        let w = eig.eigenvalues[k].max(0.0).sqrt();
        let v = eig.eigenvectors.column(k);
        sqrt_rho += v * v.adjoint() * Complex64::new(w, 0.0);
    }
    let m = sqrt_rho * tilde * sqrt_rho;
    let m = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let mut mu: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
    mu.sort_by(|a, b| b.total_cmp(a));
    Ok((mu[0] - mu[1] - mu[2] - mu[3]).clamp(0.0, 1.0))
}

/// Concurrence of a postselected subspace density placed on the
/// {|eg⟩, |ge⟩} block of the two-qubit space.
pub fn concurrence_subspace(rho: &SubspaceDensity) -> Result<f64> {
    let idx = [2usize, 1];
    let mut m = Matrix4::zeros();
    for r in 0..2 {
        for c in 0..2 {
            m[(idx[r], idx[c])] = rho.0[(r, c)];
        }
    }
    concurrence_mixed(&TwoQubitDensity(m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcurrenceCurve {
    pub phi_values: Vec<f64>,
    pub e_values: Vec<f64>,
    pub radius: f64,
    pub center: f64,
}

/// Concurrence of the continued right eigenvector of `mode` (0 or 1) at
/// every point of one traversal of the loop.
pub fn concurrence_vs_phi<S: EigenSource + ?Sized>(
    spec: &LoopSpec,
    mode: usize,
    source: &S,
    refine_depth: u32,
) -> Result<ConcurrenceCurve> {
    if mode > 1 {
        return Err(Error::invalid(format!("mode must be 0 or 1, got {mode}")));
    }
    let track = track_loop(spec, 1, source, refine_depth)?;
    let steps = spec.steps;
    Ok(ConcurrenceCurve {
        phi_values: (0..=steps).map(|p| 2.0 * std::f64::consts::PI * p as f64 / steps as f64).collect(),
        e_values: track.right.iter().map(|r| concurrence_pure(&r[mode])).collect(),
        radius: spec.radius,
        center: spec.center_bx,
    })
}

/// Concurrence at the φ = π loop point (|λ| = B_C − B_r, Δ = 0). Both modes
/// agree there; on the ring itself the coalesced eigenvector is used.
pub fn e_at_pi(radius: f64, center: f64, kappa: f64) -> Result<f64> {
    let lambda = center - radius;
    if !(radius >= 0.0) || !(lambda > 0.0) {
        return Err(Error::invalid(format!("need 0 <= B_r < B_C, got B_r = {radius}, B_C = {center}")));
    }
    let p = SystemParams::real(lambda, 0.0, kappa)?;
    match eigensystem(&p) {
        Ok(es) => Ok(concurrence_pure(&es.right[0])),
        Err(Error::EpProximity { .. }) => {
            let e = mean_energy(&p);
            Ok(concurrence_pure(&SingleExcState::new(p.lambda.conj(), e - p.delta)?))
        }
        Err(e) => Err(e),
    }
}

pub fn e_pi_vs_radius(radii: &[f64], center: f64, kappa: f64) -> Result<Vec<f64>> {
    radii.iter().map(|&r| e_at_pi(r, center, kappa)).collect()
}

/// min(1, 4(B_C − B_r)/κ)
pub fn e_pi_closed_form(radius: f64, center: f64, kappa: f64) -> f64 {
    (4.0 * (center - radius) / kappa).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tomography::{embed_two_qubit, two_qubit_vector};
    use crate::topology::AnalyticSource;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Eigenvalues of the non-Hermitian ρρ̃ from a complex Schur
    /// decomposition, independent of the √ρ ρ̃ √ρ construction.
    fn concurrence_oracle(rho: &Matrix4<Complex64>) -> f64 {
        let sy = nalgebra::Matrix2::new(c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0));
        let yy = kron(&sy, &sy);
        let r = rho * yy * rho.conjugate() * yy;
        let ev = r.schur().eigenvalues().expect("complex Schur eigenvalues");
        let mut mu: Vec<f64> = ev.iter().map(|z| z.re.max(0.0).sqrt()).collect();
        mu.sort_by(|a, b| b.total_cmp(a));
        (mu[0] - mu[1] - mu[2] - mu[3]).max(0.0)
    }

    #[test]
    fn pure_examples() {
        assert_eq!(concurrence_pure(&SingleExcState::excited()), 0.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let bell = SingleExcState::new(c(h, 0.0), c(h, 0.0)).unwrap();
        assert!((concurrence_pure(&bell) - 1.0).abs() < 1e-15);
        let s = SingleExcState::new(c(0.3, -0.4), c(0.5, 0.2)).unwrap();
        let mixed = concurrence_mixed(&embed_two_qubit(&s).unwrap()).unwrap();
        assert!((concurrence_pure(&s) - mixed).abs() < 1e-10);
    }

    #[test]
    fn werner_states() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let bell = two_qubit_vector(&SingleExcState::new(c(h, 0.0), c(h, 0.0)).unwrap());
        let proj = bell * bell.adjoint();
        let werner = |p: f64| TwoQubitDensity(proj * c(p, 0.0) + Matrix4::identity() * c((1.0 - p) / 4.0, 0.0));
        assert!(concurrence_mixed(&TwoQubitDensity::maximally_mixed()).unwrap() < 1e-12);
        assert!((concurrence_mixed(&werner(1.0)).unwrap() - 1.0).abs() < 1e-7);
        let w = werner(0.5);
        let value = concurrence_mixed(&w).unwrap();
        assert!((value - 0.25).abs() < 1e-10);
        assert!((value - concurrence_oracle(&w.0)).abs() < 1e-10);
        assert!(concurrence_mixed(&TwoQubitDensity(proj * c(2.0, 0.0))).is_err());
    }

    #[test]
    fn closed_form_of_e_pi() {
        let kappa = 5.0;
        for k in 1..50 {
            let r = 2.5 * k as f64 / 50.0;
            let v = e_at_pi(r, 2.5, kappa).unwrap();
            assert!((v - e_pi_closed_form(r, 2.5, kappa)).abs() < 1e-10, "{r}: {v}");
        }
        assert!((e_at_pi(1.25, 2.5, kappa).unwrap() - 1.0).abs() < 1e-12);
        assert!(e_at_pi(2.5, 2.5, kappa).is_err());
    }

    #[test]
    fn loop_curve() {
        let kappa = 5.0;
        let src = AnalyticSource { kappa };
        let spec = LoopSpec::centered(kappa, 2.0 * std::f64::consts::PI * 0.18, 64);
        let a = concurrence_vs_phi(&spec, 0, &src, 12).unwrap();
        let b = concurrence_vs_phi(&spec, 1, &src, 12).unwrap();
        assert!((a.e_values[0] - 1.0).abs() < 1e-6);
        assert!((a.e_values[32] - 1.0).abs() < 1e-6);
        assert!(a.e_values.iter().all(|v| (0.0..=1.0).contains(v)));
        // Δ = 0 at φ = 0 and π: both modes agree
        assert!((a.e_values[32] - b.e_values[32]).abs() < 1e-12);
        assert!(concurrence_vs_phi(&spec, 2, &src, 12).is_err());
    }
}
