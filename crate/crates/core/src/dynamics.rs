//! Time evolution of the qubit-resonator system.
//!
//! * conditional no-jump evolution under the non-Hermitian generator,
//! * the Lindblad master equation on span{|g,0⟩, |e,0⟩, |g,1⟩},
//! * Monte Carlo quantum-jump trajectories (jump operator √κ·a),
//! * the full parametrically modulated Hamiltonian on a truncated Fock
//!   ladder, used to check the sideband reduction λ = λ_r·J₁(ε/ν).

use nalgebra::{Matrix2, Matrix3, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bessel::{bessel_j, bessel_j1};
use crate::error::{Error, Result};
use crate::model::{
    discriminant, eigensystem, hamiltonian_matrix, mean_energy, SingleExcState, SystemParams,
};
use crate::seed::{derive_seed, rng_from_seed};
use crate::simplex::{nelder_mead, SimplexOptions};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// RK4 runs are repeated at half the step until two successive results agree
/// to this level.
pub const HALVING_TOL: f64 = 1e-7;
const MAX_HALVINGS: usize = 10;

// ---------------------------------------------------------------------------
// no-jump propagation

/// exp(−iHt) for the 2×2 generator in closed form. Valid everywhere,
/// including on the exceptional ring where H is not diagonalizable.
pub fn nojump_propagator(p: &SystemParams, t: f64) -> Matrix2<Complex64> {
    let h = hamiltonian_matrix(p);
    let m = mean_energy(p);
    let k = h - Matrix2::identity() * m;
    // K² = disc·I, so exp(−iKt) = cos(z)·I − i·t·sinc(z)·K with z² = disc·t²
    let z2 = discriminant(p) * (t * t);
    let (cos_z, sinc_z) = if z2.norm() < 1e-6 {
        (
            ONE - z2 / 2.0 + z2 * z2 / 24.0 - z2 * z2 * z2 / 720.0,
            ONE - z2 / 6.0 + z2 * z2 / 120.0 - z2 * z2 * z2 / 5040.0,
        )
    } else {
        let z = z2.sqrt();
        (z.cos(), z.sin() / z)
    };
    (Matrix2::identity() * cos_z - k * (I * t * sinc_z)) * (-I * m * t).exp()
}

/// Unnormalized exp(−iH_NH t)|ψ0⟩ from the eigendecomposition, falling back
/// to the closed-form exponential inside the exceptional-point band.
pub fn evolve_nojump_amplitudes(p: &SystemParams, psi0: &SingleExcState, t: f64) -> Result<SingleExcState> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!("time must be >= 0, got {t}")));
    }
    match eigensystem(p) {
        Ok(es) => {
            let mut e0 = ZERO;
            let mut g1 = ZERO;
            for n in 0..2 {
                let weight = es.left[n].apply(psi0) * (-I * es.energies[n] * t).exp();
                e0 += weight * es.right[n].c_e0();
                g1 += weight * es.right[n].c_g1();
            }
            Ok(SingleExcState::unnormalized(e0, g1))
        }
        Err(Error::EpProximity { .. }) => {
            let u = nojump_propagator(p, t);
            let v = u * nalgebra::Vector2::new(psi0.c_e0(), psi0.c_g1());
            Ok(SingleExcState::unnormalized(v[0], v[1]))
        }
        Err(e) => Err(e),
    }
}

/// Normalized conditional state and the no-jump (survival) probability.
pub fn propagate_nojump(p: &SystemParams, psi0: &SingleExcState, t: f64) -> Result<(SingleExcState, f64)> {
    let raw = evolve_nojump_amplitudes(p, psi0, t)?;
    let survival = raw.norm_sqr() / psi0.norm_sqr();
    Ok((raw.normalize()?, survival))
}

/// Unconditional population of |e,0⟩ for a system started in |e,0⟩. Jumps
/// end in |g,0⟩, so this is the squared no-jump amplitude.
pub fn excited_population(p: &SystemParams, t: f64) -> Result<f64> {
    Ok(evolve_nojump_amplitudes(p, &SingleExcState::excited(), t)?.c_e0().norm_sqr())
}

// ---------------------------------------------------------------------------
// fixed-step RK4

trait OdeState: Clone {
    fn axpy(&self, a: f64, x: &Self) -> Self;
    fn max_abs_diff(&self, other: &Self) -> f64;
}

impl OdeState for Matrix3<Complex64> {
    fn axpy(&self, a: f64, x: &Self) -> Self {
        self + x * Complex64::new(a, 0.0)
    }
    fn max_abs_diff(&self, other: &Self) -> f64 {
        (self - other).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl OdeState for Vec<Complex64> {
    fn axpy(&self, a: f64, x: &Self) -> Self {
        self.iter().zip(x).map(|(s, v)| s + v * a).collect()
    }
    fn max_abs_diff(&self, other: &Self) -> f64 {
        self.iter().zip(other).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

fn rk4_step<S: OdeState>(f: &impl Fn(f64, &S) -> S, t: f64, y: &S, h: f64) -> S {
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &y.axpy(0.5 * h, &k1));
    let k3 = f(t + 0.5 * h, &y.axpy(0.5 * h, &k2));
    let k4 = f(t + h, &y.axpy(h, &k3));
    y.axpy(h / 6.0, &k1)
        .axpy(h / 3.0, &k2)
        .axpy(h / 3.0, &k3)
        .axpy(h / 6.0, &k4)
}

/// Integrates from 0 to `t_end` with `n` equal steps, returning the samples
/// at every `stride`-th step (and the final one).
fn rk4_run<S: OdeState>(
    f: &impl Fn(f64, &S) -> S,
    y0: &S,
    t_end: f64,
    n: usize,
    stride: usize,
) -> Vec<(f64, S)> {
    let h = t_end / n as f64;
    let mut out = vec![(0.0, y0.clone())];
    let mut y = y0.clone();
    for k in 0..n {
        y = rk4_step(f, k as f64 * h, &y, h);
        if (k + 1) % stride == 0 || k + 1 == n {
            out.push(((k + 1) as f64 * h, y.clone()));
        }
    }
    out
}

/// RK4 with the step halved until the final states of two successive runs
/// differ by less than `tol`. Returns the finer run and its step count.
fn rk4_converged<S: OdeState>(
    f: &impl Fn(f64, &S) -> S,
    y0: &S,
    t_end: f64,
    dt: f64,
    tol: f64,
    what: &str,
) -> Result<(S, usize)> {
    let mut n = ((t_end / dt).ceil() as usize).max(1);
    let mut coarse = rk4_run(f, y0, t_end, n, usize::MAX).pop().unwrap().1;
    let mut diff = f64::INFINITY;
    for _ in 0..MAX_HALVINGS {
        n *= 2;
        let fine = rk4_run(f, y0, t_end, n, usize::MAX).pop().unwrap().1;
        diff = fine.max_abs_diff(&coarse);
        if diff < tol {
            return Ok((fine, n));
        }
        coarse = fine;
    }
    Err(Error::Convergence {
        what: format!("{what} (RK4 step halving)"),
        best_objective: diff,
        best_point: vec![t_end / n as f64],
    })
}

// ---------------------------------------------------------------------------
// master equation

/// Density matrix on (|g,0⟩, |e,0⟩, |g,1⟩).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeLevelDensity(pub Matrix3<Complex64>);

impl ThreeLevelDensity {
    pub fn new(m: Matrix3<Complex64>) -> Result<Self> {
        let herm = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > 1e-10 {
            return Err(Error::invalid(format!("density matrix not Hermitian ({herm:e})")));
        }
        let tr = m.trace();
        if (tr - ONE).norm() > 1e-10 {
            return Err(Error::invalid(format!("density matrix trace {tr} != 1")));
        }
        let eig = SymmetricEigen::new(m).eigenvalues;
        if eig.iter().any(|&v| v < -1e-10) {
            return Err(Error::invalid(format!("density matrix not PSD: {eig:?}")));
        }
        Ok(ThreeLevelDensity(m))
    }

    pub fn ground() -> Self {
        let mut m = Matrix3::zeros();
        m[(0, 0)] = ONE;
        ThreeLevelDensity(m)
    }

    pub fn from_single(s: &SingleExcState) -> Self {
        let v = nalgebra::Vector3::new(ZERO, s.c_e0(), s.c_g1());
        ThreeLevelDensity(v * v.adjoint() / Complex64::new(s.norm_sqr(), 0.0))
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn purity(&self) -> f64 {
        (self.0 * self.0).trace().re
    }

    /// Block on (|e,0⟩, |g,1⟩), not renormalized.
    pub fn single_excitation_block(&self) -> Matrix2<Complex64> {
        self.0.fixed_view::<2, 2>(1, 1).into_owned()
    }

    pub fn population(&self, level: usize) -> f64 {
        self.0[(level, level)].re
    }
}

fn lift_hamiltonian(p: &SystemParams) -> Matrix3<Complex64> {
    let h2 = hamiltonian_matrix(p);
    let mut h = Matrix3::zeros();
    h.fixed_view_mut::<2, 2>(1, 1).copy_from(&h2);
    h
}

/// dρ/dt = −i(Hρ − ρH†) + κ·aρa†, the trace-preserving reading of the
/// recycling term.
pub fn lindblad_rhs(p: &SystemParams, rho: &Matrix3<Complex64>) -> Matrix3<Complex64> {
    let h = lift_hamiltonian(p);
    let mut out = (h * rho - rho * h.adjoint()) * (-I);
    // a: |g,1⟩ → |g,0⟩
    out[(0, 0)] += rho[(2, 2)] * p.kappa;
    out
}

pub fn evolve_master(rho0: &ThreeLevelDensity, p: &SystemParams, t: f64, dt: f64) -> Result<ThreeLevelDensity> {
    p.validate()?;
    ThreeLevelDensity::new(rho0.0)?;
    if !(t >= 0.0) || !(dt > 0.0) {
        return Err(Error::invalid(format!("need t >= 0 and dt > 0, got t={t}, dt={dt}")));
    }
    if t == 0.0 {
        return Ok(*rho0);
    }
    let f = |_t: f64, r: &Matrix3<Complex64>| lindblad_rhs(p, r);
    let (rho, _) = rk4_converged(&f, &rho0.0, t, dt, HALVING_TOL, "master equation")?;
    Ok(ThreeLevelDensity(rho))
}

// ---------------------------------------------------------------------------
// trajectories

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RecordedState {
    SingleExcitation(SingleExcState),
    /// |g,0⟩ after a photon has leaked.
    GroundVacuum,
    /// Fock ladder amplitudes, index 2n for |g,n⟩ and 2n+1 for |e,n⟩.
    Ladder(Vec<Complex64>),
}

impl RecordedState {
    pub fn excited_population(&self) -> f64 {
        match self {
            RecordedState::SingleExcitation(s) => s.population_e0(),
            RecordedState::GroundVacuum => 0.0,
            RecordedState::Ladder(v) => {
                let total: f64 = v.iter().map(|z| z.norm_sqr()).sum();
                v.iter().skip(1).step_by(2).map(|z| z.norm_sqr()).sum::<f64>() / total
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<RecordedState>,
    pub jump_times: Vec<f64>,
    pub norm_history: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn excited_population(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.excited_population()).collect()
    }

    pub fn jumped(&self) -> bool {
        !self.jump_times.is_empty()
    }
}

fn time_grid(t: f64, dt: f64) -> Vec<f64> {
    let n = ((t / dt).round() as usize).max(1);
    let n = if (n as f64 * dt - t).abs() > 1e-9 * t.max(1.0) {
        (t / dt).ceil() as usize
    } else {
        n
    };
    (0..=n).map(|k| t * k as f64 / n as f64).collect()
}

/// One Monte Carlo wave-function trajectory.
///
/// Uses the waiting-time unraveling: draw r ~ U(0,1) and jump when the
/// no-jump survival probability falls to r. A single excitation allows at
/// most one jump, after which the system sits in |g,0⟩. `dt` sets the
/// output grid.
pub fn jump_trajectory(
    rng_seed: u64,
    psi0: &SingleExcState,
    p: &SystemParams,
    t: f64,
    dt: f64,
) -> Result<TrajectoryRecord> {
    p.validate()?;
    if !(dt > 0.0) || p.kappa * dt >= 0.1 {
        return Err(Error::invalid(format!("need 0 < κ·dt < 0.1, got dt = {dt}")));
    }
    if !(t >= 0.0) {
        return Err(Error::invalid("t must be >= 0"));
    }
    let psi0 = psi0.normalize()?;
    let mut rng = rng_from_seed(rng_seed);
    let threshold: f64 = rng.random::<f64>();
    let survival = |s: f64| -> Result<f64> { Ok(evolve_nojump_amplitudes(p, &psi0, s)?.norm_sqr()) };

    let times = time_grid(t, dt);
    let mut states = Vec::with_capacity(times.len());
    let mut norms = Vec::with_capacity(times.len());
    let mut jump_times = Vec::new();
    let mut prev_t = 0.0;
    for &tk in &times {
        let raw = evolve_nojump_amplitudes(p, &psi0, tk)?;
        let sk = raw.norm_sqr();
        norms.push(sk);
        if jump_times.is_empty() && sk < threshold {
            // bisection for the jump time inside (prev_t, tk]
            let (mut lo, mut hi) = (prev_t, tk);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if survival(mid)? < threshold {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            jump_times.push(0.5 * (lo + hi));
        }
        if jump_times.is_empty() {
            states.push(RecordedState::SingleExcitation(raw.normalize()?));
        } else {
            states.push(RecordedState::GroundVacuum);
        }
        prev_t = tk;
    }
    Ok(TrajectoryRecord {
        times,
        states,
        jump_times,
        norm_history: norms,
    })
}

/// Ensemble statistics at the final time of `m` trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSummary {
    pub trajectories: usize,
    pub ground_population: f64,
    pub ground_stderr: f64,
    pub excited_population: f64,
    pub excited_stderr: f64,
    pub no_jump_fraction: f64,
}

pub fn jump_ensemble(
    master_seed: u64,
    m: usize,
    psi0: &SingleExcState,
    p: &SystemParams,
    t: f64,
    dt: f64,
) -> Result<EnsembleSummary> {
    let mut g = Vec::with_capacity(m);
    let mut e = Vec::with_capacity(m);
    for k in 0..m {
        let rec = jump_trajectory(derive_seed(master_seed, k as u64), psi0, p, t, dt)?;
        let last = rec.states.last().expect("non-empty record");
        g.push(if matches!(last, RecordedState::GroundVacuum) { 1.0 } else { 0.0 });
        e.push(last.excited_population());
    }
    let (gm, gs) = mean_stderr(&g);
    let (em, es) = mean_stderr(&e);
    Ok(EnsembleSummary {
        trajectories: m,
        ground_population: gm,
        ground_stderr: gs,
        excited_population: em,
        excited_stderr: es,
        no_jump_fraction: 1.0 - gm,
    })
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

// ---------------------------------------------------------------------------
// parametric drive

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    pub lambda_r: f64,
    pub omega_r: f64,
    pub omega_0: f64,
    pub epsilon: f64,
    pub nu: f64,
}

impl DriveParams {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.lambda_r, self.omega_r, self.omega_0, self.nu]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
            && self.epsilon.is_finite()
            && self.epsilon >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid drive parameters {self:?}")))
        }
    }

    /// Modulation index ε/ν.
    pub fn mu(&self) -> f64 {
        self.epsilon / self.nu
    }

    /// Sideband detuning Δ = ω0 + ν − ω_r.
    pub fn detuning(&self) -> f64 {
        self.omega_0 + self.nu - self.omega_r
    }

    /// Drive at exact first-sideband resonance (Δ = 0) with modulation index μ.
    pub fn resonant(lambda_r: f64, omega_r: f64, nu: f64, mu: f64) -> Self {
        DriveParams {
            lambda_r,
            omega_r,
            omega_0: omega_r - nu,
            epsilon: mu * nu,
            nu,
        }
    }

    pub fn with_detuning(&self, delta: f64) -> Self {
        DriveParams {
            omega_0: self.omega_r - self.nu + delta,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FockTruncation {
    pub n_max: usize,
}

impl FockTruncation {
    pub fn new(n_max: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::invalid("n_max must be >= 1"));
        }
        Ok(FockTruncation { n_max })
    }

    pub fn dim(&self) -> usize {
        2 * (self.n_max + 1)
    }
}

/// λ = λ_r·J₁(ε/ν)
pub fn effective_coupling(d: &DriveParams) -> Complex64 {
    Complex64::new(d.lambda_r * bessel_j1(d.mu()), 0.0)
}

/// λ′ = λ_r·J₁(ε/(ν + Δ)) when the modulation frequency is detuned by Δ.
pub fn effective_coupling_detuned(d: &DriveParams, delta: f64) -> Result<Complex64> {
    if !(d.nu + delta > 0.0) {
        return Err(Error::invalid(format!("need ν + Δ > 0, got {}", d.nu + delta)));
    }
    Ok(Complex64::new(d.lambda_r * bessel_j1(d.epsilon / (d.nu + delta)), 0.0))
}

/// Second-order estimate of the detuning that cancels the dispersive shift
/// of the off-resonant sidebands, Δ* = (2λ_r²/ν)·Σ_{k≥1}(J_{1−k}² − J_{1+k}²)/k.
pub fn sideband_stark_shift(d: &DriveParams) -> f64 {
    let mu = d.mu();
    let mut s = 0.0;
    for k in 1..30u32 {
        let below = bessel_j(k.abs_diff(1), mu).powi(2); // |J_{1−k}| = |J_{k−1}|
        let above = bessel_j(k + 1, mu).powi(2);
        s += (below - above) / k as f64;
    }
    2.0 * d.lambda_r * d.lambda_r / d.nu * s
}

pub fn ladder_from_single(s: &SingleExcState, trunc: &FockTruncation) -> Vec<Complex64> {
    let mut v = vec![ZERO; trunc.dim()];
    v[1] = s.c_e0(); // |e,0⟩
    v[2] = s.c_g1(); // |g,1⟩
    v
}

/// i dψ/dt = H(t)ψ with H(t) = Δ|e⟩⟨e| + [f(t)·a†|g⟩⟨e| + h.c.],
/// f(t) = λ_r·e^{−iμ sin νt}·e^{iνt} (frame where the resonator and mean
/// qubit frequencies are removed).
fn driven_rhs(d: &DriveParams, n_max: usize, t: f64, psi: &[Complex64]) -> Vec<Complex64> {
    let delta = d.detuning();
    let f = Complex64::from_polar(d.lambda_r, d.nu * t - d.mu() * (d.nu * t).sin());
    let mut out = vec![ZERO; psi.len()];
    for n in 0..=n_max {
        out[2 * n + 1] += psi[2 * n + 1] * delta;
        if n < n_max {
            let amp = ((n + 1) as f64).sqrt();
            // |e,n⟩ ↔ |g,n+1⟩
            out[2 * (n + 1)] += f * amp * psi[2 * n + 1];
            out[2 * n + 1] += f.conj() * amp * psi[2 * (n + 1)];
        }
    }
    for z in out.iter_mut() {
        *z *= -I;
    }
    out
}

fn check_driven_inputs(d: &DriveParams, psi0: &[Complex64], trunc: &FockTruncation, t: f64, dt: f64) -> Result<()> {
    d.validate()?;
    if psi0.len() != trunc.dim() {
        return Err(Error::invalid(format!(
            "initial state has {} amplitudes, truncation needs {}",
            psi0.len(),
            trunc.dim()
        )));
    }
    let period = 2.0 * std::f64::consts::PI / d.nu;
    if !(dt > 0.0) || dt > 0.05 * period * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "dt = {dt} does not resolve the modulation (need dt <= {})",
            0.05 * period
        )));
    }
    if !(t > 0.0) {
        return Err(Error::invalid("t must be > 0"));
    }
    Ok(())
}

fn truncation_check(v: &[Complex64], n_max: usize) -> Result<()> {
    let top = v[2 * n_max].norm_sqr() + v[2 * n_max + 1].norm_sqr();
    if top > 1e-6 {
        return Err(Error::Truncation {
            population: top,
            n_max,
        });
    }
    Ok(())
}

/// Full time-dependent modulated model, no dissipation, single RK4 pass
/// with step `dt`. States are recorded every `stride` steps.
pub fn simulate_driven_strided(
    d: &DriveParams,
    trunc: &FockTruncation,
    psi0: &[Complex64],
    t: f64,
    dt: f64,
    stride: usize,
) -> Result<TrajectoryRecord> {
    check_driven_inputs(d, psi0, trunc, t, dt)?;
    let n_max = trunc.n_max;
    let f = |s: f64, y: &Vec<Complex64>| driven_rhs(d, n_max, s, y);
    let n = (t / dt).ceil() as usize;
    let samples = rk4_run(&f, &psi0.to_vec(), t, n, stride.max(1));
    let mut rec = TrajectoryRecord {
        times: Vec::with_capacity(samples.len()),
        states: Vec::with_capacity(samples.len()),
        jump_times: Vec::new(),
        norm_history: Vec::with_capacity(samples.len()),
    };
    for (s, v) in samples {
        truncation_check(&v, n_max)?;
        rec.times.push(s);
        rec.norm_history.push(v.iter().map(|z| z.norm_sqr()).sum());
        rec.states.push(RecordedState::Ladder(v));
    }
    Ok(rec)
}

pub fn simulate_driven(
    d: &DriveParams,
    trunc: &FockTruncation,
    psi0: &[Complex64],
    t: f64,
    dt: f64,
) -> Result<TrajectoryRecord> {
    simulate_driven_strided(d, trunc, psi0, t, dt, 1)
}

/// Picks a step (halving from `dt`) at which the final driven state is
/// converged to `tol`, then records the run at that step.
pub fn simulate_driven_converged(
    d: &DriveParams,
    trunc: &FockTruncation,
    psi0: &[Complex64],
    t: f64,
    dt: f64,
    tol: f64,
    stride_time: f64,
) -> Result<TrajectoryRecord> {
    check_driven_inputs(d, psi0, trunc, t, dt)?;
    let n_max = trunc.n_max;
    let f = |s: f64, y: &Vec<Complex64>| driven_rhs(d, n_max, s, y);
    let (_, n) = rk4_converged(&f, &psi0.to_vec(), t, dt, tol, "driven simulation")?;
    let h = t / n as f64;
    let stride = ((stride_time / h).round() as usize).max(1);
    simulate_driven_strided(d, trunc, psi0, t, h, stride)
}

// ---------------------------------------------------------------------------
// Rabi analysis

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiFit {
    /// Angular frequency of the P_e oscillation (rad/µs).
    pub omega: f64,
    pub offset: f64,
    pub amplitude: f64,
    pub rms_residual: f64,
}

/// Least-squares fit of P(t) ≈ offset + amplitude·cos(ω t).
///
/// The initial ω comes from mid-level crossings of the signal after
/// averaging over `smoothing` (one modulation period), so fast micromotion
/// does not produce spurious crossings.
pub fn fit_rabi(times: &[f64], pe: &[f64], smoothing: f64) -> Result<RabiFit> {
    if times.len() != pe.len() || times.len() < 8 {
        return Err(Error::invalid("need at least 8 samples of equal length"));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    let half = (0.5 * smoothing / dt).round() as usize;
    let smooth: Vec<f64> = (0..pe.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(pe.len() - 1);
            pe[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let max = smooth.iter().cloned().fold(f64::MIN, f64::max);
    let min = smooth.iter().cloned().fold(f64::MAX, f64::min);
    let level = 0.5 * (max + min);
    // a crossing counts once the signal has left a band of ±¼ swing around
    // the mid level, so residual ripple near the level is ignored
    let band = 0.25 * (max - min);
    let mut crossings = Vec::new();
    let mut last_mid = None;
    let mut above = smooth[0] > level;
    for i in 1..smooth.len() {
        let (a, b) = (smooth[i - 1] - level, smooth[i] - level);
        if a == 0.0 || a.signum() != b.signum() {
            let frac = if a == b { 0.0 } else { a / (a - b) };
            last_mid = Some(times[i - 1] + frac * (times[i] - times[i - 1]));
        }
        let switched = if above { b < -band } else { b > band };
        if switched {
            above = !above;
            crossings.extend(last_mid.take());
        }
    }
    let omega0 = match crossings.len() {
        0 => return Err(Error::invalid("signal never crosses its mid level")),
        1 => std::f64::consts::FRAC_PI_2 / (crossings[0] - times[0]),
        k => std::f64::consts::PI * (k - 1) as f64 / (crossings[k - 1] - crossings[0]),
    };
    let objective = |x: &[f64]| -> f64 {
        times
            .iter()
            .zip(pe)
            .map(|(t, y)| (x[0] + x[1] * (x[2] * t).cos() - y).powi(2))
            .sum::<f64>()
            / times.len() as f64
    };
    let x0 = [level, 0.5 * (max - min), omega0];
    let m = nelder_mead(
        objective,
        &x0,
        &[0.05, 0.05, 0.05 * omega0],
        &SimplexOptions {
            max_evals: 4000,
            diameter_tol: 1e-10 * omega0.max(1.0),
        },
    );
    Ok(RabiFit {
        omega: m.x[2].abs(),
        offset: m.x[0],
        amplitude: m.x[1],
        rms_residual: m.f.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveValidation {
    pub drive: DriveParams,
    /// Detuning at which the exchange is complete (dressed resonance).
    pub resonant_detuning: f64,
    pub predicted_omega: f64,
    pub fit: RabiFit,
    pub min_excited_population: f64,
    pub record: TrajectoryRecord,
}

impl DriveValidation {
    pub fn ratio(&self) -> f64 {
        self.fit.omega / self.predicted_omega
    }
}

/// Smallest P_e reached within one predicted Rabi period.
fn exchange_depth(d: &DriveParams, trunc: &FockTruncation, dt: f64) -> Result<f64> {
    let lambda = effective_coupling(d).re;
    let t = std::f64::consts::PI / lambda;
    let psi0 = ladder_from_single(&SingleExcState::excited(), trunc);
    let rec = simulate_driven_strided(d, trunc, &psi0, t, dt, 1)?;
    Ok(rec.excited_population().into_iter().fold(f64::MAX, f64::min))
}

/// Locates the dressed sideband resonance by tuning the mean qubit frequency,
/// simulates `periods` Rabi periods there and fits the oscillation.
///
/// Off-resonant sidebands shift the |e,0⟩–|g,1⟩ splitting by ~λ_r²/ν, which
/// at laboratory scales exceeds λ itself, so the bare condition Δ = 0 does not
/// give complete exchange.
pub fn validate_drive(d: &DriveParams, trunc: &FockTruncation, periods: f64) -> Result<DriveValidation> {
    d.validate()?;
    let lambda = effective_coupling(d).re;
    if !(lambda > 0.0) {
        return Err(Error::invalid("drive produces no sideband coupling (ε = 0)"));
    }
    let mod_period = 2.0 * std::f64::consts::PI / d.nu;
    let search_dt = mod_period / 40.0;
    let center = sideband_stark_shift(d);
    let width = 2.0 * lambda;
    let depth = |delta: f64| exchange_depth(&d.with_detuning(delta), trunc, search_dt);

    // coarse scan, then golden-section refinement
    let n_scan = 41;
    let mut best = (center, f64::MAX);
    for k in 0..n_scan {
        let delta = center - width + 2.0 * width * k as f64 / (n_scan - 1) as f64;
        let v = depth(delta)?;
        if v < best.1 {
            best = (delta, v);
        }
    }
    let step = 2.0 * width / (n_scan - 1) as f64;
    let (mut a, mut b) = (best.0 - step, best.0 + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut e = a + g * (b - a);
    let (mut fc, mut fe) = (depth(c)?, depth(e)?);
    for _ in 0..40 {
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - g * (b - a);
            fc = depth(c)?;
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + g * (b - a);
            fe = depth(e)?;
        }
        if (b - a).abs() < 1e-9 * lambda {
            break;
        }
    }
    let resonant_detuning = 0.5 * (a + b);
    let tuned = d.with_detuning(resonant_detuning);

    let predicted_omega = 2.0 * lambda;
    let t = periods * 2.0 * std::f64::consts::PI / predicted_omega;
    let psi0 = ladder_from_single(&SingleExcState::excited(), trunc);
    let record = simulate_driven_converged(&tuned, trunc, &psi0, t, mod_period / 20.0, 1e-6, mod_period / 4.0)?;
    let pe = record.excited_population();
    let fit = fit_rabi(&record.times, &pe, mod_period)?;
    let min_excited_population = pe.iter().cloned().fold(f64::MAX, f64::min);
    Ok(DriveValidation {
        drive: tuned,
        resonant_detuning,
        predicted_omega,
        fit,
        min_excited_population,
        record,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Plain RK4 on i dψ/dt = Hψ, independent of the eigendecomposition.
    fn rk4_oracle(p: &SystemParams, psi0: [Complex64; 2], t: f64, dt: f64) -> [Complex64; 2] {
        let h = hamiltonian_matrix(p);
        let f = |v: [Complex64; 2]| {
            [
                -I * (h[(0, 0)] * v[0] + h[(0, 1)] * v[1]),
                -I * (h[(1, 0)] * v[0] + h[(1, 1)] * v[1]),
            ]
        };
        let add = |a: [Complex64; 2], b: [Complex64; 2], s: f64| [a[0] + b[0] * s, a[1] + b[1] * s];
        let n = (t / dt).round() as usize;
        let h_step = t / n as f64;
        let mut y = psi0;
        for _ in 0..n {
            let k1 = f(y);
            let k2 = f(add(y, k1, 0.5 * h_step));
            let k3 = f(add(y, k2, 0.5 * h_step));
            let k4 = f(add(y, k3, h_step));
            y = [
                y[0] + (k1[0] + k2[0] * 2.0 + k3[0] * 2.0 + k4[0]) * (h_step / 6.0),
                y[1] + (k1[1] + k2[1] * 2.0 + k3[1] * 2.0 + k4[1]) * (h_step / 6.0),
            ];
        }
        y
    }

    #[test]
    fn nojump_at_zero_time() {
        let p = SystemParams::real(1.0, 0.5, 5.0).unwrap();
        let (s, surv) = propagate_nojump(&p, &SingleExcState::excited(), 0.0).unwrap();
        assert!((s.c_e0() - c(1.0, 0.0)).norm() < 1e-14);
        assert!((surv - 1.0).abs() < 1e-14);
    }

    #[test]
    fn vacuum_rabi() {
        let p = SystemParams::real(1.0, 0.0, 0.0).unwrap();
        let (s, surv) = propagate_nojump(&p, &SingleExcState::excited(), PI / 2.0).unwrap();
        assert!(s.c_g1().norm() > 1.0 - 1e-12);
        assert!((surv - 1.0).abs() < 1e-12);
        for k in 0..20 {
            let t = 0.17 * k as f64;
            let pe = excited_population(&p, t).unwrap();
            assert!((pe - t.cos().powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn nojump_matches_rk4_oracle() {
        let p = SystemParams::real(1.0, 0.5, 5.0).unwrap();
        let raw = evolve_nojump_amplitudes(&p, &SingleExcState::excited(), 0.7).unwrap();
        let y = rk4_oracle(&p, [c(1.0, 0.0), c(0.0, 0.0)], 0.7, 1e-4);
        assert!((raw.c_e0() - y[0]).norm() < 1e-8);
        assert!((raw.c_g1() - y[1]).norm() < 1e-8);
    }

    #[test]
    fn nojump_closed_coefficient_form() {
        // |ψ(t)⟩ ∝ C₁e^{−iE₁t}u₁ − C₂e^{−iE₂t}u₂, C_n = √(|λ|²+|E_n−Δ|²)/(E_n−Δ)
        let p = SystemParams::real(1.0, 0.3, 5.0).unwrap();
        let es = eigensystem(&p).unwrap();
        for &t in &[0.1, 0.4, 1.3] {
            let mut v = [c(0.0, 0.0); 2];
            for n in 0..2 {
                let e = es.energies[n];
                let cn = (p.lambda.norm_sqr() + (e - p.delta).norm_sqr()).sqrt() / (e - p.delta);
                let sign = if n == 0 { 1.0 } else { -1.0 };
                // unnormalized Eq.-3 vectors: λ*|e,0⟩ + (E−Δ)|g,1⟩ over their norm
                let norm = (p.lambda.norm_sqr() + (e - p.delta).norm_sqr()).sqrt();
                let u = [p.lambda.conj() / norm, (e - p.delta) / norm];
                let w = cn * (-I * e * t).exp() * sign;
                v[0] += w * u[0];
                v[1] += w * u[1];
            }
            let expected = SingleExcState::new(v[0], v[1]).unwrap();
            let (got, _) = propagate_nojump(&p, &SingleExcState::excited(), t).unwrap();
            assert!((got.inner(&expected).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_exponential_at_ep() {
        let p = SystemParams::real(1.25, 0.0, 5.0).unwrap();
        assert!(eigensystem(&p).is_err());
        let raw = evolve_nojump_amplitudes(&p, &SingleExcState::excited(), 0.9).unwrap();
        let y = rk4_oracle(&p, [c(1.0, 0.0), c(0.0, 0.0)], 0.9, 1e-4);
        assert!((raw.c_e0() - y[0]).norm() < 1e-9);
        assert!((raw.c_g1() - y[1]).norm() < 1e-9);
        // off the ring both routes agree
        let q = SystemParams::new(c(0.7, 0.4), -0.8, 5.0).unwrap();
        let a = evolve_nojump_amplitudes(&q, &SingleExcState::photon(), 1.1).unwrap();
        let u = nojump_propagator(&q, 1.1);
        assert!((a.c_e0() - u[(0, 1)]).norm() < 1e-12);
        assert!((a.c_g1() - u[(1, 1)]).norm() < 1e-12);
    }

    #[test]
    fn survival_is_monotone() {
        let p = SystemParams::real(0.9, 0.2, 5.0).unwrap();
        let mut last = 1.0;
        for k in 0..200 {
            let (_, s) = propagate_nojump(&p, &SingleExcState::excited(), 0.02 * k as f64).unwrap();
            assert!(s <= last + 1e-14);
            last = s;
        }
        let herm = SystemParams::real(0.9, 0.2, 0.0).unwrap();
        let (_, s) = propagate_nojump(&herm, &SingleExcState::excited(), 3.0).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vacuum_is_stationary_and_trace_kept() {
        let p = SystemParams::real(1.0, 0.5, 5.0).unwrap();
        let rho = evolve_master(&ThreeLevelDensity::ground(), &p, 1.0, 1e-3).unwrap();
        assert!((rho.0 - ThreeLevelDensity::ground().0).norm() < 1e-14);
        let rho = evolve_master(&ThreeLevelDensity::from_single(&SingleExcState::excited()), &p, 4.0, 1e-3).unwrap();
        assert!((rho.trace() - 1.0).abs() < 1e-8);
        let herm = (rho.0 - rho.0.adjoint()).norm();
        assert!(herm < 1e-8);
    }

    #[test]
    fn unitary_without_decay() {
        let p = SystemParams::real(1.0, 0.5, 0.0).unwrap();
        let s = SingleExcState::new(c(0.6, 0.1), c(0.3, -0.5)).unwrap();
        let rho = evolve_master(&ThreeLevelDensity::from_single(&s), &p, 2.0, 1e-3).unwrap();
        assert!((rho.purity() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn master_block_matches_nojump() {
        let p = SystemParams::real(1.0, 0.5, 5.0).unwrap();
        let rho = evolve_master(&ThreeLevelDensity::from_single(&SingleExcState::excited()), &p, 1.0, 1e-3).unwrap();
        let block = rho.single_excitation_block();
        let tr = block.trace().re;
        let (s, surv) = propagate_nojump(&p, &SingleExcState::excited(), 1.0).unwrap();
        assert!((tr - surv).abs() < 1e-7);
        let proj = nalgebra::Vector2::new(s.c_e0(), s.c_g1());
        let expected = proj * proj.adjoint();
        assert!((block / Complex64::new(tr, 0.0) - expected).norm() < 1e-7);
        assert!((rho.population(0) - (1.0 - surv)).abs() < 1e-7);
    }

    #[test]
    fn rejects_unphysical_initial_density() {
        let p = SystemParams::real(1.0, 0.5, 5.0).unwrap();
        let mut m = ThreeLevelDensity::ground().0;
        m[(0, 0)] = c(2.0, 0.0);
        assert!(evolve_master(&ThreeLevelDensity(m), &p, 1.0, 1e-3).is_err());
    }

    #[test]
    fn no_jumps_without_decay() {
        let p = SystemParams::real(1.0, 0.0, 0.0).unwrap();
        for seed in 0..50 {
            let rec = jump_trajectory(seed, &SingleExcState::excited(), &p, 2.0, 0.01).unwrap();
            assert!(!rec.jumped());
        }
    }

    #[test]
    fn trajectory_is_reproducible() {
        let p = SystemParams::real(1.0, 0.0, 5.0).unwrap();
        let a = jump_trajectory(7, &SingleExcState::excited(), &p, 1.0, 0.01).unwrap();
        let b = jump_trajectory(7, &SingleExcState::excited(), &p, 1.0, 0.01).unwrap();
        assert_eq!(a, b);
        assert!(a.times.windows(2).all(|w| w[1] > w[0]));
        assert!(a.norm_history.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert!(jump_trajectory(7, &SingleExcState::excited(), &p, 1.0, 0.05).is_err());
    }

    #[test]
    fn ensemble_matches_master_equation() {
        let p = SystemParams::real(1.0, 0.0, 5.0).unwrap();
        let summary = jump_ensemble(2024, 10_000, &SingleExcState::excited(), &p, 1.0, 0.01).unwrap();
        let rho = evolve_master(&ThreeLevelDensity::from_single(&SingleExcState::excited()), &p, 1.0, 1e-3).unwrap();
        let g0 = rho.population(0);
        assert!((summary.ground_population - g0).abs() < 3.0 * summary.ground_stderr, "{summary:?} vs {g0}");
        let e0 = rho.population(1);
        assert!((summary.excited_population - e0).abs() < 3.0 * summary.excited_stderr.max(1e-12));
        let (_, surv) = propagate_nojump(&p, &SingleExcState::excited(), 1.0).unwrap();
        assert!((summary.no_jump_fraction - surv).abs() < 3.0 * summary.ground_stderr);
    }

    #[test]
    fn effective_couplings() {
        let d = DriveParams::resonant(257.6, 41_000.0, 4146.9, 0.0);
        assert_eq!(effective_coupling(&d), c(0.0, 0.0));
        let d = DriveParams::resonant(1.0, 41_000.0, 4146.9, 1.8412);
        assert!((effective_coupling(&d).re - 0.5819).abs() < 1e-4);
        let d = DriveParams::resonant(257.6, 41_000.0, 4146.9, 1.0);
        assert_eq!(effective_coupling_detuned(&d, 0.0).unwrap(), effective_coupling(&d));
        assert!(effective_coupling_detuned(&d, -5000.0).is_err());
        // Δ/ν = 0.01 at μ = 1 shifts λ by well under 1%
        let shifted = effective_coupling_detuned(&d, 0.01 * d.nu).unwrap().re;
        let rel = (shifted - effective_coupling(&d).re).abs() / effective_coupling(&d).re;
        assert!(rel < 0.01, "{rel}");
    }

    #[test]
    fn detuned_coupling_first_order() {
        let d = DriveParams::resonant(257.6, 41_000.0, 4146.9, 1.0);
        let delta = 2.0;
        let exact = effective_coupling_detuned(&d, delta).unwrap().re - effective_coupling(&d).re;
        // finite-difference derivative of λ_r·J1(ε/(ν+Δ)) in Δ at 0
        let h = 1e-3;
        let fd = (effective_coupling_detuned(&d, h).unwrap().re - effective_coupling_detuned(&d, -h).unwrap().re) / (2.0 * h);
        let first_order = -d.lambda_r * crate::bessel::bessel_j1_prime(d.mu()) * d.epsilon * delta / (d.nu * d.nu);
        assert!((fd * delta - first_order).abs() < 1e-9);
        assert!((exact - first_order).abs() < 1e-3 * first_order.abs());
    }

    #[test]
    fn unmodulated_exchange_is_suppressed() {
        let nu = 2.0 * PI * 660.0;
        let d = DriveParams::resonant(257.6, 41_000.0, nu, 0.0);
        let trunc = FockTruncation::new(2).unwrap();
        let psi0 = ladder_from_single(&SingleExcState::excited(), &trunc);
        let rec = simulate_driven(&d, &trunc, &psi0, 0.05, 2.0 * PI / nu / 40.0).unwrap();
        let dip = rec.excited_population().into_iter().fold(1.0, f64::min);
        let scale = (d.lambda_r / nu).powi(2);
        assert!(1.0 - dip < 5.0 * scale, "dip {} vs scale {scale}", 1.0 - dip);
    }

    #[test]
    fn driven_input_checks() {
        let nu = 2.0 * PI * 660.0;
        let d = DriveParams::resonant(257.6, 41_000.0, nu, 0.5);
        let trunc = FockTruncation::new(2).unwrap();
        let psi0 = ladder_from_single(&SingleExcState::excited(), &trunc);
        assert!(simulate_driven(&d, &trunc, &psi0, 0.01, 0.1 * 2.0 * PI / nu).is_err());
        assert!(simulate_driven(&d, &trunc, &psi0[..4], 0.01, 1e-5).is_err());
        assert!(FockTruncation::new(0).is_err());
    }

    #[test]
    fn truncation_overflow_detected() {
        let nu = 2.0 * PI * 660.0;
        let d = DriveParams::resonant(257.6, 41_000.0, nu, 1.0);
        let trunc = FockTruncation::new(1).unwrap();
        // |e,1⟩ sits on the top rung
        let mut psi0 = vec![c(0.0, 0.0); trunc.dim()];
        psi0[3] = c(1.0, 0.0);
        assert!(matches!(
            simulate_driven(&d, &trunc, &psi0, 0.001, 1e-5),
            Err(Error::Truncation { .. })
        ));
    }

    #[test]
    fn rabi_fit_recovers_frequency() {
        let times: Vec<f64> = (0..400).map(|k| k as f64 * 0.01).collect();
        let pe: Vec<f64> = times.iter().map(|t| 0.5 + 0.5 * (3.3 * t).cos() + 0.002 * (150.0 * t).sin()).collect();
        let fit = fit_rabi(&times, &pe, 2.0 * PI / 150.0).unwrap();
        assert!((fit.omega - 3.3).abs() < 1e-3, "{fit:?}");
    }

    #[test]
    fn rabi_fit_ignores_ripple_at_mid_level() {
        let omega = 25.0;
        let times: Vec<f64> = (0..2000).map(|k| k as f64 * 1e-3).collect();
        let pe: Vec<f64> = times
            .iter()
            .map(|t| 0.5 + 0.5 * (omega * t).cos() + 0.04 * (37.0 * omega * t).sin())
            .collect();
        let fit = fit_rabi(&times, &pe, 0.0).unwrap();
        assert!((fit.omega / omega - 1.0).abs() < 1e-3, "{}", fit.omega);
    }

    #[test]
    fn sideband_reduction_moderate_scale() {
        // ν = 20 λ_r, μ = 1.5
        let d = DriveParams::resonant(10.0, 5000.0, 200.0, 1.5);
        let trunc = FockTruncation::new(2).unwrap();
        let v = validate_drive(&d, &trunc, 3.0).unwrap();
        assert!((v.ratio() - 1.0).abs() < 0.02, "ratio {}", v.ratio());
        assert!(v.min_excited_population < 0.02);
    }
}
