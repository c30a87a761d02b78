//! Parameter calibration from excited-state populations and extraction of
//! the non-Hermitian eigensystem from density-matrix trajectories.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve_nojump_amplitudes, excited_population};
use crate::error::{Error, Result};
use crate::model::{mean_energy, BiorthEigensystem, SingleExcState, SystemParams};
use crate::seed::rng_from_seed;
use crate::simplex::{nelder_mead, Minimum, SimplexOptions};
use crate::tomography::SubspaceDensity;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Fitted vectors closer to parallel than this are rejected.
pub const DEGENERATE_OVERLAP: f64 = 1.0 - 1e-8;
/// Energy gap (in units of κ) below which a fit is flagged low-confidence.
pub const LOW_CONFIDENCE_GAP: f64 = 0.05;
/// |λ| (in units of κ) below which a fit is flagged unreliable.
pub const UNRELIABLE_COUPLING: f64 = 0.05;
/// χ² increase (six parameters, one standard deviation) within which two
/// parameter sets fit the same densities equally well.
pub const INDISTINGUISHABLE_CHI2: f64 = 7.04;

// ---------------------------------------------------------------------------
// calibration

/// Which model population the calibration data represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PopulationKind {
    /// Population of |e,0⟩ including decayed runs.
    #[default]
    Unconditional,
    /// Population of |e,0⟩ within the no-jump (postselected) ensemble.
    Postselected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub lambda_abs: f64,
    pub delta: f64,
    pub kappa: f64,
    /// Mean squared population error at the minimizer.
    pub residual: f64,
    pub evaluations: usize,
}

impl Calibration {
    pub fn params(&self) -> SystemParams {
        SystemParams {
            lambda: Complex64::new(self.lambda_abs, 0.0),
            delta: self.delta,
            kappa: self.kappa,
        }
    }
}

pub fn model_population(p: &SystemParams, t: f64, kind: PopulationKind) -> Result<f64> {
    match kind {
        PopulationKind::Unconditional => excited_population(p, t),
        PopulationKind::Postselected => {
            Ok(evolve_nojump_amplitudes(p, &SingleExcState::excited(), t)?.population_e0())
        }
    }
}

/// Least-squares fit of (|λ|, Δ) to observed P_e(t), κ fixed at `guess.kappa`.
///
/// The population is even in Δ, so the sign of the returned Δ follows the
/// guess.
pub fn calibrate_params(observed: &[(f64, f64)], guess: &SystemParams, kind: PopulationKind) -> Result<Calibration> {
    guess.validate()?;
    if observed.len() < 8 {
        return Err(Error::invalid(format!("need at least 8 samples, got {}", observed.len())));
    }
    let kappa = guess.kappa;
    let f1 = |x: &[f64]| -> f64 {
        let p = SystemParams {
            lambda: Complex64::new(x[0].abs(), 0.0),
            delta: x[1],
            kappa,
        };
        let mut s = 0.0;
        for &(t, pe) in observed {
            match model_population(&p, t, kind) {
                Ok(v) => s += (pe - v).powi(2),
                Err(_) => return f64::INFINITY,
            }
        }
        s / observed.len() as f64
    };
    let scale = guess.lambda.norm().max(guess.delta.abs()).max(0.1 * kappa).max(1e-3);
    let opts = SimplexOptions {
        max_evals: 4000,
        diameter_tol: 1e-11 * scale,
    };
    let x0 = [guess.lambda.norm(), guess.delta];
    let mut best = nelder_mead(f1, &x0, &[0.1 * scale, 0.1 * scale], &opts);
    // one restart from the first optimum removes premature shrinkage
    let again = nelder_mead(f1, &best.x, &[0.02 * scale, 0.02 * scale], &opts);
    let evaluations = best.evals + again.evals;
    if again.f <= best.f {
        best = again;
    }
    if !best.converged {
        return Err(Error::Convergence {
            what: "calibration".into(),
            best_objective: best.f,
            best_point: best.x,
        });
    }
    let delta = if guess.delta != 0.0 { best.x[1].abs().copysign(guess.delta) } else { best.x[1] };
    Ok(Calibration {
        lambda_abs: best.x[0].abs(),
        delta,
        kappa,
        residual: best.f,
        evaluations,
    })
}

// ---------------------------------------------------------------------------
// eigensystem fit

/// E_n = a_n + i·b_n and |u_n⟩ = √(1−c_n²)|g,1⟩ + c_n·e^{i d_n}|e,0⟩.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenFitParams {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub c: [f64; 2],
    pub d: [f64; 2],
}

impl EigenFitParams {
    /// Traceless-gauge parameters of an eigensystem: the mean energy is
    /// removed and the vectors are put in the canonical (c, d) form.
    pub fn from_eigensystem(es: &BiorthEigensystem) -> Self {
        let m = 0.5 * (es.energies[0] + es.energies[1]);
        let (c1, d1) = canonical_vector(&es.right[0]);
        let (c2, d2) = canonical_vector(&es.right[1]);
        let e = es.energies[0] - m;
        EigenFitParams {
            a: [e.re, -e.re],
            b: [e.im, -e.im],
            c: [c1, c2],
            d: [d1, d2],
        }
    }

    pub fn energies(&self) -> [Complex64; 2] {
        [
            Complex64::new(self.a[0], self.b[0]),
            Complex64::new(self.a[1], self.b[1]),
        ]
    }

    pub fn vector(&self, n: usize) -> SingleExcState {
        let c = self.c[n].clamp(0.0, 1.0);
        SingleExcState::new(
            Complex64::from_polar(c, self.d[n]),
            Complex64::new((1.0 - c * c).max(0.0).sqrt(), 0.0),
        )
        .expect("parameterized vector has unit norm")
    }

    pub fn swapped(&self) -> Self {
        EigenFitParams {
            a: [self.a[1], self.a[0]],
            b: [self.b[1], self.b[0]],
            c: [self.c[1], self.c[0]],
            d: [self.d[1], self.d[0]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.a.iter().chain(&self.b).chain(&self.c).chain(&self.d);
        if all.clone().any(|v| !v.is_finite()) || self.c.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid(format!("invalid fit parameters {self:?}")));
        }
        Ok(())
    }

    /// Eigensystem with energies shifted by `mean` (e.g. (2Δ − iκ)/4 to
    /// return to the physical gauge).
    pub fn to_eigensystem(&self, mean: Complex64) -> Result<BiorthEigensystem> {
        let e = self.energies();
        BiorthEigensystem::from_right([e[0] + mean, e[1] + mean], [self.vector(0), self.vector(1)])
    }

    /// Overall gap |E₁ − E₂|.
    pub fn gap(&self) -> f64 {
        let e = self.energies();
        (e[0] - e[1]).norm()
    }
}

/// (c, d) with the |g,1⟩ amplitude made real and non-negative.
pub fn canonical_vector(s: &SingleExcState) -> (f64, f64) {
    let s = s.normalize().unwrap_or(*s);
    let g = s.c_g1();
    let e = if g.norm() > 0.0 {
        s.c_e0() * g.conj() / g.norm()
    } else {
        s.c_e0()
    };
    (e.norm().min(1.0), if e.norm() > 0.0 { e.arg() } else { 0.0 })
}

/// Normalized ψ(t) = Σ C_n e^{−iE_n t}|u_n⟩ with ψ(0) = |e,0⟩.
pub fn predict_trajectory(params: &EigenFitParams, t: f64) -> Result<SingleExcState> {
    params.validate()?;
    let u = [params.vector(0), params.vector(1)];
    let coeff = initial_coefficients(&u)?;
    combine(&u, &coeff, &params.energies(), t)
}

fn initial_coefficients(u: &[SingleExcState; 2]) -> Result<[Complex64; 2]> {
    let overlap = u[0].inner(&u[1]).norm();
    if overlap > DEGENERATE_OVERLAP {
        return Err(Error::DegenerateBasis { overlap });
    }
    // |e,0⟩ = C₁u₁ + C₂u₂
    let det = u[0].c_e0() * u[1].c_g1() - u[1].c_e0() * u[0].c_g1();
    Ok([u[1].c_g1() / det, -u[0].c_g1() / det])
}

fn combine(u: &[SingleExcState; 2], coeff: &[Complex64; 2], e: &[Complex64; 2], t: f64) -> Result<SingleExcState> {
    let w0 = coeff[0] * (-I * e[0] * t).exp();
    let w1 = coeff[1] * (-I * e[1] * t).exp();
    SingleExcState::new(
        w0 * u[0].c_e0() + w1 * u[1].c_e0(),
        w0 * u[0].c_g1() + w1 * u[1].c_g1(),
    )
}

/// |⟨a|b⟩|² for normalized states.
pub fn eigvec_fidelity(u_fit: &SingleExcState, u_true: &SingleExcState) -> f64 {
    u_fit.inner(u_true).norm_sqr() / (u_fit.norm_sqr() * u_true.norm_sqr())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub kappa: f64,
    /// Coupling magnitude, if known, for the small-coupling flag.
    pub lambda_abs: Option<f64>,
    pub restarts: usize,
    pub seed: u64,
    pub max_evals: usize,
    pub diameter_tol: f64,
    /// Eigensystem whose labels the fitted modes are matched to.
    pub reference: Option<BiorthEigensystem>,
}

impl FitOptions {
    pub fn new(kappa: f64) -> Self {
        FitOptions {
            kappa,
            lambda_abs: None,
            restarts: 8,
            seed: 0,
            max_evals: 5000,
            diameter_tol: 1e-9,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub params: EigenFitParams,
    /// 1 − mean fidelity between the data and the fitted trajectory; 0 for
    /// a perfect fit.
    pub residual: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub fidelities: Vec<f64>,
    /// Eigen-energy gap below 0.05κ: the two modes are hard to separate.
    pub low_confidence: bool,
    /// Coupling below 0.05κ: eigenvectors are poorly constrained.
    pub unreliable: bool,
    pub restart_index: usize,
    /// Standard error of each mode's |e,0⟩ population, from the curvature
    /// of the objective at the minimum; capped at 1.
    pub population_std: [f64; 2],
}

/// Internal coordinates: (a₁, b₁, x₁, d₁, x₂, d₂) with
/// u = cos x|g,1⟩ + sin x·e^{id}|e,0⟩, which keeps the search unbounded.
fn to_internal(p: &EigenFitParams) -> [f64; 6] {
    [p.a[0], p.b[0], p.c[0].clamp(0.0, 1.0).asin(), p.d[0], p.c[1].clamp(0.0, 1.0).asin(), p.d[1]]
}

fn internal_vector(x: f64, d: f64) -> SingleExcState {
    SingleExcState::unnormalized(Complex64::from_polar(x.sin(), d), Complex64::new(x.cos(), 0.0))
}

fn from_internal(x: &[f64]) -> EigenFitParams {
    let (c1, d1) = canonical_vector(&internal_vector(x[2], x[3]));
    let (c2, d2) = canonical_vector(&internal_vector(x[4], x[5]));
    EigenFitParams {
        a: [x[0], -x[0]],
        b: [x[1], -x[1]],
        c: [c1, c2],
        d: [d1, d2],
    }
}

fn mean_fidelity(x: &[f64], data: &[(f64, SubspaceDensity)]) -> Option<Vec<f64>> {
    let u = [internal_vector(x[2], x[3]), internal_vector(x[4], x[5])];
    let coeff = initial_coefficients(&u).ok()?;
    let e = [Complex64::new(x[0], x[1]), Complex64::new(-x[0], -x[1])];
    data.iter()
        .map(|(t, rho)| combine(&u, &coeff, &e, *t).ok().map(|psi| rho.expectation(&psi)))
        .collect()
}

/// Fits eigen-energies and eigenvectors to a trajectory of postselected
/// densities ρ(t_i) of a system prepared in |e,0⟩.
///
/// Minimizes 1 − (1/N)·Σ Tr[ρ_i|ψ(t_i)⟩⟨ψ(t_i)|] over the six free
/// parameters of the traceless gauge with Nelder–Mead, restarted from
/// perturbed copies of the guess; the best run is polished once more.
pub fn fit_eigensystem(
    rhos: &[(f64, SubspaceDensity)],
    guess: &EigenFitParams,
    opts: &FitOptions,
) -> Result<FitReport> {
    if rhos.len() < 12 {
        return Err(Error::invalid(format!("need at least 12 densities, got {}", rhos.len())));
    }
    guess.validate()?;
    for (t, rho) in rhos {
        if !t.is_finite() || (rho.trace() - 1.0).abs() > 1e-8 {
            return Err(Error::invalid(format!("density at t = {t} is not normalized")));
        }
    }
    let objective = |x: &[f64]| -> f64 {
        match mean_fidelity(x, rhos) {
            Some(f) => 1.0 - f.iter().sum::<f64>() / f.len() as f64,
            None => f64::INFINITY,
        }
    };

    let energy_scale = guess.gap().max(0.05 * opts.kappa).max(1e-3);
    let steps = [
        0.1 * energy_scale,
        0.1 * energy_scale,
        0.1,
        0.3,
        0.1,
        0.3,
    ];
    let simplex = SimplexOptions {
        max_evals: opts.max_evals,
        diameter_tol: opts.diameter_tol,
    };
    let x_guess = to_internal(guess);
    let mut rng = rng_from_seed(opts.seed);
    let mut best: Option<(usize, Minimum)> = None;
    let mut total_evals = 0;
    for r in 0..opts.restarts.max(1) {
        let mut x0 = x_guess;
        if r > 0 {
            let jitter = |rng: &mut rand_chacha::ChaCha8Rng, s: f64| s * (2.0 * rng.random::<f64>() - 1.0);
            x0[0] += jitter(&mut rng, 0.2 * energy_scale);
            x0[1] += jitter(&mut rng, 0.2 * energy_scale);
            for k in [2, 4] {
                x0[k] += jitter(&mut rng, 0.2);
                x0[k + 1] += jitter(&mut rng, 0.5);
            }
        }
        let m = nelder_mead(objective, &x0, &steps, &simplex);
        total_evals += m.evals;
        let better = match &best {
            None => true,
            Some((_, b)) => m.f < b.f,
        };
        if better {
            best = Some((r, m));
        }
    }
    let (restart_index, first) = best.expect("at least one restart");
    let polish_steps: Vec<f64> = steps.iter().map(|s| 0.1 * s).collect();
    let polished = nelder_mead(objective, &first.x, &polish_steps, &simplex);
    total_evals += polished.evals;
    let iterations = first.iterations + polished.iterations;
    let m = if polished.f <= first.f { polished } else { first };
    if !m.converged {
        return Err(Error::Convergence {
            what: "eigensystem fit".into(),
            best_objective: m.f,
            best_point: m.x,
        });
    }

    let mut params = from_internal(&m.x);
    params = order_modes(&params, opts.reference.as_ref());
    let fidelities: Vec<f64> = rhos
        .iter()
        .map(|(t, rho)| predict_trajectory(&params, *t).map(|psi| rho.expectation(&psi)))
        .collect::<Result<_>>()?;
    let residual = 1.0 - fidelities.iter().sum::<f64>() / fidelities.len() as f64;
    let mut population_std = population_std(&params, rhos, residual, energy_scale);
    if let Some(reference) = &opts.reference {
        // a model the data cannot tell apart from the fit bounds the error
        let alt = EigenFitParams::from_eigensystem(reference);
        let alt_residual = rhos
            .iter()
            .map(|(t, rho)| predict_trajectory(&alt, *t).map(|psi| 1.0 - rho.expectation(&psi)))
            .sum::<Result<f64>>()
            .map(|s| s / rhos.len() as f64);
        let dof = (2 * rhos.len()).saturating_sub(6).max(1) as f64;
        if let Ok(alt_residual) = alt_residual {
            if dof * (alt_residual - residual) <= INDISTINGUISHABLE_CHI2 * residual.max(f64::MIN_POSITIVE) {
                for n in 0..2 {
                    let gap = (params.vector(n).population_e0() - alt.vector(n).population_e0()).abs();
                    population_std[n] = population_std[n].max(gap);
                }
            }
        }
    }
    let low_confidence = params.gap() < LOW_CONFIDENCE_GAP * opts.kappa;
    let unreliable = opts.lambda_abs.is_some_and(|l| l < UNRELIABLE_COUPLING * opts.kappa);
    Ok(FitReport {
        params,
        residual,
        iterations,
        evaluations: total_evals,
        converged: true,
        fidelities,
        low_confidence,
        unreliable,
        restart_index,
        population_std,
    })
}

/// Traceless H = [[h, p], [q, −h]] in the (|e,0⟩, |g,1⟩) basis as six
/// reals (Re h, Im h, Re p, Im p, Re q, Im q).
fn hamiltonian_coords(params: &EigenFitParams) -> Result<[f64; 6]> {
    let es = params.to_eigensystem(Complex64::new(0.0, 0.0))?;
    let el = |i: usize, j: usize| -> Complex64 {
        (0..2)
            .map(|n| {
                let r = [es.right[n].c_e0(), es.right[n].c_g1()];
                let l = [es.left[n].e0, es.left[n].g1];
                es.energies[n] * r[i] * l[j]
            })
            .sum()
    };
    let (h, p, q) = (0.5 * (el(0, 0) - el(1, 1)), el(0, 1), el(1, 0));
    Ok([h.re, h.im, p.re, p.im, q.re, q.im])
}

fn split_coords(y: &[f64]) -> (Complex64, Complex64, Complex64) {
    (Complex64::new(y[0], y[1]), Complex64::new(y[2], y[3]), Complex64::new(y[4], y[5]))
}

/// e^{−iHt}|e,0⟩ for traceless H, from H² = (h² + pq)·I.
fn coords_trajectory(y: &[f64], t: f64) -> SingleExcState {
    let (h, p, q) = split_coords(y);
    let z = (h * h + p * q).sqrt() * t;
    let sinc = if z.norm() < 1e-8 { Complex64::new(1.0, 0.0) - z * z / 6.0 } else { z.sin() / z };
    SingleExcState::unnormalized(z.cos() - I * t * sinc * h, -I * t * sinc * q)
}

/// |e,0⟩ population of the eigenvector of H whose energy is nearest `target`.
fn coords_population(y: &[f64], target: Complex64) -> f64 {
    let (h, p, q) = split_coords(y);
    let root = (h * h + p * q).sqrt();
    let e = if (root - target).norm() <= (-root - target).norm() { root } else { -root };
    // two gauges of the same vector; use the better conditioned one
    let (a, b) = (p, e - h);
    let (c, d) = (e + h, q);
    let (u, v) = if a.norm_sqr() + b.norm_sqr() >= c.norm_sqr() + d.norm_sqr() { (a, b) } else { (c, d) };
    let n = u.norm_sqr() + v.norm_sqr();
    if n > 0.0 {
        u.norm_sqr() / n
    } else {
        0.5
    }
}

/// Linearized standard errors of the two |e,0⟩ populations. The curvature
/// is taken in the Hamiltonian elements, which determine the trajectory
/// smoothly even where the fitted eigenvectors nearly coincide. The
/// objective is a mean of n squared-residual pairs, so
/// cov ≈ 2·S/(2n − 6)·(∇²S)⁻¹.
fn population_std(params: &EigenFitParams, rhos: &[(f64, SubspaceDensity)], f0: f64, energy_scale: f64) -> [f64; 2] {
    const P: usize = 6;
    let Ok(y0) = hamiltonian_coords(params) else {
        return [1.0, 1.0];
    };
    let objective = |y: &[f64]| -> f64 {
        let mut s = 0.0;
        for (t, rho) in rhos {
            match coords_trajectory(y, *t).normalize() {
                Ok(psi) => s += rho.expectation(&psi),
                Err(_) => return f64::INFINITY,
            }
        }
        1.0 - s / rhos.len() as f64
    };
    let h = 1e-3 * energy_scale;
    let at = |d: &[(usize, f64)]| {
        let mut y = y0;
        for &(k, s) in d {
            y[k] += s * h;
        }
        y
    };
    let mut hess = nalgebra::SMatrix::<f64, P, P>::zeros();
    for i in 0..P {
        hess[(i, i)] = (objective(&at(&[(i, 1.0)])) - 2.0 * f0 + objective(&at(&[(i, -1.0)]))) / (h * h);
        for j in 0..i {
            let v = (objective(&at(&[(i, 1.0), (j, 1.0)])) - objective(&at(&[(i, 1.0), (j, -1.0)]))
                - objective(&at(&[(i, -1.0), (j, 1.0)]))
                + objective(&at(&[(i, -1.0), (j, -1.0)])))
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    if !hess.iter().all(|v| v.is_finite()) {
        return [1.0, 1.0];
    }
    let eig = nalgebra::SymmetricEigen::new(hess);
    let floor = 1e-12 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let mut inv = nalgebra::SMatrix::<f64, P, P>::zeros();
    for k in 0..P {
        let v = eig.eigenvectors.column(k);
        inv += v * v.transpose() / eig.eigenvalues[k].max(floor);
    }
    let sigma2 = 2.0 * f0.max(0.0) / (2 * rhos.len()).saturating_sub(P).max(1) as f64;
    let energies = params.energies();
    [0, 1].map(|n| {
        let mut g = nalgebra::SVector::<f64, P>::zeros();
        for k in 0..P {
            g[k] = (coords_population(&at(&[(k, 1.0)]), energies[n]) - coords_population(&at(&[(k, -1.0)]), energies[n]))
                / (2.0 * h);
        }
        (sigma2 * (g.transpose() * inv * g)[(0, 0)]).max(0.0).sqrt().min(1.0)
    })
}

/// With a reference, mode n is the fitted mode of largest overlap with the
/// reference mode n; otherwise mode 1 is the one with Re(E₁ − E₂) > 0
/// (ties: Im(E₁ − E₂) ≥ 0), matching the principal-root convention.
fn order_modes(p: &EigenFitParams, reference: Option<&BiorthEigensystem>) -> EigenFitParams {
    match reference {
        Some(r) => {
            let keep = eigvec_fidelity(&p.vector(0), &r.right[0]) + eigvec_fidelity(&p.vector(1), &r.right[1]);
            let swap = eigvec_fidelity(&p.vector(1), &r.right[0]) + eigvec_fidelity(&p.vector(0), &r.right[1]);
            if swap > keep {
                p.swapped()
            } else {
                *p
            }
        }
        None => {
            let e = p.energies();
            let diff = e[0] - e[1];
            if diff.re < 0.0 || (diff.re == 0.0 && diff.im < 0.0) {
                p.swapped()
            } else {
                *p
            }
        }
    }
}

/// Default sampling window: one coherent period 2π/|Re(E₁ − E₂)|, capped at
/// 4/κ; `n` points excluding t = 0.
pub fn default_time_grid(p: &SystemParams, n: usize) -> Result<Vec<f64>> {
    p.validate()?;
    let disc = crate::model::discriminant(p);
    let gap_re = 2.0 * disc.sqrt().re.abs();
    let mut window = if p.kappa > 0.0 { 4.0 / p.kappa } else { f64::INFINITY };
    if gap_re > 0.0 {
        window = window.min(2.0 * std::f64::consts::PI / gap_re);
    }
    if !window.is_finite() {
        return Err(Error::invalid("no finite time scale for κ = 0 and zero gap"));
    }
    Ok((1..=n).map(|k| window * k as f64 / n as f64).collect())
}

/// Fitted energies in the physical gauge of `p`.
pub fn physical_energies(params: &EigenFitParams, p: &SystemParams) -> [Complex64; 2] {
    let m = mean_energy(p);
    let e = params.energies();
    [e[0] + m, e[1] + m]
}
