//! Synthetic measurement layer: the damping picked up while mapping the
//! qubit–resonator state onto two qubits, projective two-qubit tomography
//! with shot noise, linear-inversion reconstruction, and postselection onto
//! the single-excitation subspace.
//!
//! Two-qubit basis order is (|gg⟩, |ge⟩, |eg⟩, |ee⟩). The first factor is
//! the ancilla holding the qubit excitation, the second holds the resonator
//! photon, so α|e,0⟩ + β|g,1⟩ maps to α′|eg⟩ + β′|ge⟩. Z|g⟩ = +|g⟩.

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::dynamics::ThreeLevelDensity;
use crate::error::{Error, Result};
use crate::model::SingleExcState;
use crate::seed::rng_from_seed;
use crate::units::MAPPING_T2;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Index of |g,1⟩ → |ge⟩ and |e,0⟩ → |eg⟩ in the two-qubit basis.
const IDX_G1: usize = 1;
const IDX_E0: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappingDelays {
    /// Q → R_b → Q_a mapping time (µs).
    pub t1: f64,
    /// R → Q mapping time (µs).
    pub t2: f64,
    pub kappa: f64,
}

impl MappingDelays {
    pub fn new(t1: f64, t2: f64, kappa: f64) -> Result<Self> {
        let d = MappingDelays { t1, t2, kappa };
        d.validate()?;
        Ok(d)
    }

    /// t1 = 0 and the measured resonator readout delay.
    pub fn standard(kappa: f64) -> Self {
        MappingDelays {
            t1: 0.0,
            t2: MAPPING_T2,
            kappa,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.t1.is_finite() && self.t2.is_finite() && self.kappa.is_finite();
        if !ok || self.t1 < 0.0 || self.t2 < 0.0 || self.kappa < 0.0 {
            return Err(Error::invalid(format!("invalid mapping delays {self:?}")));
        }
        Ok(())
    }

    /// Amplitude factor e^{−κ(t1/2 + t2/4)} on the photon component.
    pub fn photon_amplitude_factor(&self) -> f64 {
        (-self.kappa * (0.5 * self.t1 + 0.25 * self.t2)).exp()
    }
}

/// Renormalized state after the photon component has been damped during
/// the mapping: α′ = α/√Z, β′ = β·e^{−κ(t1/2+t2/4)}/√Z with
/// Z = |α|² + |β|²·e^{−κ(t1+t2/2)}.
pub fn apply_mapping_channel(state: &SingleExcState, d: &MappingDelays) -> Result<SingleExcState> {
    d.validate()?;
    let s = require_normalized(state)?;
    let k = d.photon_amplitude_factor();
    SingleExcState::new(s.c_e0(), s.c_g1() * k)
}

pub fn invert_mapping_correction(state: &SingleExcState, d: &MappingDelays) -> Result<SingleExcState> {
    d.validate()?;
    let s = require_normalized(state)?;
    let k = d.photon_amplitude_factor();
    SingleExcState::new(s.c_e0(), s.c_g1() / k)
}

fn require_normalized(s: &SingleExcState) -> Result<SingleExcState> {
    if (s.norm_sqr() - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("state not normalized (norm² = {})", s.norm_sqr())));
    }
    Ok(*s)
}

/// Density matrix on (|e,0⟩, |g,1⟩).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceDensity(pub Matrix2<Complex64>);

impl SubspaceDensity {
    pub fn from_state(s: &SingleExcState) -> Self {
        let v = nalgebra::Vector2::new(s.c_e0(), s.c_g1());
        SubspaceDensity(v * v.adjoint() / Complex64::new(s.norm_sqr(), 0.0))
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    /// ⟨ψ|ρ|ψ⟩ for a normalized ψ.
    pub fn expectation(&self, s: &SingleExcState) -> f64 {
        let v = nalgebra::Vector2::new(s.c_e0(), s.c_g1());
        (v.adjoint() * self.0 * v)[(0, 0)].re / s.norm_sqr()
    }

    pub fn normalized(&self) -> Result<Self> {
        let tr = self.trace();
        if !(tr > 0.0) {
            return Err(Error::invalid("density with non-positive trace"));
        }
        Ok(SubspaceDensity(self.0 / Complex64::new(tr, 0.0)))
    }
}

/// Undoes the photon damping on a postselected density: K⁻¹ρK⁻¹† / tr.
pub fn invert_mapping_density(rho: &SubspaceDensity, d: &MappingDelays) -> Result<SubspaceDensity> {
    d.validate()?;
    let k = d.photon_amplitude_factor();
    let kinv = Matrix2::new(ONE, ZERO, ZERO, Complex64::new(1.0 / k, 0.0));
    SubspaceDensity(kinv * rho.0 * kinv).normalized()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoQubitDensity(pub Matrix4<Complex64>);

impl TwoQubitDensity {
    pub fn new(m: Matrix4<Complex64>) -> Result<Self> {
        let rho = TwoQubitDensity(m);
        rho.validate()?;
        Ok(rho)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.0;
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("density matrix has non-finite entries"));
        }
        let herm = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > 1e-10 {
            return Err(Error::invalid(format!("density matrix not Hermitian ({herm:e})")));
        }
        let tr = m.trace();
        if (tr - ONE).norm() > 1e-10 {
            return Err(Error::invalid(format!("density matrix trace {tr} != 1")));
        }
        let min = SymmetricEigen::new(*m).eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        if min < -1e-8 {
            return Err(Error::invalid(format!("density matrix has eigenvalue {min:e} < 0")));
        }
        Ok(())
    }

    pub fn pure(v: &Vector4<Complex64>) -> Result<Self> {
        let n = v.norm_squared();
        if !(n > 0.0) {
            return Err(Error::invalid("zero state vector"));
        }
        Ok(TwoQubitDensity(v * v.adjoint() / Complex64::new(n, 0.0)))
    }

    /// Row-major (re, im) pairs.
    pub fn to_rows(&self) -> Vec<Vec<[f64; 2]>> {
        (0..4).map(|r| (0..4).map(|c| [self.0[(r, c)].re, self.0[(r, c)].im]).collect()).collect()
    }

    pub fn maximally_mixed() -> Self {
        TwoQubitDensity(Matrix4::identity() * Complex64::new(0.25, 0.0))
    }

    pub fn ground() -> Self {
        let mut m = Matrix4::zeros();
        m[(0, 0)] = ONE;
        TwoQubitDensity(m)
    }

    pub fn fidelity_pure(&self, v: &Vector4<Complex64>) -> f64 {
        (v.adjoint() * self.0 * v)[(0, 0)].re / v.norm_squared()
    }

    /// ½‖ρ − σ‖₁
    pub fn trace_distance(&self, other: &TwoQubitDensity) -> f64 {
        let diff = self.0 - other.0;
        0.5 * SymmetricEigen::new(diff).eigenvalues.iter().map(|v| v.abs()).sum::<f64>()
    }
}

/// α|eg⟩ + β|ge⟩ for α|e,0⟩ + β|g,1⟩.
pub fn two_qubit_vector(state: &SingleExcState) -> Vector4<Complex64> {
    let mut v = Vector4::zeros();
    v[IDX_E0] = state.c_e0();
    v[IDX_G1] = state.c_g1();
    v
}

pub fn embed_two_qubit(state: &SingleExcState) -> Result<TwoQubitDensity> {
    let s = require_normalized(state)?;
    TwoQubitDensity::pure(&two_qubit_vector(&s))
}

/// |g,0⟩ → |gg⟩, |e,0⟩ → |eg⟩, |g,1⟩ → |ge⟩.
pub fn embed_three_level(rho: &ThreeLevelDensity) -> TwoQubitDensity {
    let map = [0usize, IDX_E0, IDX_G1];
    let mut m = Matrix4::zeros();
    for (a, &ia) in map.iter().enumerate() {
        for (b, &ib) in map.iter().enumerate() {
            m[(ia, ib)] = rho.0[(a, b)];
        }
    }
    TwoQubitDensity(m)
}

/// Mapping as a trace-preserving amplitude-damping channel on the photon:
/// lost photon weight ends in |gg⟩. Postselecting the single-excitation
/// block reproduces [`apply_mapping_channel`].
pub fn mapping_channel_density(rho: &ThreeLevelDensity, d: &MappingDelays) -> Result<TwoQubitDensity> {
    d.validate()?;
    let k = d.photon_amplitude_factor();
    let mut out = rho.0;
    for j in 0..3 {
        out[(2, j)] *= k;
        out[(j, 2)] *= k;
    }
    out[(0, 0)] += rho.0[(2, 2)] * (1.0 - k * k);
    Ok(embed_three_level(&ThreeLevelDensity(out)))
}

// ---------------------------------------------------------------------------
// Pauli algebra

fn pauli(i: usize) -> Matrix2<Complex64> {
    match i {
        0 => Matrix2::identity(),
        1 => Matrix2::new(ZERO, ONE, ONE, ZERO),
        2 => Matrix2::new(ZERO, -I, I, ZERO),
        3 => Matrix2::new(ONE, ZERO, ZERO, -ONE),
        _ => unreachable!("Pauli index out of range"),
    }
}

pub fn kron(a: &Matrix2<Complex64>, b: &Matrix2<Complex64>) -> Matrix4<Complex64> {
    Matrix4::from_fn(|r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

/// (i, j) pairs in the order of [`pauli_expectations`]: lexicographic over
/// {I, X, Y, Z}², skipping (I, I).
pub fn pauli_labels() -> [(usize, usize); 15] {
    let mut out = [(0, 0); 15];
    let mut k = 0;
    for i in 0..4 {
        for j in 0..4 {
            if i + j > 0 {
                out[k] = (i, j);
                k += 1;
            }
        }
    }
    out
}

pub fn pauli_name(i: usize, j: usize) -> String {
    const N: [char; 4] = ['I', 'X', 'Y', 'Z'];
    format!("{}{}", N[i], N[j])
}

/// ⟨σ_i ⊗ σ_j⟩ for all (i, j) ≠ (0, 0).
pub fn pauli_expectations(rho: &TwoQubitDensity) -> [f64; 15] {
    let mut out = [0.0; 15];
    for (k, (i, j)) in pauli_labels().iter().enumerate() {
        out[k] = (rho.0 * kron(&pauli(*i), &pauli(*j))).trace().re;
    }
    out
}

/// ρ = ¼·Σ ⟨σ_i⊗σ_j⟩ σ_i⊗σ_j, without any physicality correction.
pub fn density_from_expectations(exp: &[f64; 15]) -> Matrix4<Complex64> {
    let mut m = Matrix4::identity() * Complex64::new(0.25, 0.0);
    for (k, (i, j)) in pauli_labels().iter().enumerate() {
        m += kron(&pauli(*i), &pauli(*j)) * Complex64::new(0.25 * exp[k], 0.0);
    }
    m
}

// ---------------------------------------------------------------------------
// measurement

/// Single-qubit measurement axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    fn pauli_index(self) -> usize {
        match self {
            Axis::X => 1,
            Axis::Y => 2,
            Axis::Z => 3,
        }
    }

    /// Eigenvectors for outcomes +1 (index 0) and −1 (index 1).
    fn eigenvectors(self) -> [[Complex64; 2]; 2] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let h = Complex64::new(s, 0.0);
        match self {
            Axis::X => [[h, h], [h, -h]],
            Axis::Y => [[h, I * s], [h, -I * s]],
            Axis::Z => [[ONE, ZERO], [ZERO, ONE]],
        }
    }
}

/// Product basis measured on (first, second) qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisSetting {
    pub first: Axis,
    pub second: Axis,
}

impl BasisSetting {
    pub fn all() -> Vec<BasisSetting> {
        let mut out = Vec::with_capacity(9);
        for first in Axis::ALL {
            for second in Axis::ALL {
                out.push(BasisSetting { first, second });
            }
        }
        out
    }

    /// Outcome vectors, index 2·o₁ + o₂ with o = 0 for eigenvalue +1.
    fn outcome_vectors(&self) -> [Vector4<Complex64>; 4] {
        let a = self.first.eigenvectors();
        let b = self.second.eigenvectors();
        let mut out = [Vector4::zeros(); 4];
        for oa in 0..2 {
            for ob in 0..2 {
                out[2 * oa + ob] = Vector4::from_fn(|r, _| a[oa][r / 2] * b[ob][r % 2]);
            }
        }
        out
    }
}

pub fn born_probabilities(rho: &TwoQubitDensity, setting: &BasisSetting) -> [f64; 4] {
    let mut p = [0.0; 4];
    for (k, v) in setting.outcome_vectors().iter().enumerate() {
        p[k] = (v.adjoint() * rho.0 * v)[(0, 0)].re.max(0.0);
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

/// Multinomial draw of `shots` outcomes, as a chain of conditional binomials.
pub fn sample_counts(rho: &TwoQubitDensity, setting: &BasisSetting, shots: u64, rng_seed: u64) -> Result<[u64; 4]> {
    if shots < 1 {
        return Err(Error::invalid("shots must be >= 1"));
    }
    let p = born_probabilities(rho, setting);
    let mut rng = rng_from_seed(rng_seed);
    let mut counts = [0u64; 4];
    let mut remaining = shots;
    let mut mass = 1.0;
    for k in 0..3 {
        if remaining == 0 {
            break;
        }
        let q = if mass > 0.0 { (p[k] / mass).clamp(0.0, 1.0) } else { 0.0 };
        let draw = Binomial::new(remaining, q)
            .map_err(|e| Error::invalid(format!("binomial parameters: {e}")))?
            .sample(&mut rng);
        counts[k] = draw;
        remaining -= draw;
        mass -= p[k];
    }
    counts[3] = remaining;
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub setting: BasisSetting,
    pub counts: [u64; 4],
}

/// Pauli expectations estimated from counts in all nine product bases.
/// Single-qubit terms average the marginals over the three partner settings.
pub fn expectations_from_counts(records: &[MeasurementRecord]) -> Result<[f64; 15]> {
    let mut freq: std::collections::HashMap<BasisSetting, [f64; 4]> = Default::default();
    for r in records {
        let n: u64 = r.counts.iter().sum();
        if n == 0 {
            return Err(Error::invalid("measurement record with zero shots"));
        }
        let f = r.counts.map(|c| c as f64 / n as f64);
        if freq.insert(r.setting, f).is_some() {
            return Err(Error::invalid(format!("duplicate basis setting {:?}", r.setting)));
        }
    }
    for s in BasisSetting::all() {
        if !freq.contains_key(&s) {
            return Err(Error::invalid(format!("incomplete basis set: missing {s:?}")));
        }
    }
    let sign = |o: usize| if o == 0 { 1.0 } else { -1.0 };
    let mut out = [0.0; 15];
    for (k, (i, j)) in pauli_labels().iter().enumerate() {
        let mut acc = 0.0;
        let mut n = 0.0;
        for s in BasisSetting::all() {
            let fa = s.first.pauli_index();
            let fb = s.second.pauli_index();
            if (*i != 0 && *i != fa) || (*j != 0 && *j != fb) {
                continue;
            }
            let f = freq[&s];
            let mut e = 0.0;
            for o in 0..4 {
                let (oa, ob) = (o / 2, o % 2);
                let va = if *i == 0 { 1.0 } else { sign(oa) };
                let vb = if *j == 0 { 1.0 } else { sign(ob) };
                e += f[o] * va * vb;
            }
            acc += e;
            n += 1.0;
        }
        out[k] = acc / n;
    }
    Ok(out)
}

/// Tomographic input: raw counts or exact expectation values.
#[derive(Debug, Clone, PartialEq)]
pub enum TomographyData {
    Counts(Vec<MeasurementRecord>),
    Expectations([f64; 15]),
}

/// Linear inversion followed by projection onto the physical states.
pub fn reconstruct_density(data: &TomographyData) -> Result<TwoQubitDensity> {
    let exp = match data {
        TomographyData::Counts(records) => expectations_from_counts(records)?,
        TomographyData::Expectations(e) => *e,
    };
    let raw = density_from_expectations(&exp);
    Ok(TwoQubitDensity(project_to_physical(&raw)))
}

/// Closest unit-trace positive matrix in Frobenius norm (Smolin, Gambetta and
/// Smith). Negative weight is removed from the smallest eigenvalues upward and
/// spread evenly over the ones that remain.
pub fn project_to_physical(m: &Matrix4<Complex64>) -> Matrix4<Complex64> {
    let herm = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let tr: f64 = eig.eigenvalues.iter().sum();
    let mut mu: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k] + (1.0 - tr) / 4.0).collect();
    let mut excess = 0.0;
    let mut kept = 4;
    while kept > 0 && mu[kept - 1] + excess / kept as f64 <= 0.0 {
        excess += mu[kept - 1];
        mu[kept - 1] = 0.0;
        kept -= 1;
    }
    let shift = excess / kept.max(1) as f64;
    let mut out = Matrix4::zeros();
    for (i, &k) in order.iter().enumerate().take(kept) {
        let v = eig.eigenvectors.column(k);
        out += v * v.adjoint() * Complex64::new(mu[i] + shift, 0.0);
    }
    out
}

/// Keeps the {|eg⟩, |ge⟩} block, returned on (|e,0⟩, |g,1⟩) and normalized,
/// with the probability of the postselection.
pub fn project_single_excitation(rho: &TwoQubitDensity) -> Result<(SubspaceDensity, f64)> {
    let idx = [IDX_E0, IDX_G1];
    let block = Matrix2::from_fn(|r, c| rho.0[(idx[r], idx[c])]);
    let prob = block.trace().re;
    if !(prob > 1e-6) {
        return Err(Error::PostselectionFailure { probability: prob });
    }
    Ok((SubspaceDensity(block / Complex64::new(prob, 0.0)), prob))
}

/// Measures `rho` in all nine product bases. Setting k uses the seed
/// `derive_seed(seed, k)`.
pub fn simulate_tomography(rho: &TwoQubitDensity, shots: Option<u64>, seed: u64) -> Result<TomographyData> {
    match shots {
        None => Ok(TomographyData::Expectations(pauli_expectations(rho))),
        Some(n) => {
            let mut records = Vec::with_capacity(9);
            for (k, setting) in BasisSetting::all().into_iter().enumerate() {
                let counts = sample_counts(rho, &setting, n, crate::seed::derive_seed(seed, k as u64))?;
                records.push(MeasurementRecord { setting, counts });
            }
            Ok(TomographyData::Counts(records))
        }
    }
}
