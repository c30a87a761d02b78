//! Single-excitation non-Hermitian Jaynes-Cummings model.
//!
//! In the basis (|e,0⟩, |g,1⟩) the conditional no-jump generator is
//!
//! ```text
//! H = [[ Δ,  λ* ],
//!      [ λ, −iκ/2 ]]
//! ```
//!
//! which behaves like a spin-1/2 in a field B = (Re λ, Im λ, Δ/2). The
//! eigensystem is available in closed form; the only singular set is the
//! ring |λ| = κ/4, Δ = 0 where the two eigenvectors coalesce.

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on |discriminant| / κ² below which a point is treated
/// as sitting on the exceptional ring.
pub const EP_TOLERANCE: f64 = 1e-12;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub lambda: Complex64,
    pub delta: f64,
    pub kappa: f64,
}

impl SystemParams {
    pub fn new(lambda: Complex64, delta: f64, kappa: f64) -> Result<Self> {
        let p = SystemParams {
            lambda,
            delta,
            kappa,
        };
        p.validate()?;
        Ok(p)
    }

    /// Shorthand for a real coupling.
    pub fn real(lambda: f64, delta: f64, kappa: f64) -> Result<Self> {
        Self::new(Complex64::new(lambda, 0.0), delta, kappa)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.lambda.re.is_finite()
            && self.lambda.im.is_finite()
            && self.delta.is_finite()
            && self.kappa.is_finite();
        if !finite {
            return Err(Error::invalid(format!("non-finite parameters {self:?}")));
        }
        if self.kappa < 0.0 {
            return Err(Error::invalid(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        Ok(())
    }

    pub fn b_vector(&self) -> BVector {
        b_from_params(self)
    }
}

/// Parameter-space vector: bx = Re λ, by = Im λ, bz = Δ/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BVector {
    pub bx: f64,
    pub by: f64,
    pub bz: f64,
}

impl BVector {
    pub fn new(bx: f64, by: f64, bz: f64) -> Self {
        BVector { bx, by, bz }
    }

    pub fn norm(&self) -> f64 {
        (self.bx * self.bx + self.by * self.by + self.bz * self.bz).sqrt()
    }

    pub fn distance(&self, other: &BVector) -> f64 {
        let (dx, dy, dz) = (self.bx - other.bx, self.by - other.by, self.bz - other.bz);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn midpoint(&self, other: &BVector) -> BVector {
        BVector::new(
            0.5 * (self.bx + other.bx),
            0.5 * (self.by + other.by),
            0.5 * (self.bz + other.bz),
        )
    }
}

pub fn params_from_b(b: &BVector, kappa: f64) -> Result<SystemParams> {
    SystemParams::new(Complex64::new(b.bx, b.by), 2.0 * b.bz, kappa)
}

pub fn b_from_params(p: &SystemParams) -> BVector {
    BVector::new(p.lambda.re, p.lambda.im, 0.5 * p.delta)
}

/// Pure state α|e,0⟩ + β|g,1⟩.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleExcState {
    c_e0: Complex64,
    c_g1: Complex64,
    normalized: bool,
}

impl SingleExcState {
    /// Normalizes the amplitudes. Fails on the zero vector.
    pub fn new(c_e0: Complex64, c_g1: Complex64) -> Result<Self> {
        let n = (c_e0.norm_sqr() + c_g1.norm_sqr()).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("cannot normalize a zero or non-finite state"));
        }
        Ok(SingleExcState {
            c_e0: c_e0 / n,
            c_g1: c_g1 / n,
            normalized: true,
        })
    }

    /// Keeps the amplitudes as given (e.g. a decaying no-jump state).
    pub fn unnormalized(c_e0: Complex64, c_g1: Complex64) -> Self {
        SingleExcState {
            c_e0,
            c_g1,
            normalized: false,
        }
    }

    pub fn excited() -> Self {
        SingleExcState {
            c_e0: Complex64::new(1.0, 0.0),
            c_g1: Complex64::new(0.0, 0.0),
            normalized: true,
        }
    }

    pub fn photon() -> Self {
        SingleExcState {
            c_e0: Complex64::new(0.0, 0.0),
            c_g1: Complex64::new(1.0, 0.0),
            normalized: true,
        }
    }

    pub fn c_e0(&self) -> Complex64 {
        self.c_e0
    }

    pub fn c_g1(&self) -> Complex64 {
        self.c_g1
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm_sqr(&self) -> f64 {
        self.c_e0.norm_sqr() + self.c_g1.norm_sqr()
    }

    pub fn normalize(&self) -> Result<Self> {
        Self::new(self.c_e0, self.c_g1)
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &SingleExcState) -> Complex64 {
        self.c_e0.conj() * other.c_e0 + self.c_g1.conj() * other.c_g1
    }

    /// Population of |e,0⟩ relative to the state's norm.
    pub fn population_e0(&self) -> f64 {
        let n = self.norm_sqr();
        if n > 0.0 {
            self.c_e0.norm_sqr() / n
        } else {
            0.0
        }
    }

    pub fn scale(&self, z: Complex64) -> Self {
        SingleExcState {
            c_e0: self.c_e0 * z,
            c_g1: self.c_g1 * z,
            normalized: self.normalized && (z.norm() - 1.0).abs() < 1e-14,
        }
    }

    pub fn to_array(&self) -> [Complex64; 2] {
        [self.c_e0, self.c_g1]
    }
}

/// Bra ⟨u^l| stored by its components, so that ⟨u^l|v⟩ = l_e0·v_e0 + l_g1·v_g1
/// with no conjugation. Not unit norm in general.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeftCoVector {
    pub e0: Complex64,
    pub g1: Complex64,
}

impl LeftCoVector {
    pub fn apply(&self, v: &SingleExcState) -> Complex64 {
        self.e0 * v.c_e0() + self.g1 * v.c_g1()
    }

    pub fn scale(&self, z: Complex64) -> Self {
        LeftCoVector {
            e0: self.e0 * z,
            g1: self.g1 * z,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.e0.norm_sqr() + self.g1.norm_sqr()).sqrt()
    }
}

/// Right eigenvectors (unit norm) with their biorthonormal left partners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiorthEigensystem {
    pub energies: [Complex64; 2],
    pub right: [SingleExcState; 2],
    pub left: [LeftCoVector; 2],
}

impl BiorthEigensystem {
    /// Builds the left co-vectors as the rows of the inverse of [r1 r2].
    pub fn from_right(energies: [Complex64; 2], right: [SingleExcState; 2]) -> Result<Self> {
        let left = biorthogonal_partners(&right)?;
        Ok(BiorthEigensystem {
            energies,
            right,
            left,
        })
    }

    pub fn swapped(&self) -> Self {
        BiorthEigensystem {
            energies: [self.energies[1], self.energies[0]],
            right: [self.right[1], self.right[0]],
            left: [self.left[1], self.left[0]],
        }
    }

    /// Largest deviation of ⟨u_n^l|u_m^r⟩ from δ_nm.
    pub fn biorthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for n in 0..2 {
            for m in 0..2 {
                let target = if n == m { 1.0 } else { 0.0 };
                let v = self.left[n].apply(&self.right[m]);
                worst = worst.max((v - target).norm());
            }
        }
        worst
    }
}

/// Rows of [r1 r2]⁻¹.
pub fn biorthogonal_partners(right: &[SingleExcState; 2]) -> Result<[LeftCoVector; 2]> {
    let (a, b) = (right[0].c_e0(), right[1].c_e0());
    let (c, d) = (right[0].c_g1(), right[1].c_g1());
    let det = a * d - b * c;
    let scale = right[0].norm_sqr().sqrt() * right[1].norm_sqr().sqrt();
    if !(det.norm() > 1e-14 * scale) {
        let overlap = if scale > 0.0 {
            right[0].inner(&right[1]).norm() / scale
        } else {
            1.0
        };
        return Err(Error::DegenerateBasis { overlap });
    }
    Ok([
        LeftCoVector {
            e0: d / det,
            g1: -b / det,
        },
        LeftCoVector {
            e0: -c / det,
            g1: a / det,
        },
    ])
}

pub fn hamiltonian_matrix(p: &SystemParams) -> Matrix2<Complex64> {
    Matrix2::new(
        Complex64::new(p.delta, 0.0),
        p.lambda.conj(),
        p.lambda,
        Complex64::new(0.0, -0.5 * p.kappa),
    )
}

/// |λ|² + (2Δ + iκ)²/16; zero exactly on the exceptional ring.
pub fn discriminant(p: &SystemParams) -> Complex64 {
    let s = Complex64::new(2.0 * p.delta, p.kappa);
    p.lambda.norm_sqr() + s * s / 16.0
}

/// Half the trace, (2Δ − iκ)/4.
pub fn mean_energy(p: &SystemParams) -> Complex64 {
    Complex64::new(0.5 * p.delta, -0.25 * p.kappa)
}

fn ep_threshold(kappa: f64) -> f64 {
    EP_TOLERANCE * kappa * kappa
}

/// Closed-form biorthogonal eigensystem.
///
/// Mode 1 takes the + sign of the principal square root. Labels are local:
/// they are not continuous along paths that wind around the ring.
pub fn eigensystem(p: &SystemParams) -> Result<BiorthEigensystem> {
    p.validate()?;
    let disc = discriminant(p);
    let threshold = ep_threshold(p.kappa);
    if disc.norm() < threshold || disc.norm() == 0.0 {
        return Err(Error::EpProximity {
            discriminant: disc.norm(),
            threshold,
        });
    }
    let mean = mean_energy(p);
    let root = disc.sqrt();
    let det = Complex64::new(p.delta, 0.0) * Complex64::new(0.0, -0.5 * p.kappa) - p.lambda.norm_sqr();
    // the larger root directly, the smaller one through the determinant
    let plus = mean + root;
    let minus = mean - root;
    let (e1, e2) = if plus.norm() >= minus.norm() {
        (plus, det / plus)
    } else {
        (det / minus, minus)
    };
    let energies = [e1, e2];
    let right = [right_eigenvector(p, e1)?, right_eigenvector(p, e2)?];
    BiorthEigensystem::from_right(energies, right)
}

/// Normalized right eigenvector for energy `e`, in the gauge where the
/// |e,0⟩ amplitude is proportional to λ*.
fn right_eigenvector(p: &SystemParams, e: Complex64) -> Result<SingleExcState> {
    let upper = (p.lambda.conj(), e - p.delta);
    let lower = (e + I * (0.5 * p.kappa), p.lambda);
    let n_upper = upper.0.norm_sqr() + upper.1.norm_sqr();
    let n_lower = lower.0.norm_sqr() + lower.1.norm_sqr();
    if n_upper >= n_lower {
        return SingleExcState::new(upper.0, upper.1);
    }
    // (E − Δ)(E + iκ/2) = |λ|², so the two forms differ by λ*/(E + iκ/2)
    let mut phase = if lower.0.norm() > 0.0 {
        lower.0.conj() / lower.0.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    if p.lambda.norm() > 0.0 {
        phase *= p.lambda.conj() / p.lambda.norm();
    }
    SingleExcState::new(lower.0 * phase, lower.1 * phase)
}

/// Euclidean distance from `b` to the exceptional ring of radius κ/4.
pub fn distance_to_wer(b: &BVector, kappa: f64) -> f64 {
    let rho = (b.bx * b.bx + b.by * b.by).sqrt();
    let dr = rho - 0.25 * kappa;
    (dr * dr + b.bz * b.bz).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerGeometry {
    pub kappa: f64,
    pub radius: f64,
}

impl WerGeometry {
    /// Ring point at azimuth `angle` (bz = 0 plane).
    pub fn point(&self, angle: f64) -> BVector {
        BVector::new(self.radius * angle.cos(), self.radius * angle.sin(), 0.0)
    }
}

pub fn wer_geometry(kappa: f64) -> Result<WerGeometry> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::invalid(format!("kappa must be > 0, got {kappa}")));
    }
    Ok(WerGeometry {
        kappa,
        radius: 0.25 * kappa,
    })
}

/// Locates the ring along the Δ = 0 ray λ = r·e^{i·angle} by bisection on
/// the (real) discriminant.
pub fn ring_radius_on_ray(kappa: f64, angle: f64) -> Result<f64> {
    wer_geometry(kappa)?;
    let disc_at = |r: f64| {
        let p = SystemParams {
            lambda: Complex64::from_polar(r, angle),
            delta: 0.0,
            kappa,
        };
        discriminant(&p).re
    };
    let (mut lo, mut hi) = (0.0, kappa);
    if disc_at(lo) >= 0.0 || disc_at(hi) <= 0.0 {
        return Err(Error::invalid("discriminant does not change sign on the ray"));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if disc_at(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
