//! Topological invariants of the exceptional ring: Berry phases on loops in
//! the B_x–B_z plane and Chern numbers on spheres about the origin.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Mutex;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    discriminant, eigensystem, mean_energy, params_from_b, BVector, BiorthEigensystem, LeftCoVector,
    SingleExcState, SystemParams,
};

/// Source of biorthogonal eigensystems at parameter points: the closed form
/// or eigensystems fitted to simulated measurements.
pub trait EigenSource {
    fn eigensystem_at(&self, b: &BVector) -> Result<BiorthEigensystem>;

    /// Eigensystem together with a standard error of each mode's |e,0⟩
    /// population; exact sources report zero.
    fn eigensystem_with_std(&self, b: &BVector) -> Result<(BiorthEigensystem, [f64; 2])> {
        Ok((self.eigensystem_at(b)?, [0.0; 2]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticSource {
    pub kappa: f64,
}

impl EigenSource for AnalyticSource {
    fn eigensystem_at(&self, b: &BVector) -> Result<BiorthEigensystem> {
        eigensystem(&params_from_b(b, self.kappa)?)
    }
}

impl<F> EigenSource for F
where
    F: Fn(&BVector) -> Result<BiorthEigensystem>,
{
    fn eigensystem_at(&self, b: &BVector) -> Result<BiorthEigensystem> {
        self(b)
    }
}

/// Memoizes another source. Points are keyed on B rounded to 1e-9 rad/µs,
/// so the second traversal of a loop reuses the first one's eigensystems.
type Entry = (BiorthEigensystem, [f64; 2]);

#[derive(Debug)]
pub struct CachedSource<S> {
    pub inner: S,
    cache: Mutex<HashMap<[i64; 3], Entry>>,
}

impl<S> CachedSource<S> {
    pub fn new(inner: S) -> Self {
        CachedSource {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.cache.lock().map(|c| c.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn quantized_key(b: &BVector) -> [i64; 3] {
    [b.bx, b.by, b.bz].map(|v| (v * 1e9).round() as i64)
}

impl<S: EigenSource> EigenSource for CachedSource<S> {
    fn eigensystem_at(&self, b: &BVector) -> Result<BiorthEigensystem> {
        Ok(self.eigensystem_with_std(b)?.0)
    }

    fn eigensystem_with_std(&self, b: &BVector) -> Result<(BiorthEigensystem, [f64; 2])> {
        let key = quantized_key(b);
        if let Some(hit) = self.cache.lock().ok().and_then(|c| c.get(&key).cloned()) {
            return Ok(hit);
        }
        let value = self.inner.eigensystem_with_std(b)?;
        if let Ok(mut c) = self.cache.lock() {
            c.insert(key, value);
        }
        Ok(value)
    }
}

/// Nested bisections allowed when two consecutive points cannot be matched.
pub const DEFAULT_REFINE_DEPTH: u32 = 12;

// ---------------------------------------------------------------------------
// loops

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cycles {
    One,
    Two,
    /// One cycle, extended to two when the modes swap.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopSpec {
    pub center_bx: f64,
    pub center_bz: f64,
    pub radius: f64,
    /// Points per cycle.
    pub steps: usize,
    pub cycles: Cycles,
}

impl LoopSpec {
    /// Loop centered at (B_x, B_z) = (κ/2, 0).
    pub fn centered(kappa: f64, radius: f64, steps: usize) -> Self {
        LoopSpec {
            center_bx: 0.5 * kappa,
            center_bz: 0.0,
            radius,
            steps,
            cycles: Cycles::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.center_bx.is_finite() && self.center_bz.is_finite() && self.radius.is_finite();
        if !finite || self.radius < 0.0 || self.steps < 4 {
            return Err(Error::invalid(format!("invalid loop {self:?}")));
        }
        Ok(())
    }

    pub fn point(&self, angle: f64) -> BVector {
        BVector::new(
            self.center_bx + self.radius * angle.cos(),
            0.0,
            self.center_bz + self.radius * angle.sin(),
        )
    }

    fn angle(&self, p: usize) -> f64 {
        2.0 * PI * p as f64 / self.steps as f64
    }
}

/// P·cycles + 1 points; the last coincides with the first.
pub fn loop_points(spec: &LoopSpec, cycles: usize) -> Vec<BVector> {
    let mut pts: Vec<BVector> = (0..spec.steps * cycles).map(|p| spec.point(spec.angle(p))).collect();
    pts.push(spec.point(0.0));
    pts
}

// ---------------------------------------------------------------------------
// mode tracking

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTrack {
    pub points: Vec<BVector>,
    pub energies: Vec<[Complex64; 2]>,
    pub right: Vec<[SingleExcState; 2]>,
    pub left: Vec<[LeftCoVector; 2]>,
    /// Whether the labels came back exchanged after one cycle (loops only).
    pub permutation_after_cycle: Option<bool>,
}

impl ModeTrack {
    fn push(&mut self, b: BVector, es: &BiorthEigensystem) {
        self.points.push(b);
        self.energies.push(es.energies);
        self.right.push(es.right);
        self.left.push(es.left);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn eigensystem(&self, p: usize) -> BiorthEigensystem {
        BiorthEigensystem {
            energies: self.energies[p],
            right: self.right[p],
            left: self.left[p],
        }
    }

    /// Smallest |⟨u_p|u_{p+1}⟩| along the track, over both modes.
    pub fn min_right_overlap(&self) -> f64 {
        let mut worst: f64 = 1.0;
        for p in 1..self.len() {
            for n in 0..2 {
                worst = worst.min(self.right[p - 1][n].inner(&self.right[p][n]).norm());
            }
        }
        worst
    }
}

enum Match {
    Keep,
    Swap,
    Ambiguous(f64),
}

/// Decides the labelling of `next` relative to `prev` from the biorthogonal
/// overlaps ⟨l_prev,n|r_next,m⟩, which stay discriminating close to an
/// exceptional point where the right vectors nearly coalesce. The matched
/// right vectors must also overlap by more than 1/√2.
fn match_modes(prev: &BiorthEigensystem, next: &BiorthEigensystem) -> Match {
    let m = |n: usize, k: usize| prev.left[n].apply(&next.right[k]);
    let keep = (m(0, 0) * m(1, 1)).norm();
    let swap = (m(0, 1) * m(1, 0)).norm();
    let (big, small, swapped) = if keep >= swap { (keep, swap, false) } else { (swap, keep, true) };
    if !(big > 0.0) || small > 0.25 * big {
        return Match::Ambiguous(if big > 0.0 { small / big } else { 1.0 });
    }
    let (a, b) = if swapped { (1, 0) } else { (0, 1) };
    let o1 = prev.right[0].inner(&next.right[a]).norm();
    let o2 = prev.right[1].inner(&next.right[b]).norm();
    let min = o1.min(o2);
    if min <= std::f64::consts::FRAC_1_SQRT_2 {
        return Match::Ambiguous(min);
    }
    if swapped {
        Match::Swap
    } else {
        Match::Keep
    }
}

fn advance<S: EigenSource + ?Sized>(
    source: &S,
    path: &dyn Fn(f64) -> BVector,
    prev: &BiorthEigensystem,
    s_prev: f64,
    s_next: f64,
    depth: u32,
    index: usize,
) -> Result<BiorthEigensystem> {
    let next = source.eigensystem_at(&path(s_next))?;
    match match_modes(prev, &next) {
        Match::Keep => Ok(next),
        Match::Swap => Ok(next.swapped()),
        Match::Ambiguous(overlap) => {
            if depth == 0 {
                return Err(Error::TrackingAmbiguity { index, overlap });
            }
            let mid = 0.5 * (s_prev + s_next);
            let at_mid = advance(source, path, prev, s_prev, mid, depth - 1, index)?;
            let fixed = advance(source, path, &at_mid, mid, s_next, depth - 1, index)?;
            Ok(fixed)
        }
    }
}

/// Continues mode labels along `path(s)` through the ordered parameters
/// `s_values`, bisecting unresolved steps up to `refine_depth` times.
pub fn track_path<S: EigenSource + ?Sized>(
    source: &S,
    path: &dyn Fn(f64) -> BVector,
    s_values: &[f64],
    refine_depth: u32,
) -> Result<ModeTrack> {
    let mut track = ModeTrack {
        points: Vec::with_capacity(s_values.len()),
        energies: Vec::with_capacity(s_values.len()),
        right: Vec::with_capacity(s_values.len()),
        left: Vec::with_capacity(s_values.len()),
        permutation_after_cycle: None,
    };
    let Some(&s0) = s_values.first() else {
        return Ok(track);
    };
    let mut es = source.eigensystem_at(&path(s0))?;
    track.push(path(s0), &es);
    for k in 1..s_values.len() {
        es = advance(source, path, &es, s_values[k - 1], s_values[k], refine_depth, k)?;
        track.push(path(s_values[k]), &es);
    }
    Ok(track)
}

/// Continues labels through an explicit point list without refinement.
pub fn track_modes<S: EigenSource + ?Sized>(points: &[BVector], source: &S) -> Result<ModeTrack> {
    let s: Vec<f64> = (0..points.len()).map(|k| k as f64).collect();
    let path = |x: f64| points[x.round() as usize];
    track_path(source, &path, &s, 0)
}

/// Tracks `cycles` traversals of the loop and records whether the labels
/// are exchanged after the first.
pub fn track_loop<S: EigenSource + ?Sized>(
    spec: &LoopSpec,
    cycles: usize,
    source: &S,
    refine_depth: u32,
) -> Result<ModeTrack> {
    spec.validate()?;
    let s: Vec<f64> = (0..=spec.steps * cycles).map(|p| spec.angle(p)).collect();
    let path = |a: f64| spec.point(a);
    let mut track = track_path(source, &path, &s, refine_depth)?;
    let start = track.eigensystem(0);
    let after = track.eigensystem(spec.steps);
    let swapped = match match_modes(&start, &after) {
        Match::Keep => false,
        Match::Swap => true,
        Match::Ambiguous(overlap) => {
            return Err(Error::TrackingAmbiguity {
                index: spec.steps,
                overlap,
            })
        }
    };
    track.permutation_after_cycle = Some(swapped);
    Ok(track)
}

// ---------------------------------------------------------------------------
// parallel transport and Berry phase

/// Rephases right vector p+1 (and its left partner inversely) so that
/// ⟨ū^l_{p+1}|ū^r_p⟩ is real and positive. The first point is unchanged.
pub fn gauge_fix(track: &ModeTrack) -> Result<ModeTrack> {
    let mut out = track.clone();
    for p in 0..out.len().saturating_sub(1) {
        for n in 0..2 {
            let ov = out.left[p + 1][n].apply(&out.right[p][n]);
            if !(ov.norm() > 1e-12) {
                return Err(Error::TrackingAmbiguity {
                    index: p + 1,
                    overlap: ov.norm(),
                });
            }
            let phase = Complex64::from_polar(1.0, ov.arg());
            out.right[p + 1][n] = out.right[p + 1][n].scale(phase);
            out.left[p + 1][n] = out.left[p + 1][n].scale(phase.conj());
        }
    }
    Ok(out)
}

/// Maps a phase into (−2π + τ, τ], so that a numerically tiny positive
/// phase stays at 0 while ±π both read as −π.
pub fn wrap_phase(beta: f64) -> f64 {
    const TAU: f64 = 1e-6;
    beta - 2.0 * PI * ((beta - TAU) / (2.0 * PI)).ceil()
}

/// Berry phase of each mode on a closed track along which the modes return
/// to themselves.
///
/// Uses the log form of i·Σ⟨ū^l_p|ū^r_{p+1} − ū^r_p⟩: β = −Σ arg⟨ū^l_p|ū^r_{p+1}⟩
/// plus arg⟨ū^l_0|ū^r_N⟩, the closing phase taking the final vector back to
/// the initial one.
pub fn berry_phase_from_track(track: &ModeTrack) -> Result<[f64; 2]> {
    if track.len() < 3 {
        return Err(Error::invalid("track too short"));
    }
    let n_last = track.len() - 1;
    if track.points[0].distance(&track.points[n_last]) > 1e-9 * (1.0 + track.points[0].norm()) {
        return Err(Error::invalid("track is not closed"));
    }
    let fixed = gauge_fix(track)?;
    let mut beta = [0.0; 2];
    for n in 0..2 {
        let mut sum = 0.0;
        for p in 0..n_last {
            sum -= fixed.left[p][n].apply(&fixed.right[p + 1][n]).arg();
        }
        let closing = fixed.left[0][n].apply(&fixed.right[n_last][n]);
        let other = fixed.left[0][1 - n].apply(&fixed.right[n_last][n]);
        if !(closing.norm() > 4.0 * other.norm()) {
            return Err(Error::invalid("mode does not return to itself along the track"));
        }
        beta[n] = wrap_phase(sum + closing.arg());
    }
    Ok(beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerryResult {
    pub beta: [f64; 2],
    pub cycles: usize,
    pub swapped_after_one_cycle: bool,
}

pub fn berry_phase<S: EigenSource + ?Sized>(spec: &LoopSpec, source: &S, refine_depth: u32) -> Result<BerryResult> {
    let (track, cycles) = match spec.cycles {
        Cycles::One => (track_loop(spec, 1, source, refine_depth)?, 1),
        Cycles::Two => (track_loop(spec, 2, source, refine_depth)?, 2),
        Cycles::Auto => {
            let one = track_loop(spec, 1, source, refine_depth)?;
            if one.permutation_after_cycle == Some(true) {
                (track_loop(spec, 2, source, refine_depth)?, 2)
            } else {
                (one, 1)
            }
        }
    };
    let swapped = track.permutation_after_cycle.unwrap_or(false);
    if cycles == 1 && swapped {
        return Err(Error::invalid(
            "modes exchange after one cycle; the loop must be traversed twice",
        ));
    }
    Ok(BerryResult {
        beta: berry_phase_from_track(&track)?,
        cycles,
        swapped_after_one_cycle: swapped,
    })
}

// ---------------------------------------------------------------------------
// spheres

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereSpec {
    pub radius: f64,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl SphereSpec {
    pub fn new(radius: f64, theta: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        let s = SphereSpec { radius, theta, phi };
        s.validate()?;
        Ok(s)
    }

    /// Cell-centred θ grid and φ_j = 2πj/n_phi.
    pub fn uniform(radius: f64, n_theta: usize, n_phi: usize) -> Result<Self> {
        let theta = (0..n_theta).map(|k| PI * (k as f64 + 0.5) / n_theta as f64).collect();
        let phi = (0..n_phi).map(|j| 2.0 * PI * j as f64 / n_phi as f64).collect();
        Self::new(radius, theta, phi)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::invalid(format!("sphere radius must be > 0, got {}", self.radius)));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if self.theta.is_empty() || !increasing(&self.theta) || self.theta[0] <= 0.0 || *self.theta.last().unwrap() >= PI {
            return Err(Error::invalid("θ grid must be strictly increasing inside (0, π)"));
        }
        if !self.phi.is_empty() && (!increasing(&self.phi) || self.phi[0] < 0.0 || *self.phi.last().unwrap() >= 2.0 * PI) {
            return Err(Error::invalid("φ grid must be strictly increasing inside [0, 2π)"));
        }
        Ok(())
    }
}

/// λ = r·sinθ·e^{iφ}, Δ = 2r·cosθ.
pub fn sphere_point(radius: f64, theta: f64, phi: f64) -> BVector {
    BVector::new(
        radius * theta.sin() * phi.cos(),
        radius * theta.sin() * phi.sin(),
        radius * theta.cos(),
    )
}

/// |e,0⟩ weight of the right eigenvector with energy `e`.
fn excited_weight(p: &SystemParams, e: Complex64) -> f64 {
    let l2 = p.lambda.norm_sqr();
    let upper = (e - p.delta).norm_sqr();
    let lower = (e + Complex64::new(0.0, 0.5 * p.kappa)).norm_sqr();
    if l2 + upper >= lower + l2 {
        l2 / (l2 + upper)
    } else {
        lower / (lower + l2)
    }
}

/// P_{e,0} of both modes along the φ = 0 meridian, continued from
/// `thetas[0]` where mode 1 takes the principal root. Continuation follows
/// the square root of the discriminant on a sub-grid no coarser than 1e-3.
pub fn continued_populations(radius: f64, kappa: f64, thetas: &[f64]) -> Result<Vec<[f64; 2]>> {
    if thetas.is_empty() {
        return Ok(Vec::new());
    }
    let params_at = |th: f64| params_from_b(&sphere_point(radius, th, 0.0), kappa);
    let root_at = |p: &SystemParams| -> Result<Complex64> {
        let d = discriminant(p);
        if d.norm() < crate::model::EP_TOLERANCE * kappa * kappa || d.norm() == 0.0 {
            return Err(Error::EpProximity {
                discriminant: d.norm(),
                threshold: crate::model::EP_TOLERANCE * kappa * kappa,
            });
        }
        Ok(d.sqrt())
    };
    let weights = |p: &SystemParams, root: Complex64| {
        let m = mean_energy(p);
        [excited_weight(p, m + root), excited_weight(p, m - root)]
    };
    let p0 = params_at(thetas[0])?;
    let mut root = root_at(&p0)?;
    let mut out = vec![weights(&p0, root)];
    for w in thetas.windows(2) {
        let n_sub = (((w[1] - w[0]).abs() / 1e-3).ceil() as usize).max(1);
        for k in 1..=n_sub {
            let th = w[0] + (w[1] - w[0]) * k as f64 / n_sub as f64;
            let r = root_at(&params_at(th)?)?;
            root = if (r - root).norm() <= (r + root).norm() { r } else { -r };
        }
        out.push(weights(&params_at(w[1])?, root));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeridianResult {
    /// C_n = P_n(π) − P_n(0), labels as given by the source at θ_min.
    pub chern: [f64; 2],
    /// Sphere radius of the model curve that best fits the data.
    pub fitted_radius: f64,
    pub rms_residual: f64,
    pub thetas: Vec<f64>,
    /// Measured P_{e,0}, columns in the output labelling.
    pub populations: Vec<[f64; 2]>,
    /// Standard errors reported with `populations`, same labelling.
    pub population_std: Vec<[f64; 2]>,
    /// θ values whose eigensystem could not be obtained.
    pub skipped: Vec<f64>,
    /// Model P_{e,0} at θ = 0 and π per output mode.
    pub pole_populations: [[f64; 2]; 2],
}

/// RMS misfit above which the meridian fit is rejected.
pub const MERIDIAN_FIT_THRESHOLD: f64 = 0.1;
/// Added in quadrature to reported population errors before weighting.
pub const POPULATION_STD_FLOOR: f64 = 0.01;

/// Chern numbers from P_{e,0}(θ) on the φ = 0 meridian.
///
/// The sampled populations are fitted by the exact eigenvector family with
/// the sphere radius as the only free parameter; the fitted curves are then
/// continued to θ = 0 and π, where C_n = P_n(π) − P_n(0). Mode pairs are
/// matched to the model without tracking the data, so sparse or noisy
/// samples close to the ring do not need a continuation of their own.
/// Each sample is weighted by 1/(σ² + σ₀²) with σ the error reported by the
/// source, so poorly determined modes barely pull on the fit; the residual
/// is the weighted RMS.
pub fn chern_meridian<S: EigenSource + ?Sized>(spec: &SphereSpec, kappa: f64, source: &S) -> Result<MeridianResult> {
    spec.validate()?;
    let mut thetas = Vec::new();
    let mut data: Vec<[f64; 2]> = Vec::new();
    let mut stds: Vec<[f64; 2]> = Vec::new();
    let mut skipped = Vec::new();
    for &th in &spec.theta {
        match source.eigensystem_with_std(&sphere_point(spec.radius, th, 0.0)) {
            Ok((es, std)) => {
                thetas.push(th);
                data.push([es.right[0].population_e0(), es.right[1].population_e0()]);
                stds.push(std);
            }
            Err(e) if e.is_domain_error() || e.is_convergence_error() => skipped.push(th),
            Err(e) => return Err(e),
        }
    }
    if thetas.len() < 3 {
        return Err(Error::invalid("fewer than three usable meridian samples"));
    }

    let mut grid = vec![0.0];
    grid.extend(&thetas);
    grid.push(PI);
    let weights: Vec<[f64; 2]> = stds
        .iter()
        .map(|s| s.map(|v| 1.0 / (v * v + POPULATION_STD_FLOOR * POPULATION_STD_FLOOR)))
        .collect();
    let total_weight: f64 = weights.iter().map(|w| w[0] + w[1]).sum();
    let misfit = |r: f64| -> f64 {
        let Ok(model) = continued_populations(r, kappa, &grid) else {
            return f64::INFINITY;
        };
        let mut s = 0.0;
        for (k, (d, w)) in data.iter().zip(&weights).enumerate() {
            let m = model[k + 1];
            let keep = w[0] * (m[0] - d[0]).powi(2) + w[1] * (m[1] - d[1]).powi(2);
            let swap = w[0] * (m[1] - d[0]).powi(2) + w[1] * (m[0] - d[1]).powi(2);
            s += keep.min(swap);
        }
        s / total_weight
    };

    // grid scan over radii, then golden-section refinement
    let (lo, hi) = (0.5 * spec.radius, 1.5 * spec.radius);
    let n_scan = 41;
    let mut best = (spec.radius, f64::INFINITY);
    for k in 0..n_scan {
        let r = lo + (hi - lo) * k as f64 / (n_scan - 1) as f64;
        let v = misfit(r);
        if v < best.1 {
            best = (r, v);
        }
    }
    let step = (hi - lo) / (n_scan - 1) as f64;
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (best.0 - step, best.0 + step);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (misfit(c), misfit(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = misfit(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = misfit(d);
        }
        if (b - a) < 1e-12 * spec.radius {
            break;
        }
    }
    let mid = 0.5 * (a + b);
    let (fitted_radius, mse) = [(mid, misfit(mid)), best]
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap();
    let rms = mse.sqrt();
    if !(rms <= MERIDIAN_FIT_THRESHOLD) {
        return Err(Error::FitQuality {
            residual: rms,
            threshold: MERIDIAN_FIT_THRESHOLD,
        });
    }

    let model = continued_populations(fitted_radius, kappa, &grid)?;
    // label the model modes after the source's modes at θ_min
    let (first, w) = (model[1], weights[0]);
    let keep = w[0] * (first[0] - data[0][0]).powi(2) + w[1] * (first[1] - data[0][1]).powi(2);
    let swap = w[1] * (first[0] - data[0][1]).powi(2) + w[0] * (first[1] - data[0][0]).powi(2);
    let order = if swap < keep { [1, 0] } else { [0, 1] };
    let north = model[0];
    let south = model[grid.len() - 1];
    let chern = [south[order[0]] - north[order[0]], south[order[1]] - north[order[1]]];
    // data columns assigned to the continued model curves
    let (populations, population_std) = data
        .iter()
        .zip(&weights)
        .zip(&stds)
        .enumerate()
        .map(|(k, ((d, w), s))| {
            let m = model[k + 1];
            let m = [m[order[0]], m[order[1]]];
            let keep = w[0] * (m[0] - d[0]).powi(2) + w[1] * (m[1] - d[1]).powi(2);
            let swap = w[0] * (m[1] - d[0]).powi(2) + w[1] * (m[0] - d[1]).powi(2);
            if swap < keep {
                ([d[1], d[0]], [s[1], s[0]])
            } else {
                (*d, *s)
            }
        })
        .unzip();
    Ok(MeridianResult {
        chern,
        fitted_radius,
        rms_residual: rms,
        thetas,
        populations,
        population_std,
        skipped,
        pole_populations: [
            [north[order[0]], south[order[0]]],
            [north[order[1]], south[order[1]]],
        ],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub a_theta: f64,
    pub a_phi: f64,
}

/// Right-right Berry connection A = i⟨u|∂u⟩ of both modes by central
/// differences, in the gauge where the |e,0⟩ amplitude is proportional to
/// λ*, which is smooth away from the poles.
pub fn berry_connection_sphere(radius: f64, kappa: f64, theta: f64, phi: f64, step: f64) -> Result<[Connection; 2]> {
    if !(1e-3..=PI - 1e-3).contains(&theta) {
        return Err(Error::PoleProximity { theta });
    }
    if !(step > 0.0) {
        return Err(Error::invalid("step must be > 0"));
    }
    let at = |th: f64, ph: f64| eigensystem(&params_from_b(&sphere_point(radius, th, ph), kappa)?);
    let center = at(theta, phi)?;
    let aligned = |th: f64, ph: f64| -> Result<BiorthEigensystem> {
        let es = at(th, ph)?;
        match match_modes(&center, &es) {
            Match::Keep => Ok(es),
            Match::Swap => Ok(es.swapped()),
            Match::Ambiguous(overlap) => Err(Error::TrackingAmbiguity { index: 0, overlap }),
        }
    };
    let tp = aligned(theta + step, phi)?;
    let tm = aligned(theta - step, phi)?;
    let pp = aligned(theta, phi + step)?;
    let pm = aligned(theta, phi - step)?;
    let i = Complex64::new(0.0, 1.0);
    let deriv = |u: &SingleExcState, plus: &SingleExcState, minus: &SingleExcState| -> f64 {
        let du_e0 = (plus.c_e0() - minus.c_e0()) / (2.0 * step);
        let du_g1 = (plus.c_g1() - minus.c_g1()) / (2.0 * step);
        (i * (u.c_e0().conj() * du_e0 + u.c_g1().conj() * du_g1)).re
    };
    let mut out = [Connection { a_theta: 0.0, a_phi: 0.0 }; 2];
    for n in 0..2 {
        out[n] = Connection {
            a_theta: deriv(&center.right[n], &tp.right[n], &tm.right[n]),
            a_phi: deriv(&center.right[n], &pp.right[n], &pm.right[n]),
        };
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChernIntegral {
    /// Raw plaquette sums divided by 2π, labels as at the north pole.
    pub raw: [f64; 2],
    pub chern: [i32; 2],
    pub max_plaquette_phase: f64,
}

/// Gauge-invariant lattice Chern number from right-right link products
/// over the θ–φ grid, with triangular caps closing at the poles.
pub fn chern_integral(spec: &SphereSpec, kappa: f64) -> Result<ChernIntegral> {
    spec.validate()?;
    if spec.phi.len() < 3 {
        return Err(Error::invalid("need at least three φ points"));
    }
    let source = AnalyticSource { kappa };
    let r = spec.radius;
    let (nt, np) = (spec.theta.len(), spec.phi.len());

    // meridian φ = φ₀ from pole to pole fixes the labels of every row
    let mut s = vec![0.0];
    s.extend(&spec.theta);
    s.push(PI);
    let phi0 = spec.phi[0];
    let meridian = track_path(&source, &|th: f64| sphere_point(r, th, phi0), &s, DEFAULT_REFINE_DEPTH)?;
    let north = meridian.right[0];
    let south = meridian.right[nt + 1];

    let mut grid: Vec<Vec<[SingleExcState; 2]>> = Vec::with_capacity(nt);
    let mut phis = spec.phi.clone();
    phis.push(phi0 + 2.0 * PI);
    for (i, &th) in spec.theta.iter().enumerate() {
        let row_start = meridian.eigensystem(i + 1);
        let path = |ph: f64| sphere_point(r, th, ph);
        let mut row = vec![row_start.right];
        let mut es = row_start;
        for k in 1..phis.len() {
            es = advance(&source, &path, &es, phis[k - 1], phis[k], DEFAULT_REFINE_DEPTH, k)?;
            row.push(es.right);
        }
        // after a full turn the labels must come back
        let end = row.pop().unwrap();
        for n in 0..2 {
            if end[n].inner(&row[0][n]).norm() < end[n].inner(&row[0][1 - n]).norm() {
                return Err(Error::TrackingAmbiguity { index: i, overlap: 0.0 });
            }
        }
        grid.push(row);
    }

    let link = |a: &SingleExcState, b: &SingleExcState| a.inner(b);
    let mut raw = [0.0; 2];
    let mut max_phase: f64 = 0.0;
    for n in 0..2 {
        let mut total = 0.0;
        let mut add = |z: Complex64| -> Result<()> {
            let ph = z.arg();
            max_phase = max_phase.max(ph.abs());
            if ph.abs() > 0.5 * PI {
                return Err(Error::RefineGrid { phase: ph });
            }
            total += ph;
            Ok(())
        };
        for j in 0..np {
            let jn = (j + 1) % np;
            // north cap: N → (θ₀, φ_{j+1}) → (θ₀, φ_j) → N
            let (a, b) = (&grid[0][jn][n], &grid[0][j][n]);
            add(link(&north[n], a) * link(a, b) * link(b, &north[n]))?;
            for i in 0..nt - 1 {
                let c1 = &grid[i][j][n];
                let c2 = &grid[i][jn][n];
                let c3 = &grid[i + 1][jn][n];
                let c4 = &grid[i + 1][j][n];
                add(link(c1, c2) * link(c2, c3) * link(c3, c4) * link(c4, c1))?;
            }
            // south cap: (θ_last, φ_j) → (θ_last, φ_{j+1}) → S
            let (a, b) = (&grid[nt - 1][j][n], &grid[nt - 1][jn][n]);
            add(link(a, b) * link(b, &south[n]) * link(&south[n], a))?;
        }
        raw[n] = total / (2.0 * PI);
    }
    Ok(ChernIntegral {
        raw,
        chern: [raw[0].round() as i32, raw[1].round() as i32],
        max_plaquette_phase: max_phase,
    })
}

// ---------------------------------------------------------------------------
// transitions

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub critical_radius: f64,
    pub lower: f64,
    pub upper: f64,
    /// Bracket width, reported as the uncertainty.
    pub width: f64,
}

/// First bracket (in increasing radius) across which the invariant changes
/// by at least 0.5; the estimate is its midpoint.
pub fn detect_transition(radii: &[f64], values: &[f64]) -> Result<Transition> {
    if radii.len() != values.len() || radii.len() < 2 {
        return Err(Error::invalid("need matching radii and values, at least two"));
    }
    let mut idx: Vec<usize> = (0..radii.len()).collect();
    idx.sort_by(|&a, &b| radii[a].total_cmp(&radii[b]));
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (values[b] - values[a]).abs() >= 0.5 {
            return Ok(Transition {
                critical_radius: 0.5 * (radii[a] + radii[b]),
                lower: radii[a],
                upper: radii[b],
                width: radii[b] - radii[a],
            });
        }
    }
    Err(Error::NoTransition)
}
