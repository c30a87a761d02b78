use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use weyl_ring::bessel::inverse_j1;
use weyl_ring::dynamics::{
    effective_coupling, ladder_from_single, simulate_driven, validate_drive, DriveParams, FockTruncation,
};
use weyl_ring::entanglement::{concurrence_pure, concurrence_vs_phi, e_at_pi, e_pi_closed_form};
use weyl_ring::seed::derive_seed;
use weyl_ring::synthetic::{FittedSource, SyntheticConfig};
use weyl_ring::topology::{
    berry_connection_sphere, berry_phase, chern_integral, chern_meridian, continued_populations, detect_transition,
    track_loop, wrap_phase, AnalyticSource, CachedSource, EigenSource, LoopSpec, SphereSpec, Transition,
};
use weyl_ring::{eigensystem, BVector, BiorthEigensystem, Error as CoreError, SingleExcState, SystemParams};

use crate::config::{PipelineMode, RunConfig};
use crate::error::CliError;
use crate::output::{meta, Field, Meta, OutDir, Table};

pub struct Ctx {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: OutDir,
}

impl Ctx {
    fn meta(&self, command: &str) -> Meta {
        meta(command, self.cfg.pipeline.name(), &self.hash, self.cfg.seed)
    }

    fn par_map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Result<Vec<R>, CliError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers.unwrap_or(0))
            .build()
            .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(|| items.par_iter().map(f).collect()))
    }
}

/// One realization of the experiment: every seed of a shot-noise study is a run.
#[derive(Debug, Clone, Copy)]
struct Run {
    index: usize,
    seed: u64,
}

fn runs(cfg: &RunConfig) -> Vec<Run> {
    match cfg.pipeline {
        PipelineMode::SyntheticShots { seeds, .. } => (0..seeds)
            .map(|i| Run {
                index: i as usize,
                seed: derive_seed(cfg.seed, i),
            })
            .collect(),
        _ => vec![Run {
            index: 0,
            seed: cfg.seed,
        }],
    }
}

enum Source {
    Analytic(AnalyticSource),
    Fitted(CachedSource<FittedSource>),
}

impl Source {
    fn new(cfg: &RunConfig, run: Run) -> Self {
        let config = match cfg.pipeline {
            PipelineMode::Analytic => return Source::Analytic(AnalyticSource { kappa: cfg.kappa }),
            PipelineMode::SyntheticNoiseless => SyntheticConfig::noiseless(cfg.kappa, run.seed),
            PipelineMode::SyntheticShots { shots, .. } => SyntheticConfig::with_shots(cfg.kappa, shots, run.seed),
        };
        Source::Fitted(CachedSource::new(FittedSource { config }))
    }
}

impl EigenSource for Source {
    fn eigensystem_at(&self, b: &BVector) -> weyl_ring::Result<BiorthEigensystem> {
        match self {
            Source::Analytic(s) => s.eigensystem_at(b),
            Source::Fitted(s) => s.eigensystem_at(b),
        }
    }

    fn eigensystem_with_std(&self, b: &BVector) -> weyl_ring::Result<(BiorthEigensystem, [f64; 2])> {
        match self {
            Source::Analytic(s) => s.eigensystem_with_std(b),
            Source::Fitted(s) => s.eigensystem_with_std(b),
        }
    }
}

/// Grid of (run, radius) tasks in output order.
fn tasks(cfg: &RunConfig, radii: &[f64]) -> Vec<(Run, f64)> {
    runs(cfg)
        .into_iter()
        .flat_map(|run| radii.iter().map(move |&r| (run, r)))
        .collect()
}

fn err_field<T>(r: &Result<T, CoreError>) -> Field {
    match r {
        Ok(_) => Field::Missing,
        Err(e) => Field::S(e.to_string()),
    }
}

/// Fails the command only when nothing at all succeeded.
fn require_any<T>(results: &[Result<T, CoreError>]) -> Result<(), CliError> {
    if results.iter().any(|r| r.is_ok()) {
        return Ok(());
    }
    match results.iter().find_map(|r| r.as_ref().err()) {
        Some(e) => Err(CliError::Core(e.clone())),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TransitionSummary {
    pub run: usize,
    pub seed: u64,
    pub critical_radius_over_kappa: Option<f64>,
    pub lower_over_kappa: Option<f64>,
    pub upper_over_kappa: Option<f64>,
    pub error: Option<String>,
}

fn transition_summary(run: Run, kappa: f64, points: &[(f64, Option<f64>)]) -> TransitionSummary {
    let (radii, values): (Vec<f64>, Vec<f64>) = points.iter().filter_map(|&(r, v)| v.map(|v| (r, v))).unzip();
    let t: Result<Transition, CoreError> = detect_transition(&radii, &values);
    TransitionSummary {
        run: run.index,
        seed: run.seed,
        critical_radius_over_kappa: t.as_ref().ok().map(|t| t.critical_radius / kappa),
        lower_over_kappa: t.as_ref().ok().map(|t| t.lower / kappa),
        upper_over_kappa: t.as_ref().ok().map(|t| t.upper / kappa),
        error: t.err().map(|e| e.to_string()),
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct EigensystemJson {
    pub lambda: [f64; 2],
    pub delta: f64,
    pub kappa: f64,
    pub b: [f64; 3],
    pub energies: [[f64; 2]; 2],
    pub right: [[[f64; 2]; 2]; 2],
    pub left: [[[f64; 2]; 2]; 2],
    pub biorthonormality_error: f64,
}

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

pub fn eigensystem_json(p: &SystemParams) -> Result<EigensystemJson, CliError> {
    let es = eigensystem(p)?;
    let b = p.b_vector();
    Ok(EigensystemJson {
        lambda: pair(p.lambda),
        delta: p.delta,
        kappa: p.kappa,
        b: [b.bx, b.by, b.bz],
        energies: es.energies.map(pair),
        right: es.right.map(|r| [pair(r.c_e0()), pair(r.c_g1())]),
        left: es.left.map(|l| [pair(l.e0), pair(l.g1)]),
        biorthonormality_error: es.biorthonormality_error(),
    })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct BerrySummary {
    pub radii_over_kappa: Vec<f64>,
    pub transitions: Vec<TransitionSummary>,
    pub failed_points: usize,
}

pub fn cmd_berry(ctx: &Ctx) -> Result<BerrySummary, CliError> {
    let cfg = &ctx.cfg;
    let bc = &cfg.berry;
    let kappa = cfg.kappa;
    let grid = tasks(cfg, &bc.radii);
    let results = ctx.par_map(&grid, |&(run, r)| {
        let src = Source::new(cfg, run);
        let spec = LoopSpec::centered(kappa, r * kappa, bc.steps);
        let res = berry_phase(&spec, &src, bc.refine_depth)?;
        let track = track_loop(&spec, res.cycles, &src, bc.refine_depth)?;
        Ok((res, track))
    })?;

    let mut fig = Table::new(&[
        "run",
        "seed",
        "radius_over_kappa",
        "radius",
        "beta1",
        "beta2",
        "beta1_over_pi",
        "beta2_over_pi",
        "cycles",
        "swapped",
        "error",
    ]);
    let mut points = Table::new(&[
        "run",
        "radius_over_kappa",
        "phi",
        "bx",
        "by",
        "bz",
        "e1_re",
        "e1_im",
        "e2_re",
        "e2_im",
        "p1_e0",
        "p2_e0",
    ]);
    let mut per_run: Vec<Vec<(f64, Option<f64>)>> = vec![Vec::new(); runs(cfg).len()];
    for ((run, r), res) in grid.iter().zip(&results) {
        let ok = res.as_ref().ok();
        let beta = ok.map(|(b, _)| b.beta.map(wrap_phase));
        per_run[run.index].push((r * kappa, beta.map(|b| b[0].abs() / PI)));
        fig.push(vec![
            run.index.into(),
            Field::S(run.seed.to_string()),
            (*r).into(),
            (r * kappa).into(),
            beta.map(|b| b[0]).into(),
            beta.map(|b| b[1]).into(),
            beta.map(|b| b[0] / PI).into(),
            beta.map(|b| b[1] / PI).into(),
            ok.map_or(Field::Missing, |(b, _)| b.cycles.into()),
            ok.map_or(Field::Missing, |(b, _)| Field::I(b.swapped_after_one_cycle as i64)),
            err_field(res),
        ]);
        if let Some((_, track)) = ok {
            let spec = LoopSpec::centered(kappa, r * kappa, bc.steps);
            let mut phi = 0.0;
            let mut last = 0.0;
            for (k, b) in track.points.iter().enumerate() {
                let a = (b.bz - spec.center_bz).atan2(b.bx - spec.center_bx);
                if k > 0 {
                    phi += (a - last + PI).rem_euclid(2.0 * PI) - PI;
                }
                last = a;
                let e = track.energies[k];
                points.push(vec![
                    run.index.into(),
                    (*r).into(),
                    phi.into(),
                    b.bx.into(),
                    b.by.into(),
                    b.bz.into(),
                    e[0].re.into(),
                    e[0].im.into(),
                    e[1].re.into(),
                    e[1].im.into(),
                    track.right[k][0].population_e0().into(),
                    track.right[k][1].population_e0().into(),
                ]);
            }
        }
    }
    let m = ctx.meta("berry");
    ctx.out.write_csv("fig2b.csv", &m, &fig)?;
    ctx.out.write_csv("berry_points.csv", &m, &points)?;
    let summary = BerrySummary {
        radii_over_kappa: bc.radii.clone(),
        transitions: runs(cfg)
            .into_iter()
            .map(|run| transition_summary(run, kappa, &per_run[run.index]))
            .collect(),
        failed_points: results.iter().filter(|r| r.is_err()).count(),
    };
    ctx.out.write_json("berry_summary.json", &m, &summary)?;
    require_any(&results)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ChernSummary {
    pub radii_over_kappa: Vec<f64>,
    pub integral_chern: Vec<Option<[i32; 2]>>,
    pub integral_transition: TransitionSummary,
    pub meridian_transitions: Vec<TransitionSummary>,
    pub failed_points: usize,
}

fn meridian_thetas(n: usize) -> Vec<f64> {
    (1..=n).map(|k| PI * k as f64 / (n + 1) as f64).collect()
}

pub fn cmd_chern(ctx: &Ctx) -> Result<ChernSummary, CliError> {
    let cfg = &ctx.cfg;
    let cc = &cfg.chern;
    let kappa = cfg.kappa;
    let thetas = meridian_thetas(cc.n_theta);
    let grid = tasks(cfg, &cc.radii);
    let meridians = ctx.par_map(&grid, |&(run, r)| {
        let spec = SphereSpec::new(r * kappa, thetas.clone(), vec![0.0])?;
        chern_meridian(&spec, kappa, &Source::new(cfg, run))
    })?;
    // the plaquette integral needs the whole sphere and always uses the model
    let integrals = ctx.par_map(&cc.radii, |&r| {
        let spec = SphereSpec::uniform(r * kappa, cc.integral_n_theta, cc.integral_n_phi)?;
        chern_integral(&spec, kappa)
    })?;

    let mut fig = Table::new(&[
        "run",
        "seed",
        "radius_over_kappa",
        "radius",
        "c1_meridian",
        "c2_meridian",
        "fitted_radius",
        "rms_residual",
        "skipped_points",
        "c1_integral",
        "c2_integral",
        "error",
    ]);
    let mut curves = Table::new(&[
        "run",
        "radius_over_kappa",
        "theta",
        "p1_e0",
        "p2_e0",
        "p1_std",
        "p2_std",
        "p1_reference",
        "p2_reference",
        "a_theta1",
        "a_phi1",
        "a_theta2",
        "a_phi2",
    ]);
    let mut per_run: Vec<Vec<(f64, Option<f64>)>> = vec![Vec::new(); runs(cfg).len()];
    for (k, ((run, r), res)) in grid.iter().zip(&meridians).enumerate() {
        let integral = &integrals[k % cc.radii.len()];
        let m = res.as_ref().ok();
        let raw = integral.as_ref().ok().map(|c| c.raw);
        let error = match (res, integral) {
            (Ok(_), Ok(_)) => Field::Missing,
            (Err(e), Ok(_)) => Field::S(format!("meridian: {e}")),
            (Ok(_), Err(e)) => Field::S(format!("integral: {e}")),
            (Err(a), Err(b)) => Field::S(format!("meridian: {a}; integral: {b}")),
        };
        per_run[run.index].push((r * kappa, m.map(|m| m.chern[0].abs().max(m.chern[1].abs()))));
        fig.push(vec![
            run.index.into(),
            Field::S(run.seed.to_string()),
            (*r).into(),
            (r * kappa).into(),
            m.map(|m| m.chern[0]).into(),
            m.map(|m| m.chern[1]).into(),
            m.map(|m| m.fitted_radius).into(),
            m.map(|m| m.rms_residual).into(),
            m.map_or(Field::Missing, |m| m.skipped.len().into()),
            raw.map(|c| c[0]).into(),
            raw.map(|c| c[1]).into(),
            error,
        ]);
        let Some(m) = m else { continue };
        let reference = continued_populations(r * kappa, kappa, &m.thetas).ok();
        for (i, &th) in m.thetas.iter().enumerate() {
            let conn = berry_connection_sphere(r * kappa, kappa, th, 0.0, 1e-5).ok();
            curves.push(vec![
                run.index.into(),
                (*r).into(),
                th.into(),
                m.populations[i][0].into(),
                m.populations[i][1].into(),
                m.population_std[i][0].into(),
                m.population_std[i][1].into(),
                reference.as_ref().map(|p| p[i][0]).into(),
                reference.as_ref().map(|p| p[i][1]).into(),
                conn.map(|c| c[0].a_theta).into(),
                conn.map(|c| c[0].a_phi).into(),
                conn.map(|c| c[1].a_theta).into(),
                conn.map(|c| c[1].a_phi).into(),
            ]);
        }
    }
    let meta = ctx.meta("chern");
    ctx.out.write_csv("fig3e.csv", &meta, &fig)?;
    ctx.out.write_csv("fig3cd.csv", &meta, &curves)?;
    let integral_points: Vec<(f64, Option<f64>)> = cc
        .radii
        .iter()
        .zip(&integrals)
        .map(|(r, c)| (r * kappa, c.as_ref().ok().map(|c| c.chern[0].abs().max(c.chern[1].abs()) as f64)))
        .collect();
    let summary = ChernSummary {
        radii_over_kappa: cc.radii.clone(),
        integral_chern: integrals.iter().map(|c| c.as_ref().ok().map(|c| c.chern)).collect(),
        integral_transition: transition_summary(
            Run {
                index: 0,
                seed: cfg.seed,
            },
            kappa,
            &integral_points,
        ),
        meridian_transitions: runs(cfg)
            .into_iter()
            .map(|run| transition_summary(run, kappa, &per_run[run.index]))
            .collect(),
        failed_points: meridians.iter().filter(|r| r.is_err()).count(),
    };
    ctx.out.write_json("chern_summary.json", &meta, &summary)?;
    require_any(&meridians)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct KinkSummary {
    pub run: usize,
    pub seed: u64,
    /// Radius where the linear fit to the E(π) < 1 points reaches 1.
    pub kink_radius_over_kappa: Option<f64>,
    pub slope_below: Option<f64>,
    pub slope_above: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcurrenceSummary {
    pub loop_radii_over_kappa: Vec<f64>,
    pub kinks: Vec<KinkSummary>,
    pub failed_points: usize,
}

/// Least-squares line (intercept, slope).
fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

fn kink(run: Run, points: &[(f64, Option<f64>)]) -> KinkSummary {
    let valid: Vec<(f64, f64)> = points.iter().filter_map(|&(r, v)| v.map(|v| (r, v))).collect();
    let split = |below: bool| -> (Vec<f64>, Vec<f64>) {
        valid.iter().filter(|(_, e)| (*e >= 1.0 - 1e-6) == below).cloned().unzip()
    };
    let (xb, yb) = split(true);
    let (xa, ya) = split(false);
    let above = linear_fit(&xa, &ya);
    KinkSummary {
        run: run.index,
        seed: run.seed,
        kink_radius_over_kappa: above.and_then(|(a, b)| (b != 0.0).then(|| (1.0 - a) / b)),
        slope_below: linear_fit(&xb, &yb).map(|(_, b)| b),
        slope_above: above.map(|(_, b)| b),
    }
}

pub fn cmd_concurrence(ctx: &Ctx) -> Result<ConcurrenceSummary, CliError> {
    let cfg = &ctx.cfg;
    let cc = &cfg.concurrence;
    let kappa = cfg.kappa;
    let depth = cfg.berry.refine_depth;
    let grid = tasks(cfg, &cc.radii);
    let curves = ctx.par_map(&grid, |&(run, r)| {
        let src = Source::new(cfg, run);
        let spec = LoopSpec::centered(kappa, r * kappa, cc.steps);
        Ok::<_, CoreError>((concurrence_vs_phi(&spec, 0, &src, depth)?, concurrence_vs_phi(&spec, 1, &src, depth)?))
    })?;
    let pi_grid = tasks(cfg, &cc.e_pi_radii);
    let e_pi = ctx.par_map(&pi_grid, |&(run, r)| match Source::new(cfg, run) {
        Source::Analytic(_) => e_at_pi(r * kappa, 0.5 * kappa, kappa),
        src => {
            let b = LoopSpec::centered(kappa, r * kappa, 4).point(PI);
            Ok(concurrence_pure(&src.eigensystem_at(&b)?.right[0]))
        }
    })?;

    let mut fig_c = Table::new(&["run", "radius_over_kappa", "phi", "e1", "e2", "error"]);
    for ((run, r), res) in grid.iter().zip(&curves) {
        match res {
            Ok((a, b)) => {
                for k in 0..a.phi_values.len() {
                    fig_c.push(vec![
                        run.index.into(),
                        (*r).into(),
                        a.phi_values[k].into(),
                        a.e_values[k].into(),
                        b.e_values[k].into(),
                        Field::Missing,
                    ]);
                }
            }
            Err(e) => fig_c.push(vec![
                run.index.into(),
                (*r).into(),
                Field::Missing,
                Field::Missing,
                Field::Missing,
                Field::S(e.to_string()),
            ]),
        }
    }
    let mut fig_d = Table::new(&["run", "radius_over_kappa", "radius", "e_pi", "e_pi_reference", "error"]);
    let mut per_run: Vec<Vec<(f64, Option<f64>)>> = vec![Vec::new(); runs(cfg).len()];
    for ((run, r), res) in pi_grid.iter().zip(&e_pi) {
        per_run[run.index].push((*r, res.as_ref().ok().copied()));
        fig_d.push(vec![
            run.index.into(),
            (*r).into(),
            (r * kappa).into(),
            res.as_ref().ok().copied().into(),
            e_pi_closed_form(r * kappa, 0.5 * kappa, kappa).into(),
            err_field(res),
        ]);
    }
    let meta = ctx.meta("concurrence");
    ctx.out.write_csv("fig2c.csv", &meta, &fig_c)?;
    ctx.out.write_csv("fig2d.csv", &meta, &fig_d)?;
    let summary = ConcurrenceSummary {
        loop_radii_over_kappa: cc.radii.clone(),
        kinks: runs(cfg).into_iter().map(|run| kink(run, &per_run[run.index])).collect(),
        failed_points: curves.iter().filter(|r| r.is_err()).count() + e_pi.iter().filter(|r| r.is_err()).count(),
    };
    ctx.out.write_json("concurrence_summary.json", &meta, &summary)?;
    require_any(&curves)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct DriveRun {
    pub nu: f64,
    pub j1: f64,
    pub mu: Option<f64>,
    pub resonant_detuning: Option<f64>,
    pub predicted_omega: Option<f64>,
    pub fitted_omega: Option<f64>,
    /// Fitted Rabi frequency over 2λ_r·J₁.
    pub ratio: Option<f64>,
    pub min_excited_population: Option<f64>,
    pub error: Option<String>,
}

const MAX_ROWS_PER_CURVE: usize = 2000;

struct DriveCurve {
    mu: f64,
    lambda: f64,
    times: Vec<f64>,
    pe: Vec<f64>,
    validation: Option<(f64, f64, f64, f64)>,
}

fn run_drive(cfg: &RunConfig, nu: f64, j1: f64) -> Result<DriveCurve, CoreError> {
    let dc = &cfg.drive;
    let trunc = FockTruncation::new(dc.n_max)?;
    let mu = if j1 == 0.0 {
        0.0
    } else {
        inverse_j1(j1).ok_or_else(|| CoreError::InvalidArgument(format!("J₁ = {j1} is out of range")))?
    };
    let d = DriveParams::resonant(dc.lambda_r, dc.omega_r, nu, mu);
    if j1 == 0.0 {
        let psi0 = ladder_from_single(&SingleExcState::excited(), &trunc);
        let rec = simulate_driven(&d, &trunc, &psi0, dc.flat_duration, 2.0 * PI / nu / 40.0)?;
        return Ok(DriveCurve {
            mu,
            lambda: 0.0,
            pe: rec.excited_population(),
            times: rec.times,
            validation: None,
        });
    }
    let v = validate_drive(&d, &trunc, dc.periods)?;
    Ok(DriveCurve {
        mu,
        lambda: effective_coupling(&v.drive).re,
        pe: v.record.excited_population(),
        times: v.record.times.clone(),
        validation: Some((v.resonant_detuning, v.predicted_omega, v.fit.omega, v.min_excited_population)),
    })
}

pub fn cmd_validate_drive(ctx: &Ctx) -> Result<Vec<DriveRun>, CliError> {
    let cfg = &ctx.cfg;
    let dc = &cfg.drive;
    let grid: Vec<(f64, f64)> = dc.nu.iter().flat_map(|&nu| dc.j1.iter().map(move |&j| (nu, j))).collect();
    let results = ctx.par_map(&grid, |&(nu, j1)| run_drive(cfg, nu, j1))?;

    let mut table = Table::new(&["nu", "j1", "mu", "t", "pe_full", "pe_effective"]);
    let mut summary = Vec::new();
    for (&(nu, j1), res) in grid.iter().zip(&results) {
        if let Ok(c) = res {
            let stride = c.times.len().div_ceil(MAX_ROWS_PER_CURVE).max(1);
            for k in (0..c.times.len()).step_by(stride) {
                let t = c.times[k];
                table.push(vec![
                    nu.into(),
                    j1.into(),
                    c.mu.into(),
                    t.into(),
                    c.pe[k].into(),
                    (c.lambda * t).cos().powi(2).into(),
                ]);
            }
        }
        let ok = res.as_ref().ok();
        let val = ok.and_then(|c| c.validation);
        summary.push(DriveRun {
            nu,
            j1,
            mu: ok.map(|c| c.mu),
            resonant_detuning: val.map(|v| v.0),
            predicted_omega: val.map(|v| v.1),
            fitted_omega: val.map(|v| v.2),
            ratio: val.map(|v| v.2 / (2.0 * dc.lambda_r * j1)),
            min_excited_population: val.map(|v| v.3).or_else(|| ok.map(|c| c.pe.iter().cloned().fold(f64::MAX, f64::min))),
            error: res.as_ref().err().map(|e| e.to_string()),
        });
    }
    let meta = ctx.meta("validate-drive");
    ctx.out.write_csv("rabi.csv", &meta, &table)?;
    ctx.out.write_json("drive_summary.json", &meta, &summary)?;
    require_any(&results)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub berry: BerrySummary,
    pub chern: ChernSummary,
    pub concurrence: ConcurrenceSummary,
}

/// Berry, Chern and concurrence sweeps with one source per run.
pub fn cmd_pipeline(ctx: &Ctx) -> Result<PipelineSummary, CliError> {
    let summary = PipelineSummary {
        berry: cmd_berry(ctx)?,
        chern: cmd_chern(ctx)?,
        concurrence: cmd_concurrence(ctx)?,
    };
    ctx.out.write_json("pipeline_summary.json", &ctx.meta("pipeline"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fit_recovers_a_line() {
        let x = [0.3, 0.35, 0.4];
        let y: Vec<f64> = x.iter().map(|r| 2.0 - 4.0 * r).collect();
        let (a, b) = linear_fit(&x, &y).unwrap();
        assert!((a - 2.0).abs() < 1e-12 && (b + 4.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn kink_of_the_closed_form_is_a_quarter() {
        let run = Run { index: 0, seed: 0 };
        let pts: Vec<(f64, Option<f64>)> = (1..25)
            .map(|k| {
                let r = 0.02 * k as f64;
                (r, Some(e_pi_closed_form(r, 0.5, 1.0)))
            })
            .collect();
        let k = kink(run, &pts);
        assert!((k.kink_radius_over_kappa.unwrap() - 0.25).abs() < 1e-9);
        assert!(k.slope_below.unwrap().abs() < 1e-12);
        assert!((k.slope_above.unwrap() + 4.0).abs() < 1e-9);
    }

    #[test]
    fn shot_runs_get_distinct_seeds() {
        let cfg = RunConfig {
            pipeline: PipelineMode::SyntheticShots { shots: 10, seeds: 3 },
            ..RunConfig::default()
        };
        let r = runs(&cfg);
        assert_eq!(r.len(), 3);
        assert!(r[0].seed != r[1].seed && r[1].seed != r[2].seed);
        assert_eq!(runs(&RunConfig::default()).len(), 1);
    }
}
