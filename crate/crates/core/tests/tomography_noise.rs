use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weyl_ring::seed::derive_seed;
use weyl_ring::tomography::{
    born_probabilities, density_from_expectations, expectations_from_counts, project_to_physical, reconstruct_density,
    sample_counts, simulate_tomography, BasisSetting, TomographyData, TwoQubitDensity,
};

fn random_pure(rng: &mut ChaCha8Rng) -> Vector4<Complex64> {
    let v = Vector4::from_fn(|_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    v / Complex64::new(v.norm(), 0.0)
}

fn random_mixed(rng: &mut ChaCha8Rng) -> TwoQubitDensity {
    let a = Matrix4::from_fn(|_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let m = a * a.adjoint();
    let tr = m.trace();
    TwoQubitDensity::new(m / tr).unwrap()
}

fn trace_norm_distance(a: &Matrix4<Complex64>, b: &Matrix4<Complex64>) -> f64 {
    let d = a - b;
    let d = (d + d.adjoint()) * Complex64::new(0.5, 0.0);
    0.5 * nalgebra::SymmetricEigen::new(d).eigenvalues.iter().map(|v| v.abs()).sum::<f64>()
}

#[test]
fn fidelity_improves_with_shots() {
    let mut means = Vec::new();
    for shots in [100u64, 1_000, 10_000] {
        let mut total = 0.0;
        for seed in 0..50u64 {
            let mut local = ChaCha8Rng::seed_from_u64(seed);
            let psi = random_pure(&mut local);
            let rho = TwoQubitDensity::pure(&psi).unwrap();
            let data = simulate_tomography(&rho, Some(shots), derive_seed(77, seed)).unwrap();
            total += reconstruct_density(&data).unwrap().fidelity_pure(&psi);
        }
        means.push(total / 50.0);
    }
    assert!(means[0] <= means[1] && means[1] <= means[2], "{means:?}");
    assert!(means[2] >= 0.99, "{means:?}");
}

fn hs_distance(a: &Matrix4<Complex64>, b: &Matrix4<Complex64>) -> f64 {
    (a - b).norm()
}

#[test]
fn projection_never_moves_away_from_the_true_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut nonphysical = 0;
    let mut trace_increases = Vec::new();
    let (mut sum_before, mut sum_after) = (0.0, 0.0);
    for trial in 0..100u64 {
        let rho = if trial % 2 == 0 {
            TwoQubitDensity::pure(&random_pure(&mut rng)).unwrap()
        } else {
            random_mixed(&mut rng)
        };
        let TomographyData::Counts(records) = simulate_tomography(&rho, Some(200), trial).unwrap() else {
            unreachable!()
        };
        let raw = density_from_expectations(&expectations_from_counts(&records).unwrap());
        let physical = project_to_physical(&raw);
        if nalgebra::SymmetricEigen::new(raw).eigenvalues.min() < 0.0 {
            nonphysical += 1;
        }
        assert!(
            hs_distance(&physical, &rho.0) <= hs_distance(&raw, &rho.0) + 1e-12,
            "trial {trial}: Hilbert-Schmidt distance grew"
        );
        let before = trace_norm_distance(&raw, &rho.0);
        let after = trace_norm_distance(&physical, &rho.0);
        sum_before += before;
        sum_after += after;
        if after > before + 1e-12 {
            trace_increases.push((trial, after / before - 1.0));
        }
    }
    assert!(nonphysical > 20, "only {nonphysical} raw estimates needed projection");
    // the trace norm is not contracted by any projection onto the state space;
    // a few trials get slightly worse
    eprintln!("trace distance increased in {} of 100 trials: {trace_increases:?}", trace_increases.len());
    assert!(sum_after < sum_before);
    assert!(trace_increases.len() <= 5 && trace_increases.iter().all(|&(_, r)| r < 0.02));
}

#[test]
fn frequencies_converge_to_born_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rho = random_mixed(&mut rng);
    let n = 1_000_000u64;
    for (k, setting) in BasisSetting::all().into_iter().enumerate() {
        let p = born_probabilities(&rho, &setting);
        let counts = sample_counts(&rho, &setting, n, k as u64).unwrap();
        for o in 0..4 {
            let sigma = (p[o] * (1.0 - p[o]) / n as f64).sqrt();
            let f = counts[o] as f64 / n as f64;
            assert!((f - p[o]).abs() <= 3.0 * sigma + 1e-12, "{setting:?} outcome {o}: {f} vs {}", p[o]);
        }
    }
}
