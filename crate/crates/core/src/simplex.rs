//! Nelder–Mead downhill simplex.

#[derive(Debug, Clone)]
pub struct SimplexOptions {
    pub max_evals: usize,
    /// Stop once every vertex lies within this distance of the best vertex.
    pub diameter_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_evals: 5000,
            diameter_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0` with an initial simplex offset by `steps` along
/// each axis. Non-finite objective values are treated as +∞.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], opts: &SimplexOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(steps.len(), n, "one step per coordinate");
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if steps[i] != 0.0 { steps[i] } else { 1e-3 };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;

    loop {
        // order vertices by objective
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        values = idx.iter().map(|&i| values[i]).collect();

        let diameter = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if diameter < opts.diameter_tol {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let reflected = along(-alpha);
        let f_r = eval(&reflected, &mut evals);
        if f_r < values[0] {
            let expanded = along(-alpha * gamma);
            let f_e = eval(&expanded, &mut evals);
            if f_e < f_r {
                simplex[n] = expanded;
                values[n] = f_e;
            } else {
                simplex[n] = reflected;
                values[n] = f_r;
            }
            continue;
        }
        if f_r < values[n - 1] {
            simplex[n] = reflected;
            values[n] = f_r;
            continue;
        }
        let (contracted, f_c) = if f_r < values[n] {
            let c = along(-alpha * rho);
            let fc = eval(&c, &mut evals);
            (c, fc)
        } else {
            let c = along(rho);
            let fc = eval(&c, &mut evals);
            (c, fc)
        };
        if f_c < values[n].min(f_r) {
            simplex[n] = contracted;
            values[n] = f_c;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for k in 1..=n {
            let v: Vec<f64> = best
                .iter()
                .zip(&simplex[k])
                .map(|(b, x)| b + sigma * (x - b))
                .collect();
            values[k] = eval(&v, &mut evals);
            simplex[k] = v;
        }
    }

    Minimum {
        x: simplex[0].clone(),
        f: values[0],
        evals,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(
            f,
            &[-1.2, 1.0],
            &[0.1, 0.1],
            &SimplexOptions {
                max_evals: 20000,
                diameter_tol: 1e-10,
            },
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-7 && (m.x[1] - 1.0).abs() < 1e-7, "{:?}", m.x);
    }

    #[test]
    fn quadratic_six_dims() {
        let target = [0.3, -1.0, 2.0, 0.0, 0.5, -0.25];
        let f = |x: &[f64]| {
            x.iter()
                .zip(&target)
                .enumerate()
                .map(|(i, (a, b))| (i + 1) as f64 * (a - b).powi(2))
                .sum::<f64>()
        };
        let m = nelder_mead(f, &[0.0; 6], &[0.2; 6], &SimplexOptions::default());
        assert!(m.converged, "{m:?}");
        for (a, b) in m.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn eval_budget_respected() {
        let m = nelder_mead(
            |x: &[f64]| x[0].sin() + x[1].cos(),
            &[0.0, 0.0],
            &[1.0, 1.0],
            &SimplexOptions {
                max_evals: 10,
                diameter_tol: 0.0,
            },
        );
        assert!(!m.converged);
        assert!(m.evals <= 14);
    }
}
