//! Bessel functions of the first kind for integer order.
//!
//! Small arguments use the ascending series; larger ones use Miller's
//! backward recurrence normalized with J0 + 2·ΣJ_2k = 1.

const SERIES_LIMIT: f64 = 5.0;

/// First maximum of J1.
pub const J1_FIRST_MAX: f64 = 1.841_183_781_340_659_3;

pub fn bessel_j(order: u32, x: f64) -> f64 {
    if x < 0.0 {
        let v = bessel_j(order, -x);
        return if order % 2 == 1 { -v } else { v };
    }
    if x == 0.0 {
        return if order == 0 { 1.0 } else { 0.0 };
    }
    if x <= SERIES_LIMIT {
        series(order, x)
    } else {
        miller(order, x)
    }
}

pub fn bessel_j1(x: f64) -> f64 {
    bessel_j(1, x)
}

/// J1'(x) = (J0(x) − J2(x))/2
pub fn bessel_j1_prime(x: f64) -> f64 {
    0.5 * (bessel_j(0, x) - bessel_j(2, x))
}

fn series(order: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = 1.0;
    for k in 1..=order {
        term *= half / k as f64;
    }
    let q = -half * half;
    let mut sum = term;
    for k in 1..200u32 {
        term *= q / (k as f64 * (k + order) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

fn miller(order: u32, x: f64) -> f64 {
    let start = {
        let m = (order as f64).max(x) as usize + 40 + (x.sqrt() * 10.0) as usize;
        m + (m % 2)
    };
    let mut next = 0.0;
    let mut cur = 1e-300;
    let mut norm = 0.0;
    let mut wanted = 0.0;
    for k in (0..=start).rev() {
        // J_{k-1} = (2k/x) J_k − J_{k+1}
        if k as u32 == order {
            wanted = cur;
        }
        if k == 0 {
            norm += cur;
        } else if k % 2 == 0 {
            norm += 2.0 * cur;
        }
        if k > 0 {
            let prev = 2.0 * k as f64 / x * cur - next;
            next = cur;
            cur = prev;
        }
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            next *= 1e-250;
            norm *= 1e-250;
            wanted *= 1e-250;
        }
    }
    wanted / norm
}

/// Smallest μ ≥ 0 with J1(μ) = target, for target in [0, J1(J1_FIRST_MAX)].
pub fn inverse_j1(target: f64) -> Option<f64> {
    let peak = bessel_j1(J1_FIRST_MAX);
    if !(0.0..=peak).contains(&target) {
        return None;
    }
    let (mut lo, mut hi) = (0.0, J1_FIRST_MAX);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bessel_j1(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// J_n(x) = (1/π)∫₀^π cos(nτ − x sin τ) dτ; the integrand is smooth and
    /// periodic so a uniform rule converges geometrically.
    fn integral_oracle(order: u32, x: f64) -> f64 {
        let m = 4000;
        let h = PI / m as f64;
        let mut s = 0.0;
        for k in 0..=m {
            let tau = k as f64 * h;
            let w = if k == 0 || k == m { 0.5 } else { 1.0 };
            s += w * (order as f64 * tau - x * tau.sin()).cos();
        }
        s * h / PI
    }

    #[test]
    fn matches_integral_representation() {
        for order in 0..4 {
            for k in 0..=60 {
                let x = k as f64 * 0.25;
                let a = bessel_j(order, x);
                let b = integral_oracle(order, x);
                assert!((a - b).abs() < 1e-12, "J{order}({x}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn first_maximum() {
        let v = bessel_j1(1.8412);
        assert!((v - 0.5819).abs() < 1e-4, "{v}");
        assert!(bessel_j1_prime(J1_FIRST_MAX).abs() < 1e-12);
        assert_eq!(bessel_j1(0.0), 0.0);
    }

    #[test]
    fn inverse() {
        for target in [0.05, 0.1, 0.15, 0.4] {
            let mu = inverse_j1(target).unwrap();
            assert!((bessel_j1(mu) - target).abs() < 1e-14);
        }
        assert!(inverse_j1(0.7).is_none());
    }

    #[test]
    fn odd_symmetry() {
        assert_eq!(bessel_j(1, -2.0), -bessel_j(1, 2.0));
        assert_eq!(bessel_j(2, -2.0), bessel_j(2, 2.0));
    }
}
