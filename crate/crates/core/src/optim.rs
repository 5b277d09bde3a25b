//! Derivative-free simplex search, a finite-difference Levenberg–Marquardt
//! polish, and a scrambled Halton sequence for multi-start.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Nelder–Mead with dimension-adaptive coefficients.
///
/// Stops when the spread of simplex values falls below
/// `tol · max(|f_best|, 1e-300)` or after `max_iter` iterations.
pub fn nelder_mead<F>(f: F, x0: &[f64], steps: &[f64], max_iter: usize, tol: f64) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma) = (1.0, 1.0 + 2.0 / nf);
    let (rho, sigma) = (0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);
    let eval = |x: &[f64]| finite_or_inf(f(x));

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let best = values[0];
        let worst = values[n];
        if best.is_finite() && (worst - best).abs() <= tol * best.abs().max(1e-300) {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect() };

        let reflected = along(alpha);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = along(alpha * gamma);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = along(alpha * rho);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = along(-rho);
            let fc = eval(&c);
            (c, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        for i in 1..=n {
            let shrunk: Vec<f64> = simplex[0].iter().zip(&simplex[i]).map(|(b, x)| b + sigma * (x - b)).collect();
            values[i] = eval(&shrunk);
            simplex[i] = shrunk;
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b))).unwrap_or(0);
    Minimum { x: simplex[best].clone(), value: values[best], iterations, converged }
}

fn sum_sq(r: &[f64]) -> f64 {
    let s: f64 = r.iter().map(|v| v * v).sum();
    finite_or_inf(s)
}

/// Levenberg–Marquardt on `Σ r(x)²` with a central-difference Jacobian.
///
/// Converges when an accepted step improves the cost by less than `tol`
/// relative, or the cost drops below `abs_floor`.
pub fn levenberg_marquardt<F>(residuals: F, x0: &[f64], max_iter: usize, tol: f64, abs_floor: f64) -> Minimum
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = residuals(&x);
    let mut cost = sum_sq(&r);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    let mut small_steps = 0;

    if !cost.is_finite() {
        return Minimum { x, value: cost, iterations, converged };
    }

    while iterations < max_iter {
        if cost <= abs_floor {
            converged = true;
            break;
        }
        iterations += 1;
        let m = r.len();
        let mut jac = DMatrix::<f64>::zeros(m, n);
        let mut jac_ok = true;
        for j in 0..n {
            let h = 6e-6 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let rp = residuals(&xp);
            let rm = residuals(&xm);
            for i in 0..m {
                let d = (rp[i] - rm[i]) / (2.0 * h);
                if !d.is_finite() {
                    jac_ok = false;
                }
                jac[(i, j)] = d;
            }
        }
        if !jac_ok {
            break;
        }
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * rv;

        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&jtr)),
                None => match a.lu().solve(&(-&jtr)) {
                    Some(s) => s,
                    None => {
                        lambda *= 4.0;
                        continue;
                    }
                },
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = residuals(&trial);
            let ct = sum_sq(&rt);
            if ct < cost {
                let rel = (cost - ct) / cost.max(1e-300);
                x = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if rel < tol {
                    small_steps += 1;
                } else {
                    small_steps = 0;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // no descent direction left at working precision
            converged = true;
            break;
        }
        if small_steps >= 3 {
            converged = true;
            break;
        }
    }
    Minimum { x, value: cost, iterations, converged }
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut out = 0.0;
    let mut f = inv;
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

/// Halton points in `[0,1)^dim` with a seeded Cranley–Patterson rotation.
pub struct Halton {
    shifts: Vec<f64>,
    index: u64,
}

impl Halton {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim <= PRIMES.len(), "Halton sequence supports at most {} dimensions", PRIMES.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shifts = (0..dim).map(|_| rng.random::<f64>()).collect();
        Halton { shifts, index: 1 }
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let i = self.index;
        self.index += 1;
        self.shifts.iter().enumerate().map(|(d, s)| (radical_inverse(i, PRIMES[d]) + s).fract()).collect()
    }
}
