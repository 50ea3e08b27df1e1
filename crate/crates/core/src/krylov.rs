//! Restarted GMRES for complex linear systems given only as an operator.
//!
//! Arnoldi with modified Gram–Schmidt, Givens rotations on the Hessenberg
//! matrix. Inner products are accumulated serially so repeated solves are
//! bit-identical.

use crate::error::{Error, Result};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub struct GmresOptions {
    pub restart: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions {
            restart: 50,
            max_iter: 2000,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub x: Vec<Complex64>,
    pub iterations: usize,
    /// Final true relative residual `‖b − Ax‖/‖b‖`.
    pub residual: f64,
    pub history: Vec<f64>,
}

fn dotc(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm2(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Solves `A x = b`, `apply(v, out)` writing `A v` into `out`.
pub fn gmres<F>(apply: F, b: &[Complex64], x0: Option<&[Complex64]>, opts: &GmresOptions) -> Result<GmresOutcome>
where
    F: Fn(&[Complex64], &mut [Complex64]),
{
    let n = b.len();
    let zero = Complex64::new(0.0, 0.0);
    let bn = norm2(b);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![zero; n]);
    if bn == 0.0 {
        return Ok(GmresOutcome {
            x: vec![zero; n],
            iterations: 0,
            residual: 0.0,
            history: vec![0.0],
        });
    }
    let m = opts.restart.max(1);
    let mut history = Vec::new();
    let mut iters = 0;
    let mut ax = vec![zero; n];
    loop {
        apply(&x, &mut ax);
        let r: Vec<Complex64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = norm2(&r);
        let rel = beta / bn;
        history.push(rel);
        if rel <= opts.tol {
            return Ok(GmresOutcome {
                x,
                iterations: iters,
                residual: rel,
                history,
            });
        }
        if iters >= opts.max_iter {
            return Err(Error::NotConverged {
                iterations: iters,
                residual: rel,
                history,
            });
        }
        let mut v: Vec<Vec<Complex64>> = vec![r.iter().map(|c| c / beta).collect()];
        let mut h = vec![vec![zero; m]; m + 1];
        let mut cs = vec![zero; m];
        let mut sn = vec![zero; m];
        let mut g = vec![zero; m + 1];
        g[0] = Complex64::new(beta, 0.0);
        let mut k_used = 0;
        for j in 0..m {
            let mut w = vec![zero; n];
            apply(&v[j], &mut w);
            for (i, vi) in v.iter().enumerate() {
                let hij = dotc(vi, &w);
                h[i][j] = hij;
                for (wl, vl) in w.iter_mut().zip(vi) {
                    *wl -= hij * vl;
                }
            }
            let hn = norm2(&w);
            h[j + 1][j] = Complex64::new(hn, 0.0);
            for i in 0..j {
                let t = cs[i].conj() * h[i][j] + sn[i].conj() * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let (a, bb) = (h[j][j], h[j + 1][j]);
            let d = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if d == 0.0 {
                cs[j] = Complex64::new(1.0, 0.0);
                sn[j] = zero;
            } else {
                cs[j] = a / d;
                sn[j] = bb / d;
            }
            h[j][j] = Complex64::new(d, 0.0);
            h[j + 1][j] = zero;
            g[j + 1] = -sn[j] * g[j];
            g[j] = cs[j].conj() * g[j];
            iters += 1;
            k_used = j + 1;
            let est = g[j + 1].norm() / bn;
            history.push(est);
            if est <= opts.tol * 0.5 || hn <= 1e-300 || iters >= opts.max_iter {
                break;
            }
            v.push(w.iter().map(|c| c / hn).collect());
        }
        let mut y = vec![zero; k_used];
        for i in (0..k_used).rev() {
            let s: Complex64 = (i + 1..k_used).map(|l| h[i][l] * y[l]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            for (xl, vl) in x.iter_mut().zip(&v[i]) {
                *xl += yi * vl;
            }
        }
    }
}

/// Power-iteration estimate of the spectral radius of a linear operator.
pub fn spectral_radius_estimate<F>(apply: F, n: usize, iters: usize, seed: u64) -> f64
where
    F: Fn(&[Complex64], &mut [Complex64]),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let nx = norm2(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    let mut est = 0.0;
    for _ in 0..iters.max(1) {
        apply(&x, &mut y);
        est = norm2(&y);
        if est == 0.0 {
            return 0.0;
        }
        for (a, b) in x.iter_mut().zip(&y) {
            *a = b / est;
        }
    }
    est
}
