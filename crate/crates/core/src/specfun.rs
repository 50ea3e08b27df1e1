//! Bessel and Hankel functions of integer and half-integer order for real
//! positive argument, incomplete gamma functions, Gauss–Legendre rules and
//! the grid certificate for the two-sided Hankel magnitude bounds.
//!
//! `J` comes from Miller's backward recurrence, `Y` from forward recurrence
//! seeded by Neumann series (integer order) or the elementary closed forms
//! (half-integer order). Both are carried as `m·e^ln` so large orders at
//! small argument neither overflow `Y` nor flush `J` to zero.

use crate::error::{invalid, Error, Result};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Largest order accepted by default.
pub const NU_MAX: f64 = 200.0;

const RESCALE: f64 = 1e250;

/// Value `m · e^ln`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaled {
    pub m: f64,
    pub ln: f64,
}

impl Scaled {
    pub fn value(self) -> f64 {
        if self.m == 0.0 {
            0.0
        } else {
            self.m * self.ln.exp()
        }
    }

    /// `ln |value|`.
    pub fn ln_abs(self) -> f64 {
        self.m.abs().ln() + self.ln
    }
}

/// Complex value `m · e^ln`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledComplex {
    pub m: Complex64,
    pub ln: f64,
}

impl ScaledComplex {
    pub fn ln_abs(self) -> f64 {
        self.m.norm().ln() + self.ln
    }

    pub fn value(self) -> Result<Complex64> {
        if self.ln_abs() > 709.0 {
            return Err(Error::Overflow(format!("|value| = e^{:.1}", self.ln_abs())));
        }
        Ok(self.m * self.ln.exp())
    }
}

fn check_order(nu: f64, z: f64, nu_max: f64) -> Result<u32> {
    if !(z > 0.0) || !z.is_finite() {
        return invalid(format!("Bessel argument must be positive and finite, got {z}"));
    }
    let two = 2.0 * nu;
    if nu < 0.0 || (two - two.round()).abs() > 1e-12 || nu > nu_max {
        return invalid(format!("order {nu} is not a half-integer in [0, {nu_max}]"));
    }
    Ok(two.round() as u32)
}

/// `(J_ν(z), Y_ν(z))` in scaled form for `2ν ∈ {0, 1, 2, …}`.
pub fn bessel_jy_scaled(nu: f64, z: f64) -> Result<(Scaled, Scaled)> {
    bessel_jy_scaled_max(nu, z, NU_MAX)
}

pub fn bessel_jy_scaled_max(nu: f64, z: f64, nu_max: f64) -> Result<(Scaled, Scaled)> {
    let two_nu = check_order(nu, z, nu_max)?;
    let n = (two_nu / 2) as usize;
    if two_nu % 2 == 0 {
        let (j, y, _, _) = integer_order(n, z);
        Ok((j, y))
    } else {
        Ok(half_order(n, z))
    }
}

/// Starting index for Miller's algorithm.
fn miller_start(n: usize, z: f64) -> usize {
    let big = (n as f64).max(z);
    let m = (big + 30.0 + 6.0 * big.sqrt()).ceil() as usize;
    m + (m % 2)
}

/// Also returns `(J_0, Y_0)`.
fn integer_order(n: usize, z: f64) -> (Scaled, Scaled, f64, f64) {
    let top = miller_start(n, z);
    let mut next = 0.0; // t_{k+1}
    let mut cur = 1e-30; // t_k
    let mut norm = 0.0; // t_0 + 2 Σ t_{2j}
    let mut neu0 = 0.0; // Σ (−1)^j t_{2j} / j
    let mut neu1 = 0.0; // Σ (−1)^j (t_{2j−1} − t_{2j+1}) / (2j)
    let mut saved = if n == top { Some((cur, 0.0)) } else { None };
    let t0;
    let mut t1 = 0.0;
    let mut k = top;
    loop {
        if k % 2 == 0 && k >= 2 {
            let j = (k / 2) as f64;
            norm += 2.0 * cur;
            let sgn = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            neu0 += sgn * cur / j;
        } else if k % 2 == 1 {
            // t_k appears as t_{2j−1} with j = (k+1)/2 and as t_{2j+1} with j = (k−1)/2.
            let ja = (k + 1) / 2;
            let sa = if ja % 2 == 0 { 1.0 } else { -1.0 };
            neu1 += sa * cur / (2 * ja) as f64;
            if k >= 3 {
                let jb = (k - 1) / 2;
                let sb = if jb % 2 == 0 { 1.0 } else { -1.0 };
                neu1 -= sb * cur / (2 * jb) as f64;
            }
        }
        if k == 1 {
            t1 = cur;
        }
        if k == 0 {
            t0 = cur;
            norm += cur;
            break;
        }
        let prev = 2.0 * k as f64 / z * cur - next;
        next = cur;
        cur = prev;
        k -= 1;
        if k == n {
            saved = Some((cur, 0.0));
        }
        if cur.abs() > RESCALE {
            let r = 1.0 / RESCALE;
            cur *= r;
            next *= r;
            norm *= r;
            neu0 *= r;
            neu1 *= r;
            t1 *= r;
            if let Some((_, l)) = saved.as_mut() {
                *l += r.ln();
            }
        }
    }
    let (sv, sl) = saved.expect("target order visited");
    let j = Scaled { m: sv / norm, ln: sl };
    let j0 = t0 / norm;
    let j1 = t1 / norm;
    let lg = (z / 2.0).ln() + EULER_GAMMA;
    let y0 = 2.0 / PI * lg * j0 - 4.0 / PI * neu0 / norm;
    if n == 0 {
        return (j, Scaled { m: y0, ln: 0.0 }, j0, y0);
    }
    let y1 = -2.0 / PI * (j0 / z - lg * j1) + 4.0 / PI * neu1 / norm;
    let y = forward_y(y0, y1, 0.0, n, z);
    (j, y, j0, y0)
}

/// Forward recurrence from `Y_f`, `Y_{f+1}` to `Y_{f+n}`.
fn forward_y(y_lo: f64, y_hi: f64, f: f64, n: usize, z: f64) -> Scaled {
    if n == 0 {
        return Scaled { m: y_lo, ln: 0.0 };
    }
    let (mut a, mut b, mut ln) = (y_lo, y_hi, 0.0);
    for k in 1..n {
        let c = 2.0 * (k as f64 + f) / z * b - a;
        a = b;
        b = c;
        if b.abs() > RESCALE {
            a /= RESCALE;
            b /= RESCALE;
            ln += RESCALE.ln();
        }
    }
    Scaled { m: b, ln }
}

fn half_order(n: usize, z: f64) -> (Scaled, Scaled) {
    // Orders are k + 1/2; index k = 0 is order 1/2.
    let top = miller_start(n + 1, z);
    let mut next = 0.0;
    let mut cur = 1e-30;
    let mut saved = if n == top { Some((cur, 0.0)) } else { None };
    let mut k = top;
    while k > 0 {
        let prev = (2.0 * k as f64 + 1.0) / z * cur - next;
        next = cur;
        cur = prev;
        k -= 1;
        if k == n {
            saved = Some((cur, 0.0));
        }
        if cur.abs() > RESCALE {
            cur /= RESCALE;
            next /= RESCALE;
            if let Some((_, l)) = saved.as_mut() {
                *l -= RESCALE.ln();
            }
        }
    }
    // cur = t_{1/2}, next = t_{3/2}
    let t_minus = cur / z - next;
    let a = (2.0 / (PI * z)).sqrt();
    let (s, c) = z.sin_cos();
    let scale = if s.abs() >= c.abs() { a * s / cur } else { a * c / t_minus };
    let (sv, sl) = saved.expect("target order visited");
    let j = Scaled { m: sv * scale, ln: sl };
    // Y_{−1/2} = √(2/(πz)) sin z, Y_{1/2} = −√(2/(πz)) cos z.
    let y = if n == 0 {
        Scaled { m: -a * c, ln: 0.0 }
    } else {
        let y_m = a * s;
        let y_p = -a * c;
        // Y_{3/2} = (1/z) Y_{1/2} − Y_{−1/2}
        let y_32 = y_p / z - y_m;
        forward_y(y_p, y_32, 0.5, n, z)
    };
    (j, y)
}

/// `H^{(1)}_ν(z) = J_ν + iY_ν` in scaled form.
pub fn hankel_h1_scaled(nu: f64, z: f64) -> Result<ScaledComplex> {
    hankel_h1_scaled_max(nu, z, NU_MAX)
}

pub fn hankel_h1_scaled_max(nu: f64, z: f64, nu_max: f64) -> Result<ScaledComplex> {
    let (j, y) = bessel_jy_scaled_max(nu, z, nu_max)?;
    let ln = j.ln.max(y.ln);
    let jm = if j.m == 0.0 { 0.0 } else { j.m * (j.ln - ln).exp() };
    let ym = if y.m == 0.0 { 0.0 } else { y.m * (y.ln - ln).exp() };
    Ok(ScaledComplex {
        m: Complex64::new(jm, ym),
        ln,
    })
}

/// Hankel function of the first kind; errors if `|H|` leaves the `f64` range.
pub fn hankel_h1(nu: f64, z: f64) -> Result<Complex64> {
    hankel_h1_scaled(nu, z)?.value()
}

pub fn bessel_j(nu: f64, z: f64) -> Result<f64> {
    Ok(bessel_jy_scaled(nu, z)?.0.value())
}

pub fn bessel_y(nu: f64, z: f64) -> Result<f64> {
    let y = bessel_jy_scaled(nu, z)?.1;
    if y.ln_abs() > 709.0 {
        return Err(Error::Overflow(format!("Y_{nu}({z}) out of range")));
    }
    Ok(y.value())
}

/// `(H_0(z), H_1(z))` for the two-dimensional outgoing kernel.
pub fn hankel01(z: f64) -> (Complex64, Complex64) {
    let (j1, y1, j0, y0) = integer_order(1, z);
    (Complex64::new(j0, y0), Complex64::new(j1.value(), y1.value()))
}

/// `ln |H_ν(z)|²`.
pub fn ln_hankel_sq(nu: f64, z: f64) -> Result<f64> {
    Ok(2.0 * hankel_h1_scaled(nu, z)?.ln_abs())
}

/// `ln` of the model magnitude `(4/(πez))(2ν/(ez))^{2ν−1}`.
pub fn ln_hankel_model(nu: f64, z: f64) -> f64 {
    (4.0 / (PI * E * z)).ln() + (2.0 * nu - 1.0) * (2.0 * nu / (E * z)).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HankelBoundCertificate {
    pub z1: f64,
    pub z2: f64,
    pub nu_max: f64,
    pub samples: usize,
    /// Certified constant, already inflated.
    #[serde(rename = "C")]
    pub c: f64,
    pub inflation: f64,
    /// Grid point where the uninflated constant is attained.
    pub worst_nu: f64,
    pub worst_z: f64,
}

/// Grid constant for the two-sided bound
/// `C⁻² M_ν(z) ≤ |H_ν(z)|² ≤ C² M_ν(z)` and `|H_0|² ≤ C²` over
/// `z ∈ [z1, z2]`, `ν ∈ {1/2, 1, …, nuMax}`, inflated by 5%.
pub fn certify_hankel_bounds(z1: f64, z2: f64, nu_max: f64, samples: usize) -> Result<HankelBoundCertificate> {
    if !(z1 > 0.0 && z1 <= z2 && z2.is_finite()) {
        return invalid(format!("need 0 < z1 ≤ z2, got [{z1}, {z2}]"));
    }
    if nu_max < 0.5 {
        return invalid("nuMax must be at least 1/2");
    }
    let samples = if z1 == z2 { 1 } else { samples.max(2) };
    let orders: Vec<f64> = (1..=(2.0 * nu_max).floor() as usize).map(|t| t as f64 / 2.0).collect();
    let zs: Vec<f64> = (0..samples)
        .map(|i| {
            if samples == 1 {
                z1
            } else {
                z1 + (z2 - z1) * i as f64 / (samples - 1) as f64
            }
        })
        .collect();
    let per_z: Vec<Result<(f64, f64, f64)>> = zs
        .par_iter()
        .map(|&z| {
            let mut best = (2.0 * hankel_h1_scaled_max(0.0, z, nu_max.max(NU_MAX))?.ln_abs(), 0.0, z);
            for &nu in &orders {
                let h = 2.0 * hankel_h1_scaled_max(nu, z, nu_max.max(NU_MAX))?.ln_abs();
                let d = (h - ln_hankel_model(nu, z)).abs();
                if !d.is_finite() {
                    return Err(Error::Overflow(format!("non-finite bound ratio at ν={nu}, z={z}")));
                }
                if d > best.0 {
                    best = (d, nu, z);
                }
            }
            Ok(best)
        })
        .collect();
    let mut best = (0.0f64, 0.0, z1);
    for r in per_z {
        let r = r?;
        if r.0 > best.0 {
            best = r;
        }
    }
    let inflation = 1.05;
    let c = (best.0 / 2.0).exp().max(1.0) * inflation;
    let cert = HankelBoundCertificate {
        z1,
        z2,
        nu_max,
        samples,
        c,
        inflation,
        worst_nu: best.1,
        worst_z: best.2,
    };
    // Re-evaluate at the worst point; failure means the evaluation is not reproducible.
    let h = 2.0 * hankel_h1_scaled(best.1, best.2)?.ln_abs();
    let gap = if best.1 == 0.0 { h } else { (h - ln_hankel_model(best.1, best.2)).abs() };
    if gap > 2.0 * c.ln() {
        return Err(Error::Invalid("Hankel bound violated at machine precision".into()));
    }
    Ok(cert)
}

impl HankelBoundCertificate {
    /// Checks both bounds at one point.
    pub fn holds_at(&self, nu: f64, z: f64) -> Result<bool> {
        let h = 2.0 * hankel_h1_scaled(nu, z)?.ln_abs();
        let lc = 2.0 * self.c.ln();
        if nu == 0.0 {
            return Ok(h <= lc);
        }
        let m = ln_hankel_model(nu, z);
        Ok(h <= m + lc && h >= m - lc)
    }
}

/// `ln Γ(s)` for `s > 0`.
pub fn ln_gamma(s: f64) -> f64 {
    libm::lgamma(s)
}

pub fn gamma(s: f64) -> f64 {
    libm::tgamma(s)
}

/// Regularized `P(s, x)` and `Q(s, x)`.
fn regularized_gamma(s: f64, x: f64) -> (f64, f64) {
    if x == 0.0 {
        return (0.0, 1.0);
    }
    let pref = (s * x.ln() - x - ln_gamma(s)).exp();
    if x < s + 1.0 {
        let mut term = 1.0 / s;
        let mut sum = term;
        let mut a = s;
        for _ in 0..10_000 {
            a += 1.0;
            term *= x / a;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        let p = sum * pref;
        (p, 1.0 - p)
    } else {
        // Modified Lentz for the continued fraction of Q.
        let tiny = 1e-300;
        let mut b = x + 1.0 - s;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = pref * h;
        (1.0 - q, q)
    }
}

fn check_gamma_args(s: f64, x: f64) -> Result<()> {
    if !(s > 0.0) || !(x >= 0.0) {
        return invalid(format!("incomplete gamma needs s > 0, x ≥ 0, got ({s}, {x})"));
    }
    Ok(())
}

/// `γ(s, x) = ∫_0^x t^{s−1} e^{−t} dt`.
pub fn lower_incomplete_gamma(s: f64, x: f64) -> Result<f64> {
    check_gamma_args(s, x)?;
    Ok(regularized_gamma(s, x).0 * gamma(s))
}

/// `Γ(s, x) = ∫_x^∞ t^{s−1} e^{−t} dt`.
pub fn upper_incomplete_gamma(s: f64, x: f64) -> Result<f64> {
    check_gamma_args(s, x)?;
    Ok(regularized_gamma(s, x).1 * gamma(s))
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = t;
                p0 = 1.0;
            }
            dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            let dt = p1 / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -t;
        x[n - 1 - i] = t;
        w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}
