//! Quantitative Rellich machinery: harmonic decomposition of far fields, the
//! far-to-near-field bound, three-balls exponents, chains of balls, and the
//! propagation of smallness from the far annulus up to the boundary of the
//! convex hull of two scatterers.
//!
//! The constants of the three-balls and chain lemmas exist but are not
//! explicit, so they are calibrated by randomized sweeps and carried around
//! in a [`Calibration`].

use crate::error::{invalid, Error, Result};
use crate::fields::{field_norm, h2_surrogate, helmholtz_residual_where, plane_wave, Grid, Norm, Region, Role, WaveField};
use crate::geom::{convex_hull_2d, Polytope};
use crate::solver::{aligned_grid, FarFieldPattern, ScatteringSolution, SphereLayout};
use crate::specfun::{certify_hankel_bounds, gauss_legendre, hankel_h1_scaled, HankelBoundCertificate, NU_MAX};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};
use std::path::Path;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Relative Helmholtz residual `max|Δ_h w + k²w| / (k² max|w|)` accepted on a ball.
pub const HELMHOLTZ_TOL: f64 = 0.05;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn i_pow(n: i64) -> Complex64 {
    match n.rem_euclid(4) {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

// ---------------------------------------------------------------------------
// Harmonic decomposition

/// Orthonormal spherical harmonics `Y_lm(d)` for `l ≤ lmax`, at index
/// `l² + l + m`, with `Y_{l,−m} = (−1)^m conj(Y_lm)`.
pub fn spherical_harmonics(lmax: usize, d: &[f64]) -> Vec<Complex64> {
    let r = norm(d);
    let ct = (d[2] / r).clamp(-1.0, 1.0);
    let st = (1.0 - ct * ct).sqrt();
    let phi = d[1].atan2(d[0]);
    let n = lmax + 1;
    // Normalized associated Legendre values p[l][m].
    let mut p = vec![vec![0.0; n]; n];
    p[0][0] = (1.0 / (4.0 * PI)).sqrt();
    for m in 1..n {
        p[m][m] = -((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * st * p[m - 1][m - 1];
    }
    for m in 0..n {
        if m + 1 < n {
            p[m + 1][m] = ((2 * m + 3) as f64).sqrt() * ct * p[m][m];
        }
        for l in m + 2..n {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            p[l][m] = a * (ct * p[l - 1][m] - b * p[l - 2][m]);
        }
    }
    let mut y = vec![ZERO; n * n];
    for l in 0..n {
        for m in 0..=l {
            let v = Complex64::from_polar(p[l][m], m as f64 * phi);
            y[l * l + l + m] = v;
            if m > 0 {
                let s = if m % 2 == 0 { 1.0 } else { -1.0 };
                y[l * l + l - m] = v.conj() * s;
            }
        }
    }
    y
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicDecomposition {
    pub dim: usize,
    pub k: f64,
    /// Aggregated degree magnitudes `b_0, …, b_J`.
    pub b: Vec<f64>,
    /// 2D: `a_m` for `m = −J..=J` at index `m + J`; 3D: `a_lm` at `l² + l + m`.
    pub coefficients: Vec<Complex64>,
    pub truncation: usize,
    /// `‖A‖_{L²(S^{n−1})}` by the layout quadrature.
    pub far_field_norm: f64,
}

/// Largest admissible truncation for a sampling layout.
pub fn max_truncation(layout: &SphereLayout) -> usize {
    match *layout {
        SphereLayout::Equispaced { m } => m / 2,
        SphereLayout::GaussProduct { n_theta, n_phi } => n_theta.saturating_sub(1).min(n_phi.saturating_sub(1) / 2),
        SphereLayout::Fibonacci { m } => ((m as f64).sqrt() / 2.0).floor() as usize,
    }
}

/// Fourier (2D) or spherical-harmonic (3D) coefficients of a far field in
/// the orthonormal basis, truncated at degree `J` (default: the largest the
/// sampling resolves).
pub fn decompose_far_field(ff: &FarFieldPattern, truncation: Option<usize>) -> Result<HarmonicDecomposition> {
    let jmax = max_truncation(&ff.layout);
    let j = truncation.unwrap_or(jmax);
    if j > jmax {
        return invalid(format!("truncation {j} aliases: layout resolves degrees up to {jmax}"));
    }
    let far_field_norm = ff.l2_norm();
    match ff.layout {
        SphereLayout::Equispaced { m } => {
            if m == 0 {
                return invalid("empty far-field sampling");
            }
            let mut buf = ff.values.clone();
            FftPlanner::new().plan_fft_forward(m).process(&mut buf);
            let scale = (2.0 * PI).sqrt() / m as f64;
            let mut coefficients = vec![ZERO; 2 * j + 1];
            for mm in -(j as i64)..=(j as i64) {
                // The Nyquist bin of an even sampling is kept once, at +M/2.
                if m % 2 == 0 && mm == -((m / 2) as i64) {
                    continue;
                }
                coefficients[(mm + j as i64) as usize] = buf[mm.rem_euclid(m as i64) as usize] * scale;
            }
            let b = (0..=j)
                .map(|l| {
                    if l == 0 {
                        coefficients[j].norm()
                    } else {
                        (coefficients[j + l].norm_sqr() + coefficients[j - l].norm_sqr()).sqrt()
                    }
                })
                .collect();
            Ok(HarmonicDecomposition {
                dim: 2,
                k: ff.k,
                b,
                coefficients,
                truncation: j,
                far_field_norm,
            })
        }
        _ => {
            let ys: Vec<Vec<Complex64>> = ff.directions.par_iter().map(|d| spherical_harmonics(j, d)).collect();
            let n = (j + 1) * (j + 1);
            let mut coefficients = vec![ZERO; n];
            for ((y, a), w) in ys.iter().zip(&ff.values).zip(&ff.weights) {
                for (c, yv) in coefficients.iter_mut().zip(y) {
                    *c += a * yv.conj() * w;
                }
            }
            let b = (0..=j)
                .map(|l| (l * l..(l + 1) * (l + 1)).map(|i| coefficients[i].norm_sqr()).sum::<f64>().sqrt())
                .collect();
            Ok(HarmonicDecomposition {
                dim: 3,
                k: ff.k,
                b,
                coefficients,
                truncation: j,
                far_field_norm,
            })
        }
    }
}

impl HarmonicDecomposition {
    /// `Σ b_j²`.
    pub fn energy(&self) -> f64 {
        self.b.iter().map(|b| b * b).sum()
    }

    /// Last degree whose `b_j` exceeds `rel·(Σ b_j²)^{1/2}`; higher degrees
    /// are roundoff and explode under the Hankel weights inside the far zone.
    pub fn significant_truncation(&self, rel: f64) -> usize {
        let floor = rel * self.energy().sqrt();
        self.b.iter().rposition(|b| *b > floor).unwrap_or(0)
    }

    /// Copy restricted to degrees `≤ j`.
    pub fn truncated(&self, j: usize) -> Self {
        let j = j.min(self.truncation);
        let coefficients = if self.dim == 2 {
            let t = self.truncation;
            self.coefficients[t - j..=t + j].to_vec()
        } else {
            self.coefficients[..(j + 1) * (j + 1)].to_vec()
        };
        HarmonicDecomposition {
            dim: self.dim,
            k: self.k,
            b: self.b[..=j].to_vec(),
            coefficients,
            truncation: j,
            far_field_norm: self.far_field_norm,
        }
    }

    /// Hankel order `j + (n−2)/2` attached to degree `j`.
    pub fn order(&self, j: usize) -> f64 {
        j as f64 + (self.dim as f64 - 2.0) / 2.0
    }

    /// `‖w‖²_{L²(S(0,r))} = (π/2) Σ b_j² kr |H_{j+(n−2)/2}(kr)|²`.
    pub fn sphere_norm_sq(&self, r: f64) -> Result<f64> {
        let z = self.k * r;
        let mut s = 0.0;
        for (j, &b) in self.b.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            let h = hankel_h1_scaled(self.order(j), z)?;
            let ln = 2.0 * b.ln() + (PI / 2.0 * z).ln() + 2.0 * h.ln_abs();
            if ln > 709.0 {
                return Err(Error::Overflow(format!("degree {j} term at r = {r}")));
            }
            s += ln.exp();
        }
        Ok(s)
    }

    /// `‖w‖_{L²(B_{r2} \ B_{r1})}` by Gauss–Legendre in the radius.
    pub fn annulus_norm(&self, r1: f64, r2: f64) -> Result<f64> {
        let (x, w) = gauss_legendre(32);
        let mut s = 0.0;
        for (xi, wi) in x.iter().zip(&w) {
            let r = 0.5 * (r1 + r2) + 0.5 * (r2 - r1) * xi;
            s += wi * 0.5 * (r2 - r1) * self.sphere_norm_sq(r)?;
        }
        Ok(s.sqrt())
    }

    /// Radiating field with this far field, evaluated from the Hankel series.
    pub fn reconstruct(&self, points: &[Vec<f64>]) -> Result<Vec<Complex64>> {
        let k = self.k;
        let j = self.truncation as i64;
        points
            .iter()
            .map(|x| {
                let r = norm(x);
                if r == 0.0 {
                    return invalid("series diverges at the origin");
                }
                let z = k * r;
                let mut s = ZERO;
                if self.dim == 2 {
                    let th = x[1].atan2(x[0]);
                    let pre = (PI * k / 2.0).sqrt() / (2.0 * PI).sqrt() * Complex64::from_polar(1.0, PI / 4.0);
                    for m in -j..=j {
                        let a = self.coefficients[(m + j) as usize];
                        if a == ZERO {
                            continue;
                        }
                        let mut h = hankel_h1_scaled(m.unsigned_abs() as f64, z)?.value()?;
                        if m < 0 && m % 2 != 0 {
                            h = -h;
                        }
                        s += a * pre * i_pow(m) * h * Complex64::from_polar(1.0, m as f64 * th);
                    }
                } else {
                    let y = spherical_harmonics(self.truncation, x);
                    for l in 0..=self.truncation {
                        let h = hankel_h1_scaled(l as f64 + 0.5, z)?.value()? * (PI / (2.0 * z)).sqrt();
                        let f = h * k * i_pow(l as i64 + 1);
                        for i in l * l..(l + 1) * (l + 1) {
                            s += self.coefficients[i] * f * y[i];
                        }
                    }
                }
                Ok(s)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Far field to near field

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ff2nfRegime {
    Decay,
    Saturated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ff2nfBound {
    pub epsilon: f64,
    pub s: f64,
    pub k: f64,
    pub r: f64,
    pub b0: f64,
    pub ell: f64,
    pub nu0: f64,
    pub regime: Ff2nfRegime,
    /// Bound on `‖w‖_{L²}` over the annulus `annulus[0] ≤ |x| < annulus[1]`.
    pub bound: f64,
    pub annulus: [f64; 2],
    /// Multiplicative constant in front of `S·B₀^{−(ℓ−3)/2}` or `ε`.
    pub constant: f64,
    pub certificate: Option<HankelBoundCertificate>,
}

/// `ℓ = √(2ekR ln(S/ε))`, zero when `S ≤ ε`.
pub fn ell(epsilon: f64, s: f64, k: f64, r: f64) -> f64 {
    if s <= epsilon {
        0.0
    } else {
        (2.0 * E * k * r * (s / epsilon).ln()).sqrt()
    }
}

/// Far-field smallness `ε` and a-priori bound `S ≥ ‖w‖_{L²(B_{2R}\B_R)}`
/// turned into a near-field `L²` bound. With `ν₀ = ⌊ℓ⌋/2 ≥ max(3/2, eB₀kR)`
/// and `ε ≤ S` the bound is `√(2 max(2C²R/e, C⁴)) S B₀^{−(ℓ−3)/2}` on
/// `B_{2B₀R} \ B_{B₀R}`, with `C` from the Hankel certificate on
/// `[kR, 2B₀kR]`; otherwise `S/ε` is bounded and the bound is
/// `exp((1+max(3, 2eB₀kR))²/(2ekR)) ε` on `B_{2R} \ B_R`.
pub fn ff2nf_bound(epsilon: f64, s: f64, k: f64, r: f64, b0: f64) -> Result<Ff2nfBound> {
    if !(epsilon > 0.0 && s > 0.0 && epsilon.is_finite() && s.is_finite()) {
        return invalid(format!("need ε, S > 0, got ε = {epsilon}, S = {s}"));
    }
    if !(k > 0.0 && r > 0.0 && b0 > 1.0) {
        return invalid(format!("need k, R > 0 and B₀ > 1, got k = {k}, R = {r}, B₀ = {b0}"));
    }
    let l = ell(epsilon, s, k, r);
    let nu0 = l.floor() / 2.0;
    if nu0 >= f64::max(1.5, E * b0 * k * r) && epsilon <= s {
        let nu_max = (nu0.max(E * b0 * k * r).ceil() + 16.0).min(NU_MAX);
        let cert = certify_hankel_bounds(k * r, 2.0 * b0 * k * r, nu_max, 64)?;
        let c = cert.c;
        let constant = (2.0 * f64::max(2.0 * c * c * r / E, c.powi(4))).sqrt();
        Ok(Ff2nfBound {
            epsilon,
            s,
            k,
            r,
            b0,
            ell: l,
            nu0,
            regime: Ff2nfRegime::Decay,
            bound: constant * s * b0.powf(-(l - 3.0) / 2.0),
            annulus: [b0 * r, 2.0 * b0 * r],
            constant,
            certificate: Some(cert),
        })
    } else {
        let constant = ((1.0 + f64::max(3.0, 2.0 * E * b0 * k * r)).powi(2) / (2.0 * E * k * r)).exp().max(1.0);
        Ok(Ff2nfBound {
            epsilon,
            s,
            k,
            r,
            b0,
            ell: l,
            nu0,
            regime: Ff2nfRegime::Saturated,
            bound: constant * epsilon,
            annulus: [r, 2.0 * r],
            constant,
            certificate: None,
        })
    }
}

// ---------------------------------------------------------------------------
// Three balls and calibration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeSpheres {
    pub center: Vec<f64>,
    pub r: f64,
    /// `‖w‖_{L∞(B_{2r})}`.
    pub lhs: f64,
    pub m1: f64,
    pub m4: f64,
    /// Exponent solving `lhs = m4^{1−β} m1^β`; `None` when the norms coincide.
    pub beta_star: Option<f64>,
    pub residual: f64,
}

impl ThreeSpheres {
    /// `‖w‖^{1−β}_{B_{4r}} ‖w‖^β_{B_r}`.
    pub fn rhs(&self, beta: f64) -> f64 {
        self.m4.powf(1.0 - beta) * self.m1.powf(beta)
    }

    /// Largest `β` for which `lhs ≤ c·rhs(β)`.
    pub fn beta_max(&self, c: f64) -> f64 {
        if self.m4 <= self.m1 || self.m1 == 0.0 {
            return if self.lhs <= c * self.m4 { f64::INFINITY } else { f64::NEG_INFINITY };
        }
        (c * self.m4 / self.lhs).ln() / (self.m4 / self.m1).ln()
    }
}

fn require_in_grid(g: &Grid, x: &[f64], rad: f64) -> Result<()> {
    let hi = g.max_point();
    for i in 0..g.dim {
        if x[i] - rad < g.origin[i] - 1e-12 || x[i] + rad > hi[i] + 1e-12 {
            return Err(Error::Geometry(format!("ball of radius {rad} at {x:?} leaves the grid")));
        }
    }
    Ok(())
}

/// Relative Helmholtz residual of `w` over the cells where `keep` holds.
fn relative_residual(w: &WaveField, scale: f64, keep: impl Fn(&[f64]) -> bool + Sync) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    helmholtz_residual_where(w, None, keep) / (w.k * w.k * scale)
}

/// `L∞` norms of `w` on `B(x,r)`, `B(x,2r)`, `B(x,4r)` and the fitted exponent.
pub fn three_spheres_check(w: &WaveField, x: &[f64], r: f64) -> Result<ThreeSpheres> {
    let g = &w.grid;
    if x.len() != g.dim {
        return Err(Error::Dimension(x.len(), g.dim));
    }
    if r < g.h {
        return invalid(format!("radius {r} below the grid spacing {}", g.h));
    }
    require_in_grid(g, x, 4.0 * r)?;
    let ball = |rad: f64| Region::Ball { center: x.to_vec(), r: rad };
    let m1 = field_norm(w, &ball(r), Norm::Linf)?;
    let lhs = field_norm(w, &ball(2.0 * r), Norm::Linf)?;
    let m4 = field_norm(w, &ball(4.0 * r), Norm::Linf)?;
    let residual = relative_residual(w, m4, |p| dist(p, x) < 4.0 * r);
    if residual > HELMHOLTZ_TOL {
        return Err(Error::Precondition(format!("not a Helmholtz solution on B(x, 4r): relative residual {residual:.3e}")));
    }
    let beta_star = if m1 == 0.0 || m4 - m1 <= 1e-12 * m4 {
        None
    } else {
        Some(((lhs / m4).ln() / (m1 / m4).ln()).clamp(0.0, 1.0))
    };
    Ok(ThreeSpheres {
        center: x.to_vec(),
        r,
        lhs,
        m1,
        m4,
        beta_star,
        residual,
    })
}

/// Superposition `Σ a_j e^{ik d_j·x}` of plane waves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneWaveSum {
    pub k: f64,
    pub directions: Vec<Vec<f64>>,
    pub amplitudes: Vec<Complex64>,
}

impl PlaneWaveSum {
    /// Uniform random directions and amplitudes, scaled so `Σ|a_j| = 1`.
    pub fn random(k: f64, dim: usize, waves: usize, rng: &mut impl Rng) -> Self {
        let directions = (0..waves)
            .map(|_| {
                let p = rng.gen_range(0.0..2.0 * PI);
                if dim == 2 {
                    vec![p.cos(), p.sin()]
                } else {
                    let z: f64 = rng.gen_range(-1.0..1.0);
                    let s = (1.0 - z * z).sqrt();
                    vec![s * p.cos(), s * p.sin(), z]
                }
            })
            .collect();
        let mut amplitudes: Vec<Complex64> = (0..waves)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let total: f64 = amplitudes.iter().map(|a| a.norm()).sum();
        if total > 0.0 {
            amplitudes.iter_mut().for_each(|a| *a /= total);
        }
        PlaneWaveSum { k, directions, amplitudes }
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        self.directions
            .iter()
            .zip(&self.amplitudes)
            .map(|(d, a)| a * Complex64::from_polar(1.0, self.k * d.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()))
            .sum()
    }

    /// Sampled on a grid.
    pub fn field(&self, grid: Grid) -> WaveField {
        WaveField::from_fn(grid, self.k, Role::Other, |x| self.eval(x))
    }
}

/// Calibrated constants of the three-balls and chain lemmas for one wavenumber.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub k: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(rename = "R_m")]
    pub r_m: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub seed: u64,
    pub trials: usize,
}

fn default_dim() -> usize {
    2
}

/// Default `R_m`: half a wavelength.
pub fn default_r_m(k: f64) -> f64 {
    PI / k
}

/// Grid around `x` resolving the three balls of radius `r`.
pub fn ball_grid(dim: usize, x: &[f64], r: f64) -> Result<Grid> {
    let cells = if dim == 2 { 12.0 } else { 5.0 };
    let h = r / cells;
    let n = (2.0 * (4.0 * r + 2.0 * h) / h).ceil() as usize;
    let half = n as f64 * h / 2.0;
    let origin = x.iter().map(|c| c - half + h / 2.0).collect();
    Grid::new(dim, origin, h, vec![n; dim])
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// One randomized three-balls trial: a 20-wave superposition at the origin,
/// `r` uniform in `[0.2, 0.95]·R_m/4`.
pub fn three_balls_trial(k: f64, dim: usize, r_m: f64, seed: u64, trial: usize) -> Result<ThreeSpheres> {
    let mut rng = trial_rng(seed, trial);
    let field = PlaneWaveSum::random(k, dim, 20, &mut rng);
    let r = r_m / 4.0 * rng.gen_range(0.2..0.95);
    let x = vec![0.0; dim];
    let w = field.field(ball_grid(dim, &x, r)?);
    three_spheres_check(&w, &x, r)
}

/// Calibrates `(C, c₁, c₂)`. With `C = 1` each trial admits every
/// `β ≤ β_max(C(2+√2)^{3/2})`; `c₁ = min(1, 4 min β_max)/1.1`, `C = 1.1`,
/// `c₂ = c₁/4`.
pub fn calibrate(k: f64, dim: usize, trials: usize, seed: u64, r_m: Option<f64>) -> Result<Calibration> {
    if !(k > 0.0) || !(dim == 2 || dim == 3) || trials == 0 {
        return invalid("calibration needs k > 0, dim 2 or 3 and at least one trial");
    }
    let r_m = r_m.unwrap_or_else(|| default_r_m(k));
    let c0 = (2.0 + 2f64.sqrt()).powf(1.5);
    let results: Vec<Result<ThreeSpheres>> = (0..trials).into_par_iter().map(|t| three_balls_trial(k, dim, r_m, seed, t)).collect();
    let mut c1 = 1.0f64;
    for res in results {
        c1 = c1.min(4.0 * res?.beta_max(c0));
    }
    let c1 = c1 / 1.1;
    if c1 <= 0.0 {
        return Err(Error::Precondition("calibration found a vanishing three-balls exponent".into()));
    }
    Ok(Calibration {
        k,
        dim,
        r_m,
        c: 1.1,
        c1,
        c2: c1 / 4.0,
        seed,
        trials,
    })
}

impl Calibration {
    /// `C (2+√2)^{3/2}`.
    pub fn three_balls_constant(&self) -> f64 {
        self.c * (2.0 + 2f64.sqrt()).powf(1.5)
    }

    /// Chain constant `(C(2+√2)^{3/2})^{4/(3c₁)}`.
    pub fn chain_constant(&self) -> f64 {
        self.three_balls_constant().max(1.0).powf(4.0 / (3.0 * self.c1))
    }

    /// `[c₁/4, 1 − 3c₁/4]`.
    pub fn beta_range(&self) -> (f64, f64) {
        (self.c1 / 4.0, 1.0 - 0.75 * self.c1)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Calibration = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.r_m > 0.0 && self.c >= 1.0 && self.c1 > 0.0 && self.c1 < 1.0) {
            return invalid("calibration constants out of range");
        }
        if (self.c2 - self.c1 / 4.0).abs() > 1e-12 * self.c1 {
            return invalid("calibration needs c2 = c1/4");
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Chains of balls

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationPath {
    pub centers: Vec<Vec<f64>>,
    pub r: f64,
    /// `‖w‖_{L∞(B_1)}` (measured or assumed).
    pub source_bound: f64,
    /// Bound carried to each ball by one three-balls step at a time.
    pub carried: Vec<f64>,
}

impl PropagationPath {
    /// Centres from `from` to `to` at spacing at most `r`.
    pub fn straight(from: &[f64], to: &[f64], r: f64) -> Self {
        let l = dist(from, to);
        let steps = (l / r - 1e-9).ceil().max(0.0) as usize;
        let centers = if steps == 0 {
            vec![from.to_vec()]
        } else {
            (0..=steps)
                .map(|i| {
                    let t = i as f64 / steps as f64;
                    from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect()
                })
                .collect()
        };
        PropagationPath {
            centers,
            r,
            source_bound: f64::NAN,
            carried: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Consecutive centres at most `r` apart.
    pub fn check_spacing(&self) -> Result<()> {
        for (i, p) in self.centers.windows(2).enumerate() {
            if dist(&p[0], &p[1]) > self.r * (1.0 + 1e-9) {
                return Err(Error::Geometry(format!("centres {i} and {} are more than r apart", i + 1)));
            }
        }
        Ok(())
    }
}

/// Closed-form chain bound `C T m₁^{c₂^{K−1}}`; `K = 1` returns `m₁`.
pub fn chain_bound(cal: &Calibration, t: f64, m1: f64, balls: usize) -> f64 {
    if balls <= 1 {
        return m1;
    }
    cal.chain_constant() * t * m1.powf(cal.c2.powi(balls as i32 - 1))
}

/// Step-by-step bounds `m_k = min(T, C(2+√2)^{3/2} T^{1−c₂} m_{k−1}^{c₂})`.
pub fn carried_bounds(cal: &Calibration, t: f64, m1: f64, balls: usize) -> Vec<f64> {
    let c3 = cal.three_balls_constant();
    let mut out = Vec::with_capacity(balls);
    let mut m = m1;
    for i in 0..balls {
        if i > 0 {
            m = f64::min(t, c3 * t.powf(1.0 - cal.c2) * m.powf(cal.c2));
        }
        out.push(m);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainOutcome {
    pub bound: f64,
    pub carried: Vec<f64>,
    /// Measured `‖w‖_{L∞(B_k)}`.
    pub measured: Vec<f64>,
    pub t: f64,
}

impl ChainOutcome {
    pub fn violations(&self) -> usize {
        let last = self.measured.len() - 1;
        let mut v = usize::from(self.measured[last] > self.bound * (1.0 + 1e-12));
        v += self.measured.iter().zip(&self.carried).filter(|(m, c)| **m > **c * (1.0 + 1e-12)).count();
        v
    }
}

/// Propagates `‖w‖_{B_1}` along the chain inside the grid box `U`; fills
/// the path's carried bounds and returns the closed-form bound on `B_K`
/// together with the measured norms.
pub fn propagate_chain(w: &WaveField, path: &mut PropagationPath, t: f64, cal: &Calibration) -> Result<ChainOutcome> {
    if path.is_empty() {
        return invalid("empty chain");
    }
    let r = path.r;
    if 4.0 * r >= cal.r_m {
        return Err(Error::Precondition(format!("4r = {} is not below R_m = {}", 4.0 * r, cal.r_m)));
    }
    if t < 1.0 {
        return invalid("T must be at least 1");
    }
    path.check_spacing()?;
    for c in &path.centers {
        if c.len() != w.grid.dim {
            return Err(Error::Dimension(c.len(), w.grid.dim));
        }
        // d(B_k, ∂U) ≥ 3r with U the grid box.
        require_in_grid(&w.grid, c, 4.0 * r)?;
    }
    let centers = path.centers.clone();
    let near = |p: &[f64]| centers.iter().any(|c| dist(p, c) < 4.0 * r);
    let sup = {
        let g = &w.grid;
        (0..g.len())
            .into_par_iter()
            .filter(|&i| near(&g.point3(i)[..g.dim]))
            .map(|i| w.values[i].norm())
            .reduce(|| 0.0, f64::max)
    };
    if sup > t {
        return Err(Error::Precondition(format!("T = {t} is below the measured sup {sup}")));
    }
    let residual = relative_residual(w, sup, near);
    if residual > HELMHOLTZ_TOL {
        return Err(Error::Precondition(format!("not a Helmholtz solution along the chain: relative residual {residual:.3e}")));
    }
    let measured: Vec<f64> = path
        .centers
        .iter()
        .map(|c| field_norm(w, &Region::Ball { center: c.clone(), r }, Norm::Linf))
        .collect::<Result<_>>()?;
    if measured[0] > 1.0 {
        return Err(Error::Precondition(format!("‖w‖ on the first ball is {} > 1", measured[0])));
    }
    let kb = path.len();
    path.source_bound = measured[0];
    path.carried = carried_bounds(cal, t, measured[0], kb);
    Ok(ChainOutcome {
        bound: chain_bound(cal, t, measured[0], kb),
        carried: path.carried.clone(),
        measured,
        t,
    })
}

// ---------------------------------------------------------------------------
// Propagation outside a convex obstacle

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HullParams {
    /// `R` with `Q ⊂ B_R`.
    pub big_r: f64,
    /// Ball radius `r`.
    pub r: f64,
    pub lambda: f64,
    pub delta: f64,
    pub t: f64,
}

/// `C T δ^{c₂^{(2+λ)R/r + 2}}`.
pub fn hull_bound(cal: &Calibration, p: &HullParams) -> f64 {
    let e = cal.c2.powf((2.0 + p.lambda) * p.big_r / p.r + 2.0);
    cal.chain_constant() * p.t * p.delta.powf(e)
}

/// Escape segment of a query point: the half-line from `x` away from or
/// through the origin that keeps distance `≥ 4r` from `Q`, cut where the
/// first ball of radius `r` fits in the annulus. Returns the far endpoint,
/// the direction and the length.
pub fn escape_segment(q: Option<&Polytope>, x: &[f64], p: &HullParams) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    let n = x.len();
    let rho = (1.0 + p.lambda) * p.big_r + p.r;
    let nx = norm(x);
    let mut dirs: Vec<(Vec<f64>, bool)> = Vec::new();
    if nx > 0.0 {
        let u: Vec<f64> = x.iter().map(|v| v / nx).collect();
        dirs.push((u.clone(), true));
        dirs.push((u.iter().map(|v| -v).collect(), false));
    } else {
        for i in 0..n {
            for s in [1.0, -1.0] {
                let mut u = vec![0.0; n];
                u[i] = s;
                dirs.push((u, true));
            }
        }
    }
    for (u, outward) in dirs {
        // Distance along the ray until |x + t u| = rho.
        let b: f64 = x.iter().zip(&u).map(|(a, b)| a * b).sum();
        let disc = b * b - (nx * nx - rho * rho);
        let t_end = if nx >= rho && outward { 0.0 } else { -b + disc.max(0.0).sqrt() };
        let end: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + t_end * b).collect();
        let clear = match q {
            None => true,
            Some(q) => {
                // Distance to a convex set is convex along a line.
                let f = |s: f64| q.distance(&x.iter().zip(&u).map(|(a, b)| a + s * b).collect::<Vec<_>>());
                let (mut lo, mut hi) = (0.0, t_end);
                for _ in 0..100 {
                    let m1 = lo + (hi - lo) / 3.0;
                    let m2 = hi - (hi - lo) / 3.0;
                    if f(m1) < f(m2) {
                        hi = m2;
                    } else {
                        lo = m1;
                    }
                }
                f(0.5 * (lo + hi)).min(f(0.0)).min(f(t_end)) >= 4.0 * p.r * (1.0 - 1e-9)
            }
        };
        if clear {
            return Ok((end, u, outward));
        }
    }
    Err(Error::Geometry(format!("no escape ray from {x:?} avoids B(Q, 4r)")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HullQuery {
    pub point: Vec<f64>,
    pub outward: bool,
    pub length: f64,
    pub balls: usize,
    /// Chain bound for this query; never above the uniform bound.
    pub bound: f64,
    /// Measured `‖w‖_{L∞(B(x', r))}`.
    pub measured: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HullOutcome {
    pub params: HullParams,
    /// Uniform bound `C T δ^{c₂^{(2+λ)R/r+2}}` on `B_{2R} \ B(Q, 4r)`.
    pub bound: f64,
    pub queries: Vec<HullQuery>,
    pub measured_delta: f64,
    pub measured_t: f64,
    pub violations: usize,
}

/// Propagates `|w| ≤ δ` on `B_{(2−λ)R} \ B_{(1+λ)R}` to query points outside
/// `B(Q, 4r)` along the radial escape chains.
pub fn propagate_outside_hull(w: &WaveField, q: Option<&Polytope>, p: &HullParams, cal: &Calibration, queries: &[Vec<f64>]) -> Result<HullOutcome> {
    let g = &w.grid;
    if !(p.lambda > 0.0 && p.lambda < 0.5 && p.r > 0.0 && p.big_r > 0.0) {
        return invalid("need 0 < λ < 1/2 and r, R > 0");
    }
    if 4.0 * p.r > cal.r_m {
        return Err(Error::Precondition(format!("4r = {} exceeds R_m = {}", 4.0 * p.r, cal.r_m)));
    }
    if 2.0 * p.r >= (1.0 - 2.0 * p.lambda) * p.big_r {
        return Err(Error::Precondition("2r must be below (1−2λ)R".into()));
    }
    if !(p.delta <= 1.0) || p.t < 1.0 {
        return Err(Error::Precondition(format!("need δ ≤ 1 ≤ T, got δ = {}, T = {}", p.delta, p.t)));
    }
    if let Some(q) = q {
        if q.radius() > p.big_r {
            return Err(Error::Geometry("Q is not inside B_R".into()));
        }
    }
    let origin = vec![0.0; g.dim];
    require_in_grid(g, &origin, 2.0 * p.big_r - g.h)?;
    let annulus = Region::Annulus { center: origin.clone(), r1: (1.0 + p.lambda) * p.big_r, r2: (2.0 - p.lambda) * p.big_r };
    let measured_delta = field_norm(w, &annulus, Norm::Linf)?;
    if measured_delta > p.delta {
        return Err(Error::Precondition(format!("measured annulus sup {measured_delta} exceeds δ = {}", p.delta)));
    }
    let measured_t = (0..g.len())
        .into_par_iter()
        .filter(|&i| {
            let x = &g.point3(i)[..g.dim];
            norm(x) < 2.0 * p.big_r && q.map_or(true, |q| !q.contains(x))
        })
        .map(|i| w.values[i].norm())
        .reduce(|| 0.0, f64::max);
    if measured_t > p.t {
        return Err(Error::Precondition(format!("T = {} is below the measured sup {measured_t}", p.t)));
    }
    let uniform = hull_bound(cal, p);
    let mut out = Vec::with_capacity(queries.len());
    for x in queries {
        if x.len() != g.dim {
            return Err(Error::Dimension(x.len(), g.dim));
        }
        if norm(x) >= 2.0 * p.big_r {
            return Err(Error::Geometry(format!("query {x:?} is outside B_2R")));
        }
        if let Some(q) = q {
            if q.distance(x) < 4.0 * p.r {
                return Err(Error::Geometry(format!("query {x:?} lies in B(Q, 4r)")));
            }
        }
        let (end, _, outward) = escape_segment(q, x, p)?;
        let length = dist(&end, x);
        let balls = (length / p.r).ceil() as usize + 1;
        let bound = chain_bound(cal, p.t, p.delta, balls).min(uniform.max(p.delta));
        let measured = field_norm(w, &Region::Ball { center: x.clone(), r: p.r }, Norm::Linf)?;
        out.push(HullQuery {
            point: x.clone(),
            outward,
            length,
            balls,
            bound,
            measured,
        });
    }
    let violations = out.iter().filter(|h| h.measured > h.bound * (1.0 + 1e-12)).count();
    Ok(HullOutcome {
        params: p.clone(),
        bound: uniform,
        queries: out,
        measured_delta,
        measured_t,
        violations,
    })
}

// ---------------------------------------------------------------------------
// Crossing into the boundary layer

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossParams {
    pub big_r: f64,
    pub lambda: f64,
    /// Hölder exponent of `w`.
    pub alpha: f64,
    /// `A ≥ 2 + λ`.
    pub a: f64,
    /// Hölder norm bound `𝒯 ≥ 1` on `B_{3R/2}`.
    pub t: f64,
}

impl CrossParams {
    pub fn new(big_r: f64, lambda: f64, alpha: f64, t: f64) -> Self {
        CrossParams { big_r, lambda, alpha, a: 2.0 + lambda, t }
    }
}

/// `ln|ln δ|` for `0 ≤ δ < 1` (infinite at zero).
pub fn ln_ln_inv(delta: f64) -> f64 {
    if delta <= 0.0 {
        f64::INFINITY
    } else {
        (-delta.ln()).ln()
    }
}

/// Smallness threshold as `ln|ln δ_max|`:
/// `4AR|ln c₂|/((1−α) min(R_m, R/2, 2(1−2λ)R))`.
pub fn delta_threshold_ln_ln(cal: &Calibration, p: &CrossParams) -> f64 {
    let m = cal.r_m.min(p.big_r / 2.0).min(2.0 * (1.0 - 2.0 * p.lambda) * p.big_r);
    4.0 * p.a * p.big_r * cal.c2.ln().abs() / ((1.0 - p.alpha) * m)
}

/// `r(δ) = AR|ln c₂|/((1−α) ln|ln δ|)`.
pub fn crossing_radius(a: f64, big_r: f64, c2: f64, alpha: f64, ln_ln: f64) -> f64 {
    a * big_r * c2.ln().abs() / ((1.0 - alpha) * ln_ln)
}

/// `((8AR|ln c₂|/(1−α))^α + C/c₂²) 𝒯 / (ln|ln δ|)^α`.
pub fn border_bound(a: f64, big_r: f64, c2: f64, alpha: f64, chain_c: f64, t: f64, ln_ln: f64) -> f64 {
    ((8.0 * a * big_r * c2.ln().abs() / (1.0 - alpha)).powf(alpha) + chain_c / (c2 * c2)) * t / ln_ln.powf(alpha)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCrossing {
    pub ln_ln_delta: f64,
    pub threshold_ln_ln: f64,
    pub radius: f64,
    /// Width `4r(δ)` of the boundary collar the bound covers.
    pub collar: f64,
    pub bound: f64,
    /// Measured sup of `|w|` over the collar inside `B_{3R/2}`.
    pub measured: Option<f64>,
}

/// Applies the boundary-layer estimate for `δ` given as `ln|ln δ|`; errors
/// if `δ` is not below the smallness threshold. With a field, the sup over
/// the collar `d(x, ∂Q) ≤ 4r(δ)` is measured (cells plus boundary samples).
pub fn cross_into_boundary(w: Option<&WaveField>, q: &Polytope, ln_ln_delta: f64, p: &CrossParams, cal: &Calibration) -> Result<BoundaryCrossing> {
    if !(p.alpha > 0.0 && p.alpha < 1.0) || p.a < 2.0 + p.lambda || p.t < 1.0 {
        return invalid("need 0 < α < 1, A ≥ 2 + λ and 𝒯 ≥ 1");
    }
    let threshold = delta_threshold_ln_ln(cal, p);
    if !(ln_ln_delta > threshold) {
        return Err(Error::Precondition(format!("δ above the smallness threshold: ln|ln δ| = {ln_ln_delta:.4} needs > {threshold:.4}")));
    }
    let radius = crossing_radius(p.a, p.big_r, cal.c2, p.alpha, ln_ln_delta);
    let bound = border_bound(p.a, p.big_r, cal.c2, p.alpha, cal.chain_constant(), p.t, ln_ln_delta);
    let collar = 4.0 * radius;
    let measured = match w {
        None => None,
        Some(w) => {
            let g = &w.grid;
            let cells = (0..g.len())
                .into_par_iter()
                .filter(|&i| {
                    let x = &g.point3(i)[..g.dim];
                    norm(x) < 1.5 * p.big_r && q.boundary_distance(x) <= collar
                })
                .map(|i| w.values[i].norm())
                .reduce(|| 0.0, f64::max);
            let on_boundary = boundary_samples(q, g.h / 2.0)?
                .iter()
                .filter_map(|x| w.interpolate(x))
                .map(|v| v.norm())
                .fold(0.0, f64::max);
            Some(cells.max(on_boundary))
        }
    };
    Ok(BoundaryCrossing {
        ln_ln_delta,
        threshold_ln_ln: threshold,
        radius,
        collar,
        bound,
        measured,
    })
}

// ---------------------------------------------------------------------------
// Boundary of convex hulls

/// Facet hyperplanes `n·x ≤ c` (unit `n`) of the convex hull of a 2D or 3D
/// point set, by brute force over point pairs/triples.
pub fn hull_planes(points: &[Vec<f64>]) -> Result<Vec<(Vec<f64>, f64)>> {
    let dim = points.first().map_or(0, |p| p.len());
    let scale = points.iter().map(|p| norm(p)).fold(1.0, f64::max);
    let tol = 1e-10 * scale;
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut push = |n: Vec<f64>, c: f64| {
        let nn = norm(&n);
        if nn < 1e-12 * scale * scale {
            return;
        }
        let n: Vec<f64> = n.iter().map(|v| v / nn).collect();
        let c = c / nn;
        let vals: Vec<f64> = points.iter().map(|p| p.iter().zip(&n).map(|(a, b)| a * b).sum::<f64>() - c).collect();
        let (n, c) = if vals.iter().all(|v| *v <= tol) {
            (n, c)
        } else if vals.iter().all(|v| *v >= -tol) {
            (n.iter().map(|v| -v).collect(), -c)
        } else {
            return;
        };
        if !planes.iter().any(|(m, d)| dist(m, &n) < 1e-9 && (d - c).abs() < tol) {
            planes.push((n, c));
        }
    };
    let np = points.len();
    match dim {
        2 => {
            for i in 0..np {
                for j in i + 1..np {
                    let (a, b) = (&points[i], &points[j]);
                    let n = vec![b[1] - a[1], a[0] - b[0]];
                    let c = n[0] * a[0] + n[1] * a[1];
                    push(n, c);
                }
            }
        }
        3 => {
            for i in 0..np {
                for j in i + 1..np {
                    for l in j + 1..np {
                        let (a, b, d) = (&points[i], &points[j], &points[l]);
                        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                        let v = [d[0] - a[0], d[1] - a[1], d[2] - a[2]];
                        let n = vec![u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
                        let c = n[0] * a[0] + n[1] * a[1] + n[2] * a[2];
                        push(n, c);
                    }
                }
            }
        }
        _ => return invalid("hull planes need 2D or 3D points"),
    }
    if planes.len() < dim + 1 {
        return Err(Error::Geometry("degenerate point set".into()));
    }
    Ok(planes)
}

/// Points on `∂Q` at spacing about `step`: edges subdivided in 2D, rays from
/// the centroid in 3D.
pub fn boundary_samples(q: &Polytope, step: f64) -> Result<Vec<Vec<f64>>> {
    hull_boundary_samples(q.vertices(), step)
}

/// Boundary samples of the convex hull of a point set.
pub fn hull_boundary_samples(points: &[Vec<f64>], step: f64) -> Result<Vec<Vec<f64>>> {
    let dim = points.first().map_or(0, |p| p.len());
    if dim == 2 {
        let hull = convex_hull_2d(points);
        let n = hull.len();
        let mut out = Vec::new();
        for i in 0..n {
            let (a, b) = (&hull[i], &hull[(i + 1) % n]);
            let m = (dist(a, b) / step).ceil().max(1.0) as usize;
            for s in 0..m {
                let t = s as f64 / m as f64;
                out.push(vec![a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        return Ok(out);
    }
    let planes = hull_planes(points)?;
    let c: Vec<f64> = (0..3).map(|i| points.iter().map(|p| p[i]).sum::<f64>() / points.len() as f64).collect();
    let extent = points.iter().map(|p| dist(p, &c)).fold(0.0, f64::max);
    let m = ((4.0 * PI * extent * extent) / (step * step)).ceil().clamp(64.0, 200_000.0) as usize;
    let golden = PI * (3.0 - 5f64.sqrt());
    Ok((0..m)
        .map(|j| {
            let z = 1.0 - (2.0 * j as f64 + 1.0) / m as f64;
            let s = (1.0 - z * z).sqrt();
            let ph = golden * j as f64;
            let d = [s * ph.cos(), s * ph.sin(), z];
            let t = planes
                .iter()
                .filter_map(|(n, cc)| {
                    let nd = n[0] * d[0] + n[1] * d[1] + n[2] * d[2];
                    (nd > 1e-14).then(|| (cc - (n[0] * c[0] + n[1] * c[1] + n[2] * c[2])) / nd)
                })
                .fold(f64::INFINITY, f64::min);
            (0..3).map(|i| c[i] + t * d[i]).collect()
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Hölder surrogates

/// Sampled `C^α` norm `sup|w| + max |w(x)−w(y)|/|x−y|^α` over cells in
/// `B(center, radius)`, with `y − x` along the axes at `2h, 4h, 8h, …`.
pub fn holder_surrogate(w: &WaveField, center: &[f64], radius: f64, alpha: f64) -> f64 {
    let g = &w.grid;
    let strides = g.strides();
    let inside = |i: usize| dist(&g.point3(i)[..g.dim], center) < radius;
    let (sup, quot) = (0..g.len())
        .into_par_iter()
        .filter(|&i| inside(i))
        .map(|i| {
            let m = g.multi_index(i);
            let mut q = 0.0f64;
            for ax in 0..g.dim {
                let mut s = 2usize;
                while m[ax] + s < g.extent[ax] {
                    let j = i + s * strides[ax];
                    if !inside(j) {
                        break;
                    }
                    let d = (s as f64 * g.h).powf(alpha);
                    q = q.max((w.values[i] - w.values[j]).norm() / d);
                    s *= 2;
                }
            }
            (w.values[i].norm(), q)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    sup + quot
}

// ---------------------------------------------------------------------------
// Full pipeline

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RellichParams {
    pub big_r: f64,
    pub lambda: f64,
    /// Defaults to `2 + λ`.
    pub a: Option<f64>,
    pub alpha: f64,
    /// Uniform a-priori bounds; measured from the two solutions when absent.
    pub s: Option<f64>,
    pub m: Option<f64>,
    pub i: Option<f64>,
    /// `C_H` in `𝒯 = C_H (1+𝓜)(𝓘+𝒮)`; measured surrogate ×1.1 when absent.
    pub holder_constant: Option<f64>,
}

impl RellichParams {
    pub fn new(big_r: f64) -> Self {
        RellichParams {
            big_r,
            lambda: 0.25,
            a: None,
            alpha: 0.5,
            s: None,
            m: None,
            i: None,
            holder_constant: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RellichRegime {
    /// Far fields agree exactly.
    Zero,
    /// `ε` below `ε_m`: every step's hypotheses hold.
    Certified,
    /// Closed form evaluated above `ε_m`.
    Extrapolated,
    /// `S/ε ≤ e`: only the sup-norm bound applies.
    Trivial,
}

/// Measured a-priori quantities of a pair of solutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMeasurements {
    pub s: f64,
    pub m: f64,
    pub i: f64,
    /// Hölder surrogates of `w` and `∂_j w` on `B_{3R/2}`.
    pub holder_w: f64,
    pub holder_grad: Vec<f64>,
    /// `‖w‖_{L∞}` on `B_{(2−λ)R} \ B_{(1+λ)R}`.
    pub annulus_sup: f64,
    /// `sup_{∂Q}(|w| + |∇w|)`.
    pub boundary_sup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RellichReport {
    pub epsilon: f64,
    pub regime: RellichRegime,
    pub boundary_bound: f64,
    /// `𝒞` in `𝒞 (ln ln(𝒮/ε))^{−1/2}`.
    pub constant: f64,
    pub ln_ln: f64,
    /// `ln ln(𝒮/ε_m)`.
    pub threshold_ln_ln: f64,
    pub s: f64,
    pub m: f64,
    pub i: f64,
    pub holder_constant: f64,
    pub holder_t: f64,
    pub ff2nf: Option<Ff2nfBound>,
    pub measured: PairMeasurements,
}

impl RellichReport {
    pub fn holds(&self) -> bool {
        self.measured.boundary_sup <= self.boundary_bound
    }
}

/// `𝒞 (ln ln(𝒮/ε))^{−1/2}` from `L = ln(𝒮/ε)`.
pub fn rellich_closed_form(constant: f64, ln_s_over_eps: f64) -> f64 {
    constant / ln_s_over_eps.ln().sqrt()
}

/// `𝒞 = 2((8AR|ln c₂|/(1−α))^α + C/c₂²)(1+√n) 𝒯`.
pub fn rellich_constant(cal: &Calibration, a: f64, big_r: f64, alpha: f64, dim: usize, t: f64) -> f64 {
    2.0 * border_bound(a, big_r, cal.c2, alpha, cal.chain_constant(), t, 1.0) * (1.0 + (dim as f64).sqrt())
}

/// Measures the a-priori quantities of `w = u_A − u_B` on a grid covering `B_{2R}`.
pub fn measure_pair(sol_a: &ScatteringSolution, sol_b: &ScatteringSolution, p: &RellichParams, hull_points: &[Vec<f64>]) -> Result<PairMeasurements> {
    let g = sol_a.grid();
    if g != sol_b.grid() {
        return invalid("the two solutions live on different grids");
    }
    let dim = g.dim;
    let big_r = p.big_r;
    let target = aligned_grid(g, 2.0 * big_r + 3.0 * g.h)?;
    let sa = sol_a.scattered_on_grid(&target)?;
    let sb = sol_b.scattered_on_grid(&target)?;
    let ball2 = Region::Ball { center: vec![0.0; dim], r: 2.0 * big_r };
    let s = h2_surrogate(&sa, &ball2)?.max(h2_surrogate(&sb, &ball2)?).max(1.0);
    let inc = plane_wave(sol_a.k(), &sol_a.omega, &target)?;
    let i = h2_surrogate(&inc, &ball2)?;
    let m = sol_a.contrast.iter().chain(&sol_b.contrast).map(|v| v.norm()).fold(0.0, f64::max);
    let w = sa.minus(&sb, Role::Difference)?;
    let origin = vec![0.0; dim];
    let holder_w = holder_surrogate(&w, &origin, 1.5 * big_r, p.alpha);
    let grads: Vec<WaveField> = (0..dim).map(|ax| w.derivative(ax)).collect();
    let holder_grad = grads.iter().map(|d| holder_surrogate(d, &origin, 1.5 * big_r, p.alpha)).collect();
    let annulus_sup = field_norm(
        &w,
        &Region::Annulus { center: origin, r1: (1.0 + p.lambda) * big_r, r2: (2.0 - p.lambda) * big_r },
        Norm::Linf,
    )?;
    let boundary_sup = hull_boundary_samples(hull_points, g.h / 2.0)?
        .iter()
        .filter_map(|x| {
            let v = w.interpolate(x)?;
            let gs: f64 = grads.iter().map(|d| d.interpolate(x).map_or(0.0, |c| c.norm_sqr())).sum();
            Some(v.norm() + gs.sqrt())
        })
        .fold(0.0, f64::max);
    Ok(PairMeasurements {
        s,
        m,
        i,
        holder_w,
        holder_grad,
        annulus_sup,
        boundary_sup,
    })
}

/// Chains the far-field bound, the propagation outside the hull and the
/// boundary crossing into `sup_{∂Q}(|w| + |∇w|) ≤ 𝒞 (ln ln(𝒮/ε))^{−1/2}`.
pub fn quantitative_rellich(
    ff_diff: &FarFieldPattern,
    sol_a: &ScatteringSolution,
    sol_b: &ScatteringSolution,
    hull_points: &[Vec<f64>],
    p: &RellichParams,
    cal: &Calibration,
) -> Result<RellichReport> {
    let dim = ff_diff.dim;
    let k = ff_diff.k;
    let epsilon = ff_diff.l2_norm();
    let measured = measure_pair(sol_a, sol_b, p, hull_points)?;
    let s = p.s.unwrap_or(measured.s).max(1.0);
    let m = p.m.unwrap_or(measured.m);
    let i = p.i.unwrap_or(measured.i);
    let scale = (1.0 + m) * (i + s);
    let holder_max = measured.holder_grad.iter().cloned().fold(measured.holder_w, f64::max);
    let holder_constant = p.holder_constant.unwrap_or(1.1 * holder_max / scale);
    let holder_t = (holder_constant * scale).max(1.0);
    let a = p.a.unwrap_or(2.0 + p.lambda);
    let constant = rellich_constant(cal, a, p.big_r, p.alpha, dim, holder_t);
    let cross = CrossParams { big_r: p.big_r, lambda: p.lambda, alpha: p.alpha, a, t: holder_t };
    let x = delta_threshold_ln_ln(cal, &cross);

    let b0 = 1.0 + p.lambda;
    // ε_m: the annulus bound δ(ε) ≈ K S B₀^{−(ℓ−3)/2} must satisfy ln|ln δ| > X.
    let probe = ff2nf_bound(1e-300, 2.0 * s, k, p.big_r, b0)?;
    let ell_m = 3.0 + 2.0 * (x.exp() + (probe.constant * 2.0 * s).ln().max(0.0)) / b0.ln();
    let threshold_ln_ln = (ell_m * ell_m / (2.0 * E * k * p.big_r)).ln().ln();

    let (regime, boundary_bound, ln_ln, ff2nf) = if epsilon == 0.0 {
        (RellichRegime::Zero, 0.0, f64::INFINITY, None)
    } else {
        let l = (s / epsilon).ln();
        let ff = ff2nf_bound(epsilon, 2.0 * s, k, p.big_r, b0)?;
        if l <= 1.0 {
            (RellichRegime::Trivial, (1.0 + (dim as f64).sqrt()) * holder_t, f64::NEG_INFINITY, Some(ff))
        } else {
            let ll = l.ln();
            let regime = if ll > threshold_ln_ln { RellichRegime::Certified } else { RellichRegime::Extrapolated };
            (regime, rellich_closed_form(constant, l), ll, Some(ff))
        }
    };
    Ok(RellichReport {
        epsilon,
        regime,
        boundary_bound,
        constant,
        ln_ln,
        threshold_ln_ln,
        s,
        m,
        i,
        holder_constant,
        holder_t,
        ff2nf,
        measured,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::{bessel_j, hankel_h1};
    use rand::{Rng, SeedableRng};

    fn cal() -> Calibration {
        Calibration {
            k: 2.0,
            dim: 2,
            r_m: default_r_m(2.0),
            c: 1.1,
            c1: 0.4,
            c2: 0.1,
            seed: 0,
            trials: 0,
        }
    }

    #[test]
    fn single_mode_and_zero_pattern() {
        let layout = SphereLayout::Equispaced { m: 32 };
        let ff = FarFieldPattern::from_fn(1.0, layout.clone(), |d| Complex64::from_polar(1.0, d[1].atan2(d[0])));
        let h = decompose_far_field(&ff, None).unwrap();
        assert!((h.b[1] - (2.0 * PI).sqrt()).abs() < 1e-12);
        assert!(h.b.iter().enumerate().all(|(j, b)| j == 1 || *b < 1e-12));
        let z = decompose_far_field(&FarFieldPattern::zeros(1.0, layout), None).unwrap();
        assert!(z.b.iter().all(|b| *b == 0.0));
        assert!(decompose_far_field(&ff, Some(17)).is_err());
    }

    #[test]
    fn parseval_even_and_odd_sampling() {
        for m in [31usize, 32] {
            let ff = FarFieldPattern::from_fn(1.5, SphereLayout::Equispaced { m }, |d| {
                let t = d[1].atan2(d[0]);
                Complex64::new((3.0 * t).cos().exp(), (t * 0.5).sin().powi(2))
            });
            let h = decompose_far_field(&ff, None).unwrap();
            let n2 = ff.l2_norm().powi(2);
            assert!((h.energy() - n2).abs() < 1e-12 * n2, "M = {m}");
        }
    }

    #[test]
    fn spherical_harmonics_orthonormal() {
        let layout = SphereLayout::GaussProduct { n_theta: 8, n_phi: 16 };
        let (dirs, w) = layout.nodes();
        let ys: Vec<Vec<Complex64>> = dirs.iter().map(|d| spherical_harmonics(5, d)).collect();
        for a in 0..36 {
            for b in 0..36 {
                let s: Complex64 = ys.iter().zip(&w).map(|(y, w)| y[a] * y[b].conj() * w).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((s - want).norm() < 1e-12, "({a},{b}) {s}");
            }
        }
        // Y_10 = √(3/4π) cos θ.
        let y = spherical_harmonics(1, &[0.3, -0.2, 0.5]);
        let ct = 0.5 / (0.38f64).sqrt();
        assert!((y[2].re - (3.0 / (4.0 * PI)).sqrt() * ct).abs() < 1e-14);
    }

    #[test]
    fn point_sources_reconstruct() {
        let k = 1.7;
        // 2D: (i/4) H_0(k|x|).
        let ff = FarFieldPattern::from_fn(k, SphereLayout::Equispaced { m: 16 }, |_| Complex64::from_polar(1.0, PI / 4.0) / (8.0 * PI * k).sqrt());
        let h = decompose_far_field(&ff, None).unwrap();
        let x = vec![0.6, -1.1];
        let got = h.reconstruct(&[x.clone()]).unwrap()[0];
        let want = Complex64::new(0.0, 0.25) * hankel_h1(0.0, k * norm(&x)).unwrap();
        assert!((got - want).norm() < 1e-12 * want.norm());
        // 3D: e^{ik|x|}/(4π|x|).
        let ff = FarFieldPattern::from_fn(k, SphereLayout::GaussProduct { n_theta: 6, n_phi: 12 }, |_| Complex64::new(1.0 / (4.0 * PI), 0.0));
        let h = decompose_far_field(&ff, None).unwrap();
        let x = vec![0.6, -1.1, 0.4];
        let r = norm(&x);
        let got = h.reconstruct(&[x]).unwrap()[0];
        let want = Complex64::from_polar(1.0 / (4.0 * PI * r), k * r);
        assert!((got - want).norm() < 1e-12 * want.norm());
    }

    #[test]
    fn sphere_norm_matches_reconstruction_quadrature() {
        // 2D mode mixture: sphere norm from b_j against direct quadrature.
        let k = 2.0;
        let ff = FarFieldPattern::from_fn(k, SphereLayout::Equispaced { m: 24 }, |d| {
            let t = d[1].atan2(d[0]);
            Complex64::new(1.0 + (2.0 * t).cos(), 0.3 * (5.0 * t).sin())
        });
        let h = decompose_far_field(&ff, None).unwrap();
        let r = 1.3;
        let n = 256;
        let pts: Vec<Vec<f64>> = (0..n).map(|j| {
            let t = 2.0 * PI * j as f64 / n as f64;
            vec![r * t.cos(), r * t.sin()]
        }).collect();
        let vals = h.reconstruct(&pts).unwrap();
        let quad: f64 = vals.iter().map(|v| v.norm_sqr()).sum::<f64>() * 2.0 * PI * r / n as f64;
        let series = h.sphere_norm_sq(r).unwrap();
        assert!((quad - series).abs() < 1e-10 * series);
    }

    #[test]
    fn ell_example_and_saturation() {
        let b = ff2nf_bound(1e-8, 1.0, 1.0, 1.0, 2.0).unwrap();
        let want = (2.0 * E * (1e8f64).ln()).sqrt();
        assert!((b.ell - want).abs() < 1e-12 && (b.ell - 10.01).abs() < 0.01);
        assert_eq!(b.nu0, 5.0);
        // ν₀ = 5 < e·B₀kR = 5.44: still saturated.
        assert_eq!(b.regime, Ff2nfRegime::Saturated);
        let s = ff2nf_bound(0.5, 0.5, 1.0, 1.0, 2.0).unwrap();
        assert_eq!(s.ell, 0.0);
        assert_eq!(s.regime, Ff2nfRegime::Saturated);
        assert!((s.bound / 0.5 - s.constant).abs() < 1e-12 * s.constant);
        let d = ff2nf_bound(1e-60, 1.0, 1.0, 1.0, 2.0).unwrap();
        assert_eq!(d.regime, Ff2nfRegime::Decay);
        assert!(d.bound < 1.0);
        assert!(ff2nf_bound(0.0, 1.0, 1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn synthetic_high_mode_field_obeys_decay_bound() {
        let (k, r, b0) = (1.0, 1.0, 1.5);
        for j0 in [8usize, 10, 14] {
            let m = 64;
            let mut coefficients = vec![ZERO; 2 * (m / 2) + 1];
            let j = m / 2;
            coefficients[j + j0] = Complex64::new(1e-6, 0.0);
            coefficients[j + j0 + 1] = Complex64::new(0.0, 4e-7);
            coefficients[j - j0 - 2] = Complex64::new(3e-7, 1e-7);
            let mut h = HarmonicDecomposition { dim: 2, k, b: vec![0.0; j + 1], coefficients, truncation: j, far_field_norm: 0.0 };
            for l in 1..=j {
                h.b[l] = (h.coefficients[j + l].norm_sqr() + h.coefficients[j - l].norm_sqr()).sqrt();
            }
            let eps = h.energy().sqrt();
            let s = h.annulus_norm(r, 2.0 * r).unwrap();
            let bound = ff2nf_bound(eps, s, k, r, b0).unwrap();
            let measured = h.annulus_norm(bound.annulus[0], bound.annulus[1]).unwrap();
            assert!(measured <= bound.bound, "j0 = {j0}: {measured} > {}", bound.bound);
        }
    }

    #[test]
    fn three_spheres_modes() {
        let g = Grid::centered(2, 1.0, 161).unwrap();
        let pw = plane_wave(2.0, &[0.6, 0.8], &g).unwrap();
        let t = three_spheres_check(&pw, &[0.0, 0.0], 0.2).unwrap();
        assert!(t.beta_star.is_none());
        let k = 2.0;
        let fb = WaveField::from_fn(g, k, Role::Other, |x| {
            let r = norm(x);
            Complex64::from_polar(bessel_j(8.0, k * r).unwrap(), 8.0 * x[1].atan2(x[0]))
        });
        let t = three_spheres_check(&fb, &[0.0, 0.0], 0.2).unwrap();
        let b = t.beta_star.unwrap();
        assert!(b > 0.0 && b < 1.0 && (b - 0.5).abs() < 0.05, "β* = {b}");
        let bad = WaveField::from_fn(fb.grid.clone(), k, Role::Other, |x| Complex64::new(x[0] * x[0], 0.0));
        assert!(matches!(three_spheres_check(&bad, &[0.0, 0.0], 0.2), Err(Error::Precondition(_))));
    }

    #[test]
    fn chain_closed_form_dominates_steps() {
        let c = cal();
        assert_eq!(chain_bound(&c, 3.0, 0.01, 1), 0.01);
        for kb in 2..12 {
            let steps = carried_bounds(&c, 2.0, 0.01, kb);
            assert!(steps[kb - 1] <= chain_bound(&c, 2.0, 0.01, kb));
        }
        let two = carried_bounds(&c, 2.0, 0.01, 2);
        assert!((two[1] - (c.three_balls_constant() * 2f64.powf(1.0 - c.c2) * 0.01f64.powf(c.c2)).min(2.0)).abs() < 1e-15);
    }

    #[test]
    fn escape_ray_avoids_obstacle() {
        let q = Polytope::rectangle(-0.3, -0.3, 0.3, 0.3).unwrap();
        let p = HullParams { big_r: 1.0, r: 0.05, lambda: 0.25, delta: 1e-3, t: 1.0 };
        // Behind the square as seen from the far side of the annulus.
        let x = vec![-0.55, 0.0];
        let (end, u, _) = escape_segment(Some(&q), &x, &p).unwrap();
        assert!((norm(&end) - 1.3).abs() < 1e-12);
        for s in 0..=200 {
            let t = s as f64 / 200.0 * dist(&end, &x);
            let y: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + t * b).collect();
            assert!(q.distance(&y) >= 0.2 - 1e-9);
        }
        let (end, _, outward) = escape_segment(None, &[0.0, 0.0], &p).unwrap();
        assert!(outward && (norm(&end) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn crossing_formulas_and_threshold() {
        let c = cal();
        let p = CrossParams::new(1.0, 0.25, 0.5, 1.0);
        let x = delta_threshold_ln_ln(&c, &p);
        let q = Polytope::rectangle(-0.3, -0.3, 0.3, 0.3).unwrap();
        assert!(cross_into_boundary(None, &q, x * 0.99, &p, &c).is_err());
        let b = cross_into_boundary(None, &q, x * (1.0 + 1e-12), &p, &c).unwrap();
        let m = c.r_m.min(0.5).min(1.0);
        assert!((4.0 * b.radius - m).abs() < 1e-9 * m);
        assert!(b.bound.is_finite());
        let zero = cross_into_boundary(None, &q, ln_ln_inv(0.0), &p, &c).unwrap();
        assert_eq!(zero.bound, 0.0);
    }

    #[test]
    fn hull_planes_of_square_pair() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![0.5, 0.5], vec![2.0, 0.5]];
        let planes = hull_planes(&pts).unwrap();
        assert_eq!(planes.len(), 5);
        let cube: Vec<Vec<f64>> = (0..8).map(|i| vec![(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]).collect();
        assert_eq!(hull_planes(&cube).unwrap().len(), 6);
        let samples = hull_boundary_samples(&cube, 0.1).unwrap();
        for s in samples {
            let on = s.iter().any(|v| v.abs() < 1e-9 || (v - 1.0).abs() < 1e-9);
            assert!(on && s.iter().all(|v| *v > -1e-9 && *v < 1.0 + 1e-9));
        }
    }

    #[test]
    fn holder_surrogate_of_linear_field() {
        let g = Grid::centered(2, 1.0, 41).unwrap();
        let w = WaveField::from_fn(g, 1.0, Role::Other, |x| Complex64::new(x[0], 0.0));
        let t = holder_surrogate(&w, &[0.0, 0.0], 0.5, 1.0);
        assert!((t - (0.5 + 1.0)).abs() < 0.06);
    }

    #[test]
    fn border_bound_double_log_rate() {
        let c = cal();
        let lls: Vec<f64> = (0..8).map(|i| 50.0 * 2f64.powi(i)).collect();
        let xs: Vec<f64> = lls.iter().map(|l| l.ln()).collect();
        let ys: Vec<f64> = lls.iter().map(|l| border_bound(2.25, 1.0, c.c2, 0.5, c.chain_constant(), 1.0, *l).ln()).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
        assert!((slope + 0.5).abs() < 1e-9, "slope {slope}");
        let radii: Vec<f64> = lls.iter().map(|l| crossing_radius(2.25, 1.0, c.c2, 0.5, *l)).collect();
        assert!(radii.windows(2).all(|w| w[1] < w[0]));
    }

    proptest::proptest! {
        #[test]
        fn parseval_band_limited_2d(m in 8usize..80, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let modes: Vec<(i64, Complex64)> = (0..6).map(|_| (rng.gen_range(-(m as i64 / 2) + 1..(m as i64 + 1) / 2), Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))).collect();
            let ff = FarFieldPattern::from_fn(1.0, SphereLayout::Equispaced { m }, |d| {
                let t = d[1].atan2(d[0]);
                modes.iter().map(|(j, a)| a * Complex64::from_polar(1.0, *j as f64 * t)).sum()
            });
            let h = decompose_far_field(&ff, None).unwrap();
            let n2 = ff.l2_norm().powi(2);
            proptest::prop_assert!((h.energy() - n2).abs() <= 1e-10 * n2.max(1e-300));
        }

        #[test]
        fn parseval_band_limited_3d(l in 0usize..5, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coef: Vec<Complex64> = (0..(l + 1) * (l + 1)).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let layout = SphereLayout::GaussProduct { n_theta: l + 2, n_phi: 2 * l + 3 };
            let ff = FarFieldPattern::from_fn(1.0, layout, |d| spherical_harmonics(l, d).iter().zip(&coef).map(|(y, c)| y * c).sum());
            let h = decompose_far_field(&ff, None).unwrap();
            let n2 = ff.l2_norm().powi(2);
            let want: f64 = coef.iter().map(|c| c.norm_sqr()).sum();
            proptest::prop_assert!((h.energy() - n2).abs() <= 1e-10 * n2);
            proptest::prop_assert!((n2 - want).abs() <= 1e-10 * want);
        }

        #[test]
        fn decay_bound_monotone(le in 20.0f64..300.0, k in 0.5f64..3.0, r in 0.5f64..2.0, b0 in 1.05f64..2.5, db in 0.01f64..0.5) {
            let eps = 10f64.powf(-le);
            let a = ff2nf_bound(eps, 1.0, k, r, b0).unwrap();
            let b = ff2nf_bound(eps, 1.0, k, r, b0 + db).unwrap();
            if a.regime == Ff2nfRegime::Decay && b.regime == Ff2nfRegime::Decay {
                proptest::prop_assert!(b.bound <= a.bound * (1.0 + 1e-12));
            }
            let c = ff2nf_bound(eps * 10.0, 1.0, k, r, b0).unwrap();
            if a.regime == Ff2nfRegime::Decay && c.regime == Ff2nfRegime::Decay {
                proptest::prop_assert!(c.bound >= a.bound * (1.0 - 1e-12));
            }
        }
    }
}
