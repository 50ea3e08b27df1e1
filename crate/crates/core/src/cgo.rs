//! Complex geometrical optics: the directions ρ(τ) with ρ·ρ + k² = 0, Laplace
//! transforms of polyhedral cones, and the remainder ψ of
//! `u₀ = e^{ρ·(x−x_c)}(1+ψ)` from the conjugated equation
//! `(Δ + 2ρ·∇ + q)ψ = f`.
//!
//! The Green operator of `Δ + 2ρ·∇` is applied as the Fourier multiplier
//! `1/(−|ξ|² + 2iρ·ξ)` on a zero-padded torus. Frequencies sit on the
//! half-shifted lattice `2π(m + ½)/L` so the multiplier never meets its zero
//! at `ξ = 0`.

use crate::error::{invalid, Error, Result};
use crate::fft::{freq_index, FftNd};
use crate::fields::{ContrastField, Grid, Role, WaveField};
use crate::geom::{angle_between, cone_membership, random_rotation3, ConeKind, PolyCone};
use crate::krylov::{gmres, spectral_radius_estimate, GmresOptions};
use crate::specfun::gauss_legendre;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cdot(a: &[Complex64], b: &[f64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit vector orthogonal to `axis`: the quarter turn in 2D, and in 3D the
/// first coordinate vector not nearly parallel to the axis, orthogonalized.
fn orthogonal_unit(axis: &[f64]) -> Vec<f64> {
    if axis.len() == 2 {
        return vec![-axis[1], axis[0]];
    }
    let j = (0..3).find(|&j| axis[j].abs() < 0.9).unwrap();
    let mut e = vec![0.0; 3];
    e[j] = 1.0;
    let c = axis[j];
    for i in 0..3 {
        e[i] -= c * axis[i];
    }
    let l = norm(&e);
    e.iter().map(|x| x / l).collect()
}

fn cross3(a: &[f64], b: &[f64]) -> Vec<f64> {
    vec![a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// A point of the curve `ρ(τ) = τ Re ζ + i√(τ² + k²) Im ζ` attached to a
/// spherical cone with vertex `vertex` and half-angle `alpha_prime`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgoDirection {
    pub zeta_re: Vec<f64>,
    pub zeta_im: Vec<f64>,
    pub tau: f64,
    pub k: f64,
    pub rho: Vec<Complex64>,
    pub vertex: Vec<f64>,
    /// `cos α′`.
    pub delta0: f64,
    pub alpha_prime: f64,
}

pub fn rho_curve(zeta_re: &[f64], zeta_im: &[f64], tau: f64, k: f64) -> Vec<Complex64> {
    let s = (tau * tau + k * k).sqrt();
    zeta_re
        .iter()
        .zip(zeta_im)
        .map(|(&r, &i)| Complex64::new(tau * r, s * i))
        .collect()
}

impl CgoDirection {
    pub fn dim(&self) -> usize {
        self.vertex.len()
    }

    pub fn zeta(&self) -> Vec<Complex64> {
        self.zeta_re
            .iter()
            .zip(&self.zeta_im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect()
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return invalid("τ must be positive");
        }
        Ok(CgoDirection {
            tau,
            rho: rho_curve(&self.zeta_re, &self.zeta_im, tau, self.k),
            ..self.clone()
        })
    }

    /// `|Im ρ| = √(τ² + k²)`.
    pub fn im_rho(&self) -> f64 {
        (self.tau * self.tau + self.k * self.k).sqrt()
    }

    /// `|ρ·ρ + k²| / (τ² + |Im ρ|²)`.
    pub fn null_defect(&self) -> f64 {
        let s: Complex64 = self.rho.iter().map(|r| r * r).sum();
        (s + self.k * self.k).norm() / (self.tau * self.tau + self.im_rho().powi(2))
    }

    /// `ρ·(x − x_c)`.
    pub fn phase(&self, x: &[f64]) -> Complex64 {
        self.rho.iter().zip(x.iter().zip(&self.vertex)).map(|(r, (a, b))| r * (a - b)).sum()
    }

    /// Re ρ / τ, the unit vector against which the cone decays.
    pub fn decay_axis(&self) -> &[f64] {
        &self.zeta_re
    }
}

/// Direction for the spherical cone `q`: −Re ζ is the cone axis and Im ζ a
/// fixed unit vector orthogonal to it.
pub fn build_direction(q: &PolyCone, k: f64, tau: f64) -> Result<CgoDirection> {
    if q.kind != ConeKind::Spherical {
        return invalid("directions are built from spherical cones");
    }
    let n = q.dim();
    if n != 2 && n != 3 {
        return invalid("cones must be 2D or 3D");
    }
    let alpha = q.half_angle.unwrap();
    if alpha >= PI / 2.0 {
        return Err(Error::Geometry(format!("cone half-angle {alpha:.6} is not below π/2")));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return invalid("τ must be positive");
    }
    if !(k > 0.0) || !k.is_finite() {
        return invalid("k must be positive");
    }
    let axis = q.axis();
    let im = orthogonal_unit(&axis);
    let re: Vec<f64> = axis.iter().map(|a| -a).collect();
    Ok(CgoDirection {
        rho: rho_curve(&re, &im, tau, k),
        zeta_re: re,
        zeta_im: im,
        tau,
        k,
        vertex: q.vertex.clone(),
        delta0: alpha.cos(),
        alpha_prime: alpha,
    })
}

/// Uniform-in-angle random point of the spherical cone `q`, at distance up to `rmax`.
pub fn sample_cone_point(q: &PolyCone, rmax: f64, rng: &mut impl Rng) -> Vec<f64> {
    let axis = q.axis();
    let alpha = q.half_angle.unwrap_or(0.0);
    let r = rmax * rng.gen::<f64>();
    let d: Vec<f64> = if axis.len() == 2 {
        let t = rng.gen_range(-alpha..=alpha);
        let e = orthogonal_unit(&axis);
        (0..2).map(|i| t.cos() * axis[i] + t.sin() * e[i]).collect()
    } else {
        let c = rng.gen_range(alpha.cos()..=1.0);
        let s = (1.0 - c * c).max(0.0).sqrt();
        let phi = rng.gen_range(0.0..2.0 * PI);
        let e1 = orthogonal_unit(&axis);
        let e2 = cross3(&axis, &e1);
        (0..3).map(|i| c * axis[i] + s * (phi.cos() * e1[i] + phi.sin() * e2[i])).collect()
    };
    q.vertex.iter().zip(&d).map(|(v, d)| v + r * d).collect()
}

/// Count of sampled cone points violating `Re ρ·(x−x_c) ≤ −δ₀|Re ρ||x−x_c|`.
pub fn decay_violations(dir: &CgoDirection, q: &PolyCone, samples: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let re: Vec<f64> = dir.rho.iter().map(|r| r.re).collect();
    let nre = norm(&re);
    (0..samples)
        .filter(|_| {
            let x = sample_cone_point(q, 10.0, &mut rng);
            let d: Vec<f64> = x.iter().zip(&dir.vertex).map(|(a, b)| a - b).collect();
            let lhs = dot(&re, &d);
            let rhs = -dir.delta0 * nre * norm(&d);
            lhs > rhs + 1e-12 * nre * norm(&d)
        })
        .count()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConeFormula {
    /// `1/(ξ₁(ξ₂ + aξ₁))` for the wedge `{y₂ > 0, y₁ > a y₂}`.
    Wedge,
    /// `−1/(ξ₁ξ₂ξ₃)` for the positive orthant.
    Orthant,
}

/// `𝓛(ζ) = ∫_𝔓 e^{ζ·(x−x_c)} dx` for a convex polyhedral cone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeTransform {
    pub cone: PolyCone,
    pub xi: Vec<Complex64>,
    pub a: Option<f64>,
    pub value: Complex64,
    pub formula: ConeFormula,
}

/// Rows of the rotation taking the cone to its normal form, and `a = cot α` in 2D.
fn cone_frame(p: &PolyCone) -> Result<(Vec<Vec<f64>>, Option<f64>)> {
    if p.kind != ConeKind::Polyhedral {
        return invalid("cone transforms need a polyhedral cone");
    }
    match p.dim() {
        2 => {
            let g = &p.generators[0];
            let alpha = p.opening_angle();
            Ok((vec![g.clone(), vec![-g[1], g[0]]], Some(alpha.cos() / alpha.sin())))
        }
        3 => {
            let g = &p.generators;
            let orth = g.len() == 3
                && (0..3).all(|i| (i + 1..3).all(|j| dot(&g[i], &g[j]).abs() < 1e-9));
            if !orth {
                return Err(Error::Geometry("3D cone is not the image of an orthant".into()));
            }
            Ok((g.clone(), None))
        }
        d => invalid(format!("unsupported cone dimension {d}")),
    }
}

pub fn cone_laplace(p: &PolyCone, zeta: &[Complex64]) -> Result<ConeTransform> {
    if zeta.len() != p.dim() {
        return Err(Error::Dimension(p.dim(), zeta.len()));
    }
    let (rows, a) = cone_frame(p)?;
    let xi: Vec<Complex64> = rows.iter().map(|r| cdot(zeta, r)).collect();
    let (value, formula) = match a {
        Some(a) => {
            let s = xi[1] + a * xi[0];
            if !(xi[0].re < 0.0 && s.re < 0.0) {
                return Err(Error::Precondition(format!(
                    "wedge transform diverges: Re ξ₁ = {:.3e}, Re(ξ₂ + aξ₁) = {:.3e}",
                    xi[0].re, s.re
                )));
            }
            (1.0 / (xi[0] * s), ConeFormula::Wedge)
        }
        None => {
            if xi.iter().any(|x| !(x.re < 0.0)) {
                return Err(Error::Precondition("orthant transform diverges: some Re ξ_j ≥ 0".into()));
            }
            (-1.0 / (xi[0] * xi[1] * xi[2]), ConeFormula::Orthant)
        }
    };
    Ok(ConeTransform {
        cone: p.clone(),
        xi,
        a,
        value,
        formula,
    })
}

/// Truncated quadrature of a cone transform with a bound on the neglected tail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureEstimate {
    pub value: Complex64,
    pub tail_bound: f64,
}

/// Polar quadrature of `∫_𝔓 e^{ζ·(x−x_c)} dx`. Along each ray the radial
/// integral is cut where `−Re(ζ·ω) r` reaches `cutoff`; the rest is bounded
/// by `Γ(n, cutoff)/μ(ω)ⁿ`.
pub fn cone_laplace_quadrature(p: &PolyCone, zeta: &[Complex64], angular_panels: usize, cutoff: f64) -> Result<QuadratureEstimate> {
    if p.kind != ConeKind::Polyhedral {
        return invalid("cone transforms need a polyhedral cone");
    }
    let n = p.dim();
    if zeta.len() != n {
        return Err(Error::Dimension(n, zeta.len()));
    }
    let (gx, gw) = gauss_legendre(16);
    let panels = angular_panels.max(1);
    let rule = |lo: f64, hi: f64| -> Vec<(f64, f64)> {
        let w = (hi - lo) / panels as f64;
        (0..panels)
            .flat_map(|i| {
                let a = lo + i as f64 * w;
                gx.iter().zip(&gw).map(move |(x, wt)| (a + 0.5 * w * (x + 1.0), 0.5 * w * wt))
            })
            .collect()
    };
    // Directions and angular weights.
    let dirs: Vec<(Vec<f64>, f64)> = if n == 2 {
        let g1 = &p.generators[0];
        let t0 = g1[1].atan2(g1[0]);
        let alpha = angle_between(g1, &p.generators[1]);
        rule(t0, t0 + alpha).into_iter().map(|(t, w)| (vec![t.cos(), t.sin()], w)).collect()
    } else {
        let g = &p.generators;
        if g.len() != 3 || (0..3).any(|i| (i + 1..3).any(|j| dot(&g[i], &g[j]).abs() > 1e-9)) {
            return Err(Error::Geometry("3D cone is not the image of an orthant".into()));
        }
        let th = rule(0.0, PI / 2.0);
        let mut out = Vec::with_capacity(th.len() * th.len());
        for &(t, wt) in &th {
            for &(f, wf) in &th {
                let c = [t.sin() * f.cos(), t.sin() * f.sin(), t.cos()];
                let d: Vec<f64> = (0..3).map(|i| c[0] * g[0][i] + c[1] * g[1][i] + c[2] * g[2][i]).collect();
                out.push((d, wt * wf * t.sin()));
            }
        }
        out
    };
    let tail_gamma = match n {
        2 => (-cutoff).exp() * (1.0 + cutoff),
        _ => (-cutoff).exp() * (cutoff * cutoff + 2.0 * cutoff + 2.0),
    };
    let parts: Vec<Result<(Complex64, f64)>> = dirs
        .par_iter()
        .map(|(d, w)| {
            let c = cdot(zeta, d);
            let mu = -c.re;
            if !(mu > 0.0) {
                return Err(Error::Precondition("cone transform diverges along a ray".into()));
            }
            let beta = c.im / mu;
            let m = ((cutoff / 2.0) * (1.0 + beta.abs() / 2.0)).ceil() as usize;
            let pw = cutoff / m as f64;
            let mut s = ZERO;
            for i in 0..m {
                let a = i as f64 * pw;
                for (x, wt) in gx.iter().zip(&gw) {
                    let t = a + 0.5 * pw * (x + 1.0);
                    let e = Complex64::new(-t, beta * t).exp();
                    s += 0.5 * pw * wt * t.powi(n as i32 - 1) * e;
                }
            }
            let scale = mu.powi(-(n as i32));
            Ok((s * scale * w, tail_gamma * scale * w))
        })
        .collect();
    let mut value = ZERO;
    let mut tail_bound = 0.0;
    for r in parts {
        let (v, t) = r?;
        value += v;
        tail_bound += t;
    }
    Ok(QuadratureEstimate { value, tail_bound })
}

/// Checks the pair geometry: `q` spherical with half-angle below π/2, a
/// common vertex, `p` inside `q`, and `p` a wedge with opening in (0, π) or an
/// orthant image.
pub fn check_cone_pair(p: &PolyCone, q: &PolyCone) -> Result<()> {
    if q.kind != ConeKind::Spherical || p.kind != ConeKind::Polyhedral {
        return Err(Error::Geometry("expected a polyhedral cone inside a spherical cone".into()));
    }
    if p.dim() != q.dim() {
        return Err(Error::Dimension(p.dim(), q.dim()));
    }
    if q.half_angle.unwrap() >= PI / 2.0 {
        return Err(Error::Geometry("spherical cone half-angle is not below π/2".into()));
    }
    if p.vertex.iter().zip(&q.vertex).any(|(a, b)| (a - b).abs() > 1e-9) {
        return Err(Error::Geometry("cones do not share their vertex".into()));
    }
    for g in &p.generators {
        let x: Vec<f64> = p.vertex.iter().zip(g).map(|(v, g)| v + g).collect();
        if !cone_membership(q, &x) {
            return Err(Error::Geometry("polyhedral cone is not contained in the spherical cone".into()));
        }
    }
    if p.dim() == 2 {
        let a = p.opening_angle();
        if !(a > 0.0 && a < PI) {
            return Err(Error::Geometry("wedge opening outside (0, π)".into()));
        }
    }
    cone_frame(p).map(|_| ())
}

/// Lower bound `1/(1+|a|)` in 2D and `2^{−3/2}` in 3D for `|𝓛(ζ)|` at a null ζ.
pub fn cone_lower_bound(p: &PolyCone) -> Result<f64> {
    let (_, a) = cone_frame(p)?;
    Ok(match a {
        Some(a) => 1.0 / (1.0 + a.abs()),
        None => 2f64.powf(-1.5),
    })
}

/// `σ(S^{n−1}) n!/cos^{n+1} α′`: the constant `C` of `|τⁿ𝓛(ρ(τ)) − 𝓛(ζ)| ≤ C k/τ`.
pub fn perturbation_constant(n: usize, alpha_prime: f64) -> f64 {
    let (sigma, fact) = if n == 2 { (2.0 * PI, 2.0) } else { (4.0 * PI, 6.0) };
    sigma * fact / alpha_prime.cos().powi(n as i32 + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundCurve {
    pub taus: Vec<f64>,
    /// `|τⁿ 𝓛(ρ(τ))|`.
    pub values: Vec<f64>,
    /// `|𝓛(ζ)|`.
    pub limit: f64,
    pub lemma_bound: f64,
    /// Smallest grid τ from which on every value is at least `limit/2`.
    pub tau0: Option<f64>,
    /// Minimum of the values over `τ ≥ tau0` (0 when there is no such τ).
    pub c: f64,
    /// Minimum of the values over the upper half of the τ grid.
    pub plateau: f64,
    /// `|τⁿ𝓛(ρ(τ)) − 𝓛(ζ)|`.
    pub errors: Vec<f64>,
    /// `C k/τ` from the mean-value estimate.
    pub error_bounds: Vec<f64>,
    /// Log-log slope of `errors` against τ.
    pub slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`, skipping non-positive entries.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn lower_bound_curve(p: &PolyCone, q: &PolyCone, k: f64, taus: &[f64]) -> Result<LowerBoundCurve> {
    check_cone_pair(p, q)?;
    if taus.is_empty() {
        return invalid("empty τ grid");
    }
    let n = p.dim();
    let dir = build_direction(q, k, taus[0])?;
    let l0 = cone_laplace(p, &dir.zeta())?.value;
    let mut values = Vec::with_capacity(taus.len());
    let mut errors = Vec::with_capacity(taus.len());
    for &t in taus {
        let d = dir.with_tau(t)?;
        let l = cone_laplace(p, &d.rho)?.value * t.powi(n as i32);
        values.push(l.norm());
        errors.push((l - l0).norm());
    }
    let limit = l0.norm();
    let mut order: Vec<usize> = (0..taus.len()).collect();
    order.sort_by(|&a, &b| taus[a].total_cmp(&taus[b]));
    let mut tau0 = None;
    let mut c = 0.0;
    let mut running = f64::INFINITY;
    for &i in order.iter().rev() {
        if values[i] < limit / 2.0 {
            break;
        }
        running = running.min(values[i]);
        tau0 = Some(taus[i]);
        c = running;
    }
    let plateau = order[order.len() / 2..].iter().map(|&i| values[i]).fold(f64::INFINITY, f64::min);
    let cst = perturbation_constant(n, q.half_angle.unwrap());
    Ok(LowerBoundCurve {
        plateau,
        taus: taus.to_vec(),
        error_bounds: taus.iter().map(|t| cst * k / t).collect(),
        slope: loglog_slope(taus, &errors),
        values,
        limit,
        lemma_bound: cone_lower_bound(p)?,
        tau0,
        c,
        errors,
    })
}

/// Integrability and decay exponents of the remainder for smoothness `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaddeevExponents {
    pub n: usize,
    pub s: f64,
    pub r: f64,
    pub r_prime: f64,
    /// Sobolev embedding case 1–3.
    pub case: u8,
    /// `f64::INFINITY` in case 1.
    pub p: f64,
    /// `2 + n/r′ − n/r`.
    pub decay: f64,
    pub n_over_p: f64,
    pub beta: f64,
}

/// Case table for general `1 < r < 2` with `2/(n+1) ≤ 1/r − 1/r′ < 2/n`.
/// The fourth case `s ≤ n/r − 2`, where the decay no longer beats `n/p`,
/// is rejected.
pub fn faddeev_exponents_with(n: usize, s: f64, r: f64) -> Result<FaddeevExponents> {
    if n != 2 && n != 3 {
        return invalid("dimension must be 2 or 3");
    }
    if !(r > 1.0 && r < 2.0) || !(s >= 0.0) {
        return invalid("need 1 < r < 2 and s ≥ 0");
    }
    let rp = r / (r - 1.0);
    let gap = 1.0 / r - 1.0 / rp;
    let nf = n as f64;
    if gap < 2.0 / (nf + 1.0) - 1e-12 || gap >= 2.0 / nf {
        return invalid(format!("1/r − 1/r′ = {gap:.4} outside [2/(n+1), 2/n)"));
    }
    let decay = 2.0 + nf / rp - nf / r;
    let tol = 1e-12;
    let (case, n_over_p) = if s > nf / rp + tol {
        (1, 0.0)
    } else if (s - nf / rp).abs() <= tol {
        (2, nf * 0.5 * (2.0 / nf + 1.0 / rp - 1.0 / r))
    } else if s > nf / r - 2.0 + tol {
        (3, nf / rp - s)
    } else {
        return Err(Error::Precondition(format!(
            "s = {s} ≤ n/r − 2 gives no decay beyond n/p"
        )));
    };
    Ok(FaddeevExponents {
        n,
        s,
        r,
        r_prime: rp,
        case,
        p: if n_over_p == 0.0 { f64::INFINITY } else { nf / n_over_p },
        decay,
        n_over_p,
        beta: decay - n_over_p,
    })
}

/// Exponents at `r = 2(n+1)/(n+3)`, for `0 ≤ s < 5/6` (2D) or `1/4 < s < 3/4` (3D).
pub fn faddeev_exponents(n: usize, s: f64) -> Result<FaddeevExponents> {
    let ok = match n {
        2 => (0.0..5.0 / 6.0).contains(&s),
        3 => s > 0.25 && s < 0.75,
        _ => false,
    };
    if !ok {
        return invalid(format!("smoothness s = {s} outside the admissible range for n = {n}"));
    }
    let nf = n as f64;
    faddeev_exponents_with(n, s, 2.0 * (nf + 1.0) / (nf + 3.0))
}

pub const DEFAULT_SMOOTHNESS: f64 = 0.49;

#[derive(Clone, Copy, Debug)]
pub struct FaddeevOptions {
    /// Periodic box extent relative to the input grid, at least 2.
    pub padding: f64,
    /// Largest accepted spectral radius of `ψ ↦ G_ρ(qψ)`.
    pub contraction_gate: f64,
    pub power_iters: usize,
    pub gmres: GmresOptions,
    pub s: f64,
    pub seed: u64,
}

impl Default for FaddeevOptions {
    fn default() -> Self {
        FaddeevOptions {
            padding: 2.0,
            contraction_gate: 0.9,
            power_iters: 30,
            gmres: GmresOptions {
                restart: 40,
                max_iter: 400,
                tol: 1e-10,
            },
            s: DEFAULT_SMOOTHNESS,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FaddeevSolution {
    /// ψ on the padded periodic grid.
    pub psi: WaveField,
    /// Position of the input grid inside the padded one.
    pub offset: Vec<usize>,
    pub input_extent: Vec<usize>,
    pub dir: CgoDirection,
    pub tau_perturbed: bool,
    pub contraction: f64,
    pub iterations: usize,
    pub residual: f64,
    pub min_symbol: f64,
    pub exponents: FaddeevExponents,
    pub norm_p: f64,
}

impl FaddeevSolution {
    /// ψ restricted to the input grid.
    pub fn psi_on_input(&self) -> Vec<Complex64> {
        let g = &self.psi.grid;
        let ext = &self.input_extent;
        let n = g.dim;
        let total: usize = ext.iter().product();
        let mut out = Vec::with_capacity(total);
        let e3 = [ext[0], ext[1], if n == 3 { ext[2] } else { 1 }];
        for i in 0..e3[0] {
            for j in 0..e3[1] {
                for l in 0..e3[2] {
                    let idx: Vec<usize> = [i, j, l][..n].iter().zip(&self.offset).map(|(a, o)| a + o).collect();
                    out.push(self.psi.values[g.flat_index(&idx)]);
                }
            }
        }
        out
    }
}

/// `‖v‖_{L^p}` on a grid with cell volume `dv`; `p = ∞` gives the max.
pub fn lp_norm(v: &[Complex64], dv: f64, p: f64) -> f64 {
    if p.is_infinite() {
        return v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    }
    let m = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if m == 0.0 {
        return 0.0;
    }
    let s: f64 = v.iter().map(|z| (z.norm() / m).powf(p)).sum();
    m * (s * dv).powf(1.0 / p)
}

/// Fourier multiplier `1/(−|ξ|² + 2iρ·ξ)` on a half-shifted lattice.
struct FaddeevGreen {
    fft: FftNd,
    inv_symbol: Vec<Complex64>,
    twist: Vec<Vec<Complex64>>,
    strides: Vec<usize>,
    min_symbol: f64,
}

impl FaddeevGreen {
    fn new(grid: &Grid, rho: &[Complex64]) -> Self {
        let n = grid.dim;
        let ext = &grid.extent;
        let freqs: Vec<Vec<f64>> = ext
            .iter()
            .map(|&m| {
                let l = m as f64 * grid.h;
                (0..m).map(|i| 2.0 * PI * (freq_index(i, m) as f64 + 0.5) / l).collect()
            })
            .collect();
        let twist: Vec<Vec<Complex64>> = ext
            .iter()
            .map(|&m| (0..m).map(|j| Complex64::from_polar(1.0, -PI * j as f64 / m as f64)).collect())
            .collect();
        let strides: Vec<usize> = (0..n).map(|a| ext[a + 1..].iter().product()).collect();
        let total: usize = ext.iter().product();
        let symbol: Vec<Complex64> = (0..total)
            .into_par_iter()
            .map(|f| {
                let mut xi2 = 0.0;
                let mut rx = ZERO;
                for a in 0..n {
                    let x = freqs[a][(f / strides[a]) % ext[a]];
                    xi2 += x * x;
                    rx += rho[a] * x;
                }
                Complex64::new(-xi2, 0.0) + Complex64::i() * 2.0 * rx
            })
            .collect();
        let min_symbol = symbol.iter().map(|s| s.norm()).fold(f64::INFINITY, f64::min);
        FaddeevGreen {
            fft: FftNd::new(ext),
            inv_symbol: symbol.iter().map(|s| 1.0 / s).collect(),
            twist,
            strides,
            min_symbol,
        }
    }

    fn twist_at(&self, f: usize, conj: bool) -> Complex64 {
        let mut t = Complex64::new(1.0, 0.0);
        for (a, tw) in self.twist.iter().enumerate() {
            t *= tw[(f / self.strides[a]) % tw.len()];
        }
        if conj {
            t.conj()
        } else {
            t
        }
    }

    fn apply(&self, v: &[Complex64], out: &mut [Complex64]) {
        out.par_iter_mut()
            .enumerate()
            .for_each(|(f, o)| *o = v[f] * self.twist_at(f, false));
        self.fft.forward(out);
        out.par_iter_mut().zip(&self.inv_symbol).for_each(|(o, s)| *o *= s);
        self.fft.inverse(out);
        out.par_iter_mut()
            .enumerate()
            .for_each(|(f, o)| *o *= self.twist_at(f, true));
    }
}

fn padded_grid(grid: &Grid, padding: f64) -> Result<(Grid, Vec<usize>)> {
    let ext: Vec<usize> = grid.extent.iter().map(|&m| (m as f64 * padding).ceil() as usize).collect();
    let off: Vec<usize> = ext.iter().zip(&grid.extent).map(|(a, b)| (a - b) / 2).collect();
    let origin: Vec<f64> = grid.origin.iter().zip(&off).map(|(o, k)| o - *k as f64 * grid.h).collect();
    Ok((Grid::new(grid.dim, origin, grid.h, ext)?, off))
}

/// Solves `(Δ + 2ρ·∇ + q)ψ = f` for `q`, `f` sampled on `grid` and vanishing
/// outside it. The fixed point `ψ = G_ρ(f − qψ)` is accepted only if its
/// spectral radius stays below the contraction gate, then solved by GMRES.
pub fn solve_faddeev(q: &[Complex64], f: &[Complex64], grid: &Grid, dir: &CgoDirection, opts: &FaddeevOptions) -> Result<FaddeevSolution> {
    if q.len() != grid.len() || f.len() != grid.len() {
        return invalid("potential and source must be sampled on the grid");
    }
    if dir.dim() != grid.dim {
        return Err(Error::Dimension(grid.dim, dir.dim()));
    }
    if !(opts.padding >= 2.0) {
        return invalid("zero padding must be at least 2×");
    }
    let exponents = faddeev_exponents(grid.dim, opts.s)?;
    let (pg, off) = padded_grid(grid, opts.padding)?;
    let embed = |v: &[Complex64]| -> Vec<Complex64> {
        let mut out = vec![ZERO; pg.len()];
        for (i, x) in v.iter().enumerate() {
            let m = grid.multi_index(i);
            let idx: Vec<usize> = (0..grid.dim).map(|a| m[a] + off[a]).collect();
            out[pg.flat_index(&idx)] = *x;
        }
        out
    };
    let qp = embed(q);
    let fp = embed(f);

    let quantum = 2.0 * PI / (pg.extent.iter().copied().max().unwrap() as f64 * pg.h);
    let mut dir = dir.clone();
    let mut tau_perturbed = false;
    let mut green = FaddeevGreen::new(&pg, &dir.rho);
    let scale = |d: &CgoDirection| 1e-8 * (d.tau * d.tau + d.im_rho().powi(2)).max(1.0);
    if green.min_symbol < scale(&dir) {
        dir = dir.with_tau(dir.tau + quantum)?;
        tau_perturbed = true;
        green = FaddeevGreen::new(&pg, &dir.rho);
        if green.min_symbol < scale(&dir) {
            return Err(Error::Precondition("multiplier vanishes at a lattice point".into()));
        }
    }

    let qg = |v: &[Complex64], out: &mut [Complex64]| {
        let w: Vec<Complex64> = v.iter().zip(&qp).map(|(a, b)| a * b).collect();
        green.apply(&w, out);
    };
    let contraction = if qp.iter().all(|z| *z == ZERO) {
        0.0
    } else {
        spectral_radius_estimate(qg, pg.len(), opts.power_iters, opts.seed)
    };
    if contraction >= opts.contraction_gate {
        return Err(Error::Precondition(format!(
            "fixed-point map has spectral radius {contraction:.3} ≥ {}: |Im ρ| = {:.3} too small for the contrast",
            opts.contraction_gate,
            dir.im_rho()
        )));
    }
    let mut rhs = vec![ZERO; pg.len()];
    green.apply(&fp, &mut rhs);
    let apply = |v: &[Complex64], out: &mut [Complex64]| {
        qg(v, out);
        out.iter_mut().zip(v).for_each(|(o, x)| *o += x);
    };
    let sol = gmres(apply, &rhs, None, &opts.gmres)?;
    let norm_p = lp_norm(&sol.x, pg.cell_volume(), exponents.p);
    Ok(FaddeevSolution {
        psi: WaveField::new(pg, sol.x, dir.k, Role::Remainder)?,
        offset: off,
        input_extent: grid.extent.clone(),
        dir,
        tau_perturbed,
        contraction,
        iterations: sol.iterations,
        residual: sol.residual,
        min_symbol: green.min_symbol,
        exponents,
        norm_p,
    })
}

#[derive(Clone, Debug)]
pub struct CgoSolution {
    /// `u₀ = e^{ρ·(x−x_c)}(1+ψ)` on the input grid.
    pub u0: WaveField,
    pub faddeev: FaddeevSolution,
    /// `max |Δ_h u₀ + k²(1+V)u₀| / (|u₀|(τ² + |Im ρ|²))` over interior cells
    /// at least `2h` away from the boundary of the support.
    pub residual: f64,
}

/// CGO solution for the contrast `v`: `ψ` from `q = k²V`, `f = −k²V`.
pub fn build_cgo(v: &ContrastField, k: f64, dir: &CgoDirection, grid: &Grid, opts: &FaddeevOptions) -> Result<CgoSolution> {
    if (dir.k - k).abs() > 1e-12 * k.max(1.0) {
        return invalid("direction was built for a different wavenumber");
    }
    let vs = v.sample(grid);
    let k2 = k * k;
    let q: Vec<Complex64> = vs.iter().map(|x| x * k2).collect();
    let f: Vec<Complex64> = vs.iter().map(|x| -x * k2).collect();
    let fad = solve_faddeev(&q, &f, grid, dir, opts)?;
    let psi = fad.psi_on_input();
    let d = &fad.dir;
    let values: Vec<Complex64> = (0..grid.len())
        .into_par_iter()
        .map(|i| d.phase(&grid.point3(i)[..grid.dim]).exp() * (1.0 + psi[i]))
        .collect();
    let u0 = WaveField::new(grid.clone(), values, k, Role::Cgo)?;
    let residual = cgo_residual(&u0, v, &fad.dir, 2.0 * grid.h);
    Ok(CgoSolution { u0, faddeev: fad, residual })
}

/// `max |Δ_h u₀ + k²(1+V)u₀| / (|u₀|(τ² + |Im ρ|²))` over interior cells at
/// distance at least `band` from the boundary of the support of `v`.
pub fn cgo_residual(u0: &WaveField, v: &ContrastField, dir: &CgoDirection, band: f64) -> f64 {
    let grid = &u0.grid;
    let vs = v.sample(grid);
    let k2 = u0.k * u0.k;
    let weight = dir.tau * dir.tau + dir.im_rho().powi(2);
    (0..grid.len())
        .into_par_iter()
        .filter_map(|i| {
            let x = &grid.point3(i)[..grid.dim];
            if v.polytope.boundary_distance(x) < band {
                return None;
            }
            let lap = u0.laplacian_at(i)?;
            let u = u0.values[i];
            Some((lap + k2 * (1.0 + vs[i]) * u).norm() / (u.norm() * weight))
        })
        .reduce(|| 0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub im_rho: f64,
    pub norm_p: f64,
    /// Log-log slope of `norm_p` against `|Im ρ|` over the rows so far.
    pub slope: f64,
}

/// `‖ψ‖_p` along a τ ladder. Rungs that fail the contraction gate are errors.
pub fn tau_sweep(v: &ContrastField, k: f64, dir: &CgoDirection, grid: &Grid, taus: &[f64], opts: &FaddeevOptions) -> Result<Vec<SweepRow>> {
    let vs = v.sample(grid);
    let k2 = k * k;
    let q: Vec<Complex64> = vs.iter().map(|x| x * k2).collect();
    let f: Vec<Complex64> = vs.iter().map(|x| -x * k2).collect();
    let mut rows: Vec<SweepRow> = Vec::with_capacity(taus.len());
    for &t in taus {
        let d = dir.with_tau(t)?;
        let sol = solve_faddeev(&q, &f, grid, &d, opts)?;
        let im = sol.dir.im_rho();
        let mut xs: Vec<f64> = rows.iter().map(|r| r.im_rho).collect();
        let mut ys: Vec<f64> = rows.iter().map(|r| r.norm_p).collect();
        xs.push(im);
        ys.push(sol.norm_p);
        rows.push(SweepRow {
            tau: sol.dir.tau,
            im_rho: im,
            norm_p: sol.norm_p,
            slope: loglog_slope(&xs, &ys),
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "tau,im_rho,norm_p,slope")?;
    for r in rows {
        writeln!(w, "{:.12e},{:.12e},{:.12e},{:.6}", r.tau, r.im_rho, r.norm_p, r.slope)?;
    }
    w.flush()?;
    Ok(())
}

fn rotate2(v: &[f64], t: f64) -> Vec<f64> {
    vec![t.cos() * v[0] - t.sin() * v[1], t.sin() * v[0] + t.cos() * v[1]]
}

/// Random polyhedral cone `𝔓` inside a spherical cone `𝒬` with a common
/// vertex: 2D wedges of opening in [0.3, 2.6], 3D rotated orthants; the axis
/// of `𝒬` is tilted off the central direction of `𝔓` by at most 0.1 and its
/// half-angle stays below 1.45.
pub fn random_admissible_pair(dim: usize, rng: &mut impl Rng) -> Result<(PolyCone, PolyCone)> {
    let vertex: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    match dim {
        2 => {
            let t0 = rng.gen_range(0.0..2.0 * PI);
            let alpha = rng.gen_range(0.3..2.6);
            let g1 = vec![t0.cos(), t0.sin()];
            let g2 = rotate2(&g1, alpha);
            let margin = rng.gen_range(0.02..0.1);
            let room = (1.45 - alpha / 2.0 - margin).clamp(0.0, 0.1);
            let tilt = rng.gen_range(-1.0..=1.0) * room;
            let axis = rotate2(&g1, alpha / 2.0 + tilt);
            let p = PolyCone::polyhedral(vertex.clone(), vec![g1, g2])?;
            let q = PolyCone::spherical(vertex, axis, alpha / 2.0 + tilt.abs() + margin)?;
            Ok((p, q))
        }
        3 => {
            let r = random_rotation3(rng);
            let gens: Vec<Vec<f64>> = (0..3).map(|j| (0..3).map(|i| r[i][j]).collect()).collect();
            let diag: Vec<f64> = (0..3).map(|i| (gens[0][i] + gens[1][i] + gens[2][i]) / 3f64.sqrt()).collect();
            let tilt: f64 = rng.gen_range(0.0..0.1);
            let e1 = orthogonal_unit(&diag);
            let e2 = cross3(&diag, &e1);
            let phi = rng.gen_range(0.0..2.0 * PI);
            let axis: Vec<f64> = (0..3)
                .map(|i| tilt.cos() * diag[i] + tilt.sin() * (phi.cos() * e1[i] + phi.sin() * e2[i]))
                .collect();
            let margin = rng.gen_range(0.02..0.2);
            let half = (1.0 / 3f64.sqrt()).acos() + tilt + margin;
            let p = PolyCone::polyhedral(vertex.clone(), gens)?;
            let q = PolyCone::spherical(vertex, axis, half)?;
            Ok((p, q))
        }
        d => invalid(format!("unsupported cone dimension {d}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn direction_example() {
        let q = PolyCone::spherical(vec![0.0, 0.0], vec![1.0, 0.0], 0.5).unwrap();
        let d = build_direction(&q, 4.0, 3.0).unwrap();
        assert!((d.rho[0] - c(-3.0, 0.0)).norm() < 1e-15);
        assert!((d.rho[1] - c(0.0, 5.0)).norm() < 1e-15);
        assert!(d.null_defect() < 1e-15);
        let re: Vec<f64> = d.rho.iter().map(|r| r.re).collect();
        assert_eq!(norm(&re), 3.0);
    }

    #[test]
    fn direction_3d_convention() {
        let q = PolyCone::spherical(vec![0.0; 3], vec![1.0, 0.0, 0.0], 1.0).unwrap();
        let d = build_direction(&q, 1.0, 2.0).unwrap();
        assert_eq!(d.zeta_im, vec![0.0, 1.0, 0.0]);
        let q = PolyCone::spherical(vec![0.0; 3], vec![1.0, 2.0, 2.0], 1.0).unwrap();
        let d = build_direction(&q, 1.0, 2.0).unwrap();
        assert!(dot(&d.zeta_re, &d.zeta_im).abs() < 1e-15);
        assert!((norm(&d.zeta_im) - 1.0).abs() < 1e-15);
        assert!(d.zeta_im[0] > 0.0);
        assert_eq!(decay_violations(&d, &q, 1000, 3), 0);
    }

    #[test]
    fn direction_rejects_wide_cones() {
        let q = PolyCone::spherical(vec![0.0, 0.0], vec![0.0, 1.0], PI / 2.0).unwrap();
        assert!(matches!(build_direction(&q, 1.0, 1.0), Err(Error::Geometry(_))));
        let p = PolyCone::polyhedral(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(build_direction(&p, 1.0, 1.0).is_err());
        let q = PolyCone::spherical(vec![0.0, 0.0], vec![0.0, 1.0], 1.0).unwrap();
        assert!(build_direction(&q, 1.0, 0.0).is_err());
    }

    #[test]
    fn decay_in_the_cone() {
        let q = PolyCone::spherical(vec![0.3, -0.2], vec![1.0, 1.0], 1.3).unwrap();
        let d = build_direction(&q, 2.0, 5.0).unwrap();
        assert_eq!(decay_violations(&d, &q, 1000, 1), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let x = sample_cone_point(&q, 3.0, &mut rng);
            let dist = x.iter().zip(&q.vertex).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(d.phase(&x).exp().norm() <= (-d.delta0 * d.tau * dist).exp() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn orthant_and_quarter_plane_values() {
        let p = PolyCone::polyhedral(vec![0.0; 3], vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let t = cone_laplace(&p, &[c(-1.0, 0.0); 3]).unwrap();
        assert_eq!(t.formula, ConeFormula::Orthant);
        assert!((t.value - 1.0).norm() < 1e-15);
        let p = PolyCone::polyhedral(vec![0.0; 2], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let t = cone_laplace(&p, &[c(-1.0, 0.0); 2]).unwrap();
        assert!(t.a.unwrap().abs() < 1e-15);
        assert!((t.value - 1.0).norm() < 1e-14);
    }

    #[test]
    fn divergent_pairings_are_rejected() {
        let p = PolyCone::polyhedral(vec![0.0; 2], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(cone_laplace(&p, &[c(1.0, 0.0), c(-1.0, 0.0)]), Err(Error::Precondition(_))));
        let p = PolyCone::polyhedral(vec![0.0; 3], vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert!(cone_laplace(&p, &[c(-1.0, 0.0); 3]).is_err());
    }

    #[test]
    fn wedge_against_polar_quadrature() {
        // 60° wedge by explicit generators, ζ from a direct polar sum.
        let p = PolyCone::polyhedral(vec![0.0; 2], vec![vec![1.0, 0.0], vec![0.5, 0.75f64.sqrt()]]).unwrap();
        let zeta = [c(-0.8, 0.3), c(-0.6, -0.9)];
        let t = cone_laplace(&p, &zeta).unwrap();
        let qd = cone_laplace_quadrature(&p, &zeta, 16, 40.0).unwrap();
        assert!(qd.tail_bound < 1e-12);
        assert!((t.value - qd.value).norm() / t.value.norm() < 1e-10);
        // ∫ dθ/(ζ·ω)² over the wedge, integrated independently by Simpson's rule.
        let m = 4000;
        let hth = PI / 3.0 / m as f64;
        let mut s = ZERO;
        for i in 0..=m {
            let th = i as f64 * hth;
            let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let z = zeta[0] * th.cos() + zeta[1] * th.sin();
            s += w / (z * z);
        }
        s *= hth / 3.0;
        assert!((t.value - s).norm() / s.norm() < 1e-9);
    }

    #[test]
    fn orthant_against_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let (p, q) = random_admissible_pair(3, &mut rng).unwrap();
            let d = build_direction(&q, 1.0, 3.0).unwrap();
            let t = cone_laplace(&p, &d.zeta()).unwrap();
            let qd = cone_laplace_quadrature(&p, &d.zeta(), 4, 36.0).unwrap();
            assert!(qd.tail_bound < 1e-9 * t.value.norm());
            assert!((t.value - qd.value).norm() / t.value.norm() < 1e-6);
        }
    }

    #[test]
    fn random_pairs_are_admissible() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for dim in [2, 3] {
            for _ in 0..200 {
                let (p, q) = random_admissible_pair(dim, &mut rng).unwrap();
                check_cone_pair(&p, &q).unwrap();
            }
        }
    }

    #[test]
    fn pair_geometry_is_checked() {
        let p = PolyCone::polyhedral(vec![0.0; 2], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let narrow = PolyCone::spherical(vec![0.0; 2], vec![1.0, 1.0], 0.5).unwrap();
        assert!(check_cone_pair(&p, &narrow).is_err());
        let moved = PolyCone::spherical(vec![0.1, 0.0], vec![1.0, 1.0], 1.0).unwrap();
        assert!(check_cone_pair(&p, &moved).is_err());
        let ok = PolyCone::spherical(vec![0.0; 2], vec![1.0, 1.0], 3.0 * PI / 8.0).unwrap();
        check_cone_pair(&p, &ok).unwrap();
    }

    fn ladder(t0: f64, m: usize) -> Vec<f64> {
        (0..m).map(|j| t0 * 2f64.powi(j as i32)).collect()
    }

    #[test]
    fn quarter_plane_plateau() {
        let p = PolyCone::polyhedral(vec![0.0; 2], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let q = PolyCone::spherical(vec![0.0; 2], vec![1.0, 1.0], 3.0 * PI / 8.0).unwrap();
        let curve = lower_bound_curve(&p, &q, 2.0, &ladder(1.0, 12)).unwrap();
        assert!((curve.lemma_bound - 1.0).abs() < 1e-12);
        assert!((curve.limit - 1.0).abs() < 1e-12);
        assert!(curve.tau0.is_some());
        assert!(curve.c >= curve.limit / 2.0);
        assert!((curve.plateau - curve.lemma_bound).abs() <= 0.1 * curve.lemma_bound);
        for (e, b) in curve.errors.iter().zip(&curve.error_bounds) {
            assert!(e <= b);
        }
    }

    #[test]
    fn orthant_plateau_clears_the_bound() {
        let g = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let p = PolyCone::polyhedral(vec![0.0; 3], g).unwrap();
        let q = PolyCone::spherical(vec![0.0; 3], vec![1.0; 3], 1.1).unwrap();
        let curve = lower_bound_curve(&p, &q, 2.0, &ladder(1.0, 12)).unwrap();
        assert!((curve.lemma_bound - 2f64.powf(-1.5)).abs() < 1e-15);
        assert!(curve.plateau >= 0.9 * curve.lemma_bound);
        // |ξ₁ξ₂ξ₃| ≤ (2/3)^{3/2} when |ξ|² = 2.
        assert!(curve.limit >= 1.5f64.powf(1.5) * (1.0 - 1e-12));
    }

    #[test]
    fn perturbation_decays_quadratically() {
        // ρ(τ)/τ − ζ = iδ Im ζ with δ = √(1 + k²/τ²) − 1 ≈ k²/(2τ²), so the
        // error tracks |∂_δ 𝓛| δ; the derivative is taken by central differences.
        let p = PolyCone::polyhedral(vec![0.0; 2], vec![vec![1.0, 0.0], vec![0.3, 1.0]]).unwrap();
        let q = PolyCone::spherical(vec![0.0; 2], p.axis(), 1.2).unwrap();
        let k = 2.0;
        let taus = ladder(8.0, 8);
        let curve = lower_bound_curve(&p, &q, k, &taus).unwrap();
        let d = build_direction(&q, k, 1.0).unwrap();
        let l = |e: f64| {
            let z: Vec<Complex64> = d.zeta_re.iter().zip(&d.zeta_im).map(|(r, i)| c(*r, (1.0 + e) * i)).collect();
            cone_laplace(&p, &z).unwrap().value
        };
        let h = 1e-5;
        let dl = (l(h) - l(-h)) / (2.0 * h);
        for (t, e) in taus.iter().zip(&curve.errors) {
            let delta = (1.0 + k * k / (t * t)).sqrt() - 1.0;
            assert!((e - dl.norm() * delta).abs() <= 0.02 * e, "{t} {e}");
        }
        assert!((curve.slope + 2.0).abs() < 0.05, "{}", curve.slope);
    }

    #[test]
    fn exponent_table() {
        let e = faddeev_exponents(2, 0.49).unwrap();
        assert_eq!(e.case, 1);
        assert!(e.p.is_infinite());
        assert!((e.r - 1.2).abs() < 1e-15);
        assert!((e.decay - 2.0 / 3.0).abs() < 1e-12);
        assert!((e.n_over_p + e.beta - 2.0 / 3.0).abs() < 1e-12);
        let e = faddeev_exponents(3, 0.49).unwrap();
        assert_eq!(e.case, 3);
        assert!((e.n_over_p - 0.26).abs() < 1e-12);
        assert!((e.p - 3.0 / 0.26).abs() < 1e-9);
        assert!((e.decay - 0.5).abs() < 1e-12);
        assert!(e.beta > 0.0);
        let e = faddeev_exponents(2, 1.0 / 3.0).unwrap();
        assert_eq!(e.case, 2);
        assert!(e.p.is_finite() && e.n_over_p < e.decay);
        assert!(matches!(faddeev_exponents_with(3, 0.2, 4.0 / 3.0), Err(Error::Precondition(_))));
        assert!(faddeev_exponents(3, 0.2).is_err());
        assert!(faddeev_exponents(2, 0.9).is_err());
        assert!(faddeev_exponents_with(2, 0.3, 1.9).is_err());
    }

    #[test]
    fn lp_norms() {
        let v = vec![c(2.0, 0.0); 16];
        assert_eq!(lp_norm(&v, 0.25, f64::INFINITY), 2.0);
        assert!((lp_norm(&v, 0.25, 2.0) - 4.0).abs() < 1e-14);
        assert!((lp_norm(&v, 0.25, 3.0) - 2.0 * 4f64.powf(1.0 / 3.0)).abs() < 1e-13);
    }

    fn direction(dim: usize, tau: f64) -> CgoDirection {
        let q = PolyCone::spherical(vec![0.0; dim], vec![1.0; dim], 1.0).unwrap();
        build_direction(&q, 2.0, tau).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_remainder() {
        let g = Grid::centered(2, 1.0, 32).unwrap();
        let z = vec![ZERO; g.len()];
        let s = solve_faddeev(&z, &z, &g, &direction(2, 3.0), &FaddeevOptions::default()).unwrap();
        assert!(s.psi.values.iter().all(|v| *v == ZERO));
        assert_eq!(s.norm_p, 0.0);
        assert_eq!(s.psi.grid.extent, vec![64, 64]);
    }

    fn bump_residual(n: usize) -> f64 {
        let g = Grid::centered(2, 1.0, n).unwrap();
        let dir = direction(2, 3.0);
        let f: Vec<Complex64> = (0..g.len())
            .map(|i| {
                let x = g.point(i);
                c((-(x[0] * x[0] + x[1] * x[1]) / 0.05).exp(), 0.0)
            })
            .collect();
        let z = vec![ZERO; g.len()];
        let s = solve_faddeev(&z, &f, &g, &dir, &FaddeevOptions::default()).unwrap();
        let psi = &s.psi;
        let mut worst: f64 = 0.0;
        for i in 0..psi.grid.len() {
            let (Some(lap), Some(gr)) = (psi.laplacian_at(i), psi.gradient_at(i)) else { continue };
            let x = psi.grid.point(i);
            let fx = (-(x[0] * x[0] + x[1] * x[1]) / 0.05).exp();
            let r = lap + 2.0 * (dir.rho[0] * gr[0] + dir.rho[1] * gr[1]) - fx;
            worst = worst.max(r.norm());
        }
        worst
    }

    #[test]
    fn free_remainder_solves_the_conjugated_equation() {
        let r1 = bump_residual(64);
        let r2 = bump_residual(128);
        assert!(r1 < 0.05, "{r1}");
        assert!(r2 < r1 / 3.0, "{r1} {r2}");
    }

    #[test]
    fn contraction_gate_rejects_strong_contrast() {
        let g = Grid::centered(2, 0.6, 32).unwrap();
        let q: Vec<Complex64> = (0..g.len())
            .map(|i| if g.point(i).iter().all(|x| x.abs() < 0.4) { c(400.0, 0.0) } else { ZERO })
            .collect();
        let f: Vec<Complex64> = q.iter().map(|x| -x).collect();
        let r = solve_faddeev(&q, &f, &g, &direction(2, 1.0), &FaddeevOptions::default());
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn curve_stays_on_the_null_variety(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0, tau in 0.01f64..1e4, k in 0.01f64..100.0) {
            prop_assume!(ax * ax + ay * ay + az * az > 1e-4);
            let q = PolyCone::spherical(vec![0.0; 3], vec![ax, ay, az], 1.0).unwrap();
            let d = build_direction(&q, k, tau).unwrap();
            prop_assert!(d.null_defect() < 1e-12);
            let re: Vec<f64> = d.rho.iter().map(|r| r.re).collect();
            prop_assert!((norm(&re) - tau).abs() <= 1e-12 * tau);
        }

        #[test]
        fn transforms_are_homogeneous(seed in 0u64..1000, s in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for dim in [2usize, 3] {
                let (p, q) = random_admissible_pair(dim, &mut rng).unwrap();
                let z = build_direction(&q, 1.0, 1.0).unwrap().zeta();
                let zs: Vec<Complex64> = z.iter().map(|x| x * s).collect();
                let a = cone_laplace(&p, &z).unwrap().value;
                let b = cone_laplace(&p, &zs).unwrap().value;
                prop_assert!((b * s.powi(dim as i32) - a).norm() <= 1e-12 * a.norm());
            }
        }

        #[test]
        fn null_transforms_clear_the_lemma_bound(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for dim in [2usize, 3] {
                let (p, q) = random_admissible_pair(dim, &mut rng).unwrap();
                let z = build_direction(&q, 1.0, 1.0).unwrap().zeta();
                let v = cone_laplace(&p, &z).unwrap().value.norm();
                prop_assert!(v >= cone_lower_bound(&p).unwrap() * (1.0 - 1e-12));
            }
        }
    }
}
