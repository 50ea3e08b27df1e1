//! The orthogonality identity behind corner scattering, the term-by-term
//! budget of its estimate, the choice of τ, and the two stability
//! experiments: support probing between pairs of scatterers and the corner
//! lower bound for a single one.

use crate::cgo::{
    build_cgo, build_direction, cone_laplace, faddeev_exponents, lower_bound_curve, lp_norm, CgoDirection, CgoSolution,
    FaddeevOptions,
};
use crate::error::{invalid, Error, Result};
use crate::fields::{h2_surrogate, helmholtz_residual_where, ContrastField, ContrastSpec, Grid, Region, Role, WaveField};
use crate::geom::{admissibility, check_qangle, min_enclosing_cone, AprioriBounds, PolyCone, Polytope};
use crate::krylov::GmresOptions;
use crate::rellich::{quantitative_rellich, Calibration, RellichParams, RellichRegime};
use crate::solver::{far_field_constant, solve_forward, ScatteringSolution, SolverOptions, SphereLayout};
use crate::specfun::{lower_incomplete_gamma, upper_incomplete_gamma};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Block of grid cells `lo[a] ≤ i_a < hi[a]`. Its faces lie on cell faces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellBox {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

impl CellBox {
    /// Cells whose union best approximates `[c − half, c + half]^n`.
    pub fn around(grid: &Grid, center: &[f64], half: f64) -> Result<Self> {
        let mut lo = Vec::with_capacity(grid.dim);
        let mut hi = Vec::with_capacity(grid.dim);
        for a in 0..grid.dim {
            let face0 = grid.origin[a] - grid.h / 2.0;
            let l = ((center[a] - half - face0) / grid.h).round();
            let u = ((center[a] + half - face0) / grid.h).round();
            if l < 0.0 || u > grid.extent[a] as f64 {
                return Err(Error::Geometry("box escapes the grid".into()));
            }
            if u - l < 3.0 {
                return invalid("box needs at least three cells per axis");
            }
            lo.push(l as usize);
            hi.push(u as usize);
        }
        Ok(CellBox { lo, hi })
    }

    /// Box with one corner at `vertex`, extending a distance `size` along the
    /// sign of each axis component, so it opens into a cone around `axis`.
    pub fn anchored(grid: &Grid, vertex: &[f64], axis: &[f64], size: f64) -> Result<Self> {
        let c: Vec<f64> = (0..grid.dim).map(|a| vertex[a] + 0.5 * size * axis[a].signum()).collect();
        Self::around(grid, &c, 0.5 * size)
    }

    pub fn bounds(&self, grid: &Grid) -> (Vec<f64>, Vec<f64>) {
        let f = |a: usize, i: usize| grid.origin[a] - grid.h / 2.0 + i as f64 * grid.h;
        (
            (0..grid.dim).map(|a| f(a, self.lo[a])).collect(),
            (0..grid.dim).map(|a| f(a, self.hi[a])).collect(),
        )
    }

    fn cells(&self) -> Vec<[usize; 3]> {
        let n = self.lo.len();
        let r = |a: usize| if a < n { self.lo[a]..self.hi[a] } else { 0..1 };
        let mut out = Vec::new();
        for i in r(0) {
            for j in r(1) {
                for l in r(2) {
                    out.push([i, j, l]);
                }
            }
        }
        out
    }

    fn contains_point(&self, grid: &Grid, x: &[f64]) -> bool {
        let (lo, hi) = self.bounds(grid);
        (0..grid.dim).all(|a| x[a] >= lo[a] && x[a] <= hi[a])
    }
}

/// Both sides of `k²∫_Q V u₀ u′ dx = ∮_{∂Q} (u₀ ∂_ν(u′−u) − (u′−u) ∂_ν u₀) dσ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityReport {
    pub volume_term: Complex64,
    pub boundary_term: Complex64,
    pub mismatch: f64,
    /// `mismatch / |volume_term|` (the mismatch itself when the volume term vanishes).
    pub relative: f64,
    /// Half-width of the box.
    pub h: f64,
    pub grid_h: f64,
}

/// `sinh z / z`.
fn sinhc(z: Complex64) -> Complex64 {
    if z.norm() < 1e-3 {
        1.0 + z * z / 6.0 + z * z * z * z / 120.0
    } else {
        z.sinh() / z
    }
}

fn flat(grid: &Grid, m: [usize; 3]) -> usize {
    grid.flat_index(&m[..grid.dim])
}

/// Value and inward derivative at a face from the cell values at depths
/// h/2, 3h/2, 5h/2 (quadratic extrapolation).
fn face_trace(f1: Complex64, f2: Complex64, f3: Complex64, h: f64) -> (Complex64, Complex64) {
    ((15.0 * f1 - 10.0 * f2 + 3.0 * f3) / 8.0, (-2.0 * f1 + 3.0 * f2 - f3) / h)
}

/// Evaluates both sides of the identity on a box of cells. `u` solves the
/// equation with `V`, `u_prime` the free equation on the box (`V′ = 0`
/// there), `u0` the equation with `V`.
///
/// With `phase` given, `u0 = e^{ρ·(x−x_c)} g` is split and the exponential
/// is averaged exactly over cells and faces; only the slowly varying `g`
/// goes through the midpoint rule and the face extrapolation. Without it
/// the error grows like `τ(τh)²` and large τ needs absurd grids.
pub fn check_orthogonality(
    v: &ContrastField,
    u: &WaveField,
    u_prime: &WaveField,
    v_prime: Option<&ContrastField>,
    u0: &WaveField,
    phase: Option<&CgoDirection>,
    region: &CellBox,
) -> Result<OrthogonalityReport> {
    let grid = &u.grid;
    if &u_prime.grid != grid || &u0.grid != grid {
        return invalid("fields must share one grid");
    }
    if region.lo.len() != grid.dim || (0..grid.dim).any(|a| region.hi[a] > grid.extent[a] || region.hi[a] < region.lo[a] + 3) {
        return Err(Error::Geometry("box escapes the grid".into()));
    }
    let k2 = u.k * u.k;
    let h = grid.h;
    let cells = region.cells();
    if let Some(vp) = v_prime {
        let hits = cells.iter().any(|m| vp.eval(&grid.point3(flat(grid, *m))[..grid.dim]) != ZERO);
        if hits {
            return Err(Error::Precondition("the second contrast does not vanish on the box".into()));
        }
    }
    let scale = cells.iter().map(|m| u_prime.values[flat(grid, *m)].norm()).fold(0.0, f64::max);
    let res = helmholtz_residual_where(u_prime, None, |x| region.contains_point(grid, x));
    if res > 0.05 * k2 * scale {
        return Err(Error::Precondition(format!(
            "u′ is not a free Helmholtz solution on the box (residual {res:.3e})"
        )));
    }
    let n = grid.dim;
    let (rho, vertex) = match phase {
        Some(d) => (d.rho.clone(), d.vertex.clone()),
        None => (vec![ZERO; n], vec![0.0; n]),
    };
    let expo = |x: &[f64]| -> Complex64 { (0..n).map(|a| rho[a] * (x[a] - vertex[a])).sum::<Complex64>().exp() };
    let sh: Vec<Complex64> = rho.iter().map(|r| sinhc(r * (h / 2.0))).collect();
    let w_cell: Complex64 = sh.iter().product();
    let vs: Vec<Complex64> = cells.iter().map(|m| v.eval(&grid.point3(flat(grid, *m))[..n])).collect();
    let dv = grid.cell_volume();
    let volume_term: Complex64 = cells
        .iter()
        .zip(&vs)
        .map(|(m, vv)| {
            let i = flat(grid, *m);
            let x = grid.point3(i);
            let e = expo(&x[..n]);
            vv * (u0.values[i] / e) * u_prime.values[i] * e * w_cell
        })
        .sum::<Complex64>()
        * (k2 * dv);

    let w: Vec<Complex64> = u_prime.values.iter().zip(&u.values).map(|(a, b)| a - b).collect();
    let da = dv / h;
    let mut boundary_term = ZERO;
    let g = |i: usize| u0.values[i] / expo(&grid.point3(i)[..n]);
    for a in 0..n {
        let w_face = w_cell / sh[a];
        for side in [0usize, 1] {
            let inward = if side == 0 { 1.0 } else { -1.0 };
            for m in &cells {
                let edge = if side == 0 { region.lo[a] } else { region.hi[a] - 1 };
                if m[a] != edge {
                    continue;
                }
                let at = |d: usize| {
                    let mut q = *m;
                    q[a] = if side == 0 { m[a] + d } else { m[a] - d };
                    flat(grid, q)
                };
                let (i1, i2, i3) = (at(0), at(1), at(2));
                let mut xf = grid.point3(i1);
                xf[a] -= inward * h / 2.0;
                let e = expo(&xf[..n]);
                let (gf, gs) = face_trace(g(i1), g(i2), g(i3), h);
                let u0f = e * gf * w_face;
                let u0s = e * (rho[a] * inward * gf + gs) * w_face;
                let (wf, ws) = face_trace(w[i1], w[i2], w[i3], h);
                // Outward normal derivative is minus the inward one.
                boundary_term += (u0f * (-ws) - wf * (-u0s)) * da;
            }
        }
    }
    let mismatch = (volume_term - boundary_term).norm();
    let (lo, hi) = region.bounds(grid);
    Ok(OrthogonalityReport {
        volume_term,
        boundary_term,
        mismatch,
        relative: if volume_term.norm() > 0.0 { mismatch / volume_term.norm() } else { mismatch },
        h: (0..grid.dim).map(|a| (hi[a] - lo[a]) / 2.0).fold(0.0, f64::max),
        grid_h: h,
    })
}

// Budget

/// Solves for `V` and a CGO attached to `q`, then checks the identity on a
/// box of side `size` anchored at the vertex of `q`, with `V′ ≡ 0`.
pub fn orthogonality_at_corner(
    v: &ContrastField,
    k: f64,
    omega: &[f64],
    grid: &Grid,
    q: &PolyCone,
    tau: f64,
    size: f64,
    faddeev: &FaddeevOptions,
) -> Result<OrthogonalityReport> {
    let sol = solve_forward(v, k, omega, grid, &SolverOptions::default())?;
    let dir = build_direction(q, k, tau)?;
    let cgo = build_cgo(v, k, &dir, grid, faddeev)?;
    let region = CellBox::anchored(grid, &q.vertex, &q.axis(), size)?;
    check_orthogonality(v, &sol.total, &sol.incident, None, &cgo.u0, Some(&cgo.faddeev.dir), &region)
}

/// Norms of the CGO remainder ψ near the probed corner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiNorms {
    pub p: f64,
    /// `‖ψ‖_{L^p(P ∩ B(x_c, h))}`.
    pub lp: f64,
    /// `sup |ψ|` and `sup |∇ψ|` over `B(x_c, h)`.
    pub sup: f64,
    pub sup_grad: f64,
    /// Decay exponent β of the remainder bound.
    pub beta: f64,
}

fn ball_cells(grid: &Grid, x_c: &[f64], h: f64) -> Vec<usize> {
    (0..grid.len())
        .filter(|&i| {
            let x = grid.point3(i);
            (0..grid.dim).map(|a| (x[a] - x_c[a]).powi(2)).sum::<f64>().sqrt() <= h
        })
        .collect()
}

fn grad_norm(u: &WaveField, i: usize) -> Option<f64> {
    u.gradient_at(i).map(|g| g[..u.grid.dim].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt())
}

impl PsiNorms {
    pub fn measure(cgo: &CgoSolution, v: &ContrastField, x_c: &[f64], h: f64) -> Result<Self> {
        let grid = cgo.u0.grid.clone();
        let psi = WaveField::new(grid.clone(), cgo.faddeev.psi_on_input(), cgo.u0.k, Role::Remainder)?;
        let cells = ball_cells(&grid, x_c, h);
        if cells.is_empty() {
            return invalid("the ball around the corner holds no grid cells");
        }
        let p = cgo.faddeev.exponents.p;
        let inside: Vec<Complex64> = cells
            .iter()
            .filter(|&&i| v.polytope.contains(&grid.point3(i)[..grid.dim]))
            .map(|&i| psi.values[i])
            .collect();
        Ok(PsiNorms {
            p,
            lp: lp_norm(&inside, grid.cell_volume(), p),
            sup: cells.iter().map(|&i| psi.values[i].norm()).fold(0.0, f64::max),
            sup_grad: cells.iter().filter_map(|&i| grad_norm(&psi, i)).fold(0.0, f64::max),
            beta: cgo.faddeev.exponents.beta,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetTerms {
    pub tail: f64,
    pub hoelder: f64,
    pub remainder: f64,
    pub boundary_near: f64,
    pub boundary_sphere: f64,
}

impl BudgetTerms {
    pub fn sum(&self) -> f64 {
        self.tail + self.hoelder + self.remainder + self.boundary_near + self.boundary_sphere
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetParams {
    pub tau: f64,
    pub h: f64,
    pub delta: Option<f64>,
    pub m: f64,
    pub n: usize,
    pub delta0: f64,
    pub p_prime: f64,
}

/// Measured witnesses entering the terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetConstants {
    pub phi_xc: f64,
    pub u_prime_xc: f64,
    /// `|𝓛(ρ)|` of the corner cone.
    pub laplace: f64,
    pub m_alpha: f64,
    pub alpha: f64,
    pub m_sup: f64,
    /// `sup |∇u′|` and `sup |u′|` on `B(x_c, h)`.
    pub lipschitz: f64,
    pub f_sup: f64,
    /// `sup (|u − u′| + |∇(u − u′)|)` on `B(x_c, h)`.
    pub diff_c1: f64,
    /// Angle (2D) or solid angle (3D) of the corner cone.
    pub sigma_p: f64,
    pub rho_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateBudget {
    pub terms: BudgetTerms,
    pub lhs: f64,
    /// Multiplier of the left side. Every constant above is explicit, so it is 1.
    pub c: f64,
    pub params: BudgetParams,
    pub constants: BudgetConstants,
    pub holds: bool,
}

fn solid_angle_of_cap(n: usize, theta: f64) -> f64 {
    if n == 2 {
        2.0 * theta
    } else {
        2.0 * PI * (1.0 - theta.cos())
    }
}

/// Bounds every piece of `k² φ(x_c) 𝓛(ρ) u′(x_c)` left over by the
/// orthogonality identity on `Q ∩ B(x_c, h)`: the cone tail outside the
/// ball, the Hölder and Lipschitz remainders of `φ` and `u′`, the ψ part and
/// the two boundary pieces. `delta` bounds `|u − u′| + |∇(u − u′)|` on the
/// lateral boundary; the value measured on the ball is used without it.
#[allow(clippy::too_many_arguments)]
pub fn assemble_budget(
    v: &ContrastField,
    u: &WaveField,
    u_prime: &WaveField,
    x_c: &[f64],
    h: f64,
    dir: &CgoDirection,
    psi: &PsiNorms,
    delta: Option<f64>,
) -> Result<EstimateBudget> {
    let grid = &u.grid;
    let n = grid.dim;
    if &u_prime.grid != grid {
        return invalid("fields must share one grid");
    }
    if !(h > 0.0) {
        return invalid("truncation radius must be positive");
    }
    let vi = v
        .polytope
        .vertices()
        .iter()
        .position(|w| w.iter().zip(x_c).all(|(a, b)| (a - b).abs() < 1e-9))
        .ok_or_else(|| Error::Geometry("x_c is not a vertex of the support".into()))?;
    let cone = v.polytope.vertex_cone(vi);
    let laplace = cone_laplace(&cone, &dir.rho)?.value.norm();
    let sigma_p = if n == 2 { v.polytope.vertex_angle(vi) } else { PI / 2.0 };

    let cells = ball_cells(grid, x_c, h);
    if cells.is_empty() {
        return invalid("the ball around the corner holds no grid cells");
    }
    let up_xc = u_prime
        .interpolate(x_c)
        .ok_or_else(|| Error::Geometry("x_c outside the grid".into()))?
        .norm();
    let f_sup = cells.iter().map(|&i| u_prime.values[i].norm()).fold(0.0, f64::max);
    if up_xc <= 1e-8 * f_sup.max(f64::MIN_POSITIVE) {
        return Err(Error::Precondition("u′ vanishes at the corner".into()));
    }
    let lipschitz = cells.iter().filter_map(|&i| grad_norm(u_prime, i)).fold(0.0, f64::max);
    let w = u_prime.minus(u, Role::Difference)?;
    let diff_c1 = cells
        .iter()
        .filter_map(|&i| grad_norm(&w, i).map(|g| g + w.values[i].norm()))
        .fold(0.0, f64::max);

    let k2 = u.k * u.k;
    let phi_xc = v.phi.eval(x_c).norm();
    let (m_alpha, alpha, m_sup) = (v.phi.seminorm(), v.alpha, v.sup_norm());
    let tau = dir.tau;
    let d0 = dir.delta0;
    let mu = d0 * tau;
    let x = mu * h;
    let rho_norm = dir.rho.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let nf = n as f64;
    let p_prime = if psi.p.is_infinite() { 1.0 } else { psi.p / (psi.p - 1.0) };

    let tail = phi_xc * up_xc * sigma_p * upper_incomplete_gamma(nf, x)? / mu.powf(nf);
    let hoelder = up_xc * m_alpha * sigma_p * lower_incomplete_gamma(alpha + nf, x)? / mu.powf(alpha + nf)
        + m_sup * lipschitz * sigma_p * lower_incomplete_gamma(nf + 1.0, x)? / mu.powf(nf + 1.0);
    let remainder = m_sup
        * f_sup
        * (sigma_p * lower_incomplete_gamma(nf, p_prime * x)? / (p_prime * mu).powf(nf)).powf(1.0 / p_prime)
        * psi.lp;
    let u0_c1 = (1.0 + rho_norm) * (1.0 + psi.sup + psi.sup_grad);
    let theta = dir.alpha_prime;
    let sigma_near = if n == 2 { 2.0 * h } else { PI * h * h * theta.sin() };
    let sigma_sphere = solid_angle_of_cap(n, theta) * h.powi(n as i32 - 1);
    let boundary_near = sigma_near * u0_c1 * delta.unwrap_or(diff_c1) / k2;
    let boundary_sphere = sigma_sphere * (-x).exp() * u0_c1 * diff_c1 / k2;

    let terms = BudgetTerms {
        tail,
        hoelder,
        remainder,
        boundary_near,
        boundary_sphere,
    };
    let lhs = phi_xc * laplace * up_xc;
    Ok(EstimateBudget {
        holds: lhs <= terms.sum(),
        c: 1.0,
        lhs,
        terms,
        params: BudgetParams {
            tau,
            h,
            delta,
            m: alpha.min(1.0).min(psi.beta),
            n,
            delta0: d0,
            p_prime,
        },
        constants: BudgetConstants {
            phi_xc,
            u_prime_xc: up_xc,
            laplace,
            m_alpha,
            alpha,
            m_sup,
            lipschitz,
            f_sup,
            diff_c1,
            sigma_p,
            rho_norm,
        },
    })
}

// Choice of τ

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauChoice {
    /// `(1/(h^{n+5} δ))^{1/(m+n+5)}`.
    pub closed_form: f64,
    pub floor: f64,
    pub tau: f64,
    /// The floor binds: ε is too large for the balancing τ to be admissible.
    pub clamped: bool,
}

/// Balances `τ^{−m}` against `(τh)^{n+5} δ` and clamps to `floor`, which the
/// caller sets to `max(τ₀, C₀, k)`.
pub fn optimize_tau(h: f64, delta: f64, m: f64, n: usize, floor: f64) -> Result<TauChoice> {
    if !(h > 0.0 && h <= 1.0) || !(delta > 0.0) || !(m > 0.0) {
        return invalid(format!("τ needs h ∈ (0,1], δ > 0, m > 0; got h = {h}, δ = {delta}, m = {m}"));
    }
    let e = (n + 5) as f64;
    let closed_form = ((-e * h.ln() - delta.ln()) / (m + e)).exp();
    let tau = closed_form.max(floor);
    Ok(TauChoice {
        closed_form,
        floor,
        tau,
        clamped: closed_form < floor,
    })
}

/// The two competing terms `(τ^{−m}, (τh)^{n+5} δ)`.
pub fn tau_balance(tau: f64, h: f64, delta: f64, m: f64, n: usize) -> (f64, f64) {
    (tau.powf(-m), (tau * h).powi(n as i32 + 5) * delta)
}

// Experiments

/// Shared numerical setup of the experiments.
#[derive(Clone, Debug)]
pub struct ExperimentSetup {
    pub k: f64,
    pub omega: Vec<f64>,
    pub grid: Grid,
    pub layout: SphereLayout,
    pub rellich: RellichParams,
    pub faddeev: FaddeevOptions,
    /// Added to the half-angle of the smallest cone enclosing both supports.
    pub cone_margin: f64,
    /// `C₀` in the lower clamp of τ.
    pub c0: f64,
    /// τ is capped at `tau_cap / grid.h` so the CGO stays resolved.
    pub tau_cap: f64,
    /// Forward solves.
    pub gmres: GmresOptions,
}

impl ExperimentSetup {
    pub fn new(k: f64, omega: Vec<f64>, grid: Grid, layout: SphereLayout) -> Self {
        ExperimentSetup {
            k,
            omega,
            grid,
            layout,
            rellich: RellichParams::new(1.0),
            faddeev: FaddeevOptions::default(),
            cone_margin: 0.05,
            c0: 1.0,
            tau_cap: 0.5,
            gmres: GmresOptions::default(),
        }
    }

    fn solve(&self, v: &ContrastField) -> Result<ScatteringSolution> {
        let opts = SolverOptions {
            gmres: self.gmres,
            far_field: Some(self.layout.clone()),
        };
        solve_forward(v, self.k, &self.omega, &self.grid, &opts)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenePair {
    pub label: String,
    /// Sweep parameter (shrink factor, shift, ...), carried into the record.
    pub param: f64,
    pub a: ContrastField,
    pub b: ContrastField,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub label: String,
    pub param: f64,
    pub epsilon: f64,
    pub hausdorff: f64,
    pub tau_used: f64,
    /// `C (ln ln(𝒮/ε))^{−γ}` with the fitted `C`.
    pub bound_value: f64,
    pub regime: String,
    pub s: f64,
    pub ln_ln: Option<f64>,
    /// `δ(ε)` from the Rellich pipeline.
    pub delta: f64,
    /// Measured `sup_{∂Q}(|w| + |∇w|)` that `delta` has to dominate.
    pub boundary_sup: f64,
    pub rellich_constant: f64,
    pub tau: Option<TauChoice>,
    pub tau_capped: bool,
    /// τ was doubled until the remainder equation became contractive.
    pub tau_raised: bool,
    pub m: f64,
    pub gamma: f64,
    /// `inf |u|` outside the supports in `B_R`.
    pub min_total: f64,
    pub budget: Option<EstimateBudget>,
    /// `hausdorff ≤ bound_value`.
    pub within: bool,
    pub error: Option<String>,
}

impl StabilityRecord {
    fn failed(pair: &ScenePair, err: &Error) -> Self {
        StabilityRecord {
            label: pair.label.clone(),
            param: pair.param,
            epsilon: f64::NAN,
            hausdorff: f64::NAN,
            tau_used: f64::NAN,
            bound_value: f64::NAN,
            regime: "failed".into(),
            s: f64::NAN,
            ln_ln: None,
            delta: f64::NAN,
            boundary_sup: f64::NAN,
            rellich_constant: f64::NAN,
            tau: None,
            tau_capped: false,
            tau_raised: false,
            m: f64::NAN,
            gamma: f64::NAN,
            min_total: f64::NAN,
            budget: None,
            within: false,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportFit {
    /// Smallest `C` with `𝔥 ≤ C (ln ln(𝒮/ε))^{−γ}` on every usable record.
    pub c: f64,
    pub gamma: f64,
    /// Least-squares slope of `ln 𝔥` against `ln ln ln(𝒮/ε)`.
    pub slope: Option<f64>,
    /// ε strictly increasing along the input order.
    pub epsilon_increasing: bool,
    pub used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportExperiment {
    pub records: Vec<StabilityRecord>,
    pub fit: SupportFit,
}

/// The smallest spherical cone at `x_c` holding `points`, widened by `margin`.
pub fn corner_cone(x_c: &[f64], points: &[Vec<f64>], margin: f64) -> Result<PolyCone> {
    let (axis, half) = min_enclosing_cone(x_c, points)
        .ok_or_else(|| Error::Geometry("no enclosing cone below π/2".into()))?;
    let half = half + margin;
    if half >= PI / 2.0 {
        return Err(Error::Geometry(format!("enclosing cone half-angle {half} reaches π/2")));
    }
    PolyCone::spherical(x_c.to_vec(), axis, half)
}

fn tau_floor(cone: &PolyCone, q: &PolyCone, k: f64, c0: f64) -> Result<f64> {
    let taus: Vec<f64> = (0..12).map(|j| k.max(1.0) * 2f64.powi(j)).collect();
    let curve = lower_bound_curve(cone, q, k, &taus)?;
    Ok(curve.tau0.unwrap_or(*taus.last().unwrap()).max(c0).max(k))
}

fn run_pair(pair: &ScenePair, setup: &ExperimentSetup, cal: &Calibration) -> Result<StabilityRecord> {
    let (a, b) = match check_qangle(&pair.a.polytope, &pair.b.polytope) {
        Ok(_) => (&pair.a, &pair.b),
        Err(Error::Precondition(_)) => (&pair.b, &pair.a),
        Err(e) => return Err(e),
    };
    let qa = check_qangle(&a.polytope, &b.polytope)?;
    if !qa.violations.is_empty() {
        return Err(Error::Precondition(format!("pair is not admissible: {}", qa.violations.join("; "))));
    }
    let n = setup.grid.dim;
    let (sa, sb) = (setup.solve(a)?, setup.solve(b)?);
    let big_r = setup.rellich.big_r;
    let min_total = sa.min_total_outside(big_r).min(sb.min_total_outside(big_r));
    if !(min_total > 0.0) {
        return Err(Error::Precondition("total wave vanishes outside the supports".into()));
    }
    let diff = sa.far_field.minus(&sb.far_field)?;
    let mut pts = a.polytope.vertices().to_vec();
    pts.extend_from_slice(b.polytope.vertices());
    let rep = quantitative_rellich(&diff, &sa, &sb, &pts, &setup.rellich, cal)?;
    let exps = faddeev_exponents(n, setup.faddeev.s)?;
    let m = a.alpha.min(1.0).min(exps.beta);
    let gamma = m / (2.0 * ((n + 5) as f64).powi(2));
    let ratio = rep.s / rep.epsilon;
    let ln_ln = (ratio > std::f64::consts::E).then(|| ratio.ln().ln());
    let mut rec = StabilityRecord {
        label: pair.label.clone(),
        param: pair.param,
        epsilon: rep.epsilon,
        hausdorff: qa.hausdorff,
        tau_used: f64::NAN,
        bound_value: f64::NAN,
        regime: serde_json::to_value(rep.regime)?.as_str().unwrap_or_default().to_string(),
        s: rep.s,
        ln_ln,
        delta: rep.boundary_bound,
        boundary_sup: rep.measured.boundary_sup,
        rellich_constant: rep.constant,
        tau: None,
        tau_capped: false,
        tau_raised: false,
        m,
        gamma,
        min_total,
        budget: None,
        within: false,
        error: None,
    };
    if rep.regime == RellichRegime::Zero || !(rep.boundary_bound > 0.0) || !(qa.hausdorff > 0.0) {
        rec.within = true;
        return Ok(rec);
    }
    let h = (0.9 * qa.hausdorff).min(1.0);
    let vi = qa.vertex_index;
    let cone = a.polytope.vertex_cone(vi);
    let q = corner_cone(&qa.x_c, &pts, setup.cone_margin)?;
    let floor = tau_floor(&cone, &q, setup.k, setup.c0)?;
    let choice = optimize_tau(h, rep.boundary_bound, m, n, floor)?;
    let cap = setup.tau_cap / setup.grid.h;
    rec.tau_capped = choice.tau > cap;
    let tau = choice.tau.min(cap);
    rec.tau = Some(choice);
    // C₀ is where the fixed-point map starts to contract; find it by doubling.
    let mut tau = tau;
    let cgo = loop {
        let dir = build_direction(&q, setup.k, tau)?;
        match build_cgo(a, setup.k, &dir, &setup.grid, &setup.faddeev) {
            Ok(c) => break c,
            Err(Error::Precondition(msg)) if msg.contains("spectral radius") && 2.0 * tau <= cap => {
                tau *= 2.0;
                rec.tau_raised = true;
            }
            Err(e) => return Err(e),
        }
    };
    rec.tau_used = cgo.faddeev.dir.tau;
    let psi = PsiNorms::measure(&cgo, a, &qa.x_c, h)?;
    rec.budget = Some(assemble_budget(
        a,
        &sa.total,
        &sb.total,
        &qa.x_c,
        h,
        &cgo.faddeev.dir,
        &psi,
        Some(rep.boundary_bound),
    )?);
    Ok(rec)
}

/// Least-squares slope of `y` against `x`.
pub fn regression_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx)
}

/// Fits `C` and fills `bound_value` and `within` in place.
pub fn fit_support(records: &mut [StabilityRecord]) -> SupportFit {
    let usable: Vec<usize> = (0..records.len())
        .filter(|&i| {
            let r = &records[i];
            r.error.is_none() && r.hausdorff > 0.0 && r.ln_ln.map_or(false, |l| l > 0.0)
        })
        .collect();
    let gamma = usable.first().map_or(f64::NAN, |&i| records[i].gamma);
    let c = usable
        .iter()
        .map(|&i| records[i].hausdorff * records[i].ln_ln.unwrap().powf(records[i].gamma))
        .fold(0.0, f64::max);
    for &i in &usable {
        let r = &mut records[i];
        r.bound_value = c * r.ln_ln.unwrap().powf(-r.gamma);
        r.within = r.hausdorff <= r.bound_value * (1.0 + 1e-12);
    }
    let xs: Vec<f64> = usable.iter().map(|&i| records[i].ln_ln.unwrap().ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|&i| records[i].hausdorff.ln()).collect();
    let eps: Vec<f64> = records.iter().filter(|r| r.error.is_none()).map(|r| r.epsilon).collect();
    SupportFit {
        c,
        gamma,
        slope: regression_slope(&xs, &ys),
        epsilon_increasing: eps.windows(2).all(|w| w[1] > w[0]),
        used: usable.len(),
    }
}

/// Runs every pair (failures are recorded, not fatal) and fits `C`.
pub fn run_support_stability_experiment(pairs: &[ScenePair], setup: &ExperimentSetup, cal: &Calibration) -> SupportExperiment {
    let mut records: Vec<StabilityRecord> = pairs
        .par_iter()
        .map(|p| run_pair(p, setup, cal).unwrap_or_else(|e| StabilityRecord::failed(p, &e)))
        .collect();
    let fit = fit_support(&mut records);
    SupportExperiment { records, fit }
}

fn cube(dim: usize, side: f64) -> Result<Polytope> {
    let hs = side / 2.0;
    if dim == 2 {
        Polytope::rectangle(-hs, -hs, hs, hs)
    } else {
        Polytope::aabb([-hs; 3], [hs; 3])
    }
}

/// `[−a/2, a/2]^n` against copies translated by `t` along the first axis.
pub fn offset_sweep(dim: usize, side: f64, contrast: f64, ts: &[f64]) -> Result<Vec<ScenePair>> {
    let base = cube(dim, side)?;
    let a = ContrastField::new(base.clone(), ContrastSpec::constant(contrast))?;
    ts.iter()
        .map(|&t| {
            let mut shift = vec![0.0; dim];
            shift[0] = t;
            Ok(ScenePair {
                label: format!("offset-{t}"),
                param: t,
                a: a.clone(),
                b: ContrastField::new(base.translated(&shift)?, ContrastSpec::constant(contrast))?,
            })
        })
        .collect()
}

/// `[−a/2, a/2]^n` shrunk about its centre by the factors `1 − t`.
pub fn shrink_sweep(dim: usize, side: f64, contrast: f64, ts: &[f64]) -> Result<Vec<ScenePair>> {
    let base = cube(dim, side)?;
    let a = ContrastField::new(base.clone(), ContrastSpec::constant(contrast))?;
    ts.iter()
        .map(|&t| {
            let b = ContrastField::new(base.scaled(&vec![0.0; dim], 1.0 - t)?, ContrastSpec::constant(contrast))?;
            Ok(ScenePair {
                label: format!("shrink-{t}"),
                param: t,
                a: a.clone(),
                b,
            })
        })
        .collect()
}

// Corner lower bound

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CornerScene {
    pub label: String,
    pub contrast: ContrastField,
    /// Index of the probed vertex.
    pub vertex: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerRecord {
    pub label: String,
    pub ff_norm: f64,
    pub noise_floor: f64,
    /// `ff_norm / noise_floor`.
    pub ratio: f64,
    pub phi_xc: f64,
    pub ell: f64,
    pub s: f64,
    /// `ln ln(𝒮/‖u^s_∞‖)`.
    pub ln_ln: Option<f64>,
    /// `ln(ℓ^{−2/γ} |φ(x_c)|^{−2−2/((n+5)γ)})`.
    pub ln_weight: f64,
    /// `ln(𝒮/exp exp(C ℓ^{−2/γ}|φ(x_c)|^{…}))` with the fitted `C`.
    pub ln_bound: f64,
    pub bound: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerExperiment {
    pub records: Vec<CornerRecord>,
    /// `ln C` of the smallest `C` keeping every bound below the measured norm.
    pub ln_c: f64,
    pub gamma: f64,
    pub noise_floor: f64,
    /// Far-field norm of the `V ≡ 0` control on the same grid.
    pub control_norm: f64,
}

/// Floor of a far field computed from `N` cell sums in double precision.
pub fn roundoff_floor(grid: &Grid, k: f64, sup_u: f64) -> f64 {
    let n = grid.dim;
    let sphere = if n == 2 { 2.0 * PI } else { 4.0 * PI };
    f64::EPSILON * grid.len() as f64 * grid.cell_volume() * k * k * far_field_constant(n, k).norm() * sphere.sqrt() * sup_u
}

/// Far-field norms of corner scenes against the noise floor, with the
/// lower-bound expression evaluated at the fitted `C`.
pub fn run_corner_lower_bound_experiment(scenes: &[CornerScene], setup: &ExperimentSetup) -> Result<CornerExperiment> {
    let n = setup.grid.dim;
    let first = scenes.first().ok_or_else(|| Error::Invalid("no scenes".into()))?;
    let control = ContrastField::new(first.contrast.polytope.clone(), ContrastSpec::constant(0.0))?;
    let control_norm = setup.solve(&control)?.far_field.l2_norm();
    let exps = faddeev_exponents(n, setup.faddeev.s)?;
    let whole = Region::Boxed {
        lo: setup.grid.origin.clone(),
        hi: setup.grid.max_point(),
    };
    let mut records: Vec<CornerRecord> = scenes
        .par_iter()
        .map(|sc| -> CornerRecord {
            let v = &sc.contrast;
            let m = v.alpha.min(1.0).min(exps.beta);
            let gamma = m / ((n + 5) as f64).powi(2);
            let phi_xc = v.vertex_value(sc.vertex).norm();
            let ell = admissibility(&v.polytope, &AprioriBounds::default()).ell;
            let ln_weight = -2.0 / gamma * ell.ln() - (2.0 + 2.0 / ((n + 5) as f64 * gamma)) * phi_xc.ln();
            let mut rec = CornerRecord {
                label: sc.label.clone(),
                ff_norm: f64::NAN,
                noise_floor: f64::NAN,
                ratio: f64::NAN,
                phi_xc,
                ell,
                s: f64::NAN,
                ln_ln: None,
                ln_weight,
                ln_bound: f64::NAN,
                bound: f64::NAN,
                error: None,
            };
            let mut run = || -> Result<()> {
                if !(phi_xc > 0.0) {
                    return Err(Error::Precondition("φ vanishes at the probed corner".into()));
                }
                let sol = setup.solve(v)?;
                let ff = sol.far_field.l2_norm();
                let sup_u = sol.total.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
                let floor = control_norm.max(roundoff_floor(&setup.grid, setup.k, sup_u));
                let s = h2_surrogate(&sol.scattered, &whole)?.max(1.0);
                rec.ff_norm = ff;
                rec.noise_floor = floor;
                rec.ratio = ff / floor;
                rec.s = s;
                rec.ln_ln = (s / ff > std::f64::consts::E).then(|| (s / ff).ln().ln());
                Ok(())
            };
            if let Err(e) = run() {
                rec.error = Some(e.to_string());
            }
            rec
        })
        .collect();
    let gamma = exps.beta.min(1.0).min(first.contrast.alpha) / ((n + 5) as f64).powi(2);
    let ln_c = records
        .iter()
        .filter_map(|r| r.ln_ln.filter(|l| *l > 0.0).map(|l| l.ln() - r.ln_weight))
        .fold(f64::NEG_INFINITY, f64::max);
    for r in records.iter_mut().filter(|r| r.error.is_none()) {
        r.ln_bound = r.s.ln() - (ln_c + r.ln_weight).exp().exp();
        r.bound = r.ln_bound.exp();
    }
    let noise_floor = records.iter().map(|r| r.noise_floor).filter(|f| f.is_finite()).fold(control_norm, f64::max);
    Ok(CornerExperiment {
        records,
        ln_c,
        gamma,
        noise_floor,
        control_norm,
    })
}

/// Unit-square scenes with constant contrasts `phis`, probed at vertex 0.
pub fn contrast_ladder(phis: &[f64]) -> Result<Vec<CornerScene>> {
    let p = Polytope::rectangle(-0.5, -0.5, 0.5, 0.5)?;
    phis.iter()
        .map(|&c| {
            Ok(CornerScene {
                label: format!("phi-{c}"),
                contrast: ContrastField::new(p.clone(), ContrastSpec::constant(c))?,
                vertex: 0,
            })
        })
        .collect()
}

// Output

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v:.12e}"))
}

pub fn write_support_csv(records: &[StabilityRecord], path: &Path) -> Result<()> {
    let mut s = String::from("label,param,epsilon,hausdorff,tau_used,bound_value,regime,ln_ln,within\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{}\n",
            r.label,
            r.param,
            r.epsilon,
            r.hausdorff,
            r.tau_used,
            r.bound_value,
            r.regime,
            opt(r.ln_ln),
            r.within
        ));
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_corner_csv(records: &[CornerRecord], path: &Path) -> Result<()> {
    let mut s = String::from("label,phi_xc,ell,ff_norm,noise_floor,ratio,ln_ln,ln_bound\n");
    for r in records {
        s.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{:.12e}\n",
            r.label,
            r.phi_xc,
            r.ell,
            r.ff_norm,
            r.noise_floor,
            r.ratio,
            opt(r.ln_ln),
            r.ln_bound
        ));
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// gnuplot script plotting 𝔥 and the fitted bound against ε.
pub fn support_plot_script(csv: &str, png: &str) -> String {
    format!(
        "set terminal pngcairo size 800,600\n\
         set output '{png}'\n\
         set datafile separator ','\n\
         set key autotitle columnhead top left\n\
         set logscale xy\n\
         set xlabel 'far-field difference'\n\
         set ylabel 'Hausdorff distance'\n\
         plot '{csv}' using 3:4 with linespoints title 'measured', \\\n\
         \x20    '{csv}' using 3:6 with lines title 'fitted bound'\n"
    )
}

/// gnuplot script for the `‖ψ‖_p` against τ sweep.
pub fn tau_sweep_plot_script(csv: &str, png: &str) -> String {
    format!(
        "set terminal pngcairo size 800,600\n\
         set output '{png}'\n\
         set datafile separator ','\n\
         set logscale xy\n\
         set xlabel 'tau'\n\
         set ylabel 'remainder norm'\n\
         plot '{csv}' using 1:3 with linespoints title 'remainder'\n"
    )
}
