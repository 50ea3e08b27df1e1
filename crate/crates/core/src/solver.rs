//! Lippmann–Schwinger forward solver `u = u^i + k² Φ_k * (V u)` on a
//! uniform grid, with FFT convolution, an analytically averaged singular
//! cell and restarted GMRES; far-field patterns from the volume potential.

use crate::error::{invalid, Error, Result};
use crate::fft::FftNd;
use crate::fields::{plane_wave, ContrastField, Grid, Role, WaveField};
use crate::krylov::{gmres, norm2, GmresOptions};
use crate::specfun::{gauss_legendre, hankel01};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Outgoing fundamental solution `Φ_k(x)` for `x ≠ 0`.
pub fn fundamental_solution(dim: usize, k: f64, r: f64) -> Complex64 {
    if dim == 2 {
        let (h0, _) = hankel01(k * r);
        Complex64::new(0.0, 0.25) * h0
    } else {
        Complex64::from_polar(1.0 / (4.0 * PI * r), k * r)
    }
}

/// `∫_{[−1/2,1/2]³} |x|⁻¹ dx`.
pub fn cube_inverse_distance_integral() -> f64 {
    2.0 * (3.0 * ((1.0 + 3f64.sqrt()) / 2f64.sqrt()).ln() - PI / 4.0)
}

/// `∫ Φ_k` over the cube of side `h` centred at the origin.
///
/// The equal-volume ball (disc) integral is exact; the difference between
/// cube and ball is taken from the first terms of the small-`r` expansion.
pub fn singular_cell_integral(dim: usize, k: f64, h: f64) -> Complex64 {
    let i = Complex64::i();
    if dim == 2 {
        let rho = h / PI.sqrt();
        let (_, h1) = hankel01(k * rho);
        let disc = i / 4.0 * (2.0 * PI / (k * k)) * (k * rho * h1 + 2.0 * i / PI);
        // mean of ln|x| over the unit square minus over the unit-area disc
        let delta = -(2f64.ln()) / 2.0 - 1.0 + PI / 4.0 + PI.ln() / 2.0;
        // r² and r² ln r terms of the small-argument expansion also see the shape.
        let d2 = 1.0 / 6.0 - 1.0 / (2.0 * PI);
        let d2log = -3.178_612_938_132_407e-4; // ∫ r² ln r: unit square minus unit-area disc
        let k2 = k * k;
        let c2 = Complex64::new(k2 / (8.0 * PI) * ((k / 2.0).ln() + crate::specfun::EULER_GAMMA - 1.0), -k2 / 16.0);
        let h4 = h.powi(4);
        disc - delta * h * h / (2.0 * PI) + c2 * d2 * h4 + k2 / (8.0 * PI) * h4 * (h.ln() * d2 + d2log)
    } else {
        let rho = h * (3.0 / (4.0 * PI)).powf(1.0 / 3.0);
        let e = Complex64::from_polar(1.0, k * rho);
        let ball = e * (rho / (i * k) + 1.0 / (k * k)) - 1.0 / (k * k);
        let ball_static = 2.0 * PI * rho * rho;
        // ∫ r and ∫ r² over the unit cube minus the unit-volume ball
        let d1 = 0.015_033_110_052_976_467;
        let d2 = 0.019_099_161_064_524_05;
        ball + (cube_inverse_distance_integral() * h * h - ball_static) / (4.0 * PI)
            - k * k / (8.0 * PI) * d1 * h.powi(4)
            - i * k.powi(3) / (24.0 * PI) * d2 * h.powi(5)
    }
}

/// Discrete volume potential `f ↦ k² Σ_y Φ_k(x−y) f(y) h^n` from a source
/// grid to an evaluation grid with the same spacing and aligned nodes.
pub struct VolumePotential {
    pub source: Grid,
    pub target: Grid,
    k: f64,
    dims: Vec<usize>,
    fft: FftNd,
    kernel_hat: Vec<Complex64>,
}

impl VolumePotential {
    pub fn new(source: &Grid, target: &Grid, k: f64) -> Result<Self> {
        if source.dim != target.dim {
            return Err(Error::Dimension(source.dim, target.dim));
        }
        if (source.h - target.h).abs() > 1e-12 * source.h {
            return invalid("source and target grids need equal spacing");
        }
        let h = source.h;
        let n = source.dim;
        let mut shift = [0i64; 3];
        for a in 0..n {
            let s = (target.origin[a] - source.origin[a]) / h;
            if (s - s.round()).abs() > 1e-6 {
                return invalid("target grid is not aligned with the source grid");
            }
            shift[a] = s.round() as i64;
        }
        let dims: Vec<usize> = (0..n).map(|a| (source.extent[a] + target.extent[a]).next_power_of_two()).collect();
        let total: usize = dims.iter().product();
        let fft = FftNd::new(&dims);
        let cell = k * k * singular_cell_integral(n, k, h);
        let vol = h.powi(n as i32);
        let mut strides = [0usize; 3];
        let mut acc = 1;
        for a in (0..n).rev() {
            strides[a] = acc;
            acc *= dims[a];
        }
        let mut kernel: Vec<Complex64> = (0..total)
            .into_par_iter()
            .map(|flat| {
                // Slot holds the offset d = i − j, stored at d mod L.
                let mut r2 = 0.0;
                let mut rem = flat;
                for a in 0..n {
                    let idx = rem / strides[a];
                    rem %= strides[a];
                    let l = dims[a] as i64;
                    let d = if (idx as i64) < l - source.extent[a] as i64 + 1 {
                        idx as i64
                    } else {
                        idx as i64 - l
                    };
                    if d < -(source.extent[a] as i64 - 1) || d > target.extent[a] as i64 - 1 {
                        return ZERO;
                    }
                    let off = (d + shift[a]) as f64 * h;
                    r2 += off * off;
                }
                if r2 == 0.0 {
                    cell
                } else {
                    k * k * vol * fundamental_solution(n, k, r2.sqrt())
                }
            })
            .collect();
        fft.forward(&mut kernel);
        Ok(VolumePotential {
            source: source.clone(),
            target: target.clone(),
            k,
            dims,
            fft,
            kernel_hat: kernel,
        })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Applies the potential to a density on the source grid.
    pub fn apply(&self, density: &[Complex64]) -> Vec<Complex64> {
        let n = self.source.dim;
        let total: usize = self.dims.iter().product();
        let mut buf = vec![ZERO; total];
        let pstr = strides_of(&self.dims);
        let sstr = self.source.strides();
        for (j, v) in density.iter().enumerate() {
            if *v == ZERO {
                continue;
            }
            let mut f = 0;
            let mut rem = j;
            for a in 0..n {
                f += (rem / sstr[a]) * pstr[a];
                rem %= sstr[a];
            }
            buf[f] = *v;
        }
        self.fft.forward(&mut buf);
        buf.par_iter_mut().zip(self.kernel_hat.par_iter()).for_each(|(b, k)| *b *= k);
        self.fft.inverse(&mut buf);
        let tstr = self.target.strides();
        (0..self.target.len())
            .into_par_iter()
            .map(|i| {
                let mut f = 0;
                let mut rem = i;
                for a in 0..n {
                    f += (rem / tstr[a]) * pstr[a];
                    rem %= tstr[a];
                }
                buf[f]
            })
            .collect()
    }
}

fn strides_of(dims: &[usize]) -> [usize; 3] {
    let mut s = [0usize; 3];
    let mut acc = 1;
    for a in (0..dims.len()).rev() {
        s[a] = acc;
        acc *= dims[a];
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SphereLayout {
    /// 2D: `θ_j = 2πj/M`.
    Equispaced { m: usize },
    /// 3D golden-angle spiral.
    Fibonacci { m: usize },
    /// 3D Gauss–Legendre in `cos θ` times uniform `φ`.
    GaussProduct { n_theta: usize, n_phi: usize },
}

impl SphereLayout {
    pub fn default_for(dim: usize, m: usize) -> Self {
        if dim == 2 {
            SphereLayout::Equispaced { m }
        } else {
            SphereLayout::Fibonacci { m }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SphereLayout::Equispaced { .. } => 2,
            _ => 3,
        }
    }

    /// Directions and quadrature weights on `S^{n−1}`.
    pub fn nodes(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        match *self {
            SphereLayout::Equispaced { m } => (
                (0..m)
                    .map(|j| {
                        let t = 2.0 * PI * j as f64 / m as f64;
                        vec![t.cos(), t.sin()]
                    })
                    .collect(),
                vec![2.0 * PI / m as f64; m],
            ),
            SphereLayout::Fibonacci { m } => {
                let golden = PI * (3.0 - 5f64.sqrt());
                (
                    (0..m)
                        .map(|j| {
                            let z = 1.0 - (2.0 * j as f64 + 1.0) / m as f64;
                            let r = (1.0 - z * z).sqrt();
                            let p = golden * j as f64;
                            vec![r * p.cos(), r * p.sin(), z]
                        })
                        .collect(),
                    vec![4.0 * PI / m as f64; m],
                )
            }
            SphereLayout::GaussProduct { n_theta, n_phi } => {
                let (x, w) = gauss_legendre(n_theta);
                let mut dirs = Vec::with_capacity(n_theta * n_phi);
                let mut wts = Vec::with_capacity(n_theta * n_phi);
                for (ct, wt) in x.iter().zip(&w) {
                    let st = (1.0 - ct * ct).sqrt();
                    for j in 0..n_phi {
                        let p = 2.0 * PI * j as f64 / n_phi as f64;
                        dirs.push(vec![st * p.cos(), st * p.sin(), *ct]);
                        wts.push(wt * 2.0 * PI / n_phi as f64);
                    }
                }
                (dirs, wts)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarFieldPattern {
    pub dim: usize,
    pub k: f64,
    pub layout: SphereLayout,
    pub directions: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl FarFieldPattern {
    pub fn zeros(k: f64, layout: SphereLayout) -> Self {
        let (directions, weights) = layout.nodes();
        let m = directions.len();
        FarFieldPattern {
            dim: layout.dim(),
            k,
            layout,
            directions,
            weights,
            values: vec![ZERO; m],
        }
    }

    /// Pattern sampled from a function of the direction.
    pub fn from_fn(k: f64, layout: SphereLayout, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let mut p = FarFieldPattern::zeros(k, layout);
        p.values = p.directions.iter().map(|d| f(d)).collect();
        p
    }

    /// `‖A‖_{L²(S^{n−1})}` by the layout's quadrature.
    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| w * v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn minus(&self, other: &FarFieldPattern) -> Result<FarFieldPattern> {
        if self.layout != other.layout {
            return invalid("far-field patterns sampled on different layouts");
        }
        let mut p = self.clone();
        for (a, b) in p.values.iter_mut().zip(&other.values) {
            *a -= b;
        }
        Ok(p)
    }

    /// CSV rows `theta,re,im` (2D) or `theta,phi,re,im` (3D).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        if self.dim == 2 {
            writeln!(f, "theta,re,im")?;
        } else {
            writeln!(f, "theta,phi,re,im")?;
        }
        for (d, v) in self.directions.iter().zip(&self.values) {
            if self.dim == 2 {
                writeln!(f, "{},{},{}", d[1].atan2(d[0]).rem_euclid(2.0 * PI), v.re, v.im)?;
            } else {
                writeln!(f, "{},{},{},{}", d[2].clamp(-1.0, 1.0).acos(), d[1].atan2(d[0]).rem_euclid(2.0 * PI), v.re, v.im)?;
            }
        }
        Ok(())
    }
}

/// `γ_n` with `A(θ) = γ_n k² ∫ e^{−ikθ·y} V u dy`.
pub fn far_field_constant(dim: usize, k: f64) -> Complex64 {
    if dim == 2 {
        Complex64::from_polar(1.0 / (8.0 * PI * k).sqrt(), PI / 4.0)
    } else {
        Complex64::new(1.0 / (4.0 * PI), 0.0)
    }
}

#[derive(Clone, Debug)]
pub struct ScatteringSolution {
    pub incident: WaveField,
    pub total: WaveField,
    pub scattered: WaveField,
    pub far_field: FarFieldPattern,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
    pub omega: Vec<f64>,
    /// `V` sampled on the grid.
    pub contrast: Vec<Complex64>,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub gmres: GmresOptions,
    pub far_field: Option<SphereLayout>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            gmres: GmresOptions::default(),
            far_field: None,
        }
    }
}

/// Source `V u h^n` sums for far fields: `(points, weights)` on `supp V`.
fn support_sources(grid: &Grid, v: &[Complex64], u: &[Complex64]) -> Vec<([f64; 3], Complex64)> {
    let vol = grid.cell_volume();
    (0..grid.len())
        .filter(|&i| v[i] != ZERO)
        .map(|i| (grid.point3(i), v[i] * u[i] * vol))
        .collect()
}

fn far_field_of_sources(src: &[([f64; 3], Complex64)], k: f64, dim: usize, dirs: &[Vec<f64>]) -> Vec<Complex64> {
    let g = far_field_constant(dim, k) * k * k;
    dirs.par_iter()
        .map(|d| {
            let mut s = ZERO;
            for (y, q) in src {
                let ph: f64 = (0..dim).map(|a| d[a] * y[a]).sum();
                s += q * Complex64::from_polar(1.0, -k * ph);
            }
            g * s
        })
        .collect()
}

/// `A(θ) = γ_n k² Σ e^{−ikθ·y} V(y) u(y) h^n`.
pub fn far_field_from_volume(v: &ContrastField, u: &WaveField, k: f64, layout: SphereLayout) -> Result<FarFieldPattern> {
    if layout.dim() != u.grid.dim {
        return Err(Error::Dimension(u.grid.dim, layout.dim()));
    }
    let vs = v.sample(&u.grid);
    let src = support_sources(&u.grid, &vs, &u.values);
    let mut p = FarFieldPattern::zeros(k, layout);
    p.values = far_field_of_sources(&src, k, u.grid.dim, &p.directions);
    Ok(p)
}

/// Solves the Lippmann–Schwinger equation for plane-wave incidence.
pub fn solve_forward(v: &ContrastField, k: f64, omega: &[f64], grid: &Grid, opts: &SolverOptions) -> Result<ScatteringSolution> {
    if v.dim() != grid.dim {
        return Err(Error::Dimension(grid.dim, v.dim()));
    }
    if !(k > 0.0) {
        return invalid("wavenumber must be positive");
    }
    if !(opts.gmres.tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    let lo = &grid.origin;
    let hi = grid.max_point();
    for p in v.polytope.vertices() {
        if (0..grid.dim).any(|a| p[a] <= lo[a] || p[a] >= hi[a]) {
            return invalid("contrast support escapes the grid");
        }
    }
    let incident = plane_wave(k, omega, grid)?;
    let vs = v.sample(grid);
    let support: Vec<usize> = (0..grid.len()).filter(|&i| vs[i] != ZERO).collect();
    let pot = VolumePotential::new(grid, grid, k)?;
    let layout = opts.far_field.clone().unwrap_or_else(|| SphereLayout::default_for(grid.dim, 64));

    let n = grid.len();
    let (u_supp, iterations, residual, history) = if support.is_empty() {
        (vec![], 0, 0.0, vec![0.0])
    } else {
        let b: Vec<Complex64> = support.iter().map(|&i| incident.values[i]).collect();
        let apply = |x: &[Complex64], out: &mut [Complex64]| {
            let mut dens = vec![ZERO; n];
            for (s, &i) in support.iter().enumerate() {
                dens[i] = vs[i] * x[s];
            }
            let g = pot.apply(&dens);
            for (s, &i) in support.iter().enumerate() {
                out[s] = x[s] - g[i];
            }
        };
        let out = gmres(apply, &b, Some(&b), &opts.gmres)?;
        (out.x, out.iterations, out.residual, out.history)
    };
    let mut dens = vec![ZERO; n];
    for (s, &i) in support.iter().enumerate() {
        dens[i] = vs[i] * u_supp[s];
    }
    let us = pot.apply(&dens);
    let total_vals: Vec<Complex64> = incident.values.iter().zip(&us).map(|(a, b)| a + b).collect();
    let total = WaveField::new(grid.clone(), total_vals, k, Role::Total)?;
    let scattered = WaveField::new(grid.clone(), us, k, Role::Scattered)?;
    let src = support_sources(grid, &vs, &total.values);
    let mut far_field = FarFieldPattern::zeros(k, layout);
    far_field.values = far_field_of_sources(&src, k, grid.dim, &far_field.directions);
    Ok(ScatteringSolution {
        incident,
        total,
        scattered,
        far_field,
        iterations,
        residual,
        history,
        omega: omega.to_vec(),
        contrast: vs,
    })
}

impl ScatteringSolution {
    pub fn k(&self) -> f64 {
        self.total.k
    }

    pub fn grid(&self) -> &Grid {
        &self.total.grid
    }

    fn sources(&self) -> Vec<([f64; 3], Complex64)> {
        support_sources(self.grid(), &self.contrast, &self.total.values)
    }

    /// Far field in arbitrary directions.
    pub fn far_field_at(&self, dirs: &[Vec<f64>]) -> Vec<Complex64> {
        far_field_of_sources(&self.sources(), self.k(), self.grid().dim, dirs)
    }

    /// Far field on another layout.
    pub fn far_field_on(&self, layout: SphereLayout) -> FarFieldPattern {
        let mut p = FarFieldPattern::zeros(self.k(), layout);
        p.values = self.far_field_at(&p.directions);
        p
    }

    /// Scattered wave at arbitrary points by direct summation of the volume
    /// potential. Points must stay at least one cell away from `supp V`.
    pub fn scattered_at(&self, points: &[Vec<f64>]) -> Vec<Complex64> {
        let src = self.sources();
        let (k, dim) = (self.k(), self.grid().dim);
        points
            .par_iter()
            .map(|x| {
                let mut s = ZERO;
                for (y, q) in &src {
                    let r = (0..dim).map(|a| (x[a] - y[a]).powi(2)).sum::<f64>().sqrt();
                    s += q * fundamental_solution(dim, k, r);
                }
                k * k * s
            })
            .collect()
    }

    /// Scattered wave on an aligned grid via FFT convolution.
    pub fn scattered_on_grid(&self, target: &Grid) -> Result<WaveField> {
        let pot = VolumePotential::new(self.grid(), target, self.k())?;
        let dens: Vec<Complex64> = self.contrast.iter().zip(&self.total.values).map(|(v, u)| v * u).collect();
        WaveField::new(target.clone(), pot.apply(&dens), self.k(), Role::Scattered)
    }

    /// Total wave on an aligned grid (incident plus scattered).
    pub fn total_on_grid(&self, target: &Grid) -> Result<WaveField> {
        let us = self.scattered_on_grid(target)?;
        let ui = plane_wave(self.k(), &self.omega, target)?;
        let vals = ui.values.iter().zip(&us.values).map(|(a, b)| a + b).collect();
        WaveField::new(target.clone(), vals, self.k(), Role::Total)
    }

    /// `inf |u|` over grid cells in `B_R \ supp V`.
    pub fn min_total_outside(&self, r: f64) -> f64 {
        let g = self.grid();
        (0..g.len())
            .filter(|&i| self.contrast[i] == ZERO)
            .filter(|&i| g.point3(i).iter().map(|x| x * x).sum::<f64>().sqrt() <= r)
            .map(|i| self.total.values[i].norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Relative Lippmann–Schwinger residual `‖u − u^i − k²Φ*(Vu)‖/‖u^i‖` on `supp V`.
    pub fn ls_residual(&self) -> Result<f64> {
        let pot = VolumePotential::new(self.grid(), self.grid(), self.k())?;
        let dens: Vec<Complex64> = self.contrast.iter().zip(&self.total.values).map(|(v, u)| v * u).collect();
        let g = pot.apply(&dens);
        let supp: Vec<usize> = (0..g.len()).filter(|&i| self.contrast[i] != ZERO).collect();
        let r: Vec<Complex64> = supp
            .iter()
            .map(|&i| self.total.values[i] - self.incident.values[i] - g[i])
            .collect();
        let b: Vec<Complex64> = supp.iter().map(|&i| self.incident.values[i]).collect();
        Ok(if b.is_empty() { 0.0 } else { norm2(&r) / norm2(&b) })
    }
}

/// Scattered wave on the grid covering `B_{r2}` aligned with the solution
/// grid; cells with `|x| < r1` or `|x| ≥ r2` are zeroed.
pub fn near_field_on_annulus(sol: &ScatteringSolution, r1: f64, r2: f64) -> Result<WaveField> {
    if !(0.0 <= r1 && r1 < r2) {
        return invalid("need 0 ≤ r1 < r2");
    }
    let g = sol.grid();
    let supp_r = (0..g.len())
        .filter(|&i| sol.contrast[i] != ZERO)
        .map(|i| g.point3(i).iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if supp_r >= r1 - g.h && supp_r > 0.0 {
        return invalid("annulus intersects the contrast support");
    }
    let target = aligned_grid(g, r2)?;
    let mut w = sol.scattered_on_grid(&target)?;
    for i in 0..target.len() {
        let r = target.point3(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        if r < r1 || r >= r2 {
            w.values[i] = ZERO;
        }
    }
    Ok(w)
}

/// Grid with the spacing and node lattice of `g` covering `[−half, half]^n`.
pub fn aligned_grid(g: &Grid, half: f64) -> Result<Grid> {
    let mut origin = Vec::with_capacity(g.dim);
    let mut extent = Vec::with_capacity(g.dim);
    for a in 0..g.dim {
        let i0 = ((-half - g.origin[a]) / g.h).floor();
        let i1 = ((half - g.origin[a]) / g.h).ceil();
        origin.push(g.origin[a] + i0 * g.h);
        extent.push((i1 - i0) as usize + 1);
    }
    Grid::new(g.dim, origin, g.h, extent)
}

/// Optical-theorem defect for real contrasts: `|∫|A|² − T| / ∫|A|²` where
/// `T = −2√(2π/k) Re(e^{iπ/4}A(ω))` in 2D and `(4π/k) Im A(ω)` in 3D.
pub fn optical_theorem_defect(sol: &ScatteringSolution, layout: SphereLayout) -> f64 {
    let k = sol.k();
    let p = sol.far_field_on(layout);
    let energy = p.l2_norm().powi(2);
    let fwd = sol.far_field_at(&[sol.omega.clone()])[0];
    let t = if sol.grid().dim == 2 {
        -2.0 * (2.0 * PI / k).sqrt() * (Complex64::from_polar(1.0, PI / 4.0) * fwd).re
    } else {
        4.0 * PI / k * fwd.im
    };
    (energy - t).abs() / energy
}

/// Far field of a homogeneous disc of radius `a` and contrast `c` for
/// incidence along `+x`, from separation of variables.
pub fn disc_far_field(k: f64, a: f64, c: f64, theta: f64, terms: usize) -> Result<Complex64> {
    use crate::specfun::{bessel_j, hankel_h1};
    let k1 = k * (1.0 + c).sqrt();
    let mut s = ZERO;
    let i = Complex64::i();
    for n in 0..=terms as i64 {
        let nu = n as f64;
        let jd = |kk: f64| -> Result<(f64, f64)> {
            let j = bessel_j(nu, kk * a)?;
            let jp = if n == 0 { -bessel_j(1.0, kk * a)? } else { bessel_j(nu - 1.0, kk * a)? - nu / (kk * a) * j };
            Ok((j, jp))
        };
        let (j0, j0p) = jd(k)?;
        let (j1, j1p) = jd(k1)?;
        let h = hankel_h1(nu, k * a)?;
        let hp = if n == 0 { -hankel_h1(1.0, k * a)? } else { hankel_h1(nu - 1.0, k * a)? - nu / (k * a) * h };
        let b = i.powi(n as i32) * (k * j0p * j1 - k1 * j1p * j0) / (k1 * j1p * h - k * hp * j1);
        let term = b * (-i).powi(n as i32);
        s += if n == 0 { term } else { 2.0 * term * (nu * theta).cos() };
    }
    Ok((2.0 / (PI * k)).sqrt() * Complex64::from_polar(1.0, -PI / 4.0) * s)
}
