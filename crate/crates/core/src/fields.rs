//! Uniform grids, sampled complex fields, contrasts and the discrete
//! operators and norms shared by the solver and the estimate checks.
//!
//! Grid points double as cell centres: a point stands for the cube of side
//! `h` around it, which is what the midpoint quadratures below assume.

use crate::error::{invalid, Error, Result};
use crate::geom::Polytope;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Default cap on the number of grid points.
pub const POINT_BUDGET: usize = 1 << 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub origin: Vec<f64>,
    pub h: f64,
    pub extent: Vec<usize>,
}

impl Grid {
    pub fn new(dim: usize, origin: Vec<f64>, h: f64, extent: Vec<usize>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return invalid(format!("grid dimension must be 2 or 3, got {dim}"));
        }
        if origin.len() != dim || extent.len() != dim {
            return Err(Error::Dimension(dim, origin.len().max(extent.len())));
        }
        if !(h > 0.0) || !h.is_finite() {
            return invalid("grid spacing must be positive");
        }
        if extent.iter().any(|&e| e == 0) {
            return invalid("empty grid axis");
        }
        let total = extent.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        match total {
            Some(t) if t <= POINT_BUDGET => {}
            _ => return invalid(format!("grid exceeds the {POINT_BUDGET}-point budget")),
        }
        Ok(Grid { dim, origin, h, extent })
    }

    /// `n` cells per axis tiling `[−half, half]^dim`, points at cell centres.
    pub fn centered(dim: usize, half: f64, n: usize) -> Result<Self> {
        let h = 2.0 * half / n as f64;
        Grid::new(dim, vec![-half + h / 2.0; dim], h, vec![n; dim])
    }

    pub fn len(&self) -> usize {
        self.extent.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn strides(&self) -> [usize; 3] {
        let mut s = [0; 3];
        let mut acc = 1;
        for a in (0..self.dim).rev() {
            s[a] = acc;
            acc *= self.extent[a];
        }
        s
    }

    pub fn multi_index(&self, mut flat: usize) -> [usize; 3] {
        let mut v = [0; 3];
        for a in (0..self.dim).rev() {
            v[a] = flat % self.extent[a];
            flat /= self.extent[a];
        }
        v
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let s = self.strides();
        (0..self.dim).map(|a| idx[a] * s[a]).sum()
    }

    /// Point with the unused third coordinate set to zero in 2D.
    pub fn point3(&self, flat: usize) -> [f64; 3] {
        let m = self.multi_index(flat);
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = self.origin[a] + m[a] as f64 * self.h;
        }
        p
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.point3(flat)[..self.dim].to_vec()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Upper corner point.
    pub fn max_point(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|a| self.origin[a] + (self.extent[a] - 1) as f64 * self.h)
            .collect()
    }

    /// Whether the point index has all stencil neighbours inside the grid.
    pub fn is_interior(&self, m: &[usize; 3]) -> bool {
        (0..self.dim).all(|a| m[a] >= 1 && m[a] + 1 < self.extent[a])
    }

    /// Same grid with spacing halved over the same cells.
    pub fn refined(&self) -> Result<Self> {
        let h = self.h / 2.0;
        Grid::new(
            self.dim,
            self.origin.iter().map(|o| o - h / 2.0).collect(),
            h,
            self.extent.iter().map(|e| 2 * e).collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Incident,
    Total,
    Scattered,
    Cgo,
    Remainder,
    Difference,
    Other,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveField {
    pub grid: Grid,
    pub values: Vec<Complex64>,
    pub k: f64,
    pub role: Role,
}

impl WaveField {
    pub fn new(grid: Grid, values: Vec<Complex64>, k: f64, role: Role) -> Result<Self> {
        if values.len() != grid.len() {
            return invalid(format!("field has {} values for {} grid points", values.len(), grid.len()));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return invalid("field contains non-finite values");
        }
        Ok(WaveField { grid, values, k, role })
    }

    pub fn zeros(grid: Grid, k: f64, role: Role) -> Self {
        let n = grid.len();
        WaveField {
            grid,
            values: vec![Complex64::new(0.0, 0.0); n],
            k,
            role,
        }
    }

    pub fn from_fn(grid: Grid, k: f64, role: Role, f: impl Fn(&[f64]) -> Complex64 + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|i| f(&grid.point3(i)[..grid.dim]))
            .collect();
        WaveField { grid, values, k, role }
    }

    /// Pointwise `self − other` on the same grid.
    pub fn minus(&self, other: &WaveField, role: Role) -> Result<WaveField> {
        if self.grid != other.grid {
            return invalid("fields live on different grids");
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(WaveField {
            grid: self.grid.clone(),
            values,
            k: self.k,
            role,
        })
    }

    /// Multilinear interpolation; `None` outside the grid hull.
    pub fn interpolate(&self, x: &[f64]) -> Option<Complex64> {
        let g = &self.grid;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..g.dim {
            let t = (x[a] - g.origin[a]) / g.h;
            if t < -1e-9 || t > (g.extent[a] - 1) as f64 + 1e-9 {
                return None;
            }
            let i = (t.floor().max(0.0) as usize).min(g.extent[a].saturating_sub(2));
            base[a] = i;
            frac[a] = (t - i as f64).clamp(0.0, 1.0);
        }
        let s = g.strides();
        let mut acc = Complex64::new(0.0, 0.0);
        for corner in 0..(1usize << g.dim) {
            let mut w = 1.0;
            let mut off = 0;
            for a in 0..g.dim {
                let bit = (corner >> a) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                off += (base[a] + bit) * s[a];
            }
            if w != 0.0 {
                acc += self.values[off] * w;
            }
        }
        Some(acc)
    }

    /// Central-difference gradient at an interior point.
    pub fn gradient_at(&self, flat: usize) -> Option<[Complex64; 3]> {
        let g = &self.grid;
        let m = g.multi_index(flat);
        if !g.is_interior(&m) {
            return None;
        }
        let s = g.strides();
        let mut out = [Complex64::new(0.0, 0.0); 3];
        for a in 0..g.dim {
            out[a] = (self.values[flat + s[a]] - self.values[flat - s[a]]) / (2.0 * g.h);
        }
        Some(out)
    }

    /// `(2n+1)`-point Laplacian at an interior point.
    pub fn laplacian_at(&self, flat: usize) -> Option<Complex64> {
        let g = &self.grid;
        let m = g.multi_index(flat);
        if !g.is_interior(&m) {
            return None;
        }
        let s = g.strides();
        let c = self.values[flat];
        let mut acc = Complex64::new(0.0, 0.0);
        for a in 0..g.dim {
            acc += self.values[flat + s[a]] + self.values[flat - s[a]] - 2.0 * c;
        }
        Some(acc / (g.h * g.h))
    }

    /// Gradient component `axis` as a field (zero on the grid boundary).
    pub fn derivative(&self, axis: usize) -> WaveField {
        let values = (0..self.grid.len())
            .into_par_iter()
            .map(|i| self.gradient_at(i).map_or(Complex64::new(0.0, 0.0), |g| g[axis]))
            .collect();
        WaveField {
            grid: self.grid.clone(),
            values,
            k: self.k,
            role: Role::Other,
        }
    }

    /// Flat binary (little-endian `f32` re/im pairs) plus a JSON sidecar.
    pub fn export_binary(&self, stem: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            bytes.extend_from_slice(&(v.re as f32).to_le_bytes());
            bytes.extend_from_slice(&(v.im as f32).to_le_bytes());
        }
        std::fs::write(stem.with_extension("bin"), bytes)?;
        let meta = serde_json::json!({
            "grid": self.grid,
            "k": self.k,
            "role": self.role,
            "dtype": "complex64-le",
            "order": "row-major, last axis fastest",
        });
        std::fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    /// CSV of the line along `axis` through grid index `at`.
    pub fn write_slice_csv(&self, path: &Path, axis: usize, at: &[usize]) -> Result<()> {
        let g = &self.grid;
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "x,re,im")?;
        let mut idx = [0usize; 3];
        idx[..g.dim].copy_from_slice(&at[..g.dim]);
        for i in 0..g.extent[axis] {
            idx[axis] = i;
            let flat = g.flat_index(&idx);
            let v = self.values[flat];
            writeln!(f, "{},{},{}", g.origin[axis] + i as f64 * g.h, v.re, v.im)?;
        }
        Ok(())
    }
}

fn unit_check(omega: &[f64]) -> Result<()> {
    let n: f64 = omega.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-12 {
        return invalid(format!("direction must be a unit vector, |ω| = {n}"));
    }
    Ok(())
}

/// `u^i(x) = e^{ikω·x}` on the grid.
pub fn plane_wave(k: f64, omega: &[f64], grid: &Grid) -> Result<WaveField> {
    if omega.len() != grid.dim {
        return Err(Error::Dimension(grid.dim, omega.len()));
    }
    unit_check(omega)?;
    let om = omega.to_vec();
    Ok(WaveField::from_fn(grid.clone(), k, Role::Incident, move |x| {
        let ph: f64 = x.iter().zip(&om).map(|(a, b)| a * b).sum();
        Complex64::from_polar(1.0, k * ph)
    }))
}

/// Complex number written in JSON as a bare real or as `[re, im]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JsonComplex {
    Real(f64),
    Pair([f64; 2]),
}

impl From<JsonComplex> for Complex64 {
    fn from(c: JsonComplex) -> Self {
        match c {
            JsonComplex::Real(r) => Complex64::new(r, 0.0),
            JsonComplex::Pair([a, b]) => Complex64::new(a, b),
        }
    }
}

impl From<Complex64> for JsonComplex {
    fn from(c: Complex64) -> Self {
        if c.im == 0.0 {
            JsonComplex::Real(c.re)
        } else {
            JsonComplex::Pair([c.re, c.im])
        }
    }
}

/// Contrast profiles on the polytope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ContrastSpec {
    /// `φ ≡ value`.
    Constant { value: JsonComplex },
    /// `φ(x) = c0 + g·x`.
    Affine { c0: JsonComplex, grad: Vec<f64> },
    /// `φ(x) = c0 + c·|x − x0|^alpha`.
    HoelderBump {
        c0: JsonComplex,
        c: JsonComplex,
        x0: Vec<f64>,
        alpha: f64,
    },
}

impl ContrastSpec {
    pub fn constant(v: f64) -> Self {
        ContrastSpec::Constant { value: JsonComplex::Real(v) }
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        match self {
            ContrastSpec::Constant { value } => (*value).into(),
            ContrastSpec::Affine { c0, grad } => {
                let c0: Complex64 = (*c0).into();
                c0 + grad.iter().zip(x).map(|(g, x)| g * x).sum::<f64>()
            }
            ContrastSpec::HoelderBump { c0, c, x0, alpha } => {
                let r: f64 = x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let c0: Complex64 = (*c0).into();
                let c: Complex64 = (*c).into();
                c0 + c * r.powf(*alpha)
            }
        }
    }

    /// Hölder exponent (capped at 1).
    pub fn alpha(&self) -> f64 {
        match self {
            ContrastSpec::HoelderBump { alpha, .. } => alpha.min(1.0),
            _ => 1.0,
        }
    }

    /// Hölder seminorm bound for the exponent [`ContrastSpec::alpha`].
    pub fn seminorm(&self) -> f64 {
        match self {
            ContrastSpec::Constant { .. } => 0.0,
            ContrastSpec::Affine { grad, .. } => grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
            // | |x|^α − |y|^α | ≤ |x − y|^α for α ≤ 1.
            ContrastSpec::HoelderBump { c, .. } => Complex64::from(*c).norm(),
        }
    }
}

/// Contrast `V = χ_P φ` with its declared Hölder data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastField {
    pub polytope: Polytope,
    pub phi: ContrastSpec,
    pub alpha: f64,
    /// Bound on `sup|φ| + [φ]_α` over `P`.
    #[serde(rename = "M")]
    pub m_bound: f64,
    /// `min |φ|` over the vertices.
    pub mu: f64,
}

impl ContrastField {
    pub fn new(polytope: Polytope, phi: ContrastSpec) -> Result<Self> {
        let n = polytope.dim();
        let alpha = phi.alpha();
        let floor = if n == 2 { 0.0 } else { 0.25 };
        if alpha <= floor {
            return invalid(format!("Hölder exponent {alpha} must exceed {floor} in dimension {n}"));
        }
        match &phi {
            ContrastSpec::Affine { grad, .. } if grad.len() != n => return Err(Error::Dimension(n, grad.len())),
            ContrastSpec::HoelderBump { x0, alpha, .. } if x0.len() != n || !(*alpha > 0.0) => {
                return invalid("bump centre or exponent malformed")
            }
            _ => {}
        }
        let sup = match &phi {
            // |affine| is convex, so its max over P sits at a vertex.
            ContrastSpec::Constant { .. } | ContrastSpec::Affine { .. } => polytope
                .vertices()
                .iter()
                .map(|v| phi.eval(v).norm())
                .fold(0.0, f64::max),
            ContrastSpec::HoelderBump { c0, c, x0, alpha } => {
                let rmax = polytope
                    .vertices()
                    .iter()
                    .map(|v| v.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                    .fold(0.0, f64::max);
                Complex64::from(*c0).norm() + Complex64::from(*c).norm() * rmax.powf(*alpha)
            }
        };
        let mu = polytope
            .vertices()
            .iter()
            .map(|v| phi.eval(v).norm())
            .fold(f64::INFINITY, f64::min);
        Ok(ContrastField {
            m_bound: sup + phi.seminorm(),
            alpha,
            mu,
            polytope,
            phi,
        })
    }

    pub fn dim(&self) -> usize {
        self.polytope.dim()
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        if self.polytope.contains(x) {
            self.phi.eval(x)
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    /// `V` at every grid point: a cell belongs to `P` iff its centre does.
    pub fn sample(&self, grid: &Grid) -> Vec<Complex64> {
        (0..grid.len())
            .into_par_iter()
            .map(|i| self.eval(&grid.point3(i)[..grid.dim]))
            .collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.m_bound - self.phi.seminorm()
    }

    /// `|φ|` at vertex `i`.
    pub fn vertex_value(&self, i: usize) -> Complex64 {
        self.phi.eval(&self.polytope.vertices()[i])
    }

    /// Largest sampled `|φ(x) − φ(y)| / |x − y|^α` over random pairs in `P`.
    pub fn hoelder_witness(&self, pairs: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.dim();
        let verts = self.polytope.vertices();
        let lo: Vec<f64> = (0..n).map(|a| verts.iter().map(|v| v[a]).fold(f64::INFINITY, f64::min)).collect();
        let hi: Vec<f64> = (0..n).map(|a| verts.iter().map(|v| v[a]).fold(f64::NEG_INFINITY, f64::max)).collect();
        let draw = |rng: &mut ChaCha8Rng| loop {
            let x: Vec<f64> = (0..n).map(|a| rng.gen_range(lo[a]..=hi[a])).collect();
            if self.polytope.contains(&x) {
                return x;
            }
        };
        let mut worst: f64 = 0.0;
        for _ in 0..pairs {
            let x = draw(&mut rng);
            let y = draw(&mut rng);
            let d: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if d > 1e-12 {
                worst = worst.max((self.phi.eval(&x) - self.phi.eval(&y)).norm() / d.powf(self.alpha));
            }
        }
        worst
    }
}

/// `max |Δ_h u + k²(1+V)u|` over interior points accepted by `keep`.
pub fn helmholtz_residual_where(u: &WaveField, v: Option<&[Complex64]>, keep: impl Fn(&[f64]) -> bool + Sync) -> f64 {
    let k2 = u.k * u.k;
    (0..u.grid.len())
        .into_par_iter()
        .filter_map(|i| {
            let lap = u.laplacian_at(i)?;
            if !keep(&u.grid.point3(i)[..u.grid.dim]) {
                return None;
            }
            let vv = v.map_or(Complex64::new(0.0, 0.0), |v| v[i]);
            Some((lap + k2 * (1.0 + vv) * u.values[i]).norm())
        })
        .reduce(|| 0.0, f64::max)
}

/// `max |Δ_h u + k²(1+V)u|` over all interior points.
pub fn helmholtz_residual(u: &WaveField, v: Option<&ContrastField>) -> f64 {
    let vs = v.map(|c| c.sample(&u.grid));
    helmholtz_residual_where(u, vs.as_deref(), |_| true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Region {
    Polytope { polytope: Polytope },
    Ball { center: Vec<f64>, r: f64 },
    /// `r1 ≤ |x − c| < r2`.
    Annulus { center: Vec<f64>, r1: f64, r2: f64 },
    /// Axis-aligned box `[lo, hi]`.
    Boxed { lo: Vec<f64>, hi: Vec<f64> },
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        let dist = |c: &[f64]| x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        match self {
            Region::Polytope { polytope } => polytope.contains(x),
            Region::Ball { center, r } => dist(center) <= *r,
            Region::Annulus { center, r1, r2 } => {
                let d = dist(center);
                d >= *r1 && d < *r2
            }
            Region::Boxed { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *v >= *l && *v <= *h),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L2,
    Linf,
}

/// Midpoint-rule norm over the grid cells whose centres lie in `region`.
pub fn field_norm(u: &WaveField, region: &Region, norm: Norm) -> Result<f64> {
    let g = &u.grid;
    // Parallel map, serial accumulation: keeps sums bit-reproducible.
    let vals: Vec<f64> = (0..g.len())
        .into_par_iter()
        .filter(|&i| region.contains(&g.point3(i)[..g.dim]))
        .map(|i| u.values[i].norm())
        .collect();
    let count = vals.len();
    let acc = match norm {
        Norm::L2 => vals.iter().map(|a| a * a).sum::<f64>(),
        Norm::Linf => vals.iter().cloned().fold(0.0, f64::max),
    };
    if count == 0 {
        return invalid("region contains no grid cells");
    }
    Ok(match norm {
        Norm::L2 => (acc * g.cell_volume()).sqrt(),
        Norm::Linf => acc,
    })
}

/// Discrete `H²` surrogate `(‖u‖² + ‖∇_h u‖² + ‖Δ_h u‖²)^{1/2}` over interior cells in `region`.
pub fn h2_surrogate(u: &WaveField, region: &Region) -> Result<f64> {
    let g = &u.grid;
    let vals: Vec<f64> = (0..g.len())
        .into_par_iter()
        .filter_map(|i| {
            if !region.contains(&g.point3(i)[..g.dim]) {
                return None;
            }
            let grad = u.gradient_at(i)?;
            let lap = u.laplacian_at(i)?;
            let gs: f64 = grad[..g.dim].iter().map(|c| c.norm_sqr()).sum();
            Some(u.values[i].norm_sqr() + gs + lap.norm_sqr())
        })
        .collect();
    let count = vals.len();
    let acc: f64 = vals.iter().sum();
    if count == 0 {
        return invalid("region contains no interior grid cells");
    }
    Ok((acc * g.cell_volume()).sqrt())
}
