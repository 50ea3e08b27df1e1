//! Convex polygons and cuboids, cones at their vertices, Hausdorff distances
//! and the hull-angle checks used to place complex geometrical optics cones.

use crate::error::{invalid, Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolyKind {
    ConvexPolygon,
    Cuboid,
}

/// Orthonormal frame of a cuboid: `center + Σ t_i axes[i]` with `|t_i| ≤ half[i]`.
#[derive(Clone, Debug, PartialEq)]
struct BoxFrame {
    center: [f64; 3],
    axes: [[f64; 3]; 3],
    half: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PolytopeJson {
    dim: usize,
    kind: PolyKind,
    vertices: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tol: Option<f64>,
}

/// Convex polygon (counterclockwise, strictly convex) or rectangular box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolytopeJson", into = "PolytopeJson")]
pub struct Polytope {
    dim: usize,
    kind: PolyKind,
    vertices: Vec<Vec<f64>>,
    frame: Option<BoxFrame>,
}

impl TryFrom<PolytopeJson> for Polytope {
    type Error = Error;
    fn try_from(j: PolytopeJson) -> Result<Self> {
        match (j.dim, j.kind) {
            (2, PolyKind::ConvexPolygon) => Polytope::polygon(j.vertices),
            (3, PolyKind::Cuboid) => Polytope::cuboid(j.vertices),
            (d, k) => invalid(format!("unsupported polytope dim {d} kind {k:?}")),
        }
    }
}

impl From<Polytope> for PolytopeJson {
    fn from(p: Polytope) -> Self {
        PolytopeJson {
            dim: p.dim,
            kind: p.kind,
            vertices: p.vertices,
            tol: None,
        }
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn unit(a: &[f64]) -> Vec<f64> {
    let n = norm(a);
    a.iter().map(|x| x / n).collect()
}

fn cross2(a: &[f64], b: &[f64]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn cross3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn seg_dist(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab = sub(b, a);
    let ax = sub(x, a);
    let t = (dot(&ax, &ab) / dot(&ab, &ab)).clamp(0.0, 1.0);
    let p: Vec<f64> = a.iter().zip(&ab).map(|(a, d)| a + t * d).collect();
    norm(&sub(x, &p))
}

/// Angle between two vectors in [0, π].
pub fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let c = dot(a, b) / (norm(a) * norm(b));
    c.clamp(-1.0, 1.0).acos()
}

impl Polytope {
    /// Strictly convex polygon with counterclockwise vertices.
    pub fn polygon(vertices: Vec<Vec<f64>>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return invalid("polygon needs at least three vertices");
        }
        if vertices.iter().any(|v| v.len() != 2 || v.iter().any(|x| !x.is_finite())) {
            return invalid("polygon vertices must be finite 2-vectors");
        }
        let scale = vertices.iter().map(|v| norm(v)).fold(1.0, f64::max);
        for i in 0..n {
            let a = &vertices[i];
            let b = &vertices[(i + 1) % n];
            let c = &vertices[(i + 2) % n];
            let cr = cross2(&sub(b, a), &sub(c, b));
            if cr <= TOL * scale * scale {
                return invalid(format!(
                    "polygon not strictly convex counterclockwise at vertex {}",
                    (i + 1) % n
                ));
            }
        }
        // Winding number one: total turning 2π.
        let turn: f64 = (0..n)
            .map(|i| {
                let a = &vertices[i];
                let b = &vertices[(i + 1) % n];
                let c = &vertices[(i + 2) % n];
                let e1 = sub(b, a);
                let e2 = sub(c, b);
                cross2(&e1, &e2).atan2(dot(&e1, &e2))
            })
            .sum();
        if (turn - 2.0 * PI).abs() > 1e-6 {
            return invalid("polygon is self-intersecting");
        }
        Ok(Polytope {
            dim: 2,
            kind: PolyKind::ConvexPolygon,
            vertices,
            frame: None,
        })
    }

    /// Axis-aligned rectangle `[x0,x1]×[y0,y1]`.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Polytope::polygon(vec![vec![x0, y0], vec![x1, y0], vec![x1, y1], vec![x0, y1]])
    }

    /// Regular polygon with `n` vertices on the circle of radius `r`.
    pub fn regular(n: usize, center: [f64; 2], r: f64, phase: f64) -> Result<Self> {
        let v = (0..n)
            .map(|j| {
                let t = phase + 2.0 * PI * j as f64 / n as f64;
                vec![center[0] + r * t.cos(), center[1] + r * t.sin()]
            })
            .collect();
        Polytope::polygon(v)
    }

    /// Rectangular box from eight vertices (any rigid placement).
    pub fn cuboid(vertices: Vec<Vec<f64>>) -> Result<Self> {
        if vertices.len() != 8 || vertices.iter().any(|v| v.len() != 3) {
            return invalid("cuboid needs eight 3-vectors");
        }
        let v0 = &vertices[0];
        let diffs: Vec<Vec<f64>> = (1..8).map(|i| sub(&vertices[i], v0)).collect();
        let scale = diffs.iter().map(|e| norm(e)).fold(0.0, f64::max);
        if diffs.iter().any(|e| norm(e) <= TOL * scale.max(1.0)) {
            return invalid("degenerate cuboid");
        }
        let orth = |a: &Vec<f64>, b: &Vec<f64>| dot(a, b).abs() <= 1e-8 * scale * scale;
        // The three edges at v0 are the mutually orthogonal triple among the
        // seven difference vectors (face diagonals are never orthogonal to both others).
        let mut edges: Option<Vec<Vec<f64>>> = None;
        'search: for i in 0..7 {
            for j in i + 1..7 {
                for l in j + 1..7 {
                    if orth(&diffs[i], &diffs[j]) && orth(&diffs[i], &diffs[l]) && orth(&diffs[j], &diffs[l]) {
                        edges = Some(vec![diffs[i].clone(), diffs[j].clone(), diffs[l].clone()]);
                        break 'search;
                    }
                }
            }
        }
        let Some(edges) = edges else {
            return invalid("cuboid edges at a vertex are not orthogonal");
        };
        // Every vertex must be v0 + Σ s_i e_i with s_i ∈ {0,1}.
        let mut seen = [false; 8];
        for v in &vertices {
            let d = sub(v, v0);
            let mut code = 0;
            for (i, e) in edges.iter().enumerate() {
                let s = dot(&d, e) / dot(e, e);
                if s.abs() < 1e-8 {
                } else if (s - 1.0).abs() < 1e-8 {
                    code |= 1 << i;
                } else {
                    return invalid("vertex set is not a box");
                }
            }
            if seen[code] {
                return invalid("repeated cuboid vertex");
            }
            seen[code] = true;
        }
        let mut center = [0.0; 3];
        for v in &vertices {
            for i in 0..3 {
                center[i] += v[i] / 8.0;
            }
        }
        let mut axes = [[0.0; 3]; 3];
        let mut half = [0.0; 3];
        for i in 0..3 {
            let u = unit(&edges[i]);
            axes[i] = [u[0], u[1], u[2]];
            half[i] = norm(&edges[i]) / 2.0;
        }
        Ok(Polytope {
            dim: 3,
            kind: PolyKind::Cuboid,
            vertices,
            frame: Some(BoxFrame { center, axes, half }),
        })
    }

    /// Axis-aligned box `[lo, hi]` with vertices ordered by binary code (x fastest).
    pub fn aabb(lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        let v = (0..8)
            .map(|c| {
                (0..3)
                    .map(|i| if c & (1 << i) != 0 { hi[i] } else { lo[i] })
                    .collect()
            })
            .collect();
        Polytope::cuboid(v)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> PolyKind {
        self.kind
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    /// Rigid translation.
    pub fn translated(&self, t: &[f64]) -> Result<Self> {
        let v = self
            .vertices
            .iter()
            .map(|p| p.iter().zip(t).map(|(a, b)| a + b).collect())
            .collect();
        self.with_vertices(v)
    }

    /// Homothety `c + s (x − c)`.
    pub fn scaled(&self, c: &[f64], s: f64) -> Result<Self> {
        let v = self
            .vertices
            .iter()
            .map(|p| p.iter().zip(c).map(|(a, c)| c + s * (a - c)).collect())
            .collect();
        self.with_vertices(v)
    }

    fn with_vertices(&self, v: Vec<Vec<f64>>) -> Result<Self> {
        match self.kind {
            PolyKind::ConvexPolygon => Polytope::polygon(v),
            PolyKind::Cuboid => Polytope::cuboid(v),
        }
    }

    pub fn centroid(&self) -> Vec<f64> {
        let n = self.vertices.len() as f64;
        (0..self.dim)
            .map(|i| self.vertices.iter().map(|v| v[i]).sum::<f64>() / n)
            .collect()
    }

    /// Radius of the smallest origin-centred ball containing the polytope.
    pub fn radius(&self) -> f64 {
        self.vertices.iter().map(|v| norm(v)).fold(0.0, f64::max)
    }

    /// Area (2D) or volume (3D).
    pub fn measure(&self) -> f64 {
        match &self.frame {
            Some(f) => 8.0 * f.half[0] * f.half[1] * f.half[2],
            None => {
                let n = self.vertices.len();
                0.5 * (0..n)
                    .map(|i| cross2(&self.vertices[i], &self.vertices[(i + 1) % n]))
                    .sum::<f64>()
            }
        }
    }

    /// Closed membership with absolute tolerance `tol`.
    pub fn contains_tol(&self, x: &[f64], tol: f64) -> bool {
        match &self.frame {
            Some(f) => (0..3).all(|i| {
                let t: f64 = (0..3).map(|j| (x[j] - f.center[j]) * f.axes[i][j]).sum();
                t.abs() <= f.half[i] + tol
            }),
            None => {
                let n = self.vertices.len();
                (0..n).all(|i| {
                    let a = &self.vertices[i];
                    let b = &self.vertices[(i + 1) % n];
                    let e = [b[0] - a[0], b[1] - a[1]];
                    let l = (e[0] * e[0] + e[1] * e[1]).sqrt();
                    (e[0] * (x[1] - a[1]) - e[1] * (x[0] - a[0])) / l >= -tol
                })
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.contains_tol(x, 1e-12)
    }

    /// Euclidean distance from `x` to the closed polytope.
    pub fn distance(&self, x: &[f64]) -> f64 {
        match &self.frame {
            Some(f) => {
                let mut s = 0.0;
                for i in 0..3 {
                    let t: f64 = (0..3).map(|j| (x[j] - f.center[j]) * f.axes[i][j]).sum();
                    let e = (t.abs() - f.half[i]).max(0.0);
                    s += e * e;
                }
                s.sqrt()
            }
            None => {
                if self.contains_tol(x, 0.0) {
                    return 0.0;
                }
                let n = self.vertices.len();
                (0..n)
                    .map(|i| seg_dist(x, &self.vertices[i], &self.vertices[(i + 1) % n]))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Distance from `x` to the boundary (positive inside and outside).
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        match &self.frame {
            Some(f) => {
                if self.contains_tol(x, 0.0) {
                    (0..3)
                        .map(|i| {
                            let t: f64 = (0..3).map(|j| (x[j] - f.center[j]) * f.axes[i][j]).sum();
                            f.half[i] - t.abs()
                        })
                        .fold(f64::INFINITY, f64::min)
                } else {
                    self.distance(x)
                }
            }
            None => {
                let n = self.vertices.len();
                (0..n)
                    .map(|i| seg_dist(x, &self.vertices[i], &self.vertices[(i + 1) % n]))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Nearest point of the closed polytope to `x`.
    pub fn nearest_point(&self, x: &[f64]) -> Vec<f64> {
        match &self.frame {
            Some(f) => {
                let mut p = f.center.to_vec();
                for i in 0..3 {
                    let t: f64 = (0..3).map(|j| (x[j] - f.center[j]) * f.axes[i][j]).sum();
                    let t = t.clamp(-f.half[i], f.half[i]);
                    for j in 0..3 {
                        p[j] += t * f.axes[i][j];
                    }
                }
                p
            }
            None => {
                if self.contains_tol(x, 0.0) {
                    return x.to_vec();
                }
                let n = self.vertices.len();
                let mut best = (f64::INFINITY, x.to_vec());
                for i in 0..n {
                    let a = &self.vertices[i];
                    let b = &self.vertices[(i + 1) % n];
                    let ab = sub(b, a);
                    let t = (dot(&sub(x, a), &ab) / dot(&ab, &ab)).clamp(0.0, 1.0);
                    let p = vec![a[0] + t * ab[0], a[1] + t * ab[1]];
                    let d = norm(&sub(x, &p));
                    if d < best.0 {
                        best = (d, p);
                    }
                }
                best.1
            }
        }
    }

    /// Interior angle at vertex `i` (2D) or the solid-corner dihedral angle π/2 (cuboid).
    pub fn vertex_angle(&self, i: usize) -> f64 {
        match self.kind {
            PolyKind::Cuboid => PI / 2.0,
            PolyKind::ConvexPolygon => {
                let n = self.vertices.len();
                let v = &self.vertices[i];
                let a = sub(&self.vertices[(i + 1) % n], v);
                let b = sub(&self.vertices[(i + n - 1) % n], v);
                angle_between(&a, &b)
            }
        }
    }

    /// Polyhedral cone generated by the polytope at vertex `i`.
    pub fn vertex_cone(&self, i: usize) -> PolyCone {
        let v = &self.vertices[i];
        let gens = match self.kind {
            PolyKind::ConvexPolygon => {
                let n = self.vertices.len();
                vec![
                    unit(&sub(&self.vertices[(i + 1) % n], v)),
                    unit(&sub(&self.vertices[(i + n - 1) % n], v)),
                ]
            }
            PolyKind::Cuboid => {
                let f = self.frame.as_ref().unwrap();
                let d = sub(v, &f.center);
                (0..3)
                    .map(|a| {
                        let s = -dot(&d, &f.axes[a]).signum();
                        f.axes[a].iter().map(|x| s * x).collect()
                    })
                    .collect()
            }
        };
        PolyCone::polyhedral(v.clone(), gens).expect("vertex cone of an admissible polytope")
    }

    /// Outward unit normals of the edges adjacent to vertex `i` (2D).
    fn adjacent_outward_normals(&self, i: usize) -> [Vec<f64>; 2] {
        let n = self.vertices.len();
        let v = &self.vertices[i];
        let next = sub(&self.vertices[(i + 1) % n], v);
        let prev = sub(v, &self.vertices[(i + n - 1) % n]);
        let out = |e: &[f64]| unit(&[e[1], -e[0]]);
        [out(&next), out(&prev)]
    }
}

/// Hausdorff distance between closed convex polytopes.
///
/// `x ↦ d(x, Q)` is convex, so its maximum over `P` sits at a vertex of `P`.
pub fn hausdorff_distance(p: &Polytope, q: &Polytope) -> Result<f64> {
    if p.dim != q.dim {
        return Err(Error::Dimension(p.dim, q.dim));
    }
    let a = p.vertices.iter().map(|v| q.distance(v)).fold(0.0, f64::max);
    let b = q.vertices.iter().map(|v| p.distance(v)).fold(0.0, f64::max);
    Ok(a.max(b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarthestVertex {
    pub index: usize,
    pub vertex: Vec<f64>,
    pub distance: f64,
    /// Whether this orientation attains the Hausdorff distance.
    pub realizes_hausdorff: bool,
}

/// Vertex of `p` farthest from `q`; ties go to the lowest index.
pub fn farthest_vertex(p: &Polytope, q: &Polytope) -> Result<FarthestVertex> {
    let dh = hausdorff_distance(p, q)?;
    let mut best = (0usize, -1.0);
    for (i, v) in p.vertices.iter().enumerate() {
        let d = q.distance(v);
        if d > best.1 + 1e-12 {
            best = (i, d);
        }
    }
    Ok(FarthestVertex {
        index: best.0,
        vertex: p.vertices[best.0].clone(),
        distance: best.1,
        realizes_hausdorff: best.1 >= dh - 1e-12,
    })
}

/// Counterclockwise convex hull (collinear points dropped).
pub fn convex_hull_2d(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = points.to_vec();
    pts.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap().then(a[1].partial_cmp(&b[1]).unwrap()));
    pts.dedup_by(|a, b| (a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: &Vec<f64>, a: &Vec<f64>, b: &Vec<f64>| cross2(&sub(a, o), &sub(b, o));
    let mut hull: Vec<Vec<f64>> = Vec::new();
    let mut floor = 2;
    for (j, p) in pts.iter().chain(pts.iter().rev().skip(1)).enumerate() {
        // The upper chain may not eat into the finished lower chain.
        if j == pts.len() {
            floor = hull.len() + 1;
        }
        while hull.len() >= floor {
            let l = hull.len();
            let t = turn(&hull[l - 2], &hull[l - 1], p);
            let scale = norm(&sub(&hull[l - 1], &hull[l - 2])) * norm(&sub(p, &hull[l - 1]));
            if t <= 1e-12 * scale {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p.clone());
    }
    hull.pop();
    hull
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConeKind {
    Polyhedral,
    Spherical,
}

/// Convex cone with apex `vertex`. Spherical cones store their axis as the
/// only generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyCone {
    pub vertex: Vec<f64>,
    pub generators: Vec<Vec<f64>>,
    pub kind: ConeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_angle: Option<f64>,
    /// Inward facet normals (3D polyhedral only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub facets: Vec<Vec<f64>>,
}

impl PolyCone {
    /// Polyhedral cone from generators. In 2D exactly two generators spanning an
    /// angle in (0, π), ordered counterclockwise.
    pub fn polyhedral(vertex: Vec<f64>, generators: Vec<Vec<f64>>) -> Result<Self> {
        let n = vertex.len();
        if generators.iter().any(|g| g.len() != n) {
            return Err(Error::Dimension(n, generators[0].len()));
        }
        let generators: Vec<Vec<f64>> = generators.iter().map(|g| unit(g)).collect();
        if n == 2 {
            if generators.len() != 2 {
                return invalid("2D polyhedral cone needs two generators");
            }
            let c = cross2(&generators[0], &generators[1]);
            if c <= 1e-12 {
                return invalid("2D cone generators must span an angle in (0, π) counterclockwise");
            }
            return Ok(PolyCone {
                vertex,
                generators,
                kind: ConeKind::Polyhedral,
                half_angle: None,
                facets: vec![],
            });
        }
        let facets = facets_3d(&generators)?;
        let extreme: Vec<Vec<f64>> = dedup_dirs(
            generators
                .iter()
                .filter(|g| facets.iter().filter(|f| dot(f, g).abs() < 1e-9).count() >= 2)
                .cloned()
                .collect(),
        );
        Ok(PolyCone {
            vertex,
            generators: extreme,
            kind: ConeKind::Polyhedral,
            half_angle: None,
            facets,
        })
    }

    pub fn spherical(vertex: Vec<f64>, axis: Vec<f64>, half_angle: f64) -> Result<Self> {
        if !(half_angle > 0.0 && half_angle < PI) {
            return invalid("spherical cone half-angle must lie in (0, π)");
        }
        Ok(PolyCone {
            vertex,
            generators: vec![unit(&axis)],
            kind: ConeKind::Spherical,
            half_angle: Some(half_angle),
            facets: vec![],
        })
    }

    pub fn dim(&self) -> usize {
        self.vertex.len()
    }

    /// Opening angle of a 2D polyhedral cone.
    pub fn opening_angle(&self) -> f64 {
        match self.kind {
            ConeKind::Spherical => 2.0 * self.half_angle.unwrap(),
            ConeKind::Polyhedral => angle_between(&self.generators[0], &self.generators[1]),
        }
    }

    pub fn axis(&self) -> Vec<f64> {
        match self.kind {
            ConeKind::Spherical => self.generators[0].clone(),
            ConeKind::Polyhedral => {
                let mut s = vec![0.0; self.dim()];
                for g in &self.generators {
                    for i in 0..s.len() {
                        s[i] += g[i];
                    }
                }
                unit(&s)
            }
        }
    }
}

fn dedup_dirs(v: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for d in v {
        if !out.iter().any(|o| dot(o, &d) > 1.0 - 1e-12) {
            out.push(d);
        }
    }
    out
}

fn facets_3d(dirs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut facets: Vec<Vec<f64>> = Vec::new();
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            let c = cross3(&dirs[i], &dirs[j]);
            let l = norm(&c);
            if l < 1e-9 {
                continue;
            }
            let nrm: Vec<f64> = c.iter().map(|x| x / l).collect();
            let dots: Vec<f64> = dirs.iter().map(|d| dot(d, &nrm)).collect();
            let cand = if dots.iter().all(|&d| d >= -1e-10) {
                nrm
            } else if dots.iter().all(|&d| d <= 1e-10) {
                nrm.iter().map(|x| -x).collect()
            } else {
                continue;
            };
            if !facets.iter().any(|f| dot(f, &cand) > 1.0 - 1e-10) {
                facets.push(cand);
            }
        }
    }
    if facets.len() < 3 {
        return invalid("3D cone is not pointed and full-dimensional");
    }
    Ok(facets)
}

/// Closed-cone membership.
pub fn cone_membership(k: &PolyCone, x: &[f64]) -> bool {
    let d = sub(x, &k.vertex);
    let r = norm(&d);
    if r < 1e-14 {
        return true;
    }
    match k.kind {
        ConeKind::Spherical => dot(&d, &k.generators[0]) >= r * k.half_angle.unwrap().cos() - 1e-12 * r,
        ConeKind::Polyhedral if k.dim() == 2 => {
            let g1 = &k.generators[0];
            let g2 = &k.generators[1];
            let det = cross2(g1, g2);
            let a = cross2(&d, g2) / det;
            let b = cross2(g1, &d) / det;
            a >= -1e-12 * r && b >= -1e-12 * r
        }
        ConeKind::Polyhedral => k.facets.iter().all(|f| dot(f, &d) >= -1e-12 * r),
    }
}

/// Smallest spherical cone with apex `apex` containing the given points, as
/// (axis, half-angle). Returns `None` when the points do not lie in an open
/// half-space through the apex.
///
/// The optimal axis is `x/|x|` for the minimum-norm `x` with `d_i·x ≥ 1` over
/// the unit directions `d_i`; its support set has at most `n` directions, so
/// support sets are enumerated exactly.
pub fn min_enclosing_cone(apex: &[f64], points: &[Vec<f64>]) -> Option<(Vec<f64>, f64)> {
    let n = apex.len();
    let dirs: Vec<Vec<f64>> = dedup_dirs(
        points
            .iter()
            .map(|p| sub(p, apex))
            .filter(|d| norm(d) > 1e-12)
            .map(|d| unit(&d))
            .collect(),
    );
    if dirs.is_empty() {
        return None;
    }
    let m = dirs.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |idx: &[usize]| {
        if let Some(x) = min_norm_on_support(&dirs, idx, n) {
            let xn = norm(&x);
            if dirs.iter().all(|d| dot(d, &x) >= 1.0 - 1e-9) && best.as_ref().map_or(true, |b| xn < b.0) {
                best = Some((xn, x));
            }
        }
    };
    for i in 0..m {
        consider(&[i]);
        for j in i + 1..m {
            consider(&[i, j]);
            if n == 3 {
                for l in j + 1..m {
                    consider(&[i, j, l]);
                }
            }
        }
    }
    best.map(|(xn, x)| (unit(&x), (1.0 / xn).clamp(-1.0, 1.0).acos()))
}

/// Minimum-norm `x` in span{d_i : i ∈ idx} with `d_i·x = 1` on the support,
/// requiring nonnegative multipliers (KKT).
fn min_norm_on_support(dirs: &[Vec<f64>], idx: &[usize], n: usize) -> Option<Vec<f64>> {
    let k = idx.len();
    let mut g = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            g[a][b] = dot(&dirs[idx[a]], &dirs[idx[b]]);
        }
    }
    let lam = solve_small(g, vec![1.0; k])?;
    if lam.iter().any(|&l| l < -1e-12) {
        return None;
    }
    let mut x = vec![0.0; n];
    for a in 0..k {
        for i in 0..n {
            x[i] += lam[a] * dirs[idx[a]][i];
        }
    }
    Some(x)
}

fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap())?;
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for cc in c..n {
                a[r][cc] -= f * a[c][cc];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Polyhedral cone at `x_c` generated by the convex hull of `P ∪ Q`.
pub fn convex_hull_cone(p: &Polytope, q: &Polytope, x_c: &[f64]) -> Result<PolyCone> {
    if p.dim != q.dim {
        return Err(Error::Dimension(p.dim, q.dim));
    }
    let pts: Vec<Vec<f64>> = p.vertices.iter().chain(q.vertices.iter()).cloned().collect();
    if p.dim == 2 {
        let hull = convex_hull_2d(&pts);
        let m = hull.len();
        let i = hull
            .iter()
            .position(|h| norm(&sub(h, x_c)) < 1e-9)
            .ok_or_else(|| Error::Geometry("point is not a vertex of the convex hull".into()))?;
        let g1 = sub(&hull[(i + 1) % m], x_c);
        let g2 = sub(&hull[(i + m - 1) % m], x_c);
        return PolyCone::polyhedral(x_c.to_vec(), vec![g1, g2]);
    }
    let dirs: Vec<Vec<f64>> = pts
        .iter()
        .map(|v| sub(v, x_c))
        .filter(|d| norm(d) > 1e-12)
        .map(|d| unit(&d))
        .collect();
    match min_enclosing_cone(x_c, &pts) {
        Some((_, a)) if a < PI / 2.0 - 1e-9 => PolyCone::polyhedral(x_c.to_vec(), dirs),
        _ => Err(Error::Geometry("point is not a vertex of the convex hull".into())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QangleReport {
    pub vertex_index: usize,
    pub x_c: Vec<f64>,
    pub hausdorff: f64,
    pub vertex_ok: bool,
    /// 2D: (α+π)/2. 3D: π/2 (strict).
    pub angle_bound: f64,
    /// 2D: hull angle at x_c. 3D: minimal enclosing spherical-cone half-angle.
    pub angle_actual: f64,
    /// 2D only: the nearest point of Q lies along an outward edge normal at x_c.
    pub parallel_edge: bool,
    pub violations: Vec<String>,
}

/// Checks the hull-vertex and hull-angle statements at the vertex of `p`
/// realizing the Hausdorff distance to `q`.
pub fn check_qangle(p: &Polytope, q: &Polytope) -> Result<QangleReport> {
    let fv = farthest_vertex(p, q)?;
    if !fv.realizes_hausdorff {
        return Err(Error::Precondition(
            "Hausdorff distance is realized from the second polytope; swap arguments".into(),
        ));
    }
    let x_c = fv.vertex.clone();
    let pts: Vec<Vec<f64>> = p.vertices.iter().chain(q.vertices.iter()).cloned().collect();
    let mut violations = Vec::new();
    if p.dim == 2 {
        let alpha = p.vertex_angle(fv.index);
        let bound = (alpha + PI) / 2.0;
        let hull = convex_hull_2d(&pts);
        let m = hull.len();
        let (vertex_ok, actual) = match hull.iter().position(|h| norm(&sub(h, &x_c)) < 1e-9) {
            Some(i) => (
                true,
                angle_between(&sub(&hull[(i + 1) % m], &x_c), &sub(&hull[(i + m - 1) % m], &x_c)),
            ),
            None => (false, PI),
        };
        let mut parallel = false;
        if fv.distance > 1e-12 {
            let c = q.nearest_point(&x_c);
            let dir = unit(&sub(&c, &x_c));
            for nrm in p.adjacent_outward_normals(fv.index) {
                if dot(&dir, &nrm) > 1.0 - 1e-9 {
                    parallel = true;
                }
            }
        }
        if !vertex_ok {
            violations.push("x_c is not a vertex of the hull".to_string());
        }
        if actual > bound + 1e-9 {
            violations.push(format!("hull angle {actual} exceeds (α+π)/2 = {bound}"));
        }
        return Ok(QangleReport {
            vertex_index: fv.index,
            x_c,
            hausdorff: fv.distance,
            vertex_ok,
            angle_bound: bound,
            angle_actual: actual,
            parallel_edge: parallel,
            violations,
        });
    }
    let (vertex_ok, actual) = match min_enclosing_cone(&x_c, &pts) {
        Some((_, a)) => (a < PI / 2.0 - 1e-9, a),
        None => (false, PI / 2.0),
    };
    if !vertex_ok {
        violations.push(format!("enclosing cone half-angle {actual} is not below π/2"));
    }
    Ok(QangleReport {
        vertex_index: fv.index,
        x_c,
        hausdorff: fv.distance,
        vertex_ok,
        angle_bound: PI / 2.0,
        angle_actual: actual,
        parallel_edge: false,
        violations,
    })
}

/// Fan-triangulation surrogate `J · C^{n+1}` for the triangulation norm.
/// An upper bound for `‖P‖_{T(s,r)}` when `C ≥ C_{s,r}`, not the infimum.
pub fn triangulation_cost(p: &Polytope, c: f64) -> Result<f64> {
    if c < 1.0 {
        return invalid("triangulation constant must be ≥ 1");
    }
    let simplices = match p.kind {
        PolyKind::ConvexPolygon => p.vertices.len() - 2,
        // Fan from one corner: three far faces, two triangles each.
        PolyKind::Cuboid => 6,
    };
    Ok(simplices as f64 * c.powi(p.dim as i32 + 1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    /// Minimum vertex-to-nonadjacent-edge (or face) distance, capped at 1.
    pub ell: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Number of boundary hyperplanes.
    pub hyperplanes: usize,
    pub ok: bool,
    pub violations: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AprioriBounds {
    pub r: f64,
    pub alpha_m: f64,
    pub alpha_mx: f64,
    pub ell_min: f64,
}

impl Default for AprioriBounds {
    fn default() -> Self {
        AprioriBounds {
            r: f64::INFINITY,
            alpha_m: 0.0,
            alpha_mx: PI / 2.0,
            ell_min: 0.0,
        }
    }
}

/// Shape admissibility: containment in `B_R`, half-angles within
/// `[α_m, α_M]` and the separation `ℓ` above its floor.
pub fn admissibility(p: &Polytope, b: &AprioriBounds) -> AdmissibilityReport {
    let mut violations = Vec::new();
    let (ell, amin, amax, planes) = match p.kind {
        PolyKind::Cuboid => {
            let f = p.frame.as_ref().unwrap();
            let e = 2.0 * f.half.iter().cloned().fold(f64::INFINITY, f64::min);
            (e, PI / 4.0, PI / 4.0, 6)
        }
        PolyKind::ConvexPolygon => {
            let n = p.vertices.len();
            let mut ell = f64::INFINITY;
            for i in 0..n {
                for j in 0..n {
                    if j == i || (j + 1) % n == i {
                        continue;
                    }
                    ell = ell.min(seg_dist(&p.vertices[i], &p.vertices[j], &p.vertices[(j + 1) % n]));
                }
            }
            let halves: Vec<f64> = (0..n).map(|i| p.vertex_angle(i) / 2.0).collect();
            (
                ell,
                halves.iter().cloned().fold(f64::INFINITY, f64::min),
                halves.iter().cloned().fold(0.0, f64::max),
                n,
            )
        }
    };
    let ell = ell.min(1.0);
    if p.radius() >= b.r {
        violations.push(format!("polytope not inside B_R (radius {} ≥ {})", p.radius(), b.r));
    }
    if amin < b.alpha_m {
        violations.push(format!("half-angle {amin} below α_m = {}", b.alpha_m));
    }
    if amax > b.alpha_mx {
        violations.push(format!("half-angle {amax} above α_M = {}", b.alpha_mx));
    }
    if ell < b.ell_min {
        violations.push(format!("ℓ = {ell} below {}", b.ell_min));
    }
    AdmissibilityReport {
        ell,
        alpha_min: amin,
        alpha_max: amax,
        hyperplanes: planes,
        ok: violations.is_empty(),
        violations,
    }
}

// Random admissible shapes

/// Uniform random rotation from a normalized quaternion.
pub fn random_rotation3(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let q = loop {
        let q: [f64; 4] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let l = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if l > 0.1 && l <= 1.0 {
            break q.map(|x| x / l);
        }
    };
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Strictly convex polygon with 3 to 7 vertices on a rotated ellipse.
pub fn random_polygon(rng: &mut impl Rng, center: [f64; 2]) -> Result<Polytope> {
    let m = rng.gen_range(3..=7);
    let gaps: Vec<f64> = (0..m).map(|_| rng.gen_range(0.4..1.0)).collect();
    let total: f64 = gaps.iter().sum();
    let (a, b) = (rng.gen_range(0.3..0.8), rng.gen_range(0.3..0.8));
    let rot = rng.gen_range(0.0..2.0 * PI);
    let mut t = rng.gen_range(0.0..2.0 * PI);
    let mut v = Vec::with_capacity(m);
    for g in gaps {
        let (x, y) = (a * t.cos(), b * t.sin());
        v.push(vec![center[0] + rot.cos() * x - rot.sin() * y, center[1] + rot.sin() * x + rot.cos() * y]);
        t += 2.0 * PI * g / total;
    }
    Polytope::polygon(v)
}

/// Randomly rotated box with half-lengths in [0.2, 0.6].
pub fn random_cuboid(rng: &mut impl Rng, center: [f64; 3]) -> Result<Polytope> {
    let r = random_rotation3(rng);
    let half: Vec<f64> = (0..3).map(|_| rng.gen_range(0.2..0.6)).collect();
    let v = (0..8)
        .map(|code| {
            (0..3)
                .map(|i| {
                    center[i]
                        + (0..3)
                            .map(|j| {
                                let s = if code & (1 << j) != 0 { 1.0 } else { -1.0 };
                                s * half[j] * r[i][j]
                            })
                            .sum::<f64>()
                })
                .collect()
        })
        .collect();
    Polytope::cuboid(v)
}

/// Two random shapes with centres at most 0.5 apart per axis, ordered so
/// the Hausdorff distance is realized from a vertex of the first.
pub fn random_polytope_pair(dim: usize, rng: &mut impl Rng) -> Result<(Polytope, Polytope)> {
    let (p, q) = match dim {
        2 => {
            let c = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            (random_polygon(rng, [0.0, 0.0])?, random_polygon(rng, c)?)
        }
        3 => {
            let c = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            (random_cuboid(rng, [0.0; 3])?, random_cuboid(rng, c)?)
        }
        d => return invalid(format!("unsupported dimension {d}")),
    };
    if farthest_vertex(&p, &q)?.realizes_hausdorff {
        Ok((p, q))
    } else {
        Ok((q, p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Polytope {
        Polytope::rectangle(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn hull_keeps_every_extreme_point() {
        // Interior points first, extreme points in scrambled order; the
        // rightmost point used to be eaten by the upper chain.
        let ring: Vec<Vec<f64>> = (0..9).map(|j| {
            let t = 0.3 + 2.0 * PI * ((j * 4) % 9) as f64 / 9.0;
            vec![t.cos(), 0.6 * t.sin()]
        }).collect();
        let mut pts = vec![vec![0.1, 0.0], vec![-0.2, 0.1], vec![0.5, -0.1]];
        pts.extend(ring.iter().cloned());
        let hull = convex_hull_2d(&pts);
        assert_eq!(hull.len(), 9);
        for r in &ring {
            assert!(hull.iter().any(|h| norm(&sub(h, r)) < 1e-15));
        }
        assert!(Polytope::polygon(hull).is_ok());
    }

    #[test]
    fn rejects_clockwise_and_nonconvex() {
        assert!(Polytope::polygon(vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![1.0, 0.0]]).is_err());
        assert!(Polytope::polygon(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.2, 0.2], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn hausdorff_identity_and_translation() {
        let p = unit_square();
        assert_eq!(hausdorff_distance(&p, &p).unwrap(), 0.0);
        let q = p.translated(&[0.3, 0.0]).unwrap();
        assert!((hausdorff_distance(&p, &q).unwrap() - 0.3).abs() < 1e-14);
    }

    #[test]
    fn farthest_vertex_tie_break() {
        let p = unit_square();
        let q = p.translated(&[0.3, 0.0]).unwrap();
        let fv = farthest_vertex(&p, &q).unwrap();
        // (0,0) and (0,1) are tied at 0.3; index 0 wins.
        assert_eq!(fv.index, 0);
        assert!((fv.distance - 0.3).abs() < 1e-14);
        assert!(fv.realizes_hausdorff);
        let back = farthest_vertex(&q, &p).unwrap();
        assert_eq!(back.index, 1);
        assert_eq!(back.vertex, vec![1.3, 0.0]);
    }

    #[test]
    fn hull_cone_of_square_is_quarter_plane() {
        let p = unit_square();
        let k = convex_hull_cone(&p, &p, &[0.0, 0.0]).unwrap();
        assert!((k.opening_angle() - PI / 2.0).abs() < 1e-14);
        assert!(cone_membership(&k, &[0.0, 0.0]));
        assert!(cone_membership(&k, &[0.5, 0.5]));
        assert!(!cone_membership(&k, &[-0.5, -0.5]));
        assert!(convex_hull_cone(&p, &p, &[0.5, 0.0]).is_err());
    }

    #[test]
    fn qangle_distant_small_square() {
        let p = unit_square();
        let q = Polytope::rectangle(0.6, 0.6, 0.8, 0.8).unwrap();
        let r = check_qangle(&p, &q).unwrap();
        assert!((r.angle_bound - 3.0 * PI / 4.0).abs() < 1e-14);
        assert!(r.violations.is_empty());
        let same = check_qangle(&p, &p).unwrap();
        assert!(same.vertex_ok);
        assert!((same.angle_actual - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn triangulation_costs() {
        let tri = Polytope::polygon(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(triangulation_cost(&tri, 1.0).unwrap(), 1.0);
        assert_eq!(triangulation_cost(&unit_square(), 2.0).unwrap(), 16.0);
        let hex = Polytope::regular(6, [0.0, 0.0], 1.0, 0.0).unwrap();
        assert_eq!(triangulation_cost(&hex, 1.0).unwrap(), 4.0);
        assert!(triangulation_cost(&hex, 0.5).is_err());
    }

    #[test]
    fn spherical_membership() {
        let k = PolyCone::spherical(vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0], 0.3).unwrap();
        assert!(cone_membership(&k, &[0.0, 0.0, 0.0]));
        assert!(cone_membership(&k, &[0.0, 0.0, 2.0]));
        assert!(!cone_membership(&k, &[0.0, 0.0, -2.0]));
    }

    #[test]
    fn cuboid_validation_and_distance() {
        let b = Polytope::aabb([0.0; 3], [1.0, 2.0, 3.0]).unwrap();
        assert!((b.measure() - 6.0).abs() < 1e-14);
        assert!((b.distance(&[2.0, 1.0, 1.0]) - 1.0).abs() < 1e-14);
        let mut v = b.vertices().to_vec();
        v[7][2] += 0.1;
        assert!(Polytope::cuboid(v).is_err());
        let k = b.vertex_cone(0);
        assert!(cone_membership(&k, &[0.5, 0.5, 0.5]));
        assert!(!cone_membership(&k, &[-0.5, 0.5, 0.5]));
    }

    #[test]
    fn min_cap_of_orthant_corner() {
        let pts = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let (axis, a) = min_enclosing_cone(&[0.0; 3], &pts).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert!(axis.iter().all(|x| (x - s).abs() < 1e-12));
        assert!((a - s.acos()).abs() < 1e-12);
    }

    #[test]
    fn admissibility_report() {
        let r = admissibility(&unit_square(), &AprioriBounds { r: 2.0, ..Default::default() });
        assert!(r.ok);
        assert_eq!(r.ell, 1.0);
        assert!((r.alpha_min - PI / 4.0).abs() < 1e-14);
        assert_eq!(r.hyperplanes, 4);
        let bad = admissibility(&unit_square(), &AprioriBounds { r: 1.0, ..Default::default() });
        assert!(!bad.ok);
    }

    #[test]
    fn json_roundtrip() {
        let s = r#"{"dim": 2, "kind": "convex-polygon", "vertices": [[0,0],[1,0],[0,1]]}"#;
        let p: Polytope = serde_json::from_str(s).unwrap();
        let back: Polytope = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(p, back);
    }
}
