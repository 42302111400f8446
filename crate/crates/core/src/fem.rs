//! P1 Galerkin solver for `-Δu = 1` in Ω, `u = 0` on ∂Ω.
//!
//! The torsion function `u` is approximated on a constrained Delaunay mesh
//! and the torsional rigidity is its integral. All element integrals are
//! evaluated in closed form.

use std::collections::HashSet;

use spade::{
    AngleLimit, ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation,
};
use thiserror::Error;

use crate::geometry::{Domain, Point};

/// Default mesh size for reference targets, in box units.
pub const DEFAULT_H: f64 = 0.02;
/// Default relative residual for conjugate gradients.
pub const DEFAULT_TOL: f64 = 1e-10;

const MAX_SIZE_PASSES: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("mesh size must be positive, got {0}")]
    InvalidMeshSize(f64),
    #[error("meshing failed on loop {loop_index}: {reason}")]
    Meshing { loop_index: usize, reason: String },
    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("system has no free vertices")]
    EmptySystem,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, FemError>;

/// Geometric grading of the size field toward hole loops:
/// `h(x) = min(h, h_min + growth · dist(x, holes))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoleGrading {
    pub h_min: f64,
    pub growth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshOptions {
    /// Upper bound on triangle circumradius.
    pub h: f64,
    pub min_angle_deg: f64,
    pub hole_grading: Option<HoleGrading>,
}

impl MeshOptions {
    pub fn uniform(h: f64) -> Self {
        Self {
            h,
            min_angle_deg: 25.0,
            hole_grading: None,
        }
    }

    pub fn graded(h: f64, h_min: f64, growth: f64) -> Self {
        Self {
            h,
            min_angle_deg: 25.0,
            hole_grading: Some(HoleGrading { h_min, growth }),
        }
    }
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self::uniform(DEFAULT_H)
    }
}

/// Conforming triangulation of a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<bool>,
    pub h: f64,
}

fn tri_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x))
}

fn circumradius(a: Point, b: Point, c: Point) -> f64 {
    let la = ((b.x - c.x).powi(2) + (b.y - c.y).powi(2)).sqrt();
    let lb = ((a.x - c.x).powi(2) + (a.y - c.y).powi(2)).sqrt();
    let lc = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
    la * lb * lc / (4.0 * tri_area(a, b, c).abs())
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.x + t * dx - p.x, a.y + t * dy - p.y);
    (qx * qx + qy * qy).sqrt()
}

impl TriMesh {
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        tri_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.triangle_area(t))
            .sum()
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        Point::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
    }

    pub fn max_circumradius(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                circumradius(a, b, c)
            })
            .fold(0.0, f64::max)
    }

    pub fn boundary_count(&self) -> usize {
        self.boundary.iter().filter(|&&b| b).count()
    }

    /// Debug dump: `v x y`, `t i j k` and `b i` records.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            s.push_str(&format!("v {:.16e} {:.16e}\n", v.x, v.y));
        }
        for t in &self.triangles {
            s.push_str(&format!("t {} {} {}\n", t[0], t[1], t[2]));
        }
        for (i, &b) in self.boundary.iter().enumerate() {
            if b {
                s.push_str(&format!("b {i}\n"));
            }
        }
        s
    }
}

struct SizeField<'a> {
    h: f64,
    grading: Option<(HoleGrading, Vec<(Point, Point)>)>,
    _domain: &'a Domain,
}

impl<'a> SizeField<'a> {
    fn new(domain: &'a Domain, opts: &MeshOptions) -> Self {
        let grading = opts.hole_grading.map(|g| {
            let segs = domain
                .hole_loops()
                .flat_map(|l| l.segments())
                .collect::<Vec<_>>();
            (g, segs)
        });
        Self {
            h: opts.h,
            grading,
            _domain: domain,
        }
    }

    fn at(&self, p: Point) -> f64 {
        match &self.grading {
            Some((g, segs)) if !segs.is_empty() => {
                let d = segs
                    .iter()
                    .map(|&(a, b)| segment_distance(p, a, b))
                    .fold(f64::INFINITY, f64::min);
                self.h.min(g.h_min + g.growth * d)
            }
            _ => self.h,
        }
    }
}

type Cdt = ConstrainedDelaunayTriangulation<Point2<f64>>;

fn inner_faces(cdt: &Cdt, excluded: &HashSet<usize>) -> Vec<[Point; 3]> {
    cdt.inner_faces()
        .filter(|f| !excluded.contains(&f.fix().index()))
        .map(|f| f.positions().map(|p| Point::new(p.x, p.y)))
        .collect()
}

/// Constrained Delaunay triangulation of `domain`, refined until every
/// triangle has circumradius at most `h` and no angle below 25° except at
/// sharp input corners.
pub fn triangulate(domain: &Domain, h: f64) -> Result<TriMesh> {
    triangulate_with(domain, &MeshOptions::uniform(h))
}

pub fn triangulate_with(domain: &Domain, opts: &MeshOptions) -> Result<TriMesh> {
    if !(opts.h > 0.0 && opts.h.is_finite()) {
        return Err(FemError::InvalidMeshSize(opts.h));
    }
    if let Some(g) = opts.hole_grading {
        if !(g.h_min > 0.0 && g.growth > 0.0) {
            return Err(FemError::InvalidMeshSize(g.h_min));
        }
    }
    let mut points = Vec::with_capacity(domain.vertex_count());
    let mut edges = Vec::with_capacity(domain.vertex_count());
    for l in domain.loops() {
        let base = points.len();
        let n = l.len();
        points.extend(l.vertices().iter().map(|p| Point2::new(p.x, p.y)));
        edges.extend((0..n).map(|i| [base + i, base + (i + 1) % n]));
    }
    let mut cdt = Cdt::bulk_load_cdt(points, edges).map_err(|e| FemError::Meshing {
        loop_index: 0,
        reason: format!("{e:?}"),
    })?;

    let size = SizeField::new(domain, opts);
    let h_floor = opts.hole_grading.map_or(opts.h, |g| g.h_min.min(opts.h));
    // half the area of the equilateral triangle with circumradius h
    let max_area = 0.65 * opts.h * opts.h;
    let budget =
        (40.0 * domain.area() / (h_floor * h_floor)) as usize + 50 * domain.vertex_count() + 10_000;
    let params = || {
        RefinementParameters::<f64>::new()
            .with_angle_limit(AngleLimit::from_deg(opts.min_angle_deg))
            .with_max_allowed_area(max_area)
            .with_max_additional_vertices(budget)
            .exclude_outer_faces(true)
    };
    let mut result = cdt.refine(params());
    let boundary_segments: Vec<(Point, Point)> =
        domain.loops().iter().flat_map(|l| l.segments()).collect();

    for _ in 0..MAX_SIZE_PASSES {
        if !result.refinement_complete {
            break;
        }
        let excluded: HashSet<usize> = result.excluded_faces.iter().map(|f| f.index()).collect();
        let mut inserts = Vec::new();
        for [a, b, c] in inner_faces(&cdt, &excluded) {
            let centroid = Point::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0);
            let target = size.at(centroid);
            let r = circumradius(a, b, c);
            if r <= target * (1.0 + 1e-9) {
                continue;
            }
            let cc = circumcenter(a, b, c);
            let near_boundary = || {
                boundary_segments
                    .iter()
                    .any(|&(p, q)| segment_distance(cc, p, q) < 0.5 * target)
            };
            if domain.contains(cc) && !near_boundary() {
                inserts.push(cc);
            } else {
                inserts.push(centroid);
            }
        }
        if inserts.is_empty() {
            break;
        }
        for p in inserts {
            cdt.insert(Point2::new(p.x, p.y))
                .map_err(|e| FemError::Meshing {
                    loop_index: 0,
                    reason: format!("{e:?}"),
                })?;
        }
        result = cdt.refine(params());
    }
    if !result.refinement_complete {
        return Err(FemError::Meshing {
            loop_index: 0,
            reason: format!("refinement exceeded {budget} additional vertices"),
        });
    }

    let excluded: HashSet<usize> = result.excluded_faces.iter().map(|f| f.index()).collect();
    let mut remap = vec![usize::MAX; cdt.num_vertices()];
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for f in cdt.inner_faces() {
        if excluded.contains(&f.fix().index()) {
            continue;
        }
        let tri = f.vertices().map(|v| {
            let i = v.fix().index();
            if remap[i] == usize::MAX {
                remap[i] = vertices.len();
                let p = v.position();
                vertices.push(Point::new(p.x, p.y));
            }
            remap[i]
        });
        triangles.push(tri);
    }
    if triangles.is_empty() {
        return Err(FemError::Meshing {
            loop_index: 0,
            reason: "no interior triangles".into(),
        });
    }
    let mut boundary = vec![false; vertices.len()];
    for e in cdt.undirected_edges() {
        if e.is_constraint_edge() {
            for v in e.vertices() {
                let i = remap[v.fix().index()];
                if i != usize::MAX {
                    boundary[i] = true;
                }
            }
        }
    }
    for (t, tri) in triangles.iter().enumerate() {
        let [a, b, c] = tri.map(|i| vertices[i]);
        if tri_area(a, b, c) <= 0.0 {
            return Err(FemError::Meshing {
                loop_index: 0,
                reason: format!("triangle {t} has nonpositive area"),
            });
        }
    }
    Ok(TriMesh {
        vertices,
        triangles,
        boundary,
        h: opts.h,
    })
}

fn circumcenter(a: Point, b: Point, c: Point) -> Point {
    let d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
    let a2 = a.x * a.x + a.y * a.y;
    let b2 = b.x * b.x + b.y * b.y;
    let c2 = c.x * c.x + c.y * c.y;
    Point::new(
        (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d,
        (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d,
    )
}

/// Symmetric matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_offsets: Vec<usize>,
    pub col_indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from unsorted triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|a| (a.0, a.1));
        let mut row_offsets = vec![0; n + 1];
        let mut col_indices = Vec::with_capacity(triplets.len() / 2);
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len() / 2);
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        Self {
            n,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                s += self.values[k] * x[self.col_indices[k]];
            }
            *yi = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (self.get(j, i) - v).abs() <= tol))
    }
}

/// Exact P1 element stiffness `∫_K ∇φ_i·∇φ_j`.
pub fn element_stiffness(a: Point, b: Point, c: Point) -> [[f64; 3]; 3] {
    let area = tri_area(a, b, c);
    let bx = [b.y - c.y, c.y - a.y, a.y - b.y];
    let cx = [c.x - b.x, a.x - c.x, b.x - a.x];
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (bx[i] * bx[j] + cx[i] * cx[j]) / (4.0 * area);
        }
    }
    k
}

/// Full stiffness matrix over all mesh vertices, before Dirichlet elimination.
pub fn assemble_stiffness(mesh: &TriMesh) -> CsrMatrix {
    let mut trip = Vec::with_capacity(9 * mesh.triangles.len());
    for tri in &mesh.triangles {
        let [a, b, c] = tri.map(|i| mesh.vertices[i]);
        let k = element_stiffness(a, b, c);
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri[i], tri[j], k[i][j]));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.vertices.len(), trip)
}

/// Lumped load `f_i = Σ_K |K|/3` over all vertices.
pub fn assemble_load(mesh: &TriMesh) -> Vec<f64> {
    let mut f = vec![0.0; mesh.vertices.len()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let third = mesh.triangle_area(t) / 3.0;
        for &i in tri {
            f[i] += third;
        }
    }
    f
}

/// Reduced system on the free (interior) vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// `free_vertices[k]` is the mesh vertex of unknown `k`.
    pub free_vertices: Vec<usize>,
}

impl SparseSystem {
    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }
}

/// Assembles and eliminates the homogeneous Dirichlet rows and columns.
pub fn assemble(mesh: &TriMesh) -> SparseSystem {
    let mut index = vec![usize::MAX; mesh.vertices.len()];
    let mut free_vertices = Vec::new();
    for (v, &b) in mesh.boundary.iter().enumerate() {
        if !b {
            index[v] = free_vertices.len();
            free_vertices.push(v);
        }
    }
    let mut trip = Vec::with_capacity(9 * mesh.triangles.len());
    let mut rhs = vec![0.0; free_vertices.len()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let [a, b, c] = tri.map(|i| mesh.vertices[i]);
        let k = element_stiffness(a, b, c);
        let third = mesh.triangle_area(t) / 3.0;
        for i in 0..3 {
            let fi = index[tri[i]];
            if fi == usize::MAX {
                continue;
            }
            rhs[fi] += third;
            for j in 0..3 {
                let fj = index[tri[j]];
                if fj != usize::MAX {
                    trip.push((fi, fj, k[i][j]));
                }
            }
        }
    }
    SparseSystem {
        matrix: CsrMatrix::from_triplets(free_vertices.len(), trip),
        rhs,
        free_vertices,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub tol: f64,
    /// Defaults to `10 · n`.
    pub max_iterations: Option<usize>,
    pub jacobi: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iterations: None,
            jacobi: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final `‖b − Ax‖ / ‖b‖`.
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients for a symmetric positive definite matrix.
pub fn conjugate_gradient(a: &CsrMatrix, b: &[f64], opts: &CgOptions) -> Result<CgResult> {
    let n = a.n;
    if b.len() != n {
        return Err(FemError::Dimension(format!(
            "matrix is {n}x{n}, rhs has {}",
            b.len()
        )));
    }
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok(CgResult {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let inv_diag: Option<Vec<f64>> = opts
        .jacobi
        .then(|| a.diagonal().iter().map(|d| 1.0 / d).collect());
    let precond = |r: &[f64], z: &mut [f64]| match &inv_diag {
        Some(d) => z
            .iter_mut()
            .zip(r)
            .zip(d)
            .for_each(|((z, r), d)| *z = r * d),
        None => z.copy_from_slice(r),
    };
    let max_it = opts.max_iterations.unwrap_or(10 * n.max(1));
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = 1.0;
    for it in 0..max_it {
        a.mul_vec(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = dot(&r, &r).sqrt() / bnorm;
        if res <= opts.tol {
            // report the true residual, not the recursively updated one
            a.mul_vec(&x, &mut ap);
            let true_res = b
                .iter()
                .zip(&ap)
                .map(|(b, ax)| (b - ax).powi(2))
                .sum::<f64>()
                .sqrt()
                / bnorm;
            return Ok(CgResult {
                x,
                iterations: it + 1,
                residual: true_res,
            });
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(FemError::NotConverged {
        iterations: max_it,
        residual: res,
    })
}

/// Solves a reduced system, returning the free-vertex values.
pub fn solve(sys: &SparseSystem, tol: f64) -> Result<CgResult> {
    conjugate_gradient(
        &sys.matrix,
        &sys.rhs,
        &CgOptions {
            tol,
            ..Default::default()
        },
    )
}

/// Nodal torsion function on a mesh together with its integral.
#[derive(Debug, Clone, PartialEq)]
pub struct FemSolution {
    pub mesh: TriMesh,
    /// `u` at every mesh vertex, zero on the boundary.
    pub values: Vec<f64>,
    pub torsion: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// `∫u` for a P1 field, exact.
pub fn integrate(mesh: &TriMesh, values: &[f64]) -> f64 {
    mesh.triangles
        .iter()
        .enumerate()
        .map(|(t, tri)| {
            mesh.triangle_area(t) * (values[tri[0]] + values[tri[1]] + values[tri[2]]) / 3.0
        })
        .sum()
}

/// `∫|∇u|²` for a P1 field, exact.
pub fn dirichlet_energy(mesh: &TriMesh, values: &[f64]) -> f64 {
    let mut e = 0.0;
    for tri in &mesh.triangles {
        let [a, b, c] = tri.map(|i| mesh.vertices[i]);
        let k = element_stiffness(a, b, c);
        for i in 0..3 {
            for j in 0..3 {
                e += values[tri[i]] * k[i][j] * values[tri[j]];
            }
        }
    }
    e
}

impl FemSolution {
    pub fn from_parts(mesh: TriMesh, sys: &SparseSystem, cg: CgResult) -> Self {
        let mut values = vec![0.0; mesh.vertices.len()];
        for (k, &v) in sys.free_vertices.iter().enumerate() {
            values[v] = cg.x[k];
        }
        let torsion = integrate(&mesh, &values);
        Self {
            mesh,
            values,
            torsion,
            iterations: cg.iterations,
            residual: cg.residual,
        }
    }

    pub fn torsion(&self) -> f64 {
        self.torsion
    }

    pub fn energy(&self) -> f64 {
        dirichlet_energy(&self.mesh, &self.values)
    }

    /// `(∫u)² / ∫|∇u|²`, the variational quotient evaluated at `u_h`.
    pub fn rayleigh_quotient(&self) -> f64 {
        self.torsion * self.torsion / self.energy()
    }

    pub fn csv_header() -> &'static str {
        "domain_id,area,torsion,h,iterations,residual"
    }

    pub fn csv_row(&self, id: &str, area: f64) -> String {
        format!(
            "{id},{area},{},{},{},{:e}",
            self.torsion, self.mesh.h, self.iterations, self.residual
        )
    }
}

/// Mesh and solver settings for [`compute_torsion`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub mesh: MeshOptions,
    pub tol: f64,
    pub jacobi: bool,
}

impl SolveOptions {
    pub fn uniform(h: f64) -> Self {
        Self {
            mesh: MeshOptions::uniform(h),
            tol: DEFAULT_TOL,
            jacobi: false,
        }
    }
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self::uniform(DEFAULT_H)
    }
}

/// Triangulate, assemble, solve, integrate.
pub fn compute_torsion(domain: &Domain, opts: &SolveOptions) -> Result<FemSolution> {
    let mesh = triangulate_with(domain, &opts.mesh)?;
    let sys = assemble(&mesh);
    if sys.is_empty() {
        return Err(FemError::EmptySystem);
    }
    let cg = conjugate_gradient(
        &sys.matrix,
        &sys.rhs,
        &CgOptions {
            tol: opts.tol,
            max_iterations: None,
            jacobi: opts.jacobi,
        },
    )?;
    Ok(FemSolution::from_parts(mesh, &sys, cg))
}

/// Torsion at mesh size `h` with the default solver tolerance.
pub fn torsion_of(domain: &Domain, h: f64) -> Result<f64> {
    Ok(compute_torsion(domain, &SolveOptions::uniform(h))?.torsion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{self, annulus, disk, rectangle, Domain};
    use std::f64::consts::PI;

    fn unit_square() -> Domain {
        Domain::polygon(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ])
        .unwrap()
    }

    /// Dense Cholesky solve, used as an independent reference.
    fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut l = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                if i == j {
                    l[i][i] = (a[i][i] - s).sqrt();
                } else {
                    l[i][j] = (a[i][j] - s) / l[j][j];
                }
            }
        }
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
        }
        x
    }

    #[test]
    fn reference_element_stiffness() {
        let k = element_stiffness(
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        );
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn square_mesh_covers_area() {
        let m = triangulate(&unit_square(), 0.5).unwrap();
        assert!((m.total_area() - 1.0).abs() < 1e-9);
        assert!(m.max_circumradius() <= 0.5 * (1.0 + 1e-9));
        for t in 0..m.triangles.len() {
            assert!(m.triangle_area(t) > 0.0);
        }
    }

    #[test]
    fn disk_mesh_area() {
        let n = 256;
        let d = disk(1.0, Point::default(), n).unwrap();
        let m = triangulate(&d, 0.05).unwrap();
        let ngon = 0.5 * n as f64 * (2.0 * PI / n as f64).sin();
        assert!((m.total_area() - ngon).abs() < 1e-9);
        assert!((m.total_area() - PI).abs() / PI < 1e-3);
    }

    #[test]
    fn annulus_hole_is_empty() {
        let d = annulus(0.5, 1.0, 0.0, 256).unwrap();
        let m = triangulate(&d, 0.05).unwrap();
        for t in 0..m.triangles.len() {
            let c = m.centroid(t);
            assert!((c.x * c.x + c.y * c.y).sqrt() > 0.49);
        }
        assert!((m.total_area() - d.area()).abs() < 1e-9);
    }

    #[test]
    fn boundary_segments_are_mesh_edges() {
        let d = rectangle(1.0, 0.6).unwrap();
        let m = triangulate(&d, 0.1).unwrap();
        // every boundary vertex lies on the rectangle outline
        for (v, &b) in m.vertices.iter().zip(&m.boundary) {
            let on = (v.x.abs() - 0.5).abs() < 1e-12 || (v.y.abs() - 0.3).abs() < 1e-12;
            assert_eq!(b, on, "vertex {v:?}");
        }
    }

    #[test]
    fn stiffness_rows_sum_to_zero_and_load_sums_to_area() {
        let cfg = geometry::GenConfig {
            seed: 5,
            count: 5,
            ..Default::default()
        };
        for i in 0..cfg.count {
            let d = geometry::random_domain(&cfg, i).unwrap();
            let m = triangulate(&d, 0.1).unwrap();
            let k = assemble_stiffness(&m);
            assert!(k.is_symmetric(1e-14));
            for r in 0..k.n {
                let s: f64 = k.row(r).map(|(_, v)| v).sum();
                assert!(s.abs() < 1e-10, "row {r} sums to {s}");
            }
            let f: f64 = assemble_load(&m).iter().sum();
            assert!((f - d.area()).abs() < 1e-9);
        }
    }

    #[test]
    fn cg_identity_returns_rhs() {
        let a = CsrMatrix::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 4.0];
        let r = conjugate_gradient(&a, &b, &CgOptions::default()).unwrap();
        assert_eq!(r.x, b);
        assert!(r.residual <= DEFAULT_TOL);
    }

    #[test]
    fn cg_matches_dense_cholesky_on_chain() {
        for n in [1, 2, 7, 20, 50] {
            let mut trip = Vec::new();
            let mut dense = vec![vec![0.0; n]; n];
            for i in 0..n {
                trip.push((i, i, 2.0 + 0.01 * i as f64));
                dense[i][i] = 2.0 + 0.01 * i as f64;
                if i + 1 < n {
                    trip.push((i, i + 1, -1.0));
                    trip.push((i + 1, i, -1.0));
                    dense[i][i + 1] = -1.0;
                    dense[i + 1][i] = -1.0;
                }
            }
            let a = CsrMatrix::from_triplets(n, trip);
            let b: Vec<f64> = (0..n).map(|i| ((i * 7 % 5) as f64) - 1.5).collect();
            for jacobi in [false, true] {
                let r = conjugate_gradient(
                    &a,
                    &b,
                    &CgOptions {
                        tol: 1e-13,
                        jacobi,
                        ..Default::default()
                    },
                )
                .unwrap();
                let x = cholesky_solve(&dense, &b);
                for (u, v) in r.x.iter().zip(&x) {
                    assert!((u - v).abs() < 1e-8);
                }
                assert!(r.residual <= 1e-13 * 10.0);
            }
        }
    }

    #[test]
    fn cg_reports_non_convergence() {
        let n = 30;
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 2.0));
            if i + 1 < n {
                trip.push((i, i + 1, -1.0));
                trip.push((i + 1, i, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, trip);
        let b = vec![1.0; n];
        let r = conjugate_gradient(
            &a,
            &b,
            &CgOptions {
                tol: 1e-14,
                max_iterations: Some(3),
                jacobi: false,
            },
        );
        assert!(matches!(
            r,
            Err(FemError::NotConverged { iterations: 3, .. })
        ));
    }

    #[test]
    fn zero_field_integrates_to_zero() {
        let m = triangulate(&unit_square(), 0.2).unwrap();
        assert_eq!(integrate(&m, &vec![0.0; m.vertices.len()]), 0.0);
    }

    #[test]
    fn solution_vanishes_on_boundary_and_is_nonnegative() {
        let d = rectangle(1.0, 0.5).unwrap();
        let s = compute_torsion(&d, &SolveOptions::uniform(0.05)).unwrap();
        for (v, &b) in s.values.iter().zip(&s.mesh.boundary) {
            if b {
                assert_eq!(*v, 0.0);
            } else {
                assert!(*v >= 0.0);
            }
        }
        assert!((s.energy() - s.torsion).abs() < 1e-8 * s.torsion);
    }

    #[test]
    fn invalid_h() {
        assert!(matches!(
            triangulate(&unit_square(), 0.0),
            Err(FemError::InvalidMeshSize(_))
        ));
    }

    #[test]
    fn mesh_dump_format() {
        let m = triangulate(&unit_square(), 1.0).unwrap();
        let s = m.to_text();
        assert_eq!(
            s.lines().filter(|l| l.starts_with("v ")).count(),
            m.vertices.len()
        );
        assert_eq!(
            s.lines().filter(|l| l.starts_with("t ")).count(),
            m.triangles.len()
        );
        assert_eq!(
            s.lines().filter(|l| l.starts_with("b ")).count(),
            m.boundary_count()
        );
    }
}
