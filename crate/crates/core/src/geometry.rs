//! Planar domains as oriented polyline loops inside the reference box `[-2, 2]²`.
//!
//! A [`Domain`] is a list of closed, simple loops. Outer loops run
//! counterclockwise, hole loops clockwise. Every curve (including splines) is
//! discretized to a polyline at construction time, so downstream code only
//! ever sees straight segments.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Half side of the reference box `Q = [-BOX_HALF, BOX_HALF]²`.
pub const BOX_HALF: f64 = 2.0;

const BOX_EPS: f64 = 1e-12;

/// Polygons below this area are treated as degenerate draws.
const MIN_RANDOM_AREA: f64 = 1e-3;

/// Samples per Catmull-Rom segment.
const SPLINE_SAMPLES: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("loop {index} has {count} vertices, at least 3 are required")]
    TooFewVertices { index: usize, count: usize },
    #[error("loop {index} is self-intersecting")]
    SelfIntersecting { index: usize },
    #[error("loop {index} has zero area")]
    ZeroArea { index: usize },
    #[error("vertex ({x}, {y}) lies outside the reference box")]
    OutOfBox { x: f64, y: f64 },
    #[error("hole loop {index} is not strictly inside exactly one outer loop")]
    OrphanHole { index: usize },
    #[error("loops {a} and {b} intersect or are nested")]
    Overlap { a: usize, b: usize },
    #[error("domain has no outer loop")]
    NoOuterLoop,
    #[error("degenerate dimension: {0}")]
    Degenerate(String),
    #[error("annulus hole does not fit: |offset| + r_in = {reach} >= R_out = {outer}")]
    AnnulusGeometry { reach: f64, outer: f64 },
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("domain index {index} out of range for count {count}")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn dist2(self, o: Point) -> f64 {
        let d = self.sub(o);
        d.x * d.x + d.y * d.y
    }

    fn in_box(self) -> bool {
        self.x.abs() <= BOX_HALF + BOX_EPS && self.y.abs() <= BOX_HALF + BOX_EPS
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Point::new(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoopKind {
    Outer,
    Hole,
}

impl fmt::Display for LoopKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoopKind::Outer => "outer",
            LoopKind::Hole => "hole",
        })
    }
}

/// How a loop was produced. Both kinds are stored as polylines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CurveKind {
    Polyline,
    Spline,
}

/// Twice the signed area of triangle `(a, b, c)`; positive when counterclockwise.
pub(crate) fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, touching and collinear overlap included.
pub(crate) fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    if p1.x.max(p2.x) < q1.x.min(q2.x)
        || q1.x.max(q2.x) < p1.x.min(p2.x)
        || p1.y.max(p2.y) < q1.y.min(q2.y)
        || q1.y.max(q2.y) < p1.y.min(p2.y)
    {
        return false;
    }
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

pub(crate) fn signed_area(pts: &[Point]) -> f64 {
    let n = pts.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    0.5 * s
}

/// Returns the first pair of non-adjacent intersecting segments, if any.
/// Segment `i` joins vertex `i` to vertex `i + 1`.
fn first_self_intersection(pts: &[Point]) -> Option<(usize, usize)> {
    let n = pts.len();
    for i in 0..n {
        let a1 = pts[i];
        let a2 = pts[(i + 1) % n];
        for j in (i + 1)..n {
            // adjacent segments share an endpoint
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(a1, a2, pts[j], pts[(j + 1) % n]) {
                return Some((i, j));
            }
        }
    }
    // Adjacent segments that fold back onto each other.
    for i in 0..n {
        let a = pts[(i + n - 1) % n];
        let b = pts[i];
        let c = pts[(i + 1) % n];
        if b == c || a == b {
            return Some(((i + n - 1) % n, i));
        }
        if orient(a, b, c) == 0.0 {
            let ab = b.sub(a);
            let bc = c.sub(b);
            if ab.x * bc.x + ab.y * bc.y < 0.0 {
                return Some(((i + n - 1) % n, i));
            }
        }
    }
    None
}

pub fn is_simple(pts: &[Point]) -> bool {
    pts.len() >= 3 && first_self_intersection(pts).is_none()
}

/// Even-odd crossing test against one closed polyline.
fn crossings(pts: &[Point], p: Point) -> bool {
    let n = pts.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = pts[i];
        let b = pts[j];
        if (a.y > p.y) != (b.y > p.y) {
            let xc = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < xc {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Equality compares geometry and orientation; `curve` is provenance only.
#[derive(Debug, Clone)]
pub struct BoundaryLoop {
    vertices: Vec<Point>,
    kind: LoopKind,
    curve: CurveKind,
}

impl BoundaryLoop {
    /// Builds a loop, reorienting the vertices to match `kind`.
    pub fn new(mut vertices: Vec<Point>, kind: LoopKind, curve: CurveKind) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices {
                index: 0,
                count: vertices.len(),
            });
        }
        let a = signed_area(&vertices);
        if a == 0.0 || !a.is_finite() {
            return Err(GeometryError::ZeroArea { index: 0 });
        }
        if !is_simple(&vertices) {
            return Err(GeometryError::SelfIntersecting { index: 0 });
        }
        let want_ccw = kind == LoopKind::Outer;
        if (a > 0.0) != want_ccw {
            vertices.reverse();
        }
        Ok(Self {
            vertices,
            kind,
            curve,
        })
    }

    pub fn outer(vertices: Vec<Point>) -> Result<Self> {
        Self::new(vertices, LoopKind::Outer, CurveKind::Polyline)
    }

    pub fn hole(vertices: Vec<Point>) -> Result<Self> {
        Self::new(vertices, LoopKind::Hole, CurveKind::Polyline)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn kind(&self) -> LoopKind {
        self.kind
    }

    pub fn curve(&self) -> CurveKind {
        self.curve
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Signed shoelace area: positive for outer loops, negative for holes.
    pub fn signed_area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn perimeter(&self) -> f64 {
        self.segments().map(|(a, b)| a.dist2(b).sqrt()).sum()
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Point strictly enclosed by the loop (even-odd rule).
    pub fn encloses(&self, p: Point) -> bool {
        crossings(&self.vertices, p)
    }

    fn bbox(&self) -> (Point, Point) {
        bbox_of(&self.vertices)
    }

    fn intersects(&self, other: &BoundaryLoop) -> bool {
        let (amin, amax) = self.bbox();
        let (bmin, bmax) = other.bbox();
        if amax.x < bmin.x || bmax.x < amin.x || amax.y < bmin.y || bmax.y < amin.y {
            return false;
        }
        for (p1, p2) in self.segments() {
            if p1.x.max(p2.x) < bmin.x
                || p1.x.min(p2.x) > bmax.x
                || p1.y.max(p2.y) < bmin.y
                || p1.y.min(p2.y) > bmax.y
            {
                continue;
            }
            for (q1, q2) in other.segments() {
                if segments_intersect(p1, p2, q1, q2) {
                    return true;
                }
            }
        }
        false
    }

    fn map(&self, f: impl Fn(Point) -> Point) -> BoundaryLoop {
        BoundaryLoop {
            vertices: self.vertices.iter().map(|&p| f(p)).collect(),
            kind: self.kind,
            curve: self.curve,
        }
    }
}

impl PartialEq for BoundaryLoop {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.vertices == other.vertices
    }
}

fn bbox_of(pts: &[Point]) -> (Point, Point) {
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in pts {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

/// A bounded open set in the reference box, possibly with holes and several
/// connected components.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    loops: Vec<BoundaryLoop>,
}

impl Domain {
    pub fn new(loops: Vec<BoundaryLoop>) -> Result<Self> {
        for (i, l) in loops.iter().enumerate() {
            if let Some(p) = l.vertices.iter().find(|p| !p.in_box()) {
                return Err(GeometryError::OutOfBox { x: p.x, y: p.y });
            }
            if l.len() < 3 {
                return Err(GeometryError::TooFewVertices {
                    index: i,
                    count: l.len(),
                });
            }
        }
        let outers: Vec<usize> = (0..loops.len())
            .filter(|&i| loops[i].kind == LoopKind::Outer)
            .collect();
        if outers.is_empty() {
            return Err(GeometryError::NoOuterLoop);
        }
        for (k, &a) in outers.iter().enumerate() {
            for &b in &outers[k + 1..] {
                if loops[a].intersects(&loops[b])
                    || loops[a].encloses(loops[b].vertices[0])
                    || loops[b].encloses(loops[a].vertices[0])
                {
                    return Err(GeometryError::Overlap { a, b });
                }
            }
        }
        let holes: Vec<usize> = (0..loops.len())
            .filter(|&i| loops[i].kind == LoopKind::Hole)
            .collect();
        for &h in &holes {
            let owners = outers
                .iter()
                .filter(|&&o| loops[o].encloses(loops[h].vertices[0]))
                .count();
            if owners != 1 {
                return Err(GeometryError::OrphanHole { index: h });
            }
            for (o, l) in loops.iter().enumerate() {
                if o != h && l.intersects(&loops[h]) {
                    return Err(GeometryError::Overlap {
                        a: o.min(h),
                        b: o.max(h),
                    });
                }
            }
            for &g in &holes {
                if g != h && loops[g].encloses(loops[h].vertices[0]) {
                    return Err(GeometryError::Overlap {
                        a: g.min(h),
                        b: g.max(h),
                    });
                }
            }
        }
        Ok(Self { loops })
    }

    /// One outer loop, no holes.
    pub fn polygon(vertices: Vec<Point>) -> Result<Self> {
        Self::new(vec![BoundaryLoop::outer(vertices)?])
    }

    pub fn loops(&self) -> &[BoundaryLoop] {
        &self.loops
    }

    pub fn outer_loops(&self) -> impl Iterator<Item = &BoundaryLoop> {
        self.loops.iter().filter(|l| l.kind == LoopKind::Outer)
    }

    pub fn hole_loops(&self) -> impl Iterator<Item = &BoundaryLoop> {
        self.loops.iter().filter(|l| l.kind == LoopKind::Hole)
    }

    pub fn vertex_count(&self) -> usize {
        self.loops.iter().map(BoundaryLoop::len).sum()
    }

    /// Outer areas minus hole areas.
    pub fn area(&self) -> f64 {
        // holes are clockwise, so the signed sum already subtracts them
        self.loops.iter().map(BoundaryLoop::signed_area).sum()
    }

    pub fn perimeter(&self) -> f64 {
        self.loops.iter().map(BoundaryLoop::perimeter).sum()
    }

    /// Area centroid.
    pub fn centroid(&self) -> Point {
        let (mut cx, mut cy, mut a) = (0.0, 0.0, 0.0);
        for l in &self.loops {
            for (p, q) in l.segments() {
                let c = p.x * q.y - q.x * p.y;
                cx += (p.x + q.x) * c;
                cy += (p.y + q.y) * c;
                a += c;
            }
        }
        let a = 0.5 * a;
        Point::new(cx / (6.0 * a), cy / (6.0 * a))
    }

    /// Even-odd membership over all loops.
    pub fn contains(&self, p: Point) -> bool {
        self.loops
            .iter()
            .fold(false, |acc, l| acc ^ crossings(&l.vertices, p))
    }

    pub fn bbox(&self) -> (Point, Point) {
        let (mut lo, mut hi) = self.loops[0].bbox();
        for l in &self.loops[1..] {
            let (a, b) = l.bbox();
            lo = Point::new(lo.x.min(a.x), lo.y.min(a.y));
            hi = Point::new(hi.x.max(b.x), hi.y.max(b.y));
        }
        (lo, hi)
    }

    fn map_checked(&self, f: impl Fn(Point) -> Point) -> Result<Self> {
        let loops: Vec<BoundaryLoop> = self.loops.iter().map(|l| l.map(&f)).collect();
        for l in &loops {
            if let Some(p) = l.vertices.iter().find(|p| !p.in_box()) {
                return Err(GeometryError::OutOfBox { x: p.x, y: p.y });
            }
        }
        Ok(Self { loops })
    }

    /// Rotates every vertex by `angle` about the origin, then translates by `shift`.
    pub fn transform(&self, angle: f64, shift: (f64, f64)) -> Result<Self> {
        let (s, c) = angle.sin_cos();
        self.map_checked(|p| Point::new(c * p.x - s * p.y + shift.0, s * p.x + c * p.y + shift.1))
    }

    /// Dilation by `t` about the area centroid.
    pub fn scale(&self, t: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(GeometryError::Degenerate(format!("scale factor {t}")));
        }
        let c = self.centroid();
        self.map_checked(|p| Point::new(c.x + t * (p.x - c.x), c.y + t * (p.y - c.y)))
    }

    /// Union of two domains with disjoint closures.
    pub fn union_disjoint(&self, other: &Domain) -> Result<Self> {
        let na = self.loops.len();
        for (i, a) in self.loops.iter().enumerate() {
            for (j, b) in other.loops.iter().enumerate() {
                if a.intersects(b) {
                    return Err(GeometryError::Overlap { a: i, b: na + j });
                }
            }
        }
        for (i, a) in self.outer_loops().enumerate() {
            for (j, b) in other.outer_loops().enumerate() {
                if a.encloses(b.vertices[0]) || b.encloses(a.vertices[0]) {
                    return Err(GeometryError::Overlap { a: i, b: na + j });
                }
            }
        }
        let mut loops = self.loops.clone();
        loops.extend(other.loops.iter().cloned());
        Ok(Self { loops })
    }

    /// Plain-text form: per loop a `loop <n> <outer|hole>` header then `x y` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for l in &self.loops {
            s.push_str(&format!("loop {} {}\n", l.len(), l.kind));
            for p in &l.vertices {
                s.push_str(&format!("{:.16e} {:.16e}\n", p.x, p.y));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut loops = Vec::new();
        while let Some((ln, header)) = lines.next() {
            let parse_err = |message: &str| GeometryError::Parse {
                line: ln,
                message: message.into(),
            };
            let mut parts = header.split_whitespace();
            if parts.next() != Some("loop") {
                return Err(parse_err("expected `loop <n> <outer|hole>`"));
            }
            let n: usize = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| parse_err("bad vertex count"))?;
            let kind = match parts.next() {
                Some("outer") => LoopKind::Outer,
                Some("hole") => LoopKind::Hole,
                _ => return Err(parse_err("loop kind must be outer or hole")),
            };
            let mut pts = Vec::with_capacity(n);
            for _ in 0..n {
                let (vl, line) = lines.next().ok_or(GeometryError::Parse {
                    line: ln,
                    message: "truncated loop".into(),
                })?;
                let mut it = line.split_whitespace().map(str::parse::<f64>);
                match (it.next(), it.next(), it.next()) {
                    (Some(Ok(x)), Some(Ok(y)), None) if x.is_finite() && y.is_finite() => {
                        pts.push(Point::new(x, y))
                    }
                    _ => {
                        return Err(GeometryError::Parse {
                            line: vl,
                            message: "expected `x y`".into(),
                        })
                    }
                }
            }
            let idx = loops.len();
            let l = BoundaryLoop::new(pts, kind, CurveKind::Polyline).map_err(|e| match e {
                GeometryError::TooFewVertices { count, .. } => {
                    GeometryError::TooFewVertices { index: idx, count }
                }
                GeometryError::SelfIntersecting { .. } => {
                    GeometryError::SelfIntersecting { index: idx }
                }
                GeometryError::ZeroArea { .. } => GeometryError::ZeroArea { index: idx },
                other => other,
            })?;
            loops.push(l);
        }
        Domain::new(loops)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(GeometryError::Degenerate(format!("{name} = {v}")))
    }
}

fn circle_points(center: Point, a: f64, b: f64, n: usize) -> Vec<Point> {
    (0..n)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / n as f64;
            Point::new(center.x + a * t.cos(), center.y + b * t.sin())
        })
        .collect()
}

/// Inscribed `n`-gon approximation of the disk of radius `radius`.
pub fn disk(radius: f64, center: Point, n: usize) -> Result<Domain> {
    positive("radius", radius)?;
    if n < 3 {
        return Err(GeometryError::Degenerate(format!("{n} boundary segments")));
    }
    Domain::polygon(circle_points(center, radius, radius, n))
}

/// Ellipse with semi-axes `a` (along x) and `b` (along y), centered at the origin.
pub fn ellipse(a: f64, b: f64, n: usize) -> Result<Domain> {
    positive("a", a)?;
    positive("b", b)?;
    if n < 3 {
        return Err(GeometryError::Degenerate(format!("{n} boundary segments")));
    }
    Domain::polygon(circle_points(Point::default(), a, b, n))
}

/// Ring between the origin-centered circle of radius `r_out` and a hole of
/// radius `r_in` centered at `(offset, 0)`.
pub fn annulus(r_in: f64, r_out: f64, offset: f64, n: usize) -> Result<Domain> {
    positive("r_in", r_in)?;
    positive("r_out", r_out)?;
    if n < 3 {
        return Err(GeometryError::Degenerate(format!("{n} boundary segments")));
    }
    let reach = offset.abs() + r_in;
    if reach >= r_out {
        return Err(GeometryError::AnnulusGeometry {
            reach,
            outer: r_out,
        });
    }
    let outer = BoundaryLoop::outer(circle_points(Point::default(), r_out, r_out, n))?;
    let hole = BoundaryLoop::hole(circle_points(Point::new(offset, 0.0), r_in, r_in, n))?;
    Domain::new(vec![outer, hole])
}

/// Regular `k`-gon centered at the origin with one vertex on the positive y axis.
pub fn regular_polygon(k: usize, circumradius: f64) -> Result<Domain> {
    positive("circumradius", circumradius)?;
    if k < 3 {
        return Err(GeometryError::Degenerate(format!("{k} sides")));
    }
    let pts = (0..k)
        .map(|i| {
            let t = PI / 2.0 + 2.0 * PI * i as f64 / k as f64;
            Point::new(circumradius * t.cos(), circumradius * t.sin())
        })
        .collect();
    Domain::polygon(pts)
}

/// Axis-aligned `w × h` rectangle centered at the origin.
pub fn rectangle(w: f64, h: f64) -> Result<Domain> {
    positive("width", w)?;
    positive("height", h)?;
    let (x, y) = (w / 2.0, h / 2.0);
    Domain::polygon(vec![
        Point::new(-x, -y),
        Point::new(x, -y),
        Point::new(x, y),
        Point::new(-x, y),
    ])
}

/// Random-domain generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub min_vertices: usize,
    pub max_vertices: usize,
    pub spline_probability: f64,
    pub seed: u64,
    pub count: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            min_vertices: 3,
            max_vertices: 20,
            spline_probability: 0.5,
            seed: 0,
            count: 500,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_vertices < 3 || self.max_vertices > 20 || self.min_vertices > self.max_vertices
        {
            return Err(GeometryError::InvalidConfig(format!(
                "vertex range [{}, {}] must lie within [3, 20]",
                self.min_vertices, self.max_vertices
            )));
        }
        if !(0.0..=1.0).contains(&self.spline_probability) {
            return Err(GeometryError::InvalidConfig(format!(
                "spline probability {} not in [0, 1]",
                self.spline_probability
            )));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the substream identified by `keys` under `master`.
pub fn substream_seed(master: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix64(master), |acc, &k| {
        splitmix64(acc ^ splitmix64(k))
    })
}

pub(crate) fn substream(master: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(master, keys))
}

/// Convex hull, counterclockwise, collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Orders points by angle about their centroid, then drops vertices until the
/// polygon is simple.
fn star_polygon(points: &[Point]) -> Vec<Point> {
    let n = points.len() as f64;
    let c = Point::new(
        points.iter().map(|p| p.x).sum::<f64>() / n,
        points.iter().map(|p| p.y).sum::<f64>() / n,
    );
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| {
        let ta = (a.y - c.y).atan2(a.x - c.x);
        let tb = (b.y - c.y).atan2(b.x - c.x);
        ta.total_cmp(&tb).then(c.dist2(*a).total_cmp(&c.dist2(*b)))
    });
    pts.dedup();
    while pts.len() >= 3 {
        match first_self_intersection(&pts) {
            Some((i, _)) => {
                let drop = (i + 1) % pts.len();
                pts.remove(drop);
            }
            None => break,
        }
    }
    pts
}

/// Closed uniform Catmull-Rom curve through `ctrl`, `per_segment` samples per span.
pub fn catmull_rom_closed(ctrl: &[Point], per_segment: usize) -> Vec<Point> {
    let n = ctrl.len();
    let mut out = Vec::with_capacity(n * per_segment);
    for i in 0..n {
        let p0 = ctrl[(i + n - 1) % n];
        let p1 = ctrl[i];
        let p2 = ctrl[(i + 1) % n];
        let p3 = ctrl[(i + 2) % n];
        for k in 0..per_segment {
            let t = k as f64 / per_segment as f64;
            let (t2, t3) = (t * t, t * t * t);
            let eval = |a: f64, b: f64, c: f64, d: f64| {
                0.5 * (2.0 * b
                    + (-a + c) * t
                    + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2
                    + (-a + 3.0 * b - 3.0 * c + d) * t3)
            };
            out.push(Point::new(
                eval(p0.x, p1.x, p2.x, p3.x),
                eval(p0.y, p1.y, p2.y, p3.y),
            ));
        }
    }
    out
}

fn uniform_box_point(rng: &mut impl Rng) -> Point {
    Point::new(
        rng.gen_range(-BOX_HALF..=BOX_HALF),
        rng.gen_range(-BOX_HALF..=BOX_HALF),
    )
}

/// Draws one polygon attempt; `None` when the draw degenerates.
fn draw_polygon(rng: &mut impl Rng, cfg: &GenConfig) -> Option<Vec<Point>> {
    let r = rng.gen_range(cfg.min_vertices..=cfg.max_vertices);
    let pts: Vec<Point> = (0..r).map(|_| uniform_box_point(rng)).collect();
    let poly = if r <= 5 {
        convex_hull(&pts)
    } else {
        star_polygon(&pts)
    };
    if poly.len() < 3 || signed_area(&poly).abs() < MIN_RANDOM_AREA || !is_simple(&poly) {
        return None;
    }
    Some(poly)
}

/// Random simple one-loop domain; a pure function of `(cfg.seed, index)`.
pub fn random_domain(cfg: &GenConfig, index: usize) -> Result<Domain> {
    random_domain_variant(cfg, index, 0)
}

/// Like [`random_domain`] but drawn from the `variant`-th alternative stream,
/// used when a caller rejects a domain and needs a replacement.
pub fn random_domain_variant(cfg: &GenConfig, index: usize, variant: u64) -> Result<Domain> {
    cfg.validate()?;
    if index >= cfg.count {
        return Err(GeometryError::IndexOutOfRange {
            index,
            count: cfg.count,
        });
    }
    for attempt in 0u64.. {
        let mut rng = substream(cfg.seed, &[index as u64, variant, attempt]);
        let Some(poly) = draw_polygon(&mut rng, cfg) else {
            continue;
        };
        let use_spline = rng.gen_bool(cfg.spline_probability);
        if use_spline {
            let curve = catmull_rom_closed(&poly, SPLINE_SAMPLES);
            if curve.iter().all(|p| p.in_box()) && is_simple(&curve) {
                if let Ok(l) = BoundaryLoop::new(curve, LoopKind::Outer, CurveKind::Spline) {
                    return Domain::new(vec![l]);
                }
            }
        }
        return Domain::polygon(poly);
    }
    unreachable!()
}

/// Random simple pentagon with exactly five vertices, drawn in the box.
pub fn random_pentagon(seed: u64, index: usize) -> Domain {
    for attempt in 0u64.. {
        let mut rng = substream(seed, &[0x5e47a, index as u64, attempt]);
        let pts: Vec<Point> = (0..5).map(|_| uniform_box_point(&mut rng)).collect();
        let poly = star_polygon(&pts);
        if poly.len() == 5 && signed_area(&poly).abs() >= MIN_RANDOM_AREA {
            if let Ok(d) = Domain::polygon(poly) {
                return d;
            }
        }
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Domain {
        Domain::polygon(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ])
        .unwrap()
    }

    fn brute_force_simple(pts: &[Point]) -> bool {
        let n = pts.len();
        for i in 0..n {
            for j in 0..n {
                let adjacent = i == j || (i + 1) % n == j || (j + 1) % n == i;
                if !adjacent
                    && segments_intersect(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n])
                {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn square_area() {
        assert_eq!(unit_square().area(), 1.0);
    }

    #[test]
    fn annulus_area_is_ring_area() {
        let d = annulus(0.5, 1.0, 0.0, 4096).unwrap();
        let exact = PI * 0.75;
        assert!((d.area() - exact).abs() / exact < 1e-5);
        assert!(d.hole_loops().next().unwrap().signed_area() < 0.0);
    }

    #[test]
    fn disk_area_matches_ngon_formula() {
        let n = 512;
        let d = disk(1.0, Point::default(), n).unwrap();
        let ngon = 0.5 * n as f64 * (2.0 * PI / n as f64).sin();
        assert!((d.area() - ngon).abs() < 1e-12);
        assert!((d.area() - PI).abs() / PI < 1e-4);
    }

    #[test]
    fn scale_quadruples_area() {
        let d = ellipse(0.6, 0.3, 64).unwrap();
        let s = d.scale(2.0).unwrap();
        assert!((s.area() - 4.0 * d.area()).abs() < 1e-12 * s.area());
        let same = d.scale(1.0).unwrap();
        for (a, b) in same.loops()[0]
            .vertices()
            .iter()
            .zip(d.loops()[0].vertices())
        {
            assert!((a.x - b.x).abs() < 1e-15 && (a.y - b.y).abs() < 1e-15);
        }
    }

    #[test]
    fn scale_disk_half_to_one() {
        let d = disk(0.5, Point::default(), 64).unwrap();
        let s = d.scale(2.0).unwrap();
        let unit = disk(1.0, Point::default(), 64).unwrap();
        for (a, b) in s.loops()[0]
            .vertices()
            .iter()
            .zip(unit.loops()[0].vertices())
        {
            assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_transform() {
        let d = unit_square();
        assert_eq!(d.transform(0.0, (0.0, 0.0)).unwrap(), d);
    }

    #[test]
    fn quarter_turn_maps_centered_square_onto_itself() {
        let d = rectangle(1.0, 1.0).unwrap();
        let r = d.transform(PI / 2.0, (0.0, 0.0)).unwrap();
        for p in r.loops()[0].vertices() {
            assert!(d.loops()[0]
                .vertices()
                .iter()
                .any(|q| (p.x - q.x).abs() < 1e-15 && (p.y - q.y).abs() < 1e-15));
        }
    }

    #[test]
    fn transform_out_of_box() {
        let d = unit_square();
        assert!(matches!(
            d.transform(0.0, (1.5, 0.0)),
            Err(GeometryError::OutOfBox { .. })
        ));
    }

    #[test]
    fn regular_square_area() {
        let d = regular_polygon(4, 1.0).unwrap();
        assert!((d.area() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn annulus_hole_must_fit() {
        assert!(matches!(
            annulus(0.5, 1.0, 0.6, 64),
            Err(GeometryError::AnnulusGeometry { .. })
        ));
        assert!(disk(0.0, Point::default(), 16).is_err());
    }

    #[test]
    fn union_of_disjoint_ellipses() {
        let a = ellipse(0.5, 0.3, 64)
            .unwrap()
            .transform(0.0, (-1.0, 0.0))
            .unwrap();
        let b = ellipse(0.5, 0.3, 64)
            .unwrap()
            .transform(0.0, (1.0, 0.0))
            .unwrap();
        let u = a.union_disjoint(&b).unwrap();
        assert_eq!(u.outer_loops().count(), 2);
        assert!((u.area() - a.area() - b.area()).abs() < 1e-14);
    }

    #[test]
    fn touching_squares_overlap() {
        let a = unit_square();
        let b = a.transform(0.0, (1.0, 0.0)).unwrap();
        assert!(matches!(
            a.union_disjoint(&b),
            Err(GeometryError::Overlap { .. })
        ));
        let inner = rectangle(0.2, 0.2)
            .unwrap()
            .transform(0.0, (0.5, 0.5))
            .unwrap();
        assert!(a.union_disjoint(&inner).is_err());
    }

    #[test]
    fn self_intersecting_loop_rejected() {
        let bowtie = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ];
        assert!(Domain::polygon(bowtie).is_err());
    }

    #[test]
    fn triangle_config_gives_triangles() {
        let cfg = GenConfig {
            min_vertices: 3,
            max_vertices: 3,
            spline_probability: 0.0,
            seed: 3,
            count: 20,
        };
        for i in 0..cfg.count {
            let d = random_domain(&cfg, i).unwrap();
            assert_eq!(d.vertex_count(), 3);
            assert!(d.area() > 0.0);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = GenConfig {
            seed: 42,
            count: 10,
            ..Default::default()
        };
        for i in 0..cfg.count {
            assert_eq!(
                random_domain(&cfg, i).unwrap(),
                random_domain(&cfg, i).unwrap()
            );
        }
        assert!(random_domain(&cfg, 10).is_err());
    }

    #[test]
    fn thousand_draws_are_simple_and_in_box() {
        let cfg = GenConfig {
            seed: 7,
            count: 1000,
            ..Default::default()
        };
        let mut splines = 0;
        for i in 0..cfg.count {
            let d = random_domain(&cfg, i).unwrap();
            let l = &d.loops()[0];
            if l.curve() == CurveKind::Spline {
                splines += 1;
            }
            assert!(l
                .vertices()
                .iter()
                .all(|p| p.x.abs() <= 2.0 && p.y.abs() <= 2.0));
            if l.len() <= 64 {
                assert!(brute_force_simple(l.vertices()), "domain {i} not simple");
            }
            assert!(is_simple(l.vertices()));
            assert!(d.area() > 0.0);
        }
        assert!(splines > 0 && splines < 1000);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = GenConfig {
            min_vertices: 2,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = GenConfig {
            max_vertices: 21,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = GenConfig {
            spline_probability: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn text_round_trip() {
        let d = annulus(0.3, 1.2, 0.2, 37).unwrap();
        let back = Domain::from_text(&d.to_text()).unwrap();
        assert_eq!(back, d);
        assert!(Domain::from_text("loop 3 outer\n0 0\n1 0\n").is_err());
        assert!(Domain::from_text("garbage").is_err());
    }

    #[test]
    fn pentagons_have_five_vertices() {
        for i in 0..50 {
            let p = random_pentagon(1, i);
            assert_eq!(p.vertex_count(), 5);
        }
    }

    #[test]
    fn contains_respects_holes() {
        let d = annulus(0.5, 1.0, 0.0, 64).unwrap();
        assert!(!d.contains(Point::new(0.0, 0.0)));
        assert!(d.contains(Point::new(0.75, 0.0)));
        assert!(!d.contains(Point::new(1.5, 0.0)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rototranslation_preserves_area(idx in 0usize..200, angle in 0.0..(2.0 * PI), sx in -0.3f64..0.3, sy in -0.3f64..0.3) {
                let cfg = GenConfig { seed: 11, count: 200, ..Default::default() };
                let d = random_domain(&cfg, idx).unwrap().scale(0.25).unwrap();
                let c = d.centroid();
                let moved = d.transform(0.0, (-c.x, -c.y)).unwrap();
                let t = moved.transform(angle, (sx, sy)).unwrap();
                prop_assert!((t.area() - d.area()).abs() < 1e-12);
            }

            #[test]
            fn scaling_is_quadratic(idx in 0usize..200, t in 0.2f64..1.0) {
                let cfg = GenConfig { seed: 12, count: 200, ..Default::default() };
                let d = random_domain(&cfg, idx).unwrap();
                let s = d.scale(t).unwrap();
                prop_assert!((s.area() - t * t * d.area()).abs() <= 1e-12 * d.area());
            }
        }
    }
}
