//! Bowyer–Watson Delaunay triangulation and polygon meshing.

use std::collections::{HashMap, HashSet};

use crate::error::{DgnnError, Result};

use super::triangle_mesh::signed_area;
use super::{Mesh2D, Point2};

/// Target mean element area as a multiple of `s_min`.
pub const MEAN_AREA_FACTOR: f64 = 1.25;
/// Refinement splits any triangle larger than this multiple of `s_min`.
pub const MAX_AREA_FACTOR: f64 = 2.5;
/// Refinement also splits triangles with a smaller interior angle.
pub const MIN_ANGLE_DEGREES: f64 = 20.0;

#[derive(Debug, Clone, Copy)]
struct Tri {
    v: [usize; 3],
    center: Point2,
    radius2: f64,
}

fn circumcircle(a: Point2, b: Point2, c: Point2) -> (Point2, f64) {
    let d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]));
    let a2 = a[0] * a[0] + a[1] * a[1];
    let b2 = b[0] * b[0] + b[1] * b[1];
    let c2 = c[0] * c[0] + c[1] * c[1];
    let ux = (a2 * (b[1] - c[1]) + b2 * (c[1] - a[1]) + c2 * (a[1] - b[1])) / d;
    let uy = (a2 * (c[0] - b[0]) + b2 * (a[0] - c[0]) + c2 * (b[0] - a[0])) / d;
    let r2 = (a[0] - ux).powi(2) + (a[1] - uy).powi(2);
    ([ux, uy], r2)
}

/// Incremental Delaunay triangulation inside a bounding super-triangle.
#[derive(Debug, Clone)]
pub struct Delaunay {
    points: Vec<Point2>,
    tris: Vec<Tri>,
    scale: f64,
}

impl Delaunay {
    /// Empty triangulation able to hold points inside the given box.
    pub fn new(min: Point2, max: Point2) -> Self {
        let w = (max[0] - min[0]).max(max[1] - min[1]).max(1e-12);
        let c = [(min[0] + max[0]) / 2.0, (min[1] + max[1]) / 2.0];
        let r = 20.0 * w;
        let points = vec![[c[0] - r, c[1] - r], [c[0] + r, c[1] - r], [c[0], c[1] + r]];
        let mut d = Self { points, tris: Vec::new(), scale: w };
        d.push_tri([0, 1, 2]);
        d
    }

    fn push_tri(&mut self, v: [usize; 3]) {
        let (center, radius2) = circumcircle(self.points[v[0]], self.points[v[1]], self.points[v[2]]);
        self.tris.push(Tri { v, center, radius2 });
    }

    fn contains(&self, t: &Tri, p: Point2) -> bool {
        let [a, b, c] = t.v.map(|i| self.points[i]);
        let tol = -1e-14 * self.scale * self.scale;
        signed_area(a, b, p) >= tol && signed_area(b, c, p) >= tol && signed_area(c, a, p) >= tol
    }

    /// Inserts a point; returns its index. Duplicate points are rejected.
    pub fn insert(&mut self, p: Point2) -> Result<usize> {
        let dup = 1e-12 * self.scale;
        if self.points[3..].iter().any(|q| (q[0] - p[0]).abs() <= dup && (q[1] - p[1]).abs() <= dup) {
            return Err(DgnnError::Degenerate(format!("duplicate point ({}, {})", p[0], p[1])));
        }
        let idx = self.points.len();
        self.points.push(p);
        let mut bad: HashSet<usize> = HashSet::new();
        for (i, t) in self.tris.iter().enumerate() {
            let d2 = (t.center[0] - p[0]).powi(2) + (t.center[1] - p[1]).powi(2);
            if d2 < t.radius2 * (1.0 - 1e-12) {
                bad.insert(i);
            }
        }
        if let Some(i) = self.tris.iter().position(|t| self.contains(t, p)) {
            bad.insert(i);
        } else {
            self.points.pop();
            return Err(DgnnError::Degenerate("point outside the triangulation".into()));
        }
        // Grow the cavity until it is star-shaped with respect to p.
        loop {
            let boundary = self.cavity_boundary(&bad);
            let mut grew = false;
            for (a, b) in &boundary {
                if signed_area(self.points[*a], self.points[*b], p) <= 1e-13 * self.scale * self.scale {
                    if let Some(j) = self.tris.iter().enumerate().position(|(j, t)| {
                        !bad.contains(&j) && (0..3).any(|k| t.v[k] == *b && t.v[(k + 1) % 3] == *a)
                    }) {
                        bad.insert(j);
                        grew = true;
                    }
                }
            }
            if !grew {
                let mut kept: Vec<Tri> = Vec::with_capacity(self.tris.len() + 2);
                for (i, t) in self.tris.iter().enumerate() {
                    if !bad.contains(&i) {
                        kept.push(*t);
                    }
                }
                self.tris = kept;
                for (a, b) in boundary {
                    self.push_tri([a, b, idx]);
                }
                return Ok(idx);
            }
        }
    }

    fn cavity_boundary(&self, bad: &HashSet<usize>) -> Vec<(usize, usize)> {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        let mut order: Vec<(usize, usize)> = Vec::new();
        let mut ids: Vec<usize> = bad.iter().copied().collect();
        ids.sort_unstable();
        for &i in &ids {
            let v = self.tris[i].v;
            for k in 0..3 {
                let (a, b) = (v[k], v[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let c = count.entry(key).or_insert(0);
                if *c == 0 {
                    order.push((a, b));
                }
                *c += 1;
            }
        }
        order.into_iter().filter(|(a, b)| count[&((*a).min(*b), (*a).max(*b))] == 1).collect()
    }

    /// Inserted points (super-triangle vertices excluded).
    pub fn points(&self) -> &[Point2] {
        &self.points[3..]
    }

    /// Triangles not touching the super-triangle, indices into [`Self::points`].
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        self.tris
            .iter()
            .filter(|t| t.v.iter().all(|&i| i >= 3))
            .map(|t| t.v.map(|i| i - 3))
            .collect()
    }
}

fn point_in_polygon(p: Point2, poly: &[Point2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let l2 = d[0] * d[0] + d[1] * d[1];
    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0);
    ((p[0] - a[0] - t * d[0]).powi(2) + (p[1] - a[1] - t * d[1]).powi(2)).sqrt()
}

fn segments_cross(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let o1 = signed_area(a, b, c);
    let o2 = signed_area(a, b, d);
    let o3 = signed_area(c, d, a);
    let o4 = signed_area(c, d, b);
    (o1 * o2 < 0.0) && (o3 * o4 < 0.0)
}

/// Checks a polygon is usable and returns it in counterclockwise order.
pub fn validate_polygon(poly: &[Point2]) -> Result<Vec<Point2>> {
    let n = poly.len();
    if n < 3 {
        return Err(DgnnError::Degenerate("polygon needs at least 3 vertices".into()));
    }
    if poly.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(DgnnError::Degenerate("non-finite polygon vertex".into()));
    }
    for i in 0..n {
        for j in i + 1..n {
            if poly[i] == poly[j] {
                return Err(DgnnError::Degenerate(format!("repeated vertex {i} = {j}")));
            }
        }
    }
    let area: f64 = (0..n).map(|i| signed_area([0.0, 0.0], poly[i], poly[(i + 1) % n])).sum();
    let scale = poly.iter().fold(0.0f64, |m, p| m.max(p[0].abs()).max(p[1].abs())).max(1e-300);
    if area.abs() <= 1e-12 * scale * scale {
        return Err(DgnnError::Degenerate("polygon has zero area".into()));
    }
    for i in 0..n {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return Err(DgnnError::Degenerate(format!("polygon sides {i} and {j} intersect")));
            }
        }
    }
    let mut out = poly.to_vec();
    if area < 0.0 {
        out.reverse();
    }
    Ok(out)
}

/// Signed area (positive for counterclockwise input).
pub fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| signed_area([0.0, 0.0], poly[i], poly[(i + 1) % n])).sum()
}

/// Quality triangulation of a simple polygon driven by the area scale `s_min`.
///
/// Boundary sides are sampled at the target spacing, the interior is seeded
/// with a hexagonal lattice, and the Delaunay triangulation of those points is
/// refined by longest-edge midpoint insertion until every triangle has area at
/// most `MAX_AREA_FACTOR · s_min` and no angle below `MIN_ANGLE_DEGREES`
/// (within an insertion budget). Side `k` of the result joins polygon vertices
/// `k` and `k + 1` of the given (not reoriented) vertex list.
pub fn triangulate_polygon(boundary: &[Point2], s_min: f64) -> Result<Mesh2D> {
    if !(s_min > 0.0) || !s_min.is_finite() {
        return Err(DgnnError::InvalidArgument(format!("s_min must be positive, got {s_min}")));
    }
    let poly = validate_polygon(boundary)?;
    let reversed = polygon_area(boundary) < 0.0;
    let n = poly.len();
    // Side index of the CCW polygon edge i in the caller's numbering.
    let side_label = |i: usize| if reversed { (2 * n - 2 - i) % n } else { i };

    let h = (4.0 * MEAN_AREA_FACTOR * s_min / 3f64.sqrt()).sqrt();
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in &poly {
        for d in 0..2 {
            min[d] = min[d].min(p[d]);
            max[d] = max[d].max(p[d]);
        }
    }
    let mut seeds: Vec<Point2> = Vec::new();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let m = ((len / h).ceil() as usize).max(1);
        for k in 0..m {
            let t = k as f64 / m as f64;
            seeds.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    let n_boundary = seeds.len();
    let centroid = {
        let mut c = [0.0, 0.0];
        for p in &poly {
            c[0] += p[0] / n as f64;
            c[1] += p[1] / n as f64;
        }
        c
    };
    let dy = h * 3f64.sqrt() / 2.0;
    let jmin = ((min[1] - centroid[1]) / dy).floor() as i64 - 1;
    let jmax = ((max[1] - centroid[1]) / dy).ceil() as i64 + 1;
    let imin = ((min[0] - centroid[0]) / h).floor() as i64 - 2;
    let imax = ((max[0] - centroid[0]) / h).ceil() as i64 + 2;
    for j in jmin..=jmax {
        for i in imin..=imax {
            let shift = if j.rem_euclid(2) == 1 { 0.5 } else { 0.0 };
            let p = [centroid[0] + (i as f64 + shift) * h, centroid[1] + j as f64 * dy];
            if !point_in_polygon(p, &poly) {
                continue;
            }
            let d = (0..n).map(|s| segment_distance(p, poly[s], poly[(s + 1) % n])).fold(f64::INFINITY, f64::min);
            if d >= 0.6 * h {
                seeds.push(p);
            }
        }
    }
    let mut dt = Delaunay::new(min, max);
    for p in &seeds {
        dt.insert(*p)?;
    }

    // Boundary segments are consecutive boundary samples; track them through
    // splits so recovery and side tagging stay exact.
    let mut segments: Vec<(usize, usize, usize)> = Vec::new();
    {
        let mut start = 0;
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            let m = ((len / h).ceil() as usize).max(1);
            for k in 0..m {
                let p = start + k;
                let q = if i == n - 1 && k == m - 1 { 0 } else { start + k + 1 };
                segments.push((p, q % n_boundary, side_label(i)));
            }
            start += m;
        }
    }

    let inside_tris = |dt: &Delaunay| -> Vec<[usize; 3]> {
        let pts = dt.points();
        dt.triangles()
            .into_iter()
            .filter(|t| {
                let c = [
                    (pts[t[0]][0] + pts[t[1]][0] + pts[t[2]][0]) / 3.0,
                    (pts[t[0]][1] + pts[t[1]][1] + pts[t[2]][1]) / 3.0,
                ];
                point_in_polygon(c, &poly)
            })
            .collect()
    };

    let max_area = MAX_AREA_FACTOR * s_min;
    let budget = 20 * seeds.len() + 200;
    let mut inserted = 0;
    loop {
        let tris = inside_tris(&dt);
        let edge_set: HashSet<(usize, usize)> = tris
            .iter()
            .flat_map(|t| (0..3).map(move |k| (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]))))
            .collect();
        // Boundary recovery first: split any segment missing from the mesh.
        if let Some(pos) = segments.iter().position(|&(a, b, _)| !edge_set.contains(&(a.min(b), a.max(b)))) {
            if inserted >= budget {
                return Err(DgnnError::Degenerate("could not recover the polygon boundary".into()));
            }
            let (a, b, side) = segments[pos];
            let (pa, pb) = (dt.points()[a], dt.points()[b]);
            let m = dt.insert([(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0])? - 3;
            segments.splice(pos..=pos, [(a, m, side), (m, b, side)]);
            inserted += 1;
            continue;
        }
        if inserted >= budget {
            break;
        }
        let pts = dt.points();
        let mut worst: Option<(f64, [usize; 3])> = None;
        for t in &tris {
            let area = signed_area(pts[t[0]], pts[t[1]], pts[t[2]]);
            let angle = min_angle(pts[t[0]], pts[t[1]], pts[t[2]]);
            let score = if area > max_area {
                area / max_area
            } else if angle < MIN_ANGLE_DEGREES {
                MIN_ANGLE_DEGREES / angle.max(1e-3) - 1.0 + 1e-9
            } else {
                continue;
            };
            if worst.map_or(true, |(s, _)| score > s) {
                worst = Some((score, *t));
            }
        }
        let Some((_, t)) = worst else { break };
        let (k, _) = (0..3)
            .map(|k| {
                let (a, b) = (pts[t[k]], pts[t[(k + 1) % 3]]);
                (k, (a[0] - b[0]).hypot(a[1] - b[1]))
            })
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        let (a, b) = (t[k], t[(k + 1) % 3]);
        let (pa, pb) = (pts[a], pts[b]);
        let m = dt.insert([(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0])? - 3;
        if let Some(pos) = segments.iter().position(|&(p, q, _)| (p, q) == (a, b) || (p, q) == (b, a)) {
            let (p, q, side) = segments[pos];
            segments.splice(pos..=pos, [(p, m, side), (m, q, side)]);
        }
        inserted += 1;
    }

    let tris = inside_tris(&dt);
    let pts = dt.points().to_vec();
    // Lexicographic vertex order for reproducible numbering.
    let used: Vec<usize> = {
        let mut u: Vec<usize> = tris.iter().flatten().copied().collect::<HashSet<_>>().into_iter().collect();
        u.sort_by(|&a, &b| pts[a][0].total_cmp(&pts[b][0]).then(pts[a][1].total_cmp(&pts[b][1])));
        u
    };
    let mut remap = vec![usize::MAX; pts.len()];
    for (new, &old) in used.iter().enumerate() {
        remap[old] = new;
    }
    let vertices: Vec<Point2> = used.iter().map(|&i| pts[i]).collect();
    let mut triangles: Vec<[usize; 3]> = tris.iter().map(|t| t.map(|i| remap[i])).collect();
    for t in triangles.iter_mut() {
        // rotate so the smallest index comes first, keeping orientation
        let r = (0..3).min_by_key(|&k| t[k]).unwrap();
        t.rotate_left(r);
    }
    triangles.sort();
    let side_map: HashMap<(usize, usize), usize> = segments
        .iter()
        .map(|&(a, b, s)| {
            let (a, b) = (remap[a], remap[b]);
            ((a.min(b), a.max(b)), s)
        })
        .collect();
    let mut mesh = Mesh2D::from_triangles(vertices, triangles, |a, b| side_map.get(&(a.min(b), a.max(b))).copied())?;
    mesh.min_area = s_min;
    Ok(mesh)
}

fn min_angle(a: Point2, b: Point2, c: Point2) -> f64 {
    let p = [a, b, c];
    (0..3)
        .map(|k| {
            let (o, u, v) = (p[k], p[(k + 1) % 3], p[(k + 2) % 3]);
            let du = [u[0] - o[0], u[1] - o[1]];
            let dv = [v[0] - o[0], v[1] - o[1]];
            let cos = (du[0] * dv[0] + du[1] * dv[1]) / (du[0].hypot(du[1]) * dv[0].hypot(dv[1]));
            cos.clamp(-1.0, 1.0).acos().to_degrees()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Regular pentagon on the unit circle with a vertex at 90°.
pub fn regular_pentagon() -> Vec<Point2> {
    (0..5)
        .map(|k| {
            let a = (90.0 + 72.0 * k as f64).to_radians();
            [a.cos(), a.sin()]
        })
        .collect()
}
