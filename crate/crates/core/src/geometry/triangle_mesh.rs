use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{DgnnError, Result};

use super::{AffineMap, Point2};

/// Classification of a mesh edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Interior,
    Dirichlet,
    Periodic,
}

/// Boundary condition attached to one side of the generating polygon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    Dirichlet,
    /// Identified with the (parallel, equal-length) side `partner`.
    Periodic { partner: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    /// Endpoints in counterclockwise order as seen from `left`.
    pub vertices: [usize; 2],
    pub kind: EdgeKind,
    pub left: usize,
    /// Local edge index `k` in `left`, the edge `(t[k], t[(k + 1) % 3])`.
    pub left_local: usize,
    pub right: Option<usize>,
    pub right_local: Option<usize>,
    /// Unit normal pointing out of `left`.
    pub normal: Point2,
    pub length: f64,
    /// Generating polygon side for boundary edges.
    pub side: Option<usize>,
    /// For periodic edges: the images of `vertices[0]`, `vertices[1]` on the
    /// partner side, where the right trace lives.
    pub partner_vertices: Option<[usize; 2]>,
}

/// Counterclockwise triangulation with classified edges.
#[derive(Debug, Clone, Serialize)]
pub struct Mesh2D {
    pub vertices: Vec<Point2>,
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// Global edge index of each local edge.
    pub element_edges: Vec<[usize; 3]>,
    /// Area threshold used at generation (0 for structured or imported meshes).
    pub min_area: f64,
    #[serde(skip)]
    side_kinds: Vec<BoundaryKind>,
}

pub(crate) fn signed_area(a: Point2, b: Point2, c: Point2) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: Point2, b: Point2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh2D {
    /// Builds edges from raw triangles. `side_of(a, b)` tags boundary edges
    /// with their polygon side; every boundary edge starts as Dirichlet.
    pub fn from_triangles(
        vertices: Vec<Point2>,
        mut triangles: Vec<[usize; 3]>,
        side_of: impl Fn(usize, usize) -> Option<usize>,
    ) -> Result<Self> {
        for (e, t) in triangles.iter_mut().enumerate() {
            if t.iter().any(|&v| v >= vertices.len()) {
                return Err(DgnnError::InvalidArgument(format!("triangle {e} references a missing vertex")));
            }
            let a = signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if a < 0.0 {
                t.swap(1, 2);
            }
            if a.abs() <= 1e-14 {
                return Err(DgnnError::SingularMap { element: e, det: 2.0 * a });
            }
        }
        let mut incidence: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
        for (e, t) in triangles.iter().enumerate() {
            for k in 0..3 {
                incidence.entry(key(t[k], t[(k + 1) % 3])).or_default().push((e, k));
            }
        }
        let mut edges = Vec::with_capacity(incidence.len());
        let mut element_edges = vec![[usize::MAX; 3]; triangles.len()];
        for (&(a, b), adj) in &incidence {
            if adj.len() > 2 {
                return Err(DgnnError::NonManifold(a, b));
            }
            let (left, left_local) = adj[0];
            let t = triangles[left];
            let (p, q) = (t[left_local], t[(left_local + 1) % 3]);
            let (pp, qq) = (vertices[p], vertices[q]);
            let length = dist(pp, qq);
            let normal = [(qq[1] - pp[1]) / length, -(qq[0] - pp[0]) / length];
            let idx = edges.len();
            element_edges[left][left_local] = idx;
            let (right, right_local, kind, side) = if adj.len() == 2 {
                let (r, rl) = adj[1];
                element_edges[r][rl] = idx;
                (Some(r), Some(rl), EdgeKind::Interior, None)
            } else {
                (None, None, EdgeKind::Dirichlet, side_of(a, b))
            };
            edges.push(Edge {
                vertices: [p, q],
                kind,
                left,
                left_local,
                right,
                right_local,
                normal,
                length,
                side,
                partner_vertices: None,
            });
        }
        Ok(Self { vertices, triangles, edges, element_edges, min_area: 0.0, side_kinds: Vec::new() })
    }

    /// Uniform `nx × ny` grid on a rectangle, each cell cut along its
    /// diagonal. Sides are numbered bottom, right, top, left.
    pub fn structured_rectangle(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || !(x0 < x1) || !(y0 < y1) {
            return Err(DgnnError::InvalidArgument("degenerate rectangle grid".into()));
        }
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let x = if i == nx { x1 } else { x0 + (x1 - x0) * i as f64 / nx as f64 };
                let y = if j == ny { y1 } else { y0 + (y1 - y0) * j as f64 / ny as f64 };
                vertices.push([x, y]);
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        let verts = vertices.clone();
        let side_of = move |a: usize, b: usize| {
            let (p, q) = (verts[a], verts[b]);
            if p[1] == y0 && q[1] == y0 {
                Some(0)
            } else if p[0] == x1 && q[0] == x1 {
                Some(1)
            } else if p[1] == y1 && q[1] == y1 {
                Some(2)
            } else if p[0] == x0 && q[0] == x0 {
                Some(3)
            } else {
                None
            }
        };
        Self::from_triangles(vertices, triangles, side_of)
    }

    pub fn num_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn area(&self, e: usize) -> f64 {
        let t = self.triangles[e];
        signed_area(self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_elements()).map(|e| self.area(e)).sum()
    }

    pub fn affine(&self, e: usize) -> Result<AffineMap> {
        let t = self.triangles[e];
        AffineMap::triangle(self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]).map_err(|err| match err {
            DgnnError::SingularMap { det, .. } => DgnnError::SingularMap { element: e, det },
            other => other,
        })
    }

    pub fn min_angle_degrees(&self, e: usize) -> f64 {
        let t = self.triangles[e];
        let p = [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]];
        (0..3)
            .map(|k| {
                let (a, b, c) = (p[k], p[(k + 1) % 3], p[(k + 2) % 3]);
                let u = [b[0] - a[0], b[1] - a[1]];
                let v = [c[0] - a[0], c[1] - a[1]];
                let cos = (u[0] * v[0] + u[1] * v[1]) / ((u[0].hypot(u[1])) * (v[0].hypot(v[1])));
                cos.clamp(-1.0, 1.0).acos().to_degrees()
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn count_edges(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// Assigns boundary conditions per polygon side. Periodic sides are
    /// merged with their partner into single two-sided edges.
    pub fn classify_edges(mut self, spec: &[BoundaryKind]) -> Result<Self> {
        let mut by_side: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, e) in self.edges.iter().enumerate() {
            if e.kind == EdgeKind::Interior {
                continue;
            }
            let side = e.side.ok_or_else(|| {
                DgnnError::InvalidArgument(format!("boundary edge {:?} has no side tag", e.vertices))
            })?;
            if side >= spec.len() {
                return Err(DgnnError::InvalidArgument(format!("no boundary kind given for side {side}")));
            }
            by_side.entry(side).or_default().push(i);
        }
        let mut remove = vec![false; self.edges.len()];
        let mut sides: Vec<usize> = by_side.keys().copied().collect();
        sides.sort_unstable();
        for s in sides {
            match spec[s] {
                BoundaryKind::Dirichlet => {
                    for &i in &by_side[&s] {
                        self.edges[i].kind = EdgeKind::Dirichlet;
                        self.edges[i].partner_vertices = None;
                    }
                }
                BoundaryKind::Periodic { partner } => {
                    if spec.get(partner) != Some(&BoundaryKind::Periodic { partner: s }) || partner == s {
                        return Err(DgnnError::InvalidArgument(format!(
                            "periodic side {s} must name a partner that names it back"
                        )));
                    }
                    // The lower-numbered side owns the merged records.
                    if s > partner {
                        continue;
                    }
                    self.pair_periodic(&by_side[&s], by_side.get(&partner).map(|v| v.as_slice()).unwrap_or(&[]), &mut remove)?;
                }
            }
        }
        self.side_kinds = spec.to_vec();
        if remove.iter().any(|&r| r) {
            let mut remap = vec![usize::MAX; self.edges.len()];
            let mut kept = Vec::with_capacity(self.edges.len());
            for (i, e) in std::mem::take(&mut self.edges).into_iter().enumerate() {
                if !remove[i] {
                    remap[i] = kept.len();
                    kept.push(e);
                }
            }
            self.edges = kept;
            for t in self.element_edges.iter_mut() {
                for k in t.iter_mut() {
                    *k = remap[*k];
                }
            }
            for (i, e) in self.edges.iter().enumerate() {
                self.element_edges[e.left][e.left_local] = i;
                if let (Some(r), Some(rl)) = (e.right, e.right_local) {
                    self.element_edges[r][rl] = i;
                }
            }
        }
        Ok(self)
    }

    fn pair_periodic(&mut self, own: &[usize], other: &[usize], remove: &mut [bool]) -> Result<()> {
        if own.len() != other.len() || own.is_empty() {
            return Err(DgnnError::InvalidArgument("periodic sides have different edge counts".into()));
        }
        let mid = |m: &Self, i: usize| {
            let [a, b] = m.edges[i].vertices;
            let (p, q) = (m.vertices[a], m.vertices[b]);
            [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0]
        };
        let centroid = |m: &Self, list: &[usize]| {
            let mut c = [0.0, 0.0];
            let mut w = 0.0;
            for &i in list {
                let p = mid(m, i);
                let l = m.edges[i].length;
                c[0] += p[0] * l;
                c[1] += p[1] * l;
                w += l;
            }
            [c[0] / w, c[1] / w]
        };
        let (c0, c1) = (centroid(self, own), centroid(self, other));
        let shift = [c1[0] - c0[0], c1[1] - c0[1]];
        let scale = shift[0].hypot(shift[1]).max(1e-300);
        for &i in own {
            let m = mid(self, i);
            let target = [m[0] + shift[0], m[1] + shift[1]];
            let j = *other
                .iter()
                .min_by(|&&a, &&b| dist(mid(self, a), target).total_cmp(&dist(mid(self, b), target)))
                .unwrap();
            if dist(mid(self, j), target) > 1e-9 * scale || remove[j] {
                return Err(DgnnError::InvalidArgument("periodic sides do not match under translation".into()));
            }
            let [a, b] = self.edges[i].vertices;
            let [pa, pb] = self.edges[j].vertices;
            let img_a = [self.vertices[a][0] + shift[0], self.vertices[a][1] + shift[1]];
            let partner = if dist(self.vertices[pa], img_a) < dist(self.vertices[pb], img_a) { [pa, pb] } else { [pb, pa] };
            let _ = b;
            let (rl, rn) = (self.edges[j].left, self.edges[j].left_local);
            let e = &mut self.edges[i];
            e.kind = EdgeKind::Periodic;
            e.right = Some(rl);
            e.right_local = Some(rn);
            e.partner_vertices = Some(partner);
            remove[j] = true;
        }
        Ok(())
    }

    /// Red refinement: every triangle splits into four through its edge
    /// midpoints. Side tags and boundary kinds carry over.
    pub fn refine_uniform(&self) -> Result<Self> {
        let mut vertices = self.vertices.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut child_side: HashMap<(usize, usize), usize> = HashMap::new();
        // Periodic merging removed partner records; recover every boundary
        // edge's side from the triangles' edges.
        let mut side_of_pair: HashMap<(usize, usize), usize> = HashMap::new();
        for e in &self.edges {
            if let Some(s) = e.side {
                side_of_pair.insert(key(e.vertices[0], e.vertices[1]), s);
            }
            if let (Some(pv), Some(r)) = (e.partner_vertices, e.right) {
                let _ = r;
                if let Some(ps) = self.partner_side(e) {
                    side_of_pair.insert(key(pv[0], pv[1]), ps);
                }
            }
        }
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point2>| -> usize {
            *midpoint.entry(key(a, b)).or_insert_with(|| {
                let (p, q) = (vertices[a], vertices[b]);
                vertices.push([(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0]);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for t in &self.triangles {
            let [a, b, c] = *t;
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            for (p, q, m) in [(a, b, ab), (b, c, bc), (c, a, ca)] {
                if let Some(&s) = side_of_pair.get(&key(p, q)) {
                    child_side.insert(key(p, m), s);
                    child_side.insert(key(m, q), s);
                }
            }
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        let mut out = Self::from_triangles(vertices, triangles, |a, b| child_side.get(&key(a, b)).copied())?;
        out.min_area = self.min_area / 4.0;
        if !self.side_kinds.is_empty() {
            out = out.classify_edges(&self.side_kinds)?;
        }
        Ok(out)
    }

    fn partner_side(&self, e: &Edge) -> Option<usize> {
        let s = e.side?;
        match self.side_kinds.get(s)? {
            BoundaryKind::Periodic { partner } => Some(*partner),
            BoundaryKind::Dirichlet => None,
        }
    }

    /// Element containing `p` and its reference coordinates.
    pub fn locate(&self, p: Point2) -> Option<(usize, Point2)> {
        let mut best: Option<(usize, Point2, f64)> = None;
        for e in 0..self.num_elements() {
            let t = self.triangles[e];
            let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
            let xmin = a[0].min(b[0]).min(c[0]);
            let xmax = a[0].max(b[0]).max(c[0]);
            let ymin = a[1].min(b[1]).min(c[1]);
            let ymax = a[1].max(b[1]).max(c[1]);
            let pad = 1e-10 * (xmax - xmin + ymax - ymin);
            if p[0] < xmin - pad || p[0] > xmax + pad || p[1] < ymin - pad || p[1] > ymax + pad {
                continue;
            }
            let area2 = 2.0 * signed_area(a, b, c);
            let l1 = 2.0 * signed_area(p, b, c) / area2;
            let l2 = 2.0 * signed_area(a, p, c) / area2;
            let l3 = 1.0 - l1 - l2;
            let worst = l1.min(l2).min(l3);
            if worst >= 0.0 {
                return Some((e, [l2, l3]));
            }
            if worst > -1e-10 && best.map_or(true, |(_, _, w)| worst > w) {
                best = Some((e, [l2.max(0.0), l3.max(0.0)], worst));
            }
        }
        best.map(|(e, r, _)| (e, r))
    }

    /// Physical endpoints of the right-hand trace of an edge.
    pub fn right_trace_endpoints(&self, e: &Edge) -> [Point2; 2] {
        match e.partner_vertices {
            Some([a, b]) => [self.vertices[a], self.vertices[b]],
            None => [self.vertices[e.vertices[0]], self.vertices[e.vertices[1]]],
        }
    }

    pub fn side_kinds(&self) -> &[BoundaryKind] {
        &self.side_kinds
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Mesh2D {
        Mesh2D::structured_rectangle(0.0, 1.0, 0.0, 1.0, 1, 1).unwrap()
    }

    #[test]
    fn two_triangle_square_has_one_interior_edge() {
        let m = unit_square();
        assert_eq!(m.num_elements(), 2);
        assert_eq!(m.count_edges(EdgeKind::Interior), 1);
        assert_eq!(m.count_edges(EdgeKind::Dirichlet), 4);
    }

    #[test]
    fn euler_count_and_normals() {
        let m = Mesh2D::structured_rectangle(0.0, 2.0, -1.0, 1.0, 3, 4).unwrap();
        let int = m.count_edges(EdgeKind::Interior);
        let bnd = m.count_edges(EdgeKind::Dirichlet);
        assert_eq!(3 * m.num_elements(), 2 * int + bnd);
        for e in &m.edges {
            assert!((e.normal[0].hypot(e.normal[1]) - 1.0).abs() < 1e-14);
            let [a, b] = e.vertices;
            let mid = [(m.vertices[a][0] + m.vertices[b][0]) / 2.0, (m.vertices[a][1] + m.vertices[b][1]) / 2.0];
            let t = m.triangles[e.left];
            let c = [
                (m.vertices[t[0]][0] + m.vertices[t[1]][0] + m.vertices[t[2]][0]) / 3.0,
                (m.vertices[t[0]][1] + m.vertices[t[1]][1] + m.vertices[t[2]][1]) / 3.0,
            ];
            // outward from left
            assert!((mid[0] - c[0]) * e.normal[0] + (mid[1] - c[1]) * e.normal[1] > 0.0);
            if let Some(r) = e.right {
                let t = m.triangles[r];
                let c = [
                    (m.vertices[t[0]][0] + m.vertices[t[1]][0] + m.vertices[t[2]][0]) / 3.0,
                    (m.vertices[t[0]][1] + m.vertices[t[1]][1] + m.vertices[t[2]][1]) / 3.0,
                ];
                assert!((mid[0] - c[0]) * e.normal[0] + (mid[1] - c[1]) * e.normal[1] < 0.0);
            }
        }
    }

    #[test]
    fn non_manifold_rejected() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [-1.0, 0.5]];
        let t = vec![[0, 1, 2], [0, 3, 1], [0, 1, 4]];
        assert!(matches!(Mesh2D::from_triangles(v, t, |_, _| None), Err(DgnnError::NonManifold(0, 1))));
    }

    #[test]
    fn refinement_quadruples_and_keeps_area() {
        let m = Mesh2D::structured_rectangle(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap();
        let r = m.refine_uniform().unwrap();
        assert_eq!(r.num_elements(), 4 * m.num_elements());
        assert!((r.total_area() - 1.0).abs() < 1e-14);
        assert_eq!(r.count_edges(EdgeKind::Dirichlet), 2 * m.count_edges(EdgeKind::Dirichlet));
        assert!(r.edges.iter().filter(|e| e.kind == EdgeKind::Dirichlet).all(|e| e.side.is_some()));
    }

    #[test]
    fn periodic_sides_merge() {
        let m = Mesh2D::structured_rectangle(0.0, 1.0, 0.0, 1.0, 3, 2).unwrap();
        let spec = [
            BoundaryKind::Dirichlet,
            BoundaryKind::Periodic { partner: 3 },
            BoundaryKind::Dirichlet,
            BoundaryKind::Periodic { partner: 1 },
        ];
        let m = m.classify_edges(&spec).unwrap();
        assert_eq!(m.count_edges(EdgeKind::Periodic), 2);
        assert_eq!(m.count_edges(EdgeKind::Dirichlet), 6);
        let t = m.num_elements();
        let int = m.count_edges(EdgeKind::Interior) + m.count_edges(EdgeKind::Periodic);
        assert_eq!(3 * t, 2 * int + m.count_edges(EdgeKind::Dirichlet));
        for e in m.edges.iter().filter(|e| e.kind == EdgeKind::Periodic) {
            let [p, q] = m.right_trace_endpoints(e);
            let [a, b] = e.vertices;
            assert!((m.vertices[a][1] - p[1]).abs() < 1e-14);
            assert!((m.vertices[b][1] - q[1]).abs() < 1e-14);
            assert!((m.vertices[a][0] - p[0]).abs() == 1.0);
        }
        for (ti, le) in m.element_edges.iter().enumerate() {
            for (k, &g) in le.iter().enumerate() {
                let e = &m.edges[g];
                assert!((e.left == ti && e.left_local == k) || (e.right == Some(ti) && e.right_local == Some(k)));
            }
        }
        let r = m.refine_uniform().unwrap();
        assert_eq!(r.count_edges(EdgeKind::Periodic), 4);
    }

    #[test]
    fn locate_points() {
        let m = Mesh2D::structured_rectangle(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap();
        let (e, r) = m.locate([0.3, 0.1]).unwrap();
        let x = m.affine(e).unwrap().map(r);
        assert!((x[0] - 0.3).abs() < 1e-14 && (x[1] - 0.1).abs() < 1e-14);
        assert!(m.locate([1.5, 0.5]).is_none());
    }
}
