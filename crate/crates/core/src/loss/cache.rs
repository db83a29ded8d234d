use std::sync::Arc;

use serde::Serialize;

use crate::basis::{monomial, TestBasis};
use crate::error::{DgnnError, Result};
use crate::geometry::{EdgeKind, Mesh1D, Mesh2D, Point2};
use crate::quadrature::{edge_rule, gauss_legendre_1d, triangle_rule};

pub type SpaceTimeFn = Arc<dyn Fn(Point2, f64) -> f64 + Send + Sync>;
pub type SpaceFn = Arc<dyn Fn(Point2) -> f64 + Send + Sync>;

/// Convective flux `F(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Convection {
    None,
    /// `F(u) = a u`.
    Linear { velocity: Point2 },
    /// `F(u) = d u² / 2`.
    Burgers { direction: Point2 },
}

impl Convection {
    /// `(F(u), F'(u))`.
    pub fn eval(&self, u: f64) -> (Point2, Point2) {
        match *self {
            Convection::None => ([0.0; 2], [0.0; 2]),
            Convection::Linear { velocity: a } => ([a[0] * u, a[1] * u], a),
            Convection::Burgers { direction: d } => {
                let h = 0.5 * u * u;
                ([d[0] * h, d[1] * h], [d[0] * u, d[1] * u])
            }
        }
    }
}

/// `u_t + ∇·F(u) = ∇·(D∇u) + f` with Dirichlet data `g` and initial data `u₀`.
#[derive(Clone)]
pub struct PdeCoefficients {
    pub diffusion: f64,
    pub convection: Convection,
    pub source: SpaceTimeFn,
    pub dirichlet: SpaceTimeFn,
    pub initial: Option<SpaceFn>,
    /// Time horizon; 0 for stationary problems.
    pub horizon: f64,
    /// Coefficient of the jump term in the numerical flux.
    pub jump_coefficient: f64,
}

impl PdeCoefficients {
    pub fn stationary(diffusion: f64, source: SpaceTimeFn, dirichlet: SpaceTimeFn) -> Self {
        Self {
            diffusion,
            convection: Convection::None,
            source,
            dirichlet,
            initial: None,
            horizon: 0.0,
            jump_coefficient: 1.0,
        }
    }

    pub fn is_transient(&self) -> bool {
        self.horizon > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon >= 0.0) {
            return Err(DgnnError::InvalidArgument("time horizon must be non-negative".into()));
        }
        if self.is_transient() && self.initial.is_none() {
            return Err(DgnnError::InvalidArgument("transient problem without initial data".into()));
        }
        if !self.is_transient() && self.initial.is_some() {
            return Err(DgnnError::InvalidArgument("stationary problem cannot carry initial data".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CacheSpec {
    /// Volume points per element (`N_int` in 1D, `N_E` in 2D).
    pub volume_points: usize,
    /// Points per edge in 2D (`N_e`); 1D faces use a single point.
    pub edge_points: usize,
    pub degree: usize,
    /// Time collocation nodes for transient problems.
    pub time_nodes: usize,
}

/// One element face as seen from its owning element (normal points out of
/// `owner`). Interior and periodic faces also carry the neighbour trace.
#[derive(Debug, Clone)]
pub struct Face {
    pub kind: EdgeKind,
    pub owner: usize,
    pub owner_slot: usize,
    /// `(element, slot)` of the other trace.
    pub neighbor: Option<(usize, usize)>,
    pub normal: Point2,
    pub weights: Vec<f64>,
    pub owner_points: Vec<Point2>,
    pub neighbor_points: Vec<Point2>,
    /// `g(x_s, t_j)` at `[j * ns + s]` for Dirichlet faces.
    pub dirichlet: Vec<f64>,
}

impl Face {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ElementData {
    pub points: Vec<Point2>,
    /// Physical weights `|E| w`.
    pub weights: Vec<f64>,
    /// `[b * nq + q]`.
    pub test_values: Vec<f64>,
    /// Physical gradients, same layout.
    pub test_grads: Vec<Point2>,
    /// `(face, is_owner)` per local slot.
    pub faces: Vec<(usize, bool)>,
    /// Test values at each slot's own trace points, `[b * ns + s]`.
    pub face_tests: Vec<Vec<f64>>,
    /// `f(x_q, t_j)` at `[j * nq + q]`.
    pub source: Vec<f64>,
    /// `u₀(x_q)` for transient problems.
    pub initial: Vec<f64>,
    /// Network inputs, row-major `P × input_dim`.
    pub inputs: Vec<f64>,
    face_base: Vec<usize>,
    ic_base: usize,
    n_points: usize,
}

impl ElementData {
    pub fn n_volume(&self) -> usize {
        self.weights.len()
    }

    pub fn vol_index(&self, j: usize, q: usize) -> usize {
        j * self.n_volume() + q
    }

    pub fn face_index(&self, slot: usize, ns: usize, j: usize, s: usize) -> usize {
        self.face_base[slot] + j * ns + s
    }

    pub fn ic_index(&self, q: usize) -> usize {
        self.ic_base + q
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }
}

/// Everything the loss needs that does not depend on the network.
#[derive(Debug, Clone)]
pub struct AssemblyCache {
    pub spatial_dim: usize,
    pub transient: bool,
    pub n_basis: usize,
    pub spec: CacheSpec,
    pub elements: Vec<ElementData>,
    pub faces: Vec<Face>,
    pub time_nodes: Vec<f64>,
    /// Trapezoid weights normalised to sum to the node count.
    pub time_weights: Vec<f64>,
}

/// Uniform nodes on `[0, T]` with trapezoid weights scaled to sum to `n`.
pub fn time_grid(horizon: f64, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if horizon == 0.0 {
        return Ok((vec![0.0], vec![1.0]));
    }
    if n < 2 {
        return Err(DgnnError::InvalidArgument("transient problems need at least 2 time nodes".into()));
    }
    let nodes = (0..n).map(|j| horizon * j as f64 / (n - 1) as f64).collect();
    let inner = n as f64 / (n - 1) as f64;
    let weights = (0..n).map(|j| if j == 0 || j == n - 1 { 0.5 * inner } else { inner }).collect();
    Ok((nodes, weights))
}

struct RawFace {
    kind: EdgeKind,
    owner: usize,
    neighbor: Option<usize>,
    normal: Point2,
    weights: Vec<f64>,
    owner_points: Vec<Point2>,
    neighbor_points: Vec<Point2>,
}

struct RawElement {
    points: Vec<Point2>,
    weights: Vec<f64>,
    test_values: Vec<f64>,
    test_grads: Vec<Point2>,
    to_ref: Box<dyn Fn(Point2) -> Point2>,
}

impl AssemblyCache {
    pub fn for_interval(mesh: &Mesh1D, spec: CacheSpec, coeffs: &PdeCoefficients) -> Result<Self> {
        let rule = gauss_legendre_1d(spec.volume_points)?;
        let basis = TestBasis::build(1, spec.degree, &rule)?;
        let mut elems = Vec::new();
        for e in 0..mesh.num_elements() {
            let map = mesh.affine(e)?;
            let (a, b) = mesh.element_bounds(e);
            let h = b - a;
            elems.push(RawElement {
                points: rule.points.iter().map(|p| map.map(*p)).collect(),
                weights: rule.weights.iter().map(|w| w * h).collect(),
                test_values: basis.values.clone(),
                test_grads: basis.push_forward_gradients(&map)?,
                to_ref: Box::new(move |x: Point2| [(x[0] - a) / h, 0.0]),
            });
        }
        let mut faces = Vec::new();
        for f in mesh.interfaces() {
            let (owner, neighbor, normal, op, np) = match (f.left, f.right) {
                (Some(l), r) => (l, r, [1.0, 0.0], f.left_x, f.right_x),
                (None, Some(r)) => (r, None, [-1.0, 0.0], f.right_x, f.left_x),
                (None, None) => return Err(DgnnError::InvalidArgument("interface without elements".into())),
            };
            faces.push(RawFace {
                kind: f.kind,
                owner,
                neighbor,
                normal,
                weights: vec![1.0],
                owner_points: vec![[op, 0.0]],
                neighbor_points: if neighbor.is_some() { vec![[np, 0.0]] } else { Vec::new() },
            });
        }
        Self::build(1, spec, coeffs, elems, faces)
    }

    pub fn for_triangles(mesh: &Mesh2D, spec: CacheSpec, coeffs: &PdeCoefficients) -> Result<Self> {
        let rule = triangle_rule(spec.volume_points)?;
        let basis = TestBasis::build(2, spec.degree, &rule)?;
        let mut elems = Vec::new();
        for e in 0..mesh.num_elements() {
            let map = mesh.affine(e)?;
            let jac = map.jacobian();
            let grads = basis.push_forward_gradients(&map)?;
            elems.push(RawElement {
                points: rule.points.iter().map(|p| map.map(*p)).collect(),
                weights: rule.weights.iter().map(|w| w * jac).collect(),
                test_values: basis.values.clone(),
                test_grads: grads,
                to_ref: Box::new(move |x: Point2| map.inverse(x)),
            });
        }
        let mut faces = Vec::new();
        for edge in &mesh.edges {
            let p = mesh.vertices[edge.vertices[0]];
            let q = mesh.vertices[edge.vertices[1]];
            let own = edge_rule(spec.edge_points, p, q)?;
            let neighbor_points = match edge.right {
                Some(_) => {
                    let [rp, rq] = mesh.right_trace_endpoints(edge);
                    edge_rule(spec.edge_points, rp, rq)?.points
                }
                None => Vec::new(),
            };
            if edge.kind != EdgeKind::Dirichlet && edge.right.is_none() {
                return Err(DgnnError::InvalidArgument("interior edge without a neighbour trace".into()));
            }
            faces.push(RawFace {
                kind: edge.kind,
                owner: edge.left,
                neighbor: edge.right,
                normal: edge.normal,
                weights: own.weights,
                owner_points: own.points,
                neighbor_points,
            });
        }
        Self::build(2, spec, coeffs, elems, faces)
    }

    fn build(
        spatial_dim: usize,
        spec: CacheSpec,
        coeffs: &PdeCoefficients,
        raw: Vec<RawElement>,
        raw_faces: Vec<RawFace>,
    ) -> Result<Self> {
        coeffs.validate()?;
        let transient = coeffs.is_transient();
        let (time_nodes, time_weights) = time_grid(coeffs.horizon, spec.time_nodes)?;
        let nt = time_nodes.len();
        let exps = crate::basis::exponents(spatial_dim, spec.degree);
        let nb = exps.len();
        let n = raw.len();

        let mut slots: Vec<Vec<(usize, bool)>> = vec![Vec::new(); n];
        let mut faces = Vec::with_capacity(raw_faces.len());
        for (fi, rf) in raw_faces.into_iter().enumerate() {
            let owner_slot = slots[rf.owner].len();
            slots[rf.owner].push((fi, true));
            let neighbor = rf.neighbor.map(|r| {
                let s = slots[r].len();
                slots[r].push((fi, false));
                (r, s)
            });
            let mut dirichlet = Vec::new();
            if rf.kind == EdgeKind::Dirichlet {
                for &t in &time_nodes {
                    for p in &rf.owner_points {
                        dirichlet.push((coeffs.dirichlet)(*p, t));
                    }
                }
            }
            faces.push(Face {
                kind: rf.kind,
                owner: rf.owner,
                owner_slot,
                neighbor,
                normal: rf.normal,
                weights: rf.weights,
                owner_points: rf.owner_points,
                neighbor_points: rf.neighbor_points,
                dirichlet,
            });
        }

        let input_dim = spatial_dim + usize::from(transient);
        let mut elements = Vec::with_capacity(n);
        for (e, r) in raw.into_iter().enumerate() {
            let nq = r.points.len();
            let mut face_tests = Vec::new();
            let mut face_base = Vec::new();
            let mut at = nt * nq;
            for &(fi, is_owner) in &slots[e] {
                let f = &faces[fi];
                let pts = if is_owner { &f.owner_points } else { &f.neighbor_points };
                let mut tv = vec![0.0; nb * pts.len()];
                for (s, x) in pts.iter().enumerate() {
                    let xh = (r.to_ref)(*x);
                    for (b, &ex) in exps.iter().enumerate() {
                        tv[b * pts.len() + s] = monomial(ex, xh).0;
                    }
                }
                face_tests.push(tv);
                face_base.push(at);
                at += nt * pts.len();
            }
            let ic_base = at;
            if transient {
                at += nq;
            }
            let mut inputs = Vec::with_capacity(at * input_dim);
            let push = |inputs: &mut Vec<f64>, x: Point2, t: f64| {
                inputs.extend_from_slice(&x[..spatial_dim]);
                if transient {
                    inputs.push(t);
                }
            };
            for &t in &time_nodes {
                for x in &r.points {
                    push(&mut inputs, *x, t);
                }
            }
            for &(fi, is_owner) in &slots[e] {
                let f = &faces[fi];
                let pts = if is_owner { &f.owner_points } else { &f.neighbor_points };
                for &t in &time_nodes {
                    for x in pts {
                        push(&mut inputs, *x, t);
                    }
                }
            }
            let mut initial = Vec::new();
            if let Some(u0) = &coeffs.initial {
                for x in &r.points {
                    push(&mut inputs, *x, 0.0);
                    initial.push(u0(*x));
                }
            }
            let mut source = Vec::with_capacity(nt * nq);
            for &t in &time_nodes {
                for x in &r.points {
                    source.push((coeffs.source)(*x, t));
                }
            }
            if r.weights.iter().any(|w| !(*w > 0.0)) {
                return Err(DgnnError::Degenerate(format!("non-positive quadrature weight on element {e}")));
            }
            elements.push(ElementData {
                points: r.points,
                weights: r.weights,
                test_values: r.test_values,
                test_grads: r.test_grads,
                faces: slots[e].clone(),
                face_tests,
                source,
                initial,
                inputs,
                face_base,
                ic_base,
                n_points: at,
            });
        }
        Ok(Self { spatial_dim, transient, n_basis: nb, spec, elements, faces, time_nodes, time_weights })
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Network input dimension (space plus optional time).
    pub fn input_dim(&self) -> usize {
        self.spatial_dim + usize::from(self.transient)
    }

    /// Jet length per point: value, spatial gradient, optional `∂t`.
    pub fn jet(&self) -> usize {
        1 + self.input_dim()
    }

    pub fn point_groups(&self) -> Vec<Vec<f64>> {
        self.elements.iter().map(|e| e.inputs.clone()).collect()
    }
}
