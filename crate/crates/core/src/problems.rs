//! Concrete problems, their reference solutions, and error metrics.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::dg::{DgSolution, IpdgConfig};
use crate::error::{DgnnError, Result};
use crate::geometry::{regular_pentagon, triangulate_polygon, Mesh1D, Mesh2D, Point2};
use crate::loss::{AssemblyCache, CacheSpec, Convection, PdeCoefficients};
use crate::net::PiecewiseNet;

/// `input ↦ [u, ∂u/∂input_0, …]`.
pub type JetFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    Interval { a: f64, b: f64, periodic: bool },
    Rectangle { x0: f64, x1: f64, y0: f64, y1: f64 },
    Polygon { vertices: Vec<Point2> },
}

impl Domain {
    pub fn spatial_dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            _ => 2,
        }
    }
}

/// How the problem's exact or reference field is produced.
#[derive(Clone)]
pub enum Reference {
    Analytic { value: Arc<dyn Fn(Point2, f64) -> f64 + Send + Sync>, jet: JetFn },
    Characteristic(BurgersReference),
    Oracle(Arc<DgSolution>),
}

impl Reference {
    pub fn name(&self) -> &'static str {
        match self {
            Reference::Analytic { .. } => "analytic",
            Reference::Characteristic(_) => "characteristic",
            Reference::Oracle(_) => "classical-dg",
        }
    }

    pub fn value(&self, x: Point2, t: f64) -> Result<f64> {
        match self {
            Reference::Analytic { value, .. } => Ok(value(x, t)),
            Reference::Characteristic(b) => b.value(x[0], t),
            Reference::Oracle(dg) => Ok(dg.evaluate(&[x])?[0]),
        }
    }

    pub fn values(&self, pts: &[GridPoint]) -> Result<Vec<f64>> {
        match self {
            Reference::Oracle(dg) => dg.evaluate(&pts.iter().map(|p| p.x).collect::<Vec<_>>()),
            _ => pts.par_iter().map(|p| self.value(p.x, p.t)).collect(),
        }
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub domain: Domain,
    pub coeffs: PdeCoefficients,
    pub reference: Reference,
    /// Area scale used for polygon meshes.
    pub s_min: Option<f64>,
}

impl ProblemSpec {
    pub fn spatial_dim(&self) -> usize {
        self.domain.spatial_dim()
    }

    pub fn is_transient(&self) -> bool {
        self.coeffs.is_transient()
    }

    pub fn input_dim(&self) -> usize {
        self.spatial_dim() + usize::from(self.is_transient())
    }

    /// Training mesh: `n` intervals, an `n × n` rectangle split, or the
    /// polygon triangulated at `s_min`.
    pub fn mesh(&self, n: usize) -> Result<Mesh> {
        match &self.domain {
            Domain::Interval { a, b, periodic } => Ok(Mesh::Interval(Mesh1D::partition_interval(*a, *b, n)?.with_periodic(*periodic))),
            Domain::Rectangle { x0, x1, y0, y1 } => Ok(Mesh::Triangles(Mesh2D::structured_rectangle(*x0, *x1, *y0, *y1, n, n)?)),
            Domain::Polygon { vertices } => {
                let s = self.s_min.ok_or_else(|| DgnnError::InvalidArgument("polygon problem without s_min".into()))?;
                Ok(Mesh::Triangles(triangulate_polygon(vertices, s)?))
            }
        }
    }

    /// Default evaluation grid for metrics.
    pub fn grid(&self, mesh: &Mesh) -> Result<EvalGrid> {
        match &self.domain {
            Domain::Interval { a, b, .. } if self.is_transient() => {
                let times = uniform(0.0, self.coeffs.horizon, 64);
                Ok(EvalGrid::space_time(*a, *b, 256, &times, |x, t| (x - shock_position(t)).abs() < SHOCK_BAND))
            }
            Domain::Interval { a, b, .. } => Ok(EvalGrid::line(*a, *b, 1000)),
            Domain::Rectangle { x0, x1, y0, y1 } => Ok(EvalGrid::masked_box([*x0, *y0], [*x1, *y1], 200, mesh)),
            Domain::Polygon { vertices } => {
                let (lo, hi) = bounding_box(vertices);
                Ok(EvalGrid::masked_box(lo, hi, 200, mesh))
            }
        }
    }
}

fn uniform(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect()
}

fn bounding_box(v: &[Point2]) -> (Point2, Point2) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in v {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// A training mesh of either dimension.
#[derive(Debug, Clone)]
pub enum Mesh {
    Interval(Mesh1D),
    Triangles(Mesh2D),
}

impl Mesh {
    pub fn n_elements(&self) -> usize {
        match self {
            Mesh::Interval(m) => m.num_elements(),
            Mesh::Triangles(m) => m.num_elements(),
        }
    }

    pub fn locate(&self, x: Point2) -> Option<usize> {
        match self {
            Mesh::Interval(m) => m.locate(x[0]),
            Mesh::Triangles(m) => m.locate(x).map(|(e, _)| e),
        }
    }

    pub fn cache(&self, spec: CacheSpec, coeffs: &PdeCoefficients) -> Result<AssemblyCache> {
        match self {
            Mesh::Interval(m) => AssemblyCache::for_interval(m, spec, coeffs),
            Mesh::Triangles(m) => AssemblyCache::for_triangles(m, spec, coeffs),
        }
    }

    /// Per-element affine input map sending each element (and `[0, horizon]`
    /// when `horizon` is given) onto roughly `[-1, 1]`; laid out for
    /// [`PiecewiseNet::set_input_map`].
    pub fn local_input_map(&self, horizon: Option<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut shift = Vec::new();
        let mut scale = Vec::new();
        for e in 0..self.n_elements() {
            match self {
                Mesh::Interval(m) => {
                    let (a, b) = m.element_bounds(e);
                    shift.push(0.5 * (a + b));
                    scale.push(2.0 / (b - a));
                }
                Mesh::Triangles(m) => {
                    let vs = m.triangles[e].map(|i| m.vertices[i]);
                    let c = [(vs[0][0] + vs[1][0] + vs[2][0]) / 3.0, (vs[0][1] + vs[1][1] + vs[2][1]) / 3.0];
                    let r = vs.iter().map(|v| (v[0] - c[0]).hypot(v[1] - c[1])).fold(0.0, f64::max);
                    shift.extend(c);
                    scale.extend([1.0 / r, 1.0 / r]);
                }
            }
            if let Some(t) = horizon {
                if !(t > 0.0) {
                    return Err(DgnnError::InvalidArgument(format!("horizon must be positive, got {t}")));
                }
                shift.push(0.5 * t);
                scale.push(2.0 / t);
            }
        }
        Ok((shift, scale))
    }

    /// Samples the piecewise network at grid points.
    pub fn predict(&self, net: &PiecewiseNet, pts: &[GridPoint], transient: bool) -> Result<Vec<f64>> {
        let d = match self {
            Mesh::Interval(_) => 1,
            Mesh::Triangles(_) => 2,
        };
        pts.par_iter()
            .map(|p| {
                let e = self.locate(p.x).ok_or(DgnnError::Locate { x: p.x[0], y: p.x[1] })?;
                let mut input = p.x[..d].to_vec();
                if transient {
                    input.push(p.t);
                }
                Ok(net.eval_point(e, &input))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub x: Point2,
    pub t: f64,
}

/// Evaluation points; `excluded` marks points left out of the main metrics
/// (the shock band for Burgers) and reported separately.
#[derive(Debug, Clone, Serialize)]
pub struct EvalGrid {
    pub spatial_dim: usize,
    pub transient: bool,
    pub points: Vec<GridPoint>,
    pub excluded: Vec<bool>,
}

impl EvalGrid {
    pub fn line(a: f64, b: f64, n: usize) -> Self {
        let points: Vec<GridPoint> = uniform(a, b, n).into_iter().map(|x| GridPoint { x: [x, 0.0], t: 0.0 }).collect();
        let excluded = vec![false; points.len()];
        EvalGrid { spatial_dim: 1, transient: false, points, excluded }
    }

    /// `n × n` bounding-box grid restricted to points the mesh covers.
    pub fn masked_box(lo: Point2, hi: Point2, n: usize, mesh: &Mesh) -> Self {
        let xs = uniform(lo[0], hi[0], n);
        let ys = uniform(lo[1], hi[1], n);
        let cand: Vec<Point2> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| [x, y])).collect();
        let points: Vec<GridPoint> = cand
            .par_iter()
            .filter(|p| mesh.locate(**p).is_some())
            .map(|&x| GridPoint { x, t: 0.0 })
            .collect();
        let excluded = vec![false; points.len()];
        EvalGrid { spatial_dim: 2, transient: false, points, excluded }
    }

    /// `nx` uniform points on `[a, b]` at each time level, time-major.
    pub fn space_time(a: f64, b: f64, nx: usize, times: &[f64], band: impl Fn(f64, f64) -> bool) -> Self {
        let mut points = Vec::with_capacity(nx * times.len());
        let mut excluded = Vec::with_capacity(nx * times.len());
        for &t in times {
            for x in uniform(a, b, nx) {
                points.push(GridPoint { x: [x, 0.0], t });
                excluded.push(band(x, t));
            }
        }
        EvalGrid { spatial_dim: 1, transient: true, points, excluded }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub mse: f64,
    /// Maximum absolute error.
    pub mae: f64,
    /// Mean absolute error, the alternative reading of MAE.
    pub mean_abs: f64,
    pub n_points: usize,
}

pub fn metrics(pred: &[f64], reference: &[f64]) -> Result<Metrics> {
    if pred.len() != reference.len() {
        return Err(DgnnError::ShapeMismatch(format!("{} predictions for {} reference values", pred.len(), reference.len())));
    }
    if pred.is_empty() {
        return Err(DgnnError::InvalidArgument("metrics on an empty grid".into()));
    }
    let n = pred.len() as f64;
    let (mut se, mut ae, mut mx) = (0.0, 0.0, 0.0f64);
    for (p, r) in pred.iter().zip(reference) {
        let d = p - r;
        se += d * d;
        ae += d.abs();
        mx = mx.max(d.abs());
        if d.is_nan() {
            mx = f64::NAN;
        }
    }
    Ok(Metrics { mse: se / n, mae: mx, mean_abs: ae / n, n_points: pred.len() })
}

/// Metrics over included points, and over excluded ones when there are any.
pub fn evaluate_metrics(grid: &EvalGrid, pred: &[f64], reference: &[f64]) -> Result<(Metrics, Option<Metrics>)> {
    if grid.is_empty() {
        return Err(DgnnError::InvalidArgument("metrics on an empty grid".into()));
    }
    if pred.len() != grid.len() || reference.len() != grid.len() {
        return Err(DgnnError::ShapeMismatch("prediction/reference length differs from grid".into()));
    }
    let split = |keep: bool| -> (Vec<f64>, Vec<f64>) {
        (0..grid.len()).filter(|&i| grid.excluded[i] != keep).map(|i| (pred[i], reference[i])).unzip()
    };
    let (p, r) = split(true);
    let main = metrics(&p, &r)?;
    let (pb, rb) = split(false);
    let band = if pb.is_empty() { None } else { Some(metrics(&pb, &rb)?) };
    Ok((main, band))
}

// ---------------------------------------------------------------- problems

/// `-u'' = f` on `(0, 3/2)` with exact solution `x cos(ωx)`.
pub fn poisson1d(omega: f64) -> Result<ProblemSpec> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(DgnnError::InvalidArgument(format!("frequency must be positive, got {omega}")));
    }
    let u = move |x: f64| x * (omega * x).cos();
    let du = move |x: f64| (omega * x).cos() - omega * x * (omega * x).sin();
    let f = move |x: f64| 2.0 * omega * (omega * x).sin() + omega * omega * x * (omega * x).cos();
    let coeffs = PdeCoefficients::stationary(1.0, Arc::new(move |x, _| f(x[0])), Arc::new(move |x, _| u(x[0])));
    Ok(ProblemSpec {
        name: "poisson1d".into(),
        domain: Domain::Interval { a: 0.0, b: 1.5, periodic: false },
        coeffs,
        reference: Reference::Analytic {
            value: Arc::new(move |x, _| u(x[0])),
            jet: Arc::new(move |x: &[f64]| vec![u(x[0]), du(x[0])]),
        },
        s_min: None,
    })
}

/// `-Δu = 2π² sin(πx) sin(πy)` on the unit square, `u = 0` on the boundary.
pub fn square_sine() -> ProblemSpec {
    let u = |x: Point2| (PI * x[0]).sin() * (PI * x[1]).sin();
    let coeffs = PdeCoefficients::stationary(1.0, Arc::new(move |x, _| 2.0 * PI * PI * u(x)), Arc::new(|_, _| 0.0));
    ProblemSpec {
        name: "square".into(),
        domain: Domain::Rectangle { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 },
        coeffs,
        reference: Reference::Analytic {
            value: Arc::new(move |x, _| u(x)),
            jet: Arc::new(|x: &[f64]| {
                let (sx, cx) = (PI * x[0]).sin_cos();
                let (sy, cy) = (PI * x[1]).sin_cos();
                vec![sx * sy, PI * cx * sy, PI * sx * cy]
            }),
        },
        s_min: None,
    }
}

/// Degree of the classical DG reference on the pentagon.
pub const PENTAGON_REFERENCE_DEGREE: usize = 2;
/// Uniform refinements of the training mesh used for the reference.
pub const PENTAGON_REFERENCE_REFINEMENTS: usize = 2;

pub fn pentagon_mesh(s_min: f64) -> Result<Mesh2D> {
    triangulate_polygon(&regular_pentagon(), s_min)
}

/// Classical DG field used as the pentagon reference.
pub fn pentagon_reference(s_min: f64) -> Result<DgSolution> {
    let mut mesh = pentagon_mesh(s_min)?;
    for _ in 0..PENTAGON_REFERENCE_REFINEMENTS {
        mesh = mesh.refine_uniform()?;
    }
    DgSolution::compute(&mesh, &IpdgConfig::new(PENTAGON_REFERENCE_DEGREE), &|_| 10.0, &|_| 0.0)
}

/// `-Δu = 10` on the regular pentagon with homogeneous Dirichlet data.
pub fn pentagon_poisson(s_min: f64) -> Result<ProblemSpec> {
    if !(s_min > 0.0) {
        return Err(DgnnError::InvalidArgument(format!("s_min must be positive, got {s_min}")));
    }
    let reference = pentagon_reference(s_min)?;
    Ok(pentagon_with_reference(s_min, Arc::new(reference)))
}

/// Pentagon problem bound to an already computed reference.
pub fn pentagon_with_reference(s_min: f64, reference: Arc<DgSolution>) -> ProblemSpec {
    ProblemSpec {
        name: "pentagon".into(),
        domain: Domain::Polygon { vertices: regular_pentagon() },
        coeffs: PdeCoefficients::stationary(1.0, Arc::new(|_, _| 10.0), Arc::new(|_, _| 0.0)),
        reference: Reference::Oracle(reference),
        s_min: Some(s_min),
    }
}

pub const BURGERS_HORIZON: f64 = 1.5;
/// Half-width of the band around the shock left out of the main metrics.
pub const SHOCK_BAND: f64 = 0.05;

pub fn shock_position(t: f64) -> f64 {
    PI + 0.5 * t
}

/// `u_t + (u²/2)_x = 0` on the periodic interval `[0, 2π]`, `u₀ = sin x + 1/2`.
pub fn burgers() -> ProblemSpec {
    let coeffs = PdeCoefficients {
        diffusion: 0.0,
        convection: Convection::Burgers { direction: [1.0, 0.0] },
        source: Arc::new(|_, _| 0.0),
        dirichlet: Arc::new(|_, _| 0.0),
        initial: Some(Arc::new(|x: Point2| x[0].sin() + 0.5)),
        horizon: BURGERS_HORIZON,
        jump_coefficient: 1.0,
    };
    ProblemSpec {
        name: "burgers".into(),
        domain: Domain::Interval { a: 0.0, b: 2.0 * PI, periodic: true },
        coeffs,
        reference: Reference::Characteristic(BurgersReference::default()),
        s_min: None,
    }
}

/// Entropy solution of the Burgers problem by characteristics.
///
/// With `z = x − t/2` the shifted field `w = u − 1/2` solves
/// `w = sin(z − w t)`, odd in `z` with the shock at `z = ±π`. On
/// `z ∈ [0, π)` the root lies in `[0, 1]` and is unique there, so Newton is
/// seeded at `+0.8` left of the shock and `−0.8` right of it, with bisection
/// on the bracket as a fallback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BurgersReference {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: f64,
}

impl Default for BurgersReference {
    fn default() -> Self {
        BurgersReference { tol: 1e-12, max_iter: 100, seed: 0.8 }
    }
}

/// `z` wrapped into `(−π, π]`.
fn wrap(z: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let r = z - two_pi * ((z + PI) / two_pi).floor();
    if r <= -PI {
        r + two_pi
    } else {
        r
    }
}

impl BurgersReference {
    fn residual(z: f64, t: f64, w: f64) -> f64 {
        w - (z - w * t).sin()
    }

    /// Newton from `seed` on `h(w) = w − sin(z − wt)`; `None` when it does
    /// not settle inside `[lo, hi]`.
    fn newton(&self, z: f64, t: f64, seed: f64, lo: f64, hi: f64) -> Option<f64> {
        let mut w = seed;
        for _ in 0..self.max_iter {
            let h = Self::residual(z, t, w);
            let dh = 1.0 + t * (z - w * t).cos();
            if dh.abs() < 1e-14 {
                return None;
            }
            let step = h / dh;
            w -= step;
            if !w.is_finite() {
                return None;
            }
            if step.abs() <= 1e-15 * w.abs().max(1.0) {
                break;
            }
        }
        let ok = Self::residual(z, t, w).abs() <= self.tol && w >= lo - 1e-14 && w <= hi + 1e-14;
        ok.then_some(w)
    }

    fn bisect(&self, z: f64, t: f64, mut lo: f64, mut hi: f64) -> Option<f64> {
        let mut hlo = Self::residual(z, t, lo);
        if hlo > 0.0 || Self::residual(z, t, hi) < 0.0 {
            return None;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let hm = Self::residual(z, t, mid);
            if hm <= 0.0 {
                lo = mid;
                hlo = hm;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-16 {
                break;
            }
        }
        let _ = hlo;
        let w = 0.5 * (lo + hi);
        (Self::residual(z, t, w).abs() <= self.tol).then_some(w)
    }

    /// Shifted state `w(x, t)`; at the shock itself the left state is used.
    pub fn solve_w(&self, x: f64, t: f64) -> Result<f64> {
        if !x.is_finite() || !t.is_finite() || t < 0.0 {
            return Err(DgnnError::ReferenceSolve { x, t });
        }
        let z = wrap(x - 0.5 * t);
        let (za, sign) = if z >= 0.0 { (z, 1.0) } else { (-z, -1.0) };
        if za == 0.0 {
            return Ok(0.0);
        }
        let w = self
            .newton(za, t, self.seed, 0.0, 1.0)
            .or_else(|| self.bisect(za, t, 0.0, 1.0))
            .ok_or(DgnnError::ReferenceSolve { x, t })?;
        Ok(sign * w)
    }

    pub fn value(&self, x: f64, t: f64) -> Result<f64> {
        Ok(self.solve_w(x, t)? + 0.5)
    }

    /// `∂u/∂x` from the characteristic map, `cos z₀ / (1 + t cos z₀)`.
    pub fn slope(&self, x: f64, t: f64) -> Result<f64> {
        let w = self.solve_w(x, t)?;
        let z0 = x - 0.5 * t - w * t;
        let c = z0.cos();
        Ok(c / (1.0 + t * c))
    }

    /// Residual of the implicit equation at the returned state.
    pub fn implicit_residual(&self, x: f64, t: f64) -> Result<f64> {
        let w = self.solve_w(x, t)?;
        Ok((w - (x - w * t - 0.5 * t).sin()).abs())
    }
}
