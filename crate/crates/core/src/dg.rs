//! Interior-penalty DG for `-Δu = f`, `u = g` on the Dirichlet boundary.
//!
//! Unknowns are the coefficients of the reference monomials on every element,
//! ordered element-major.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::basis::{monomial, TestBasis};
use crate::error::{DgnnError, Result};
use crate::geometry::{AffineMap, EdgeKind, Mesh2D, Point2};
use crate::quadrature::{edge_rule, triangle_rule, QuadRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IpdgConfig {
    /// -1 symmetric, 0 incomplete, +1 non-symmetric.
    pub epsilon: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub degree: usize,
}

impl IpdgConfig {
    pub fn new(degree: usize) -> Self {
        let k = degree.max(1) as f64;
        Self { epsilon: -1.0, sigma0: 10.0 * k * k, sigma1: 0.1, degree }
    }

    pub fn validate(&self) -> Result<()> {
        if ![-1.0, 0.0, 1.0].contains(&self.epsilon) {
            return Err(DgnnError::InvalidArgument(format!("epsilon must be -1, 0 or 1, got {}", self.epsilon)));
        }
        let k = self.degree.max(1) as f64;
        if !(self.sigma0 > 0.0) || (self.epsilon == -1.0 && self.sigma0 < 10.0 * k * k) {
            return Err(DgnnError::InvalidArgument(format!(
                "sigma0 = {} too small for coercivity (need >= {})",
                self.sigma0,
                10.0 * k * k
            )));
        }
        if !(self.sigma1 >= 0.0) {
            return Err(DgnnError::InvalidArgument("sigma1 must be non-negative".into()));
        }
        Ok(())
    }
}

/// Smallest symmetric triangle rule exact to `degree`.
pub fn volume_rule_for(degree: usize) -> Result<QuadRule> {
    for n in [1, 3, 6, 12, 15, 16, 25] {
        let r = triangle_rule(n)?;
        if r.exact_degree >= degree {
            return Ok(r);
        }
    }
    let m = degree / 2 + 2;
    triangle_rule(m * m)
}

#[derive(Debug, Clone)]
pub struct DgSolution {
    pub coefficients: Vec<f64>,
    pub degree: usize,
    pub exponents: Vec<[usize; 2]>,
    pub mesh: Mesh2D,
    /// `‖AU − F‖ / ‖F‖` (absolute when `F = 0`).
    pub residual: f64,
}

struct Trace {
    phi: Vec<f64>,
    dn: Vec<f64>,
}

fn trace(exps: &[[usize; 2]], map: &AffineMap, x: Point2, n: Point2) -> Trace {
    let xh = map.inverse(x);
    let mut phi = Vec::with_capacity(exps.len());
    let mut dn = Vec::with_capacity(exps.len());
    for &e in exps {
        let (v, g) = monomial(e, xh);
        let g = map.push_gradient(g);
        phi.push(v);
        dn.push(g[0] * n[0] + g[1] * n[1]);
    }
    Trace { phi, dn }
}

/// Element-block sparse matrix; block `(r, c)` is `nb × nb`, row-major.
#[derive(Debug, Clone)]
pub struct BlockSparse {
    pub nb: usize,
    rows: Vec<Vec<(usize, Vec<f64>)>>,
}

impl BlockSparse {
    pub fn new(n_elements: usize, nb: usize) -> Self {
        Self { nb, rows: vec![Vec::new(); n_elements] }
    }

    pub fn dim(&self) -> usize {
        self.rows.len() * self.nb
    }

    fn block_mut(&mut self, r: usize, c: usize) -> &mut Vec<f64> {
        let nb = self.nb;
        let row = &mut self.rows[r];
        let pos = match row.iter().position(|(k, _)| *k == c) {
            Some(p) => p,
            None => {
                row.push((c, vec![0.0; nb * nb]));
                row.len() - 1
            }
        };
        &mut row[pos].1
    }

    pub fn add(&mut self, r: usize, c: usize, i: usize, j: usize, v: f64) {
        let nb = self.nb;
        self.block_mut(r, c)[i * nb + j] += v;
    }

    pub fn block(&self, r: usize, c: usize) -> Option<&[f64]> {
        self.rows[r].iter().find(|(k, _)| *k == c).map(|(_, b)| b.as_slice())
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let nb = self.nb;
        for (r, row) in self.rows.iter().enumerate() {
            let yr = &mut y[r * nb..(r + 1) * nb];
            yr.iter_mut().for_each(|v| *v = 0.0);
            for (c, b) in row {
                let xc = &x[c * nb..(c + 1) * nb];
                for i in 0..nb {
                    yr[i] += b[i * nb..(i + 1) * nb].iter().zip(xc).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let nb = self.nb;
        let mut a = DMatrix::zeros(self.dim(), self.dim());
        for (r, row) in self.rows.iter().enumerate() {
            for (c, b) in row {
                for i in 0..nb {
                    for j in 0..nb {
                        a[(r * nb + i, c * nb + j)] = b[i * nb + j];
                    }
                }
            }
        }
        a
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let nb = self.nb;
        let scale = self.rows.iter().flat_map(|r| r.iter().flat_map(|(_, b)| b.iter())).fold(0.0f64, |m, v| m.max(v.abs()));
        self.rows.iter().enumerate().all(|(r, row)| {
            row.iter().all(|(c, b)| match self.block(*c, r) {
                Some(t) => (0..nb).all(|i| (0..nb).all(|j| (b[i * nb + j] - t[j * nb + i]).abs() <= tol * scale)),
                None => false,
            })
        })
    }
}

/// Assembles `A U = F` densely with the given volume rule.
pub fn assemble(
    mesh: &Mesh2D,
    basis: &TestBasis,
    config: &IpdgConfig,
    f: &dyn Fn(Point2) -> f64,
    g: &dyn Fn(Point2) -> f64,
    volume_rule: &QuadRule,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (a, rhs) = assemble_sparse(mesh, basis, config, f, g, volume_rule)?;
    Ok((a.to_dense(), DVector::from_vec(rhs)))
}

/// Assembles `A U = F` in element-block form.
pub fn assemble_sparse(
    mesh: &Mesh2D,
    basis: &TestBasis,
    config: &IpdgConfig,
    f: &dyn Fn(Point2) -> f64,
    g: &dyn Fn(Point2) -> f64,
    volume_rule: &QuadRule,
) -> Result<(BlockSparse, Vec<f64>)> {
    config.validate()?;
    if basis.dim != 2 || basis.degree != config.degree || basis.n_points != volume_rule.len() {
        return Err(DgnnError::ShapeMismatch("basis does not match config degree or volume rule".into()));
    }
    let k = config.degree;
    if volume_rule.exact_degree < 2 * k {
        return Err(DgnnError::InsufficientQuadrature { have: volume_rule.exact_degree, need: 2 * k });
    }
    let nb = basis.len();
    let ne = mesh.num_elements();
    let mut a = BlockSparse::new(ne, nb);
    let mut rhs = vec![0.0; ne * nb];
    let maps: Vec<AffineMap> = (0..ne).map(|e| mesh.affine(e)).collect::<Result<_>>()?;

    for (e, map) in maps.iter().enumerate() {
        let grads = basis.push_forward_gradients(map)?;
        let jac = map.jacobian();
        let off = e * nb;
        for q in 0..volume_rule.len() {
            let w = volume_rule.weights[q] * jac;
            let x = map.map(volume_rule.points[q]);
            let fx = f(x);
            for i in 0..nb {
                let gi = grads[i * basis.n_points + q];
                rhs[off + i] += w * fx * basis.value(i, q);
                for j in 0..nb {
                    let gj = grads[j * basis.n_points + q];
                    a.add(e, e, i, j, w * (gi[0] * gj[0] + gi[1] * gj[1]));
                }
            }
        }
    }

    let n_edge = k + 2;
    let eps = config.epsilon;
    for edge in &mesh.edges {
        let p = mesh.vertices[edge.vertices[0]];
        let q = mesh.vertices[edge.vertices[1]];
        let rule = edge_rule(n_edge, p, q)?;
        let h = edge.length;
        let n = edge.normal;
        let lmap = &maps[edge.left];
        match (edge.kind, edge.right) {
            (EdgeKind::Dirichlet, _) => {
                let off = edge.left * nb;
                for (x, &w) in rule.points.iter().zip(&rule.weights) {
                    let t = trace(&basis.exponents, lmap, *x, n);
                    let gx = g(*x);
                    for i in 0..nb {
                        rhs[off + i] += w * (eps * t.dn[i] * gx + config.sigma0 / h * gx * t.phi[i]);
                        for j in 0..nb {
                            let v = -t.dn[j] * t.phi[i] + eps * t.dn[i] * t.phi[j] + config.sigma0 / h * t.phi[i] * t.phi[j];
                            a.add(edge.left, edge.left, i, j, w * v);
                        }
                    }
                }
            }
            (_, Some(right)) => {
                let rmap = &maps[right];
                let [rp, rq] = mesh.right_trace_endpoints(edge);
                let rrule = edge_rule(n_edge, rp, rq)?;
                for s in 0..rule.len() {
                    let w = rule.weights[s];
                    let sides = [
                        (edge.left, 1.0, trace(&basis.exponents, lmap, rule.points[s], n)),
                        (right, -1.0, trace(&basis.exponents, rmap, rrule.points[s], n)),
                    ];
                    for (te, ts, tt) in &sides {
                        for (ue, us, ut) in &sides {
                            for i in 0..nb {
                                for j in 0..nb {
                                    let v = -0.5 * ut.dn[j] * ts * tt.phi[i]
                                        + eps * 0.5 * tt.dn[i] * us * ut.phi[j]
                                        + config.sigma0 / h * ts * us * tt.phi[i] * ut.phi[j]
                                        + config.sigma1 * h * ts * us * tt.dn[i] * ut.dn[j];
                                    a.add(*te, *ue, i, j, w * v);
                                }
                            }
                        }
                    }
                }
            }
            _ => return Err(DgnnError::InvalidArgument("interior edge without a right element".into())),
        }
    }
    Ok((a, rhs))
}

fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Dense LU solve; rejects the result unless `‖AU − F‖ ≤ 1e-10 ‖F‖`.
pub fn solve(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    if a.nrows() != a.ncols() || a.nrows() != rhs.len() {
        return Err(DgnnError::ShapeMismatch(format!("{}x{} system with rhs {}", a.nrows(), a.ncols(), rhs.len())));
    }
    let lu = a.clone().lu();
    let u = match lu.solve(rhs) {
        Some(u) if u.iter().all(|v| v.is_finite()) => u,
        _ => return Err(DgnnError::SingularSystem { condition: condition_estimate(a) }),
    };
    let r = (a * &u - rhs).norm();
    let scale = rhs.norm();
    let rel = if scale > 0.0 { r / scale } else { r };
    if rel > 1e-10 {
        return Err(DgnnError::SingularSystem { condition: condition_estimate(a) });
    }
    Ok((u, rel))
}

/// Largest system solved by dense LU; larger ones go to a Krylov method.
pub const DENSE_LIMIT: usize = 1500;

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dotv(a, a).sqrt()
}

/// Inverted diagonal blocks.
struct BlockJacobi {
    nb: usize,
    inv: Vec<DMatrix<f64>>,
}

impl BlockJacobi {
    fn new(a: &BlockSparse) -> Result<Self> {
        let nb = a.nb;
        let inv = (0..a.rows.len())
            .map(|e| {
                let b = a.block(e, e).ok_or(DgnnError::SingularSystem { condition: f64::INFINITY })?;
                DMatrix::from_row_slice(nb, nb, b).try_inverse().ok_or(DgnnError::SingularSystem { condition: f64::INFINITY })
            })
            .collect::<Result<_>>()?;
        Ok(Self { nb, inv })
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let nb = self.nb;
        for (e, m) in self.inv.iter().enumerate() {
            let re = &r[e * nb..(e + 1) * nb];
            for i in 0..nb {
                z[e * nb + i] = (0..nb).map(|j| m[(i, j)] * re[j]).sum();
            }
        }
    }
}

/// Block-Jacobi preconditioned CG (symmetric systems) or BiCGSTAB.
fn krylov(a: &BlockSparse, rhs: &[f64], symmetric: bool) -> Result<Vec<f64>> {
    let n = a.dim();
    let pre = BlockJacobi::new(a)?;
    let bnorm = norm(rhs).max(f64::MIN_POSITIVE);
    let tol = 1e-13 * bnorm;
    let max_iter = 20 * n + 100;
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z = vec![0.0; n];
    let mut ap = vec![0.0; n];
    if symmetric {
        pre.apply(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dotv(&r, &z);
        for _ in 0..max_iter {
            if norm(&r) <= tol {
                return Ok(x);
            }
            a.matvec(&p, &mut ap);
            let alpha = rz / dotv(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            pre.apply(&r, &mut z);
            let rz1 = dotv(&r, &z);
            let beta = rz1 / rz;
            rz = rz1;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    } else {
        let r0 = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut ph = vec![0.0; n];
        let mut sh = vec![0.0; n];
        let mut t = vec![0.0; n];
        for _ in 0..max_iter {
            if norm(&r) <= tol {
                return Ok(x);
            }
            let rho1 = dotv(&r0, &r);
            let beta = (rho1 / rho) * (alpha / omega);
            rho = rho1;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            pre.apply(&p, &mut ph);
            a.matvec(&ph, &mut v);
            alpha = rho / dotv(&r0, &v);
            let mut s_vec = r.clone();
            for i in 0..n {
                s_vec[i] -= alpha * v[i];
            }
            pre.apply(&s_vec, &mut sh);
            a.matvec(&sh, &mut t);
            omega = dotv(&t, &s_vec) / dotv(&t, &t);
            for i in 0..n {
                x[i] += alpha * ph[i] + omega * sh[i];
                r[i] = s_vec[i] - omega * t[i];
            }
            if !omega.is_finite() || omega == 0.0 {
                break;
            }
        }
    }
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(DgnnError::SingularSystem { condition: f64::NAN })
    }
}

/// Dense LU for small systems, Krylov otherwise; same residual acceptance as
/// [`solve`].
pub fn solve_sparse(a: &BlockSparse, rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
    if a.dim() != rhs.len() {
        return Err(DgnnError::ShapeMismatch(format!("{} unknowns with rhs {}", a.dim(), rhs.len())));
    }
    if a.dim() <= DENSE_LIMIT {
        let (u, rel) = solve(&a.to_dense(), &DVector::from_column_slice(rhs))?;
        return Ok((u.iter().copied().collect(), rel));
    }
    let u = krylov(a, rhs, a.is_symmetric(1e-12))?;
    let mut au = vec![0.0; u.len()];
    a.matvec(&u, &mut au);
    let r: Vec<f64> = au.iter().zip(rhs).map(|(x, y)| x - y).collect();
    let scale = norm(rhs);
    let rel = if scale > 0.0 { norm(&r) / scale } else { norm(&r) };
    if !(rel <= 1e-10) {
        return Err(DgnnError::SingularSystem { condition: f64::NAN });
    }
    Ok((u, rel))
}

impl DgSolution {
    /// Assembles and solves on `mesh` with a rule exact to `2k + 2`.
    pub fn compute(
        mesh: &Mesh2D,
        config: &IpdgConfig,
        f: &dyn Fn(Point2) -> f64,
        g: &dyn Fn(Point2) -> f64,
    ) -> Result<Self> {
        let rule = volume_rule_for(2 * config.degree + 2)?;
        let basis = TestBasis::build(2, config.degree, &rule)?;
        let (a, rhs) = assemble_sparse(mesh, &basis, config, f, g, &rule)?;
        let (u, residual) = solve_sparse(&a, &rhs)?;
        Ok(Self {
            coefficients: u,
            degree: config.degree,
            exponents: basis.exponents.clone(),
            mesh: mesh.clone(),
            residual,
        })
    }

    /// Value of element `e`'s polynomial at reference point `xh`.
    pub fn value_on(&self, e: usize, xh: Point2) -> f64 {
        let nb = self.exponents.len();
        self.exponents.iter().enumerate().map(|(i, &ex)| self.coefficients[e * nb + i] * monomial(ex, xh).0).sum()
    }

    pub fn evaluate(&self, points: &[Point2]) -> Result<Vec<f64>> {
        points
            .iter()
            .map(|&p| {
                let (e, xh) = self.mesh.locate(p).ok_or(DgnnError::Locate { x: p[0], y: p[1] })?;
                Ok(self.value_on(e, xh))
            })
            .collect()
    }

    /// `∫ (u_h − u)²` with a degree-10 rule.
    pub fn l2_error(&self, exact: &dyn Fn(Point2) -> f64) -> Result<f64> {
        let rule = triangle_rule(25)?;
        let mut s = 0.0;
        for e in 0..self.mesh.num_elements() {
            let map = self.mesh.affine(e)?;
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let d = self.value_on(e, *p) - exact(map.map(*p));
                s += w * map.jacobian() * d * d;
            }
        }
        Ok(s.sqrt())
    }
}

#[cfg(test)]
mod krylov_tests {
    use super::*;

    #[test]
    fn krylov_matches_dense() {
        let mesh = Mesh2D::structured_rectangle(0.0, 1.0, 0.0, 1.0, 6, 6).unwrap();
        for eps in [-1.0, 1.0] {
            let cfg = IpdgConfig { epsilon: eps, ..IpdgConfig::new(2) };
            let rule = volume_rule_for(6).unwrap();
            let basis = TestBasis::build(2, 2, &rule).unwrap();
            let f = |x: Point2| (3.0 * x[0]).sin() + x[1];
            let (a, rhs) = assemble_sparse(&mesh, &basis, &cfg, &f, &|x| x[0] * x[1], &rule).unwrap();
            assert_eq!(a.is_symmetric(1e-12), eps == -1.0);
            let (ud, _) = solve(&a.to_dense(), &DVector::from_column_slice(&rhs)).unwrap();
            let uk = krylov(&a, &rhs, eps == -1.0).unwrap();
            let err = ud.iter().zip(&uk).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-9 * ud.amax(), "eps {eps}: {err}");
        }
    }
}
