//! Monomial test spaces on reference elements.

use serde::Serialize;

use crate::error::{DgnnError, Result};
use crate::geometry::{AffineMap, Point2};
use crate::quadrature::QuadRule;

/// Highest supported test degree; raw monomials lose conditioning past it.
pub const MAX_TEST_DEGREE: usize = 10;

/// Monomials `x̂^a ŷ^b` with `a + b ≤ k`, tabulated on a reference rule.
#[derive(Debug, Clone, Serialize)]
pub struct TestBasis {
    pub dim: usize,
    pub degree: usize,
    /// `(a, b)` exponents; `b = 0` in 1D. Ordered by total degree, then by
    /// descending power of `ŷ` (`x^j y^{i-j}` for `j = 0..=i`).
    pub exponents: Vec<[usize; 2]>,
    /// `values[b * n_points + q]`.
    pub values: Vec<f64>,
    /// Reference gradients, same layout as `values`.
    pub gradients: Vec<Point2>,
    pub n_points: usize,
}

fn powi(x: f64, n: usize) -> f64 {
    if n == 0 {
        1.0
    } else {
        x.powi(n as i32)
    }
}

/// Exponent list of the degree-`k` space.
pub fn exponents(dim: usize, k: usize) -> Vec<[usize; 2]> {
    match dim {
        1 => (0..=k).map(|i| [i, 0]).collect(),
        _ => (0..=k).flat_map(|i| (0..=i).map(move |j| [j, i - j])).collect(),
    }
}

/// Value and reference gradient of `x̂^a ŷ^b`.
pub fn monomial(e: [usize; 2], x: Point2) -> (f64, Point2) {
    let [a, b] = e;
    let v = powi(x[0], a) * powi(x[1], b);
    let gx = if a == 0 { 0.0 } else { a as f64 * powi(x[0], a - 1) * powi(x[1], b) };
    let gy = if b == 0 { 0.0 } else { b as f64 * powi(x[0], a) * powi(x[1], b - 1) };
    (v, [gx, gy])
}

impl TestBasis {
    pub fn build(dim: usize, k: usize, rule: &QuadRule) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(DgnnError::InvalidArgument(format!("test basis dimension must be 1 or 2, got {dim}")));
        }
        if k > MAX_TEST_DEGREE {
            return Err(DgnnError::InvalidArgument(format!("test degree {k} exceeds {MAX_TEST_DEGREE}")));
        }
        let exponents = exponents(dim, k);
        let n_points = rule.len();
        let mut values = Vec::with_capacity(exponents.len() * n_points);
        let mut gradients = Vec::with_capacity(exponents.len() * n_points);
        for &e in &exponents {
            for p in &rule.points {
                let (v, g) = monomial(e, *p);
                values.push(v);
                gradients.push(g);
            }
        }
        Ok(Self { dim, degree: k, exponents, values, gradients, n_points })
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn value(&self, basis: usize, point: usize) -> f64 {
        self.values[basis * self.n_points + point]
    }

    pub fn gradient(&self, basis: usize, point: usize) -> Point2 {
        self.gradients[basis * self.n_points + point]
    }

    /// All basis values and reference gradients at an arbitrary reference point.
    pub fn eval_at(&self, x: Point2) -> (Vec<f64>, Vec<Point2>) {
        self.exponents.iter().map(|&e| monomial(e, x)).unzip()
    }

    /// Gradient table mapped to physical coordinates with `B^{-T}`.
    pub fn push_forward_gradients(&self, map: &AffineMap) -> Result<Vec<Point2>> {
        if map.dim != self.dim {
            return Err(DgnnError::ShapeMismatch(format!(
                "basis is {}D but the map is {}D",
                self.dim, map.dim
            )));
        }
        if map.det == 0.0 || !map.det.is_finite() {
            return Err(DgnnError::SingularMap { element: 0, det: map.det });
        }
        Ok(self.gradients.iter().map(|g| map.push_gradient(*g)).collect())
    }
}
