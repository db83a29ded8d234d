use crate::error::{DgnnError, Result};

use super::Point2;

/// Affine map `x = B x̂ + b` from a reference element onto a physical one.
///
/// In 1D only the `[0][0]` entries of the matrices are meaningful; the
/// reference interval is `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub dim: usize,
    pub matrix: [[f64; 2]; 2],
    pub offset: Point2,
    pub det: f64,
    pub inv_transpose: [[f64; 2]; 2],
}

impl AffineMap {
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        let h = b - a;
        if !(h.abs() > 0.0) || !h.is_finite() {
            return Err(DgnnError::SingularMap { element: 0, det: h });
        }
        Ok(Self {
            dim: 1,
            matrix: [[h, 0.0], [0.0, 0.0]],
            offset: [a, 0.0],
            det: h,
            inv_transpose: [[1.0 / h, 0.0], [0.0, 0.0]],
        })
    }

    pub fn triangle(p1: Point2, p2: Point2, p3: Point2) -> Result<Self> {
        let m = [[p2[0] - p1[0], p3[0] - p1[0]], [p2[1] - p1[1], p3[1] - p1[1]]];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let scale = (m[0][0].abs() + m[0][1].abs()).max(m[1][0].abs() + m[1][1].abs());
        if !det.is_finite() || det.abs() <= 1e-14 * scale * scale || scale == 0.0 {
            return Err(DgnnError::SingularMap { element: 0, det });
        }
        // B^{-T} = (1/det) [[d, -c], [-b, a]] for B = [[a, b], [c, d]].
        let inv_t = [
            [m[1][1] / det, -m[1][0] / det],
            [-m[0][1] / det, m[0][0] / det],
        ];
        Ok(Self { dim: 2, matrix: m, offset: p1, det, inv_transpose: inv_t })
    }

    pub fn map(&self, xh: Point2) -> Point2 {
        if self.dim == 1 {
            return [self.matrix[0][0] * xh[0] + self.offset[0], 0.0];
        }
        let m = &self.matrix;
        [
            m[0][0] * xh[0] + m[0][1] * xh[1] + self.offset[0],
            m[1][0] * xh[0] + m[1][1] * xh[1] + self.offset[1],
        ]
    }

    /// Reference coordinates of a physical point.
    pub fn inverse(&self, x: Point2) -> Point2 {
        let d = [x[0] - self.offset[0], x[1] - self.offset[1]];
        if self.dim == 1 {
            return [d[0] * self.inv_transpose[0][0], 0.0];
        }
        // B^{-1} = (B^{-T})^T
        let it = &self.inv_transpose;
        [it[0][0] * d[0] + it[1][0] * d[1], it[0][1] * d[0] + it[1][1] * d[1]]
    }

    /// Physical gradient `B^{-T} ∇̂v` of a reference gradient.
    pub fn push_gradient(&self, g: Point2) -> Point2 {
        if self.dim == 1 {
            return [self.inv_transpose[0][0] * g[0], 0.0];
        }
        let it = &self.inv_transpose;
        [it[0][0] * g[0] + it[0][1] * g[1], it[1][0] * g[0] + it[1][1] * g[1]]
    }

    /// `|det B|`: twice the triangle area, or the interval length.
    pub fn jacobian(&self) -> f64 {
        self.det.abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_triangle_is_identity() {
        let m = AffineMap::triangle([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]).unwrap();
        assert_eq!(m.matrix, [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(m.offset, [0.0, 0.0]);
        assert_eq!(m.det, 1.0);
    }

    #[test]
    fn determinant_is_twice_area() {
        let m = AffineMap::triangle([1.0, 1.0], [3.0, 1.0], [1.0, 2.0]).unwrap();
        assert_eq!(m.det, 2.0);
        let v = [m.map([0.0, 0.0]), m.map([1.0, 0.0]), m.map([0.0, 1.0])];
        assert_eq!(v, [[1.0, 1.0], [3.0, 1.0], [1.0, 2.0]]);
    }

    #[test]
    fn interval_map() {
        let m = AffineMap::interval(0.3, 0.6).unwrap();
        assert!((m.matrix[0][0] - 0.3).abs() < 1e-15);
        assert_eq!(m.offset[0], 0.3);
        assert!((m.map([1.0, 0.0])[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn inverse_transpose_consistent() {
        let m = AffineMap::triangle([0.2, -0.1], [1.3, 0.4], [-0.5, 0.9]).unwrap();
        // B^{-T}^T B = I
        let b = m.matrix;
        let it = m.inv_transpose;
        for i in 0..2 {
            for j in 0..2 {
                let s: f64 = (0..2).map(|k| it[k][i] * b[k][j]).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((s - e).abs() < 1e-12);
            }
        }
        let x = m.map([0.25, 0.4]);
        let back = m.inverse(x);
        assert!((back[0] - 0.25).abs() < 1e-13 && (back[1] - 0.4).abs() < 1e-13);
    }

    #[test]
    fn degenerate_element_rejected() {
        assert!(matches!(
            AffineMap::triangle([0.0, 0.0], [1.0, 1.0], [2.0, 2.0]),
            Err(DgnnError::SingularMap { .. })
        ));
        assert!(AffineMap::interval(1.0, 1.0).is_err());
    }
}
