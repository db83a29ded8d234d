use serde::Serialize;

use crate::error::{DgnnError, Result};

use super::{AffineMap, EdgeKind};

/// Partition of `[a, b]` into consecutive intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mesh1D {
    pub nodes: Vec<f64>,
    pub elements: Vec<[usize; 2]>,
    pub periodic: bool,
}

/// A point interface between 1D elements.
///
/// `left` is the element on the low-x side so the stored normal is `+1`.
/// For the periodic pair `left` is the last element (trace at `b`) and
/// `right` the first (trace at `a`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interface1D {
    pub kind: EdgeKind,
    pub left: Option<usize>,
    pub right: Option<usize>,
    /// Physical location seen from `left` and from `right`.
    pub left_x: f64,
    pub right_x: f64,
}

impl Mesh1D {
    pub fn partition_interval(a: f64, b: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(DgnnError::InvalidArgument("interval partition needs N >= 1".into()));
        }
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(DgnnError::InvalidArgument(format!("need a < b, got [{a}, {b}]")));
        }
        let h = (b - a) / n as f64;
        let mut nodes: Vec<f64> = (0..=n).map(|i| a + i as f64 * h).collect();
        nodes[n] = b;
        let elements = (0..n).map(|i| [i, i + 1]).collect();
        Ok(Self { nodes, elements, periodic: false })
    }

    pub fn with_periodic(mut self, periodic: bool) -> Self {
        self.periodic = periodic;
        self
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn start(&self) -> f64 {
        self.nodes[0]
    }

    pub fn end(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn element_bounds(&self, e: usize) -> (f64, f64) {
        let [i, j] = self.elements[e];
        (self.nodes[i], self.nodes[j])
    }

    pub fn affine(&self, e: usize) -> Result<AffineMap> {
        let (a, b) = self.element_bounds(e);
        AffineMap::interval(a, b).map_err(|_| DgnnError::SingularMap { element: e, det: b - a })
    }

    /// Element containing `x`; ties on interior nodes go to the right element.
    pub fn locate(&self, x: f64) -> Option<usize> {
        let (a, b) = (self.start(), self.end());
        if x < a || x > b {
            return None;
        }
        let idx = self.nodes.partition_point(|&n| n <= x);
        Some(idx.saturating_sub(1).min(self.num_elements() - 1))
    }

    /// Interfaces in node order. A periodic mesh pairs its endpoints into a
    /// single record appended last.
    pub fn interfaces(&self) -> Vec<Interface1D> {
        let n = self.num_elements();
        let mut out = Vec::with_capacity(n + 1);
        if !self.periodic {
            out.push(Interface1D {
                kind: EdgeKind::Dirichlet,
                left: None,
                right: Some(0),
                left_x: self.start(),
                right_x: self.start(),
            });
        }
        for i in 1..n {
            let x = self.nodes[i];
            out.push(Interface1D {
                kind: EdgeKind::Interior,
                left: Some(i - 1),
                right: Some(i),
                left_x: x,
                right_x: x,
            });
        }
        if self.periodic {
            out.push(Interface1D {
                kind: EdgeKind::Periodic,
                left: Some(n - 1),
                right: Some(0),
                left_x: self.end(),
                right_x: self.start(),
            });
        } else {
            out.push(Interface1D {
                kind: EdgeKind::Dirichlet,
                left: Some(n - 1),
                right: None,
                left_x: self.end(),
                right_x: self.end(),
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_cells_on_poisson_domain() {
        let m = Mesh1D::partition_interval(0.0, 1.5, 5).unwrap();
        let expect = [0.0, 0.3, 0.6, 0.9, 1.2, 1.5];
        for (a, b) in m.nodes.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(m.num_elements(), 5);
    }

    #[test]
    fn single_cell() {
        let m = Mesh1D::partition_interval(0.0, 1.0, 1).unwrap();
        assert_eq!(m.nodes, vec![0.0, 1.0]);
        assert_eq!(m.elements, vec![[0, 1]]);
    }

    #[test]
    fn burgers_partition() {
        let tau = 2.0 * std::f64::consts::PI;
        let m = Mesh1D::partition_interval(0.0, tau, 11).unwrap();
        for e in 0..11 {
            let (a, b) = m.element_bounds(e);
            assert!((b - a - tau / 11.0).abs() < 1e-14);
        }
        assert_eq!(m.end(), tau);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Mesh1D::partition_interval(0.0, 1.0, 0).is_err());
        assert!(Mesh1D::partition_interval(1.0, 1.0, 3).is_err());
        assert!(Mesh1D::partition_interval(2.0, 1.0, 3).is_err());
    }

    #[test]
    fn periodic_pairs_endpoints() {
        let m = Mesh1D::partition_interval(0.0, 1.0, 4).unwrap().with_periodic(true);
        let ifs = m.interfaces();
        assert_eq!(ifs.len(), 4);
        let p = ifs.last().unwrap();
        assert_eq!(p.kind, EdgeKind::Periodic);
        assert_eq!((p.left, p.right), (Some(3), Some(0)));
        let d = Mesh1D::partition_interval(0.0, 1.0, 4).unwrap().interfaces();
        assert_eq!(d.len(), 5);
        assert_eq!(d.iter().filter(|i| i.kind == EdgeKind::Dirichlet).count(), 2);
    }

    #[test]
    fn locate_cells() {
        let m = Mesh1D::partition_interval(0.0, 1.0, 4).unwrap();
        assert_eq!(m.locate(0.0), Some(0));
        assert_eq!(m.locate(0.3), Some(1));
        assert_eq!(m.locate(1.0), Some(3));
        assert_eq!(m.locate(1.1), None);
    }
}
