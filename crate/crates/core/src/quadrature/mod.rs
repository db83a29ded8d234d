//! Gauss–Legendre rules on the reference interval, reference triangle and
//! physical edges.

mod gauss;
mod triangle;

pub use gauss::{gauss_legendre_1d, MAX_GAUSS_POINTS};
pub use triangle::{triangle_rule, SYMMETRIC_TRIANGLE_RULES};

use serde::Serialize;

use crate::error::{DgnnError, Result};
use crate::geometry::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    /// Reference interval `[0, 1]`.
    Interval,
    /// Reference triangle `(0,0), (1,0), (0,1)`.
    Triangle,
    /// A physical segment; weights sum to its length.
    Edge,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadRule {
    /// 1D rules use the first coordinate only.
    pub points: Vec<Point2>,
    pub weights: Vec<f64>,
    pub exact_degree: usize,
    pub domain: DomainKind,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(Point2) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(*p)).sum()
    }

    /// Measure of the reference domain.
    pub fn reference_measure(&self) -> f64 {
        match self.domain {
            DomainKind::Interval => 1.0,
            DomainKind::Triangle => 0.5,
            DomainKind::Edge => self.weights.iter().sum(),
        }
    }
}

/// `n`-point Gauss–Legendre rule on the segment `p → q`, points ordered
/// from `p`.
pub fn edge_rule(n: usize, p: Point2, q: Point2) -> Result<QuadRule> {
    let len = (q[0] - p[0]).hypot(q[1] - p[1]);
    if !(len > 0.0) || !len.is_finite() {
        return Err(DgnnError::Degenerate("edge of zero length".into()));
    }
    let base = gauss_legendre_1d(n)?;
    Ok(QuadRule {
        points: base
            .points
            .iter()
            .map(|s| [p[0] + s[0] * (q[0] - p[0]), p[1] + s[0] * (q[1] - p[1])])
            .collect(),
        weights: base.weights.iter().map(|w| w * len).collect(),
        exact_degree: base.exact_degree,
        domain: DomainKind::Edge,
    })
}
