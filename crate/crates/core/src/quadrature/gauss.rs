use crate::error::{DgnnError, Result};

use super::{DomainKind, QuadRule};

pub const MAX_GAUSS_POINTS: usize = 64;

/// Legendre polynomial `P_n(x)` and its derivative by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Nodes and weights on `[-1, 1]`, ascending.
pub(crate) fn gauss_legendre_symmetric(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess for the i-th largest root.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, dp) = legendre(n, z);
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// `n`-point Gauss–Legendre rule on `[0, 1]`, exact to degree `2n − 1`.
pub fn gauss_legendre_1d(n: usize) -> Result<QuadRule> {
    if n == 0 || n > MAX_GAUSS_POINTS {
        return Err(DgnnError::UnsupportedRule(format!(
            "gauss-legendre needs 1..={MAX_GAUSS_POINTS} points, got {n}"
        )));
    }
    let (x, w) = gauss_legendre_symmetric(n);
    Ok(QuadRule {
        points: x.iter().map(|&xi| [0.5 * (xi + 1.0), 0.0]).collect(),
        weights: w.iter().map(|&wi| 0.5 * wi).collect(),
        exact_degree: 2 * n - 1,
        domain: DomainKind::Interval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_closed_form() {
        let r = gauss_legendre_1d(2).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert!((r.points[0][0] - (1.0 - s) / 2.0).abs() < 1e-15);
        assert!((r.points[1][0] - (1.0 + s) / 2.0).abs() < 1e-15);
        assert!((r.weights[0] - 0.5).abs() < 1e-15 && (r.weights[1] - 0.5).abs() < 1e-15);
        let cube: f64 = r.points.iter().zip(&r.weights).map(|(p, w)| w * p[0].powi(3)).sum();
        assert!((cube - 0.25).abs() < 1e-15);
    }

    #[test]
    fn twenty_points() {
        let r = gauss_legendre_1d(20).unwrap();
        assert_eq!(r.len(), 20);
        assert_eq!(r.exact_degree, 39);
        for i in 0..20 {
            assert!((r.points[i][0] + r.points[19 - i][0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range() {
        assert!(gauss_legendre_1d(0).is_err());
        assert!(gauss_legendre_1d(65).is_err());
        assert!(gauss_legendre_1d(64).is_ok());
    }
}
