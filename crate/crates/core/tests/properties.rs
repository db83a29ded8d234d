use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;

use dgnn::basis::TestBasis;
use dgnn::geometry::{polygon_area, triangulate_polygon, AffineMap, EdgeKind, Mesh1D, Point2};
use dgnn::loss::{
    evaluate_jets, flux_trace, top_k, total_loss, AssemblyCache, CacheSpec, LossOptions, OtherTrace, PdeCoefficients,
};
use dgnn::net::{NetArch, PiecewiseNet};
use dgnn::optim::{LbfgsState, StepKind};
use dgnn::problems::{metrics, BurgersReference};
use dgnn::quadrature::triangle_rule;

fn triangle() -> impl Strategy<Value = [Point2; 3]> {
    // keep triangles away from degeneracy: random vertices plus a minimum area
    prop::array::uniform3(prop::array::uniform2(-2.0..2.0f64)).prop_filter("degenerate", |t| {
        let a = (t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1]);
        a.abs() > 0.1
    })
}

fn star_polygon() -> impl Strategy<Value = Vec<Point2>> {
    (3usize..8, prop::collection::vec(0.7..1.3f64, 8), 0.0..1.0f64).prop_map(|(n, radii, phase)| {
        (0..n)
            .map(|k| {
                let a = phase + 2.0 * PI * k as f64 / n as f64;
                [radii[k] * a.cos(), radii[k] * a.sin()]
            })
            .collect()
    })
}

fn centroid(m: &dgnn::geometry::Mesh2D, e: usize) -> Point2 {
    let t = m.triangles[e];
    let v = |i: usize| m.vertices[t[i]];
    [(v(0)[0] + v(1)[0] + v(2)[0]) / 3.0, (v(0)[1] + v(1)[1] + v(2)[1]) / 3.0]
}

fn poisson(omega: f64) -> PdeCoefficients {
    PdeCoefficients::stationary(
        1.0,
        Arc::new(move |p: Point2, _| omega * omega * (omega * p[0]).sin()),
        Arc::new(move |p: Point2, _| (omega * p[0]).sin()),
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn mesh_invariants(poly in star_polygon(), s_min in 0.03..0.3f64) {
        let mesh = triangulate_polygon(&poly, s_min).unwrap();
        let area: f64 = (0..mesh.num_elements()).map(|e| mesh.area(e)).sum();
        let want = polygon_area(&poly).abs();
        prop_assert!(((area - want) / want).abs() <= 1e-10);
        let t = mesh.num_elements();
        prop_assert_eq!(3 * t, 2 * mesh.count_edges(EdgeKind::Interior) + mesh.count_edges(EdgeKind::Dirichlet));
        for e in &mesh.edges {
            prop_assert!((e.normal[0].hypot(e.normal[1]) - 1.0).abs() <= 1e-14);
            if let Some(r) = e.right {
                // the normal leaves `left` and enters `right`
                let (cl, cr) = (centroid(&mesh, e.left), centroid(&mesh, r));
                prop_assert!(e.normal[0] * (cr[0] - cl[0]) + e.normal[1] * (cr[1] - cl[1]) > 0.0);
                prop_assert!(e.right_local.is_some());
            }
        }
    }

    #[test]
    fn push_forward_stays_inside(tri in triangle(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let (x, y) = if a + b <= 1.0 { (a, b) } else { (1.0 - a, 1.0 - b) };
        let map = AffineMap::triangle(tri[0], tri[1], tri[2]).unwrap();
        let p = map.map([x, y]);
        let back = map.inverse(p);
        let l = [1.0 - back[0] - back[1], back[0], back[1]];
        for c in l {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&c));
        }
        prop_assert!((back[0] - x).abs() <= 1e-12 && (back[1] - y).abs() <= 1e-12);
    }

    #[test]
    fn quadrature_affine_covariance(tri in triangle(), coef in prop::collection::vec(-1.0..1.0f64, 36)) {
        // random polynomial of total degree 7 integrated by 15 points mapped,
        // against the 25-point degree-10 rule
        let f = |x: Point2| {
            let mut s = 0.0;
            let mut k = 0;
            for i in 0..=7 {
                for j in 0..=i {
                    s += coef[k] * x[0].powi(j as i32) * x[1].powi((i - j) as i32);
                    k += 1;
                }
            }
            s
        };
        let map = AffineMap::triangle(tri[0], tri[1], tri[2]).unwrap();
        let lo = triangle_rule(15).unwrap();
        let hi = triangle_rule(25).unwrap();
        let a = map.jacobian() * lo.integrate(|p| f(map.map(p)));
        let b = map.jacobian() * hi.integrate(|p| f(map.map(p)));
        let scale = map.jacobian() * hi.integrate(|p| f(map.map(p)).abs());
        prop_assert!((a - b).abs() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn pushed_gradients_match_fd(tri in triangle(), k in 1usize..6) {
        let rule = triangle_rule(6).unwrap();
        let basis = TestBasis::build(2, k, &rule).unwrap();
        let map = AffineMap::triangle(tri[0], tri[1], tri[2]).unwrap();
        let grads = basis.push_forward_gradients(&map).unwrap();
        let h = 1e-6;
        for q in 0..rule.len() {
            let x = map.map(rule.points[q]);
            for d in 0..2 {
                let (mut xp, mut xm) = (x, x);
                xp[d] += h;
                xm[d] -= h;
                let (vp, _) = basis.eval_at(map.inverse(xp));
                let (vm, _) = basis.eval_at(map.inverse(xm));
                for b in 0..basis.len() {
                    let fd = (vp[b] - vm[b]) / (2.0 * h);
                    let an = grads[b * rule.len() + q][d];
                    prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "{} vs {}", fd, an);
                }
            }
        }
        // retabulation is deterministic
        let again = TestBasis::build(2, k, &rule).unwrap();
        prop_assert_eq!(again.values, basis.values);
    }

    #[test]
    fn disjoint_support_and_batching(seed in 0u64..1000, e in 0usize..4, j in 0usize..4, delta in 0.01..1.0f64) {
        let net = PiecewiseNet::init(4, NetArch::new(2, 2, 6).unwrap(), seed).unwrap();
        let pts: Vec<Vec<f64>> = (0..4).map(|i| (0..10).map(|k| 0.1 * (k + i) as f64 - 0.4).collect()).collect();
        let (base, _) = net.forward(&pts).unwrap();
        for (i, p) in pts.iter().enumerate() {
            for (q, v) in base[i].iter().enumerate() {
                prop_assert!((v - net.eval_point(i, &p[2 * q..2 * q + 2])).abs() <= 1e-14);
            }
        }
        let mut pert = net.clone();
        let s = pert.stride();
        for v in &mut pert.params[j * s..(j + 1) * s] {
            *v += delta;
        }
        let (moved, _) = pert.forward(&pts).unwrap();
        if e != j {
            prop_assert_eq!(&moved[e], &base[e]);
        }
    }

    #[test]
    fn loss_decomposition_and_top_k(seed in 0u64..1000, k in 1usize..6, sig in prop::array::uniform3(0.1..3.0f64)) {
        let mesh = Mesh1D::partition_interval(0.0, 1.5, 6).unwrap();
        let coeffs = poisson(3.0 * PI);
        let cache = AssemblyCache::for_interval(&mesh, CacheSpec { volume_points: 8, edge_points: 1, degree: 3, time_nodes: 1 }, &coeffs).unwrap();
        let net = PiecewiseNet::init(6, NetArch::new(1, 2, 5).unwrap(), seed).unwrap();
        let opts = LossOptions { sigma: sig, top_k: Some(k) };
        let br = total_loss(&net, &cache, &coeffs, &opts).unwrap();
        prop_assert!((br.total - br.recombine()).abs() <= 1e-14 * br.total.abs().max(1.0));
        prop_assert_eq!(br.selected.len(), k);
        let min_sel = br.selected.iter().map(|&i| br.element_losses[i]).fold(f64::INFINITY, f64::min);
        let max_rest = (0..6).filter(|i| !br.selected.contains(i)).map(|i| br.element_losses[i]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min_sel >= max_rest);
        let sel = top_k(&br.element_losses, k).unwrap();
        prop_assert_eq!(sel.len(), k);
    }

    #[test]
    fn flux_antisymmetry(u in prop::array::uniform3(-5.0..5.0f64), v in prop::array::uniform3(-5.0..5.0f64), ang in 0.0..6.3f64, c in 0.0..3.0f64) {
        let mut coeffs = poisson(1.0);
        coeffs.jump_coefficient = c;
        let n = [ang.cos(), ang.sin()];
        let a = flux_trace(&coeffs, 2, n, &u, OtherTrace::Element(&v));
        let b = flux_trace(&coeffs, 2, [-n[0], -n[1]], &v, OtherTrace::Element(&u));
        prop_assert!((a.flux + b.flux).abs() <= 1e-12);
        prop_assert!((a.u_jump + b.u_jump).abs() <= 1e-15);
        prop_assert_eq!(a.u_avg, b.u_avg);
    }

    #[test]
    fn exact_field_has_small_residual(omega in 1.0..10.0f64, n in 3usize..10) {
        let mesh = Mesh1D::partition_interval(0.0, 1.5, n).unwrap();
        let coeffs = poisson(omega);
        let cache = AssemblyCache::for_interval(&mesh, CacheSpec { volume_points: 20, edge_points: 1, degree: 5, time_nodes: 1 }, &coeffs).unwrap();
        let jets = dgnn::loss::analytic_jets(&cache, &|x| vec![(omega * x[0]).sin(), omega * (omega * x[0]).cos()]);
        let views: Vec<&[f64]> = jets.iter().map(|j| j.as_slice()).collect();
        let (br, _) = evaluate_jets(&cache, &coeffs, &views, &LossOptions::default(), None, false).unwrap();
        prop_assert!(br.total <= 1e-10, "{}", br.total);
    }

    #[test]
    fn lbfgs_never_increases(diag in prop::collection::vec(0.1..50.0f64, 2..8), x0 in prop::collection::vec(-3.0..3.0f64, 8)) {
        let n = diag.len();
        let mut obj = |x: &[f64]| -> dgnn::Result<(f64, Vec<f64>)> {
            let f = x.iter().zip(&diag).map(|(x, d)| 0.5 * d * x * x + x.cos()).sum();
            let g = x.iter().zip(&diag).map(|(x, d)| d * x - x.sin()).collect();
            Ok((f, g))
        };
        let mut x = x0[..n].to_vec();
        let (mut f, mut g) = obj(&x).unwrap();
        let mut st = LbfgsState::new(5);
        for _ in 0..20 {
            let before = f;
            let rep = st.step(&mut obj, &mut x, &mut f, &mut g).unwrap();
            prop_assert!(f <= before);
            if rep.kind == StepKind::Stalled {
                break;
            }
        }
        prop_assert!(st.pairs().all(|(s, y)| s.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() > 0.0));
    }

    #[test]
    fn burgers_residual_random(x in 0.0..(2.0 * PI), t in 0.0..0.999f64) {
        let r = BurgersReference::default();
        prop_assert!(r.implicit_residual(x, t).unwrap() <= 1e-12);
        let w = r.solve_w(x, t).unwrap();
        prop_assert!((r.value(x, t).unwrap() - w - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn metrics_constant_offset(c in -2.0..2.0f64, m in 1usize..50) {
        let base: Vec<f64> = (0..m).map(|i| (i as f64).sin()).collect();
        let shifted: Vec<f64> = base.iter().map(|v| v + c).collect();
        let r = metrics(&shifted, &base).unwrap();
        prop_assert!((r.mse - c * c).abs() <= 1e-12);
        prop_assert!((r.mae - c.abs()).abs() <= 1e-12);
    }
}
