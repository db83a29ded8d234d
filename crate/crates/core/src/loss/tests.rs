use std::f64::consts::PI;
use std::sync::Arc;

use super::*;
use crate::geometry::{BoundaryKind, Mesh1D, Mesh2D};
use crate::net::{NetArch, PiecewiseNet};

fn views(j: &[Vec<f64>]) -> Vec<&[f64]> {
    j.iter().map(|v| v.as_slice()).collect()
}

fn poisson_1d(omega: f64) -> PdeCoefficients {
    let u = move |x: f64| x * (omega * x).cos();
    PdeCoefficients::stationary(
        1.0,
        Arc::new(move |p: Point2, _| 2.0 * omega * (omega * p[0]).sin() + omega * omega * p[0] * (omega * p[0]).cos()),
        Arc::new(move |p: Point2, _| u(p[0])),
    )
}

fn jet_1d(omega: f64) -> impl Fn(&[f64]) -> Vec<f64> {
    move |x: &[f64]| {
        let x = x[0];
        vec![x * (omega * x).cos(), (omega * x).cos() - omega * x * (omega * x).sin()]
    }
}

fn spec(vol: usize, edge: usize, k: usize) -> CacheSpec {
    CacheSpec { volume_points: vol, edge_points: edge, degree: k, time_nodes: 1 }
}

#[test]
fn flux_examples() {
    let c = PdeCoefficients::stationary(0.0, Arc::new(|_, _| 0.0), Arc::new(|_, _| 0.0));
    assert_eq!(numeric_flux(1.0, 0.0, 1.0, 0.0, 1.0), -0.5);
    // Continuous traces reproduce the physical flux.
    let lin = PdeCoefficients { convection: Convection::Linear { velocity: [1.0, 0.0] }, ..c.clone() };
    let h = flux_trace(&lin, 1, [1.0, 0.0], &[0.7, 0.0], OtherTrace::Element(&[0.7, 0.0]));
    assert_eq!(h.u_jump, 0.0);
    assert_eq!(h.u_avg, 0.7);
    assert!((h.flux + 0.7).abs() < 1e-15);
    // Dirichlet data g = 0: the far state and its flux are both 0.
    let b = flux_trace(&lin, 1, [1.0, 0.0], &[0.0, 3.0], OtherTrace::Boundary(0.0));
    assert_eq!((b.u_avg, b.u_jump, b.flux), (0.0, 0.0, 0.0));
}

#[test]
fn exact_1d_poisson_high_frequency() {
    let omega = 15.0 * PI;
    let mesh = Mesh1D::partition_interval(0.0, 1.5, 25).unwrap();
    let coeffs = poisson_1d(omega);
    let cache = AssemblyCache::for_interval(&mesh, spec(20, 1, 5), &coeffs).unwrap();
    let jets = analytic_jets(&cache, &jet_1d(omega));
    for e in 0..25 {
        for r in element_residual(&cache, &coeffs, &views(&jets), e, 0) {
            assert!(r.abs() <= 1e-10, "element {e}: {r}");
        }
    }
    let (br, _) = evaluate_jets(&cache, &coeffs, &views(&jets), &LossOptions::default(), None, false).unwrap();
    assert!(br.total <= 1e-10, "{}", br.total);
}

#[test]
fn zero_field_leaves_source_term() {
    let mesh = Mesh1D::partition_interval(0.0, 1.0, 3).unwrap();
    let coeffs = PdeCoefficients::stationary(1.0, Arc::new(|p: Point2, _| 1.0 + p[0]), Arc::new(|_, _| 0.0));
    let cache = AssemblyCache::for_interval(&mesh, spec(6, 1, 2), &coeffs).unwrap();
    let net = PiecewiseNet::zeros(3, NetArch::new(1, 2, 4).unwrap()).unwrap();
    let (_, tape) = net.forward(&cache.point_groups()).unwrap();
    let jets: Vec<&[f64]> = tape.elements.iter().map(|t| t.output.as_slice()).collect();
    for e in 0..3 {
        let r = element_residual(&cache, &coeffs, &jets, e, 0);
        let el = &cache.elements[e];
        for (b, rb) in r.iter().enumerate() {
            let want: f64 = -(0..el.n_volume()).map(|q| el.weights[q] * el.source[q] * el.test_values[b * el.n_volume() + q]).sum::<f64>();
            assert!((rb - want).abs() <= 1e-15, "{rb} vs {want}");
        }
    }
}

fn burgers_coeffs(u0: f64) -> PdeCoefficients {
    PdeCoefficients {
        diffusion: 0.0,
        convection: Convection::Burgers { direction: [1.0, 0.0] },
        source: Arc::new(|_, _| 0.0),
        dirichlet: Arc::new(|_, _| 0.0),
        initial: Some(Arc::new(move |_| u0)),
        horizon: 1.5,
        jump_coefficient: 1.0,
    }
}

#[test]
fn burgers_constant_state_balances() {
    let mesh = Mesh1D::partition_interval(0.0, 2.0 * PI, 11).unwrap().with_periodic(true);
    let c = 0.8;
    let coeffs = burgers_coeffs(c);
    let cache = AssemblyCache::for_interval(&mesh, CacheSpec { volume_points: 20, edge_points: 1, degree: 3, time_nodes: 5 }, &coeffs)
        .unwrap();
    let jets = analytic_jets(&cache, &|_| vec![c, 0.0, 0.0]);
    for e in 0..11 {
        for j in 0..5 {
            let r = element_residual(&cache, &coeffs, &views(&jets), e, j);
            // The volume term alone is non-trivial for p = x̂.
            assert!(r.iter().all(|v| v.abs() <= 1e-12), "{r:?}");
        }
    }
    let (pen, per) = penalty_loss(&cache, &views(&jets));
    assert_eq!((pen, per), (0.0, 0.0));
    assert_eq!(initial_loss(&cache, &views(&jets)).unwrap(), 0.0);
}

#[test]
fn burgers_volume_term_nonzero() {
    // Guard against the balance above holding trivially.
    let mesh = Mesh1D::partition_interval(0.0, 1.0, 1).unwrap().with_periodic(true);
    let coeffs = burgers_coeffs(1.0);
    let cache = AssemblyCache::for_interval(&mesh, CacheSpec { volume_points: 4, edge_points: 1, degree: 1, time_nodes: 2 }, &coeffs)
        .unwrap();
    let el = &cache.elements[0];
    let vol: f64 = (0..el.n_volume()).map(|q| el.weights[q] * el.test_grads[el.n_volume() + q][0] * 0.5).sum();
    assert!((vol - 0.5).abs() < 1e-14);
}

#[test]
fn penalty_definitions() {
    let mesh = Mesh2D::structured_rectangle(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap();
    let u = |x: &[f64]| vec![x[0] * x[1] + 0.3, x[1], x[0]];
    let coeffs = PdeCoefficients::stationary(1.0, Arc::new(|_, _| 0.0), Arc::new(|p: Point2, _| p[0] * p[1] + 0.3));
    let cache = AssemblyCache::for_triangles(&mesh, spec(6, 5, 1), &coeffs).unwrap();
    let mut jets = analytic_jets(&cache, &u);
    let (pen, _) = penalty_loss(&cache, &views(&jets));
    assert!(pen <= 1e-20, "{pen}");
    // Shift the owner trace of one interior face by c.
    let fi = cache.faces.iter().position(|f| f.neighbor.is_some()).unwrap();
    let f = &cache.faces[fi];
    let el = &cache.elements[f.owner];
    let shift = 0.25;
    for s in 0..f.len() {
        let i = el.face_index(f.owner_slot, f.len(), 0, s);
        jets[f.owner][i * cache.jet()] += shift;
    }
    let (pen, _) = penalty_loss(&cache, &views(&jets));
    assert!((pen - f.len() as f64 * shift * shift).abs() <= 1e-14, "{pen}");
}

#[test]
fn periodic_pairing_penalised() {
    let mesh = Mesh1D::partition_interval(0.0, 2.0 * PI, 11).unwrap().with_periodic(true);
    let coeffs = burgers_coeffs(0.5);
    let cache = AssemblyCache::for_interval(&mesh, CacheSpec { volume_points: 5, edge_points: 1, degree: 1, time_nodes: 3 }, &coeffs)
        .unwrap();
    // u = x is continuous inside but jumps by 2π across the pairing.
    let jets = analytic_jets(&cache, &|x: &[f64]| vec![x[0], 1.0, 0.0]);
    let (pen, per) = penalty_loss(&cache, &views(&jets));
    assert!((per - 3.0 * (2.0 * PI).powi(2)).abs() < 1e-10);
    assert!((pen - per).abs() < 1e-10);
}

#[test]
fn initial_loss_arithmetic() {
    let mesh = Mesh1D::partition_interval(0.0, 1.0, 1).unwrap().with_periodic(true);
    let coeffs = burgers_coeffs(0.5);
    let cache = AssemblyCache::for_interval(&mesh, CacheSpec { volume_points: 10, edge_points: 1, degree: 1, time_nodes: 2 }, &coeffs)
        .unwrap();
    let net = PiecewiseNet::zeros(1, NetArch::new(2, 1, 3).unwrap()).unwrap();
    let br = total_loss(&net, &cache, &coeffs, &LossOptions::default()).unwrap();
    assert!((br.l_ic - 2.5).abs() < 1e-14);
    let stationary = AssemblyCache::for_interval(&mesh, spec(4, 1, 1), &poisson_1d(1.0)).unwrap();
    let jets = analytic_jets(&stationary, &|_| vec![0.0, 0.0]);
    assert!(initial_loss(&stationary, &views(&jets)).is_err());
}

#[test]
fn sine_initial_target() {
    let coeffs = PdeCoefficients { initial: Some(Arc::new(|p: Point2| p[0].sin() + 0.5)), ..burgers_coeffs(0.0) };
    assert_eq!((coeffs.initial.as_ref().unwrap())([0.0, 0.0]), 0.5);
}

fn small_1d_problem() -> (AssemblyCache, PdeCoefficients) {
    let mesh = Mesh1D::partition_interval(0.0, 1.5, 3).unwrap();
    let coeffs = poisson_1d(3.0 * PI);
    let cache = AssemblyCache::for_interval(&mesh, spec(6, 1, 1), &coeffs).unwrap();
    (cache, coeffs)
}

#[test]
fn top_k_semantics() {
    let (cache, coeffs) = small_1d_problem();
    let net = PiecewiseNet::init(3, NetArch::new(1, 2, 4).unwrap(), 3).unwrap();
    let all = total_loss(&net, &cache, &coeffs, &LossOptions::default()).unwrap();
    let k3 = total_loss(&net, &cache, &coeffs, &LossOptions { top_k: Some(3), ..Default::default() }).unwrap();
    assert_eq!(all.total, k3.total);
    assert_eq!(all.l_eq, all.l_eq_selected);
    let k1 = total_loss(&net, &cache, &coeffs, &LossOptions { top_k: Some(1), ..Default::default() }).unwrap();
    let min_sel = k1.selected.iter().map(|&e| k1.element_losses[e]).fold(f64::INFINITY, f64::min);
    let max_rest = (0..3).filter(|e| !k1.selected.contains(e)).map(|e| k1.element_losses[e]).fold(0.0, f64::max);
    assert!(min_sel >= max_rest);
    assert!((k1.total - k1.recombine()).abs() <= 1e-14 * k1.total);
    assert!(total_loss(&net, &cache, &coeffs, &LossOptions { top_k: Some(4), ..Default::default() }).is_err());
}

fn fd_check(net: &PiecewiseNet, cache: &AssemblyCache, coeffs: &PdeCoefficients, opts: &LossOptions, tol: f64) {
    let (_, grad) = loss_and_gradient(net, cache, coeffs, opts, None).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..net.params.len() {
        let mut p = net.clone();
        p.params[k] += h;
        let lp = total_loss(&p, cache, coeffs, opts).unwrap().total;
        p.params[k] -= 2.0 * h;
        let lm = total_loss(&p, cache, coeffs, opts).unwrap().total;
        let fd = (lp - lm) / (2.0 * h);
        let err = (fd - grad[k]).abs() / grad[k].abs().max(1e-3);
        worst = worst.max(err);
        assert!(err <= tol, "param {k}: fd {fd} vs analytic {}", grad[k]);
    }
    assert!(worst.is_finite());
}

#[test]
fn gradient_full_pipeline_1d() {
    let (cache, coeffs) = small_1d_problem();
    let net = PiecewiseNet::init(3, NetArch::new(1, 2, 4).unwrap(), 7).unwrap();
    fd_check(&net, &cache, &coeffs, &LossOptions::default(), 1e-5);
}

#[test]
fn gradient_top_k_and_weights() {
    let (cache, coeffs) = small_1d_problem();
    let net = PiecewiseNet::init(3, NetArch::new(1, 2, 4).unwrap(), 8).unwrap();
    let opts = LossOptions { sigma: [0.7, 1.0, 2.5], top_k: Some(2) };
    // Selection is frozen by passing it explicitly to both sides.
    let sel = total_loss(&net, &cache, &coeffs, &opts).unwrap().selected;
    let (_, grad) = loss_and_gradient(&net, &cache, &coeffs, &opts, Some(&sel)).unwrap();
    let h = 1e-5;
    let eval = |n: &PiecewiseNet| {
        let (_, tape) = n.forward(&cache.point_groups()).unwrap();
        let v: Vec<&[f64]> = tape.elements.iter().map(|t| t.output.as_slice()).collect();
        evaluate_jets(&cache, &coeffs, &v, &opts, Some(&sel), false).unwrap().0.total
    };
    for k in 0..net.params.len() {
        let mut p = net.clone();
        p.params[k] += h;
        let lp = eval(&p);
        p.params[k] -= 2.0 * h;
        let lm = eval(&p);
        let fd = (lp - lm) / (2.0 * h);
        assert!((fd - grad[k]).abs() <= 1e-5 * grad[k].abs().max(1e-3), "{k}: {fd} vs {}", grad[k]);
    }
}

#[test]
fn gradient_full_pipeline_2d() {
    let mesh = Mesh2D::structured_rectangle(0.0, 1.0, 0.0, 1.0, 1, 2).unwrap();
    let coeffs = PdeCoefficients::stationary(1.0, Arc::new(|_, _| 10.0), Arc::new(|p: Point2, _| 0.1 * p[0]));
    let cache = AssemblyCache::for_triangles(&mesh, spec(6, 3, 1), &coeffs).unwrap();
    let net = PiecewiseNet::init(4, NetArch::new(2, 1, 3).unwrap(), 1).unwrap();
    fd_check(&net, &cache, &coeffs, &LossOptions::default(), 1e-5);
}

#[test]
fn gradient_full_pipeline_burgers() {
    let mesh = Mesh1D::partition_interval(0.0, 2.0 * PI, 3).unwrap().with_periodic(true);
    let coeffs = PdeCoefficients { initial: Some(Arc::new(|p: Point2| p[0].sin() + 0.5)), ..burgers_coeffs(0.0) };
    let cache = AssemblyCache::for_interval(&mesh, CacheSpec { volume_points: 4, edge_points: 1, degree: 2, time_nodes: 3 }, &coeffs)
        .unwrap();
    let net = PiecewiseNet::init(3, NetArch::new(2, 2, 3).unwrap(), 2).unwrap();
    fd_check(&net, &cache, &coeffs, &LossOptions::default(), 1e-5);
}

#[test]
fn flux_contributions_antisymmetric() {
    let mesh = Mesh2D::structured_rectangle(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap();
    let coeffs = PdeCoefficients {
        convection: Convection::Linear { velocity: [0.3, -0.4] },
        ..PdeCoefficients::stationary(1.0, Arc::new(|_, _| 0.0), Arc::new(|_, _| 0.0))
    };
    let cache = AssemblyCache::for_triangles(&mesh, spec(6, 4, 1), &coeffs).unwrap();
    let net = PiecewiseNet::init(8, NetArch::new(2, 1, 5).unwrap(), 4).unwrap();
    let (_, tape) = net.forward(&cache.point_groups()).unwrap();
    let jets: Vec<&[f64]> = tape.elements.iter().map(|t| t.output.as_slice()).collect();
    let jl = cache.jet();
    for f in cache.faces.iter().filter(|f| f.neighbor.is_some()) {
        let (r, rs) = f.neighbor.unwrap();
        let n = f.len();
        for s in 0..n {
            let own = &jets[f.owner][cache.elements[f.owner].face_index(f.owner_slot, n, 0, s) * jl..][..jl];
            let oth = &jets[r][cache.elements[r].face_index(rs, n, 0, s) * jl..][..jl];
            let a = flux_trace(&coeffs, 2, f.normal, own, OtherTrace::Element(oth)).flux;
            let b = flux_trace(&coeffs, 2, [-f.normal[0], -f.normal[1]], oth, OtherTrace::Element(own)).flux;
            assert!((a + b).abs() <= 1e-12, "{a} vs {b}");
            assert!((f.owner_points[s][0] - f.neighbor_points[s][0]).abs() <= 1e-12);
            assert!((f.owner_points[s][1] - f.neighbor_points[s][1]).abs() <= 1e-12);
        }
    }
}

#[test]
fn periodic_square_traces_pair_up() {
    let mesh = Mesh2D::structured_rectangle(0.0, 1.0, 0.0, 1.0, 3, 2)
        .unwrap()
        .classify_edges(&[
            BoundaryKind::Periodic { partner: 2 },
            BoundaryKind::Dirichlet,
            BoundaryKind::Periodic { partner: 0 },
            BoundaryKind::Dirichlet,
        ])
        .unwrap();
    let coeffs = PdeCoefficients::stationary(1.0, Arc::new(|_, _| 0.0), Arc::new(|_, _| 0.0));
    let cache = AssemblyCache::for_triangles(&mesh, spec(3, 3, 1), &coeffs).unwrap();
    for f in cache.faces.iter().filter(|f| f.kind == EdgeKind::Periodic) {
        for (a, b) in f.owner_points.iter().zip(&f.neighbor_points) {
            assert!((a[0] - b[0]).abs() < 1e-12);
            assert!(((a[1] - b[1]).abs() - 1.0).abs() < 1e-12);
        }
    }
    // A field periodic in y has no periodic penalty.
    let jets = analytic_jets(&cache, &|x: &[f64]| {
        let w = 2.0 * PI;
        vec![(w * x[1]).sin() + x[0], 1.0, w * (w * x[1]).cos()]
    });
    let (_, per) = penalty_loss(&cache, &views(&jets));
    assert!(per < 1e-20, "{per}");
}

#[test]
fn exact_2d_poisson_square() {
    let u = |x: &[f64]| {
        let (s, c) = ((PI * x[0]).sin(), (PI * x[1]).sin());
        vec![s * c, PI * (PI * x[0]).cos() * c, PI * s * (PI * x[1]).cos()]
    };
    let coeffs = PdeCoefficients::stationary(
        1.0,
        Arc::new(|p: Point2, _| 2.0 * PI * PI * (PI * p[0]).sin() * (PI * p[1]).sin()),
        Arc::new(|_, _| 0.0),
    );
    let mesh = Mesh2D::structured_rectangle(0.0, 1.0, 0.0, 1.0, 16, 16).unwrap();
    for ne in [15, 20] {
        for k in [0, 3, 7] {
            let cache = AssemblyCache::for_triangles(&mesh, spec(ne, 20, k), &coeffs).unwrap();
            let jets = analytic_jets(&cache, &u);
            let (br, _) = evaluate_jets(&cache, &coeffs, &views(&jets), &LossOptions::default(), None, false).unwrap();
            assert!(br.total <= 1e-10, "N_E={ne} k={k}: {}", br.total);
        }
    }
}

