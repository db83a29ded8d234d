use super::*;

fn small(dir: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.problem.n_elements = 3;
    c.discretization.volume_points = 8;
    c.discretization.degree = 3;
    c.network.width = 6;
    c.training.max_iters = 12;
    c.training.adam_fraction = 0.5;
    c.training.lr = 1e-3;
    c.training.eval_every = 4;
    c.output.dir = dir.to_path_buf();
    c.output.deterministic_clock = true;
    c
}

#[test]
fn zero_iterations_emit_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small(tmp.path());
    c.training.max_iters = 0;
    let r = run_training(&c).unwrap();
    assert_eq!(r.telemetry.len(), 1);
    assert_eq!(r.telemetry[0].phase, "init");
    assert_eq!(r.summary.initial, r.summary.final_state);
    let text = std::fs::read_to_string(tmp.path().join("telemetry.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(text.lines().next().unwrap(), TELEMETRY_HEADER);
}

#[test]
fn telemetry_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_training(&small(a.path())).unwrap();
    run_training(&small(b.path())).unwrap();
    let ta = std::fs::read(a.path().join("telemetry.csv")).unwrap();
    let tb = std::fs::read(b.path().join("telemetry.csv")).unwrap();
    assert_eq!(ta, tb);
    let text = String::from_utf8(ta).unwrap();
    assert_eq!(text.lines().count(), 12 + 2);
}

#[test]
fn telemetry_phases_and_best() {
    let tmp = tempfile::tempdir().unwrap();
    let r = run_training(&small(tmp.path())).unwrap();
    let phases: Vec<&str> = r.telemetry.iter().map(|t| t.phase).collect();
    assert_eq!(phases[0], "init");
    assert!(phases[1..=6].iter().all(|p| *p == "adam"));
    assert!(phases[7..].iter().all(|p| *p == "lbfgs"));
    let mses: Vec<f64> = r.telemetry.iter().filter_map(|t| t.mse).collect();
    assert_eq!(mses.len(), 4);
    let min = mses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(r.summary.best.mse, min);
    assert_eq!(r.summary.optimizer.adam_steps, 6);
    assert_eq!(r.summary.optimizer.lbfgs_iterations, 6);
    // total loss decreases over the run
    assert!(r.summary.final_state.total < r.summary.initial.total);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    for key in ["problem", "reference", "status", "iterations", "initial", "final", "best", "optimizer", "artifacts", "config"] {
        assert!(summary.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn checkpoints_reproduce_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let r = run_training(&small(tmp.path())).unwrap();
    let out = tmp.path().join("eval");
    let rep = evaluate_checkpoint(&r.summary.artifacts.checkpoint, &out).unwrap();
    assert_eq!(rep.mse, r.summary.final_state.mse);
    let best = evaluate_checkpoint(&r.summary.artifacts.best_checkpoint, &out).unwrap();
    assert_eq!(best.mse, r.summary.best.mse);
    assert_eq!(best.iteration, r.summary.best.iteration);
    assert!(out.join("metrics.json").exists());
    assert!(out.join("field.csv").exists());

    // an untrained net saved with the same config matches the initial state
    let setup = Setup::new(&small(tmp.path())).unwrap();
    let net = setup.init_net().unwrap();
    let p = tmp.path().join("fresh.ckpt");
    write_checkpoint(&p, &net, 0, serde_json::to_value(&setup.config).unwrap()).unwrap();
    let fresh = evaluate_checkpoint(&p, &out).unwrap();
    assert_eq!(fresh.mse, r.summary.initial.mse);
}

#[test]
fn architecture_mismatch_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let c = small(tmp.path());
    let setup = Setup::new(&c).unwrap();
    let mut other = c.clone();
    other.network.width = 7;
    let net = setup.init_net().unwrap();
    let p = tmp.path().join("bad.ckpt");
    write_checkpoint(&p, &net, 0, serde_json::to_value(&other).unwrap()).unwrap();
    let err = evaluate_checkpoint(&p, &tmp.path().join("e")).unwrap_err();
    assert!(err.to_string().contains("architecture mismatch"), "{err}");
}

#[test]
fn pentagon_oracle_against_itself_is_zero() {
    let mut c = RunConfig::preset("pentagon").unwrap();
    c.problem.s_min = 0.2;
    let setup = Setup::new(&c).unwrap();
    let (m, _) = evaluate_metrics(&setup.grid, &setup.reference, &setup.reference).unwrap();
    assert_eq!(m.mse, 0.0);
    assert_eq!(m.mae, 0.0);
    assert!(m.n_points > 1000);
}

#[test]
fn exact_loss_is_small_in_1d() {
    let mut c = RunConfig::default();
    c.problem.n_elements = 5;
    let l = Setup::new(&c).unwrap().exact_loss().unwrap();
    assert!(l.total < 1e-20, "{l:?}");
    c.problem.name = ProblemName::Burgers;
    assert!(Setup::new(&c).unwrap().exact_loss().is_err());
}

#[test]
fn single_point_sweep_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let base = small(&tmp.path().join("single"));
    let r = run_training(&base).unwrap();
    let sweep = Sweep::parse(&["training.seed=0"]).unwrap();
    let rows = run_ablation(&base, &sweep, &tmp.path().join("sweep"), AblationMode::Train).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].mse, Some(r.summary.final_state.mse));
    let a = std::fs::read(tmp.path().join("single/telemetry.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("sweep/row_000/telemetry.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sweep_grid_and_failures() {
    let s = Sweep::parse(&["a=1,2", "training.sigma=[1,1,1],[1,2,3]"]).unwrap();
    assert_eq!(s.axes[1].1, vec!["[1,1,1]", "[1,2,3]"]);
    let pts = s.points();
    assert_eq!(pts.len(), 4);
    assert_eq!(pts[1], vec![("a".to_string(), "1".to_string()), ("training.sigma".to_string(), "[1,2,3]".to_string())]);
    assert!(Sweep::parse(&["novalue"]).is_err());
    assert_eq!(Sweep::default().points(), vec![Vec::<(String, String)>::new()]);

    let tmp = tempfile::tempdir().unwrap();
    let base = small(tmp.path());
    let sweep = Sweep::parse(&["discretization.degree=2,11"]).unwrap();
    let rows = run_ablation(&base, &sweep, tmp.path(), AblationMode::Exact).unwrap();
    assert_eq!(rows[0].status, "ok");
    assert!(rows[0].exact_loss.unwrap() < 1e-6, "{:?}", rows[0]);
    assert!(rows[1].status.starts_with("error"));
    let csv = std::fs::read_to_string(tmp.path().join("ablation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "row,discretization.degree,status,mse,mae,mean_abs,wall_time_s,iterations,exact_loss"
    );
    assert_eq!(lines.count(), 2);
}
