//! Training runs, checkpoint evaluation, and parameter sweeps.

mod ablation;
mod config;
mod output;

pub use ablation::{run_ablation, AblationMode, AblationRow, Sweep};
pub use config::{
    DiscretizationConfig, NetworkConfig, OutputConfig, ProblemConfig, ProblemName, RunConfig, TrainingConfig, PRESETS,
};
pub use output::{write_field_csv, write_reference_csv, TelemetryRow, TelemetryWriter, TELEMETRY_HEADER};

use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{DgnnError, Result};
use crate::loss::{analytic_jets, evaluate_jets, loss_and_gradient, AssemblyCache, LossBreakdown, LossOptions};
use crate::net::{read_checkpoint, write_checkpoint, NetArch, PiecewiseNet};
use crate::optim::{AdamState, LbfgsState};
use crate::problems::{evaluate_metrics, shock_position, EvalGrid, Mesh, Metrics, ProblemSpec, Reference, SHOCK_BAND};

/// Times at which transient runs report separate metrics.
pub const TIME_SLICES: [f64; 3] = [0.5, 1.0, 1.5];

/// Predictions on a fixed grid through one batched forward pass.
struct GridEvaluator {
    groups: Vec<Vec<f64>>,
    index: Vec<Vec<usize>>,
    n: usize,
}

impl GridEvaluator {
    fn new(mesh: &Mesh, grid: &EvalGrid, transient: bool) -> Result<Self> {
        let ne = mesh.n_elements();
        let mut groups = vec![Vec::new(); ne];
        let mut index = vec![Vec::new(); ne];
        for (i, p) in grid.points.iter().enumerate() {
            let e = mesh.locate(p.x).ok_or(DgnnError::Locate { x: p.x[0], y: p.x[1] })?;
            groups[e].extend_from_slice(&p.x[..grid.spatial_dim]);
            if transient {
                groups[e].push(p.t);
            }
            index[e].push(i);
        }
        Ok(Self { groups, index, n: grid.len() })
    }

    fn predict(&self, net: &PiecewiseNet) -> Result<Vec<f64>> {
        let (values, _) = net.forward(&self.groups)?;
        let mut out = vec![0.0; self.n];
        for (vals, idx) in values.iter().zip(&self.index) {
            for (v, &i) in vals.iter().zip(idx) {
                out[i] = *v;
            }
        }
        Ok(out)
    }
}

struct Slice {
    t: f64,
    grid: EvalGrid,
    reference: Vec<f64>,
    eval: GridEvaluator,
}

/// Everything derived from a config before training starts.
pub struct Setup {
    pub config: RunConfig,
    pub problem: ProblemSpec,
    pub mesh: Mesh,
    pub cache: AssemblyCache,
    pub arch: NetArch,
    pub grid: EvalGrid,
    pub reference: Vec<f64>,
    pub options: LossOptions,
    eval: GridEvaluator,
    slices: Vec<Slice>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsOut {
    pub mse: f64,
    pub mae: f64,
    pub mean_abs: f64,
    pub n_points: usize,
}

impl From<Metrics> for MetricsOut {
    fn from(m: Metrics) -> Self {
        Self { mse: m.mse, mae: m.mae, mean_abs: m.mean_abs, n_points: m.n_points }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSliceMetrics {
    pub t: f64,
    pub mse: f64,
    pub mae: f64,
}

/// Grid metrics of one network state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub main: MetricsOut,
    pub shock_band: Option<MetricsOut>,
    pub time_slices: Vec<TimeSliceMetrics>,
    #[serde(skip)]
    pub prediction: Vec<f64>,
}

impl Setup {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let problem = config.problem_spec()?;
        Self::with_problem(config, problem)
    }

    pub fn with_problem(config: &RunConfig, problem: ProblemSpec) -> Result<Self> {
        let mesh = problem.mesh(config.problem.n_elements)?;
        let cache = mesh.cache(config.cache_spec(), &problem.coeffs)?;
        let arch = NetArch::new(problem.input_dim(), config.network.hidden_layers, config.network.width)?;
        let grid = problem.grid(&mesh)?;
        let transient = problem.is_transient();
        let reference = problem.reference.values(&grid.points)?;
        let eval = GridEvaluator::new(&mesh, &grid, transient)?;
        let mut slices = Vec::new();
        if transient {
            if let crate::problems::Domain::Interval { a, b, .. } = problem.domain {
                for t in TIME_SLICES.iter().copied().filter(|t| *t <= problem.coeffs.horizon) {
                    let g = EvalGrid::space_time(a, b, 256, &[t], |x, t| (x - shock_position(t)).abs() < SHOCK_BAND);
                    let r = problem.reference.values(&g.points)?;
                    let e = GridEvaluator::new(&mesh, &g, true)?;
                    slices.push(Slice { t, grid: g, reference: r, eval: e });
                }
            }
        }
        let k = config.training.top_k;
        let n = mesh.n_elements();
        if k > n {
            return Err(DgnnError::Config(format!("top_k = {k} exceeds the {n} elements")));
        }
        let options = LossOptions { sigma: config.training.sigma, top_k: if k == 0 || k == n { None } else { Some(k) } };
        Ok(Self { config: config.clone(), problem, mesh, cache, arch, grid, reference, options, eval, slices })
    }

    pub fn init_net(&self) -> Result<PiecewiseNet> {
        let mut net = PiecewiseNet::init(self.mesh.n_elements(), self.arch, self.config.training.seed)?;
        if self.config.network.local_inputs {
            let horizon = self.problem.is_transient().then_some(self.problem.coeffs.horizon);
            let (shift, scale) = self.mesh.local_input_map(horizon)?;
            net.set_input_map(shift, scale)?;
        }
        Ok(net)
    }

    pub fn predict(&self, net: &PiecewiseNet) -> Result<Vec<f64>> {
        self.eval.predict(net)
    }

    pub fn evaluate(&self, net: &PiecewiseNet) -> Result<Evaluation> {
        let prediction = self.eval.predict(net)?;
        let (main, band) = evaluate_metrics(&self.grid, &prediction, &self.reference)?;
        let mut time_slices = Vec::new();
        for s in &self.slices {
            let p = s.eval.predict(net)?;
            let (m, _) = evaluate_metrics(&s.grid, &p, &s.reference)?;
            time_slices.push(TimeSliceMetrics { t: s.t, mse: m.mse, mae: m.mae });
        }
        Ok(Evaluation { main: main.into(), shock_band: band.map(Into::into), time_slices, prediction })
    }

    /// Loss with the problem's exact solution in place of the network.
    pub fn exact_loss(&self) -> Result<LossBreakdown> {
        let Reference::Analytic { jet, .. } = &self.problem.reference else {
            return Err(DgnnError::Config(format!("problem `{}` has no analytic solution", self.problem.name)));
        };
        let jets = analytic_jets(&self.cache, &|x| jet(x));
        let views: Vec<&[f64]> = jets.iter().map(|j| j.as_slice()).collect();
        Ok(evaluate_jets(&self.cache, &self.problem.coeffs, &views, &self.options, None, false)?.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: usize,
    pub total: f64,
    #[serde(rename = "L_eq")]
    pub l_eq: f64,
    #[serde(rename = "L_penalty")]
    pub l_penalty: f64,
    #[serde(rename = "L_ic")]
    pub l_ic: f64,
    #[serde(rename = "L_periodic")]
    pub l_periodic: f64,
    pub mse: f64,
    pub mae: f64,
    pub mean_abs: f64,
}

impl Snapshot {
    fn new(iteration: usize, br: &LossBreakdown, ev: &Evaluation) -> Self {
        Self {
            iteration,
            total: br.total,
            l_eq: br.l_eq,
            l_penalty: br.l_penalty,
            l_ic: br.l_ic,
            l_periodic: br.l_periodic,
            mse: ev.main.mse,
            mae: ev.main.mae,
            mean_abs: ev.main.mean_abs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizerStats {
    pub adam_steps: u64,
    pub lbfgs_iterations: u64,
    pub lbfgs_fallbacks: u64,
    pub lbfgs_discarded_pairs: u64,
    pub loss_evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub telemetry: PathBuf,
    pub field: PathBuf,
    pub checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub config: PathBuf,
}

impl Artifacts {
    fn in_dir(dir: &Path) -> Self {
        Self {
            telemetry: dir.join("telemetry.csv"),
            field: dir.join("field.csv"),
            checkpoint: dir.join("final.ckpt"),
            best_checkpoint: dir.join("best.ckpt"),
            config: dir.join("config.toml"),
        }
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub problem: String,
    pub reference: String,
    /// `ok` or `non_finite`.
    pub status: String,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub n_elements: usize,
    pub n_params: usize,
    pub initial: Snapshot,
    #[serde(rename = "final")]
    pub final_state: Snapshot,
    pub best: Snapshot,
    pub shock_band: Option<MetricsOut>,
    pub time_slices: Vec<TimeSliceMetrics>,
    pub optimizer: OptimizerStats,
    pub artifacts: Artifacts,
    pub config: RunConfig,
}

pub struct RunResult {
    pub summary: Summary,
    pub net: PiecewiseNet,
    pub telemetry: Vec<TelemetryRow>,
}

struct Evaluated {
    x: Vec<f64>,
    br: LossBreakdown,
    grad: Vec<f64>,
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Trains one network as configured and writes every artifact into
/// `config.output.dir`.
pub fn run_training(config: &RunConfig) -> Result<RunResult> {
    let setup = Setup::new(config)?;
    train(&setup)
}

pub fn train(setup: &Setup) -> Result<RunResult> {
    let cfg = &setup.config;
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir)?;
    let artifacts = Artifacts::in_dir(dir);
    std::fs::write(&artifacts.config, cfg.to_toml())?;
    let config_json = serde_json::to_value(cfg)?;

    let schedule = cfg.schedule();
    let adam_iters = schedule.adam_iters();
    let max_iters = schedule.max_iters;
    let eval_every = cfg.training.eval_every;
    let clock = Instant::now();
    let wall = || if cfg.output.deterministic_clock { 0.0 } else { clock.elapsed().as_secs_f64() };

    let mut net = setup.init_net()?;
    let n_params = net.params.len();
    let mut x = net.params.clone();
    let mut adam = AdamState::new(n_params, schedule.lr);
    let mut lbfgs = LbfgsState::new(schedule.history);
    let mut stats = OptimizerStats::default();
    let mut telemetry = TelemetryWriter::create(&artifacts.telemetry)?;
    let mut rows = Vec::with_capacity(max_iters + 1);

    let evals = RefCell::new(0u64);
    let last: RefCell<Option<Evaluated>> = RefCell::new(None);
    let work = RefCell::new(net.clone());
    let eval_at = |xv: &[f64], sel: Option<&[usize]>| -> Result<(LossBreakdown, Vec<f64>)> {
        let mut w = work.borrow_mut();
        w.params.copy_from_slice(xv);
        *evals.borrow_mut() += 1;
        let (br, g) = loss_and_gradient(&w, &setup.cache, &setup.problem.coeffs, &setup.options, sel)?;
        *last.borrow_mut() = Some(Evaluated { x: xv.to_vec(), br: br.clone(), grad: g.clone() });
        Ok((br, g))
    };

    let mut initial: Option<Snapshot> = None;
    let mut best: Option<(Snapshot, Vec<f64>)> = None;
    let mut final_snap: Option<Snapshot> = None;
    let mut final_eval: Option<Evaluation> = None;
    let mut phase = "init";
    for it in 0..=max_iters {
        let reuse = setup.options.top_k.is_none() && last.borrow().as_ref().is_some_and(|l| l.x == x);
        let (br, grad) = if reuse {
            let l = last.borrow_mut().take().unwrap();
            (l.br, l.grad)
        } else {
            eval_at(&x, None)?
        };
        let (max_loss, argmax) = br.max_element();
        let finite = br.total.is_finite() && all_finite(&grad);
        let evaluate = it % eval_every == 0 || it == max_iters || !finite;
        let ev = if evaluate {
            net.params.copy_from_slice(&x);
            Some(setup.evaluate(&net)?)
        } else {
            None
        };
        let row = TelemetryRow {
            iter: it,
            wall_time_s: wall(),
            total: br.total,
            l_eq: br.l_eq,
            l_penalty: br.l_penalty,
            l_ic: br.l_ic,
            max_elem_loss: max_loss,
            argmax_elem: argmax,
            mse: ev.as_ref().map(|e| e.main.mse),
            mae: ev.as_ref().map(|e| e.main.mae),
            l_periodic: br.l_periodic,
            phase,
        };
        telemetry.write(&row)?;
        rows.push(row);
        if !finite {
            telemetry.finish()?;
            stats.loss_evaluations = *evals.borrow();
            let snap = Snapshot::new(it, &br, ev.as_ref().unwrap());
            let summary = Summary {
                problem: setup.problem.name.clone(),
                reference: setup.problem.reference.name().into(),
                status: "non_finite".into(),
                iterations: it,
                wall_time_s: wall(),
                n_elements: net.n_elements,
                n_params,
                initial: initial.clone().unwrap_or_else(|| snap.clone()),
                final_state: snap.clone(),
                best: best.map(|b| b.0).unwrap_or(snap),
                shock_band: None,
                time_slices: Vec::new(),
                optimizer: stats,
                artifacts,
                config: cfg.clone(),
            };
            std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
            return Err(DgnnError::NonFinite { iteration: it, element: argmax });
        }
        if let Some(ev) = &ev {
            let snap = Snapshot::new(it, &br, ev);
            if initial.is_none() {
                initial = Some(snap.clone());
            }
            if best.as_ref().map_or(true, |(b, _)| snap.mse < b.mse) {
                best = Some((snap.clone(), x.clone()));
            }
            if it == max_iters {
                final_snap = Some(snap);
            }
        }
        if it == max_iters {
            final_eval = ev;
            break;
        }
        if it < adam_iters {
            adam.step(&mut x, &grad)?;
            stats.adam_steps += 1;
            phase = "adam";
        } else {
            let sel = setup.options.top_k.map(|_| br.selected.clone());
            let mut f = br.total;
            let mut g = grad;
            let mut obj = |xv: &[f64]| -> Result<(f64, Vec<f64>)> {
                let (b, g) = eval_at(xv, sel.as_deref())?;
                Ok((b.total, g))
            };
            lbfgs.step(&mut obj, &mut x, &mut f, &mut g)?;
            phase = "lbfgs";
        }
    }
    telemetry.finish()?;
    net.params.copy_from_slice(&x);
    stats.loss_evaluations = *evals.borrow();
    stats.lbfgs_iterations = lbfgs.iterations;
    stats.lbfgs_fallbacks = lbfgs.fallbacks;
    stats.lbfgs_discarded_pairs = lbfgs.discarded;

    let final_eval = final_eval.expect("last row is always evaluated");
    write_checkpoint(&artifacts.checkpoint, &net, max_iters, config_json.clone())?;
    let (best_snap, best_x) = best.expect("first row is always evaluated");
    let mut best_net = net.clone();
    best_net.params = best_x;
    write_checkpoint(&artifacts.best_checkpoint, &best_net, best_snap.iteration, config_json)?;
    write_field_csv(&artifacts.field, &setup.grid, &final_eval.prediction, Some(&setup.reference))?;

    let summary = Summary {
        problem: setup.problem.name.clone(),
        reference: setup.problem.reference.name().into(),
        status: "ok".into(),
        iterations: max_iters,
        wall_time_s: wall(),
        n_elements: net.n_elements,
        n_params,
        initial: initial.expect("first row is always evaluated"),
        final_state: final_snap.expect("last row is always evaluated"),
        best: best_snap,
        shock_band: final_eval.shock_band,
        time_slices: final_eval.time_slices.clone(),
        optimizer: stats,
        artifacts,
        config: cfg.clone(),
    };
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(RunResult { summary, net, telemetry: rows })
}

/// Report written next to an evaluated checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointReport {
    pub checkpoint: PathBuf,
    pub iteration: usize,
    pub problem: String,
    pub reference: String,
    pub mse: f64,
    pub mae: f64,
    pub mean_abs: f64,
    pub n_points: usize,
    pub shock_band: Option<MetricsOut>,
    pub time_slices: Vec<TimeSliceMetrics>,
}

/// Samples a checkpoint on its problem's grid; writes `field.csv` and
/// `metrics.json` into `out_dir`.
pub fn evaluate_checkpoint(path: &Path, out_dir: &Path) -> Result<CheckpointReport> {
    let (net, header) = read_checkpoint(path)?;
    let config: RunConfig = serde_json::from_value(header.config.clone())
        .map_err(|e| DgnnError::Config(format!("checkpoint carries no usable config: {e}")))?;
    let setup = Setup::new(&config)?;
    if net.arch != setup.arch || net.n_elements != setup.mesh.n_elements() {
        return Err(DgnnError::ShapeMismatch(format!(
            "architecture mismatch: checkpoint {:?} on {} elements, config implies {:?} on {}",
            net.arch,
            net.n_elements,
            setup.arch,
            setup.mesh.n_elements()
        )));
    }
    let ev = setup.evaluate(&net)?;
    std::fs::create_dir_all(out_dir)?;
    write_field_csv(&out_dir.join("field.csv"), &setup.grid, &ev.prediction, Some(&setup.reference))?;
    let report = CheckpointReport {
        checkpoint: path.to_path_buf(),
        iteration: header.iteration,
        problem: setup.problem.name.clone(),
        reference: setup.problem.reference.name().into(),
        mse: ev.main.mse,
        mae: ev.main.mae,
        mean_abs: ev.main.mean_abs,
        n_points: ev.main.n_points,
        shock_band: ev.shock_band,
        time_slices: ev.time_slices,
    };
    std::fs::write(out_dir.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[cfg(test)]
mod tests;
