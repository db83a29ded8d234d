use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dgnn::dg::{DgSolution, IpdgConfig};
use dgnn::experiment::{
    evaluate_checkpoint, run_ablation, run_training, write_reference_csv, AblationMode, RunConfig, Sweep, PRESETS,
};
use dgnn::geometry::{read_mesh, regular_pentagon, triangulate_polygon, write_mesh, Mesh2D, MeshSummary};
use dgnn::problems::{EvalGrid, Mesh, PENTAGON_REFERENCE_DEGREE, PENTAGON_REFERENCE_REFINEMENTS};
use dgnn::DgnnError;

#[derive(Parser)]
#[command(name = "dgnn", version, about = "Piecewise neural PDE solver with a classical DG reference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Triangulate a polygon (or re-read a mesh file) and print a summary.
    Mesh(MeshArgs),
    /// Solve the pentagon problem with classical DG and sample it on a grid.
    Oracle(OracleArgs),
    /// Write a problem's reference field on its evaluation grid.
    Reference(RefArgs),
    /// Train one network.
    Train(TrainArgs),
    /// Sweep config keys over a grid of values.
    Ablate(AblateArgs),
    /// Evaluate a checkpoint on its problem's grid.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Pentagon,
    Square,
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long, value_enum, default_value = "pentagon")]
    shape: Shape,
    #[arg(long, default_value_t = 0.05)]
    s_min: f64,
    /// Read this mesh file instead of generating one.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Mesh file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the JSON summary here (it always goes to stdout).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 0.05)]
    s_min: f64,
    /// Solve on this mesh instead of the refined pentagon mesh.
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long, default_value_t = PENTAGON_REFERENCE_DEGREE)]
    degree: usize,
    #[arg(long, default_value_t = PENTAGON_REFERENCE_REFINEMENTS)]
    refine: usize,
    /// Grid points per side of the bounding box.
    #[arg(long, default_value_t = 200)]
    grid: usize,
    #[arg(long, default_value = "oracle.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named setup.
    #[arg(long)]
    preset: Option<String>,
    /// `section.key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let base = match (&self.config, &self.preset) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, Some(name)) => RunConfig::preset(name)?,
            (None, None) => RunConfig::default(),
        };
        Ok(base.with_overrides(&self.sets)?)
    }
}

#[derive(Args)]
struct RefArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value = "reference.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Print the resolved config and stop.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Train,
    Exact,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Axis `section.key=v1,v2,...`, repeatable; the grid is their product.
    #[arg(long = "sweep", value_name = "KEY=V1,V2", required = true)]
    sweeps: Vec<String>,
    #[arg(long, value_enum, default_value = "train")]
    mode: Mode,
    #[arg(long, default_value = "runs/ablation")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
}

fn pentagon_or_file(input: Option<&Path>, shape: Shape, s_min: f64) -> Result<Mesh2D> {
    if let Some(p) = input {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        return Ok(read_mesh(&text)?);
    }
    let poly = match shape {
        Shape::Pentagon => regular_pentagon(),
        Shape::Square => vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
    };
    Ok(triangulate_polygon(&poly, s_min)?)
}

fn cmd_mesh(a: MeshArgs) -> Result<()> {
    let mesh = pentagon_or_file(a.input.as_deref(), a.shape, a.s_min)?;
    if let Some(p) = &a.out {
        std::fs::write(p, write_mesh(&mesh))?;
    }
    let summary = serde_json::to_string_pretty(&MeshSummary::of(&mesh))?;
    if let Some(p) = &a.summary {
        std::fs::write(p, &summary)?;
    }
    println!("{summary}");
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> Result<()> {
    let mut mesh = pentagon_or_file(a.mesh.as_deref(), Shape::Pentagon, a.s_min)?;
    for _ in 0..a.refine {
        mesh = mesh.refine_uniform()?;
    }
    let sol = DgSolution::compute(&mesh, &IpdgConfig::new(a.degree), &|_| 10.0, &|_| 0.0)?;
    let (lo, hi) = bounding_box(&mesh);
    let wrapped = Mesh::Triangles(mesh);
    let grid = EvalGrid::masked_box(lo, hi, a.grid, &wrapped);
    let pts: Vec<_> = grid.points.iter().map(|p| p.x).collect();
    let values = sol.evaluate(&pts)?;
    write_reference_csv(&a.out, &grid, &values)?;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    eprintln!(
        "oracle: {} elements, degree {}, residual {:e}, max u = {max:.6}, {} points -> {}",
        wrapped.n_elements(),
        a.degree,
        sol.residual,
        values.len(),
        a.out.display()
    );
    Ok(())
}

fn bounding_box(mesh: &Mesh2D) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for v in &mesh.vertices {
        for d in 0..2 {
            lo[d] = lo[d].min(v[d]);
            hi[d] = hi[d].max(v[d]);
        }
    }
    (lo, hi)
}

fn cmd_reference(a: RefArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    let problem = cfg.problem_spec()?;
    let mesh = problem.mesh(cfg.problem.n_elements)?;
    let grid = problem.grid(&mesh)?;
    let values = problem.reference.values(&grid.points)?;
    write_reference_csv(&a.out, &grid, &values)?;
    eprintln!("reference ({}): {} points -> {}", problem.reference.name(), values.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    if a.dry_run {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let r = run_training(&cfg)?;
    let s = &r.summary;
    println!(
        "{}: {} iterations in {:.1} s, final mse {:e} mae {:e}, best mse {:e} at {}",
        s.problem, s.iterations, s.wall_time_s, s.final_state.mse, s.final_state.mae, s.best.mse, s.best.iteration
    );
    for ts in &s.time_slices {
        println!("  t = {}: mse {:e} mae {:e}", ts.t, ts.mse, ts.mae);
    }
    println!("summary: {}", cfg.output.dir.join("summary.json").display());
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    let sweep = Sweep::parse(&a.sweeps)?;
    let mode = match a.mode {
        Mode::Train => AblationMode::Train,
        Mode::Exact => AblationMode::Exact,
    };
    let rows = run_ablation(&cfg, &sweep, &a.out, mode)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!("{} rows ({failed} failed) -> {}", rows.len(), a.out.join("ablation.csv").display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let rep = evaluate_checkpoint(&a.checkpoint, &a.out)?;
    println!("{}", serde_json::to_string_pretty(&rep)?);
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<DgnnError>() {
        return e.exit_code() as u8;
    }
    if err.downcast_ref::<std::io::Error>().is_some() || err.downcast_ref::<serde_json::Error>().is_some() {
        return 4;
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Mesh(a) => cmd_mesh(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Reference(a) => cmd_reference(a),
        Command::Train(a) => cmd_train(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(DgnnError::Config(_)) = e.downcast_ref::<DgnnError>() {
                eprintln!("presets: {}", PRESETS.join(", "));
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
