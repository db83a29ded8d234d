use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use super::{run_training, RunConfig, Setup};
use crate::error::{DgnnError, Result};

/// Cartesian grid of config overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Sweep {
    pub axes: Vec<(String, Vec<String>)>,
}

fn split_values(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut quoted = false;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '"' => quoted = !quoted,
            '[' if !quoted => depth += 1,
            ']' if !quoted => depth -= 1,
            ',' if depth == 0 && !quoted => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

impl Sweep {
    /// Parses `key=v1,v2,...` axes; commas inside brackets stay with the value.
    pub fn parse<S: AsRef<str>>(specs: &[S]) -> Result<Self> {
        let mut axes = Vec::new();
        for s in specs {
            let s = s.as_ref();
            let (k, v) = s.split_once('=').ok_or_else(|| DgnnError::Config(format!("sweep axis `{s}` is not key=v1,v2,...")))?;
            let vals = split_values(v);
            if vals.is_empty() {
                return Err(DgnnError::Config(format!("sweep axis `{k}` has no values")));
            }
            axes.push((k.trim().to_string(), vals));
        }
        Ok(Self { axes })
    }

    /// Override lists for every grid point, last axis fastest.
    pub fn points(&self) -> Vec<Vec<(String, String)>> {
        let mut pts = vec![Vec::new()];
        for (k, vals) in &self.axes {
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    vals.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((k.clone(), v.clone()));
                        q
                    })
                })
                .collect();
        }
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationMode {
    /// Train every grid point.
    Train,
    /// Only evaluate the loss of the exact solution.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub index: usize,
    pub params: Vec<(String, String)>,
    /// `ok` or the error message.
    pub status: String,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub mean_abs: Option<f64>,
    pub wall_time_s: f64,
    pub iterations: Option<usize>,
    pub exact_loss: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn run_row(base: &RunConfig, index: usize, params: &[(String, String)], out_dir: &Path, mode: AblationMode) -> Result<AblationRow> {
    let sets: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let mut cfg = base.with_overrides(&sets)?;
    cfg.output.dir = out_dir.join(format!("row_{index:03}"));
    let clock = Instant::now();
    let mut row = AblationRow {
        index,
        params: params.to_vec(),
        status: "ok".into(),
        mse: None,
        mae: None,
        mean_abs: None,
        wall_time_s: 0.0,
        iterations: None,
        exact_loss: None,
    };
    match mode {
        AblationMode::Train => {
            let r = run_training(&cfg)?;
            let f = &r.summary.final_state;
            row.mse = Some(f.mse);
            row.mae = Some(f.mae);
            row.mean_abs = Some(f.mean_abs);
            row.iterations = Some(r.summary.iterations);
            row.wall_time_s = r.summary.wall_time_s;
        }
        AblationMode::Exact => {
            let setup = Setup::new(&cfg)?;
            row.exact_loss = Some(setup.exact_loss()?.total);
            row.wall_time_s = if cfg.output.deterministic_clock { 0.0 } else { clock.elapsed().as_secs_f64() };
        }
    }
    Ok(row)
}

/// Runs every grid point, recording failures per row, and writes
/// `ablation.csv` into `out_dir`.
pub fn run_ablation(base: &RunConfig, sweep: &Sweep, out_dir: &Path, mode: AblationMode) -> Result<Vec<AblationRow>> {
    std::fs::create_dir_all(out_dir)?;
    let points = sweep.points();
    let mut rows = Vec::with_capacity(points.len());
    for (i, params) in points.iter().enumerate() {
        let row = run_row(base, i, params, out_dir, mode).unwrap_or_else(|e| AblationRow {
            index: i,
            params: params.clone(),
            status: format!("error: {e}").replace([',', '\n'], ";"),
            mse: None,
            mae: None,
            mean_abs: None,
            wall_time_s: 0.0,
            iterations: None,
            exact_loss: None,
        });
        rows.push(row);
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(out_dir.join("ablation.csv"))?);
    let keys: Vec<&str> = sweep.axes.iter().map(|(k, _)| k.as_str()).collect();
    let mut header = vec!["row"];
    header.extend(&keys);
    header.extend(["status", "mse", "mae", "mean_abs", "wall_time_s", "iterations", "exact_loss"]);
    writeln!(out, "{}", header.join(","))?;
    for r in &rows {
        let mut line = vec![r.index.to_string()];
        // quote values that contain commas (arrays)
        line.extend(r.params.iter().map(|(_, v)| if v.contains(',') { format!("\"{}\"", v.replace('"', "'")) } else { v.clone() }));
        line.push(r.status.clone());
        line.push(cell(r.mse));
        line.push(cell(r.mae));
        line.push(cell(r.mean_abs));
        line.push(format!("{:e}", r.wall_time_s));
        line.push(r.iterations.map(|i| i.to_string()).unwrap_or_default());
        line.push(cell(r.exact_loss));
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(rows)
}
