use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{DgnnError, Result};
use crate::problems::EvalGrid;

pub const TELEMETRY_HEADER: &str =
    "iter,wall_time_s,total,L_eq,L_penalty,L_ic,max_elem_loss,argmax_elem,mse,mae,L_periodic,phase";

/// One line of `telemetry.csv`: the state after `iter` updates. `mse`/`mae`
/// are empty on rows where the grid was not evaluated; `phase` names the
/// optimizer that produced the state (`init` for row 0).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TelemetryRow {
    pub iter: usize,
    pub wall_time_s: f64,
    pub total: f64,
    pub l_eq: f64,
    pub l_penalty: f64,
    pub l_ic: f64,
    pub max_elem_loss: f64,
    pub argmax_elem: usize,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub l_periodic: f64,
    pub phase: &'static str,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl TelemetryRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{},{:e},{}",
            self.iter,
            self.wall_time_s,
            self.total,
            self.l_eq,
            self.l_penalty,
            self.l_ic,
            self.max_elem_loss,
            self.argmax_elem,
            opt(self.mse),
            opt(self.mae),
            self.l_periodic,
            self.phase
        )
    }
}

pub struct TelemetryWriter {
    out: BufWriter<File>,
}

impl TelemetryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{TELEMETRY_HEADER}")?;
        Ok(Self { out })
    }

    pub fn write(&mut self, row: &TelemetryRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv())?;
        Ok(())
    }

    pub fn finish(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// `x[,y][,t],u_pred[,u_ref,abs_err]`, one row per grid point.
pub fn write_field_csv(path: &Path, grid: &EvalGrid, pred: &[f64], reference: Option<&[f64]>) -> Result<()> {
    match reference {
        Some(r) => {
            if r.len() != pred.len() {
                return Err(DgnnError::ShapeMismatch("reference does not match the prediction".into()));
            }
            let err: Vec<f64> = pred.iter().zip(r).map(|(p, r)| (p - r).abs()).collect();
            write_grid_csv(path, grid, &[("u_pred", pred), ("u_ref", r), ("abs_err", &err)])
        }
        None => write_grid_csv(path, grid, &[("u_pred", pred)]),
    }
}

/// `x[,y][,t],u` for a reference field.
pub fn write_reference_csv(path: &Path, grid: &EvalGrid, values: &[f64]) -> Result<()> {
    write_grid_csv(path, grid, &[("u", values)])
}

fn write_grid_csv(path: &Path, grid: &EvalGrid, cols: &[(&str, &[f64])]) -> Result<()> {
    if cols.iter().any(|(_, c)| c.len() != grid.len()) {
        return Err(DgnnError::ShapeMismatch("field values do not match the grid".into()));
    }
    let mut out = BufWriter::new(File::create(path)?);
    let mut header = String::from("x");
    if grid.spatial_dim == 2 {
        header.push_str(",y");
    }
    if grid.transient {
        header.push_str(",t");
    }
    for (name, _) in cols {
        header.push(',');
        header.push_str(name);
    }
    writeln!(out, "{header}")?;
    for (i, p) in grid.points.iter().enumerate() {
        let mut line = format!("{:e}", p.x[0]);
        if grid.spatial_dim == 2 {
            line.push_str(&format!(",{:e}", p.x[1]));
        }
        if grid.transient {
            line.push_str(&format!(",{:e}", p.t));
        }
        for (_, c) in cols {
            line.push_str(&format!(",{:e}", c[i]));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}
