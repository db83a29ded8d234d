use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::MAX_TEST_DEGREE;
use crate::error::{DgnnError, Result};
use crate::loss::CacheSpec;
use crate::optim::Schedule;
use crate::problems::{self, ProblemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemName {
    Poisson1d,
    Square,
    Pentagon,
    Burgers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: ProblemName,
    /// Frequency of the 1D Poisson solution in units of π.
    pub omega_pi: f64,
    /// Area scale of the pentagon mesh.
    pub s_min: f64,
    /// Intervals in 1D, cells per side on the square. Ignored on the pentagon.
    pub n_elements: usize,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self { name: ProblemName::Poisson1d, omega_pi: 3.0, s_min: 0.05, n_elements: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationConfig {
    /// `N_int` in 1D, `N_E` in 2D.
    pub volume_points: usize,
    /// `N_e`, points per edge in 2D.
    pub edge_points: usize,
    /// Test degree `k`.
    pub degree: usize,
    /// `N_t` for transient problems.
    pub time_nodes: usize,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        Self { volume_points: 20, edge_points: 20, degree: 5, time_nodes: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub width: usize,
    /// Feed each element network coordinates rescaled to its own element
    /// instead of raw physical ones.
    pub local_inputs: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { hidden_layers: 2, width: 40, local_inputs: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub max_iters: usize,
    pub adam_fraction: f64,
    pub lr: f64,
    pub history: usize,
    /// Elements kept in the equation loss; 0 keeps all of them.
    pub top_k: usize,
    pub sigma: [f64; 3],
    pub jump_coefficient: f64,
    pub seed: u64,
    /// Compute grid metrics every this many iterations (always at the first
    /// and last row).
    pub eval_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            adam_fraction: 0.2,
            lr: 1e-4,
            history: 20,
            top_k: 0,
            sigma: [1.0; 3],
            jump_coefficient: 1.0,
            seed: 0,
            eval_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Record zero wall time so telemetry is byte-reproducible.
    pub deterministic_clock: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/default"), deterministic_clock: false }
    }
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub discretization: DiscretizationConfig,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub output: OutputConfig,
}

/// Named setups; see README for the parameter values.
pub const PRESETS: [&str; 5] = ["poisson-low", "poisson-high", "pentagon", "burgers", "square"];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        match name {
            "poisson-low" => {}
            "poisson-high" => {
                c.problem.omega_pi = 15.0;
                c.problem.n_elements = 25;
                c.network.local_inputs = true;
                c.training.max_iters = 5000;
            }
            "pentagon" => {
                c.problem.name = ProblemName::Pentagon;
                c.discretization = DiscretizationConfig { volume_points: 15, edge_points: 20, degree: 3, time_nodes: 1 };
                c.network.width = 20;
                c.training.max_iters = 20000;
                c.training.adam_fraction = 0.0;
            }
            "burgers" => {
                c.problem.name = ProblemName::Burgers;
                c.problem.n_elements = 11;
                c.discretization = DiscretizationConfig { volume_points: 20, edge_points: 1, degree: 3, time_nodes: 30 };
                c.network.width = 50;
                c.network.local_inputs = true;
                c.training.max_iters = 6000;
            }
            "square" => {
                c.problem.name = ProblemName::Square;
                c.problem.n_elements = 4;
                c.discretization = DiscretizationConfig { volume_points: 15, edge_points: 20, degree: 3, time_nodes: 1 };
                c.network.width = 20;
            }
            _ => return Err(DgnnError::Config(format!("unknown preset `{name}` (known: {})", PRESETS.join(", ")))),
        }
        c.output.dir = PathBuf::from("runs").join(name);
        Ok(c)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| DgnnError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DgnnError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `section.key=value` overrides; values are TOML literals, and
    /// anything that does not parse as one is taken as a string. String
    /// entries always take the raw text, so `output.dir=nan` stays a path.
    pub fn with_overrides<S: AsRef<str>>(&self, sets: &[S]) -> Result<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| DgnnError::Config(e.to_string()))?;
        for s in sets {
            let s = s.as_ref();
            let (key, raw) = s.split_once('=').ok_or_else(|| DgnnError::Config(format!("override `{s}` is not key=value")))?;
            let value = parse_literal(raw.trim());
            let mut cur = &mut root;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let table = cur.as_table_mut().ok_or_else(|| DgnnError::Config(format!("`{key}` does not name a table entry")))?;
                if i + 1 == parts.len() {
                    let value = match table.get(*part) {
                        None => return Err(DgnnError::Config(format!("unknown config key `{key}`"))),
                        Some(toml::Value::String(_)) if !matches!(value, toml::Value::String(_)) => {
                            toml::Value::String(raw.trim().to_string())
                        }
                        Some(_) => value.clone(),
                    };
                    table.insert((*part).to_string(), value);
                    break;
                }
                cur = table.get_mut(*part).ok_or_else(|| DgnnError::Config(format!("unknown config key `{key}`")))?;
            }
        }
        let c: RunConfig = root.try_into().map_err(|e: toml::de::Error| DgnnError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DgnnError::Config(m));
        let d = &self.discretization;
        if d.degree > MAX_TEST_DEGREE {
            return bad(format!("test degree {} exceeds {MAX_TEST_DEGREE}", d.degree));
        }
        if !(3..=64).contains(&d.volume_points) {
            return bad(format!("volume_points = {} outside [3, 64]", d.volume_points));
        }
        if d.edge_points == 0 || d.time_nodes == 0 {
            return bad("edge_points and time_nodes must be positive".into());
        }
        if self.network.hidden_layers == 0 || self.network.width == 0 {
            return bad("network needs at least one hidden layer of positive width".into());
        }
        if self.problem.name != ProblemName::Pentagon && self.problem.n_elements == 0 {
            return bad("n_elements must be positive".into());
        }
        if self.problem.name == ProblemName::Pentagon && !(self.problem.s_min > 0.0) {
            return bad(format!("s_min must be positive, got {}", self.problem.s_min));
        }
        if self.problem.name == ProblemName::Poisson1d && !(self.problem.omega_pi > 0.0) {
            return bad(format!("omega_pi must be positive, got {}", self.problem.omega_pi));
        }
        if self.problem.name == ProblemName::Burgers && d.time_nodes < 2 {
            return bad("transient problems need at least 2 time nodes".into());
        }
        let t = &self.training;
        if t.sigma.iter().any(|s| !(*s >= 0.0)) {
            return bad("sigma weights must be non-negative".into());
        }
        if t.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        self.schedule().validate().map_err(|e| DgnnError::Config(e.to_string()))
    }

    pub fn schedule(&self) -> Schedule {
        let t = &self.training;
        Schedule { max_iters: t.max_iters, adam_fraction: t.adam_fraction, lr: t.lr, history: t.history }
    }

    pub fn cache_spec(&self) -> CacheSpec {
        let d = &self.discretization;
        let transient = self.problem.name == ProblemName::Burgers;
        CacheSpec {
            volume_points: d.volume_points,
            edge_points: d.edge_points,
            degree: d.degree,
            time_nodes: if transient { d.time_nodes } else { 1 },
        }
    }

    /// Builds the problem; the pentagon solves its classical DG reference here.
    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let p = &self.problem;
        let mut spec = match p.name {
            ProblemName::Poisson1d => problems::poisson1d(p.omega_pi * PI)?,
            ProblemName::Square => problems::square_sine(),
            ProblemName::Pentagon => problems::pentagon_poisson(p.s_min)?,
            ProblemName::Burgers => problems::burgers(),
        };
        spec.coeffs.jump_coefficient = self.training.jump_coefficient;
        Ok(spec)
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_overrides() {
        let c = RunConfig::preset("burgers").unwrap();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let o = c.with_overrides(&["training.max_iters=7", "problem.name=pentagon", "output.dir=/tmp/x", "training.sigma=[1, 2, 3]"]).unwrap();
        assert_eq!(o.training.max_iters, 7);
        assert_eq!(o.problem.name, ProblemName::Pentagon);
        assert_eq!(o.output.dir, PathBuf::from("/tmp/x"));
        assert_eq!(o.training.sigma, [1.0, 2.0, 3.0]);
        let o = c.with_overrides(&["output.dir=nan", "problem.name=\"square\""]).unwrap();
        assert_eq!(o.output.dir, PathBuf::from("nan"));
        assert_eq!(o.problem.name, ProblemName::Square);
    }

    #[test]
    fn rejects_bad_values() {
        let c = RunConfig::default();
        assert!(c.with_overrides(&["discretization.degree=11"]).is_err());
        assert!(c.with_overrides(&["discretization.volume_points=2"]).is_err());
        assert!(c.with_overrides(&["discretization.volume_points=65"]).is_err());
        assert!(c.with_overrides(&["training.nope=1"]).is_err());
        assert!(c.with_overrides(&["training.max_iters"]).is_err());
        assert!(c.with_overrides(&["problem.n_elements=0"]).is_err());
        assert!(RunConfig::from_toml("[training]\nmax_iter = 3").is_err());
        assert!(RunConfig::preset("nope").is_err());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = RunConfig::from_toml("[problem]\nname = \"square\"\n").unwrap();
        assert_eq!(c.problem.name, ProblemName::Square);
        assert_eq!(c.training, TrainingConfig::default());
    }
}
