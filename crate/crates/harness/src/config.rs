//! Experiment configuration: one JSON document per experiment.

use std::path::{Path, PathBuf};

use obo_core::metrics::{ReferenceSettings, SupStrategy};
use obo_core::problem::{
    DriftSpec, DriftingRidge, DriftingRidgeSpec, MatrixSpec, OscillatoryDrift, QuadraticTracking,
    QuadraticTrackingSpec,
};
use obo_core::solvers::{
    derive_theorem_config, BetaRule, InnerMode, ModeKind, SolverConfig, SolverKind, TheoremOptions,
};
use obo_core::{BilevelProblem, Vector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{HarnessError, Result};

pub const SEED_ENV: &str = "OBO_SEED";

pub type DynProblem = dyn BilevelProblem + Send + Sync;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Oscillatory {
        #[serde(default = "one")]
        c: f64,
        #[serde(default = "one")]
        mu_g: f64,
    },
    QuadraticTracking(QuadraticTrackingSpec),
    DriftingRidge(DriftingRidgeSpec),
}

fn one() -> f64 {
    1.0
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Oscillatory { .. } => "oscillatory",
            ProblemSpec::QuadraticTracking(_) => "quadratic_tracking",
            ProblemSpec::DriftingRidge(_) => "drifting_ridge",
        }
    }

    pub fn build(&self, horizon: usize) -> Result<Box<DynProblem>> {
        Ok(match self {
            ProblemSpec::Oscillatory { c, mu_g } => Box::new(OscillatoryDrift::new(horizon, *c, *mu_g)?),
            ProblemSpec::QuadraticTracking(spec) => Box::new(QuadraticTracking::new(horizon, spec)?),
            ProblemSpec::DriftingRidge(spec) => Box::new(DriftingRidge::new(horizon, spec)?),
        })
    }

    fn apply_seed(&mut self, seed: u64) {
        match self {
            ProblemSpec::Oscillatory { .. } => {}
            ProblemSpec::QuadraticTracking(spec) => {
                if let MatrixSpec::Seeded { seed: s, .. } = &mut spec.matrix {
                    *s = seed;
                }
                for drift in [&mut spec.target_drift, &mut spec.inner_drift] {
                    if let DriftSpec::RandomWalk { seed: s, .. } = drift {
                        *s = seed;
                    }
                }
            }
            ProblemSpec::DriftingRidge(spec) => spec.seed = seed,
        }
    }
}

/// Solver choice plus optional overrides of the theorem-derived parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub name: SolverKind,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_const: Option<f64>,
    #[serde(default)]
    pub beta_rule: BetaRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z0: Option<Vector>,
}

fn default_tau() -> f64 {
    0.5
}

impl SolverSpec {
    pub fn new(name: SolverKind) -> Self {
        SolverSpec {
            name,
            tau: default_tau(),
            lambda1: None,
            alpha: None,
            beta: None,
            gamma: None,
            k: None,
            delta_y: None,
            delta_z: None,
            cap: None,
            gamma_cap: None,
            rho: None,
            c_const: None,
            beta_rule: BetaRule::Horizon,
            x0: None,
            y0: None,
            z0: None,
        }
    }

    /// Theorem-derived configuration with the overrides applied.
    pub fn solver_config(&self, problem: &DynProblem) -> Result<SolverConfig> {
        let kind = match self.name {
            SolverKind::Af2obo => ModeKind::Adaptive,
            _ => ModeKind::FixedK,
        };
        let defaults = TheoremOptions::default();
        let options = TheoremOptions {
            gamma_cap: self.gamma_cap.unwrap_or(defaults.gamma_cap),
            rho: self.rho,
            c_const: self.c_const,
            k_override: self.k,
            adaptive_cap: self.cap.unwrap_or(defaults.adaptive_cap),
        };
        let mut cfg = derive_theorem_config(problem, self.tau, kind, &options)?;
        if let Some(v) = self.lambda1 {
            cfg.lambda1 = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let InnerMode::Adaptive { delta_y, delta_z, .. } = &mut cfg.mode {
            if let Some(v) = self.delta_y {
                *delta_y = v;
            }
            if let Some(v) = self.delta_z {
                *delta_z = v;
            }
        }
        cfg.beta_rule = self.beta_rule;
        if let Some(v) = &self.x0 {
            cfg.x0 = v.clone();
        }
        if let Some(v) = &self.y0 {
            cfg.y0 = v.clone();
        }
        if let Some(v) = &self.z0 {
            cfg.z0 = v.clone();
        }
        Ok(cfg.validated(problem)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmitFlags {
    pub csv: bool,
    pub jsonl: bool,
    pub svg: bool,
    /// Log-scale y axis on the cumulative-regret chart.
    pub svg_log_y: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        EmitFlags { csv: true, jsonl: true, svg: false, svg_log_y: false }
    }
}

/// Settings of the `probes` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    /// Multipliers; values below `2 L_f1 / mu_g` are rejected.
    pub lambdas: Vec<f64>,
    pub samples: usize,
    pub round: usize,
    pub lipschitz_pairs: usize,
    pub fd_step: f64,
    pub fd_points: usize,
    pub horizon: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            lambdas: vec![10.0, 20.0, 40.0, 80.0],
            samples: 8,
            round: 1,
            lipschitz_pairs: 200,
            fd_step: 1e-5,
            fd_points: 50,
            horizon: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub solver: SolverSpec,
    #[serde(rename = "T_list", default = "default_t_list")]
    pub t_list: Vec<usize>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub emit: EmitFlags,
    #[serde(default)]
    pub sup_strategy: SupStrategy,
    #[serde(default)]
    pub reference: ReferenceSettings,
    #[serde(default)]
    pub probes: ProbeSettings,
    /// Prefix of run ids; defaults to the problem name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Compute `Reg_L` for penalty solvers.
    #[serde(default = "yes")]
    pub reg_l: bool,
    /// Compute `V_T` and `H_{2,T}`.
    #[serde(default = "yes")]
    pub variations: bool,
}

fn default_t_list() -> Vec<usize> {
    vec![256]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn new(problem: ProblemSpec, solver: SolverSpec) -> Self {
        ExperimentConfig {
            problem,
            solver,
            t_list: default_t_list(),
            out_dir: default_out_dir(),
            emit: EmitFlags::default(),
            sup_strategy: SupStrategy::default(),
            reference: ReferenceSettings::default(),
            probes: ProbeSettings::default(),
            label: None,
            reg_l: true,
            variations: true,
        }
    }

    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)
            .map_err(|e| HarnessError::config(format!("config is not valid JSON: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(value)
            .map_err(|e| HarnessError::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, applies `--set` overrides and then `OBO_SEED`.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_json(&text, overrides)?;
        if let Some(seed) = seed_from_env()? {
            cfg.apply_seed(seed);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_list.is_empty() {
            return Err(HarnessError::config("T_list must not be empty"));
        }
        if self.t_list.iter().any(|t| *t < 2) {
            return Err(HarnessError::config("every horizon in T_list must be >= 2"));
        }
        self.problem.build(2).map_err(|e| HarnessError::config(e.to_string()))?;
        Ok(())
    }

    /// Overrides every seed in the config.
    pub fn apply_seed(&mut self, seed: u64) {
        self.problem.apply_seed(seed);
        self.sup_strategy.seed = seed;
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.problem.name())
    }

    pub fn run_id(&self, horizon: usize) -> String {
        format!("{}-{}-T{}", self.label(), self.solver.name.as_str(), horizon)
    }
}

pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| HarnessError::config(format!("{SEED_ENV} must be an unsigned integer, got '{s}'"))),
        Err(_) => Ok(None),
    }
}

/// Applies `a.b.c=value` to a JSON tree. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| HarnessError::config(format!("override '{assignment}' is not key=value")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(HarnessError::config(format!("bad override path '{path}'")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let map = node
            .as_object_mut()
            .ok_or_else(|| HarnessError::config(format!("override path '{path}' crosses a non-object")))?;
        node = map
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| HarnessError::config(format!("override path '{path}' crosses a non-object")))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
