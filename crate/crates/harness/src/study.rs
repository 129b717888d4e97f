//! Scaling studies, solver comparisons and lemma probes.

use std::path::Path;

use obo_core::metrics::{
    inner_solution_lipschitz_probe, lemma_gap_probes, random_outer_points, sample_outer_points, GapReport,
    LipschitzProbe, ReferenceEvaluator, SupStrategy,
};
use obo_core::problem::{fd_check, FdReport};
use obo_core::stats::loglog_slope;
use obo_core::Vector;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{line_chart, to_csv, write_atomic, write_json, Series};
use crate::runner::{run_experiment, RunOutcome, RunSummary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "reg_F")]
    pub reg_f: f64,
    #[serde(rename = "reg_F_over_T")]
    pub reg_f_over_t: f64,
    #[serde(rename = "reg_F_over_sqrt_T")]
    pub reg_f_over_sqrt_t: f64,
    #[serde(rename = "I_T")]
    pub i_t: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub solver: String,
    pub problem: String,
    pub rows: Vec<ScalingRow>,
    /// Log-log slope of `Reg_F` against `T`.
    pub reg_f_exponent: Option<f64>,
    pub i_t_exponent: Option<f64>,
}

impl ScalingReport {
    pub fn from_summaries(summaries: &[RunSummary]) -> Self {
        let mut rows: Vec<ScalingRow> = summaries
            .iter()
            .map(|s| ScalingRow {
                t: s.t,
                reg_f: s.reg_f,
                reg_f_over_t: s.reg_f / s.t as f64,
                reg_f_over_sqrt_t: s.reg_f / (s.t as f64).sqrt(),
                i_t: s.i_t,
            })
            .collect();
        rows.sort_by_key(|r| r.t);
        let ts: Vec<f64> = rows.iter().map(|r| r.t as f64).collect();
        let regs: Vec<f64> = rows.iter().map(|r| r.reg_f).collect();
        let iters: Vec<f64> = rows.iter().map(|r| r.i_t as f64).collect();
        ScalingReport {
            solver: summaries.first().map(|s| s.solver.clone()).unwrap_or_default(),
            problem: summaries.first().map(|s| s.problem.clone()).unwrap_or_default(),
            reg_f_exponent: loglog_slope(&ts, &regs),
            i_t_exponent: loglog_slope(&ts, &iters),
            rows,
        }
    }
}

/// Runs `config` at each horizon of `t_list` and fits growth exponents.
pub fn scaling_study(config: &ExperimentConfig, t_list: &[usize], out_dir: Option<&Path>) -> Result<ScalingReport> {
    if t_list.len() < 3 {
        return Err(HarnessError::config("a scaling study needs at least 3 horizons"));
    }
    if t_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HarnessError::config("scaling horizons must be strictly increasing"));
    }
    let mut cfg = config.clone();
    cfg.t_list = t_list.to_vec();
    let outcomes = run_experiment(&cfg, out_dir)?;
    let summaries: Vec<RunSummary> = outcomes.into_iter().map(|o| o.summary).collect();
    let report = ScalingReport::from_summaries(&summaries);
    let dir = out_dir.unwrap_or(&cfg.out_dir);
    write_atomic(&dir.join("scaling.csv"), to_csv(&report.rows)?.as_bytes())?;
    write_json(&dir.join("scaling.json"), &report)?;
    Ok(report)
}

/// Runs several configs over a shared problem and horizon list.
pub fn compare_solvers(configs: &[ExperimentConfig], out_dir: Option<&Path>) -> Result<Vec<RunSummary>> {
    let first = configs.first().ok_or_else(|| HarnessError::config("compare needs at least one config"))?;
    for c in &configs[1..] {
        if c.problem != first.problem || c.t_list != first.t_list {
            return Err(HarnessError::config("compared configs must share the problem and T_list"));
        }
    }
    let dir = out_dir.unwrap_or(&first.out_dir).to_path_buf();
    let mut rows = Vec::new();
    let mut curves: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (i, c) in configs.iter().enumerate() {
        let mut c = c.clone();
        if configs.iter().filter(|o| o.label() == c.label() && o.solver.name == c.solver.name).count() > 1 {
            c.label = Some(format!("{}{}", c.label(), i));
        }
        let outcomes: Vec<RunOutcome> = match run_experiment(&c, Some(&dir)) {
            Ok(o) => o,
            Err(HarnessError::AllRunsFailed(n)) => {
                eprintln!("every run of '{}' ({}) failed ({n})", c.label(), c.solver.name.as_str());
                continue;
            }
            Err(e) => return Err(e),
        };
        if let Some(last) = outcomes.iter().max_by_key(|o| o.summary.t) {
            let reg = &last.evaluation.reg_f;
            curves.push((
                last.summary.run_id.clone(),
                reg.rounds.iter().zip(&reg.cumulative).map(|(t, v)| (*t as f64, *v)).collect(),
            ));
        }
        rows.extend(outcomes.into_iter().map(|o| o.summary));
    }
    if rows.is_empty() {
        return Err(HarnessError::AllRunsFailed(configs.len()));
    }
    write_atomic(&dir.join("compare.csv"), to_csv(&rows)?.as_bytes())?;
    let series: Vec<Series> = curves.iter().map(|(n, p)| Series { name: n, points: p.clone() }).collect();
    let svg = line_chart("cumulative Reg_F", "round t", "Reg_F(t)", &series, first.emit.svg_log_y);
    write_atomic(&dir.join("compare_regret.svg"), svg.as_bytes())?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdSummary {
    pub points: usize,
    pub step: f64,
    pub worst: FdReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub problem: String,
    pub lambda_threshold: f64,
    pub gaps: GapReport,
    pub lipschitz: LipschitzProbe,
    pub fd: FdSummary,
}

/// Penalty-gap, `y*`-Lipschitz and finite-difference probes of the configured problem.
pub fn run_probes(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ProbeReport> {
    let settings = &config.probes;
    let problem = config.problem.build(settings.horizon.max(2))?;
    let problem = problem.as_ref();
    let meta = problem.metadata();
    let threshold = 2.0 * meta.l_f1 / meta.mu_g;
    if settings.lambdas.iter().any(|l| *l < threshold) {
        return Err(HarnessError::config(format!(
            "probe multipliers must be >= 2 L_f1 / mu_g = {threshold}"
        )));
    }
    let round = settings.round.clamp(1, problem.horizon());
    let (d1, d2) = problem.dims();
    let evaluator = ReferenceEvaluator::new(problem, config.reference.clone());
    let seed = config.sup_strategy.seed;
    let radius = config.sup_strategy.free_radius;
    let grid = SupStrategy {
        points: settings.samples,
        random_points: settings.samples,
        ..config.sup_strategy.clone()
    };
    let samples = sample_outer_points(problem.outer_set(), d1, &grid);
    let gaps = lemma_gap_probes(&evaluator, round, &settings.lambdas, &samples)?;

    let pts = random_outer_points(problem.outer_set(), d1, 2 * settings.lipschitz_pairs, seed, radius);
    let pairs: Vec<(Vector, Vector)> = pts.chunks_exact(2).map(|c| (c[0].clone(), c[1].clone())).collect();
    let lipschitz = inner_solution_lipschitz_probe(&evaluator, round, &pairs)?;

    let xs = random_outer_points(problem.outer_set(), d1, settings.fd_points, seed ^ 1, radius);
    let ys = random_outer_points(&obo_core::ConstraintSet::Free, d2, settings.fd_points, seed ^ 2, 2.0);
    let mut worst = FdReport { grad_f_x: 0.0, grad_f_y: 0.0, grad_g_x: 0.0, grad_g_y: 0.0 };
    for (i, (x, y)) in xs.iter().zip(&ys).enumerate() {
        let t = 1 + i % problem.horizon();
        let r = fd_check(problem, t, x, y, settings.fd_step)?;
        worst.grad_f_x = worst.grad_f_x.max(r.grad_f_x);
        worst.grad_f_y = worst.grad_f_y.max(r.grad_f_y);
        worst.grad_g_x = worst.grad_g_x.max(r.grad_g_x);
        worst.grad_g_y = worst.grad_g_y.max(r.grad_g_y);
    }
    let report = ProbeReport {
        problem: problem.name().to_string(),
        lambda_threshold: threshold,
        gaps,
        lipschitz,
        fd: FdSummary { points: xs.len(), step: settings.fd_step, worst },
    };
    let dir = out_dir.unwrap_or(&config.out_dir);
    write_json(&dir.join(format!("{}-probes.json", config.label())), &report)?;
    Ok(report)
}
