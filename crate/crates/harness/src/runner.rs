//! Single runs, their evaluation, and persistence of a whole experiment.

use std::path::{Path, PathBuf};
use std::time::Instant;

use obo_core::metrics::{
    reg_f_contribution, reg_l_contribution, variation_meters, OracleCounters, ReferenceEvaluator,
    RegretAccumulators, VariationReport,
};
use obo_core::solvers::{run_af2obo, run_f2obo, run_oracle_ogd_baseline, AbortInfo, RunTrace, SolverKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DynProblem, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::output::{line_chart, read_jsonl, records_to_jsonl, to_csv, write_atomic, write_json, Series};

/// One row of `summary.csv`. Field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub solver: String,
    pub problem: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub tau: Option<f64>,
    pub gamma: f64,
    #[serde(rename = "reg_F")]
    pub reg_f: f64,
    #[serde(rename = "reg_L")]
    pub reg_l: Option<f64>,
    #[serde(rename = "V_T")]
    pub v_t: Option<f64>,
    #[serde(rename = "H2_T")]
    pub h2_t: Option<f64>,
    #[serde(rename = "I_T")]
    pub i_t: u64,
    pub grad_queries: u64,
    pub hvp_queries: u64,
    pub excluded_rounds: usize,
    pub wall_time_seconds: f64,
}

pub const CSV_HEADER: &str =
    "run_id,solver,problem,T,tau,gamma,reg_F,reg_L,V_T,H2_T,I_T,grad_queries,hvp_queries,excluded_rounds,wall_time_seconds";

/// Reference-side measurements of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub reg_f: RegretAccumulators,
    pub reg_l: Option<RegretAccumulators>,
    pub variation: Option<VariationReport>,
    /// Evaluator-side oracle usage, kept apart from the solver's counters.
    pub evaluator_counters: OracleCounters,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub trace: RunTrace,
    pub evaluation: Evaluation,
}

impl RunOutcome {
    pub fn failed(&self) -> bool {
        self.trace.abort.is_some()
    }
}

/// Sidecar written next to each trace: everything needed to re-derive the summary row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub experiment: ExperimentConfig,
    /// The trace with its records moved to the JSONL file.
    pub trace_header: RunTrace,
    pub abort: Option<AbortInfo>,
    pub wall_time_seconds: f64,
    pub evaluation: Evaluation,
}

pub fn run_trace(config: &ExperimentConfig, problem: &DynProblem) -> Result<RunTrace> {
    let trace = match config.solver.name {
        SolverKind::F2obo => run_f2obo(problem, &config.solver.solver_config(problem)?)?,
        SolverKind::Af2obo => run_af2obo(problem, &config.solver.solver_config(problem)?)?,
        SolverKind::OracleOgd => {
            // share the outer step with the penalty solvers unless overridden
            let gamma = match config.solver.gamma {
                Some(g) => g,
                None => config.solver.solver_config(problem)?.gamma,
            };
            run_oracle_ogd_baseline(problem, gamma, config.solver.x0.clone(), &config.reference)?
        }
    };
    Ok(trace)
}

pub fn evaluate(config: &ExperimentConfig, problem: &DynProblem, trace: &RunTrace) -> Result<Evaluation> {
    let evaluator = ReferenceEvaluator::new(problem, config.reference.clone());
    let set = problem.outer_set();
    let reg_f = RegretAccumulators::from_contributions(
        trace
            .records
            .par_iter()
            .map(|r| (r.t, reg_f_contribution(&evaluator, set, trace.gamma, r.t, &r.x_t)))
            .collect::<Vec<_>>(),
    )?;
    let reg_l = if config.reg_l && trace.solver != SolverKind::OracleOgd {
        Some(RegretAccumulators::from_contributions(
            trace
                .records
                .par_iter()
                .map(|r| {
                    let lambda = r.lambda_t.unwrap_or(0.0);
                    (r.t, reg_l_contribution(&evaluator, set, trace.gamma, r.t, &r.x_t, lambda))
                })
                .collect::<Vec<_>>(),
        )?)
    } else {
        None
    };
    let variation = if config.variations {
        Some(variation_meters(&evaluator, trace.horizon, &config.sup_strategy)?)
    } else {
        None
    };
    Ok(Evaluation { reg_f, reg_l, variation, evaluator_counters: evaluator.counters() })
}

pub fn summarize(run_id: &str, trace: &RunTrace, evaluation: &Evaluation, wall_time_seconds: f64) -> RunSummary {
    RunSummary {
        run_id: run_id.to_string(),
        solver: trace.solver.as_str().to_string(),
        problem: trace.problem.clone(),
        t: trace.horizon,
        tau: trace.tau,
        gamma: trace.gamma,
        reg_f: evaluation.reg_f.total,
        reg_l: evaluation.reg_l.as_ref().map(|r| r.total),
        v_t: evaluation.variation.as_ref().map(|v| v.v_t),
        h2_t: evaluation.variation.as_ref().map(|v| v.h2_t),
        i_t: trace.inner_iterations(),
        grad_queries: trace.solver_counters.grad_queries,
        hvp_queries: trace.solver_counters.hvp_queries,
        excluded_rounds: evaluation.reg_f.excluded_rounds.len(),
        wall_time_seconds,
    }
}

/// Runs and evaluates one horizon of an experiment.
pub fn run_single(config: &ExperimentConfig, horizon: usize) -> Result<RunOutcome> {
    let start = Instant::now();
    let problem = config.problem.build(horizon)?;
    let trace = run_trace(config, problem.as_ref())?;
    let evaluation = evaluate(config, problem.as_ref(), &trace)?;
    let wall = start.elapsed().as_secs_f64();
    let summary = summarize(&config.run_id(horizon), &trace, &evaluation, wall);
    Ok(RunOutcome { summary, trace, evaluation })
}

pub fn trace_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join(format!("{run_id}.trace.jsonl"))
}

pub fn meta_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join(format!("{run_id}.meta.json"))
}

/// Runs every horizon of `config` in parallel and persists the artifacts under
/// `out_dir` (the config's directory when `None`).
///
/// Errors with [`HarnessError::AllRunsFailed`] after persisting if every run aborted.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Vec<RunOutcome>> {
    config.validate()?;
    let dir = out_dir.unwrap_or(&config.out_dir).to_path_buf();
    let outcomes: Vec<RunOutcome> = config
        .t_list
        .par_iter()
        .map(|t| run_single(config, *t))
        .collect::<Result<_>>()?;
    for o in &outcomes {
        persist_run(config, &dir, o)?;
        if let Some(abort) = &o.trace.abort {
            eprintln!("run {} aborted at round {}: {}", o.summary.run_id, abort.round, abort.message);
        }
    }
    if config.emit.csv {
        let rows: Vec<&RunSummary> = outcomes.iter().map(|o| &o.summary).collect();
        write_atomic(&dir.join("summary.csv"), to_csv(&rows)?.as_bytes())?;
    }
    if !outcomes.is_empty() && outcomes.iter().all(RunOutcome::failed) {
        return Err(HarnessError::AllRunsFailed(outcomes.len()));
    }
    Ok(outcomes)
}

fn persist_run(config: &ExperimentConfig, dir: &Path, outcome: &RunOutcome) -> Result<()> {
    let run_id = &outcome.summary.run_id;
    if config.emit.jsonl {
        write_atomic(&trace_path(dir, run_id), records_to_jsonl(&outcome.trace.records)?.as_bytes())?;
        let mut header = outcome.trace.clone();
        header.records.clear();
        let meta = RunMeta {
            run_id: run_id.clone(),
            experiment: config.clone(),
            trace_header: header,
            abort: outcome.trace.abort.clone(),
            wall_time_seconds: outcome.summary.wall_time_seconds,
            evaluation: outcome.evaluation.clone(),
        };
        write_json(&meta_path(dir, run_id), &meta)?;
    }
    if config.emit.svg {
        let reg = &outcome.evaluation.reg_f;
        let regret: Vec<(f64, f64)> =
            reg.rounds.iter().zip(&reg.cumulative).map(|(t, c)| (*t as f64, *c)).collect();
        let svg = line_chart(
            &format!("{run_id}: cumulative Reg_F"),
            "round t",
            "Reg_F(t)",
            &[Series { name: outcome.trace.solver.as_str(), points: regret }],
            config.emit.svg_log_y,
        );
        write_atomic(&dir.join(format!("{run_id}.regret.svg")), svg.as_bytes())?;
        let inner: Vec<(f64, f64)> = outcome
            .trace
            .records
            .iter()
            .map(|r| (r.t as f64, (r.inner_iters_y + r.inner_iters_z) as f64))
            .collect();
        let svg = line_chart(
            &format!("{run_id}: inner iterations per round"),
            "round t",
            "inner iterations",
            &[Series { name: outcome.trace.solver.as_str(), points: inner }],
            false,
        );
        write_atomic(&dir.join(format!("{run_id}.inner.svg")), svg.as_bytes())?;
    }
    Ok(())
}

/// Rebuilds a summary row from a persisted trace and its sidecar, recomputing
/// every metric from the records.
pub fn resummarize(dir: &Path, run_id: &str) -> Result<RunSummary> {
    let meta_file = meta_path(dir, run_id);
    let text = std::fs::read_to_string(&meta_file).map_err(|e| HarnessError::io(&meta_file, e))?;
    let meta: RunMeta = serde_json::from_str(&text)?;
    let mut trace = meta.trace_header;
    trace.records = read_jsonl(&trace_path(dir, run_id))?;
    let problem = meta.experiment.problem.build(trace.horizon)?;
    let evaluation = evaluate(&meta.experiment, problem.as_ref(), &trace)?;
    Ok(summarize(run_id, &trace, &evaluation, meta.wall_time_seconds))
}
