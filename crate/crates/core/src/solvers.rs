//! Outer online loops.
//!
//! Each round `t` the learner holds `x_t`, runs two warm-started inner loops
//! (one on `g_t` for `z`, one on `f_t + lambda_t g_t` for `y`), takes a
//! projected step along
//!
//! ```text
//! grad_x f_t(x_t, y) + lambda_t (grad_x g_t(x_t, y) - grad_x g_t(x_t, z))
//! ```
//!
//! and then grows the multiplier. F2OBO runs a fixed number of inner steps,
//! AF2OBO stops each inner loop on a gradient-norm tolerance.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::inner::{default_contraction, gd_adaptive, gd_fixed, theorem1_k, InnerLoopResult, LagrangianOracle};
use crate::metrics::{Metered, OracleCounters, QueryMeter, ReferenceEvaluator, ReferenceSettings};
use crate::{gradient_mapping, BilevelProblem, Error, Result, Vector};

/// `lambda_t = lambda1 * t^tau`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSchedule {
    pub lambda1: f64,
    pub tau: f64,
}

impl MultiplierSchedule {
    pub fn new(lambda1: f64, tau: f64) -> Result<Self> {
        if !(lambda1.is_finite() && lambda1 > 0.0) {
            return Err(Error::config(format!("lambda1 must be positive, got {lambda1}")));
        }
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::config(format!("tau must be nonnegative, got {tau}")));
        }
        Ok(MultiplierSchedule { lambda1, tau })
    }

    /// Closed form, `t >= 1`.
    pub fn value(&self, t: usize) -> f64 {
        self.lambda1 * libm::pow(t as f64, self.tau)
    }

    /// One step of the recurrence `lambda_{t+1} = (1 + 1/t)^tau lambda_t`.
    pub fn next(&self, t: usize, current: f64) -> f64 {
        libm::pow(1.0 + 1.0 / t as f64, self.tau) * current
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnerMode {
    FixedK { k: usize },
    Adaptive { delta_y: f64, delta_z: f64, cap: usize },
}

pub const DEFAULT_ADAPTIVE_CAP: usize = 1_000_000;

/// Step size of the `y`-loop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    /// The configured `beta`, sized for `lambda_T`.
    #[default]
    Horizon,
    /// `1 / (2 lambda_t L_g1)` each round. Experimental: not covered by the
    /// convergence analysis.
    PerRound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda1: f64,
    pub tau: f64,
    /// `z`-loop step.
    pub alpha: f64,
    /// `y`-loop step.
    pub beta: f64,
    /// Outer step.
    pub gamma: f64,
    pub mode: InnerMode,
    #[serde(default)]
    pub beta_rule: BetaRule,
    pub x0: Vector,
    pub y0: Vector,
    pub z0: Vector,
}

impl SolverConfig {
    /// Checks steps and dimensions, projecting `x0` onto the outer set.
    pub fn validated<P: BilevelProblem + ?Sized>(&self, problem: &P) -> Result<SolverConfig> {
        MultiplierSchedule::new(self.lambda1, self.tau)?;
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        match self.mode {
            InnerMode::FixedK { k } if k == 0 => return Err(Error::config("K must be >= 1")),
            InnerMode::Adaptive { delta_y, delta_z, cap } => {
                if !(delta_y > 0.0 && delta_z > 0.0) || cap == 0 {
                    return Err(Error::config("adaptive mode needs delta_y, delta_z > 0 and cap >= 1"));
                }
            }
            _ => {}
        }
        let (d1, d2) = problem.dims();
        for (v, d) in [(&self.x0, d1), (&self.y0, d2), (&self.z0, d2)] {
            if v.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, found: v.dim() });
            }
            if !v.is_finite() {
                return Err(Error::config("starting points must be finite"));
            }
        }
        let mut out = self.clone();
        out.x0 = problem.outer_set().project(&self.x0)?;
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    FixedK,
    Adaptive,
}

/// Knobs for [`derive_theorem_config`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheoremOptions {
    /// Upper cap on the outer step.
    pub gamma_cap: f64,
    /// Inner contraction factor; defaults to [`default_contraction`].
    pub rho: Option<f64>,
    /// Constant `c` in the inner-iteration count; defaults to `lambda1`.
    pub c_const: Option<f64>,
    /// Replace the derived `K`.
    pub k_override: Option<usize>,
    pub adaptive_cap: usize,
}

impl Default for TheoremOptions {
    fn default() -> Self {
        TheoremOptions {
            gamma_cap: 1.0,
            rho: None,
            c_const: None,
            k_override: None,
            adaptive_cap: DEFAULT_ADAPTIVE_CAP,
        }
    }
}

/// Parameters prescribed by the convergence analysis for the problem's horizon.
///
/// `lambda1 = 1.01 * 2 L_f1 / mu_g`, `alpha = 1 / L_g1`,
/// `beta = 1 / (2 lambda1 T^tau L_g1)` and `gamma = min(1 / (2 L), gamma_cap)`
/// with `L = L_f1 + 2 lambda1 L_g1 kappa_g` standing in for the smoothness of
/// the surrogate. Fixed mode takes `K` from [`theorem1_k`]; adaptive mode uses
/// `delta_y = T^{-1/2}` and `delta_z = T^{-(1+tau)/2}`.
pub fn derive_theorem_config<P: BilevelProblem + ?Sized>(
    problem: &P,
    tau: f64,
    kind: ModeKind,
    options: &TheoremOptions,
) -> Result<SolverConfig> {
    let meta = problem.metadata();
    meta.validate()?;
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::config(format!("tau must be nonnegative, got {tau}")));
    }
    if !(options.gamma_cap > 0.0) {
        return Err(Error::config("gamma_cap must be positive"));
    }
    let horizon = problem.horizon();
    if horizon == 0 {
        return Err(Error::config("horizon must be positive"));
    }
    let t = horizon as f64;
    let lambda1 = 2.0 * meta.l_f1 / meta.mu_g * 1.01;
    let alpha = 1.0 / meta.l_g1;
    let beta = 1.0 / (2.0 * lambda1 * libm::pow(t, tau) * meta.l_g1);
    let smooth = meta.l_f1 + 2.0 * lambda1 * meta.l_g1 * meta.kappa_g;
    let gamma = (1.0 / (2.0 * smooth)).min(options.gamma_cap);
    let mode = match kind {
        ModeKind::FixedK => {
            let k = match options.k_override {
                Some(k) => k,
                None => {
                    let rho = options.rho.unwrap_or_else(|| default_contraction(alpha, meta));
                    theorem1_k(horizon, tau, rho, options.c_const.unwrap_or(lambda1), lambda1)?
                }
            };
            InnerMode::FixedK { k }
        }
        ModeKind::Adaptive => InnerMode::Adaptive {
            delta_y: 1.0 / libm::sqrt(t),
            delta_z: libm::pow(t, -(1.0 + tau) / 2.0),
            cap: options.adaptive_cap,
        },
    };
    let (_, d2) = problem.dims();
    SolverConfig {
        lambda1,
        tau,
        alpha,
        beta,
        gamma,
        mode,
        beta_rule: BetaRule::Horizon,
        x0: problem.default_start(),
        y0: Vector::zeros(d2),
        z0: Vector::zeros(d2),
    }
    .validated(problem)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    F2obo,
    Af2obo,
    OracleOgd,
}

impl SolverKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverKind::F2obo => "f2obo",
            SolverKind::Af2obo => "af2obo",
            SolverKind::OracleOgd => "oracle_ogd",
        }
    }
}

/// One outer round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub x_t: Vector,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda_t: Option<f64>,
    /// Direction used for the outer step.
    pub approx_hypergrad: Vector,
    pub x_next: Vector,
    pub mapping_norm_sq: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub y_start: Option<Vector>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub z_start: Option<Vector>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub y_next: Option<Vector>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub z_next: Option<Vector>,
    pub inner_iters_y: usize,
    pub inner_iters_z: usize,
    pub grad_queries_delta: u64,
    pub hvp_queries_delta: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbortInfo {
    pub round: usize,
    pub message: String,
}

/// Complete record of a run. Records cover the rounds finished before any abort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub solver: SolverKind,
    pub problem: String,
    pub horizon: usize,
    pub gamma: f64,
    pub tau: Option<f64>,
    pub lambda1: Option<f64>,
    pub mode: Option<InnerMode>,
    pub records: Vec<RoundRecord>,
    /// Queries issued by the solver itself.
    pub solver_counters: OracleCounters,
    /// For the oracle baseline: whether `grad F_t` came from a closed form.
    pub analytic_hypergradient: Option<bool>,
    pub abort: Option<AbortInfo>,
}

impl RunTrace {
    /// `I_T`: total inner iterations over the recorded rounds.
    pub fn inner_iterations(&self) -> u64 {
        self.records
            .iter()
            .map(|r| (r.inner_iters_y + r.inner_iters_z) as u64)
            .sum()
    }

    pub fn completed(&self) -> bool {
        self.abort.is_none() && self.records.len() == self.horizon
    }
}

/// `grad_x f_t(x, y) + lambda (grad_x g_t(x, y) - grad_x g_t(x, z))`, three
/// first-order `x`-gradient queries.
pub fn approx_hypergradient<P: BilevelProblem + ?Sized>(
    problem: &P,
    t: usize,
    x: &Vector,
    y: &Vector,
    z: &Vector,
    lambda: f64,
) -> Result<Vector> {
    if !(lambda >= 0.0) {
        return Err(Error::precondition(format!("lambda must be nonnegative, got {lambda}")));
    }
    let mut out = problem.grad_f_x(t, x, y);
    let gap = problem.grad_g_x(t, x, y).sub(&problem.grad_g_x(t, x, z));
    out.axpy(lambda, &gap);
    if !out.is_finite() {
        return Err(Error::Divergence { round: Some(t), iteration: 0 });
    }
    Ok(out)
}

/// Fully first-order solver with `K` inner steps per loop.
pub fn run_f2obo<P: BilevelProblem + ?Sized>(problem: &P, config: &SolverConfig) -> Result<RunTrace> {
    if !matches!(config.mode, InnerMode::FixedK { .. }) {
        return Err(Error::config("f2obo needs a fixed-K inner mode"));
    }
    run_penalty(problem, config, SolverKind::F2obo)
}

/// Fully first-order solver with tolerance-stopped inner loops.
pub fn run_af2obo<P: BilevelProblem + ?Sized>(problem: &P, config: &SolverConfig) -> Result<RunTrace> {
    if !matches!(config.mode, InnerMode::Adaptive { .. }) {
        return Err(Error::config("af2obo needs an adaptive inner mode"));
    }
    run_penalty(problem, config, SolverKind::Af2obo)
}

fn run_penalty<P: BilevelProblem + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    kind: SolverKind,
) -> Result<RunTrace> {
    let config = config.validated(problem)?;
    let schedule = MultiplierSchedule::new(config.lambda1, config.tau)?;
    let meter = QueryMeter::new();
    let metered = Metered::new(problem, &meter);
    let l_g1 = problem.metadata().l_g1;
    let horizon = problem.horizon();

    let mut trace = RunTrace {
        solver: kind,
        problem: problem.name().to_string(),
        horizon,
        gamma: config.gamma,
        tau: Some(config.tau),
        lambda1: Some(config.lambda1),
        mode: Some(config.mode.clone()),
        records: Vec::with_capacity(horizon),
        solver_counters: OracleCounters::default(),
        analytic_hypergradient: None,
        abort: None,
    };
    let mut x = config.x0.clone();
    let mut y = config.y0.clone();
    let mut z = config.z0.clone();
    let mut lambda = schedule.value(1);

    for t in 1..=horizon {
        let before = meter.snapshot();
        let beta = match config.beta_rule {
            BetaRule::Horizon => config.beta,
            BetaRule::PerRound => 1.0 / (2.0 * lambda * l_g1),
        };
        let round = penalty_round(&metered, &config.mode, t, &x, &y, &z, lambda, config.alpha, beta);
        let (z_loop, y_loop, direction) = match round {
            Ok(r) => r,
            Err(e) => {
                trace.abort = Some(AbortInfo { round: t, message: e.at_round(t).to_string() });
                break;
            }
        };
        let step = match gradient_mapping(problem.outer_set(), &x, &direction, config.gamma) {
            Ok(s) => s,
            Err(e) => {
                trace.abort = Some(AbortInfo { round: t, message: e.to_string() });
                break;
            }
        };
        meter.add_inner((z_loop.iterations_used + y_loop.iterations_used) as u64);
        let delta = meter.snapshot().saturating_sub(&before);
        let mut warnings = Vec::new();
        if z_loop.cap_hit {
            warnings.push(format!("z-loop hit the iteration cap, |grad| = {:e}", z_loop.final_grad_norm));
        }
        if y_loop.cap_hit {
            warnings.push(format!("y-loop hit the iteration cap, |grad| = {:e}", y_loop.final_grad_norm));
        }
        trace.records.push(RoundRecord {
            t,
            x_t: x.clone(),
            lambda_t: Some(lambda),
            approx_hypergrad: direction,
            x_next: step.x_plus.clone(),
            mapping_norm_sq: step.mapping_norm_sq,
            y_start: Some(y),
            z_start: Some(z),
            y_next: Some(y_loop.iterate.clone()),
            z_next: Some(z_loop.iterate.clone()),
            inner_iters_y: y_loop.iterations_used,
            inner_iters_z: z_loop.iterations_used,
            grad_queries_delta: delta.grad_queries,
            hvp_queries_delta: delta.hvp_queries,
            warnings,
        });
        x = step.x_plus;
        y = y_loop.iterate;
        z = z_loop.iterate;
        lambda = schedule.value(t + 1);
    }
    trace.solver_counters = meter.snapshot();
    Ok(trace)
}

#[allow(clippy::too_many_arguments)]
fn penalty_round<P: BilevelProblem + ?Sized>(
    problem: &P,
    mode: &InnerMode,
    t: usize,
    x: &Vector,
    y: &Vector,
    z: &Vector,
    lambda: f64,
    alpha: f64,
    beta: f64,
) -> Result<(InnerLoopResult, InnerLoopResult, Vector)> {
    let inner_grad = |v: &Vector| problem.grad_g_y(t, x, v);
    let oracle = LagrangianOracle::new(problem, t, x, lambda);
    let penalized_grad = |v: &Vector| oracle.grad_y(v);
    let (z_loop, y_loop) = match *mode {
        InnerMode::FixedK { k } => (
            gd_fixed(inner_grad, z.clone(), alpha, k)?,
            gd_fixed(penalized_grad, y.clone(), beta, k)?,
        ),
        InnerMode::Adaptive { delta_y, delta_z, cap } => (
            gd_adaptive(inner_grad, z.clone(), alpha, delta_z, cap)?,
            gd_adaptive(penalized_grad, y.clone(), beta, delta_y, cap)?,
        ),
    };
    let direction = approx_hypergradient(problem, t, x, &y_loop.iterate, &z_loop.iterate, lambda)?;
    Ok((z_loop, y_loop, direction))
}

/// Projected online gradient descent on the true hypergradient.
///
/// An idealized comparator: `grad F_t(x_t)` comes from the closed form when the
/// problem has one, otherwise from the reference evaluator, whose queries
/// (including finite-difference HVPs) are charged to this run.
pub fn run_oracle_ogd_baseline<P: BilevelProblem + ?Sized>(
    problem: &P,
    gamma: f64,
    x0: Option<Vector>,
    settings: &ReferenceSettings,
) -> Result<RunTrace> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::config(format!("gamma must be positive, got {gamma}")));
    }
    let evaluator = ReferenceEvaluator::new(problem, settings.clone());
    let analytic = evaluator.has_analytic_hypergradient();
    if !analytic && !settings.allow_numeric {
        return Err(Error::config(format!(
            "problem '{}' has no closed-form hypergradient and the reference evaluator is disabled",
            problem.name()
        )));
    }
    let (d1, _) = problem.dims();
    let start = x0.unwrap_or_else(|| problem.default_start());
    if start.dim() != d1 {
        return Err(Error::DimensionMismatch { expected: d1, found: start.dim() });
    }
    let mut x = problem.outer_set().project(&start)?;
    let horizon = problem.horizon();
    let mut trace = RunTrace {
        solver: SolverKind::OracleOgd,
        problem: problem.name().to_string(),
        horizon,
        gamma,
        tau: None,
        lambda1: None,
        mode: None,
        records: Vec::with_capacity(horizon),
        solver_counters: OracleCounters::default(),
        analytic_hypergradient: Some(analytic),
        abort: None,
    };
    for t in 1..=horizon {
        let before = evaluator.counters();
        let step = evaluator
            .hypergradient(t, &x)
            .and_then(|g| Ok((gradient_mapping(problem.outer_set(), &x, &g, gamma)?, g)));
        let (step, g) = match step {
            Ok(s) => s,
            Err(e) => {
                trace.abort = Some(AbortInfo { round: t, message: e.to_string() });
                break;
            }
        };
        let delta = evaluator.counters().saturating_sub(&before);
        trace.records.push(RoundRecord {
            t,
            x_t: x.clone(),
            lambda_t: None,
            approx_hypergrad: g,
            x_next: step.x_plus.clone(),
            mapping_norm_sq: step.mapping_norm_sq,
            y_start: None,
            z_start: None,
            y_next: None,
            z_next: None,
            inner_iters_y: 0,
            inner_iters_z: 0,
            grad_queries_delta: delta.grad_queries,
            hvp_queries_delta: delta.hvp_queries,
            warnings: Vec::new(),
        });
        x = step.x_plus;
    }
    trace.solver_counters = evaluator.counters();
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::accumulate_reg_f;
    use crate::problem::{MatrixSpec, OscillatoryDrift, QuadraticTracking, QuadraticTrackingSpec};
    use crate::ConstraintSet;
    use alloc::vec;
    use proptest::prelude::*;

    fn static_quadratic(horizon: usize) -> QuadraticTracking {
        let spec = QuadraticTrackingSpec {
            matrix: MatrixSpec::Explicit { rows: vec![vec![1.0, 0.0], vec![0.0, 1.0]] },
            a0: Some(Vector::from([1.0, -1.0])),
            b0: Some(Vector::from([0.5, 0.0])),
            ..QuadraticTrackingSpec::default()
        };
        QuadraticTracking::new(horizon, &spec).unwrap()
    }

    fn osc(horizon: usize) -> OscillatoryDrift {
        OscillatoryDrift::new(horizon, 1.0, 1.0).unwrap()
    }

    #[test]
    fn approx_hypergradient_examples() {
        let p = osc(4);
        let x = Vector::from([0.2]);
        let y = Vector::from([0.3]);
        let z = Vector::from([0.2]);
        let g = approx_hypergradient(&p, 2, &x, &y, &z, 2.0).unwrap();
        assert!((g[0] + 0.2).abs() < 1e-15);
        assert_eq!(approx_hypergradient(&p, 2, &x, &y, &y, 2.0).unwrap()[0], 0.0);
        assert_eq!(approx_hypergradient(&p, 2, &x, &y, &z, 0.0).unwrap()[0], 0.0);
        assert!(approx_hypergradient(&p, 2, &x, &y, &z, -1.0).is_err());
    }

    #[test]
    fn approx_hypergradient_costs_three_queries() {
        let p = osc(4);
        let meter = QueryMeter::new();
        let m = Metered::new(&p, &meter);
        let v = Vector::from([0.1]);
        approx_hypergradient(&m, 1, &v, &v, &v, 3.0).unwrap();
        assert_eq!(meter.snapshot().grad_queries, 3);
        assert_eq!(meter.snapshot().hvp_queries, 0);
    }

    #[test]
    fn theorem_config_examples() {
        let p = static_quadratic(100);
        let cfg = derive_theorem_config(&p, 0.5, ModeKind::Adaptive, &TheoremOptions::default()).unwrap();
        assert!((cfg.lambda1 - 2.02).abs() < 1e-12);
        match cfg.mode {
            InnerMode::Adaptive { delta_y, delta_z, .. } => {
                assert!((delta_y - 0.1).abs() < 1e-15);
                assert!((delta_z - 0.031_622_776_601_683_79).abs() < 1e-12);
            }
            _ => panic!("wrong mode"),
        }
        let l_g1 = p.metadata().l_g1;
        let flat = derive_theorem_config(&p, 0.0, ModeKind::FixedK, &TheoremOptions::default()).unwrap();
        assert!((flat.beta - 1.0 / (2.0 * 2.02 * l_g1)).abs() < 1e-15);
        let longer = derive_theorem_config(&static_quadratic(5000), 0.0, ModeKind::FixedK, &TheoremOptions::default())
            .unwrap();
        assert_eq!(flat.beta, longer.beta);
        assert!(cfg.lambda1 > 2.0 * p.metadata().l_f1 / p.metadata().mu_g);
        assert!(cfg.alpha <= 1.0 / l_g1);
        assert!(cfg.beta <= 1.0 / (2.0 * cfg.lambda1 * 10.0 * l_g1) + 1e-18);
    }

    #[test]
    fn fixed_k_accounting() {
        let p = osc(37);
        let opts = TheoremOptions { k_override: Some(3), ..TheoremOptions::default() };
        let cfg = derive_theorem_config(&p, 0.5, ModeKind::FixedK, &opts).unwrap();
        let trace = run_f2obo(&p, &cfg).unwrap();
        assert!(trace.completed());
        assert_eq!(trace.inner_iterations(), 2 * 3 * 37);
        assert_eq!(trace.solver_counters.inner_iters_total, 2 * 3 * 37);
        assert_eq!(trace.solver_counters.hvp_queries, 0);
        // K z-steps, K y-steps at two queries each, three for the direction
        assert_eq!(trace.solver_counters.grad_queries, 37 * (3 * 3 + 3));
    }

    #[test]
    fn stationary_start_stays_stationary() {
        let p = static_quadratic(50);
        let x_star = Vector::from([0.5, -1.0]);
        assert!(p.hypergradient(1, &x_star).unwrap().norm() < 1e-15);
        let mut cfg = derive_theorem_config(&p, 0.5, ModeKind::FixedK, &TheoremOptions::default()).unwrap();
        cfg.x0 = x_star.clone();
        cfg.y0 = p.inner_argmin(1, &x_star).unwrap();
        cfg.z0 = cfg.y0.clone();
        let trace = run_f2obo(&p, &cfg).unwrap();
        for r in &trace.records {
            assert!(r.mapping_norm_sq.sqrt() <= 1e-8, "{}", r.mapping_norm_sq);
        }
    }

    #[test]
    fn huge_tolerance_skips_inner_loops() {
        let p = osc(20);
        let mut cfg = derive_theorem_config(&p, 0.5, ModeKind::Adaptive, &TheoremOptions::default()).unwrap();
        cfg.mode = InnerMode::Adaptive { delta_y: 1e9, delta_z: 1e9, cap: 10 };
        let trace = run_af2obo(&p, &cfg).unwrap();
        assert!(trace.records.iter().all(|r| r.inner_iters_y == 0 && r.inner_iters_z == 0));
    }

    #[test]
    fn adaptive_postconditions_and_warm_starts() {
        let p = osc(64);
        let cfg = derive_theorem_config(&p, 0.5, ModeKind::Adaptive, &TheoremOptions::default()).unwrap();
        let (delta_y, delta_z) = match cfg.mode {
            InnerMode::Adaptive { delta_y, delta_z, .. } => (delta_y, delta_z),
            _ => unreachable!(),
        };
        let trace = run_af2obo(&p, &cfg).unwrap();
        assert!(trace.completed());
        for r in &trace.records {
            assert!(r.warnings.is_empty());
            let (y, z) = (r.y_next.as_ref().unwrap(), r.z_next.as_ref().unwrap());
            assert!(p.grad_g_y(r.t, &r.x_t, z).norm() <= delta_z);
            let oracle = LagrangianOracle::new(&p, r.t, &r.x_t, r.lambda_t.unwrap());
            assert!(oracle.grad_y(y).norm() <= delta_y);
        }
        for w in trace.records.windows(2) {
            assert_eq!(w[1].y_start, w[0].y_next);
            assert_eq!(w[1].z_start, w[0].z_next);
            assert_eq!(w[1].x_t, w[0].x_next);
        }
        assert_eq!(trace.solver_counters.hvp_queries, 0);
    }

    #[test]
    fn outer_step_consistency_and_multiplier_order() {
        let p = osc(30);
        let cfg = derive_theorem_config(&p, 1.0, ModeKind::FixedK, &TheoremOptions::default()).unwrap();
        let trace = run_f2obo(&p, &cfg).unwrap();
        let schedule = MultiplierSchedule::new(cfg.lambda1, 1.0).unwrap();
        for r in &trace.records {
            let moved = r.x_t.distance(&r.x_next);
            assert!((moved - cfg.gamma * r.mapping_norm_sq.sqrt()).abs() <= 1e-12);
            assert_eq!(r.lambda_t, Some(schedule.value(r.t)));
            let gm = gradient_mapping(p.outer_set(), &r.x_t, &r.approx_hypergrad, cfg.gamma).unwrap();
            assert_eq!(gm.x_plus, r.x_next);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let p = osc(40);
        let cfg = derive_theorem_config(&p, 0.5, ModeKind::Adaptive, &TheoremOptions::default()).unwrap();
        assert_eq!(run_af2obo(&p, &cfg).unwrap(), run_af2obo(&p, &cfg).unwrap());
    }

    #[test]
    fn wrong_mode_is_config_error() {
        let p = osc(4);
        let cfg = derive_theorem_config(&p, 0.5, ModeKind::Adaptive, &TheoremOptions::default()).unwrap();
        assert!(matches!(run_f2obo(&p, &cfg), Err(Error::Config(_))));
        let cfg = derive_theorem_config(&p, 0.5, ModeKind::FixedK, &TheoremOptions::default()).unwrap();
        assert!(matches!(run_af2obo(&p, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn outside_start_is_projected() {
        let p = osc(4);
        let mut cfg = derive_theorem_config(&p, 0.5, ModeKind::FixedK, &TheoremOptions::default()).unwrap();
        cfg.x0 = Vector::from([3.0]);
        let trace = run_f2obo(&p, &cfg).unwrap();
        assert_eq!(trace.records[0].x_t[0], 1.0);
    }

    #[test]
    fn divergence_aborts_with_round() {
        let p = osc(10);
        let mut cfg = derive_theorem_config(&p, 0.5, ModeKind::FixedK, &TheoremOptions::default()).unwrap();
        cfg.alpha = 1e200;
        cfg.z0 = Vector::from([1e200]);
        let trace = run_f2obo(&p, &cfg).unwrap();
        assert_eq!(trace.abort.as_ref().unwrap().round, 1);
        assert!(trace.records.is_empty());
    }

    #[test]
    fn ogd_single_hand_step() {
        let p = QuadraticTracking::with_matrix(
            1,
            vec![vec![2.0]],
            Vector::from([1.0]),
            Vector::from([0.0]),
            ConstraintSet::Free,
        )
        .unwrap();
        let trace = run_oracle_ogd_baseline(&p, 0.1, Some(Vector::from([0.25])), &ReferenceSettings::default())
            .unwrap();
        assert!((trace.records[0].x_next[0] - 0.35).abs() < 1e-15);
        assert_eq!(trace.analytic_hypergradient, Some(true));
    }

    #[test]
    fn ogd_two_rounds_regret_by_hand() {
        let p = QuadraticTracking::with_matrix(
            2,
            vec![vec![1.0]],
            Vector::from([0.0]),
            Vector::from([0.0]),
            ConstraintSet::Free,
        )
        .unwrap();
        let trace = run_oracle_ogd_baseline(&p, 0.1, Some(Vector::from([1.0])), &ReferenceSettings::default())
            .unwrap();
        let ev = ReferenceEvaluator::new(&p, ReferenceSettings::default());
        let acc = accumulate_reg_f(&trace, &ev).unwrap();
        assert!((acc.total - 1.81).abs() < 1e-12);
    }

    #[test]
    fn ogd_static_stationary_start() {
        let p = static_quadratic(20);
        let trace = run_oracle_ogd_baseline(
            &p,
            0.1,
            Some(Vector::from([0.5, -1.0])),
            &ReferenceSettings::default(),
        )
        .unwrap();
        assert!(trace.records.iter().all(|r| r.mapping_norm_sq == 0.0));
    }

    #[test]
    fn ogd_trajectory_is_solver_independent_on_oscillatory() {
        let p = osc(25);
        let numeric = ReferenceSettings { prefer_analytic: false, ..ReferenceSettings::default() };
        let a = run_oracle_ogd_baseline(&p, 0.05, None, &ReferenceSettings::default()).unwrap();
        let b = run_oracle_ogd_baseline(&p, 0.05, None, &numeric).unwrap();
        let mut x = 0.5f64;
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert!((ra.x_t[0] - x).abs() < 1e-15);
            assert!((rb.x_t[0] - x).abs() < 1e-7);
            x = (x + 0.05 * 2.0 * x * libm::exp(-x * x)).clamp(-1.0, 1.0);
        }
        assert_eq!(b.analytic_hypergradient, Some(false));
        assert!(b.solver_counters.hvp_queries > 0);
    }

    #[test]
    fn ogd_without_any_oracle_is_config_error() {
        let p = crate::problem::DriftingRidge::new(4, &Default::default()).unwrap();
        let off = ReferenceSettings { allow_numeric: false, ..ReferenceSettings::default() };
        assert!(matches!(run_oracle_ogd_baseline(&p, 0.1, None, &off), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn schedule_recurrence_matches_closed_form(
            lambda1 in prop::sample::select(vec![0.5, 2.0, 7.0]),
            tau in prop::sample::select(vec![0.0, 0.5, 1.0, 2.0]),
        ) {
            let s = MultiplierSchedule::new(lambda1, tau).unwrap();
            let mut rec = lambda1;
            for t in 1..10_000usize {
                let closed = s.value(t);
                prop_assert!((rec - closed).abs() <= 1e-10 * closed);
                let next = s.next(t, rec);
                prop_assert!(next >= rec);
                rec = next;
            }
        }
    }
}
