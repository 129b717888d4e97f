use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ReferenceEvaluator;
use crate::solvers::RunTrace;
use crate::{gradient_mapping, BilevelProblem, ConstraintSet, Error, Result, Vector};

/// Per-round squared gradient-mapping norms and their running sum.
///
/// Rounds whose reference evaluation failed are listed in `excluded_rounds`
/// and contribute nothing; they are not imputed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretAccumulators {
    pub total: f64,
    /// Rounds with a contribution, aligned with the two series below.
    pub rounds: Vec<usize>,
    pub per_round_mapping_norm_sq: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub excluded_rounds: Vec<usize>,
}

impl RegretAccumulators {
    /// Folds `(t, contribution)` pairs in order. Configuration errors abort;
    /// any other per-round error excludes that round.
    pub fn from_contributions<I>(contributions: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, Result<f64>)>,
    {
        let mut acc = RegretAccumulators::default();
        for (t, c) in contributions {
            match c {
                Ok(v) => acc.push(t, v),
                Err(e @ Error::Config(_)) => return Err(e),
                Err(_) => acc.excluded_rounds.push(t),
            }
        }
        Ok(acc)
    }

    fn push(&mut self, t: usize, value: f64) {
        self.total += value;
        self.rounds.push(t);
        self.per_round_mapping_norm_sq.push(value);
        self.cumulative.push(self.total);
    }

    /// Sum of the stored contributions, recomputed from scratch.
    pub fn resum(&self) -> f64 {
        self.per_round_mapping_norm_sq.iter().sum()
    }
}

/// `|G_X(x, grad F_t(x), gamma)|^2`.
pub fn reg_f_contribution<P: BilevelProblem + ?Sized>(
    evaluator: &ReferenceEvaluator<'_, P>,
    set: &ConstraintSet,
    gamma: f64,
    t: usize,
    x: &Vector,
) -> Result<f64> {
    let g = evaluator.hypergradient(t, x)?;
    Ok(gradient_mapping(set, x, &g, gamma)?.mapping_norm_sq)
}

/// `|G_X(x, grad L*_{lambda,t}(x), gamma)|^2`.
pub fn reg_l_contribution<P: BilevelProblem + ?Sized>(
    evaluator: &ReferenceEvaluator<'_, P>,
    set: &ConstraintSet,
    gamma: f64,
    t: usize,
    x: &Vector,
    lambda: f64,
) -> Result<f64> {
    let g = evaluator.lagrangian_hypergradient(t, x, lambda)?;
    Ok(gradient_mapping(set, x, &g, gamma)?.mapping_norm_sq)
}

/// Local regret of the true hypergradient along the pre-update iterates of a run.
pub fn accumulate_reg_f<P: BilevelProblem + ?Sized>(
    trace: &RunTrace,
    evaluator: &ReferenceEvaluator<'_, P>,
) -> Result<RegretAccumulators> {
    let set = evaluator.problem().outer_set();
    RegretAccumulators::from_contributions(
        trace
            .records
            .iter()
            .map(|r| (r.t, reg_f_contribution(evaluator, set, trace.gamma, r.t, &r.x_t))),
    )
}

/// Local regret of the penalty surrogate `L*_{lambda_t,t}`; needs `lambda_t` on every record.
pub fn accumulate_reg_l<P: BilevelProblem + ?Sized>(
    trace: &RunTrace,
    evaluator: &ReferenceEvaluator<'_, P>,
) -> Result<RegretAccumulators> {
    let set = evaluator.problem().outer_set();
    let mut items = Vec::with_capacity(trace.records.len());
    for r in &trace.records {
        let lambda = r.lambda_t.ok_or_else(|| {
            Error::precondition(format!("round {} carries no multiplier; Reg_L is undefined", r.t))
        })?;
        items.push((r.t, reg_l_contribution(evaluator, set, trace.gamma, r.t, &r.x_t, lambda)));
    }
    RegretAccumulators::from_contributions(items)
}
