//! Ground-truth evaluation of solver runs.
//!
//! Everything here may use expensive long inner solves and finite-difference
//! second-order products. Its oracle usage is metered separately from the
//! solvers' so that evaluation never inflates a solver's query counts.

mod counters;
mod probes;
mod reference;
mod regret;
mod variation;

pub use counters::{Metered, OracleCounters, QueryMeter};
pub use probes::{inner_solution_lipschitz_probe, lemma_gap_probes, GapProbe, GapReport, LipschitzProbe};
pub use reference::{reference_hypergradient, ReferenceEvaluator, ReferenceSettings};
pub use regret::{accumulate_reg_f, accumulate_reg_l, reg_f_contribution, reg_l_contribution, RegretAccumulators};
pub use variation::{random_outer_points, sample_outer_points, variation_meters, MeterSource, SupStrategy, VariationReport};
