use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ReferenceEvaluator;
use crate::{BilevelProblem, ConstraintSet, Result, Vector};

/// How the suprema over `X` in `V_T` and `H_{2,T}` are obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupStrategy {
    /// Grid size for `d1 <= 2`.
    pub points: usize,
    /// Uniform samples for `d1 > 2`.
    pub random_points: usize,
    pub seed: u64,
    /// Radius of the ball standing in for an unconstrained `X`.
    pub free_radius: f64,
    /// Skip the closed forms even when the problem has them.
    pub force_sampled: bool,
}

impl Default for SupStrategy {
    fn default() -> Self {
        SupStrategy {
            points: 256,
            random_points: 1024,
            seed: 0,
            free_radius: 1.0,
            force_sampled: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeterSource {
    Analytic,
    /// Maximum over finitely many points: a lower bound on the true supremum.
    SampledLowerBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    pub v_t: f64,
    pub h2_t: f64,
    pub v_source: MeterSource,
    pub h2_source: MeterSource,
}

/// `V_T = sum_t sup_x |F_{t-1}(x) - F_t(x)|` and
/// `H_{2,T} = sum_t sup_x |y_{t-1}*(x) - y_t*(x)|^2` over rounds `2..=horizon`.
pub fn variation_meters<P: BilevelProblem + ?Sized>(
    evaluator: &ReferenceEvaluator<'_, P>,
    horizon: usize,
    strategy: &SupStrategy,
) -> Result<VariationReport> {
    let problem = evaluator.problem();
    let (mut v, mut h2) = (None, None);
    if !strategy.force_sampled {
        v = problem.variation_v(horizon);
        h2 = problem.variation_h2(horizon);
    }
    let sampled = if v.is_none() || h2.is_none() {
        Some(sampled_variations(evaluator, horizon, strategy)?)
    } else {
        None
    };
    let source = |exact: Option<f64>| match exact {
        Some(_) => MeterSource::Analytic,
        None => MeterSource::SampledLowerBound,
    };
    Ok(VariationReport {
        v_source: source(v),
        h2_source: source(h2),
        v_t: v.or(sampled.map(|s| s.0)).unwrap_or(0.0),
        h2_t: h2.or(sampled.map(|s| s.1)).unwrap_or(0.0),
    })
}

fn sampled_variations<P: BilevelProblem + ?Sized>(
    evaluator: &ReferenceEvaluator<'_, P>,
    horizon: usize,
    strategy: &SupStrategy,
) -> Result<(f64, f64)> {
    let problem = evaluator.problem();
    let (d1, _) = problem.dims();
    let xs = sample_outer_points(problem.outer_set(), d1, strategy);
    let (_, d2) = problem.dims();
    // each point's solve is warm-started from its previous-round solution
    let solve_round = |t: usize, starts: Option<&Vec<(f64, Vector)>>| -> Result<Vec<(f64, Vector)>> {
        xs.iter()
            .enumerate()
            .map(|(i, x)| {
                let start = starts.map_or_else(|| Vector::zeros(d2), |s| s[i].1.clone());
                let y = evaluator.inner_solution_from(t, x, start)?;
                Ok((problem.f_value(t, x, &y), y))
            })
            .collect()
    };
    let (mut v, mut h2) = (0.0, 0.0);
    if horizon < 2 {
        return Ok((v, h2));
    }
    let mut prev = solve_round(1, None)?;
    for t in 2..=horizon {
        let cur = solve_round(t, Some(&prev))?;
        let (mut dv, mut dh) = (0.0f64, 0.0f64);
        for ((fp, yp), (fc, yc)) in prev.iter().zip(&cur) {
            dv = dv.max((fp - fc).abs());
            dh = dh.max(yp.sub(yc).norm_sq());
        }
        v += dv;
        h2 += dh;
        prev = cur;
    }
    Ok((v, h2))
}

/// Deterministic probe points in `X`.
///
/// For `d1 <= 2` a uniform grid over the bounding box (endpoints included),
/// projected onto the set; otherwise `random_points` seeded uniform samples
/// plus the center. An unconstrained set is treated as the ball of radius
/// `free_radius` around the origin.
pub fn sample_outer_points(set: &ConstraintSet, d1: usize, strategy: &SupStrategy) -> Vec<Vector> {
    let (lower, upper, ball) = match set {
        ConstraintSet::Box { lower, upper } => (lower.clone(), upper.clone(), None),
        ConstraintSet::Ball { center, radius } => (
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
            Some(ConstraintSet::Ball { center: center.clone(), radius: *radius }),
        ),
        ConstraintSet::Free => {
            let r = strategy.free_radius;
            (
                Vector::filled(d1, -r),
                Vector::filled(d1, r),
                Some(ConstraintSet::Ball { center: Vector::zeros(d1), radius: r }),
            )
        }
    };
    let lerp = |i: usize, frac: f64| lower[i] + frac * (upper[i] - lower[i]);
    let mut points: Vec<Vector> = match d1 {
        0 => Vec::new(),
        1 => {
            let n = strategy.points.max(2);
            (0..n).map(|k| Vector::from([lerp(0, k as f64 / (n - 1) as f64)])).collect()
        }
        2 => {
            let side = (libm::ceil(libm::sqrt(strategy.points as f64)) as usize).max(2);
            let mut out = Vec::with_capacity(side * side);
            for a in 0..side {
                for b in 0..side {
                    let (fa, fb) = (a as f64 / (side - 1) as f64, b as f64 / (side - 1) as f64);
                    out.push(Vector::from([lerp(0, fa), lerp(1, fb)]));
                }
            }
            out
        }
        _ => {
            let mut out = uniform_in_box(&lower, &upper, strategy.random_points, strategy.seed);
            out.push((0..d1).map(|i| lerp(i, 0.5)).collect());
            out
        }
    };
    if let Some(ball) = ball {
        for p in points.iter_mut() {
            if let Ok(q) = ball.project(p) {
                *p = q;
            }
        }
    }
    points
}

/// `count` seeded points drawn uniformly from the bounding box of `X` (the
/// ball of radius `free_radius` when unconstrained) and projected onto `X`.
pub fn random_outer_points(set: &ConstraintSet, d1: usize, count: usize, seed: u64, free_radius: f64) -> Vec<Vector> {
    let (lower, upper): (Vector, Vector) = match set {
        ConstraintSet::Box { lower, upper } => (lower.clone(), upper.clone()),
        ConstraintSet::Ball { center, radius } => (
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
        ),
        ConstraintSet::Free => (Vector::filled(d1, -free_radius), Vector::filled(d1, free_radius)),
    };
    let target = match set {
        ConstraintSet::Free => ConstraintSet::Ball { center: Vector::zeros(d1), radius: free_radius },
        other => other.clone(),
    };
    uniform_in_box(&lower, &upper, count, seed)
        .into_iter()
        .map(|p| target.project(&p).unwrap_or(p))
        .collect()
}

fn uniform_in_box(lower: &Vector, upper: &Vector, count: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            lower
                .iter()
                .zip(upper.iter())
                .map(|(l, u)| l + rng.gen_range(0.0..=1.0) * (u - l))
                .collect()
        })
        .collect()
}
