use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ReferenceEvaluator;
use crate::stats::loglog_slope;
use crate::{BilevelProblem, Error, Result, Vector};

/// One `(lambda, x)` probe of the penalty surrogate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapProbe {
    pub lambda: f64,
    pub sample: usize,
    /// `|y*(x) - y_lambda*(x)|`.
    pub y_gap: f64,
    /// `2 L_f0 / (lambda mu_g)`.
    pub y_gap_bound: f64,
    /// `|F(x) - L*_lambda(x)|`.
    pub value_gap: f64,
    /// `|grad F(x) - grad L*_lambda(x)|`.
    pub grad_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub round: usize,
    pub probes: Vec<GapProbe>,
    /// Log-log slopes against `lambda` of the per-`lambda` maximum gap.
    pub y_gap_slope: Option<f64>,
    pub value_gap_slope: Option<f64>,
    pub grad_gap_slope: Option<f64>,
    /// Empirical constants `max lambda * gap`.
    pub max_lambda_y_gap: f64,
    pub max_lambda_value_gap: f64,
    pub max_lambda_grad_gap: f64,
    /// Largest `lambda mu_g |y* - y_lambda*| - 2 L_f0`; nonpositive when the bound holds.
    pub y_gap_bound_excess: f64,
}

/// Measures how fast the penalty surrogate approaches `F_t` as `lambda` grows.
pub fn lemma_gap_probes<P: BilevelProblem + ?Sized>(
    evaluator: &ReferenceEvaluator<'_, P>,
    round: usize,
    lambdas: &[f64],
    samples: &[Vector],
) -> Result<GapReport> {
    let meta = evaluator.problem().metadata();
    let threshold = 2.0 * meta.l_f1 / meta.mu_g;
    if let Some(bad) = lambdas.iter().find(|l| !(**l >= threshold)) {
        return Err(Error::precondition(format!(
            "lambda = {bad} is below 2 L_f1 / mu_g = {threshold}"
        )));
    }
    let problem = evaluator.problem();
    let mut probes = Vec::with_capacity(lambdas.len() * samples.len());
    for (i, x) in samples.iter().enumerate() {
        let y_star = evaluator.inner_solution(round, x)?;
        let f_true = problem.f_value(round, x, &y_star);
        let grad_true = evaluator.hypergradient(round, x)?;
        for &lambda in lambdas {
            let y_lambda = evaluator.penalized_solution(round, x, lambda, y_star.clone())?;
            let value = evaluator.lagrangian_value_at(round, x, lambda, &y_star, &y_lambda);
            let grad = evaluator.lagrangian_gradient_at(round, x, lambda, &y_star, &y_lambda);
            probes.push(GapProbe {
                lambda,
                sample: i,
                y_gap: y_star.distance(&y_lambda),
                y_gap_bound: 2.0 * meta.l_f0 / (lambda * meta.mu_g),
                value_gap: (f_true - value).abs(),
                grad_gap: grad_true.distance(&grad),
            });
        }
    }

    let slope = |gap: fn(&GapProbe) -> f64| {
        let maxima: Vec<f64> = lambdas
            .iter()
            .map(|l| {
                probes
                    .iter()
                    .filter(|p| p.lambda == *l)
                    .map(gap)
                    .fold(0.0, f64::max)
            })
            .collect();
        loglog_slope(lambdas, &maxima)
    };
    let max_scaled = |gap: fn(&GapProbe) -> f64| {
        probes.iter().map(|p| p.lambda * gap(p)).fold(0.0, f64::max)
    };
    let excess = probes
        .iter()
        .map(|p| p.lambda * meta.mu_g * p.y_gap - 2.0 * meta.l_f0)
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(GapReport {
        round,
        y_gap_slope: slope(|p| p.y_gap),
        value_gap_slope: slope(|p| p.value_gap),
        grad_gap_slope: slope(|p| p.grad_gap),
        max_lambda_y_gap: max_scaled(|p| p.y_gap),
        max_lambda_value_gap: max_scaled(|p| p.value_gap),
        max_lambda_grad_gap: max_scaled(|p| p.grad_gap),
        y_gap_bound_excess: excess,
        probes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzProbe {
    pub pairs: usize,
    /// Largest `|y*(x1) - y*(x2)| / |x1 - x2|`.
    pub max_ratio: f64,
    pub kappa_g: f64,
    /// Largest `|y*(x1) - y*(x2)| - kappa_g |x1 - x2|`.
    pub max_excess: f64,
}

/// Checks that `y_t*` is `kappa_g`-Lipschitz on the given pairs.
pub fn inner_solution_lipschitz_probe<P: BilevelProblem + ?Sized>(
    evaluator: &ReferenceEvaluator<'_, P>,
    round: usize,
    pairs: &[(Vector, Vector)],
) -> Result<LipschitzProbe> {
    let kappa = evaluator.problem().metadata().kappa_g;
    let (mut max_ratio, mut max_excess) = (0.0f64, f64::NEG_INFINITY);
    for (a, b) in pairs {
        let dy = evaluator.inner_solution(round, a)?.distance(&evaluator.inner_solution(round, b)?);
        let dx = a.distance(b);
        if dx > 0.0 {
            max_ratio = max_ratio.max(dy / dx);
        }
        max_excess = max_excess.max(dy - kappa * dx);
    }
    Ok(LipschitzProbe {
        pairs: pairs.len(),
        max_ratio,
        kappa_g: kappa,
        max_excess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ReferenceSettings;
    use crate::problem::{OscillatoryDrift, QuadraticTracking, QuadraticTrackingSpec};
    use alloc::vec;

    fn quadratic() -> QuadraticTracking {
        let spec = QuadraticTrackingSpec {
            a0: Some(Vector::from([1.0, -0.5])),
            b0: Some(Vector::from([0.2, 0.3])),
            ..QuadraticTrackingSpec::default()
        };
        QuadraticTracking::new(4, &spec).unwrap()
    }

    #[test]
    fn gaps_decay_like_one_over_lambda() {
        let p = quadratic();
        let ev = ReferenceEvaluator::new(&p, ReferenceSettings::default());
        let xs = vec![Vector::from([0.5, -0.5]), Vector::from([1.5, 0.2])];
        let r = lemma_gap_probes(&ev, 1, &[10.0, 20.0, 40.0, 80.0], &xs).unwrap();
        assert!(r.y_gap_bound_excess <= 1e-9);
        let s = r.grad_gap_slope.unwrap();
        assert!((-1.3..=-0.7).contains(&s), "{s}");
        for pair in r.probes.chunks(4) {
            for w in pair.windows(2) {
                let ratio = w[1].grad_gap / w[0].grad_gap;
                assert!((0.3..=0.7).contains(&ratio), "{ratio}");
            }
        }
    }

    #[test]
    fn y_independent_f_gives_zero_gaps() {
        // at x = 0 the oscillatory inner solution is 0, a critical point of f
        let p = OscillatoryDrift::new(4, 1.0, 1.0).unwrap();
        let ev = ReferenceEvaluator::new(&p, ReferenceSettings::default());
        let r = lemma_gap_probes(&ev, 1, &[5.0, 10.0], &[Vector::zeros(1)]).unwrap();
        for probe in &r.probes {
            assert_eq!((probe.y_gap, probe.value_gap, probe.grad_gap), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn small_lambda_rejected() {
        let p = quadratic();
        let ev = ReferenceEvaluator::new(&p, ReferenceSettings::default());
        assert!(matches!(
            lemma_gap_probes(&ev, 1, &[1.0], &[Vector::zeros(2)]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn inner_solution_is_kappa_lipschitz() {
        let p = quadratic();
        let ev = ReferenceEvaluator::new(&p, ReferenceSettings::default());
        let pairs = vec![
            (Vector::from([0.0, 0.0]), Vector::from([1.0, 0.0])),
            (Vector::from([-2.0, 3.0]), Vector::from([0.5, 0.1])),
        ];
        let r = inner_solution_lipschitz_probe(&ev, 1, &pairs).unwrap();
        assert!(r.max_excess <= 1e-9);
    }
}
