//! Inner gradient-descent loops over `y`.
//!
//! Each outer round runs two of them: one on `g_t(x_t, .)` producing `z_{t+1}`
//! and one on the penalized objective `f_t + lambda_t g_t` producing `y_{t+1}`.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::problem::LipschitzMetadata;
use crate::{BilevelProblem, Error, Result, Vector};

/// Outcome of an inner loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerLoopResult {
    pub iterate: Vector,
    pub iterations_used: usize,
    /// For tolerance-stopped loops, the norm at the returned iterate. For
    /// fixed-iteration loops, the norm of the last gradient used in an update
    /// (no extra gradient is spent on the final iterate).
    pub final_grad_norm: f64,
    pub cap_hit: bool,
    /// Number of times the gradient map was called.
    pub grad_evals: usize,
}

fn check_step(step: f64) -> Result<()> {
    if step.is_finite() && step > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("inner step must be positive, got {step}")))
    }
}

/// Exactly `iterations` steps of `y <- y - step * grad(y)`.
pub fn gd_fixed<G>(mut grad: G, y0: Vector, step: f64, iterations: usize) -> Result<InnerLoopResult>
where
    G: FnMut(&Vector) -> Vector,
{
    check_step(step)?;
    if iterations == 0 {
        return Err(Error::precondition("fixed inner loop needs K >= 1"));
    }
    let mut y = y0;
    let mut last_norm = 0.0;
    for k in 0..iterations {
        let g = grad(&y);
        if !g.is_finite() {
            return Err(Error::Divergence { round: None, iteration: k });
        }
        last_norm = g.norm();
        y.axpy(-step, &g);
        if !y.is_finite() {
            return Err(Error::Divergence { round: None, iteration: k });
        }
    }
    Ok(InnerLoopResult {
        iterate: y,
        iterations_used: iterations,
        final_grad_norm: last_norm,
        cap_hit: false,
        grad_evals: iterations,
    })
}

/// Gradient descent while `|grad(y)| > tol`, at most `cap` steps.
///
/// The test runs before every step, so a converged `y0` costs no iterations.
/// Hitting the cap is not an error; it is flagged in the result.
pub fn gd_adaptive<G>(
    mut grad: G,
    y0: Vector,
    step: f64,
    tol: f64,
    cap: usize,
) -> Result<InnerLoopResult>
where
    G: FnMut(&Vector) -> Vector,
{
    check_step(step)?;
    if !(tol > 0.0) {
        return Err(Error::config(format!("tolerance must be positive, got {tol}")));
    }
    if cap == 0 {
        return Err(Error::config("iteration cap must be >= 1"));
    }
    let mut y = y0;
    let mut iterations = 0;
    let mut evals = 0;
    loop {
        let g = grad(&y);
        evals += 1;
        if !g.is_finite() {
            return Err(Error::Divergence { round: None, iteration: iterations });
        }
        let norm = g.norm();
        if norm <= tol || iterations == cap {
            return Ok(InnerLoopResult {
                iterate: y,
                iterations_used: iterations,
                final_grad_norm: norm,
                cap_hit: norm > tol,
                grad_evals: evals,
            });
        }
        y.axpy(-step, &g);
        iterations += 1;
        if !y.is_finite() {
            return Err(Error::Divergence { round: None, iteration: iterations });
        }
    }
}

/// Inner-iteration count
/// `ceil((1 + 2 tau) / (-ln rho) * ln T + (ln c - ln lambda1) / ln rho)`, floored at 1.
///
/// A `1e-9` slack is subtracted before the ceiling so that values which are
/// integers up to roundoff do not jump to the next integer.
pub fn theorem1_k(horizon: usize, tau: f64, rho: f64, c_const: f64, lambda1: f64) -> Result<usize> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::config(format!("contraction factor must lie in (0, 1), got {rho}")));
    }
    if horizon == 0 || !(tau >= 0.0) || !(c_const > 0.0) || !(lambda1 > 0.0) {
        return Err(Error::config("theorem1_k needs T >= 1, tau >= 0, c > 0, lambda1 > 0"));
    }
    let ln_rho = libm::log(rho);
    let raw = (1.0 + 2.0 * tau) / -ln_rho * libm::log(horizon as f64)
        + (libm::log(c_const) - libm::log(lambda1)) / ln_rho;
    let k = libm::ceil(raw - 1e-9);
    Ok(if k < 1.0 { 1 } else { k as usize })
}

/// `max(1 - alpha mu_g, 1 - mu_g / (4 L_g1))`, the slower of the two inner
/// contraction factors.
pub fn default_contraction(alpha: f64, meta: &LipschitzMetadata) -> f64 {
    (1.0 - alpha * meta.mu_g).max(1.0 - meta.mu_g / (4.0 * meta.l_g1))
}

/// `y`-gradient of `g_t(x, .)` at a fixed round and outer point.
pub struct InnerObjective<'a, P: ?Sized> {
    problem: &'a P,
    t: usize,
    x: &'a Vector,
}

impl<'a, P: BilevelProblem + ?Sized> InnerObjective<'a, P> {
    pub fn new(problem: &'a P, t: usize, x: &'a Vector) -> Self {
        InnerObjective { problem, t, x }
    }

    pub fn value(&self, y: &Vector) -> f64 {
        self.problem.g_value(self.t, self.x, y)
    }

    pub fn grad_y(&self, y: &Vector) -> Vector {
        self.problem.grad_g_y(self.t, self.x, y)
    }
}

/// The penalized objective `f_t(x, y) + lambda g_t(x, y)` at fixed `(t, x, lambda)`.
///
/// The term `-lambda g_t(x, y_t*(x))` of the Lagrangian does not depend on `y`
/// and is omitted.
pub struct LagrangianOracle<'a, P: ?Sized> {
    problem: &'a P,
    t: usize,
    x: &'a Vector,
    lambda: f64,
}

impl<'a, P: BilevelProblem + ?Sized> LagrangianOracle<'a, P> {
    pub fn new(problem: &'a P, t: usize, x: &'a Vector, lambda: f64) -> Self {
        LagrangianOracle { problem, t, x, lambda }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn value(&self, y: &Vector) -> f64 {
        self.problem.f_value(self.t, self.x, y) + self.lambda * self.problem.g_value(self.t, self.x, y)
    }

    pub fn grad_y(&self, y: &Vector) -> Vector {
        let mut g = self.problem.grad_f_y(self.t, self.x, y);
        g.axpy(self.lambda, &self.problem.grad_g_y(self.t, self.x, y));
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{OscillatoryDrift, QuadraticTracking};
    use crate::ConstraintSet;
    use alloc::vec;
    use proptest::prelude::*;

    fn shifted(target: f64) -> impl Fn(&Vector) -> Vector {
        move |y: &Vector| Vector::from([y[0] - target])
    }

    #[test]
    fn fixed_two_steps_by_hand() {
        let r = gd_fixed(shifted(3.0), Vector::zeros(1), 0.5, 2).unwrap();
        assert!((r.iterate[0] - 2.25).abs() < 1e-15);
        assert_eq!(r.iterations_used, 2);
        assert_eq!(r.grad_evals, 2);
    }

    #[test]
    fn unit_step_lands_on_minimizer() {
        let r = gd_fixed(shifted(3.0), Vector::zeros(1), 1.0, 1).unwrap();
        assert_eq!(r.iterate[0], 3.0);
    }

    #[test]
    fn zero_iterations_rejected() {
        assert!(matches!(
            gd_fixed(shifted(3.0), Vector::zeros(1), 0.5, 0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn fixed_loop_reports_divergence() {
        let r = gd_fixed(|y: &Vector| y.scale(1e200), Vector::from([1e200]), 1.0, 5);
        assert!(matches!(r, Err(Error::Divergence { round: None, .. })));
        let err = r.unwrap_err().at_round(7);
        assert!(matches!(err, Error::Divergence { round: Some(7), .. }));
    }

    #[test]
    fn adaptive_converged_start_costs_nothing() {
        let r = gd_adaptive(shifted(3.0), Vector::from([3.05]), 0.5, 0.1, 100).unwrap();
        assert_eq!(r.iterations_used, 0);
        assert_eq!(r.grad_evals, 1);
        assert!(!r.cap_hit);
    }

    #[test]
    fn adaptive_geometric_residual() {
        // residual 3 * 2^-k first drops to <= 0.1 at k = 5
        let r = gd_adaptive(shifted(3.0), Vector::zeros(1), 0.5, 0.1, 100).unwrap();
        assert_eq!(r.iterations_used, 5);
        assert!(r.final_grad_norm <= 0.1);
        assert!(!r.cap_hit);
    }

    #[test]
    fn adaptive_cap_is_flagged() {
        let r = gd_adaptive(shifted(3.0), Vector::from([-100.0]), 0.5, 0.1, 1).unwrap();
        assert!(r.cap_hit);
        assert_eq!(r.iterations_used, 1);
        assert!(r.final_grad_norm > 0.1);
    }

    #[test]
    fn theorem_k_values() {
        assert_eq!(theorem1_k(100, 1.0, 0.9, 1.0, 1.0).unwrap(), 132);
        assert_eq!(theorem1_k(1, 0.5, 0.9, 2.0, 2.0).unwrap(), 1);
        let e = core::f64::consts::E;
        // T is an integer, so use T = 3 with rho = 1/3: (1) / ln 3 * ln 3 = 1
        assert_eq!(theorem1_k(3, 0.0, 1.0 / 3.0, 1.0, 1.0).unwrap(), 1);
        assert_eq!(theorem1_k(3, 0.0, 1.0 / e, 1.0, 1.0).unwrap(), 2);
        assert!(matches!(theorem1_k(10, 1.0, 1.0, 1.0, 1.0), Err(Error::Config(_))));
        assert!(matches!(theorem1_k(10, 1.0, 1.5, 1.0, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn lagrangian_gradient_matches_finite_differences() {
        let p = OscillatoryDrift::new(8, 1.0, 1.0).unwrap();
        let x = Vector::from([0.4]);
        for lambda in [0.0, 1.0, 4.04, 30.0] {
            let oracle = LagrangianOracle::new(&p, 3, &x, lambda);
            for yv in [-1.5, -0.2, 0.0, 0.7, 2.0] {
                let y = Vector::from([yv]);
                let h = 1e-6;
                let fd = (oracle.value(&Vector::from([yv + h])) - oracle.value(&Vector::from([yv - h])))
                    / (2.0 * h);
                let g = oracle.grad_y(&y)[0];
                assert!((fd - g).abs() <= 1e-4 * g.abs().max(1.0));
            }
        }
    }

    #[test]
    fn lagrangian_strongly_monotone_above_threshold() {
        let p = OscillatoryDrift::new(8, 1.0, 1.0).unwrap();
        let meta = p.metadata().clone();
        let lambda = 2.0 * meta.l_f1 / meta.mu_g;
        let x = Vector::from([-0.8]);
        let oracle = LagrangianOracle::new(&p, 2, &x, lambda);
        for i in 0..100 {
            for j in 0..100 {
                let y1 = Vector::from([-3.0 + 0.06 * i as f64]);
                let y2 = Vector::from([-3.0 + 0.06 * j as f64 + 0.01]);
                let dg = oracle.grad_y(&y1).sub(&oracle.grad_y(&y2));
                let dy = y1.sub(&y2);
                assert!(dg.dot(&dy) >= lambda * meta.mu_g / 2.0 * dy.norm_sq() - 1e-12);
            }
        }
    }

    #[test]
    fn lagrangian_loop_contracts_toward_minimizer() {
        let p = OscillatoryDrift::new(8, 1.0, 1.0).unwrap();
        let meta = p.metadata().clone();
        let lambda = 2.0 * meta.l_f1 / meta.mu_g * 1.01;
        let beta = 1.0 / (2.0 * lambda * meta.l_g1);
        let x = Vector::from([0.6]);
        let oracle = LagrangianOracle::new(&p, 5, &x, lambda);
        let reference = gd_adaptive(|y| oracle.grad_y(y), Vector::zeros(1), beta, 1e-13, 1_000_000)
            .unwrap()
            .iterate;
        let mut y = Vector::from([3.0]);
        let mut dist = y.distance(&reference);
        for _ in 0..200 {
            let g = oracle.grad_y(&y);
            y.axpy(-beta, &g);
            let next = y.distance(&reference);
            assert!(next <= dist + 1e-12);
            dist = next;
        }
    }

    #[test]
    fn adaptive_lagrangian_loop_obeys_distance_bound() {
        let p = QuadraticTracking::with_matrix(
            4,
            vec![vec![1.5, -0.5], vec![0.3, 1.0]],
            Vector::from([1.0, -2.0]),
            Vector::from([0.5, 0.5]),
            ConstraintSet::Free,
        )
        .unwrap();
        let meta = p.metadata().clone();
        let x = Vector::from([0.2, -0.7]);
        for lambda in [2.5, 10.0, 40.0] {
            let oracle = LagrangianOracle::new(&p, 1, &x, lambda);
            let beta = 1.0 / (2.0 * lambda * meta.l_g1);
            let reference = gd_adaptive(|y| oracle.grad_y(y), Vector::zeros(2), beta, 1e-13, 10_000_000)
                .unwrap()
                .iterate;
            for delta in [1.0, 0.1, 1e-3] {
                let r = gd_adaptive(|y| oracle.grad_y(y), Vector::from([5.0, 5.0]), beta, delta, 1_000_000)
                    .unwrap();
                assert!(!r.cap_hit);
                let bound = 2.0 * delta / (lambda * meta.mu_g);
                assert!(r.iterate.distance(&reference) <= bound + 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn quadratic_contraction_per_step(
            mu in 0.1..5.0f64,
            curvature_ratio in 1.0..10.0f64,
            target in -10.0..10.0f64,
            start in -10.0..10.0f64,
            step_frac in 0.05..1.0f64,
        ) {
            // g(y) = mu (y - target)^2 / 2 with step in (0, 1/mu]
            let _ = curvature_ratio;
            let step = step_frac / mu;
            let mut y = Vector::from([start]);
            let mut dist = (start - target).abs();
            for _ in 0..50 {
                let g = Vector::from([mu * (y[0] - target)]);
                y.axpy(-step, &g);
                let next = (y[0] - target).abs();
                prop_assert!(next <= (1.0 - step * mu) * dist + 1e-12);
                prop_assert!(next <= dist + 1e-12);
                dist = next;
            }
        }

        #[test]
        fn adaptive_postcondition(
            mu in 0.1..5.0f64,
            target in -10.0..10.0f64,
            start in -10.0..10.0f64,
            tol in 1e-8..1.0f64,
        ) {
            let grad = |y: &Vector| Vector::from([mu * (y[0] - target)]);
            let r = gd_adaptive(grad, Vector::from([start]), 1.0 / (2.0 * mu), tol, 10_000).unwrap();
            if !r.cap_hit {
                prop_assert!(r.final_grad_norm <= tol);
                prop_assert!(grad(&r.iterate).norm() <= tol);
            }
        }
    }
}
