//! Time-varying bilevel problems and the synthetic problem suite.
//!
//! A problem exposes first-order oracles of the outer objective `f_t` and the
//! inner objective `g_t`, both functions of `(x, y)`. There is deliberately no
//! second-order oracle on [`BilevelProblem`]: solvers built on it cannot issue
//! Hessian-vector products, only the reference evaluator in
//! [`metrics`](crate::metrics) emulates them with finite differences.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::{ConstraintSet, Error, Result, Vector};

mod oscillatory;
mod quadratic;
mod ridge;

pub use oscillatory::OscillatoryDrift;
pub use quadratic::{DriftSpec, MatrixSpec, QuadraticTracking, QuadraticTrackingSpec};
pub use ridge::{DriftingRidge, DriftingRidgeSpec};

/// Regularity constants of the problem family.
///
/// Values for non-quadratic objectives are upper bounds over the outer set and
/// the region reachable by the inner iterates; every consumer only needs upper
/// bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzMetadata {
    /// Strong convexity of `g_t` in `y`.
    pub mu_g: f64,
    /// Lipschitz constant of `f_t`.
    pub l_f0: f64,
    /// Lipschitz constant of `grad f_t`.
    pub l_f1: f64,
    /// Lipschitz constant of `grad g_t`.
    pub l_g1: f64,
    /// Lipschitz constant of the second derivatives of `g_t`; informational.
    pub l_g2: f64,
    /// Condition number `l_g1 / mu_g`.
    pub kappa_g: f64,
}

impl LipschitzMetadata {
    pub fn new(mu_g: f64, l_f0: f64, l_f1: f64, l_g1: f64, l_g2: f64) -> Result<Self> {
        let meta = LipschitzMetadata {
            mu_g,
            l_f0,
            l_f1,
            l_g1,
            l_g2,
            kappa_g: l_g1 / mu_g,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.mu_g, self.l_f0, self.l_f1, self.l_g1];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config("Lipschitz metadata must be positive and finite"));
        }
        if !(self.l_g2.is_finite() && self.l_g2 >= 0.0) {
            return Err(Error::config("l_g2 must be nonnegative"));
        }
        if self.mu_g > self.l_g1 {
            return Err(Error::config(format!(
                "mu_g = {} exceeds l_g1 = {}",
                self.mu_g, self.l_g1
            )));
        }
        if (self.kappa_g - self.l_g1 / self.mu_g).abs() > 1e-12 * self.kappa_g.max(1.0) {
            return Err(Error::config("kappa_g must equal l_g1 / mu_g"));
        }
        Ok(())
    }
}

/// Oracle bundle for a sequence of bilevel problems `(f_t, g_t)`, `t = 1..=T`.
///
/// Every oracle must be a deterministic function of its arguments and
/// `g_t(x, .)` must be `mu_g`-strongly convex for every `x` in the outer set.
pub trait BilevelProblem {
    fn name(&self) -> &str;

    /// `(d1, d2)`: dimensions of the outer and inner variables.
    fn dims(&self) -> (usize, usize);

    fn horizon(&self) -> usize;

    fn outer_set(&self) -> &ConstraintSet;

    fn metadata(&self) -> &LipschitzMetadata;

    fn f_value(&self, t: usize, x: &Vector, y: &Vector) -> f64;
    fn grad_f_x(&self, t: usize, x: &Vector, y: &Vector) -> Vector;
    fn grad_f_y(&self, t: usize, x: &Vector, y: &Vector) -> Vector;
    fn g_value(&self, t: usize, x: &Vector, y: &Vector) -> f64;
    fn grad_g_x(&self, t: usize, x: &Vector, y: &Vector) -> Vector;
    fn grad_g_y(&self, t: usize, x: &Vector, y: &Vector) -> Vector;

    /// Closed-form `y_t*(x)`, when known.
    fn inner_argmin(&self, _t: usize, _x: &Vector) -> Option<Vector> {
        None
    }

    /// Closed-form hypergradient `grad F_t(x)`, when known.
    fn hypergradient(&self, _t: usize, _x: &Vector) -> Option<Vector> {
        None
    }

    /// Exact `V_T` over rounds `1..=horizon`, when known.
    fn variation_v(&self, _horizon: usize) -> Option<f64> {
        None
    }

    /// Exact `H_{2,T}` over rounds `1..=horizon`, when known.
    fn variation_h2(&self, _horizon: usize) -> Option<f64> {
        None
    }

    /// Suggested outer starting point, inside the outer set.
    fn default_start(&self) -> Vector {
        let (d1, _) = self.dims();
        self.outer_set()
            .project(&Vector::zeros(d1))
            .unwrap_or_else(|_| Vector::zeros(d1))
    }
}

pub(crate) fn check_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::precondition(format!("{name} must be positive, got {value}")))
    }
}

/// Maximum relative error of each gradient oracle against central differences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub grad_f_x: f64,
    pub grad_f_y: f64,
    pub grad_g_x: f64,
    pub grad_g_y: f64,
}

impl FdReport {
    pub fn max(&self) -> f64 {
        self.grad_f_x
            .max(self.grad_f_y)
            .max(self.grad_g_x)
            .max(self.grad_g_y)
    }
}

/// Checks the gradient oracles at `(t, x, y)` against central differences of
/// the value oracles with step `h`.
///
/// The relative error of an oracle is `max_i |fd_i - a_i| / max(|a|_inf, 1)`,
/// floored at unit scale so that identically-zero gradients are measured
/// absolutely.
pub fn fd_check<P: BilevelProblem + ?Sized>(
    problem: &P,
    t: usize,
    x: &Vector,
    y: &Vector,
    h: f64,
) -> Result<FdReport> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::precondition(format!("fd step must lie in [1e-7, 1e-3], got {h}")));
    }
    let (d1, d2) = problem.dims();
    if x.dim() != d1 {
        return Err(Error::DimensionMismatch { expected: d1, found: x.dim() });
    }
    if y.dim() != d2 {
        return Err(Error::DimensionMismatch { expected: d2, found: y.dim() });
    }
    let f = |x: &Vector, y: &Vector| problem.f_value(t, x, y);
    let g = |x: &Vector, y: &Vector| problem.g_value(t, x, y);
    Ok(FdReport {
        grad_f_x: rel_error(&problem.grad_f_x(t, x, y), &central_diff(|v| f(v, y), x, h)),
        grad_f_y: rel_error(&problem.grad_f_y(t, x, y), &central_diff(|v| f(x, v), y, h)),
        grad_g_x: rel_error(&problem.grad_g_x(t, x, y), &central_diff(|v| g(v, y), x, h)),
        grad_g_y: rel_error(&problem.grad_g_y(t, x, y), &central_diff(|v| g(x, v), y, h)),
    })
}

fn central_diff(func: impl Fn(&Vector) -> f64, at: &Vector, h: f64) -> Vector {
    let mut probe = at.clone();
    (0..at.dim())
        .map(|i| {
            let base = at[i];
            probe[i] = base + h;
            let up = func(&probe);
            probe[i] = base - h;
            let down = func(&probe);
            probe[i] = base;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_error(analytic: &Vector, numeric: &Vector) -> f64 {
    if analytic.dim() != numeric.dim() {
        return f64::INFINITY;
    }
    let err = analytic.sub(numeric).max_abs();
    err / analytic.max_abs().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metadata_recomputes_condition_number() {
        let m = LipschitzMetadata::new(0.5, 1.0, 2.0, 3.0, 0.0).unwrap();
        assert!((m.kappa_g - 6.0).abs() < 1e-12);
        assert!(LipschitzMetadata::new(4.0, 1.0, 1.0, 3.0, 0.0).is_err());
        assert!(LipschitzMetadata::new(0.0, 1.0, 1.0, 3.0, 0.0).is_err());
        let mut bad = m.clone();
        bad.kappa_g = 5.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fd_step_outside_range_rejected() {
        let p = OscillatoryDrift::new(4, 1.0, 1.0).unwrap();
        let x = Vector::from([0.2]);
        let y = Vector::from([0.1]);
        assert!(matches!(fd_check(&p, 1, &x, &y, 0.0), Err(Error::Precondition(_))));
        assert!(matches!(fd_check(&p, 1, &x, &y, 1e-2), Err(Error::Precondition(_))));
    }
}
