use alloc::format;

use serde::{Deserialize, Serialize};

use super::{OracleCounters, QueryMeter};
use crate::inner::{gd_adaptive, LagrangianOracle};
use crate::{BilevelProblem, Error, Result, Vector};

/// Accuracy knobs of the reference evaluator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceSettings {
    /// Stop inner solves once `|grad_y| <= inner_tol`.
    pub inner_tol: f64,
    pub inner_cap: usize,
    /// Relative residual for the `grad_yy^2 g` linear solve.
    pub linear_rel_tol: f64,
    /// Finite-difference step is `fd_scale * (1 + |v|)`.
    pub fd_scale: f64,
    /// Use closed-form `y*` and `grad F` when the problem provides them.
    pub prefer_analytic: bool,
    /// Permit the numeric hypergradient when no closed form exists.
    pub allow_numeric: bool,
}

impl Default for ReferenceSettings {
    fn default() -> Self {
        ReferenceSettings {
            inner_tol: 1e-10,
            inner_cap: 10_000_000,
            linear_rel_tol: 1e-8,
            fd_scale: 1e-6,
            prefer_analytic: true,
            allow_numeric: true,
        }
    }
}

/// Ground-truth oracle for `y_t*`, `F_t`, `grad F_t` and the penalty surrogate.
///
/// All work is charged to the evaluator's own meter, never to a solver.
pub struct ReferenceEvaluator<'a, P: ?Sized> {
    problem: &'a P,
    settings: ReferenceSettings,
    meter: QueryMeter,
}

impl<'a, P: BilevelProblem + ?Sized> ReferenceEvaluator<'a, P> {
    pub fn new(problem: &'a P, settings: ReferenceSettings) -> Self {
        ReferenceEvaluator {
            problem,
            settings,
            meter: QueryMeter::new(),
        }
    }

    pub fn problem(&self) -> &'a P {
        self.problem
    }

    pub fn settings(&self) -> &ReferenceSettings {
        &self.settings
    }

    pub fn counters(&self) -> OracleCounters {
        self.meter.snapshot()
    }

    /// Whether `grad F_t` comes from a closed form.
    pub fn has_analytic_hypergradient(&self) -> bool {
        let (d1, _) = self.problem.dims();
        self.settings.prefer_analytic && self.problem.hypergradient(1, &Vector::zeros(d1)).is_some()
    }

    /// `y_t*(x)`.
    pub fn inner_solution(&self, t: usize, x: &Vector) -> Result<Vector> {
        let (_, d2) = self.problem.dims();
        self.inner_solution_from(t, x, Vector::zeros(d2))
    }

    /// `y_t*(x)`, starting a numeric solve at `start`.
    pub fn inner_solution_from(&self, t: usize, x: &Vector, start: Vector) -> Result<Vector> {
        if self.settings.prefer_analytic {
            if let Some(y) = self.problem.inner_argmin(t, x) {
                return Ok(y);
            }
        }
        let step = 1.0 / self.problem.metadata().l_g1;
        self.solve(|y| self.problem.grad_g_y(t, x, y), start, step, "inner", t)
    }

    /// `y_{lambda,t}*(x) = argmin_y f_t(x, y) + lambda g_t(x, y)`.
    pub fn penalized_solution(&self, t: usize, x: &Vector, lambda: f64, start: Vector) -> Result<Vector> {
        let meta = self.problem.metadata();
        let step = 1.0 / (meta.l_f1 + lambda * meta.l_g1);
        let oracle = LagrangianOracle::new(self.problem, t, x, lambda);
        // `solve` charges one query per call; the penalized gradient costs two
        let grad = |y: &Vector| {
            self.meter.add_grad(1);
            oracle.grad_y(y)
        };
        self.solve(grad, start, step, "penalized", t)
    }

    fn solve<G: FnMut(&Vector) -> Vector>(
        &self,
        mut grad: G,
        start: Vector,
        step: f64,
        what: &str,
        t: usize,
    ) -> Result<Vector> {
        let r = gd_adaptive(
            |y| {
                self.meter.add_grad(1);
                grad(y)
            },
            start,
            step,
            self.settings.inner_tol,
            self.settings.inner_cap,
        )
        .map_err(|e| e.at_round(t))?;
        self.meter.add_inner(r.iterations_used as u64);
        if r.cap_hit {
            return Err(Error::Evaluation(format!(
                "{what} solve at round {t} hit the cap with |grad| = {:e}",
                r.final_grad_norm
            )));
        }
        Ok(r.iterate)
    }

    /// `F_t(x) = f_t(x, y_t*(x))`.
    pub fn outer_value(&self, t: usize, x: &Vector) -> Result<f64> {
        let y = self.inner_solution(t, x)?;
        Ok(self.problem.f_value(t, x, &y))
    }

    /// `grad F_t(x)`: closed form when allowed, otherwise numeric.
    pub fn hypergradient(&self, t: usize, x: &Vector) -> Result<Vector> {
        if self.settings.prefer_analytic {
            if let Some(g) = self.problem.hypergradient(t, x) {
                return Ok(g);
            }
        }
        if !self.settings.allow_numeric {
            return Err(Error::config(format!(
                "problem '{}' has no closed-form hypergradient and the numeric path is disabled",
                self.problem.name()
            )));
        }
        self.numeric_hypergradient(t, x)
    }

    /// `grad_x f - grad_xy^2 g [grad_yy^2 g]^{-1} grad_y f` at `y_t*(x)`, with
    /// second derivatives emulated by central differences of first-order oracles.
    pub fn numeric_hypergradient(&self, t: usize, x: &Vector) -> Result<Vector> {
        let y = self.inner_solution(t, x)?;
        self.meter.add_grad(2);
        let fx = self.problem.grad_f_x(t, x, &y);
        let fy = self.problem.grad_f_y(t, x, &y);
        let v = self.conjugate_residual(|u| self.hvp_yy(t, x, &y, u), &fy)?;
        let cross = self.fd_directional(|yy| self.problem.grad_g_x(t, x, yy), &y, &v);
        let out = fx.sub(&cross);
        if !out.is_finite() {
            return Err(Error::Evaluation(format!("non-finite hypergradient at round {t}")));
        }
        Ok(out)
    }

    fn hvp_yy(&self, t: usize, x: &Vector, y: &Vector, u: &Vector) -> Vector {
        self.fd_directional(|yy| self.problem.grad_g_y(t, x, yy), y, u)
    }

    /// Central difference of `map` at `y` along `v`, scaled to `|v|`.
    fn fd_directional<M: Fn(&Vector) -> Vector>(&self, map: M, y: &Vector, v: &Vector) -> Vector {
        self.meter.add_hvp(1);
        let norm = v.norm();
        if norm == 0.0 {
            return map(y).scale(0.0);
        }
        let h = self.settings.fd_scale * (1.0 + norm);
        let dir = v.scale(1.0 / norm);
        let mut up = y.clone();
        up.axpy(h, &dir);
        let mut down = y.clone();
        down.axpy(-h, &dir);
        map(&up).sub(&map(&down)).scale(norm / (2.0 * h))
    }

    /// Conjugate residual iteration for a symmetric operator.
    fn conjugate_residual<A: Fn(&Vector) -> Vector>(&self, apply: A, b: &Vector) -> Result<Vector> {
        let b_norm = b.norm();
        let mut x = b.scale(0.0);
        if b_norm == 0.0 {
            return Ok(x);
        }
        let tol = self.settings.linear_rel_tol * b_norm;
        let cap = 100 + 50 * b.dim();
        let mut r = b.clone();
        let mut ar = apply(&r);
        let mut p = r.clone();
        let mut ap = ar.clone();
        let mut r_ar = r.dot(&ar);
        for _ in 0..cap {
            let ap_sq = ap.norm_sq();
            if !(ap_sq > 0.0) {
                break;
            }
            let alpha = r_ar / ap_sq;
            x.axpy(alpha, &p);
            r.axpy(-alpha, &ap);
            if r.norm() <= tol {
                return Ok(x);
            }
            ar = apply(&r);
            let next = r.dot(&ar);
            let beta = next / r_ar;
            r_ar = next;
            p = r.add(&p.scale(beta));
            ap = ar.add(&ap.scale(beta));
        }
        Err(Error::Evaluation(format!(
            "linear solve stalled at relative residual {:e}",
            r.norm() / b_norm
        )))
    }

    /// `grad L*_{lambda,t}(x) = grad_x f(x, y_l) + lambda (grad_x g(x, y_l) - grad_x g(x, y*))`
    /// with `y_l`, `y*` from long independent solves.
    pub fn lagrangian_hypergradient(&self, t: usize, x: &Vector, lambda: f64) -> Result<Vector> {
        let (y_star, y_lambda) = self.solution_pair(t, x, lambda)?;
        Ok(self.lagrangian_gradient_at(t, x, lambda, &y_star, &y_lambda))
    }

    /// `(y_t*(x), y_{lambda,t}*(x))`.
    pub fn solution_pair(&self, t: usize, x: &Vector, lambda: f64) -> Result<(Vector, Vector)> {
        let y_star = self.inner_solution(t, x)?;
        let y_lambda = self.penalized_solution(t, x, lambda, y_star.clone())?;
        Ok((y_star, y_lambda))
    }

    pub(crate) fn lagrangian_gradient_at(
        &self,
        t: usize,
        x: &Vector,
        lambda: f64,
        y_star: &Vector,
        y_lambda: &Vector,
    ) -> Vector {
        self.meter.add_grad(3);
        let mut out = self.problem.grad_f_x(t, x, y_lambda);
        let diff = self
            .problem
            .grad_g_x(t, x, y_lambda)
            .sub(&self.problem.grad_g_x(t, x, y_star));
        out.axpy(lambda, &diff);
        out
    }

    /// `L*_{lambda,t}(x) = f(x, y_l) + lambda (g(x, y_l) - g(x, y*))`.
    pub(crate) fn lagrangian_value_at(
        &self,
        t: usize,
        x: &Vector,
        lambda: f64,
        y_star: &Vector,
        y_lambda: &Vector,
    ) -> f64 {
        self.problem.f_value(t, x, y_lambda)
            + lambda * (self.problem.g_value(t, x, y_lambda) - self.problem.g_value(t, x, y_star))
    }
}

/// `grad F_t(x)` with a throwaway evaluator.
pub fn reference_hypergradient<P: BilevelProblem + ?Sized>(
    problem: &P,
    t: usize,
    x: &Vector,
    settings: &ReferenceSettings,
) -> Result<Vector> {
    if !problem.outer_set().contains(x) {
        return Err(Error::precondition("x lies outside the outer set"));
    }
    ReferenceEvaluator::new(problem, settings.clone()).hypergradient(t, x)
}
