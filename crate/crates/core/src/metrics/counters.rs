use core::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::problem::LipschitzMetadata;
use crate::{BilevelProblem, ConstraintSet, Vector};

/// Oracle-query totals of one party (a solver or an evaluator).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCounters {
    /// First-order gradient calls on `f_t` or `g_t`.
    pub grad_queries: u64,
    /// Hessian- or Jacobian-vector products, finite-difference emulations included.
    pub hvp_queries: u64,
    /// Inner-loop update steps.
    pub inner_iters_total: u64,
}

impl OracleCounters {
    pub fn saturating_sub(&self, earlier: &OracleCounters) -> OracleCounters {
        OracleCounters {
            grad_queries: self.grad_queries.saturating_sub(earlier.grad_queries),
            hvp_queries: self.hvp_queries.saturating_sub(earlier.hvp_queries),
            inner_iters_total: self.inner_iters_total.saturating_sub(earlier.inner_iters_total),
        }
    }
}

/// Thread-safe accumulating counters.
#[derive(Debug, Default)]
pub struct QueryMeter {
    grad: AtomicU64,
    hvp: AtomicU64,
    inner: AtomicU64,
}

impl QueryMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_grad(&self, n: u64) {
        self.grad.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_hvp(&self, n: u64) {
        self.hvp.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_inner(&self, n: u64) {
        self.inner.fetch_add(n, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> OracleCounters {
        OracleCounters {
            grad_queries: self.grad.load(Ordering::Relaxed),
            hvp_queries: self.hvp.load(Ordering::Relaxed),
            inner_iters_total: self.inner.load(Ordering::Relaxed),
        }
    }
}

/// Problem wrapper that charges every gradient call to a [`QueryMeter`].
///
/// `BilevelProblem` has no second-order oracle, so nothing reached through
/// this wrapper can ever count as an HVP.
pub struct Metered<'a, P: ?Sized> {
    inner: &'a P,
    meter: &'a QueryMeter,
}

impl<'a, P: BilevelProblem + ?Sized> Metered<'a, P> {
    pub fn new(inner: &'a P, meter: &'a QueryMeter) -> Self {
        Metered { inner, meter }
    }

    fn charge(&self, v: Vector) -> Vector {
        self.meter.add_grad(1);
        v
    }
}

impl<P: BilevelProblem + ?Sized> BilevelProblem for Metered<'_, P> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn dims(&self) -> (usize, usize) {
        self.inner.dims()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
    fn outer_set(&self) -> &ConstraintSet {
        self.inner.outer_set()
    }
    fn metadata(&self) -> &LipschitzMetadata {
        self.inner.metadata()
    }
    fn f_value(&self, t: usize, x: &Vector, y: &Vector) -> f64 {
        self.inner.f_value(t, x, y)
    }
    fn grad_f_x(&self, t: usize, x: &Vector, y: &Vector) -> Vector {
        self.charge(self.inner.grad_f_x(t, x, y))
    }
    fn grad_f_y(&self, t: usize, x: &Vector, y: &Vector) -> Vector {
        self.charge(self.inner.grad_f_y(t, x, y))
    }
    fn g_value(&self, t: usize, x: &Vector, y: &Vector) -> f64 {
        self.inner.g_value(t, x, y)
    }
    fn grad_g_x(&self, t: usize, x: &Vector, y: &Vector) -> Vector {
        self.charge(self.inner.grad_g_x(t, x, y))
    }
    fn grad_g_y(&self, t: usize, x: &Vector, y: &Vector) -> Vector {
        self.charge(self.inner.grad_g_y(t, x, y))
    }
    fn inner_argmin(&self, t: usize, x: &Vector) -> Option<Vector> {
        self.inner.inner_argmin(t, x)
    }
    fn hypergradient(&self, t: usize, x: &Vector) -> Option<Vector> {
        self.inner.hypergradient(t, x)
    }
    fn variation_v(&self, horizon: usize) -> Option<f64> {
        self.inner.variation_v(horizon)
    }
    fn variation_h2(&self, horizon: usize) -> Option<f64> {
        self.inner.variation_h2(horizon)
    }
    fn default_start(&self) -> Vector {
        self.inner.default_start()
    }
}
