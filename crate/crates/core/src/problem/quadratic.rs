use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BilevelProblem, LipschitzMetadata};
use crate::linalg;
use crate::{ConstraintSet, Error, Result, Vector};

/// How a target vector moves across rounds. The displacement at round `t` is
/// added to the base target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftSpec {
    #[default]
    Static,
    /// `rate * (t - 1)` along the normalized all-ones direction.
    Linear { rate: f64 },
    /// `amplitude * sin(2 pi t / period)` along the normalized all-ones direction.
    Sinusoidal { amplitude: f64, period: f64 },
    /// Cumulative sum of `step * u_t`, `u_t` uniform on `[-1, 1]^d2`.
    RandomWalk { step: f64, seed: u64 },
}

impl DriftSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            DriftSpec::Static => true,
            DriftSpec::Linear { rate } => rate.is_finite(),
            DriftSpec::Sinusoidal { amplitude, period } => {
                amplitude.is_finite() && *amplitude >= 0.0 && period.is_finite() && *period > 0.0
            }
            DriftSpec::RandomWalk { step, .. } => step.is_finite() && *step >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid drift spec {self:?}")))
        }
    }

    pub fn is_static(&self) -> bool {
        match self {
            DriftSpec::Static => true,
            DriftSpec::Linear { rate } => *rate == 0.0,
            DriftSpec::Sinusoidal { amplitude, .. } => *amplitude == 0.0,
            DriftSpec::RandomWalk { step, .. } => *step == 0.0,
        }
    }

    /// Displacements for rounds `1..=horizon` (index `t - 1`).
    fn displacements(&self, horizon: usize, dim: usize) -> Vec<Vector> {
        let dir = Vector::filled(dim, 1.0 / libm::sqrt(dim as f64));
        match self {
            DriftSpec::Static => (0..horizon).map(|_| Vector::zeros(dim)).collect(),
            DriftSpec::Linear { rate } => (1..=horizon)
                .map(|t| dir.scale(rate * (t - 1) as f64))
                .collect(),
            DriftSpec::Sinusoidal { amplitude, period } => (1..=horizon)
                .map(|t| {
                    let phase = 2.0 * core::f64::consts::PI * t as f64 / period;
                    dir.scale(amplitude * libm::sin(phase))
                })
                .collect(),
            DriftSpec::RandomWalk { step, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut current = Vector::zeros(dim);
                (0..horizon)
                    .map(|i| {
                        if i > 0 {
                            current.axpy(*step, &linalg::uniform_vector(&mut rng, dim));
                        }
                        current.clone()
                    })
                    .collect()
            }
        }
    }
}

/// The coupling matrix `B` of `g_t(x, y) = |y - B x - b_t|^2 / 2` (`d2 x d1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatrixSpec {
    /// Row-major explicit entries.
    Explicit { rows: Vec<Vec<f64>> },
    /// Random orthonormal columns scaled so every singular value is `scale`.
    Seeded { seed: u64, scale: f64 },
}

impl Default for MatrixSpec {
    fn default() -> Self {
        MatrixSpec::Seeded { seed: 0, scale: 1.0 }
    }
}

fn default_dim() -> usize {
    2
}

fn default_reach() -> f64 {
    10.0
}

/// Parameters of [`QuadraticTracking`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticTrackingSpec {
    #[serde(default = "default_dim")]
    pub d1: usize,
    #[serde(default = "default_dim")]
    pub d2: usize,
    #[serde(default)]
    pub matrix: MatrixSpec,
    /// Base outer target; defaults to all ones.
    #[serde(default)]
    pub a0: Option<Vector>,
    /// Base inner offset; defaults to zero.
    #[serde(default)]
    pub b0: Option<Vector>,
    /// Drift of the outer target `a_t`.
    #[serde(default)]
    pub target_drift: DriftSpec,
    /// Drift of the inner offset `b_t`.
    #[serde(default)]
    pub inner_drift: DriftSpec,
    #[serde(default = "free_set")]
    pub outer_set: ConstraintSet,
    /// Radius of the region assumed reachable by `x` when the outer set is
    /// unbounded; used only for the `L_f0` bound.
    #[serde(default = "default_reach")]
    pub reach_radius: f64,
}

fn free_set() -> ConstraintSet {
    ConstraintSet::Free
}

impl Default for QuadraticTrackingSpec {
    fn default() -> Self {
        QuadraticTrackingSpec {
            d1: default_dim(),
            d2: default_dim(),
            matrix: MatrixSpec::default(),
            a0: None,
            b0: None,
            target_drift: DriftSpec::Static,
            inner_drift: DriftSpec::Static,
            outer_set: ConstraintSet::Free,
            reach_radius: default_reach(),
        }
    }
}

/// Quadratic tracking problem
///
/// ```text
/// f_t(x, y) = |y - a_t|^2 / 2,   g_t(x, y) = |y - B x - b_t|^2 / 2
/// ```
///
/// with `y_t*(x) = B x + b_t` and `grad F_t(x) = B^T (B x + b_t - a_t)`.
/// `mu_g = 1`, `L_g1 = 1 + sigma_max(B)^2`, `L_f1 = 1`, and `L_f0` bounds
/// `|y - a_t|` on the segment between `a_t` and `y_t*(x)` over the outer set
/// (or the ball of radius `reach_radius` when the set is free).
#[derive(Clone, Debug)]
pub struct QuadraticTracking {
    horizon: usize,
    d1: usize,
    d2: usize,
    b_matrix: DMatrix<f64>,
    targets: Vec<Vector>,
    offsets: Vec<Vector>,
    set: ConstraintSet,
    meta: LipschitzMetadata,
    name: String,
}

impl QuadraticTracking {
    pub fn new(horizon: usize, spec: &QuadraticTrackingSpec) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::precondition("horizon must be positive"));
        }
        let (d1, d2) = (spec.d1, spec.d2);
        if d1 == 0 || d2 == 0 {
            return Err(Error::config("dimensions must be positive"));
        }
        spec.target_drift.validate()?;
        spec.inner_drift.validate()?;
        spec.outer_set.validate()?;
        if let Some(d) = spec.outer_set.dim() {
            if d != d1 {
                return Err(Error::DimensionMismatch { expected: d1, found: d });
            }
        }
        let b_matrix = match &spec.matrix {
            MatrixSpec::Explicit { rows } => {
                if rows.len() != d2 || rows.iter().any(|r| r.len() != d1) {
                    return Err(Error::config(format!("matrix must be {d2} x {d1}")));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                if flat.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config("matrix entries must be finite"));
                }
                DMatrix::from_row_slice(d2, d1, &flat)
            }
            MatrixSpec::Seeded { seed, scale } => {
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(Error::config("matrix scale must be positive"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                linalg::scaled_orthogonal(&mut rng, d2, d1, *scale)
            }
        };
        let a0 = spec.a0.clone().unwrap_or_else(|| Vector::filled(d2, 1.0));
        let b0 = spec.b0.clone().unwrap_or_else(|| Vector::zeros(d2));
        for v in [&a0, &b0] {
            if v.dim() != d2 {
                return Err(Error::DimensionMismatch { expected: d2, found: v.dim() });
            }
            if !v.is_finite() {
                return Err(Error::config("targets must be finite"));
            }
        }
        let targets: Vec<Vector> = spec
            .target_drift
            .displacements(horizon, d2)
            .iter()
            .map(|d| a0.add(d))
            .collect();
        let offsets: Vec<Vector> = spec
            .inner_drift
            .displacements(horizon, d2)
            .iter()
            .map(|d| b0.add(d))
            .collect();

        let sigma = linalg::max_singular_value(&b_matrix);
        let radius = match spec.outer_set.norm_bound() {
            Some(r) => r,
            None => {
                if !(spec.reach_radius.is_finite() && spec.reach_radius > 0.0) {
                    return Err(Error::config("reach_radius must be positive"));
                }
                spec.reach_radius
            }
        };
        let max_gap = targets
            .iter()
            .zip(&offsets)
            .map(|(a, b)| b.distance(a))
            .fold(0.0, f64::max);
        let l_f0 = (sigma * radius + max_gap).max(1e-12);
        let meta = LipschitzMetadata::new(1.0, l_f0, 1.0, 1.0 + sigma * sigma, 0.0)?;

        Ok(QuadraticTracking {
            horizon,
            d1,
            d2,
            b_matrix,
            targets,
            offsets,
            set: spec.outer_set.clone(),
            meta,
            name: String::from("quadratic_tracking"),
        })
    }

    /// Static problem with explicit scalar or matrix data; convenient in tests.
    pub fn with_matrix(
        horizon: usize,
        rows: Vec<Vec<f64>>,
        a: Vector,
        b: Vector,
        outer_set: ConstraintSet,
    ) -> Result<Self> {
        let d2 = rows.len();
        let d1 = rows.first().map_or(0, |r| r.len());
        Self::new(
            horizon,
            &QuadraticTrackingSpec {
                d1,
                d2,
                matrix: MatrixSpec::Explicit { rows },
                a0: Some(a),
                b0: Some(b),
                outer_set,
                ..QuadraticTrackingSpec::default()
            },
        )
    }

    pub fn target(&self, t: usize) -> &Vector {
        &self.targets[t - 1]
    }

    pub fn offset(&self, t: usize) -> &Vector {
        &self.offsets[t - 1]
    }

    fn inner_residual(&self, t: usize, x: &Vector, y: &Vector) -> Vector {
        let mut r = y.sub(&linalg::matvec(&self.b_matrix, x));
        r.axpy(-1.0, self.offset(t));
        r
    }

    /// `sup_{x in X} |<w, x> + k|`, `None` when unbounded.
    fn sup_abs_affine(&self, w: &Vector, k: f64) -> Option<f64> {
        match &self.set {
            ConstraintSet::Free => (w.max_abs() == 0.0).then_some(k.abs()),
            ConstraintSet::Box { lower, upper } => {
                let mut mid = 0.0;
                let mut spread = 0.0;
                for ((wi, l), u) in w.iter().zip(lower.iter()).zip(upper.iter()) {
                    mid += wi * 0.5 * (l + u);
                    spread += wi.abs() * 0.5 * (u - l);
                }
                Some((mid + k).abs() + spread)
            }
            ConstraintSet::Ball { center, radius } => {
                Some((w.dot(center) + k).abs() + radius * w.norm())
            }
        }
    }
}

impl BilevelProblem for QuadraticTracking {
    fn name(&self) -> &str {
        &self.name
    }

    fn dims(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn outer_set(&self) -> &ConstraintSet {
        &self.set
    }

    fn metadata(&self) -> &LipschitzMetadata {
        &self.meta
    }

    fn f_value(&self, t: usize, _x: &Vector, y: &Vector) -> f64 {
        0.5 * y.sub(self.target(t)).norm_sq()
    }

    fn grad_f_x(&self, _t: usize, _x: &Vector, _y: &Vector) -> Vector {
        Vector::zeros(self.d1)
    }

    fn grad_f_y(&self, t: usize, _x: &Vector, y: &Vector) -> Vector {
        y.sub(self.target(t))
    }

    fn g_value(&self, t: usize, x: &Vector, y: &Vector) -> f64 {
        0.5 * self.inner_residual(t, x, y).norm_sq()
    }

    fn grad_g_x(&self, t: usize, x: &Vector, y: &Vector) -> Vector {
        linalg::tr_matvec(&self.b_matrix, &self.inner_residual(t, x, y)).scale(-1.0)
    }

    fn grad_g_y(&self, t: usize, x: &Vector, y: &Vector) -> Vector {
        self.inner_residual(t, x, y)
    }

    fn inner_argmin(&self, t: usize, x: &Vector) -> Option<Vector> {
        Some(linalg::matvec(&self.b_matrix, x).add(self.offset(t)))
    }

    fn hypergradient(&self, t: usize, x: &Vector) -> Option<Vector> {
        let y = self.inner_argmin(t, x)?;
        Some(linalg::tr_matvec(&self.b_matrix, &y.sub(self.target(t))))
    }

    fn variation_v(&self, horizon: usize) -> Option<f64> {
        // F_{t-1}(x) - F_t(x) = <B^T (c_{t-1} - c_t), x> + (|c_{t-1}|^2 - |c_t|^2) / 2,
        // c_t = b_t - a_t
        let horizon = horizon.min(self.horizon);
        let mut total = 0.0;
        for t in 2..=horizon {
            let prev = self.offset(t - 1).sub(self.target(t - 1));
            let cur = self.offset(t).sub(self.target(t));
            // equal drifts on a and b cancel up to roundoff
            if prev.distance(&cur) <= 1e-12 * (1.0 + prev.norm()) {
                continue;
            }
            let w = linalg::tr_matvec(&self.b_matrix, &prev.sub(&cur));
            let k = 0.5 * (prev.norm_sq() - cur.norm_sq());
            total += self.sup_abs_affine(&w, k)?;
        }
        Some(total)
    }

    fn variation_h2(&self, horizon: usize) -> Option<f64> {
        let horizon = horizon.min(self.horizon);
        Some(
            (2..=horizon)
                .map(|t| self.offset(t - 1).sub(self.offset(t)).norm_sq())
                .sum(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::fd_check;
    use alloc::vec;
    use rand::{Rng, SeedableRng};

    fn scalar(b: f64, a: f64, off: f64) -> QuadraticTracking {
        QuadraticTracking::with_matrix(
            4,
            vec![vec![b]],
            Vector::from([a]),
            Vector::from([off]),
            ConstraintSet::Free,
        )
        .unwrap()
    }

    #[test]
    fn scalar_hypergradient_by_hand() {
        // y* = 2 * 0.25 = 0.5, grad F = 2 * (0.5 - 1) = -1
        let p = scalar(2.0, 1.0, 0.0);
        let g = p.hypergradient(1, &Vector::from([0.25])).unwrap();
        assert!((g[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_minimizer_has_zero_hypergradient() {
        let p = QuadraticTracking::with_matrix(
            3,
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            Vector::zeros(2),
            Vector::zeros(2),
            ConstraintSet::Free,
        )
        .unwrap();
        assert_eq!(p.hypergradient(2, &Vector::zeros(2)).unwrap(), Vector::zeros(2));
    }

    #[test]
    fn static_spec_has_no_variation() {
        let p = QuadraticTracking::new(50, &QuadraticTrackingSpec::default()).unwrap();
        assert_eq!(p.variation_v(50), Some(0.0));
        assert_eq!(p.variation_h2(50), Some(0.0));
    }

    #[test]
    fn invalid_drift_rejected() {
        let spec = QuadraticTrackingSpec {
            inner_drift: DriftSpec::Sinusoidal { amplitude: 1.0, period: 0.0 },
            ..QuadraticTrackingSpec::default()
        };
        assert!(matches!(QuadraticTracking::new(10, &spec), Err(Error::Config(_))));
        let spec = QuadraticTrackingSpec {
            target_drift: DriftSpec::RandomWalk { step: -1.0, seed: 1 },
            ..QuadraticTrackingSpec::default()
        };
        assert!(matches!(QuadraticTracking::new(10, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn seeded_matrix_has_requested_singular_values() {
        for (d1, d2) in [(2, 3), (3, 2), (4, 4)] {
            let spec = QuadraticTrackingSpec {
                d1,
                d2,
                matrix: MatrixSpec::Seeded { seed: 9, scale: 1.5 },
                ..QuadraticTrackingSpec::default()
            };
            let p = QuadraticTracking::new(2, &spec).unwrap();
            let sv = p.b_matrix.singular_values();
            assert!(sv.iter().all(|s| (s - 1.5).abs() < 1e-12), "{sv:?}");
            assert!((p.metadata().l_g1 - (1.0 + 2.25)).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_inner_drift_variation() {
        let spec = QuadraticTrackingSpec {
            inner_drift: DriftSpec::Linear { rate: 0.1 },
            target_drift: DriftSpec::Linear { rate: 0.1 },
            ..QuadraticTrackingSpec::default()
        };
        let p = QuadraticTracking::new(11, &spec).unwrap();
        // |b_{t-1} - b_t|^2 = 0.01 per round; c_t constant so V_T = 0
        assert!((p.variation_h2(11).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(p.variation_v(11), Some(0.0));
        // unbounded outer set with moving c_t: no finite sup
        let spec = QuadraticTrackingSpec {
            target_drift: DriftSpec::Linear { rate: 0.1 },
            ..QuadraticTrackingSpec::default()
        };
        assert_eq!(QuadraticTracking::new(5, &spec).unwrap().variation_v(5), None);
    }

    #[test]
    fn bounded_set_variation_matches_grid_sup() {
        let spec = QuadraticTrackingSpec {
            d1: 1,
            d2: 1,
            matrix: MatrixSpec::Explicit { rows: vec![vec![2.0]] },
            target_drift: DriftSpec::Sinusoidal { amplitude: 0.5, period: 7.0 },
            outer_set: ConstraintSet::uniform_box(1, -1.0, 2.0).unwrap(),
            ..QuadraticTrackingSpec::default()
        };
        let p = QuadraticTracking::new(20, &spec).unwrap();
        let mut grid_total = 0.0;
        for t in 2..=20 {
            let mut best: f64 = 0.0;
            for i in 0..=3000 {
                let x = Vector::from([-1.0 + i as f64 * 0.001]);
                let f = |s: usize| {
                    let y = p.inner_argmin(s, &x).unwrap();
                    p.f_value(s, &x, &y)
                };
                best = best.max((f(t - 1) - f(t)).abs());
            }
            grid_total += best;
        }
        assert!((p.variation_v(20).unwrap() - grid_total).abs() < 1e-9);
    }

    #[test]
    fn strong_convexity_and_lipschitz_probes() {
        let spec = QuadraticTrackingSpec {
            d1: 3,
            d2: 2,
            matrix: MatrixSpec::Seeded { seed: 4, scale: 2.0 },
            inner_drift: DriftSpec::RandomWalk { step: 0.2, seed: 5 },
            ..QuadraticTrackingSpec::default()
        };
        let p = QuadraticTracking::new(30, &spec).unwrap();
        let meta = p.metadata().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let t = rng.gen_range(1..=30);
            let x = linalg::uniform_vector(&mut rng, 3);
            let x2 = linalg::uniform_vector(&mut rng, 3);
            let y1 = linalg::uniform_vector(&mut rng, 2).scale(5.0);
            let y2 = linalg::uniform_vector(&mut rng, 2).scale(5.0);
            let dg = p.grad_g_y(t, &x, &y1).sub(&p.grad_g_y(t, &x, &y2));
            let dy = y1.sub(&y2);
            assert!(dg.dot(&dy) >= (meta.mu_g - 1e-9) * dy.norm_sq());
            let ys = p.inner_argmin(t, &x).unwrap();
            let ys2 = p.inner_argmin(t, &x2).unwrap();
            assert!(ys.distance(&ys2) <= meta.kappa_g * x.distance(&x2) + 1e-9);
            assert!(p.grad_g_y(t, &x, &ys).norm() <= 1e-10);
            let report = fd_check(&p, t, &x, &y1, 1e-5).unwrap();
            assert!(report.max() <= 1e-6, "{report:?}");
        }
    }
}
