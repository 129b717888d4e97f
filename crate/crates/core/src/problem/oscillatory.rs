use alloc::string::String;

use crate::{ConstraintSet, Result, Vector};

use super::{check_positive, BilevelProblem, LipschitzMetadata};
use crate::Error;

/// One-dimensional problem whose inner solution flips sign every round:
///
/// ```text
/// f_t(x, y) = c exp(-y^2),   g_t(x, y) = mu_g / 2 (y - (-1)^t x)^2,   X = [-1, 1]
/// ```
///
/// `F_t(x) = c exp(-x^2)` for every `t`, so `V_T = 0`, while
/// `H_{2,T} = 4T - 4` grows linearly.
///
/// Constants: `L_f0 = c sqrt(2) e^{-1/2}` (max of `|f'|`), `L_f1 = 2c` (curvature
/// at `y = 0`), `L_g1 = 2 mu_g` (joint Hessian of `g_t` has eigenvalues `0, 2 mu_g`).
#[derive(Clone, Debug)]
pub struct OscillatoryDrift {
    horizon: usize,
    c: f64,
    mu_g: f64,
    set: ConstraintSet,
    meta: LipschitzMetadata,
    name: String,
}

impl OscillatoryDrift {
    pub fn new(horizon: usize, c: f64, mu_g: f64) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::precondition("oscillatory problem needs T >= 2"));
        }
        check_positive("c", c)?;
        check_positive("mu_g", mu_g)?;
        let l_f0 = c * core::f64::consts::SQRT_2 * libm::exp(-0.5);
        let meta = LipschitzMetadata::new(mu_g, l_f0, 2.0 * c, 2.0 * mu_g, 0.0)?;
        Ok(OscillatoryDrift {
            horizon,
            c,
            mu_g,
            set: ConstraintSet::uniform_box(1, -1.0, 1.0)?,
            meta,
            name: String::from("oscillatory"),
        })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    fn sign(t: usize) -> f64 {
        if t % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn residual(&self, t: usize, x: &Vector, y: &Vector) -> f64 {
        y[0] - Self::sign(t) * x[0]
    }
}

impl BilevelProblem for OscillatoryDrift {
    fn name(&self) -> &str {
        &self.name
    }

    fn dims(&self) -> (usize, usize) {
        (1, 1)
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

    fn f_value(&self, _t: usize, _x: &Vector, y: &Vector) -> f64 {
        self.c * libm::exp(-y[0] * y[0])
    }

    fn grad_f_x(&self, _t: usize, _x: &Vector, _y: &Vector) -> Vector {
        Vector::zeros(1)
    }

    fn grad_f_y(&self, _t: usize, _x: &Vector, y: &Vector) -> Vector {
        let y = y[0];
        Vector::from([-2.0 * self.c * y * libm::exp(-y * y)])
    }

    fn g_value(&self, t: usize, x: &Vector, y: &Vector) -> f64 {
        let r = self.residual(t, x, y);
        0.5 * self.mu_g * r * r
    }

    fn grad_g_x(&self, t: usize, x: &Vector, y: &Vector) -> Vector {
        Vector::from([-self.mu_g * Self::sign(t) * self.residual(t, x, y)])
    }

    fn grad_g_y(&self, t: usize, x: &Vector, y: &Vector) -> Vector {
        Vector::from([self.mu_g * self.residual(t, x, y)])
    }

    fn inner_argmin(&self, t: usize, x: &Vector) -> Option<Vector> {
        Some(Vector::from([Self::sign(t) * x[0]]))
    }

    fn hypergradient(&self, _t: usize, x: &Vector) -> Option<Vector> {
        let x = x[0];
        Some(Vector::from([-2.0 * self.c * x * libm::exp(-x * x)]))
    }

    fn variation_v(&self, _horizon: usize) -> Option<f64> {
        Some(0.0)
    }

    fn variation_h2(&self, horizon: usize) -> Option<f64> {
        // sup over [-1, 1] of |2x|^2 is 4, attained at the endpoints
        Some(4.0 * horizon.saturating_sub(1) as f64)
    }

    fn default_start(&self) -> Vector {
        // x = 0 is a stationary point of F; start away from it
        Vector::from([0.5])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::fd_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem() -> OscillatoryDrift {
        OscillatoryDrift::new(16, 1.0, 1.0).unwrap()
    }

    #[test]
    fn inner_argmin_follows_sign() {
        let p = problem();
        assert_eq!(p.inner_argmin(4, &Vector::from([0.5])).unwrap()[0], 0.5);
        assert_eq!(p.inner_argmin(3, &Vector::from([0.5])).unwrap()[0], -0.5);
    }

    #[test]
    fn hypergradient_vanishes_at_origin() {
        let p = problem();
        for t in 1..=4 {
            assert_eq!(p.hypergradient(t, &Vector::zeros(1)).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn closed_form_variations() {
        let p = OscillatoryDrift::new(3, 1.0, 1.0).unwrap();
        assert_eq!(p.variation_h2(3), Some(8.0));
        assert_eq!(p.variation_v(3), Some(0.0));
        assert_eq!(p.variation_h2(1000), Some(3996.0));
    }

    #[test]
    fn preconditions() {
        assert!(OscillatoryDrift::new(1, 1.0, 1.0).is_err());
        assert!(OscillatoryDrift::new(4, 0.0, 1.0).is_err());
        assert!(OscillatoryDrift::new(4, 1.0, -1.0).is_err());
    }

    #[test]
    fn outer_value_is_time_invariant() {
        let p = OscillatoryDrift::new(64, 1.7, 0.8).unwrap();
        for i in 0..=20 {
            let x = Vector::from([-1.0 + 0.1 * i as f64]);
            let expected = 1.7 * libm::exp(-x[0] * x[0]);
            for t in 1..=64 {
                let y = p.inner_argmin(t, &x).unwrap();
                assert!((p.f_value(t, &x, &y) - expected).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = problem();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let t = rng.gen_range(1..=16);
            let x = Vector::from([rng.gen_range(-0.9..0.9)]);
            let y = Vector::from([rng.gen_range(-2.0..2.0)]);
            let report = fd_check(&p, t, &x, &y, 1e-5).unwrap();
            assert!(report.max() <= 1e-4, "{report:?}");
        }
    }

    #[test]
    fn inner_gradient_vanishes_at_argmin() {
        let p = problem();
        for t in 1..=5 {
            let x = Vector::from([0.3]);
            let y = p.inner_argmin(t, &x).unwrap();
            assert!(p.grad_g_y(t, &x, &y).norm() <= 1e-10);
        }
    }
}
