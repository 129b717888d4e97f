use alloc::format;
use alloc::string::String;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BilevelProblem, LipschitzMetadata};
use crate::linalg;
use crate::{ConstraintSet, Error, Result, Vector};

/// Parameters of [`DriftingRidge`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftingRidgeSpec {
    pub d1: usize,
    pub d2: usize,
    /// Training rows; `0` means `4 * d2`.
    pub n_train: usize,
    /// Validation rows; `0` means `2 * d2`.
    pub n_val: usize,
    /// Lower bound of every regularization weight.
    pub reg_floor: f64,
    pub reg_ceiling: f64,
    /// Rotation angle added per round, in radians.
    pub rotation_rate: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for DriftingRidgeSpec {
    fn default() -> Self {
        DriftingRidgeSpec {
            d1: 2,
            d2: 4,
            n_train: 0,
            n_val: 0,
            reg_floor: 0.1,
            reg_ceiling: 10.0,
            rotation_rate: 0.01,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// Hyperparameter-tuning flavored problem on seeded synthetic data.
///
/// With `R_t` a rotation of `y`-space by angle `rotation_rate * t` in the
/// coordinate planes `(0, 1), (2, 3), ...`:
///
/// ```text
/// g_t(x, y) = |A R_t y - b|^2 / (2 n) + sum_j x_{j mod d1} y_j^2 / 2
/// f_t(x, y) = |V R_t y - c|^2 / (2 m)
/// ```
///
/// `x` holds per-group regularization weights in `[reg_floor, reg_ceiling]`.
/// `mu_g = reg_floor + lambda_min(A^T A / n)`. `g_t` is not jointly smooth on all
/// of `R^{d2}` (the mixed term is `y_j`), so `L_g1` and the `f` constants are
/// bounds over `|y| <= 2 Y` with `Y = |A^T b| / (n mu_g)` bounding `|y_t*(x)|`.
/// No closed-form hypergradient is provided.
#[derive(Clone, Debug)]
pub struct DriftingRidge {
    horizon: usize,
    d1: usize,
    d2: usize,
    a: DMatrix<f64>,
    b: Vector,
    v: DMatrix<f64>,
    c: Vector,
    rotation_rate: f64,
    set: ConstraintSet,
    meta: LipschitzMetadata,
    name: String,
}

impl DriftingRidge {
    pub fn new(horizon: usize, spec: &DriftingRidgeSpec) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::precondition("horizon must be positive"));
        }
        let (d1, d2) = (spec.d1, spec.d2);
        if d1 == 0 || d1 > d2 {
            return Err(Error::precondition(format!("need 1 <= d1 <= d2, got d1={d1}, d2={d2}")));
        }
        if !(spec.reg_floor.is_finite() && spec.reg_floor > 0.0) {
            return Err(Error::config(
                "regularization box must exclude zero (reg_floor > 0) to keep g_t strongly convex",
            ));
        }
        if !(spec.reg_ceiling.is_finite() && spec.reg_ceiling >= spec.reg_floor) {
            return Err(Error::config("reg_ceiling must be finite and >= reg_floor"));
        }
        if !spec.rotation_rate.is_finite() || !(spec.noise.is_finite() && spec.noise >= 0.0) {
            return Err(Error::config("rotation_rate and noise must be finite, noise >= 0"));
        }
        let n = if spec.n_train == 0 { 4 * d2 } else { spec.n_train };
        let m = if spec.n_val == 0 { 2 * d2 } else { spec.n_val };

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let truth = linalg::uniform_vector(&mut rng, d2);
        let a = linalg::uniform_matrix(&mut rng, n, d2);
        let v = linalg::uniform_matrix(&mut rng, m, d2);
        let mut b = linalg::matvec(&a, &truth);
        b.axpy(spec.noise, &linalg::uniform_vector(&mut rng, n));
        let mut c = linalg::matvec(&v, &truth);
        c.axpy(spec.noise, &linalg::uniform_vector(&mut rng, m));

        let (a_min, a_max) = linalg::gram_extremes(&a);
        let (_, v_max) = linalg::gram_extremes(&v);
        let mu_g = spec.reg_floor + a_min;
        let y_bound = linalg::tr_matvec(&a, &b).norm() / (n as f64 * mu_g);
        let reach = 2.0 * y_bound;
        let l_g1 = a_max + spec.reg_ceiling + reach;
        let l_f1 = v_max;
        let l_f0 = v_max * reach + linalg::tr_matvec(&v, &c).norm() / m as f64;
        let meta = LipschitzMetadata::new(mu_g, l_f0, l_f1, l_g1, 1.0)?;

        Ok(DriftingRidge {
            horizon,
            d1,
            d2,
            a,
            b,
            v,
            c,
            rotation_rate: spec.rotation_rate,
            set: ConstraintSet::uniform_box(d1, spec.reg_floor, spec.reg_ceiling)?,
            meta,
            name: String::from("drifting_ridge"),
        })
    }

    fn rotate(&self, t: usize, y: &Vector, inverse: bool) -> Vector {
        let angle = self.rotation_rate * t as f64;
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        let s = if inverse { -s } else { s };
        let mut out = y.clone();
        for pair in (0..self.d2 - self.d2 % 2).step_by(2) {
            let (u, w) = (y[pair], y[pair + 1]);
            out[pair] = c * u - s * w;
            out[pair + 1] = s * u + c * w;
        }
        out
    }

    fn weight(&self, x: &Vector, j: usize) -> f64 {
        x[j % self.d1]
    }

    fn train_residual(&self, t: usize, y: &Vector) -> Vector {
        linalg::matvec(&self.a, &self.rotate(t, y, false)).sub(&self.b)
    }

    fn val_residual(&self, t: usize, y: &Vector) -> Vector {
        linalg::matvec(&self.v, &self.rotate(t, y, false)).sub(&self.c)
    }
}

impl BilevelProblem for DriftingRidge {
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
        0.5 * self.val_residual(t, y).norm_sq() / self.v.nrows() as f64
    }

    fn grad_f_x(&self, _t: usize, _x: &Vector, _y: &Vector) -> Vector {
        Vector::zeros(self.d1)
    }

    fn grad_f_y(&self, t: usize, _x: &Vector, y: &Vector) -> Vector {
        let back = linalg::tr_matvec(&self.v, &self.val_residual(t, y));
        self.rotate(t, &back, true).scale(1.0 / self.v.nrows() as f64)
    }

    fn g_value(&self, t: usize, x: &Vector, y: &Vector) -> f64 {
        let fit = 0.5 * self.train_residual(t, y).norm_sq() / self.a.nrows() as f64;
        let reg: f64 = (0..self.d2).map(|j| self.weight(x, j) * y[j] * y[j]).sum();
        fit + 0.5 * reg
    }

    fn grad_g_x(&self, _t: usize, _x: &Vector, y: &Vector) -> Vector {
        let mut out = Vector::zeros(self.d1);
        for j in 0..self.d2 {
            out[j % self.d1] += 0.5 * y[j] * y[j];
        }
        out
    }

    fn grad_g_y(&self, t: usize, x: &Vector, y: &Vector) -> Vector {
        let back = linalg::tr_matvec(&self.a, &self.train_residual(t, y));
        let mut out = self.rotate(t, &back, true).scale(1.0 / self.a.nrows() as f64);
        for j in 0..self.d2 {
            out[j] += self.weight(x, j) * y[j];
        }
        out
    }

    fn default_start(&self) -> Vector {
        self.set
            .project(&Vector::filled(self.d1, 1.0))
            .unwrap_or_else(|_| Vector::filled(self.d1, 1.0))
    }
}
