//! Outer constraint sets, Euclidean projection and the gradient mapping.
//!
//! Only sets whose proximal step has a closed form are supported, so the prox
//! subproblem `argmin_u <g, u> + |u - x|^2 / (2 gamma)` reduces to
//! `project(x - gamma * g)`.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vector};

/// Slack allowed when testing `x in X`, absorbing roundoff from repeated projections.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

/// Closed convex set over the outer variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ConstraintSet {
    Free,
    Box { lower: Vector, upper: Vector },
    Ball { center: Vector, radius: f64 },
}

impl ConstraintSet {
    pub fn boxed(lower: Vector, upper: Vector) -> Result<Self> {
        let set = ConstraintSet::Box { lower, upper };
        set.validate()?;
        Ok(set)
    }

    /// The box `[lower, upper]^dim`.
    pub fn uniform_box(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::boxed(Vector::filled(dim, lower), Vector::filled(dim, upper))
    }

    pub fn ball(center: Vector, radius: f64) -> Result<Self> {
        let set = ConstraintSet::Ball { center, radius };
        set.validate()?;
        Ok(set)
    }

    /// Checks the structural invariants; needed after deserialization.
    pub fn validate(&self) -> Result<()> {
        match self {
            ConstraintSet::Free => Ok(()),
            ConstraintSet::Box { lower, upper } => {
                if lower.dim() != upper.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: lower.dim(),
                        found: upper.dim(),
                    });
                }
                if !lower.is_finite() || !upper.is_finite() {
                    return Err(Error::config("box bounds must be finite"));
                }
                if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
                    return Err(Error::config("box requires lower <= upper componentwise"));
                }
                Ok(())
            }
            ConstraintSet::Ball { center, radius } => {
                if !center.is_finite() {
                    return Err(Error::config("ball center must be finite"));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::config(format!("ball radius must be positive, got {radius}")));
                }
                Ok(())
            }
        }
    }

    /// Dimension fixed by the set, `None` for the free set.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ConstraintSet::Free => None,
            ConstraintSet::Box { lower, .. } => Some(lower.dim()),
            ConstraintSet::Ball { center, .. } => Some(center.dim()),
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, ConstraintSet::Free)
    }

    /// `sup_{x in X} |x|`, `None` when unbounded.
    pub fn norm_bound(&self) -> Option<f64> {
        match self {
            ConstraintSet::Free => None,
            ConstraintSet::Box { lower, upper } => Some(libm::sqrt(
                lower
                    .iter()
                    .zip(upper.iter())
                    .map(|(l, u)| {
                        let m = l.abs().max(u.abs());
                        m * m
                    })
                    .sum(),
            )),
            ConstraintSet::Ball { center, radius } => Some(center.norm() + radius),
        }
    }

    pub fn check_dim(&self, v: &Vector) -> Result<()> {
        match self.dim() {
            Some(d) if d != v.dim() => Err(Error::DimensionMismatch {
                expected: d,
                found: v.dim(),
            }),
            _ => Ok(()),
        }
    }

    /// Membership within [`MEMBERSHIP_TOL`].
    pub fn contains(&self, x: &Vector) -> bool {
        if self.check_dim(x).is_err() || !x.is_finite() {
            return false;
        }
        match self {
            ConstraintSet::Free => true,
            ConstraintSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .all(|(v, (l, u))| *v >= l - MEMBERSHIP_TOL && *v <= u + MEMBERSHIP_TOL),
            ConstraintSet::Ball { center, radius } => {
                x.distance(center) <= radius + MEMBERSHIP_TOL
            }
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, v: &Vector) -> Result<Vector> {
        self.check_dim(v)?;
        Ok(match self {
            ConstraintSet::Free => v.clone(),
            ConstraintSet::Box { lower, upper } => v
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .map(|(x, (l, u))| x.clamp(*l, *u))
                .collect(),
            ConstraintSet::Ball { center, radius } => {
                let offset = v.sub(center);
                let dist = offset.norm();
                // points on or inside the sphere are returned untouched
                if dist <= *radius {
                    v.clone()
                } else {
                    let mut out = center.clone();
                    out.axpy(radius / dist, &offset);
                    out
                }
            }
        })
    }
}

/// Prox point and gradient mapping `(x - x_plus) / gamma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientMappingResult {
    pub x_plus: Vector,
    pub mapping: Vector,
    pub mapping_norm_sq: f64,
}

/// Gradient mapping of `g` at `x` with step `gamma` over `set`.
pub fn gradient_mapping(
    set: &ConstraintSet,
    x: &Vector,
    g: &Vector,
    gamma: f64,
) -> Result<GradientMappingResult> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::config(format!("step gamma must be positive, got {gamma}")));
    }
    if x.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: g.dim(),
        });
    }
    if !g.is_finite() {
        return Err(Error::precondition("gradient has non-finite entries"));
    }
    if !set.contains(x) {
        return Err(Error::precondition("x lies outside the constraint set"));
    }
    let mut step = x.clone();
    step.axpy(-gamma, g);
    let x_plus = set.project(&step)?;
    let mapping = match set {
        // closed form; avoids the cancellation in (x - (x - gamma g)) / gamma
        ConstraintSet::Free => g.clone(),
        _ => x.sub(&x_plus).scale(1.0 / gamma),
    };
    let mapping_norm_sq = mapping.norm_sq();
    Ok(GradientMappingResult {
        x_plus,
        mapping,
        mapping_norm_sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn unit_box(d: usize) -> ConstraintSet {
        ConstraintSet::uniform_box(d, -1.0, 1.0).unwrap()
    }

    #[test]
    fn box_clamps_componentwise() {
        let p = unit_box(2).project(&Vector::from([1.5, -0.3])).unwrap();
        assert_eq!(p, Vector::from([1.0, -0.3]));
    }

    #[test]
    fn ball_scales_radially() {
        let set = ConstraintSet::ball(Vector::zeros(2), 2.0).unwrap();
        let p = set.project(&Vector::from([3.0, 4.0])).unwrap();
        assert!((p[0] - 1.2).abs() < 1e-15 && (p[1] - 1.6).abs() < 1e-15);
    }

    #[test]
    fn free_is_identity() {
        let v = Vector::from([7.0, -7.0]);
        assert_eq!(ConstraintSet::Free.project(&v).unwrap(), v);
    }

    #[test]
    fn ball_boundary_point_unchanged() {
        let set = ConstraintSet::ball(Vector::zeros(2), 5.0).unwrap();
        let v = Vector::from([3.0, 4.0]);
        assert_eq!(set.project(&v).unwrap(), v);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = unit_box(2).project(&Vector::zeros(3)).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 2, found: 3 });
    }

    #[test]
    fn invalid_sets_rejected() {
        assert!(ConstraintSet::boxed(Vector::from([1.0]), Vector::from([0.0])).is_err());
        assert!(ConstraintSet::ball(Vector::zeros(1), 0.0).is_err());
        assert!(ConstraintSet::ball(Vector::zeros(1), -1.0).is_err());
    }

    #[test]
    fn mapping_on_free_set_is_gradient() {
        let r = gradient_mapping(&ConstraintSet::Free, &Vector::from([0.4]), &Vector::from([3.0]), 0.1)
            .unwrap();
        assert!((r.mapping[0] - 3.0).abs() < 1e-14);
        assert!((r.mapping_norm_sq - 9.0).abs() < 1e-12);
    }

    #[test]
    fn interior_step_not_clamped() {
        let r = gradient_mapping(&unit_box(1), &Vector::from([0.9]), &Vector::from([2.0]), 0.1).unwrap();
        assert!((r.x_plus[0] - 0.7).abs() < 1e-15);
        assert!((r.mapping[0] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn boundary_step_clipped() {
        let r = gradient_mapping(&unit_box(1), &Vector::from([1.0]), &Vector::from([-5.0]), 0.1).unwrap();
        assert_eq!(r.x_plus[0], 1.0);
        assert_eq!(r.mapping[0], 0.0);
        assert_eq!(r.mapping_norm_sq, 0.0);
    }

    #[test]
    fn mapping_preconditions() {
        let set = unit_box(1);
        let g = Vector::from([1.0]);
        assert!(matches!(
            gradient_mapping(&set, &Vector::from([2.0]), &g, 0.1),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            gradient_mapping(&set, &Vector::from([0.0]), &g, 0.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            gradient_mapping(&set, &Vector::from([0.0]), &g, -1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_mapping_iff_fixed_point() {
        let set = unit_box(2);
        // corner with gradient pointing outward in both coordinates
        let x = Vector::from([1.0, -1.0]);
        let r = gradient_mapping(&set, &x, &Vector::from([-2.0, 3.0]), 0.5).unwrap();
        assert_eq!(r.mapping_norm_sq, 0.0);
        assert_eq!(r.x_plus, x);
        // one coordinate pointing inward breaks stationarity
        let r = gradient_mapping(&set, &x, &Vector::from([2.0, 3.0]), 0.5).unwrap();
        assert!(r.mapping_norm_sq > 0.0);
        assert_ne!(r.x_plus, x);
        // ball boundary with radial outward gradient
        let ball = ConstraintSet::ball(Vector::zeros(2), 1.0).unwrap();
        let x = Vector::from([0.6, 0.8]);
        let r = gradient_mapping(&ball, &x, &Vector::from([-0.6, -0.8]), 0.3).unwrap();
        assert!(r.mapping_norm_sq < 1e-24);
    }

    fn arb_set(d: usize) -> impl Strategy<Value = ConstraintSet> {
        prop_oneof![
            Just(ConstraintSet::Free),
            (
                proptest::collection::vec(-5.0..5.0f64, d),
                proptest::collection::vec(0.0..4.0f64, d)
            )
                .prop_map(|(lo, w)| {
                    let up: Vec<f64> = lo.iter().zip(&w).map(|(l, w)| l + w).collect();
                    ConstraintSet::boxed(lo.into(), up.into()).unwrap()
                }),
            (proptest::collection::vec(-5.0..5.0f64, d), 0.01..5.0f64)
                .prop_map(|(c, r)| ConstraintSet::ball(c.into(), r).unwrap()),
        ]
    }

    fn arb_vec(d: usize) -> impl Strategy<Value = Vector> {
        proptest::collection::vec(-20.0..20.0f64, d).prop_map(Vector::from)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn projection_is_idempotent(set in arb_set(3), v in arb_vec(3)) {
            let p = set.project(&v).unwrap();
            let pp = set.project(&p).unwrap();
            prop_assert!(p.distance(&pp) <= 1e-12);
            prop_assert!(set.contains(&p));
        }

        #[test]
        fn projection_is_nonexpansive(set in arb_set(3), a in arb_vec(3), b in arb_vec(3)) {
            let pa = set.project(&a).unwrap();
            let pb = set.project(&b).unwrap();
            prop_assert!(pa.distance(&pb) <= a.distance(&b) + 1e-12);
        }

        #[test]
        fn free_mapping_reproduces_gradient(x in arb_vec(4), g in arb_vec(4), gamma in 1e-3..1.0f64) {
            let r = gradient_mapping(&ConstraintSet::Free, &x, &g, gamma).unwrap();
            for (m, gi) in r.mapping.iter().zip(g.iter()) {
                prop_assert!((m - gi).abs() <= 1e-15 * gi.abs());
            }
            let recomputed = x.sub(&r.x_plus).scale(1.0 / gamma);
            prop_assert!(recomputed.distance(&r.mapping) <= 1e-9 * (1.0 + x.norm() / gamma));
        }

        #[test]
        fn mapping_zero_iff_projection_fixed(set in arb_set(2), v in arb_vec(2), g in arb_vec(2), gamma in 1e-2..1.0f64) {
            let x = set.project(&v).unwrap();
            let r = gradient_mapping(&set, &x, &g, gamma).unwrap();
            prop_assert_eq!(r.mapping_norm_sq == 0.0, r.x_plus == x);
        }
    }
}
