//! Coulomb interaction kernels.
//!
//! The plasma-charge coupling uses a uniformly-charged-sphere regularization of
//! radius `epsilon_charge`: outside the sphere the force is the bare Coulomb
//! force, computed by the same expression so the two agree bit for bit; inside
//! it is linear in `r`. The potential is the matching C¹ spline, so the
//! regularized system keeps a conserved energy.
//!
//! Plasma-plasma interactions use Plummer softening with a separate length
//! `epsilon_plasma`. Charge-charge interactions always use the bare kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    /// Bare Coulomb kernel for the plasma-charge coupling. Reference computations only.
    Exact,
    Regularized,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub epsilon_charge: f64,
    pub epsilon_plasma: f64,
    pub mode: KernelMode,
}

impl KernelSpec {
    pub fn regularized(epsilon_charge: f64, epsilon_plasma: f64) -> Result<Self> {
        let spec = KernelSpec {
            epsilon_charge,
            epsilon_plasma,
            mode: KernelMode::Regularized,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == KernelMode::Regularized
            && !(self.epsilon_charge > 0.0 && self.epsilon_charge.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "epsilon_charge must be > 0 in regularized mode, got {}",
                self.epsilon_charge
            )));
        }
        if !(self.epsilon_plasma >= 0.0 && self.epsilon_plasma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon_plasma must be >= 0, got {}",
                self.epsilon_plasma
            )));
        }
        Ok(())
    }

    /// Force exerted by a unit charge at the origin on a unit charge at `r`, per `mode`.
    #[inline]
    pub fn charge_force(&self, r: Vec3) -> Vec3 {
        match self.mode {
            KernelMode::Regularized => regularized_charge_force(r, self),
            KernelMode::Exact => coulomb_kernel(r),
        }
    }

    #[inline]
    pub fn charge_potential(&self, r: Vec3) -> f64 {
        match self.mode {
            KernelMode::Regularized => regularized_charge_potential(r, self),
            KernelMode::Exact => 1.0 / r.norm(),
        }
    }
}

/// `r / |r|^3`, without a zero check. Every exterior evaluation goes through here.
#[inline(always)]
fn coulomb_kernel(r: Vec3) -> Vec3 {
    let r2 = r.norm_squared();
    let inv_r3 = 1.0 / (r2 * r2.sqrt());
    r * inv_r3
}

/// Repulsive Coulomb force `r / |r|^3`.
pub fn coulomb_force(r: Vec3) -> Result<Vec3> {
    if r.norm_squared() == 0.0 {
        return Err(Error::Domain("Coulomb force at zero separation".into()));
    }
    Ok(coulomb_kernel(r))
}

/// Sphere-regularized Coulomb force: exact outside `epsilon_charge`, `r / eps^3` inside.
#[inline]
pub fn regularized_charge_force(r: Vec3, spec: &KernelSpec) -> Vec3 {
    let eps = spec.epsilon_charge;
    if r.norm() >= eps {
        coulomb_kernel(r)
    } else {
        r * (1.0 / (eps * eps * eps))
    }
}

/// Potential whose negative gradient is [`regularized_charge_force`].
#[inline]
pub fn regularized_charge_potential(r: Vec3, spec: &KernelSpec) -> f64 {
    let eps = spec.epsilon_charge;
    let d = r.norm();
    if d >= eps {
        1.0 / d
    } else {
        (3.0 * eps * eps - d * d) / (2.0 * eps * eps * eps)
    }
}

/// Plummer-softened plasma force `r / (|r|^2 + eps_p^2)^(3/2)`.
pub fn softened_plasma_force(r: Vec3, spec: &KernelSpec) -> Result<Vec3> {
    let s2 = r.norm_squared() + spec.epsilon_plasma * spec.epsilon_plasma;
    if s2 == 0.0 {
        return Err(Error::Domain(
            "unsoftened plasma force at zero separation".into(),
        ));
    }
    Ok(r * (1.0 / (s2 * s2.sqrt())))
}

/// Plummer-softened plasma potential `1 / sqrt(|r|^2 + eps_p^2)`.
pub fn softened_plasma_potential(r: Vec3, spec: &KernelSpec) -> Result<f64> {
    let s2 = r.norm_squared() + spec.epsilon_plasma * spec.epsilon_plasma;
    if s2 == 0.0 {
        return Err(Error::Domain(
            "unsoftened plasma potential at zero separation".into(),
        ));
    }
    Ok(1.0 / s2.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(eps: f64, eps_p: f64) -> KernelSpec {
        KernelSpec::regularized(eps, eps_p).unwrap()
    }

    #[test]
    fn coulomb_examples() {
        assert_eq!(coulomb_force(Vec3::new(1.0, 0.0, 0.0)).unwrap(), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(coulomb_force(Vec3::new(2.0, 0.0, 0.0)).unwrap(), Vec3::new(0.25, 0.0, 0.0));
        assert_eq!(coulomb_force(Vec3::new(0.0, 0.0, 0.5)).unwrap(), Vec3::new(0.0, 0.0, 4.0));
        assert!(matches!(coulomb_force(Vec3::ZERO), Err(Error::Domain(_))));
    }

    #[test]
    fn regularized_force_examples() {
        let s = spec(0.1, 0.0);
        assert_eq!(
            regularized_charge_force(Vec3::new(1.0, 0.0, 0.0), &s),
            Vec3::new(1.0, 0.0, 0.0)
        );
        // at |r| = eps both branch formulas give 1/eps^2 = 100
        let r = Vec3::new(0.1, 0.0, 0.0);
        let outer = regularized_charge_force(r, &s);
        let inner = r * (1.0 / (0.1f64 * 0.1 * 0.1));
        assert_relative_eq!(outer.x, 100.0, max_relative = 1e-12);
        assert_relative_eq!(inner.x, 100.0, max_relative = 1e-12);
        let f = regularized_charge_force(Vec3::new(0.05, 0.0, 0.0), &s);
        assert_relative_eq!(f.x, 50.0, max_relative = 1e-12);
        assert_eq!((f.y, f.z), (0.0, 0.0));
    }

    #[test]
    fn regularized_potential_examples() {
        let s = spec(0.1, 0.0);
        assert_eq!(regularized_charge_potential(Vec3::new(1.0, 0.0, 0.0), &s), 1.0);
        let at_eps = regularized_charge_potential(Vec3::new(0.1, 0.0, 0.0), &s);
        assert_relative_eq!(at_eps, 10.0, max_relative = 1e-12);
        let interior_formula = (3.0 * 0.01 - 0.01) / (2.0 * 0.001);
        assert_relative_eq!(interior_formula, 10.0, max_relative = 1e-12);
    }

    #[test]
    fn potential_gradient_matches_force() {
        let s = spec(0.1, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for i in 0..20 {
            // half the points inside the core
            let scale = if i % 2 == 0 { 0.09 } else { 1.5 };
            let r = loop {
                let r = Vec3::new(
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                );
                let n = r.norm();
                if n > 1e-3 && (n - 0.1).abs() > 1e-4 {
                    break r;
                }
            };
            let f = regularized_charge_force(r, &s);
            for axis in 0..3 {
                let mut e = [0.0; 3];
                e[axis] = h;
                let e = Vec3::from(e);
                let grad = (regularized_charge_potential(r + e, &s)
                    - regularized_charge_potential(r - e, &s))
                    / (2.0 * h);
                assert!(
                    (-grad - f[axis]).abs() <= 1e-6 * f.norm(),
                    "axis {axis} at {r:?}: -grad {} vs force {}",
                    -grad,
                    f[axis]
                );
            }
        }
    }

    #[test]
    fn softened_examples() {
        let s0 = spec(0.1, 0.0);
        assert_eq!(
            softened_plasma_force(Vec3::new(1.0, 0.0, 0.0), &s0).unwrap(),
            Vec3::new(1.0, 0.0, 0.0)
        );
        assert!(softened_plasma_force(Vec3::ZERO, &s0).is_err());
        let s1 = spec(0.1, 1.0);
        assert_eq!(softened_plasma_force(Vec3::ZERO, &s1).unwrap(), Vec3::ZERO);
        let f = softened_plasma_force(Vec3::new(1.0, 0.0, 0.0), &s1).unwrap();
        assert_relative_eq!(f.x, 2f64.powf(-1.5), max_relative = 1e-15);
        assert_relative_eq!(f.x, 0.35355, max_relative = 1e-5);
    }

    #[test]
    fn spec_validation() {
        assert!(KernelSpec::regularized(0.0, 0.0).is_err());
        assert!(KernelSpec::regularized(0.1, -1.0).is_err());
        let exact = KernelSpec {
            epsilon_charge: 0.0,
            epsilon_plasma: 0.0,
            mode: KernelMode::Exact,
        };
        assert!(exact.validate().is_ok());
        assert_eq!(exact.charge_force(Vec3::new(0.5, 0.0, 0.0)).x, 4.0);
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        proptest::array::uniform3(-3.0f64..3.0).prop_map(Vec3::from)
    }

    proptest! {
        #[test]
        fn kernels_are_odd(r in vec3(), eps in 0.01f64..1.0, eps_p in 0.0f64..0.5) {
            prop_assume!(r.norm() > 1e-9);
            let s = spec(eps, eps_p);
            prop_assert_eq!(regularized_charge_force(-r, &s), -regularized_charge_force(r, &s));
            prop_assert_eq!(coulomb_force(-r).unwrap(), -coulomb_force(r).unwrap());
            prop_assert_eq!(softened_plasma_force(-r, &s).unwrap(), -softened_plasma_force(r, &s).unwrap());
        }

        #[test]
        fn exterior_is_bitwise_coulomb(r in vec3(), eps in 0.01f64..1.0) {
            prop_assume!(r.norm() >= eps);
            prop_assert_eq!(regularized_charge_force(r, &spec(eps, 0.0)), coulomb_force(r).unwrap());
        }

        #[test]
        fn force_magnitude_is_unimodal(a in 1e-4f64..3.0, b in 1e-4f64..3.0, eps in 0.01f64..1.0) {
            let s = spec(eps, 0.0);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let f = |d: f64| regularized_charge_force(Vec3::new(d, 0.0, 0.0), &s).norm();
            if hi <= eps {
                prop_assert!(f(lo) <= f(hi));
            }
            if lo >= eps {
                prop_assert!(f(lo) >= f(hi));
            }
        }
    }
}
