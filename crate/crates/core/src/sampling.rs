//! Initial data: equal-weight macroparticles drawn from a compactly supported density
//! with a vacuum ball of radius `delta_0` around every charge.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diagnostics::compute_q;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::phase::{ChargeState, Macroparticle, PlasmaEnsemble, SimState};
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum SpatialShape {
    Ball { center: Vec3, radius: f64 },
    Shell { center: Vec3, inner: f64, outer: f64 },
    Box { lo: Vec3, hi: Vec3 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "velocity", rename_all = "snake_case")]
pub enum VelocityShape {
    UniformBall { v_max: f64 },
    /// Isotropic Gaussian of standard deviation `sigma` per component, cut at `|v| = v_max`.
    TruncatedMaxwellian { sigma: f64, v_max: f64 },
}

impl VelocityShape {
    pub fn v_max(&self) -> f64 {
        match *self {
            VelocityShape::UniformBall { v_max } | VelocityShape::TruncatedMaxwellian { v_max, .. } => v_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub spatial: SpatialShape,
    pub velocity: VelocityShape,
    pub particle_count: usize,
    /// `delta_0`
    pub vacuum_radius: f64,
    pub charges: Vec<ChargeState>,
    pub seed: u64,
}

/// Rejection sampling gives up below this acceptance rate.
pub const MIN_ACCEPTANCE: f64 = 1e-3;
const ACCEPTANCE_PROBE: u64 = 10_000;

impl InitialCondition {
    /// Checks the invariants, including `delta_0 > eps` for the kernel about to be used.
    pub fn validate(&self, epsilon_charge: f64) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match self.spatial {
            SpatialShape::Ball { center, radius } => {
                if !(radius > 0.0 && radius.is_finite() && center.is_finite()) {
                    return bad(format!("ball radius must be > 0, got {radius}"));
                }
            }
            SpatialShape::Shell { center, inner, outer } => {
                if !(inner >= 0.0 && outer > inner && outer.is_finite() && center.is_finite()) {
                    return bad(format!("shell needs 0 <= inner < outer, got {inner}, {outer}"));
                }
            }
            SpatialShape::Box { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && hi.x > lo.x && hi.y > lo.y && hi.z > lo.z) {
                    return bad("box needs lo < hi in every coordinate".into());
                }
            }
        }
        match self.velocity {
            VelocityShape::UniformBall { v_max } => {
                if !(v_max >= 0.0 && v_max.is_finite()) {
                    return bad(format!("v_max must be >= 0, got {v_max}"));
                }
            }
            VelocityShape::TruncatedMaxwellian { sigma, v_max } => {
                if !(sigma > 0.0 && sigma.is_finite() && v_max > 0.0 && v_max.is_finite()) {
                    return bad(format!("truncated Maxwellian needs sigma > 0, v_max > 0, got {sigma}, {v_max}"));
                }
            }
        }
        if !(self.vacuum_radius > epsilon_charge && self.vacuum_radius.is_finite()) {
            return bad(format!(
                "vacuum radius {} must exceed the regularization radius {epsilon_charge}",
                self.vacuum_radius
            ));
        }
        for (a, c) in self.charges.iter().enumerate() {
            if !c.position.is_finite() || !c.velocity.is_finite() {
                return bad(format!("charge {a} has non-finite initial data"));
            }
            for (b, o) in self.charges.iter().enumerate().skip(a + 1) {
                if c.position == o.position {
                    return bad(format!("charges {a} and {b} start at the same position"));
                }
            }
        }
        Ok(())
    }
}

struct Rejection<'a> {
    rng: &'a mut ChaCha8Rng,
    attempts: u64,
    accepted: u64,
    what: &'static str,
}

impl Rejection<'_> {
    fn draw<T>(&mut self, mut propose: impl FnMut(&mut ChaCha8Rng) -> Option<T>) -> Result<T> {
        loop {
            self.attempts += 1;
            if let Some(v) = propose(self.rng) {
                self.accepted += 1;
                return Ok(v);
            }
            if self.attempts >= ACCEPTANCE_PROBE && (self.accepted as f64) < MIN_ACCEPTANCE * self.attempts as f64 {
                return Err(Error::Sampling(format!(
                    "{} acceptance {} / {} is below {MIN_ACCEPTANCE}",
                    self.what, self.accepted, self.attempts
                )));
            }
        }
    }
}

fn unit_cube(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
}

fn propose_position(shape: &SpatialShape, rng: &mut ChaCha8Rng) -> Option<Vec3> {
    match *shape {
        SpatialShape::Ball { center, radius } => {
            let u = unit_cube(rng);
            (u.norm_squared() <= 1.0).then(|| center + u * radius)
        }
        SpatialShape::Shell { center, inner, outer } => {
            let u = unit_cube(rng) * outer;
            let r2 = u.norm_squared();
            (r2 <= outer * outer && r2 >= inner * inner).then(|| center + u)
        }
        SpatialShape::Box { lo, hi } => Some(Vec3::new(
            rng.random_range(lo.x..hi.x),
            rng.random_range(lo.y..hi.y),
            rng.random_range(lo.z..hi.z),
        )),
    }
}

fn propose_velocity(shape: &VelocityShape, normal: &Normal<f64>, rng: &mut ChaCha8Rng) -> Option<Vec3> {
    match *shape {
        VelocityShape::UniformBall { v_max } => {
            let u = unit_cube(rng);
            (u.norm_squared() <= 1.0).then(|| u * v_max)
        }
        VelocityShape::TruncatedMaxwellian { sigma, v_max } => {
            let v = Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng)) * sigma;
            (v.norm_squared() <= v_max * v_max).then_some(v)
        }
    }
}

/// Draw the initial state. Positions and velocities come from one ChaCha8 stream
/// seeded with `ic.seed`, particle by particle, so the result is a pure function of `ic`.
pub fn sample(ic: &InitialCondition) -> Result<SimState> {
    let mut rng = ChaCha8Rng::seed_from_u64(ic.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let w = if ic.particle_count > 0 {
        1.0 / ic.particle_count as f64
    } else {
        0.0
    };
    let d2 = ic.vacuum_radius * ic.vacuum_radius;
    let mut particles = Vec::with_capacity(ic.particle_count);
    {
        let mut pos = Rejection {
            rng: &mut rng,
            attempts: 0,
            accepted: 0,
            what: "position",
        };
        let mut positions = Vec::with_capacity(ic.particle_count);
        for _ in 0..ic.particle_count {
            positions.push(pos.draw(|rng| {
                propose_position(&ic.spatial, rng)
                    .filter(|x| ic.charges.iter().all(|c| (*x - c.position).norm_squared() >= d2))
            })?);
        }
        let mut vel = Rejection {
            rng: pos.rng,
            attempts: 0,
            accepted: 0,
            what: "velocity",
        };
        for x in positions {
            let v = vel.draw(|rng| propose_velocity(&ic.velocity, &normal, rng))?;
            particles.push(Macroparticle::new(x, v, w)?);
        }
    }
    let ensemble = PlasmaEnsemble::new(particles)?;
    let state = SimState::new(0.0, ensemble, ic.charges.clone());
    if !state.ensemble.is_empty() && !state.charges.is_empty() {
        let d = state.min_charge_distance()?;
        assert!(d >= ic.vacuum_radius, "sampled particle inside a vacuum ball");
    }
    Ok(state)
}

/// `Q_0 = max_j max_alpha sqrt(h_alpha(x_j, v_j))` on the sampled support.
pub fn initial_q(state: &SimState, k1: f64, spec: &KernelSpec) -> Result<f64> {
    compute_q(state, k1, spec)
}

/// Plasma softening used when none is configured: the mean interparticle spacing.
pub fn default_plasma_softening(ensemble: &PlasmaEnsemble) -> f64 {
    ensemble.mean_spacing().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ball_ic(m: usize, charges: Vec<ChargeState>, delta0: f64, seed: u64) -> InitialCondition {
        InitialCondition {
            spatial: SpatialShape::Ball {
                center: Vec3::ZERO,
                radius: 2.0,
            },
            velocity: VelocityShape::UniformBall { v_max: 1.0 },
            particle_count: m,
            vacuum_radius: delta0,
            charges,
            seed,
        }
    }

    #[test]
    fn vacuum_island_and_total_weight() {
        let ic = ball_ic(1000, vec![ChargeState::at_rest(Vec3::ZERO)], 0.5, 1);
        ic.validate(0.05).unwrap();
        let s = sample(&ic).unwrap();
        assert_eq!(s.ensemble.len(), 1000);
        assert!(s.ensemble.particles().iter().all(|p| p.position.norm() >= 0.5));
        assert!(s.ensemble.particles().iter().all(|p| p.position.norm() <= 2.0));
        assert!(s.ensemble.particles().iter().all(|p| p.velocity.norm() <= 1.0));
        assert_relative_eq!(s.ensemble.total_weight(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn reproducible() {
        let ic = ball_ic(500, vec![ChargeState::at_rest(Vec3::new(0.3, 0.0, 0.0))], 0.4, 99);
        let a = sample(&ic).unwrap();
        let b = sample(&ic).unwrap();
        for (p, q) in a.ensemble.particles().iter().zip(b.ensemble.particles()) {
            assert_eq!(p.position.to_array().map(f64::to_bits), q.position.to_array().map(f64::to_bits));
            assert_eq!(p.velocity.to_array().map(f64::to_bits), q.velocity.to_array().map(f64::to_bits));
        }
        let c = sample(&InitialCondition { seed: 100, ..ic }).unwrap();
        assert_ne!(a.ensemble.particles()[0].position, c.ensemble.particles()[0].position);
    }

    #[test]
    fn mean_position_within_clt_bound() {
        let m = 20_000;
        let s = sample(&ball_ic(m, vec![], 0.1, 5)).unwrap();
        let mean = s.ensemble.positions().fold(Vec3::ZERO, |a, x| a + x) / m as f64;
        // per-coordinate variance of a uniform ball of radius R is R^2 / 5
        let sigma = (4.0 / 5.0 / m as f64).sqrt();
        for k in 0..3 {
            assert!(mean[k].abs() < 3.0 * sigma, "{mean:?}");
        }
    }

    #[test]
    fn shell_box_and_maxwellian() {
        let ic = InitialCondition {
            spatial: SpatialShape::Shell {
                center: Vec3::new(1.0, 0.0, 0.0),
                inner: 0.5,
                outer: 1.0,
            },
            velocity: VelocityShape::TruncatedMaxwellian { sigma: 1.0, v_max: 1.5 },
            particle_count: 2000,
            vacuum_radius: 0.2,
            charges: vec![ChargeState::at_rest(Vec3::ZERO)],
            seed: 3,
        };
        let s = sample(&ic).unwrap();
        for p in s.ensemble.particles() {
            let r = (p.position - Vec3::new(1.0, 0.0, 0.0)).norm();
            assert!((0.5..=1.0).contains(&r));
            assert!(p.position.norm() >= 0.2);
            assert!(p.velocity.norm() <= 1.5);
        }
        let ic = InitialCondition {
            spatial: SpatialShape::Box {
                lo: Vec3::new(-1.0, 0.0, 2.0),
                hi: Vec3::new(1.0, 0.5, 3.0),
            },
            ..ic
        };
        let s = sample(&ic).unwrap();
        for p in s.ensemble.particles() {
            assert!(p.position.x >= -1.0 && p.position.x < 1.0);
            assert!(p.position.y >= 0.0 && p.position.y < 0.5);
            assert!(p.position.z >= 2.0 && p.position.z < 3.0);
        }
    }

    #[test]
    fn swallowed_support_is_an_error() {
        let ic = ball_ic(10, vec![ChargeState::at_rest(Vec3::ZERO)], 5.0, 0);
        assert!(matches!(sample(&ic), Err(Error::Sampling(_))));
    }

    #[test]
    fn validation() {
        let ic = ball_ic(10, vec![ChargeState::at_rest(Vec3::ZERO)], 0.05, 0);
        assert!(ic.validate(0.05).is_err());
        assert!(ic.validate(0.04).is_ok());
        let ic = ball_ic(10, vec![ChargeState::at_rest(Vec3::ZERO), ChargeState::at_rest(Vec3::ZERO)], 0.5, 0);
        assert!(ic.validate(0.05).is_err());
    }

    #[test]
    fn initial_q_examples() {
        // at rest, distance exactly delta_0 = 1, K1 = 1: h = 0 + 1 + 1
        let s = SimState::new(
            0.0,
            PlasmaEnsemble::new(vec![Macroparticle::new(Vec3::new(0.0, 1.0, 0.0), Vec3::ZERO, 1.0).unwrap()]).unwrap(),
            vec![ChargeState::at_rest(Vec3::ZERO)],
        );
        let spec = KernelSpec::regularized(0.1, 0.0).unwrap();
        assert_eq!(initial_q(&s, 1.0, &spec).unwrap(), 2f64.sqrt());

        let far = SimState::new(
            0.0,
            PlasmaEnsemble::new(vec![Macroparticle::new(Vec3::new(1e12, 0.0, 0.0), Vec3::ZERO, 1.0).unwrap()]).unwrap(),
            vec![ChargeState::at_rest(Vec3::ZERO)],
        );
        assert_relative_eq!(initial_q(&far, 4.0, &spec).unwrap(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn initial_q_matches_brute_force() {
        let ic = ball_ic(
            300,
            vec![ChargeState::at_rest(Vec3::new(0.5, 0.0, 0.0)), ChargeState::new(Vec3::new(-0.5, 0.0, 0.0), Vec3::new(0.0, 0.1, 0.0))],
            0.3,
            7,
        );
        let s = sample(&ic).unwrap();
        let spec = KernelSpec::regularized(0.05, 0.0).unwrap();
        let mut q = 0.0f64;
        for p in s.ensemble.particles() {
            for c in &s.charges {
                let h = 0.5 * (p.velocity - c.velocity).norm_squared() + 1.0 / (p.position - c.position).norm() + 2.0;
                q = q.max(h.sqrt());
            }
        }
        assert_relative_eq!(initial_q(&s, 2.0, &spec).unwrap(), q, max_relative = 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn every_particle_respects_vacuum(seed in any::<u64>(), x in -1.0f64..1.0, d in 0.1f64..0.8) {
            let ic = ball_ic(200, vec![ChargeState::at_rest(Vec3::new(x, 0.0, 0.0))], d, seed);
            let s = sample(&ic).unwrap();
            prop_assert!(s.min_charge_distance().unwrap() >= d);
        }
    }
}
