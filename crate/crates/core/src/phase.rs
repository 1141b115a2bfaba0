//! Phase-space samples of the plasma, point charges, and full system snapshots.
//!
//! Units are nondimensional: every charge, mass and the coupling constant are 1,
//! and the plasma carries unit total mass split across macroparticle weights.
//! Particle identity is the index in the ensemble and never changes during a run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// One weighted sample of the plasma distribution function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Macroparticle {
    pub position: Vec3,
    pub velocity: Vec3,
    pub weight: f64,
}

impl Macroparticle {
    pub fn new(position: Vec3, velocity: Vec3, weight: f64) -> Result<Self> {
        let p = Macroparticle {
            position,
            velocity,
            weight,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "macroparticle weight must be finite and >= 0, got {}",
                self.weight
            )));
        }
        if !self.position.is_finite() || !self.velocity.is_finite() {
            return Err(Error::InvalidParameter(
                "macroparticle coordinates must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Position and velocity of one unit point charge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargeState {
    pub position: Vec3,
    pub velocity: Vec3,
}

impl ChargeState {
    pub fn new(position: Vec3, velocity: Vec3) -> Self {
        ChargeState { position, velocity }
    }

    pub fn at_rest(position: Vec3) -> Self {
        ChargeState::new(position, Vec3::ZERO)
    }
}

/// Ordered list of macroparticles. Weights are fixed at construction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlasmaEnsemble {
    particles: Vec<Macroparticle>,
    total_weight: f64,
}

impl PlasmaEnsemble {
    pub fn new(particles: Vec<Macroparticle>) -> Result<Self> {
        for p in &particles {
            p.validate()?;
        }
        let total_weight = particles.iter().map(|p| p.weight).sum();
        Ok(PlasmaEnsemble {
            particles,
            total_weight,
        })
    }

    pub fn empty() -> Self {
        PlasmaEnsemble::default()
    }

    pub fn particles(&self) -> &[Macroparticle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn positions(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.particles.iter().map(|p| p.position)
    }

    /// Overwrite the phase coordinates of particle `j`, leaving its weight untouched.
    pub(crate) fn set_phase(&mut self, j: usize, position: Vec3, velocity: Vec3) {
        let p = &mut self.particles[j];
        p.position = position;
        p.velocity = velocity;
    }

    /// Axis-aligned bounding box of all particle positions, `None` when empty.
    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        let first = self.particles.first()?.position;
        let (mut lo, mut hi) = (first, first);
        for p in &self.particles[1..] {
            let x = p.position;
            lo = Vec3::new(lo.x.min(x.x), lo.y.min(x.y), lo.z.min(x.z));
            hi = Vec3::new(hi.x.max(x.x), hi.y.max(x.y), hi.z.max(x.z));
        }
        Some((lo, hi))
    }

    /// Mean interparticle spacing surrogate `(V_box / M)^(1/3)`.
    ///
    /// Returns `None` for fewer than two particles or a degenerate (zero-volume) box.
    pub fn mean_spacing(&self) -> Option<f64> {
        if self.len() < 2 {
            return None;
        }
        let (lo, hi) = self.bounding_box()?;
        let d = hi - lo;
        let volume = d.x * d.y * d.z;
        if volume > 0.0 {
            Some((volume / self.len() as f64).cbrt())
        } else {
            None
        }
    }
}

/// Full system snapshot: plasma ensemble, point charges and time.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub time: f64,
    pub ensemble: PlasmaEnsemble,
    pub charges: Vec<ChargeState>,
}

impl SimState {
    pub fn new(time: f64, ensemble: PlasmaEnsemble, charges: Vec<ChargeState>) -> Self {
        SimState {
            time,
            ensemble,
            charges,
        }
    }

    pub fn particle_count(&self) -> usize {
        self.ensemble.len()
    }

    pub fn charge_count(&self) -> usize {
        self.charges.len()
    }

    pub fn min_charge_distance(&self) -> Result<f64> {
        min_charge_distance(self)
    }

    pub fn min_charge_separation(&self) -> Result<f64> {
        min_charge_separation(self)
    }

    pub fn max_speed(&self) -> Result<f64> {
        max_speed(self)
    }
}

/// Minimum distance between any plasma particle and any point charge.
pub fn min_charge_distance(state: &SimState) -> Result<f64> {
    if state.ensemble.is_empty() {
        return Err(Error::Empty("plasma ensemble"));
    }
    if state.charges.is_empty() {
        return Err(Error::Empty("charge list"));
    }
    let mut best = f64::INFINITY;
    for p in state.ensemble.particles() {
        for c in &state.charges {
            best = best.min((p.position - c.position).norm());
        }
    }
    Ok(best)
}

/// Minimum pairwise distance between point charges; requires at least two charges.
pub fn min_charge_separation(state: &SimState) -> Result<f64> {
    let n = state.charges.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "charge separation needs at least two charges, have {n}"
        )));
    }
    let mut best = f64::INFINITY;
    for a in 0..n {
        for b in (a + 1)..n {
            best = best.min((state.charges[a].position - state.charges[b].position).norm());
        }
    }
    Ok(best)
}

/// Largest particle speed, the discrete counterpart of the velocity support radius P(t).
pub fn max_speed(state: &SimState) -> Result<f64> {
    if state.ensemble.is_empty() {
        return Err(Error::Empty("plasma ensemble"));
    }
    Ok(state
        .ensemble
        .particles()
        .iter()
        .map(|p| p.velocity.norm())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn particle(x: [f64; 3], v: [f64; 3], w: f64) -> Macroparticle {
        Macroparticle::new(x.into(), v.into(), w).unwrap()
    }

    fn state(ps: Vec<Macroparticle>, cs: Vec<ChargeState>) -> SimState {
        SimState::new(0.0, PlasmaEnsemble::new(ps).unwrap(), cs)
    }

    fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
        Vec3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    #[test]
    fn rejects_negative_or_nan_weight() {
        assert!(Macroparticle::new(Vec3::ZERO, Vec3::ZERO, -1e-3).is_err());
        assert!(Macroparticle::new(Vec3::ZERO, Vec3::ZERO, f64::NAN).is_err());
        assert!(Macroparticle::new(Vec3::new(f64::INFINITY, 0.0, 0.0), Vec3::ZERO, 1.0).is_err());
    }

    #[test]
    fn distance_single_pair() {
        let s = state(
            vec![particle([1.0, 0.0, 0.0], [0.0; 3], 1.0)],
            vec![ChargeState::at_rest(Vec3::ZERO)],
        );
        assert_eq!(s.min_charge_distance().unwrap(), 1.0);
    }

    #[test]
    fn distance_takes_minimum() {
        let s = state(
            vec![
                particle([2.0, 0.0, 0.0], [0.0; 3], 0.5),
                particle([0.0, 3.0, 0.0], [0.0; 3], 0.5),
            ],
            vec![ChargeState::at_rest(Vec3::ZERO)],
        );
        assert_eq!(s.min_charge_distance().unwrap(), 2.0);
    }

    #[test]
    fn distance_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ps: Vec<_> = (0..1000)
            .map(|_| Macroparticle::new(random_vec(&mut rng, 3.0), Vec3::ZERO, 1e-3).unwrap())
            .collect();
        let cs: Vec<_> = (0..3)
            .map(|_| ChargeState::at_rest(random_vec(&mut rng, 3.0)))
            .collect();
        let mut oracle = f64::MAX;
        for p in &ps {
            for c in &cs {
                let d = p.position - c.position;
                oracle = oracle.min((d.x * d.x + d.y * d.y + d.z * d.z).sqrt());
            }
        }
        let s = state(ps, cs);
        assert_eq!(s.min_charge_distance().unwrap(), oracle);
    }

    #[test]
    fn distance_requires_particles_and_charges() {
        let s = state(vec![], vec![ChargeState::at_rest(Vec3::ZERO)]);
        assert!(matches!(s.min_charge_distance(), Err(Error::Empty(_))));
        let s = state(vec![particle([1.0, 0.0, 0.0], [0.0; 3], 1.0)], vec![]);
        assert!(matches!(s.min_charge_distance(), Err(Error::Empty(_))));
    }

    #[test]
    fn separation_examples() {
        let s = state(
            vec![],
            vec![
                ChargeState::at_rest(Vec3::ZERO),
                ChargeState::at_rest(Vec3::new(1.0, 0.0, 0.0)),
            ],
        );
        assert_eq!(s.min_charge_separation().unwrap(), 1.0);

        let h = 3f64.sqrt() / 2.0;
        let s = state(
            vec![],
            vec![
                ChargeState::at_rest(Vec3::ZERO),
                ChargeState::at_rest(Vec3::new(1.0, 0.0, 0.0)),
                ChargeState::at_rest(Vec3::new(0.5, h, 0.0)),
            ],
        );
        approx::assert_relative_eq!(s.min_charge_separation().unwrap(), 1.0, epsilon = 1e-15);

        let s = state(vec![], vec![ChargeState::at_rest(Vec3::ZERO)]);
        assert!(s.min_charge_separation().is_err());
    }

    #[test]
    fn separation_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cs: Vec<_> = (0..5)
            .map(|_| ChargeState::at_rest(random_vec(&mut rng, 2.0)))
            .collect();
        let mut oracle = f64::MAX;
        for a in &cs {
            for b in &cs {
                if a != b {
                    oracle = oracle.min((a.position - b.position).norm());
                }
            }
        }
        assert_eq!(state(vec![], cs).min_charge_separation().unwrap(), oracle);
    }

    #[test]
    fn max_speed_examples() {
        let s = state(vec![particle([0.0; 3], [3.0, 4.0, 0.0], 1.0)], vec![]);
        assert_eq!(s.max_speed().unwrap(), 5.0);
        let s = state(
            vec![
                particle([0.0; 3], [0.0; 3], 0.5),
                particle([1.0, 0.0, 0.0], [0.0; 3], 0.5),
            ],
            vec![],
        );
        assert_eq!(s.max_speed().unwrap(), 0.0);
        assert!(state(vec![], vec![]).max_speed().is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ps: Vec<_> = (0..500)
            .map(|_| Macroparticle::new(Vec3::ZERO, random_vec(&mut rng, 5.0), 0.002).unwrap())
            .collect();
        let mut oracle = 0.0f64;
        for p in &ps {
            oracle = oracle.max(p.velocity.norm());
        }
        assert_eq!(state(ps, vec![]).max_speed().unwrap(), oracle);
    }

    #[test]
    fn total_weight_is_sum() {
        let ps: Vec<_> = (0..10)
            .map(|i| particle([i as f64, 0.0, 0.0], [0.0; 3], 0.1))
            .collect();
        let e = PlasmaEnsemble::new(ps).unwrap();
        approx::assert_relative_eq!(e.total_weight(), 1.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn distances_are_permutation_invariant(
            pts in proptest::collection::vec(proptest::array::uniform3(-5.0f64..5.0), 2..20),
            chs in proptest::collection::vec(proptest::array::uniform3(-5.0f64..5.0), 2..6),
            rot in 0usize..20,
        ) {
            let ps: Vec<_> = pts.iter().map(|&x| particle(x, [0.0; 3], 0.1)).collect();
            let cs: Vec<_> = chs.iter().map(|&x| ChargeState::at_rest(x.into())).collect();
            let mut ps2 = ps.clone();
            let r = rot % ps2.len();
            ps2.rotate_left(r);
            let mut cs2 = cs.clone();
            cs2.reverse();
            let a = state(ps, cs);
            let b = state(ps2, cs2);
            prop_assert_eq!(a.min_charge_distance().unwrap(), b.min_charge_distance().unwrap());
            prop_assert_eq!(a.min_charge_separation().unwrap(), b.min_charge_separation().unwrap());
        }
    }
}
