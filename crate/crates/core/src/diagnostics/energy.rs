use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::plasma_pair_energy_direct;
use crate::kernels::KernelSpec;
use crate::phase::SimState;

/// Components of the total energy H of the regularized system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub kinetic_plasma: f64,
    pub kinetic_charges: f64,
    pub plasma_charge_potential: f64,
    pub plasma_plasma_potential: f64,
    pub charge_charge_potential: f64,
    pub total: f64,
}

impl EnergyReport {
    pub fn components(&self) -> [f64; 5] {
        [
            self.kinetic_plasma,
            self.kinetic_charges,
            self.plasma_charge_potential,
            self.plasma_plasma_potential,
            self.charge_charge_potential,
        ]
    }
}

/// Discrete total energy with the regularized plasma-charge potential, the softened
/// self-excluded plasma-plasma double sum and the bare charge-charge potential.
pub fn total_energy(state: &SimState, spec: &KernelSpec) -> Result<EnergyReport> {
    let particles = state.ensemble.particles();
    let kinetic_plasma = 0.5
        * particles
            .iter()
            .map(|p| p.weight * p.velocity.norm_squared())
            .sum::<f64>();
    let kinetic_charges = 0.5
        * state
            .charges
            .iter()
            .map(|c| c.velocity.norm_squared())
            .sum::<f64>();

    let mut plasma_charge_potential = 0.0;
    for c in &state.charges {
        plasma_charge_potential += particles
            .iter()
            .map(|p| p.weight * spec.charge_potential(p.position - c.position))
            .sum::<f64>();
    }

    let plasma_plasma_potential = if particles.len() > 1 {
        plasma_pair_energy_direct(&state.ensemble, spec)?
    } else {
        0.0
    };

    let mut charge_charge_potential = 0.0;
    for (a, ca) in state.charges.iter().enumerate() {
        for (b, cb) in state.charges.iter().enumerate().skip(a + 1) {
            let d = (ca.position - cb.position).norm();
            if d == 0.0 {
                return Err(Error::Domain(format!("charges {a} and {b} coincide")));
            }
            charge_charge_potential += 1.0 / d;
        }
    }

    let total = kinetic_plasma
        + kinetic_charges
        + plasma_charge_potential
        + plasma_plasma_potential
        + charge_charge_potential;
    Ok(EnergyReport {
        kinetic_plasma,
        kinetic_charges,
        plasma_charge_potential,
        plasma_plasma_potential,
        charge_charge_potential,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::{ChargeState, Macroparticle, PlasmaEnsemble};
    use crate::vec3::Vec3;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_charges_at_rest() {
        let s = SimState::new(
            0.0,
            PlasmaEnsemble::empty(),
            vec![
                ChargeState::at_rest(Vec3::ZERO),
                ChargeState::at_rest(Vec3::new(2.0, 0.0, 0.0)),
            ],
        );
        let spec = KernelSpec::regularized(0.1, 0.0).unwrap();
        // H = 1/2 * sum_{a != b} 1/|xi_a - xi_b| counts the pair twice
        assert_eq!(total_energy(&s, &spec).unwrap().total, 0.5);
    }

    #[test]
    fn single_moving_particle() {
        let s = SimState::new(
            0.0,
            PlasmaEnsemble::new(vec![
                Macroparticle::new(Vec3::ZERO, Vec3::new(2.0, 0.0, 0.0), 1.0).unwrap(),
            ])
            .unwrap(),
            vec![],
        );
        let spec = KernelSpec::regularized(0.1, 0.0).unwrap();
        assert_eq!(total_energy(&s, &spec).unwrap().total, 2.0);
    }

    #[test]
    fn coincident_charges_error() {
        let s = SimState::new(
            0.0,
            PlasmaEnsemble::empty(),
            vec![ChargeState::at_rest(Vec3::ZERO), ChargeState::at_rest(Vec3::ZERO)],
        );
        let spec = KernelSpec::regularized(0.1, 0.0).unwrap();
        assert!(total_energy(&s, &spec).is_err());
    }

    /// Plain double loop over every term of H.
    fn brute_force_energy(s: &SimState, eps: f64, eps_p: f64) -> f64 {
        let ps = s.ensemble.particles();
        let mut h = 0.0;
        for p in ps {
            h += 0.5 * p.weight * p.velocity.dot(p.velocity);
        }
        for c in &s.charges {
            h += 0.5 * c.velocity.dot(c.velocity);
            for p in ps {
                let d = (p.position - c.position).norm();
                let phi = if d >= eps {
                    1.0 / d
                } else {
                    (3.0 * eps * eps - d * d) / (2.0 * eps.powi(3))
                };
                h += p.weight * phi;
            }
        }
        for (j, pj) in ps.iter().enumerate() {
            for (k, pk) in ps.iter().enumerate() {
                if j != k {
                    let d2 = (pj.position - pk.position).norm_squared();
                    h += 0.5 * pj.weight * pk.weight / (d2 + eps_p * eps_p).sqrt();
                }
            }
        }
        for (a, ca) in s.charges.iter().enumerate() {
            for (b, cb) in s.charges.iter().enumerate() {
                if a != b {
                    h += 0.5 / (ca.position - cb.position).norm();
                }
            }
        }
        h
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut r = |s: f64| Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
        let ps: Vec<_> = (0..57)
            .map(|_| Macroparticle::new(r(1.0), r(0.7), 1.0 / 57.0).unwrap())
            .collect();
        let cs = vec![
            ChargeState::new(r(1.0), r(0.3)),
            ChargeState::new(r(1.0), r(0.3)),
            ChargeState::new(r(1.0), r(0.3)),
        ];
        let s = SimState::new(0.0, PlasmaEnsemble::new(ps).unwrap(), cs);
        let spec = KernelSpec::regularized(0.2, 0.05).unwrap();
        let rep = total_energy(&s, &spec).unwrap();
        assert_relative_eq!(rep.total, brute_force_energy(&s, 0.2, 0.05), max_relative = 1e-13);
        assert!(rep.components().iter().all(|&c| c >= 0.0));
        let sum: f64 = rep.components().iter().sum();
        assert_relative_eq!(rep.total, sum, max_relative = 1e-12);
    }
}
