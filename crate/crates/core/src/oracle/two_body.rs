//! High-accuracy reference for one plasma particle and one charge with the bare
//! Coulomb interaction, integrated with an adaptive 8th-order Dormand-Prince pair.

use ode_solvers::{Dop853, OutputType, SVector, System};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::{ChargeState, Macroparticle, PlasmaEnsemble, SimState};
use crate::vec3::Vec3;

type State = SVector<f64, 12>;

/// One macroparticle of weight `weight` and one unit charge, repelling each other.
///
/// The particle's acceleration is `(x - xi) / |x - xi|^3` and the charge's is
/// `weight (xi - x) / |xi - x|^3`, matching the simulator with a single particle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoBodyProblem {
    pub particle_position: Vec3,
    pub particle_velocity: Vec3,
    #[serde(default = "unit_weight")]
    pub weight: f64,
    pub charge_position: Vec3,
    #[serde(default)]
    pub charge_velocity: Vec3,
    /// Charge pinned in place (its velocity is ignored and held at zero).
    #[serde(default)]
    pub fixed_charge: bool,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoBodyState {
    pub time: f64,
    pub particle_position: Vec3,
    pub particle_velocity: Vec3,
    pub charge_position: Vec3,
    pub charge_velocity: Vec3,
}

impl TwoBodyState {
    fn from_vector(time: f64, y: &State) -> Self {
        TwoBodyState {
            time,
            particle_position: Vec3::new(y[0], y[1], y[2]),
            particle_velocity: Vec3::new(y[3], y[4], y[5]),
            charge_position: Vec3::new(y[6], y[7], y[8]),
            charge_velocity: Vec3::new(y[9], y[10], y[11]),
        }
    }

    fn to_vector(self) -> State {
        let mut y = State::zeros();
        for k in 0..3 {
            y[k] = self.particle_position[k];
            y[3 + k] = self.particle_velocity[k];
            y[6 + k] = self.charge_position[k];
            y[9 + k] = self.charge_velocity[k];
        }
        y
    }

    pub fn separation(&self) -> f64 {
        (self.particle_position - self.charge_position).norm()
    }
}

impl TwoBodyProblem {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.particle_position,
            self.particle_velocity,
            self.charge_position,
            self.charge_velocity,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite || !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidParameter("two-body data must be finite with weight > 0".into()));
        }
        if self.particle_position == self.charge_position {
            return Err(Error::InvalidParameter("particle and charge start at the same point".into()));
        }
        Ok(())
    }

    pub fn initial(&self) -> TwoBodyState {
        TwoBodyState {
            time: 0.0,
            particle_position: self.particle_position,
            particle_velocity: self.particle_velocity,
            charge_position: self.charge_position,
            charge_velocity: if self.fixed_charge { Vec3::ZERO } else { self.charge_velocity },
        }
    }

    /// The same configuration as a simulator state (one particle, one charge).
    pub fn sim_state(&self) -> Result<SimState> {
        let s = self.initial();
        Ok(SimState::new(
            0.0,
            PlasmaEnsemble::new(vec![Macroparticle::new(s.particle_position, s.particle_velocity, self.weight)?])?,
            vec![ChargeState::new(s.charge_position, s.charge_velocity)],
        ))
    }

    /// Coupling of the relative coordinate: `r'' = mu r / |r|^3`.
    pub fn reduced_coupling(&self) -> f64 {
        if self.fixed_charge {
            1.0
        } else {
            1.0 + self.weight
        }
    }

    /// Conserved energy `w |v|^2 / 2 + |eta|^2 / 2 + w / |x - xi|`.
    pub fn energy(&self, s: &TwoBodyState) -> f64 {
        0.5 * self.weight * s.particle_velocity.norm_squared()
            + 0.5 * s.charge_velocity.norm_squared()
            + self.weight / s.separation()
    }

    /// Conserved angular momentum; about the pinned charge when it is fixed.
    pub fn angular_momentum(&self, s: &TwoBodyState) -> Vec3 {
        if self.fixed_charge {
            (s.particle_position - s.charge_position).cross(s.particle_velocity) * self.weight
        } else {
            s.particle_position.cross(s.particle_velocity) * self.weight + s.charge_position.cross(s.charge_velocity)
        }
    }

    fn rhs(&self, y: &State) -> State {
        let s = TwoBodyState::from_vector(0.0, y);
        let r = s.particle_position - s.charge_position;
        let f = r / r.norm().powi(3);
        let charge_acc = if self.fixed_charge { Vec3::ZERO } else { -f * self.weight };
        let mut dy = State::zeros();
        for k in 0..3 {
            dy[k] = s.particle_velocity[k];
            dy[3 + k] = f[k];
            dy[6 + k] = s.charge_velocity[k];
            dy[9 + k] = charge_acc[k];
        }
        dy
    }
}

impl System<f64, State> for TwoBodyProblem {
    fn system(&self, _t: f64, y: &State, dy: &mut State) {
        *dy = self.rhs(y);
    }
}

/// Closest approach of a head-on encounter: relative speed `u` at separation `d0`,
/// moving straight at each other. From `u^2 / 2 + mu / d0 = mu / r_min`.
pub fn head_on_pericenter(u: f64, d0: f64, mu: f64) -> f64 {
    1.0 / (0.5 * u * u / mu + 1.0 / d0)
}

/// Reference trajectory sampled on a uniform grid, plus the exact final state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoBodyTrajectory {
    pub problem: TwoBodyProblem,
    pub samples: Vec<TwoBodyState>,
    pub final_state: TwoBodyState,
    /// Largest relative deviation of the energy over the samples.
    pub energy_drift: f64,
    /// Largest deviation of the angular momentum, relative to `max(|L0|, 1)`.
    pub angular_momentum_drift: f64,
}

impl TwoBodyTrajectory {
    /// Cubic Hermite interpolation between grid samples (derivatives from the ODE).
    pub fn at(&self, t: f64) -> TwoBodyState {
        let s = &self.samples;
        if t >= self.final_state.time {
            return self.final_state;
        }
        if t <= s[0].time {
            return s[0];
        }
        let k = s.partition_point(|p| p.time <= t).clamp(1, s.len() - 1);
        let (a, b) = (&s[k - 1], &s[k]);
        let h = b.time - a.time;
        let u = (t - a.time) / h;
        let (ya, yb) = (a.to_vector(), b.to_vector());
        let (fa, fb) = (self.problem.rhs(&ya), self.problem.rhs(&yb));
        let h00 = 2.0 * u.powi(3) - 3.0 * u * u + 1.0;
        let h10 = u.powi(3) - 2.0 * u * u + u;
        let h01 = -2.0 * u.powi(3) + 3.0 * u * u;
        let h11 = u.powi(3) - u * u;
        let y = ya * h00 + fa * (h10 * h) + yb * h01 + fb * (h11 * h);
        TwoBodyState::from_vector(t, &y)
    }

    pub fn min_separation(&self) -> f64 {
        self.samples.iter().map(TwoBodyState::separation).fold(f64::INFINITY, f64::min)
    }
}

const LOCAL_TOLERANCE_FACTOR: f64 = 0.01;
const MIN_LOCAL_TOLERANCE: f64 = 1e-15;

fn integrator(
    problem: TwoBodyProblem,
    y0: State,
    t_final: f64,
    dx: f64,
    tol: f64,
    out: OutputType,
) -> Dop853<f64, State, TwoBodyProblem> {
    Dop853::from_param(
        problem, 0.0, t_final, dx, y0, tol, tol, 0.9, 0.0, 0.333, 6.0, t_final, 0.0, u32::MAX, 1000, out,
    )
}

/// Integrate the unregularized two-body problem over `[0, t_final]` with relative and
/// absolute local tolerance `tolerance` (at most 1e-10), sampling every `sample_dt`.
pub fn two_body_reference(
    problem: &TwoBodyProblem,
    t_final: f64,
    tolerance: f64,
    sample_dt: f64,
) -> Result<TwoBodyTrajectory> {
    problem.validate()?;
    if !(tolerance > 0.0 && tolerance <= 1e-10) {
        return Err(Error::InvalidParameter(format!("oracle tolerance must lie in (0, 1e-10], got {tolerance}")));
    }
    if !(t_final > 0.0 && t_final.is_finite() && sample_dt > 0.0 && sample_dt <= t_final) {
        return Err(Error::InvalidParameter("need 0 < sample_dt <= T".into()));
    }
    let y0 = problem.initial().to_vector();
    let fail = |e: ode_solvers::dop_shared::IntegrationError| Error::Oracle(format!("two-body integration failed: {e}"));

    // Steps are controlled well below the requested tolerance so that the accumulated
    // drift of the invariants stays within 10x of it.
    let tol = (tolerance * LOCAL_TOLERANCE_FACTOR).max(MIN_LOCAL_TOLERANCE);
    let mut dense = integrator(*problem, y0, t_final, sample_dt, tol, OutputType::Dense);
    dense.integrate().map_err(fail)?;
    let mut samples: Vec<TwoBodyState> = dense
        .x_out()
        .iter()
        .zip(dense.y_out())
        .filter(|(t, _)| **t < t_final)
        .map(|(t, y)| TwoBodyState::from_vector(*t, y))
        .collect();

    // The dense grid accumulates t += dx and may stop short of T; the last accepted
    // step of a sparse run lands on T exactly.
    let mut sparse = integrator(*problem, y0, t_final, sample_dt, tol, OutputType::Sparse);
    sparse.integrate().map_err(fail)?;
    let y_end = sparse.y_out().last().ok_or_else(|| Error::Oracle("empty oracle output".into()))?;
    let final_state = TwoBodyState::from_vector(t_final, y_end);
    samples.push(final_state);

    let e0 = problem.energy(&samples[0]);
    let l0 = problem.angular_momentum(&samples[0]);
    let l_scale = l0.norm().max(1.0);
    let energy_drift = samples
        .iter()
        .map(|s| ((problem.energy(s) - e0) / e0).abs())
        .fold(0.0, f64::max);
    let angular_momentum_drift = samples
        .iter()
        .map(|s| (problem.angular_momentum(s) - l0).norm() / l_scale)
        .fold(0.0, f64::max);
    Ok(TwoBodyTrajectory {
        problem: *problem,
        samples,
        final_state,
        energy_drift,
        angular_momentum_drift,
    })
}
