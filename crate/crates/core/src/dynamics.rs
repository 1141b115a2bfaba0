//! Time advancement of the coupled plasma-charge system.
//!
//! Particles follow the characteristic ODEs `x' = v`, `v' = E(x) + F_eps(x)` and the
//! charges follow `xi' = eta`, `eta' = E_eps(xi) + sum_beta Coulomb(xi - xi_beta)`.
//! Both are advanced together with kick-drift-kick velocity Verlet.
//!
//! Substeps are bounded by `adaptive_dt`; analysis windows of length `1/(K2 Q)`
//! are a separate, coarser partition used only for diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{compute_q, total_energy, EnergyReport, MonitorResult};
use crate::error::{Body, Error, Result};
use crate::field::{
    charge_charge_field, charge_field, plasma_field_direct, plasma_field_on_charge, plasma_self_field,
    FieldSolverConfig,
};
use crate::phase::SimState;
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt_max: f64,
    /// Fraction of the core crossing time `max(eps, d_min)^(3/2)` allowed per substep.
    pub cfl_charge: f64,
    /// Fraction of `spacing / max_speed` allowed per substep.
    pub speed_cfl: f64,
    pub window_k2: f64,
    /// Substeps between energy evaluations / diagnostics rows.
    pub output_stride: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt_max: 0.01,
            cfl_charge: 0.05,
            speed_cfl: 0.1,
            window_k2: 16.0,
            output_stride: 1,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_max > 0.0 && self.dt_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt_max must be > 0, got {}", self.dt_max)));
        }
        if !(self.cfl_charge > 0.0 && self.cfl_charge <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "cfl_charge must lie in (0, 1], got {}",
                self.cfl_charge
            )));
        }
        if !(self.speed_cfl > 0.0 && self.speed_cfl.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "speed_cfl must be > 0, got {}",
                self.speed_cfl
            )));
        }
        if !(self.window_k2 >= 16.0) {
            return Err(Error::InvalidParameter(format!(
                "window_k2 must be >= 16, got {}",
                self.window_k2
            )));
        }
        if self.output_stride == 0 {
            return Err(Error::InvalidParameter("output_stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Same configuration with every substep bound multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        IntegratorConfig {
            dt_max: self.dt_max * factor,
            cfl_charge: (self.cfl_charge * factor).min(1.0),
            speed_cfl: self.speed_cfl * factor,
            ..*self
        }
    }
}

/// Accelerations of every particle and every charge at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Accelerations {
    pub particles: Vec<Vec3>,
    pub charges: Vec<Vec3>,
}

/// Particle acceleration: self-excluded plasma field plus regularized charge field.
/// Charge acceleration: regularized plasma field at the charge plus bare Coulomb
/// repulsion from the other charges.
pub fn acceleration(state: &SimState, field: &FieldSolverConfig) -> Result<Accelerations> {
    let spec = &field.kernel;
    let mut particles = if state.ensemble.len() > 1 {
        plasma_self_field(&state.ensemble, field)?
    } else {
        vec![Vec3::ZERO; state.ensemble.len()]
    };
    if !state.charges.is_empty() {
        particles
            .par_iter_mut()
            .zip(state.ensemble.particles())
            .for_each(|(a, p)| {
                for c in &state.charges {
                    *a += spec.charge_force(p.position - c.position);
                }
            });
    }
    let charges = (0..state.charges.len())
        .map(|alpha| {
            let xi = state.charges[alpha].position;
            Ok(plasma_field_on_charge(xi, &state.ensemble, spec)
                + charge_charge_field(alpha, &state.charges)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Accelerations { particles, charges })
}

/// One kick-drift-kick step from a state whose accelerations are already known.
/// Returns the new state and its accelerations.
pub fn step_with(
    state: &SimState,
    dt: f64,
    field: &FieldSolverConfig,
    acc: &Accelerations,
) -> Result<(SimState, Accelerations)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    let half = 0.5 * dt;
    let mut next = state.clone();
    next.time = state.time + dt;
    for (j, (p, a)) in state.ensemble.particles().iter().zip(&acc.particles).enumerate() {
        let v_half = p.velocity + *a * half;
        next.ensemble.set_phase(j, p.position + v_half * dt, v_half);
    }
    for (c, a) in next.charges.iter_mut().zip(&acc.charges) {
        c.velocity += *a * half;
        c.position += c.velocity * dt;
    }
    check_finite(&next)?;
    let acc_next = acceleration(&next, field)?;
    for (j, a) in acc_next.particles.iter().enumerate() {
        let q = next.ensemble.particles()[j];
        next.ensemble.set_phase(j, q.position, q.velocity + *a * half);
    }
    for (c, a) in next.charges.iter_mut().zip(&acc_next.charges) {
        c.velocity += *a * half;
    }
    check_finite(&next)?;
    Ok((next, acc_next))
}

/// One velocity-Verlet step of length `dt`.
pub fn step(state: &SimState, dt: f64, field: &FieldSolverConfig) -> Result<SimState> {
    let acc = acceleration(state, field)?;
    step_with(state, dt, field, &acc).map(|(s, _)| s)
}

fn check_finite(state: &SimState) -> Result<()> {
    for (j, p) in state.ensemble.particles().iter().enumerate() {
        if !p.position.is_finite() || !p.velocity.is_finite() {
            return Err(Error::IntegrationFailure {
                body: Body::Particle(j),
                time: state.time,
            });
        }
    }
    for (a, c) in state.charges.iter().enumerate() {
        if !c.position.is_finite() || !c.velocity.is_finite() {
            return Err(Error::IntegrationFailure {
                body: Body::Charge(a),
                time: state.time,
            });
        }
    }
    Ok(())
}

/// Closest approach relevant to the charge time scale: particle-charge distances
/// and, for several charges, charge-charge separations.
fn closest_charge_approach(state: &SimState) -> Option<f64> {
    let mut d = f64::INFINITY;
    if !state.ensemble.is_empty() && !state.charges.is_empty() {
        d = d.min(state.min_charge_distance().ok()?);
    }
    if state.charges.len() >= 2 {
        d = d.min(state.min_charge_separation().ok()?);
    }
    d.is_finite().then_some(d)
}

/// Substep bound: `min(dt_max, cfl_charge * max(eps, d_min)^(3/2), speed_cfl * spacing / v_max)`.
///
/// The charge term is the crossing time of the regularized core when some body is
/// inside it, and the local Coulomb time scale otherwise. Terms whose inputs are
/// undefined (no charges, a single particle, all particles at rest) are inactive.
pub fn adaptive_dt(state: &SimState, config: &IntegratorConfig, field: &FieldSolverConfig) -> f64 {
    let mut dt = config.dt_max;
    if let Some(d) = closest_charge_approach(state) {
        let scale = d.max(field.kernel.epsilon_charge);
        dt = dt.min(config.cfl_charge * scale.powf(1.5));
    }
    if let (Some(spacing), Ok(v)) = (state.ensemble.mean_spacing(), state.max_speed()) {
        if v > 0.0 {
            dt = dt.min(config.speed_cfl * spacing / v);
        }
    }
    dt
}

/// Analysis windows `0 = t_0 < t_1 < ... < t_n = T` with gaps at most `delta_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPartition {
    pub boundaries: Vec<f64>,
    pub delta_t: f64,
    pub q_estimate: f64,
    /// Measured `Q_i` per window, filled in as windows complete.
    pub q_windows: Vec<Option<f64>>,
}

impl WindowPartition {
    pub fn window_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn window(&self, i: usize) -> (f64, f64) {
        (self.boundaries[i], self.boundaries[i + 1])
    }

    /// Re-partition everything after boundary `i` using a larger `Q` estimate.
    /// Windows `0..i` are kept as they are.
    pub fn refine_after(&mut self, i: usize, q_estimate: f64, k2: f64) {
        if q_estimate <= self.q_estimate {
            return;
        }
        let t_start = self.boundaries[i];
        let t_end = *self.boundaries.last().expect("partition has boundaries");
        let tail = partition_boundaries(t_start, t_end, 1.0 / (k2 * q_estimate));
        self.boundaries.truncate(i);
        self.boundaries.extend(tail);
        self.q_windows.resize(self.boundaries.len() - 1, None);
        self.q_estimate = q_estimate;
        self.delta_t = 1.0 / (k2 * q_estimate);
    }
}

fn partition_boundaries(t0: f64, t1: f64, delta_t: f64) -> Vec<f64> {
    let span = t1 - t0;
    if delta_t >= span {
        return vec![t0, t1];
    }
    let n = (span / delta_t).floor() as usize;
    let mut b: Vec<f64> = (0..=n).map(|i| t0 + i as f64 * delta_t).collect();
    let last = *b.last().unwrap();
    if t1 - last > 1e-12 * span.max(1.0) {
        b.push(t1);
    } else {
        *b.last_mut().unwrap() = t1;
    }
    b
}

/// Partition `[0, T]` into windows of length `1 / (K2 Q)`.
pub fn build_partition(t_final: f64, q_estimate: f64, config: &IntegratorConfig) -> Result<WindowPartition> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidParameter(format!("T must be > 0, got {t_final}")));
    }
    if !(q_estimate > 0.0 && q_estimate.is_finite()) {
        return Err(Error::InvalidParameter(format!("Q estimate must be > 0, got {q_estimate}")));
    }
    let delta_t = 1.0 / (config.window_k2 * q_estimate);
    let boundaries = partition_boundaries(0.0, t_final, delta_t);
    let n = boundaries.len() - 1;
    Ok(WindowPartition {
        boundaries,
        delta_t,
        q_estimate,
        q_windows: vec![None; n],
    })
}

/// Data handed to per-substep monitors.
pub struct StepObservation<'a> {
    pub window: usize,
    pub substep: usize,
    pub dt: f64,
    pub before: &'a SimState,
    pub after: &'a SimState,
    pub acc_before: &'a Accelerations,
    pub acc_after: &'a Accelerations,
}

/// A check evaluated after every substep on read-only snapshots.
pub trait StepMonitor: Send {
    fn name(&self) -> &str;
    fn observe(&mut self, obs: &StepObservation<'_>) -> MonitorResult;
}

/// State and accelerations recorded at one instant of a window.
#[derive(Clone, Debug)]
pub struct TraceSample {
    pub state: SimState,
    pub acc: Accelerations,
}

#[derive(Clone, Debug)]
pub struct SubstepRecord {
    pub time: f64,
    pub dt: f64,
    /// Instantaneous Q after the substep (`None` without charges or plasma).
    pub q: Option<f64>,
    pub min_charge_distance: Option<f64>,
    pub min_charge_separation: Option<f64>,
    /// Total energy, every `output_stride` substeps when energy tracking is on.
    pub energy: Option<EnergyReport>,
    pub results: Vec<MonitorResult>,
}

#[derive(Clone, Debug)]
pub struct WindowRun {
    pub state: SimState,
    pub acc: Accelerations,
    pub records: Vec<SubstepRecord>,
    /// Running sup of sqrt(h) over the window, including its start.
    pub q_window: Option<f64>,
    /// Samples at the window start and after every substep, when tracing is enabled.
    pub trace: Vec<TraceSample>,
}

/// A window that stopped on an integration failure, with everything recorded before it.
#[derive(Debug)]
pub struct WindowAbort {
    pub error: Error,
    pub state: SimState,
    pub records: Vec<SubstepRecord>,
}

/// Owns the integrator settings and the cross-window bookkeeping of a run.
pub struct Propagator {
    pub field: FieldSolverConfig,
    pub integrator: IntegratorConfig,
    /// K1 used for the running Q; `None` disables Q tracking.
    pub k1: Option<f64>,
    pub record_trace: bool,
    /// Evaluate the total energy every `output_stride` substeps.
    pub track_energy: bool,
    /// Replaces `adaptive_dt` when set.
    pub fixed_dt: Option<f64>,
    substeps_done: usize,
    cached: Option<(f64, Accelerations)>,
}

impl Propagator {
    pub fn new(field: FieldSolverConfig, integrator: IntegratorConfig) -> Self {
        Propagator {
            field,
            integrator,
            k1: None,
            record_trace: false,
            track_energy: false,
            fixed_dt: None,
            substeps_done: 0,
            cached: None,
        }
    }

    pub fn substeps_done(&self) -> usize {
        self.substeps_done
    }

    fn q_of(&self, state: &SimState) -> Option<f64> {
        let k1 = self.k1?;
        compute_q(state, k1, &self.field.kernel).ok()
    }

    fn accelerations_for(&mut self, state: &SimState) -> Result<Accelerations> {
        if let Some((t, acc)) = self.cached.take() {
            if t == state.time && acc.particles.len() == state.ensemble.len() {
                return Ok(acc);
            }
        }
        acceleration(state, &self.field)
    }

    /// Advance `state` to exactly `t_end`, invoking every monitor after each substep.
    ///
    /// The remaining interval is split into equal substeps no longer than the current
    /// `adaptive_dt`, so the last substep lands on `t_end`.
    pub fn run_window(
        &mut self,
        state: SimState,
        t_end: f64,
        window: usize,
        monitors: &mut [Box<dyn StepMonitor>],
    ) -> std::result::Result<WindowRun, WindowAbort> {
        let abort = |error, state: SimState, records| WindowAbort {
            error,
            state,
            records,
        };
        if !(t_end >= state.time) {
            let msg = format!("window end {t_end} precedes state time {}", state.time);
            return Err(abort(Error::InvalidParameter(msg), state, Vec::new()));
        }
        let acc = match self.accelerations_for(&state) {
            Ok(a) => a,
            Err(e) => return Err(abort(e, state, Vec::new())),
        };
        let mut q_window = self.q_of(&state);
        let mut trace = Vec::new();
        if self.record_trace {
            trace.push(TraceSample {
                state: state.clone(),
                acc: acc.clone(),
            });
        }
        let mut records = Vec::new();
        let mut current = state;
        let mut acc = acc;
        let mut substep = 0;
        while current.time < t_end {
            let remaining = t_end - current.time;
            let dt_bound = self
                .fixed_dt
                .unwrap_or_else(|| adaptive_dt(&current, &self.integrator, &self.field));
            let n = (remaining / dt_bound).ceil().max(1.0);
            let dt = remaining / n;
            let (mut next, acc_next) = match step_with(&current, dt, &self.field, &acc) {
                Ok(r) => r,
                Err(e) => return Err(abort(e, current, records)),
            };
            if n <= 1.0 {
                next.time = t_end;
            }
            let results = monitors
                .iter_mut()
                .map(|m| {
                    m.observe(&StepObservation {
                        window,
                        substep,
                        dt,
                        before: &current,
                        after: &next,
                        acc_before: &acc,
                        acc_after: &acc_next,
                    })
                })
                .collect();
            self.substeps_done += 1;
            let q = self.q_of(&next);
            if let Some(q) = q {
                q_window = Some(q_window.map_or(q, |w: f64| w.max(q)));
            }
            let energy = if self.track_energy && self.substeps_done % self.integrator.output_stride == 0 {
                match total_energy(&next, &self.field.kernel) {
                    Ok(e) => Some(e),
                    Err(e) => return Err(abort(e, next, records)),
                }
            } else {
                None
            };
            records.push(SubstepRecord {
                time: next.time,
                dt,
                q,
                min_charge_distance: next.min_charge_distance().ok(),
                min_charge_separation: next.min_charge_separation().ok(),
                energy,
                results,
            });
            if self.record_trace {
                trace.push(TraceSample {
                    state: next.clone(),
                    acc: acc_next.clone(),
                });
            }
            current = next;
            acc = acc_next;
            substep += 1;
        }
        self.cached = Some((current.time, acc.clone()));
        Ok(WindowRun {
            state: current,
            acc,
            records,
            q_window,
            trace,
        })
    }
}

/// Run one window with a fresh propagator. See [`Propagator::run_window`].
pub fn run_window(
    state: SimState,
    t_end: f64,
    field: &FieldSolverConfig,
    integrator: &IntegratorConfig,
    k1: Option<f64>,
    monitors: &mut [Box<dyn StepMonitor>],
) -> std::result::Result<WindowRun, WindowAbort> {
    let mut p = Propagator::new(*field, *integrator);
    p.k1 = k1;
    p.run_window(state, t_end, 0, monitors)
}

/// Acceleration of a test particle at `x` with every particle and charge of `state`
/// held fixed (no self-exclusion).
pub fn frozen_field(state: &SimState, x: Vec3, field: &FieldSolverConfig) -> Result<Vec3> {
    let plasma = if state.ensemble.is_empty() {
        Vec3::ZERO
    } else {
        plasma_field_direct(&[x], &state.ensemble, &field.kernel)?[0]
    };
    Ok(plasma + charge_field(x, &state.charges, &field.kernel))
}

/// One velocity-Verlet step of a test particle in the frozen field of `state`.
pub fn frozen_field_step(
    state: &SimState,
    x: Vec3,
    v: Vec3,
    dt: f64,
    field: &FieldSolverConfig,
) -> Result<(Vec3, Vec3)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    let v_half = v + frozen_field(state, x, field)? * (0.5 * dt);
    let x1 = x + v_half * dt;
    let v1 = v_half + frozen_field(state, x1, field)? * (0.5 * dt);
    Ok((x1, v1))
}

/// Determinant of the Jacobian of `(x, v) -> frozen_field_step(x, v)`, by central
/// differences with step `h` in each of the six phase coordinates.
pub fn frozen_step_jacobian_determinant(
    state: &SimState,
    x: Vec3,
    v: Vec3,
    dt: f64,
    h: f64,
    field: &FieldSolverConfig,
) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("finite-difference step must be > 0, got {h}")));
    }
    let pack = |x: Vec3, v: Vec3| [x.x, x.y, x.z, v.x, v.y, v.z];
    let z0 = pack(x, v);
    let mut jac = [[0.0f64; 6]; 6];
    for k in 0..6 {
        let image = |sign: f64| -> Result<[f64; 6]> {
            let mut z = z0;
            z[k] += sign * h;
            let (x1, v1) = frozen_field_step(state, Vec3::new(z[0], z[1], z[2]), Vec3::new(z[3], z[4], z[5]), dt, field)?;
            Ok(pack(x1, v1))
        };
        let (plus, minus) = (image(1.0)?, image(-1.0)?);
        for r in 0..6 {
            jac[r][k] = (plus[r] - minus[r]) / (2.0 * h);
        }
    }
    Ok(determinant(jac))
}

/// LU determinant with partial pivoting.
fn determinant<const N: usize>(mut a: [[f64; N]; N]) -> f64 {
    let mut det = 1.0;
    for c in 0..N {
        let p = (c..N).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).expect("nonempty");
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..N {
            let f = a[r][c] / a[c][c];
            for k in c..N {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    det
}
