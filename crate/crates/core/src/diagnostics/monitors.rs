use serde::{Deserialize, Serialize};

use super::params::pointwise_energy;
use super::trajectory::sqrt_h_variation_check;
use crate::dynamics::{StepMonitor, StepObservation};
use crate::kernels::KernelSpec;
use crate::phase::SimState;

/// Direction of the inequality a monitor encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `measured <= bound * (1 + tolerance)`
    AtMost,
    /// `measured >= bound * (1 - tolerance)`
    AtLeast,
    /// Measured value is reported, nothing is asserted.
    Report,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorStatus {
    Passed,
    Failed,
    Skipped,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub particle: Option<usize>,
    pub charge: Option<usize>,
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorResult {
    pub name: String,
    pub window: usize,
    pub measured: f64,
    pub bound: f64,
    pub relation: Relation,
    pub tolerance: f64,
    pub status: MonitorStatus,
    /// Hard monitors decide the run's exit status; soft ones are informational.
    pub hard: bool,
    pub witness: Option<Witness>,
}

impl MonitorResult {
    fn with_relation(
        name: &str,
        window: usize,
        measured: f64,
        bound: f64,
        relation: Relation,
        tolerance: f64,
    ) -> Self {
        let ok = match relation {
            Relation::AtMost => measured <= bound * (1.0 + tolerance),
            Relation::AtLeast => measured >= bound * (1.0 - tolerance),
            Relation::Report => true,
        };
        MonitorResult {
            name: name.to_string(),
            window,
            measured,
            bound,
            relation,
            tolerance,
            status: if ok { MonitorStatus::Passed } else { MonitorStatus::Failed },
            hard: relation != Relation::Report,
            witness: None,
        }
    }

    pub fn at_most(name: &str, window: usize, measured: f64, bound: f64, tolerance: f64) -> Self {
        Self::with_relation(name, window, measured, bound, Relation::AtMost, tolerance)
    }

    pub fn at_least(name: &str, window: usize, measured: f64, bound: f64, tolerance: f64) -> Self {
        Self::with_relation(name, window, measured, bound, Relation::AtLeast, tolerance)
    }

    pub fn report(name: &str, window: usize, measured: f64, bound: f64) -> Self {
        Self::with_relation(name, window, measured, bound, Relation::Report, 0.0)
    }

    /// Monitor not applicable to this state (e.g. separation with one charge).
    pub fn skipped(name: &str, window: usize) -> Self {
        MonitorResult {
            name: name.to_string(),
            window,
            measured: 0.0,
            bound: 0.0,
            relation: Relation::Report,
            tolerance: 0.0,
            status: MonitorStatus::Skipped,
            hard: false,
            witness: None,
        }
    }

    pub fn with_witness(mut self, witness: Option<Witness>) -> Self {
        self.witness = witness;
        self
    }

    /// Demote to an informational result.
    pub fn soft(mut self) -> Self {
        self.hard = false;
        self
    }

    pub fn satisfied(&self) -> bool {
        self.status != MonitorStatus::Failed
    }

    /// Failed and counted against the run.
    pub fn is_hard_failure(&self) -> bool {
        self.hard && self.status == MonitorStatus::Failed
    }
}

/// Worst ratio `|v_j| / (2 sqrt(h_alpha(x_j, v_j)))` over particles and charges; must be <= 1.
pub fn velocity_energy_bound_check(
    state: &SimState,
    k1: f64,
    spec: &KernelSpec,
    tol: f64,
    window: usize,
) -> MonitorResult {
    const NAME: &str = "velocity_energy_bound";
    if state.charges.is_empty() || state.ensemble.is_empty() {
        return MonitorResult::skipped(NAME, window);
    }
    let mut worst = 0.0f64;
    let mut witness = None;
    for (j, p) in state.ensemble.particles().iter().enumerate() {
        let speed = p.velocity.norm();
        for (alpha, c) in state.charges.iter().enumerate() {
            let h = pointwise_energy(p, c, k1, spec);
            let ratio = if h > 0.0 { speed / (2.0 * h.sqrt()) } else { f64::INFINITY };
            if ratio > worst || witness.is_none() {
                worst = ratio;
                witness = Some(Witness {
                    particle: Some(j),
                    charge: Some(alpha),
                    time: state.time,
                });
            }
        }
    }
    MonitorResult::at_most(NAME, window, worst, 1.0, tol).with_witness(witness)
}

/// `max_alpha |eta_alpha| <= sqrt(2 H(0))`, with a relative energy-drift allowance `tol`.
pub fn eta_bound_check(state: &SimState, h0: f64, tol: f64, window: usize) -> MonitorResult {
    const NAME: &str = "eta_bound";
    if state.charges.is_empty() {
        return MonitorResult::skipped(NAME, window);
    }
    let (alpha, speed) = state
        .charges
        .iter()
        .map(|c| c.velocity.norm())
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (a, s)| if s > acc.1 { (a, s) } else { acc });
    MonitorResult::at_most(NAME, window, speed, (2.0 * h0).sqrt(), tol).with_witness(Some(Witness {
        particle: None,
        charge: Some(alpha),
        time: state.time,
    }))
}

/// `min_{alpha != beta} |xi_alpha - xi_beta| >= 1 / (2 H(0))` up to `tol`; skipped for N < 2.
pub fn separation_check(state: &SimState, h0: f64, tol: f64, window: usize) -> MonitorResult {
    const NAME: &str = "separation";
    match state.min_charge_separation() {
        Ok(d) => MonitorResult::at_least(NAME, window, d, 1.0 / (2.0 * h0), tol).with_witness(Some(Witness {
            particle: None,
            charge: None,
            time: state.time,
        })),
        Err(_) => MonitorResult::skipped(NAME, window),
    }
}

pub struct VelocityEnergyBoundMonitor {
    pub k1: f64,
    pub spec: KernelSpec,
    pub tol: f64,
}

impl StepMonitor for VelocityEnergyBoundMonitor {
    fn name(&self) -> &str {
        "velocity_energy_bound"
    }
    fn observe(&mut self, obs: &StepObservation<'_>) -> MonitorResult {
        velocity_energy_bound_check(obs.after, self.k1, &self.spec, self.tol, obs.window)
    }
}

pub struct EtaBoundMonitor {
    pub h0: f64,
    pub tol: f64,
}

impl StepMonitor for EtaBoundMonitor {
    fn name(&self) -> &str {
        "eta_bound"
    }
    fn observe(&mut self, obs: &StepObservation<'_>) -> MonitorResult {
        eta_bound_check(obs.after, self.h0, self.tol, obs.window)
    }
}

pub struct SeparationMonitor {
    pub h0: f64,
    pub tol: f64,
}

impl SeparationMonitor {
    pub const DEFAULT_TOL: f64 = 1e-2;
}

impl StepMonitor for SeparationMonitor {
    fn name(&self) -> &str {
        "separation"
    }
    fn observe(&mut self, obs: &StepObservation<'_>) -> MonitorResult {
        separation_check(obs.after, self.h0, self.tol, obs.window)
    }
}

/// Per-substep `|d sqrt(h)| <= (|E(X)| + |E(xi)| + tol_field) dt (1 + tol)`.
pub struct SqrtHVariationMonitor {
    pub k1: f64,
    pub spec: KernelSpec,
    pub tol: f64,
    pub tol_field: f64,
}

impl SqrtHVariationMonitor {
    pub const DEFAULT_TOL: f64 = 0.05;
}

impl StepMonitor for SqrtHVariationMonitor {
    fn name(&self) -> &str {
        "sqrt_h_variation"
    }
    fn observe(&mut self, obs: &StepObservation<'_>) -> MonitorResult {
        sqrt_h_variation_check(
            obs.before,
            obs.after,
            obs.acc_before,
            obs.acc_after,
            self.k1,
            &self.spec,
            self.tol,
            self.tol_field,
            obs.window,
        )
    }
}
