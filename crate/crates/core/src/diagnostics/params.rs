use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::phase::{ChargeState, Macroparticle, SimState};

/// Derived per-window quantities of the single- and many-charge analysis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParameters {
    pub q: f64,
    /// Window length `1 / (K2 Q)`.
    pub delta_t: f64,
    /// Velocity radius `Q^(3/4)` separating high- and low-energy trajectories.
    pub r: f64,
    /// Protection-sphere radius `Q^(-7/8)`.
    pub delta: f64,
    /// Plasma-plasma cutoff length `Q^(-2)`.
    pub l: f64,
    pub k1: f64,
    pub k2: f64,
}

impl AnalysisParameters {
    pub fn new(q: f64, k1: f64, k2: f64) -> Result<Self> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::InvalidParameter(format!("Q must be positive, got {q}")));
        }
        if !(k2 > 0.0) {
            return Err(Error::InvalidParameter(format!("K2 must be positive, got {k2}")));
        }
        Ok(AnalysisParameters {
            q,
            delta_t: 1.0 / (k2 * q),
            r: q.powf(0.75),
            delta: q.powf(-0.875),
            l: q.powi(-2),
            k1,
            k2,
        })
    }

    /// Whether `k1` satisfies `K1 >= max(8H, 1)` for total energy `h`.
    pub fn k1_admissible(&self, h: f64) -> bool {
        self.k1 >= default_k1(h)
    }
}

/// `max(8H, 1)`.
pub fn default_k1(total_energy: f64) -> f64 {
    (8.0 * total_energy).max(1.0)
}

/// Pointwise energy of a plasma particle relative to one charge:
/// `|v - eta|^2 / 2 + phi_eps(x - xi) + K1`.
pub fn pointwise_energy(
    particle: &Macroparticle,
    charge: &ChargeState,
    k1: f64,
    spec: &KernelSpec,
) -> f64 {
    0.5 * (particle.velocity - charge.velocity).norm_squared()
        + spec.charge_potential(particle.position - charge.position)
        + k1
}

/// Instantaneous `Q = max_{j, alpha} sqrt(h_alpha(x_j, v_j))`.
pub fn compute_q(state: &SimState, k1: f64, spec: &KernelSpec) -> Result<f64> {
    if state.charges.is_empty() {
        return Err(Error::Empty("charge list"));
    }
    if state.ensemble.is_empty() {
        return Err(Error::Empty("plasma ensemble"));
    }
    let h_max = state
        .ensemble
        .particles()
        .par_iter()
        .map(|p| {
            state
                .charges
                .iter()
                .map(|c| pointwise_energy(p, c, k1, spec))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    Ok(h_max.sqrt())
}
