//! Simulator against the two-body reference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::studies::{log_log_slope, simulate};
use super::two_body::{two_body_reference, TwoBodyProblem};
use crate::dynamics::IntegratorConfig;
use crate::error::{Error, Result};
use crate::field::FieldSolverConfig;
use crate::kernels::KernelSpec;
use crate::vec3::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoBodyRun {
    pub dt: f64,
    /// Largest position error (particle or charge) at `T`.
    pub final_position_error: f64,
    /// Largest position error over the comparison times.
    pub max_position_error: f64,
    pub energy_drift: f64,
    pub substeps: usize,
    final_positions: [Vec3; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoBodyComparison {
    pub oracle_energy_drift: f64,
    pub oracle_angular_momentum_drift: f64,
    /// Closest approach along the reference trajectory.
    pub min_separation: f64,
    /// Runs ordered from the largest to the smallest step.
    pub runs: Vec<TwoBodyRun>,
    /// Slope of `log |x(dt_k) - x(dt_{k+1})|` against `log dt_k` (needs three steps).
    pub richardson_order: Option<f64>,
    /// Slope of `log error` against `log dt`.
    pub error_order: Option<f64>,
}

impl TwoBodyComparison {
    /// Run with the smallest step.
    pub fn finest(&self) -> &TwoBodyRun {
        self.runs.last().expect("at least one run")
    }
}

/// Fixed-step simulator runs at every `dt` compared with the reference at `samples`
/// equally spaced times. The charge must be free (the simulator moves every charge).
pub fn compare_two_body(
    problem: &TwoBodyProblem,
    t_final: f64,
    kernel: KernelSpec,
    dts: &[f64],
    tolerance: f64,
    samples: usize,
) -> Result<TwoBodyComparison> {
    if problem.fixed_charge {
        return Err(Error::InvalidParameter("the simulator cannot pin a charge; set fixed_charge = false".into()));
    }
    if dts.is_empty() || dts.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidParameter("need at least one dt > 0".into()));
    }
    let n = samples.max(1);
    let times: Vec<f64> = (1..=n).map(|i| t_final * i as f64 / n as f64).collect();
    let reference = two_body_reference(problem, t_final, tolerance, t_final / n as f64)?;
    let field = FieldSolverConfig::direct(kernel);
    let integrator = IntegratorConfig::default();

    let mut order = dts.to_vec();
    order.sort_by(|a, b| b.total_cmp(a));
    let runs = order
        .par_iter()
        .map(|&dt| -> Result<TwoBodyRun> {
            let sim = simulate(problem.sim_state()?, &field, &integrator, Some(dt), &times)?;
            let mut max_err = 0.0f64;
            let mut final_err = 0.0;
            for (k, &t) in times.iter().enumerate() {
                let r = reference.at(t);
                let err = (sim.particles[k][0] - r.particle_position)
                    .norm()
                    .max((sim.charges[k][0] - r.charge_position).norm());
                max_err = max_err.max(err);
                final_err = err;
            }
            let fs = &sim.final_state;
            Ok(TwoBodyRun {
                dt,
                final_position_error: final_err,
                max_position_error: max_err,
                energy_drift: sim.energy_drift,
                substeps: sim.substeps,
                final_positions: [fs.ensemble.particles()[0].position, fs.charges[0].position],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let diffs: Vec<(f64, f64)> = runs
        .windows(2)
        .map(|w| {
            let d = (w[0].final_positions[0] - w[1].final_positions[0])
                .norm()
                .max((w[0].final_positions[1] - w[1].final_positions[1]).norm());
            (w[0].dt, d)
        })
        .filter(|&(_, d)| d > 0.0)
        .collect();
    let richardson_order = if diffs.len() >= 2 { log_log_slope(&diffs) } else { None };
    let errors: Vec<(f64, f64)> = runs
        .iter()
        .map(|r| (r.dt, r.final_position_error))
        .filter(|&(_, e)| e > 0.0)
        .collect();
    Ok(TwoBodyComparison {
        oracle_energy_drift: reference.energy_drift,
        oracle_angular_momentum_drift: reference.angular_momentum_drift,
        min_separation: reference.min_separation(),
        runs,
        richardson_order,
        error_order: log_log_slope(&errors),
    })
}
