//! Convergence harnesses: repeated full simulations that differ only in the
//! regularization radius or the time step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::total_energy;
use crate::dynamics::{IntegratorConfig, Propagator};
use crate::error::{Error, Result};
use crate::field::FieldSolverConfig;
use crate::phase::SimState;
use crate::vec3::Vec3;

/// Everything a study member shares: initial state, solver and integrator settings.
#[derive(Clone, Debug)]
pub struct StudyBase {
    pub state: SimState,
    pub field: FieldSolverConfig,
    pub integrator: IntegratorConfig,
    pub t_final: f64,
    /// Number of equally spaced comparison times in `(0, T]`.
    pub samples: usize,
}

impl StudyBase {
    fn output_times(&self) -> Vec<f64> {
        let n = self.samples.max(1);
        (1..=n).map(|i| self.t_final * i as f64 / n as f64).collect()
    }
}

/// One simulation sampled at fixed output times.
#[derive(Clone, Debug)]
pub struct Simulated {
    pub times: Vec<f64>,
    /// `charges[k][alpha]`: charge positions at output time `k`.
    pub charges: Vec<Vec<Vec3>>,
    pub particles: Vec<Vec<Vec3>>,
    pub final_state: SimState,
    /// Smallest particle-charge distance over every substep (and t = 0).
    pub min_charge_distance: Option<f64>,
    /// Some substep exceeded `cfl_charge * max(eps, d)^(3/2)` for the distance at its start.
    pub unstable: bool,
    /// Max relative deviation of H at the output times.
    pub energy_drift: f64,
    pub substeps: usize,
}

fn closest(d: Option<f64>, sep: Option<f64>) -> Option<f64> {
    match (d, sep) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

/// Run `state` to each of `times` (increasing), with adaptive substeps or `fixed_dt`.
pub fn simulate(
    state: SimState,
    field: &FieldSolverConfig,
    integrator: &IntegratorConfig,
    fixed_dt: Option<f64>,
    times: &[f64],
) -> Result<Simulated> {
    let mut prop = Propagator::new(*field, *integrator);
    prop.fixed_dt = fixed_dt;
    let h0 = total_energy(&state, &field.kernel)?.total;
    let mut min_d = state.min_charge_distance().ok();
    let mut prev_closest = closest(state.min_charge_distance().ok(), state.min_charge_separation().ok());
    let mut unstable = false;
    let mut energy_drift: f64 = 0.0;
    let mut out = Simulated {
        times: times.to_vec(),
        charges: Vec::with_capacity(times.len()),
        particles: Vec::with_capacity(times.len()),
        final_state: state.clone(),
        min_charge_distance: None,
        unstable: false,
        energy_drift: 0.0,
        substeps: 0,
    };
    let mut current = state;
    for (k, &t) in times.iter().enumerate() {
        let run = prop.run_window(current, t, k, &mut []).map_err(|a| a.error)?;
        for r in &run.records {
            if let Some(d) = prev_closest {
                let bound = integrator.cfl_charge * d.max(field.kernel.epsilon_charge).powf(1.5);
                if r.dt > bound * (1.0 + 1e-12) {
                    unstable = true;
                }
            }
            prev_closest = closest(r.min_charge_distance, r.min_charge_separation);
            if let Some(d) = r.min_charge_distance {
                min_d = Some(min_d.map_or(d, |m: f64| m.min(d)));
            }
        }
        current = run.state;
        let h = total_energy(&current, &field.kernel)?.total;
        if h0 != 0.0 {
            energy_drift = energy_drift.max(((h - h0) / h0).abs());
        }
        out.charges.push(current.charges.iter().map(|c| c.position).collect());
        out.particles.push(current.ensemble.positions().collect());
    }
    out.final_state = current;
    out.min_charge_distance = min_d;
    out.unstable = unstable;
    out.energy_drift = energy_drift;
    out.substeps = prop.substeps_done();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonLevel {
    pub epsilon: f64,
    pub dt_scale: f64,
    pub min_charge_distance: Option<f64>,
    /// Some particle came closer to a charge than this level's `epsilon`.
    pub entered_core: bool,
    pub substeps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonPair {
    pub coarse_epsilon: f64,
    pub fine_epsilon: f64,
    pub dt_scale: f64,
    /// `sup_t max_alpha |xi_alpha^coarse(t) - xi_alpha^fine(t)|`
    pub charge_sup_difference: f64,
    /// `sup_t mean_j |x_j^coarse(t) - x_j^fine(t)|` over matched particle identities.
    pub particle_mean_difference: f64,
    pub comparable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonStudyReport {
    pub levels: Vec<EpsilonLevel>,
    /// Consecutive levels at the base time step.
    pub pairs: Vec<EpsilonPair>,
    /// Consecutive levels with the time step halved along with epsilon.
    pub joint_pairs: Vec<EpsilonPair>,
}

impl EpsilonStudyReport {
    pub fn all_comparable(&self) -> bool {
        self.pairs.iter().all(|p| p.comparable)
    }
}

fn compare(a: &Simulated, b: &Simulated) -> (f64, f64) {
    let mut charge = 0.0f64;
    let mut particle = 0.0f64;
    for k in 0..a.times.len() {
        for (x, y) in a.charges[k].iter().zip(&b.charges[k]) {
            charge = charge.max((*x - *y).norm());
        }
        let m = a.particles[k].len();
        if m > 0 {
            let mean = a.particles[k]
                .iter()
                .zip(&b.particles[k])
                .map(|(x, y)| (*x - *y).norm())
                .sum::<f64>()
                / m as f64;
            particle = particle.max(mean);
        }
    }
    (charge, particle)
}

/// Run the base problem once per `epsilon` and compare consecutive levels.
///
/// A pair is comparable only if neither run brought a particle inside its own
/// regularization radius; otherwise the kernels differ on the visited region.
pub fn epsilon_convergence_study(base: &StudyBase, epsilons: &[f64], joint_dt: bool) -> Result<EpsilonStudyReport> {
    if epsilons.is_empty() {
        return Err(Error::InvalidParameter("epsilon list is empty".into()));
    }
    let eps_max = epsilons.iter().cloned().fold(0.0, f64::max);
    if let Ok(d0) = base.state.min_charge_distance() {
        if !(d0 > 4.0 * eps_max) {
            return Err(Error::InvalidParameter(format!(
                "initial vacuum distance {d0} must exceed 4 * max(epsilon) = {}",
                4.0 * eps_max
            )));
        }
    }
    let times = base.output_times();
    let mut members: Vec<(f64, f64)> = epsilons.iter().map(|&e| (e, 1.0)).collect();
    if joint_dt {
        members.extend(epsilons.iter().enumerate().skip(1).map(|(k, &e)| (e, 0.5f64.powi(k as i32))));
    }
    let runs: Vec<Simulated> = members
        .par_iter()
        .map(|&(eps, scale)| {
            let mut field = base.field;
            field.kernel.epsilon_charge = eps;
            field.validate()?;
            simulate(base.state.clone(), &field, &base.integrator.scaled(scale), None, &times)
        })
        .collect::<Result<_>>()?;

    let levels: Vec<EpsilonLevel> = members
        .iter()
        .zip(&runs)
        .map(|(&(epsilon, dt_scale), r)| EpsilonLevel {
            epsilon,
            dt_scale,
            min_charge_distance: r.min_charge_distance,
            entered_core: r.min_charge_distance.is_some_and(|d| d < epsilon),
            substeps: r.substeps,
        })
        .collect();
    let pair = |i: usize, j: usize| {
        let (charge, particle) = compare(&runs[i], &runs[j]);
        EpsilonPair {
            coarse_epsilon: levels[i].epsilon,
            fine_epsilon: levels[j].epsilon,
            dt_scale: levels[j].dt_scale,
            charge_sup_difference: charge,
            particle_mean_difference: particle,
            comparable: !levels[i].entered_core && !levels[j].entered_core,
        }
    };
    let n = epsilons.len();
    let pairs = (1..n).map(|k| pair(k - 1, k)).collect();
    // joint members follow the base ones: level 0 at scale 1, then n..2n-1
    let joint_pairs = if joint_dt {
        (1..n).map(|k| pair(if k == 1 { 0 } else { n + k - 2 }, n + k - 1)).collect()
    } else {
        Vec::new()
    };
    Ok(EpsilonStudyReport {
        levels,
        pairs,
        joint_pairs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtRun {
    pub dt: f64,
    /// Max final position difference over all bodies against the finest run.
    pub error_vs_finest: Option<f64>,
    /// Same against the next finer run (Richardson difference).
    pub difference_to_next: Option<f64>,
    pub energy_drift: f64,
    pub unstable: bool,
    pub substeps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtStudyReport {
    pub runs: Vec<DtRun>,
    /// Least-squares slope of `log(difference_to_next)` against `log(dt)` over stable runs.
    pub fitted_order: Option<f64>,
}

fn final_difference(a: &SimState, b: &SimState) -> f64 {
    let p = a
        .ensemble
        .particles()
        .iter()
        .zip(b.ensemble.particles())
        .map(|(x, y)| (x.position - y.position).norm());
    let c = a.charges.iter().zip(&b.charges).map(|(x, y)| (x.position - y.position).norm());
    p.chain(c).fold(0.0, f64::max)
}

/// Least-squares slope through `(ln x, ln y)`.
pub(crate) fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Fixed-step runs at each `dt` (any order); errors are measured on the final state.
pub fn dt_convergence_study(base: &StudyBase, dts: &[f64]) -> Result<DtStudyReport> {
    if dts.is_empty() {
        return Err(Error::InvalidParameter("dt list is empty".into()));
    }
    if dts.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidParameter("every dt must be > 0".into()));
    }
    let mut order: Vec<f64> = dts.to_vec();
    order.sort_by(|a, b| b.total_cmp(a));
    let times = [base.t_final];
    let runs: Vec<Simulated> = order
        .par_iter()
        .map(|&dt| simulate(base.state.clone(), &base.field, &base.integrator, Some(dt), &times))
        .collect::<Result<_>>()?;
    let finest = runs.len() - 1;
    let out: Vec<DtRun> = runs
        .iter()
        .enumerate()
        .map(|(k, r)| DtRun {
            dt: order[k],
            error_vs_finest: (k != finest).then(|| final_difference(&r.final_state, &runs[finest].final_state)),
            difference_to_next: (k != finest).then(|| final_difference(&r.final_state, &runs[k + 1].final_state)),
            energy_drift: r.energy_drift,
            unstable: r.unstable,
            substeps: r.substeps,
        })
        .collect();
    let points: Vec<(f64, f64)> = out
        .iter()
        .enumerate()
        .filter(|(k, r)| *k != finest && !r.unstable && !runs[k + 1].unstable)
        .filter_map(|(_, r)| r.difference_to_next.filter(|&d| d > 0.0).map(|d| (r.dt, d)))
        .collect();
    Ok(DtStudyReport {
        runs: out,
        fitted_order: log_log_slope(&points),
    })
}
