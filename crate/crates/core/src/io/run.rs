//! Batch run: sample, partition into analysis windows, evolve with monitors, write outputs.
//!
//! Output directory contents:
//!
//! - `config.resolved.toml` — every configuration value, defaults included
//! - `diagnostics.csv` — one row at t = 0, every `output_stride` substeps and at the end
//! - `monitors.jsonl` — every monitor result, one JSON object per line
//! - `snapshots/window_NNNNNN.bin` — state after every `snapshot_stride` windows
//! - `snapshots/final.bin` — last state reached
//! - `summary.json` — per-monitor tallies, worst results and measured constants

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, MONITORS};
use super::snapshot::{Snapshot, SnapshotHeader};
use crate::diagnostics::{
    default_k1, fit_growth_envelope, lemma_fac_monitor, protection_sphere_monitor, total_energy,
    AnalysisParameters, EnergyReport, EtaBoundMonitor, MonitorResult, MonitorStatus, Relation,
    SeparationMonitor, SqrtHVariationMonitor, VelocityEnergyBoundMonitor,
};
use crate::dynamics::{build_partition, Propagator, StepMonitor, SubstepRecord};
use crate::error::{Error, Result};
use crate::field::FieldSolverConfig;
use crate::kernels::KernelSpec;
use crate::phase::SimState;
use crate::sampling::{default_plasma_softening, initial_q, sample};

/// Process exit status of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Passed,
    MonitorFailure,
    ConfigError,
    IntegrationFailure,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Passed => 0,
            ExitStatus::MonitorFailure => 1,
            ExitStatus::ConfigError => 2,
            ExitStatus::IntegrationFailure => 3,
        }
    }

    /// Status for an error that stopped a command before or during a run.
    pub fn of_error(e: &Error) -> Self {
        match e {
            Error::IntegrationFailure { .. } | Error::Domain(_) | Error::Oracle(_) => ExitStatus::IntegrationFailure,
            _ => ExitStatus::ConfigError,
        }
    }
}

/// Sampled initial state together with the resolved kernel and solver.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub state: SimState,
    pub kernel: KernelSpec,
    pub field: FieldSolverConfig,
    pub header: SnapshotHeader,
    /// Configuration with `epsilon_plasma` filled in.
    pub config: RunConfig,
}

/// Sample the initial condition and resolve the plasma softening.
pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    let state = sample(&config.initial_condition()?)?;
    let mut fallback = default_plasma_softening(&state.ensemble);
    if fallback == 0.0 {
        // fewer than two particles: softening is irrelevant
        fallback = config.kernel.epsilon;
    }
    let kernel = config.kernel_spec(fallback)?;
    let mut resolved = config.clone();
    resolved.kernel.epsilon_plasma = Some(kernel.epsilon_plasma);
    let header = SnapshotHeader {
        epsilon: kernel.epsilon_charge,
        epsilon_plasma: kernel.epsilon_plasma,
        seed: config.initial.seed,
        config_hash: resolved.hash(),
    };
    Ok(Prepared {
        state,
        kernel,
        field: config.field_config(kernel),
        header,
        config: resolved,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitorTally {
    pub passed: usize,
    pub failed: usize,
    pub skipped: usize,
    pub hard_failures: usize,
    /// Result furthest from (or most beyond) its bound.
    pub worst: Option<MonitorResult>,
}

/// How far a result is from violating its bound; > 1 means violated.
fn severity(r: &MonitorResult) -> f64 {
    match (r.status, r.relation) {
        (MonitorStatus::Skipped, _) => f64::NEG_INFINITY,
        (_, Relation::AtMost) if r.bound > 0.0 => r.measured / r.bound,
        (_, Relation::AtLeast) if r.measured > 0.0 => r.bound / r.measured,
        (_, Relation::AtLeast) => f64::INFINITY,
        _ => r.measured,
    }
}

impl MonitorTally {
    fn add(&mut self, r: &MonitorResult) {
        match r.status {
            MonitorStatus::Passed => self.passed += 1,
            MonitorStatus::Failed => self.failed += 1,
            MonitorStatus::Skipped => self.skipped += 1,
        }
        if r.is_hard_failure() {
            self.hard_failures += 1;
        }
        let worse = match &self.worst {
            None => true,
            Some(w) => severity(r) > severity(w),
        };
        if worse {
            self.worst = Some(r.clone());
        }
    }
}

/// Final report of a run, written as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: ExitStatus,
    pub exit_code: i32,
    pub error: Option<String>,
    pub t_final: f64,
    pub t_reached: f64,
    pub windows: usize,
    pub substeps: usize,
    pub particles: usize,
    pub charges: usize,
    pub epsilon: f64,
    pub epsilon_plasma: f64,
    pub seed: u64,
    pub k1: f64,
    pub k2: f64,
    pub h0: f64,
    pub h_final: f64,
    pub max_relative_energy_drift: f64,
    /// `1 / (2 H(0))`, the guaranteed charge separation.
    pub lambda: f64,
    pub q0: Option<f64>,
    pub q_max: Option<f64>,
    /// Smallest `C` with `Q(t) <= (Q0 + C) exp(C (1 + t))` at every window end.
    pub envelope_constant: Option<f64>,
    pub min_charge_distance: Option<f64>,
    pub min_charge_separation: Option<f64>,
    /// Tallies keyed by result name.
    pub monitors: BTreeMap<String, MonitorTally>,
    /// Largest measured value of each report-only result.
    pub empirical_constants: BTreeMap<String, f64>,
}

/// Output locations of a run.
pub struct OutputPaths {
    pub dir: PathBuf,
}

impl OutputPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        OutputPaths { dir: dir.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.dir.join("config.resolved.toml")
    }
    pub fn diagnostics(&self) -> PathBuf {
        self.dir.join("diagnostics.csv")
    }
    pub fn monitors(&self) -> PathBuf {
        self.dir.join("monitors.jsonl")
    }
    pub fn summary(&self) -> PathBuf {
        self.dir.join("summary.json")
    }
    pub fn snapshot_dir(&self) -> PathBuf {
        self.dir.join("snapshots")
    }
    pub fn window_snapshot(&self, windows_done: usize) -> PathBuf {
        self.snapshot_dir().join(format!("window_{windows_done:06}.bin"))
    }
    pub fn final_snapshot(&self) -> PathBuf {
        self.snapshot_dir().join("final.bin")
    }
}

/// Monitor a result name is counted under.
fn owner(result_name: &str) -> &'static str {
    MONITORS
        .iter()
        .map(|(n, _)| *n)
        .find(|n| result_name.starts_with(n))
        .unwrap_or(if result_name == "virial_convexity" { "protection_sphere" } else { "other" })
}

struct DiagnosticsWriter {
    csv: csv::Writer<fs::File>,
    jsonl: BufWriter<fs::File>,
    columns: Vec<&'static str>,
    passed: BTreeMap<&'static str, usize>,
    failed: BTreeMap<&'static str, usize>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl DiagnosticsWriter {
    fn create(paths: &OutputPaths, columns: Vec<&'static str>) -> Result<Self> {
        let mut csv = csv::Writer::from_path(paths.diagnostics()).map_err(csv_err)?;
        let mut header = vec![
            "t".to_string(),
            "H".into(),
            "kinetic_plasma".into(),
            "Q_running".into(),
            "min_charge_distance".into(),
            "min_charge_separation".into(),
        ];
        for c in &columns {
            header.push(format!("{c}_passed"));
            header.push(format!("{c}_failed"));
        }
        csv.write_record(&header).map_err(csv_err)?;
        Ok(DiagnosticsWriter {
            csv,
            jsonl: BufWriter::new(fs::File::create(paths.monitors())?),
            columns,
            passed: BTreeMap::new(),
            failed: BTreeMap::new(),
        })
    }

    fn count(&mut self, r: &MonitorResult) -> Result<()> {
        let o = owner(&r.name);
        match r.status {
            MonitorStatus::Passed => *self.passed.entry(o).or_default() += 1,
            MonitorStatus::Failed => *self.failed.entry(o).or_default() += 1,
            MonitorStatus::Skipped => {}
        }
        serde_json::to_writer(&mut self.jsonl, r).map_err(|e| Error::Io(e.into()))?;
        self.jsonl.write_all(b"\n")?;
        Ok(())
    }

    fn row(
        &mut self,
        t: f64,
        energy: &EnergyReport,
        q_running: Option<f64>,
        min_distance: Option<f64>,
        min_separation: Option<f64>,
    ) -> Result<()> {
        let mut rec = vec![
            t.to_string(),
            energy.total.to_string(),
            energy.kinetic_plasma.to_string(),
            fmt_opt(q_running),
            fmt_opt(min_distance),
            fmt_opt(min_separation),
        ];
        for c in &self.columns {
            rec.push(self.passed.get(c).copied().unwrap_or(0).to_string());
            rec.push(self.failed.get(c).copied().unwrap_or(0).to_string());
        }
        self.csv.write_record(&rec).map_err(csv_err)
    }

    fn flush(&mut self) -> Result<()> {
        self.csv.flush()?;
        self.jsonl.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn opt_min(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn opt_max(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Write the initial snapshot only (the `sample` subcommand).
pub fn sample_command(config: &RunConfig, out_dir: &Path) -> Result<(Prepared, PathBuf)> {
    let prepared = prepare(config)?;
    let paths = OutputPaths::new(out_dir);
    fs::create_dir_all(paths.snapshot_dir())?;
    fs::write(paths.config(), prepared.config.echo())?;
    let path = paths.window_snapshot(0);
    Snapshot {
        header: prepared.header,
        state: prepared.state.clone(),
    }
    .write(&path)?;
    Ok((prepared, path))
}

/// Run `config` to `T`, writing all outputs under `config.run.output`.
///
/// Configuration and sampling errors are returned as `Err`; an integration failure
/// still produces every output (flushed up to the failure) and a summary with
/// [`ExitStatus::IntegrationFailure`].
pub fn run_command(config: &RunConfig, quiet: bool) -> Result<RunSummary> {
    let prepared = prepare(config)?;
    let cfg = &prepared.config;
    let paths = OutputPaths::new(&cfg.run.output);
    fs::create_dir_all(paths.snapshot_dir())?;
    fs::write(paths.config(), cfg.echo())?;

    let kernel = prepared.kernel;
    let field = prepared.field;
    let header = prepared.header;
    let integrator = cfg.integrator;
    let k2 = integrator.window_k2;
    let write_snapshot = |state: &SimState, path: PathBuf| {
        Snapshot {
            header,
            state: state.clone(),
        }
        .write(&path)
    };

    let mut state = prepared.state;
    let e0 = total_energy(&state, &kernel)?;
    let h0 = e0.total;
    let k1 = cfg.run.k1.unwrap_or_else(|| default_k1(h0));
    let coupled = !state.charges.is_empty() && !state.ensemble.is_empty();
    let q0 = if coupled { Some(initial_q(&state, k1, &kernel)?) } else { None };
    // without plasma-charge pairs there is no Q; windows fall back to Q = 1
    let mut partition = build_partition(cfg.run.t_final, q0.unwrap_or(1.0), &integrator)?;

    let on = |name: &str| cfg.monitor(name).enabled;
    let tol = |name: &str| cfg.monitor(name).tol.unwrap_or(0.0);
    let mut monitors: Vec<Box<dyn StepMonitor>> = Vec::new();
    if on("velocity_energy_bound") {
        monitors.push(Box::new(VelocityEnergyBoundMonitor {
            k1,
            spec: kernel,
            tol: tol("velocity_energy_bound"),
        }));
    }
    if on("eta_bound") {
        monitors.push(Box::new(EtaBoundMonitor {
            h0,
            tol: tol("eta_bound"),
        }));
    }
    if on("separation") {
        monitors.push(Box::new(SeparationMonitor {
            h0,
            tol: tol("separation"),
        }));
    }
    if on("sqrt_h_variation") {
        monitors.push(Box::new(SqrtHVariationMonitor {
            k1,
            spec: kernel,
            tol: tol("sqrt_h_variation"),
            tol_field: cfg.monitor("sqrt_h_variation").tol_field.unwrap_or(0.0),
        }));
    }
    let columns: Vec<&'static str> = MONITORS.iter().map(|(n, _)| *n).filter(|n| on(n)).collect();

    let mut prop = Propagator::new(field, integrator);
    prop.k1 = coupled.then_some(k1);
    prop.track_energy = true;
    prop.record_trace = coupled && (on("lemma_fac") || on("protection_sphere"));

    let mut out = DiagnosticsWriter::create(&paths, columns)?;
    let mut tallies: BTreeMap<String, MonitorTally> = BTreeMap::new();
    let mut q_running = q0;
    let mut min_distance = state.min_charge_distance().ok();
    let mut min_separation = state.min_charge_separation().ok();
    let mut max_drift = 0.0f64;
    let mut last_energy = e0;
    let mut last_row_time = state.time;
    let mut envelope = Vec::new();
    out.row(state.time, &e0, q_running, min_distance, min_separation)?;
    write_snapshot(&state, paths.window_snapshot(0))?;

    let drift = |e: &EnergyReport| if h0 != 0.0 { ((e.total - h0) / h0).abs() } else { (e.total - h0).abs() };

    let mut error = None;
    let mut i = 0;
    let progress_every = (partition.window_count() / 10).max(1);
    while i < partition.window_count() {
        let (_, t_end) = partition.window(i);
        let (records, window_state, run) = match prop.run_window(state, t_end, i, &mut monitors) {
            Ok(mut run) => {
                let records = std::mem::take(&mut run.records);
                let s = run.state.clone();
                (records, s, Some(run))
            }
            Err(abort) => {
                error = Some(abort.error);
                (abort.records, abort.state, None)
            }
        };
        let mut process = |rec: &SubstepRecord, out: &mut DiagnosticsWriter| -> Result<()> {
            for r in &rec.results {
                out.count(r)?;
                tallies.entry(r.name.clone()).or_default().add(r);
            }
            q_running = opt_max(q_running, rec.q);
            min_distance = opt_min(min_distance, rec.min_charge_distance);
            min_separation = opt_min(min_separation, rec.min_charge_separation);
            if let Some(e) = &rec.energy {
                max_drift = max_drift.max(drift(e));
                last_energy = *e;
                last_row_time = rec.time;
                out.row(rec.time, e, q_running, rec.min_charge_distance, rec.min_charge_separation)?;
            }
            Ok(())
        };
        for rec in &records {
            process(rec, &mut out)?;
        }
        state = window_state;
        let Some(run) = run else {
            break;
        };

        let q_i = q_running;
        partition.q_windows[i] = run.q_window;
        if let Some(q) = q_i {
            envelope.push((t_end, q));
        }
        if !run.trace.is_empty() {
            let mut window_results = Vec::new();
            if let Some(q) = q_i {
                if on("lemma_fac") {
                    window_results.push(lemma_fac_monitor(&run.trace, q, tol("lemma_fac"), i));
                }
                if on("protection_sphere") {
                    let params = AnalysisParameters::new(q, k1, k2)?;
                    let report = protection_sphere_monitor(&run.trace, &params, &kernel, i);
                    window_results.extend(report.results().into_iter().cloned());
                }
            }
            for r in &window_results {
                out.count(r)?;
                tallies.entry(r.name.clone()).or_default().add(r);
            }
        }
        out.flush()?;
        if let Some(q) = q_running {
            partition.refine_after(i + 1, q, k2);
        }
        i += 1;
        if i % cfg.run.snapshot_stride == 0 && i < partition.window_count() {
            write_snapshot(&state, paths.window_snapshot(i))?;
        }
        if !quiet && i % progress_every == 0 {
            eprintln!(
                "window {i}/{} t = {:.4} substeps = {} Q = {} drift = {:.2e}",
                partition.window_count(),
                state.time,
                prop.substeps_done(),
                fmt_opt(q_running),
                max_drift
            );
        }
    }

    if error.is_none() && last_row_time != state.time {
        match total_energy(&state, &kernel) {
            Ok(e) => {
                max_drift = max_drift.max(drift(&e));
                last_energy = e;
                out.row(state.time, &e, q_running, state.min_charge_distance().ok(), state.min_charge_separation().ok())?;
            }
            Err(e) => error = Some(e),
        }
    }
    out.flush()?;
    write_snapshot(&state, paths.final_snapshot())?;

    let hard_failures: usize = tallies.values().map(|t| t.hard_failures).sum();
    let status = match &error {
        Some(e) => ExitStatus::of_error(e).max_severity(ExitStatus::IntegrationFailure),
        None if hard_failures > 0 => ExitStatus::MonitorFailure,
        None => ExitStatus::Passed,
    };
    let empirical_constants = tallies
        .iter()
        .filter_map(|(name, t)| {
            let w = t.worst.as_ref()?;
            (w.relation == Relation::Report && w.status != MonitorStatus::Skipped).then(|| (name.clone(), w.measured))
        })
        .collect();
    let summary = RunSummary {
        status,
        exit_code: status.code(),
        error: error.as_ref().map(|e| e.to_string()),
        t_final: cfg.run.t_final,
        t_reached: state.time,
        windows: i,
        substeps: prop.substeps_done(),
        particles: state.particle_count(),
        charges: state.charge_count(),
        epsilon: kernel.epsilon_charge,
        epsilon_plasma: kernel.epsilon_plasma,
        seed: cfg.initial.seed,
        k1,
        k2,
        h0,
        h_final: last_energy.total,
        max_relative_energy_drift: max_drift,
        lambda: 1.0 / (2.0 * h0),
        q0,
        q_max: q_running,
        envelope_constant: q0.and_then(|q| fit_growth_envelope(q, &envelope).ok()),
        min_charge_distance: min_distance,
        min_charge_separation: min_separation,
        monitors: tallies,
        empirical_constants,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(e.into()))?;
    fs::write(paths.summary(), json)?;
    Ok(summary)
}

impl ExitStatus {
    /// Integration-time errors always map to the integration-failure status.
    fn max_severity(self, floor: ExitStatus) -> ExitStatus {
        if self.code() >= floor.code() {
            self
        } else {
            floor
        }
    }
}
