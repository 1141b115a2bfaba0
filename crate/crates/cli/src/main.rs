use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use vpc_core::diagnostics::{compute_q, default_k1, total_energy, AnalysisParameters};
use vpc_core::field::{
    field_error, plasma_self_field_direct, plasma_self_field_tree, FieldSolverConfig,
};
use vpc_core::io::{prepare, run_command, sample_command, ExitStatus, RunConfig, Snapshot};
use vpc_core::kernels::KernelSpec;
use vpc_core::oracle::{compare_two_body, dt_convergence_study, epsilon_convergence_study, StudyBase};
use vpc_core::Error;

/// Plasma-charge particle simulator with runtime energy diagnostics.
#[derive(Parser)]
#[command(name = "vpc", version)]
struct Cli {
    /// Override the sampling seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for field evaluation and study members (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (overrides `[run] output`).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Suppress progress and report printing.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample, evolve to T with all monitors, write diagnostics and snapshots.
    Run { config: PathBuf },
    /// Write the sampled initial snapshot only.
    Sample { config: PathBuf },
    /// Energy report and analysis parameters of a snapshot.
    Diagnose {
        snapshot: PathBuf,
        /// K1 of the pointwise energy (default max(8H, 1)).
        #[arg(long)]
        k1: Option<f64>,
        /// Window constant K2.
        #[arg(long, default_value_t = 16.0)]
        k2: f64,
    },
    /// Reference computations.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Convergence studies.
    #[command(subcommand)]
    Study(StudyCommand),
    /// Barnes-Hut self-field of a snapshot against direct summation.
    FieldCheck {
        snapshot: PathBuf,
        #[arg(long, default_value_t = FieldSolverConfig::DEFAULT_THETA)]
        theta: f64,
        #[arg(long, default_value_t = FieldSolverConfig::DEFAULT_LEAF_CAPACITY)]
        leaf_capacity: usize,
    },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Simulator vs high-accuracy two-body reference (`[two_body]` section).
    TwoBody { config: PathBuf },
}

#[derive(Subcommand)]
enum StudyCommand {
    /// Cauchy study in the regularization radius (`[study] epsilons`).
    Eps { config: PathBuf },
    /// Fixed-step convergence study (`[study] dts`).
    Dt { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(ExitStatus::ConfigError.code() as u8);
        }
    }
    match dispatch(&cli) {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(ExitStatus::of_error(&e).code() as u8)
        }
    }
}

fn load_config(cli: &Cli, path: &Path) -> Result<RunConfig, Error> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    if let Some(seed) = cli.seed {
        cfg.initial.seed = seed;
    }
    if let Some(out) = &cli.output {
        cfg.run.output = out.display().to_string();
    }
    Ok(cfg)
}

/// Print `key = value` lines for a flat JSON object.
fn print_report(cli: &Cli, report: &Value) {
    if cli.quiet {
        return;
    }
    if let Value::Object(map) = report {
        for (k, v) in map {
            match v {
                Value::Object(_) | Value::Array(_) => println!("{k} = {v}"),
                Value::String(s) => println!("{k} = {s}"),
                _ => println!("{k} = {v}"),
            }
        }
    }
}

fn write_json(dir: &Path, name: &str, report: &Value) -> Result<PathBuf, Error> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(report).expect("JSON value serializes"))?;
    Ok(path)
}

fn dispatch(cli: &Cli) -> Result<ExitStatus, Error> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = load_config(cli, config)?;
            let s = run_command(&cfg, cli.quiet)?;
            print_report(
                cli,
                &json!({
                    "status": s.status,
                    "t_reached": s.t_reached,
                    "windows": s.windows,
                    "substeps": s.substeps,
                    "H0": s.h0,
                    "max_relative_energy_drift": s.max_relative_energy_drift,
                    "Q0": s.q0,
                    "Q_max": s.q_max,
                    "envelope_constant": s.envelope_constant,
                    "min_charge_distance": s.min_charge_distance,
                    "min_charge_separation": s.min_charge_separation,
                    "error": s.error,
                    "output": cfg.run.output,
                }),
            );
            Ok(s.status)
        }
        Command::Sample { config } => {
            let cfg = load_config(cli, config)?;
            let out = PathBuf::from(&cfg.run.output);
            let (p, path) = sample_command(&cfg, &out)?;
            let h = total_energy(&p.state, &p.kernel)?.total;
            let k1 = cfg.run.k1.unwrap_or_else(|| default_k1(h));
            print_report(
                cli,
                &json!({
                    "snapshot": path.display().to_string(),
                    "M": p.state.particle_count(),
                    "N": p.state.charge_count(),
                    "epsilon_plasma": p.kernel.epsilon_plasma,
                    "H": h,
                    "K1": k1,
                    "Q0": compute_q(&p.state, k1, &p.kernel).ok(),
                }),
            );
            Ok(ExitStatus::Passed)
        }
        Command::Diagnose { snapshot, k1, k2 } => {
            let snap = Snapshot::read(snapshot)?;
            let s = &snap.state;
            let kernel = KernelSpec::regularized(snap.header.epsilon, snap.header.epsilon_plasma)?;
            let e = total_energy(s, &kernel)?;
            let k1 = k1.unwrap_or_else(|| default_k1(e.total));
            let q = compute_q(s, k1, &kernel).ok();
            let params = q.map(|q| AnalysisParameters::new(q, k1, *k2)).transpose()?;
            let report = json!({
                "time": s.time,
                "M": s.particle_count(),
                "N": s.charge_count(),
                "epsilon": kernel.epsilon_charge,
                "epsilon_plasma": kernel.epsilon_plasma,
                "H": e.total,
                "kinetic_plasma": e.kinetic_plasma,
                "kinetic_charges": e.kinetic_charges,
                "plasma_charge_potential": e.plasma_charge_potential,
                "plasma_plasma_potential": e.plasma_plasma_potential,
                "charge_charge_potential": e.charge_charge_potential,
                "lambda": 1.0 / (2.0 * e.total),
                "K1": k1,
                "Q": q,
                "parameters": params,
                "min_charge_distance": s.min_charge_distance().ok(),
                "min_charge_separation": s.min_charge_separation().ok(),
            });
            print_report(cli, &report);
            if let Some(dir) = &cli.output {
                write_json(dir, "diagnose.json", &report)?;
            }
            Ok(ExitStatus::Passed)
        }
        Command::FieldCheck {
            snapshot,
            theta,
            leaf_capacity,
        } => {
            let snap = Snapshot::read(snapshot)?;
            let kernel = KernelSpec::regularized(snap.header.epsilon, snap.header.epsilon_plasma)?;
            let mut cfg = FieldSolverConfig::barnes_hut(kernel, *theta);
            cfg.leaf_capacity = *leaf_capacity;
            let ensemble = &snap.state.ensemble;
            let t0 = std::time::Instant::now();
            let tree = plasma_self_field_tree(ensemble, &cfg)?;
            let t_tree = t0.elapsed().as_secs_f64();
            let t1 = std::time::Instant::now();
            let direct = plasma_self_field_direct(ensemble, &kernel)?;
            let t_direct = t1.elapsed().as_secs_f64();
            let err = field_error(&tree, &direct)?;
            let report = json!({
                "M": ensemble.len(),
                "theta": theta,
                "epsilon_plasma": kernel.epsilon_plasma,
                "max_relative_error": err.max_relative,
                "max_pointwise_relative_error": err.max_pointwise_relative,
                "rms_relative_error": err.rms_relative,
                "tree_seconds": t_tree,
                "direct_seconds": t_direct,
            });
            print_report(cli, &report);
            if let Some(dir) = &cli.output {
                write_json(dir, "field_check.json", &report)?;
            }
            Ok(ExitStatus::Passed)
        }
        Command::Oracle(OracleCommand::TwoBody { config }) => {
            let cfg = load_config(cli, config)?;
            let tb = cfg
                .two_body
                .ok_or_else(|| Error::Config("oracle two-body needs a [two_body] section".into()))?;
            let kernel = cfg.kernel_spec(cfg.kernel.epsilon)?;
            let dts = [4.0 * tb.dt, 2.0 * tb.dt, tb.dt];
            let c = compare_two_body(&tb.problem, cfg.run.t_final, kernel, &dts, tb.tolerance, cfg.study.samples)?;
            let report = json!({
                "T": cfg.run.t_final,
                "dt": tb.dt,
                "epsilon": kernel.epsilon_charge,
                "min_separation": c.min_separation,
                "final_position_error": c.finest().final_position_error,
                "max_position_error": c.finest().max_position_error,
                "richardson_order": c.richardson_order,
                "error_order": c.error_order,
                "oracle_energy_drift": c.oracle_energy_drift,
                "oracle_angular_momentum_drift": c.oracle_angular_momentum_drift,
                "runs": c.runs,
            });
            print_report(cli, &report);
            write_json(Path::new(&cfg.run.output), "two_body.json", &report)?;
            Ok(ExitStatus::Passed)
        }
        Command::Study(cmd) => {
            let config = match cmd {
                StudyCommand::Eps { config } | StudyCommand::Dt { config } => config,
            };
            let cfg = load_config(cli, config)?;
            let p = prepare(&cfg)?;
            let base = StudyBase {
                state: p.state,
                field: p.field,
                integrator: cfg.integrator,
                t_final: cfg.run.t_final,
                samples: cfg.study.samples,
            };
            let dir = PathBuf::from(&cfg.run.output);
            match cmd {
                StudyCommand::Eps { .. } => {
                    let r = epsilon_convergence_study(&base, &cfg.study.epsilons, cfg.study.joint_dt)?;
                    let comparable = r.all_comparable();
                    let report = json!({
                        "all_comparable": comparable,
                        "levels": r.levels,
                        "pairs": r.pairs,
                        "joint_pairs": r.joint_pairs,
                    });
                    print_report(cli, &report);
                    write_json(&dir, "eps_study.json", &report)?;
                    Ok(if comparable {
                        ExitStatus::Passed
                    } else {
                        ExitStatus::MonitorFailure
                    })
                }
                StudyCommand::Dt { .. } => {
                    let r = dt_convergence_study(&base, &cfg.study.dts)?;
                    let report = json!({
                        "fitted_order": r.fitted_order,
                        "runs": r.runs,
                    });
                    print_report(cli, &report);
                    write_json(&dir, "dt_study.json", &report)?;
                    Ok(ExitStatus::Passed)
                }
            }
        }
    }
}
