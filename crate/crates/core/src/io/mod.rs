//! Configuration files, binary snapshots and batch-run orchestration.

mod config;
mod run;
mod snapshot;

pub use config::{
    ChargeSection, FieldSection, InitialSection, KernelSection, MonitorSettings, RunConfig, RunSection, ShapeKind,
    StudySection, TwoBodySection, VelocityKind, DEFAULT_TOL_FIELD, MONITORS,
};
pub use run::{prepare, run_command, sample_command, ExitStatus, MonitorTally, OutputPaths, Prepared, RunSummary};
pub use snapshot::{Snapshot, SnapshotHeader, MAGIC, VERSION};
