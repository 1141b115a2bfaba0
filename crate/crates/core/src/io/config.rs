//! TOML run configuration.
//!
//! Every section except `[run]` and `[initial]` is optional; missing keys take the
//! defaults documented on each field. Unknown keys are rejected. [`RunConfig::echo`]
//! renders the fully resolved configuration, which parses back to the same value.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{SeparationMonitor, SqrtHVariationMonitor};
use crate::dynamics::IntegratorConfig;
use crate::error::{Error, Result};
use crate::field::{FieldMethod, FieldSolverConfig};
use crate::kernels::{KernelMode, KernelSpec};
use crate::oracle::TwoBodyProblem;
use crate::phase::ChargeState;
use crate::sampling::{InitialCondition, SpatialShape, VelocityShape};
use crate::vec3::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub initial: InitialSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub field: FieldSection,
    #[serde(default)]
    pub monitors: BTreeMap<String, MonitorSettings>,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_body: Option<TwoBodySection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Final time.
    #[serde(rename = "T")]
    pub t_final: f64,
    /// Output directory (default `out`).
    #[serde(default = "default_output")]
    pub output: String,
    /// Analysis windows between snapshot files (default 64). The initial and final
    /// states are always written.
    #[serde(default = "default_snapshot_stride")]
    pub snapshot_stride: usize,
    /// `K1` of the pointwise energy; default `max(8 H(0), 1)`.
    #[serde(default, rename = "K1", skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
}

fn default_output() -> String {
    "out".into()
}

fn default_snapshot_stride() -> usize {
    64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Ball,
    Shell,
    Box,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityKind {
    UniformBall,
    TruncatedMaxwellian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// Number of macroparticles.
    #[serde(rename = "M")]
    pub particle_count: usize,
    /// `ball` (default), `shell` or `box`.
    #[serde(default = "default_shape")]
    pub shape: ShapeKind,
    /// Ball/shell center (default origin).
    #[serde(default)]
    pub center: Vec3,
    /// Ball radius (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec3>,
    /// `uniform_ball` (default) or `truncated_maxwellian`.
    #[serde(default = "default_velocity")]
    pub velocity: VelocityKind,
    /// Velocity cutoff (default 1).
    #[serde(default = "one")]
    pub v_max: f64,
    /// Maxwellian width (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Vacuum radius `delta_0` around each charge (default 0.3).
    #[serde(default = "default_vacuum")]
    pub vacuum_radius: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub charges: Vec<ChargeSection>,
}

fn default_shape() -> ShapeKind {
    ShapeKind::Ball
}

fn default_velocity() -> VelocityKind {
    VelocityKind::UniformBall
}

fn one() -> f64 {
    1.0
}

fn default_vacuum() -> f64 {
    0.3
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargeSection {
    pub position: Vec3,
    #[serde(default)]
    pub velocity: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    /// Regularization radius of the plasma-charge kernel (default 0.05).
    pub epsilon: f64,
    /// Plummer softening of plasma-plasma interactions; default is the mean
    /// interparticle spacing of the sampled ensemble.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_plasma: Option<f64>,
    /// `regularized` (default) or `exact`.
    pub mode: KernelMode,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            epsilon: 0.05,
            epsilon_plasma: None,
            mode: KernelMode::Regularized,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSection {
    /// `direct` (default) or `barnes_hut`.
    pub method: FieldMethod,
    pub theta: f64,
    pub leaf_capacity: usize,
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection {
            method: FieldMethod::Direct,
            theta: FieldSolverConfig::DEFAULT_THETA,
            leaf_capacity: FieldSolverConfig::DEFAULT_LEAF_CAPACITY,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSettings {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Relative tolerance; each monitor has its own default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Absolute field allowance of `sqrt_h_variation`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_field: Option<f64>,
}

fn yes() -> bool {
    true
}

/// Monitor names with their default tolerances.
pub const MONITORS: [(&str, f64); 6] = [
    ("velocity_energy_bound", 1e-3),
    ("eta_bound", 1e-3),
    ("separation", SeparationMonitor::DEFAULT_TOL),
    ("sqrt_h_variation", SqrtHVariationMonitor::DEFAULT_TOL),
    ("lemma_fac", 0.05),
    ("protection_sphere", 0.0),
];

/// Default `tol_field` of the `sqrt_h_variation` monitor.
pub const DEFAULT_TOL_FIELD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub epsilons: Vec<f64>,
    pub dts: Vec<f64>,
    /// Also halve the time step together with epsilon.
    pub joint_dt: bool,
    /// Comparison times per run.
    pub samples: usize,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            epsilons: vec![0.1, 0.05, 0.025],
            dts: vec![4e-3, 2e-3, 1e-3],
            joint_dt: false,
            samples: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoBodySection {
    #[serde(flatten)]
    pub problem: TwoBodyProblem,
    /// Oracle local tolerance (default 1e-12).
    #[serde(default = "default_oracle_tol")]
    pub tolerance: f64,
    /// Oracle sample spacing (default 1e-3).
    #[serde(default = "default_sample_dt")]
    pub sample_dt: f64,
    /// Fixed simulator step compared with the oracle (default 1e-4).
    #[serde(default = "default_two_body_dt")]
    pub dt: f64,
}

fn default_oracle_tol() -> f64 {
    1e-12
}

fn default_sample_dt() -> f64 {
    1e-3
}

fn default_two_body_dt() -> f64 {
    1e-4
}

/// Name of the `[section]` header governing byte offset `pos` in `text`.
fn section_at(text: &str, pos: usize) -> String {
    text[..pos.min(text.len())]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').to_string())
        .unwrap_or_else(|| "top level".into())
}

fn line_col(text: &str, pos: usize) -> (usize, usize) {
    let before = &text[..pos.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

impl RunConfig {
    /// Parse and validate. Syntax errors carry line and column; semantic errors
    /// name the violated invariant.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    Error::Config(format!("line {line}, column {col} (in [{}]): {msg}", section_at(text, span.start)))
                }
                None => Error::Config(msg),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.run.t_final > 0.0 && self.run.t_final.is_finite()) {
            return bad(format!("[run] T must be > 0, got {}", self.run.t_final));
        }
        if self.run.snapshot_stride == 0 {
            return bad("[run] snapshot_stride must be >= 1".into());
        }
        if let Some(k1) = self.run.k1 {
            if !(k1 >= 1.0 && k1.is_finite()) {
                return bad(format!("[run] K1 must be >= 1, got {k1}"));
            }
        }
        for (name, m) in &self.monitors {
            if !MONITORS.iter().any(|(n, _)| n == name) {
                let known: Vec<_> = MONITORS.iter().map(|(n, _)| *n).collect();
                return bad(format!("unknown monitor [monitors.{name}]; known: {}", known.join(", ")));
            }
            if m.tol.is_some_and(|t| !(t >= 0.0 && t.is_finite())) {
                return bad(format!("[monitors.{name}] tol must be >= 0"));
            }
            if m.tol_field.is_some() && name != "sqrt_h_variation" {
                return bad(format!("[monitors.{name}] has no tol_field"));
            }
        }
        self.integrator.validate().map_err(|e| Error::Config(format!("[integrator] {e}")))?;
        self.kernel_spec(0.0)
            .and_then(|k| self.field_config(k).validate())
            .map_err(|e| Error::Config(format!("[kernel]/[field] {e}")))?;
        self.initial_condition()?
            .validate(self.kernel.epsilon)
            .map_err(|e| Error::Config(format!("[initial] {e}")))?;
        if let Some(tb) = &self.two_body {
            tb.problem.validate().map_err(|e| Error::Config(format!("[two_body] {e}")))?;
        }
        Ok(())
    }

    pub fn initial_condition(&self) -> Result<InitialCondition> {
        let i = &self.initial;
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| Error::Config(format!("[initial] shape {:?} requires `{key}`", i.shape)))
        };
        let spatial = match i.shape {
            ShapeKind::Ball => SpatialShape::Ball {
                center: i.center,
                radius: i.radius.unwrap_or(1.0),
            },
            ShapeKind::Shell => SpatialShape::Shell {
                center: i.center,
                inner: need(i.inner, "inner")?,
                outer: need(i.outer, "outer")?,
            },
            ShapeKind::Box => SpatialShape::Box {
                lo: i.lo.ok_or_else(|| Error::Config("[initial] shape box requires `lo`".into()))?,
                hi: i.hi.ok_or_else(|| Error::Config("[initial] shape box requires `hi`".into()))?,
            },
        };
        let velocity = match i.velocity {
            VelocityKind::UniformBall => VelocityShape::UniformBall { v_max: i.v_max },
            VelocityKind::TruncatedMaxwellian => VelocityShape::TruncatedMaxwellian {
                sigma: i.sigma.unwrap_or(1.0),
                v_max: i.v_max,
            },
        };
        Ok(InitialCondition {
            spatial,
            velocity,
            particle_count: i.particle_count,
            vacuum_radius: i.vacuum_radius,
            charges: i.charges.iter().map(|c| ChargeState::new(c.position, c.velocity)).collect(),
            seed: i.seed,
        })
    }

    /// Kernel with `epsilon_plasma` resolved; `fallback_plasma` is used when unset.
    pub fn kernel_spec(&self, fallback_plasma: f64) -> Result<KernelSpec> {
        let spec = KernelSpec {
            epsilon_charge: self.kernel.epsilon,
            epsilon_plasma: self.kernel.epsilon_plasma.unwrap_or(fallback_plasma),
            mode: self.kernel.mode,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn field_config(&self, kernel: KernelSpec) -> FieldSolverConfig {
        FieldSolverConfig {
            method: self.field.method,
            theta: self.field.theta,
            leaf_capacity: self.field.leaf_capacity,
            kernel,
        }
    }

    /// Settings of monitor `name`, defaults filled in.
    pub fn monitor(&self, name: &str) -> MonitorSettings {
        let default_tol = MONITORS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t);
        let m = self.monitors.get(name);
        MonitorSettings {
            enabled: m.is_none_or(|m| m.enabled),
            tol: m.and_then(|m| m.tol).or(default_tol),
            tol_field: if name == "sqrt_h_variation" {
                m.and_then(|m| m.tol_field).or(Some(DEFAULT_TOL_FIELD))
            } else {
                None
            },
        }
    }

    /// Copy with every defaulted value written out.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        match c.initial.shape {
            ShapeKind::Ball => c.initial.radius = Some(c.initial.radius.unwrap_or(1.0)),
            ShapeKind::Shell | ShapeKind::Box => {}
        }
        if c.initial.velocity == VelocityKind::TruncatedMaxwellian {
            c.initial.sigma = Some(c.initial.sigma.unwrap_or(1.0));
        }
        c.monitors = MONITORS.iter().map(|(n, _)| (n.to_string(), self.monitor(n))).collect();
        c
    }

    /// Resolved configuration as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(&self.resolved()).expect("configuration serializes to TOML")
    }

    /// Stable digest of the resolved configuration.
    pub fn hash(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.echo().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}
