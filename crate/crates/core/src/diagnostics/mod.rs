//! Energy functionals, analysis parameters and runtime inequality monitors.

mod density;
mod energy;
mod envelope;
mod monitors;
mod params;
mod static_scaling;
mod trajectory;

pub use density::density_norm_estimate;
pub use energy::{total_energy, EnergyReport};
pub use envelope::fit_growth_envelope;
pub use monitors::{
    eta_bound_check, separation_check, velocity_energy_bound_check, EtaBoundMonitor,
    MonitorResult, MonitorStatus, Relation, SeparationMonitor, SqrtHVariationMonitor,
    VelocityEnergyBoundMonitor, Witness,
};
pub use params::{compute_q, default_k1, pointwise_energy, AnalysisParameters};
pub use static_scaling::{active_cut_decade, probe_grid, static_scaling, StaticScaling};
pub use trajectory::{
    charge_track, lemma_fac_monitor, particle_track, protection_sphere_monitor,
    sqrt_h_variation_check, sqrt_h_variation_monitor, virial_trace, PhasePoint,
    ProtectionSphereReport, SphereKind, SphereVisit, VirialSeries, LEMMA_FAC_CONSTANT,
};
