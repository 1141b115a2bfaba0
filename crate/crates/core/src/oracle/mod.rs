//! Independent reference computations: the two-body problem, brute-force field sums
//! and convergence studies in the regularization radius and the time step.

mod brute_force;
mod compare;
mod studies;
mod sweep;
mod two_body;

pub use brute_force::{field_brute_force, self_field_brute_force};
pub use compare::{compare_two_body, TwoBodyComparison, TwoBodyRun};
pub use studies::{
    dt_convergence_study, epsilon_convergence_study, simulate, DtRun, DtStudyReport, EpsilonLevel,
    EpsilonPair, EpsilonStudyReport, Simulated, StudyBase,
};
pub(crate) use studies::log_log_slope;
pub use sweep::{near_miss_cases, near_miss_sweep, FlyBy, NearMissCase, NearMissSweep};
pub use two_body::{head_on_pericenter, two_body_reference, TwoBodyProblem, TwoBodyState, TwoBodyTrajectory};
