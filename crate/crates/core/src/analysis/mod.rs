//! Reference solutions, continuous energies, stability predicates and error norms.

pub mod cache;
mod energy;
mod errors;
mod gausson;
pub mod stability;

pub use energy::{continuous_energy_log, continuous_energy_reg, energy_gap_bound, GapBound};
pub use errors::{error_report, observed_order, ErrorReport, Truth};
pub use gausson::{gausson, GaussonParams};
pub use stability::{siefd_tau_bound, sigma_max, TauBound};
