//! Treated-phenotype onset inference from prescription event streams.
//!
//! Prescriptions of one drug to one patient form a renewal process. A single
//! change-point separates a sporadic regime (homogeneous Poisson) from a
//! sustained-therapy regime (Weibull renewals with per-drug, per-dispensing
//! regime parameters). Drug-level onsets are aggregated into disease-level
//! onsets through an empirically learned drug-disease dictionary.

pub mod changepoint;
pub mod evalharness;
pub mod event_model;
pub mod numeric;
pub mod phenotype;
pub mod population;
pub mod renewal;
pub mod synthcohort;

pub use event_model::{
    build_trajectories, split_patients, Day, DiagnosisEvent, DrugCode, IcdCode, Interval,
    PatientId, PrescriptionEvent, Regime, Trajectory,
};
pub use renewal::{ExpParams, RenewalError, WeibullParams};
