//! Panel instrumental-variables engine for within-group drafting effects.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! - [`ingest`] loads the athlete, event and result tables, merges and cleans
//!   them and derives age and pandemic-period covariates.
//! - [`grouping`] infers drafting groups per event from swim-out times and
//!   assigns leader / ordinal positions.
//! - [`theory`] holds the structural benefit and disutility model and a
//!   seeded data-generating process with known truth.
//! - [`instruments`] builds the leave-one-out group ability instrument, its
//!   projected panel variant and the pooled band treatments.
//! - [`hdfe`] parses formulas, assembles design matrices and absorbs
//!   multi-way fixed effects by alternating projections.
//! - [`estimators`] fits OLS and 2SLS with iid / HC1 / clustered covariance
//!   and the first-stage F and Wu–Hausman diagnostics.
//! - [`bandwagon`] runs the pooled band comparisons.
//! - [`report`] drives whole runs from a config file and renders tables.

pub mod bandwagon;
pub mod estimators;
pub mod grouping;
pub mod hdfe;
pub mod ingest;
pub mod instruments;
pub mod panel;
pub mod report;
pub mod theory;

pub use panel::{AthleteId, Category, EventId, GroupSlot, PanelRow, Period};
