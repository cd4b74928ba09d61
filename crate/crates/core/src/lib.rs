//! Changes-in-changes estimation of direct and indirect treatment effects
//! with a binary treatment, a binary mediator and two periods.
//!
//! The pipeline runs from [`dataio`] (loading, cell partitioning) through
//! [`edist`] (empirical distributions, quantile-quantile maps, mixture CDFs)
//! to [`cic`] (strata shares and effect estimands), with [`did`] as a
//! mean-shift comparator, [`inference`] for the cluster bootstrap,
//! [`diagnostics`] for identification checks and [`simkit`] for Monte Carlo
//! work on a known data generating process.

pub mod cic;
pub mod dataio;
pub mod diagnostics;
pub mod did;
pub mod edist;
pub mod error;
pub mod inference;
pub mod simkit;

#[cfg(test)]
pub(crate) mod testutil;

pub use cic::{estimate_all, CellModel, EffectEstimate, Estimand, EstimateSet, EstimationOptions, Method, StrataShares};
pub use dataio::{load_dataset, partition_cells, Cell, CellPartition, ColumnMap, Dataset, Design, ObservationRecord};
pub use edist::{EmpiricalDistribution, MixtureCdf, QqTransform};
pub use error::{Error, Result};
