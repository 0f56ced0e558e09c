//! Regularized maximum-likelihood estimation of approximate factor models with sparse
//! idiosyncratic covariance.
//!
//! Estimators: principal components ([`pca`]), thresholded residual covariance
//! ([`poet`]), two-step quasi-ML ([`twostep`]), and joint penalized ML with its
//! diagonal baseline ([`jointpml`]). [`sim`] holds the simulation design and Monte Carlo
//! harness.

pub mod error;
pub mod io;
pub mod jointpml;
pub mod likelihood;
pub mod linalg;
pub mod panel;
pub mod pca;
pub mod poet;
pub mod sim;
pub mod twostep;

pub use error::{Error, Result};
pub use jointpml::{
    dml_estimate, joint_estimate, JointOptions, PenaltyKind, PenaltySpec, WeightMode,
};
pub use linalg::{Mat, Vector};
pub use panel::{sample_covariance, smallest_canonical_correlation, PanelData, SampleCovariance};
pub use pca::{pca_estimate, PcaFit};
pub use poet::{AdaptiveKind, Kernel, ThresholdRule};
pub use sim::{generate_dgp, monte_carlo, DgpConfig, DgpTruth, EstimatorConfig, TableSpec};
pub use twostep::{twostep_estimate, FactorEstimate, TwoStepOptions};
