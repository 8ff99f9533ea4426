//! Simulation, analysis and sizing of two-stage adaptive enrichment trials
//! with a continuous biomarker and a restricted mean survival time endpoint.
//!
//! - [`survival`]: weighted Kaplan–Meier curves and restricted means.
//! - [`hazard`]: piecewise-exponential hazards and design truths.
//! - [`sim`]: patient simulation, accrual and censoring.
//! - [`cutpoint`]: interim hazard fits, change-point detection and the
//!   final RMST regression.
//! - [`calibration`]: entropy-balancing weights.
//! - [`estimators`]: five RMST-difference estimators with sandwich variances.
//! - [`design`]: the two-stage decision rule, critical values and power.
//! - [`harness`]: configured scenarios, aggregate metrics and CSV reports.
//!
//! ```
//! use rmst_enrich::hazard::{simulation_arms, BiomarkerSupport, DesignTruth};
//!
//! let truth = DesignTruth::compute(&simulation_arms(), 2.0, BiomarkerSupport::unit())?;
//! assert!((truth.cutpoint - 0.5188).abs() < 1e-3);
//! # Ok::<(), rmst_enrich::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod cutpoint;
pub mod design;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod hazard;
pub mod sim;
pub mod survival;

pub use error::{Error, Result};

// Runs the guide's code blocks as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/survival.md")]
    mod survival {}
    #[doc = include_str!("../../../book/src/hazards.md")]
    mod hazards {}
    #[doc = include_str!("../../../book/src/cutpoints.md")]
    mod cutpoints {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/design.md")]
    mod design {}
    #[doc = include_str!("../../../book/src/power.md")]
    mod power {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
