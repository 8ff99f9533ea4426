//! Biomarker cutpoint estimation.
//!
//! Two routes are provided:
//!
//! * the Stage-I prediction method: piecewise-exponential hazards fitted per
//!   arm by Poisson log-linear regression on pseudo-observations (with
//!   optional sequential change-point detection), plugged into the RMST
//!   crossing equation;
//! * the Stage-II IPCW RMST regression on `[1, Z, X, ZX]`, whose cutpoint is
//!   `−β̂₁/β̂₃` and whose interaction coefficient drives the test of a positive
//!   biomarker-by-treatment interaction.

mod changepoint;
mod poisson;
mod pseudo;
mod regression;

pub use changepoint::{
    detect_changepoints, detect_changepoints_with, fit_with_known_count, ChangePointDetection,
    DetectionOptions, LikelihoodRatioStep, LrtReference, GRID_TRIM,
};
pub use poisson::{fit_poisson_loglinear, fit_pwe, profile_fit, FitOptions, FittedPwe};
pub use pseudo::{expand_pseudo, PseudoExpansion, PseudoRow};
pub use regression::{
    cutpoint_from_regression, fit_rmst_regression, interaction_test, ipcw_outcomes, IpcwOutcome,
    RmstRegressionFit,
};

use crate::error::{Error, Result};
use crate::hazard::{locate_threshold, ArmPair, BiomarkerSupport, Threshold};

/// Plugs the two fitted hazards into the RMST crossing equation.
pub fn predict_cutpoint(
    fit0: &FittedPwe,
    fit1: &FittedPwe,
    t_star: f64,
    support: BiomarkerSupport,
) -> Result<Threshold> {
    if !fit0.converged || !fit1.converged {
        return Err(Error::InvalidInput(
            "predict_cutpoint needs converged fits".into(),
        ));
    }
    let arms = ArmPair::new(fit0.to_model()?, fit1.to_model()?);
    locate_threshold(|x| arms.rmst_difference(x, t_star), support)
}
