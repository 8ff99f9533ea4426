//! The two-stage adaptive enrichment trial: Stage-I cutpoint prediction and
//! enrichment, Stage-II accrual, the interaction test and the conditional
//! treatment-effect tests.

mod power;

pub use power::{
    critical_values, global_power, monte_carlo_sigma, positive_fraction, sample_size, DesignKind,
    NullCalibration, PowerInputs, Sigmas, DEFAULT_ALPHA_TILDE_GRID,
};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::calibration::{calibrate_weights, target_moments, uniform_moments};
use crate::cutpoint::{
    cutpoint_from_regression, detect_changepoints_with, fit_pwe, fit_rmst_regression,
    fit_with_known_count, interaction_test, predict_cutpoint, DetectionOptions, FitOptions,
    FittedPwe, LrtReference, RmstRegressionFit,
};
use crate::error::{Error, Result};
use crate::estimators::{estimate, AnalysisSet, EstimateWithVariance, Estimator};
use crate::hazard::{ArmPair, BiomarkerSupport, CovariateForm, DesignTruth, Threshold};
use crate::sim::{
    observe, replicate_rng, simulate_stage1, simulate_stage2, AccrualPlan, ObservedRecord, Patient,
    Stage,
};

/// How the Stage-I cutpoint is predicted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PredictionMode {
    /// Change-point number and locations taken from the generating model.
    KnownLocations,
    /// Change-point number taken from the generating model; locations
    /// estimated.
    KnownCount,
    /// Number and locations estimated by sequential testing.
    Detected {
        alpha_star: f64,
        j_max: usize,
        reference: LrtReference,
    },
}

/// Target moments for the calibration weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationTarget {
    /// Sample moments of the Stage-I patients in the positive subgroup.
    #[default]
    StageOnePositives,
    /// Moments of the uniform distribution on the positive subgroup.
    Analytic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignConfig {
    pub arms: ArmPair,
    pub support: BiomarkerSupport,
    pub plan: AccrualPlan,
    pub t_star: f64,
    /// One-sided level of the interaction test.
    pub alpha0: f64,
    /// One-sided level of the conditional treatment-effect tests.
    pub alpha_tilde: f64,
    pub estimator: Estimator,
    /// `None` runs the all-comer design.
    pub prediction: Option<PredictionMode>,
    /// Biomarker term used when fitting Stage-I hazards.
    pub fit_form: CovariateForm,
    pub calibration_target: CalibrationTarget,
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        for (name, level) in [("alpha0", self.alpha0), ("alpha_tilde", self.alpha_tilde)] {
            if !(level > 0.0 && level < 0.5) {
                return Err(Error::config(name, format!("{level} must lie in (0, 0.5)")));
            }
        }
        if !(self.t_star > 0.0 && self.t_star < self.plan.t3) {
            return Err(Error::config("t_star", "need 0 < t_star < t3"));
        }
        if let Some(PredictionMode::Detected { alpha_star, .. }) = self.prediction {
            if !(alpha_star > 0.0 && alpha_star < 1.0) {
                return Err(Error::config("prediction.alpha_star", "must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    pub fn enrichment(&self) -> bool {
        self.prediction.is_some()
    }

    pub fn critical(&self) -> Result<CriticalValues> {
        CriticalValues::from_levels(self.alpha0, self.alpha_tilde)
    }

    pub fn truth(&self) -> Result<DesignTruth> {
        DesignTruth::compute(&self.arms, self.t_star, self.support)
    }

    /// Same design with both arms following the control hazard.
    pub fn global_null(&self) -> Self {
        Self {
            arms: self.arms.global_null(),
            ..self.clone()
        }
    }
}

/// Critical values on the standard-normal scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalValues {
    pub alpha0: f64,
    pub alpha_tilde: f64,
    /// `Φ⁻¹(1 − α0)`, for the interaction test.
    pub q0: f64,
    /// `Φ⁻¹(1 − α̃)`, for the treatment-effect tests.
    pub q: f64,
    /// Global-null replicates behind `alpha_tilde` (0 when set directly).
    pub reps: usize,
}

impl CriticalValues {
    pub fn from_levels(alpha0: f64, alpha_tilde: f64) -> Result<Self> {
        let phi = Normal::standard();
        for level in [alpha0, alpha_tilde] {
            if !(0.0..1.0).contains(&level) {
                return Err(Error::InvalidInput(format!(
                    "significance level {level} outside [0, 1)"
                )));
            }
        }
        let quantile = |a: f64| {
            if a == 0.0 {
                f64::INFINITY
            } else {
                phi.inverse_cdf(1.0 - a)
            }
        };
        Ok(Self {
            alpha0,
            alpha_tilde,
            q0: quantile(alpha0),
            q: quantile(alpha_tilde),
            reps: 0,
        })
    }
}

/// Null hypothesis tested for the treatment effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Hypothesis {
    /// No effect in the biomarker-positive subgroup.
    Positive,
    /// No effect in the overall population.
    Overall,
}

/// Stage-I prediction outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOneDecision {
    pub threshold: Option<Threshold>,
    /// Fitting or root-finding failure; the design then does not enrich.
    pub error: Option<Error>,
    /// Stage-II accrual is restricted to `(cut, upper]` when set.
    pub enrichment_cut: Option<f64>,
}

impl StageOneDecision {
    fn all_comer() -> Self {
        Self {
            threshold: None,
            error: None,
            enrichment_cut: None,
        }
    }
}

/// Full two-stage cohort and the Stage-I decision behind it.
#[derive(Debug, Clone)]
pub struct TrialDataset {
    pub patients: Vec<Patient>,
    pub stage_one: StageOneDecision,
    /// All patients observed at the final analysis `t3`.
    pub records: Vec<ObservedRecord>,
}

/// The five estimators on one analysis set.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupAnalysis {
    pub cut: f64,
    pub n_plus: usize,
    /// Calibration failed and unit weights were used.
    pub calibration_fallback: bool,
    /// Indexed by `Estimator::index() − 1`.
    pub estimates: Vec<std::result::Result<EstimateWithVariance, Error>>,
}

impl SubgroupAnalysis {
    pub fn get(&self, estimator: Estimator) -> Option<&EstimateWithVariance> {
        self.estimates[estimator.index() - 1].as_ref().ok()
    }
}

/// Everything measured in one simulated trial, for every estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub stage_one: StageOneDecision,
    pub regression: RmstRegressionFit,
    /// `ĉ_{t*}` from the final RMST regression.
    pub cut_hat: Option<f64>,
    pub z_beta3: f64,
    pub n_total: usize,
    /// Enrolled patients below the true cutpoint.
    pub true_negatives: usize,
    /// Analysis in `(ĉ_{t*}, upper]`, when `ĉ_{t*}` exists.
    pub estimated_set: Option<SubgroupAnalysis>,
    /// Analysis in `(c_{t*}, upper]` for the true cutpoint.
    pub true_set: SubgroupAnalysis,
    pub overall: SubgroupAnalysis,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub hypothesis: Hypothesis,
    /// `None` when the estimator failed on the tested set.
    pub estimate: Option<EstimateWithVariance>,
    pub rejected: bool,
}

impl ReplicateOutcome {
    pub fn enriched(&self) -> bool {
        self.stage_one.enrichment_cut.is_some()
    }

    /// Interaction test first; if it rejects and `ĉ_{t*}` exists the
    /// positive subgroup is tested, otherwise the overall population.
    pub fn decision(&self, estimator: Estimator, critical: &CriticalValues) -> Decision {
        let (hypothesis, set) = match &self.estimated_set {
            Some(set) if self.z_beta3 > critical.q0 => (Hypothesis::Positive, set),
            _ => (Hypothesis::Overall, &self.overall),
        };
        let estimate = set.get(estimator).copied();
        let rejected = estimate.is_some_and(|e| e.z() > critical.q);
        Decision {
            hypothesis,
            estimate,
            rejected,
        }
    }

    pub fn trial_result(&self, estimator: Estimator, critical: &CriticalValues) -> TrialResult {
        let d = self.decision(estimator, critical);
        TrialResult {
            c0: self.stage_one.enrichment_cut,
            enriched: self.enriched(),
            cut_hat: self.cut_hat,
            z_beta3: self.z_beta3,
            hypothesis: d.hypothesis,
            estimate: d.estimate,
            z: d.estimate.map_or(f64::NAN, |e| e.z()),
            rejected: d.rejected,
            n_plus: match d.hypothesis {
                Hypothesis::Positive => self.estimated_set.as_ref().map_or(0, |s| s.n_plus),
                Hypothesis::Overall => self.overall.n_plus,
            },
            true_negatives: self.true_negatives,
        }
    }
}

/// Summary of one trial for the configured estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialResult {
    pub c0: Option<f64>,
    pub enriched: bool,
    pub cut_hat: Option<f64>,
    pub z_beta3: f64,
    pub hypothesis: Hypothesis,
    pub estimate: Option<EstimateWithVariance>,
    pub z: f64,
    pub rejected: bool,
    pub n_plus: usize,
    pub true_negatives: usize,
}

fn arm_records(records: &[ObservedRecord], arm: u8) -> Vec<ObservedRecord> {
    records.iter().filter(|r| r.arm == arm).copied().collect()
}

fn stage_one_fit(
    config: &DesignConfig,
    mode: PredictionMode,
    records: &[ObservedRecord],
    arm: u8,
) -> Result<FittedPwe> {
    let truth = config.arms.arm(arm);
    let recs = arm_records(records, arm);
    let form = config.fit_form;
    match mode {
        PredictionMode::KnownLocations => fit_pwe(
            &recs,
            truth.change_points(),
            FitOptions {
                form,
                ..FitOptions::default()
            },
        ),
        PredictionMode::KnownCount => {
            fit_with_known_count(&recs, truth.change_points().len(), form)
        }
        PredictionMode::Detected {
            alpha_star,
            j_max,
            reference,
        } => detect_changepoints_with(
            &recs,
            DetectionOptions {
                alpha_star,
                j_max,
                form,
                reference,
            },
        )
        .map(|d| d.fit),
    }
}

/// Predicts `ĉ0` from Stage-I data observed at `t1`.
pub fn stage_one_decision(config: &DesignConfig, stage_one: &[ObservedRecord]) -> StageOneDecision {
    let Some(mode) = config.prediction else {
        return StageOneDecision::all_comer();
    };
    let outcome = stage_one_fit(config, mode, stage_one, 0).and_then(|f0| {
        let f1 = stage_one_fit(config, mode, stage_one, 1)?;
        predict_cutpoint(&f0, &f1, config.t_star, config.support)
    });
    match outcome {
        Ok(threshold) => StageOneDecision {
            threshold: Some(threshold),
            error: None,
            enrichment_cut: threshold.cut().filter(|&c| c < config.support.upper()),
        },
        Err(e) => StageOneDecision {
            threshold: None,
            error: Some(e),
            enrichment_cut: None,
        },
    }
}

/// Simulates both stages, including the Stage-I enrichment decision.
pub fn simulate_dataset<R: Rng + ?Sized>(
    config: &DesignConfig,
    rng: &mut R,
) -> Result<TrialDataset> {
    let mut patients = simulate_stage1(&config.plan, &config.arms, config.support, rng);
    let stage_one = if config.enrichment() {
        stage_one_decision(config, &observe(&patients, config.plan.t1)?)
    } else {
        StageOneDecision::all_comer()
    };
    patients.extend(simulate_stage2(
        &config.plan,
        &config.arms,
        config.support,
        stage_one.enrichment_cut,
        rng,
    )?);
    let records = observe(&patients, config.plan.t3)?;
    Ok(TrialDataset {
        patients,
        stage_one,
        records,
    })
}

/// Estimators on `(cut, upper]` with calibration weights.
pub fn analyse_subgroup(
    config: &DesignConfig,
    records: &[ObservedRecord],
    cut: f64,
    fit: &RmstRegressionFit,
) -> SubgroupAnalysis {
    let positives: Vec<ObservedRecord> = records.iter().filter(|r| r.x > cut).copied().collect();
    let n_plus = positives.len();
    let xs: Vec<f64> = positives.iter().map(|r| r.x).collect();
    let target = match config.calibration_target {
        CalibrationTarget::StageOnePositives => {
            let stage_one: Vec<f64> = positives
                .iter()
                .filter(|r| r.stage == Stage::I)
                .map(|r| r.x)
                .collect();
            target_moments(&stage_one)
        }
        CalibrationTarget::Analytic => Ok(uniform_moments(
            cut.max(config.support.lower()),
            config.support.upper(),
        )),
    };
    let (weights, calibration_fallback) = match target.and_then(|t| calibrate_weights(&xs, t)) {
        Ok(res) => (res.weights, false),
        Err(_) => (vec![1.0; n_plus], true),
    };
    let estimates = match AnalysisSet::new(positives, weights, Some(fit)) {
        Ok(set) => Estimator::ALL
            .iter()
            .map(|&e| estimate(&set, config.t_star, e))
            .collect(),
        Err(e) => vec![Err(e); Estimator::ALL.len()],
    };
    SubgroupAnalysis {
        cut,
        n_plus,
        calibration_fallback,
        estimates,
    }
}

/// Estimators on every enrolled patient with unit weights.
pub fn analyse_overall(
    config: &DesignConfig,
    records: &[ObservedRecord],
    fit: &RmstRegressionFit,
) -> SubgroupAnalysis {
    let estimates = match AnalysisSet::unweighted(records.to_vec(), Some(fit)) {
        Ok(set) => Estimator::ALL
            .iter()
            .map(|&e| estimate(&set, config.t_star, e))
            .collect(),
        Err(e) => vec![Err(e); Estimator::ALL.len()],
    };
    SubgroupAnalysis {
        cut: config.support.lower(),
        n_plus: records.len(),
        calibration_fallback: false,
        estimates,
    }
}

/// Final analysis of a simulated cohort.
pub fn analyse(
    config: &DesignConfig,
    truth: &DesignTruth,
    dataset: TrialDataset,
) -> Result<ReplicateOutcome> {
    let records = &dataset.records;
    let regression = fit_rmst_regression(records, config.t_star)?;
    let z_beta3 = interaction_test(&regression)?;
    let cut_hat = cutpoint_from_regression(&regression, config.support);
    let estimated_set = cut_hat.map(|c| analyse_subgroup(config, records, c, &regression));
    let true_set = analyse_subgroup(config, records, truth.cutpoint, &regression);
    let overall = analyse_overall(config, records, &regression);
    let true_negatives = dataset
        .patients
        .iter()
        .filter(|p| p.x < truth.cutpoint)
        .count();
    Ok(ReplicateOutcome {
        stage_one: dataset.stage_one,
        regression,
        cut_hat,
        z_beta3,
        n_total: records.len(),
        true_negatives,
        estimated_set,
        true_set,
        overall,
    })
}

pub fn run_replicate<R: Rng + ?Sized>(
    config: &DesignConfig,
    truth: &DesignTruth,
    rng: &mut R,
) -> Result<ReplicateOutcome> {
    analyse(config, truth, simulate_dataset(config, rng)?)
}

/// One simulated trial, summarised for the configured estimator.
pub fn run_trial<R: Rng + ?Sized>(
    config: &DesignConfig,
    critical: &CriticalValues,
    rng: &mut R,
) -> Result<TrialResult> {
    let truth = config.truth()?;
    Ok(run_replicate(config, &truth, rng)?.trial_result(config.estimator, critical))
}

/// Maps `f` over replicate indices on a pool of `workers` threads; results
/// come back in replicate order.
pub fn par_map_replicates<T, F>(reps: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..reps as u64).into_par_iter().map(&f).collect()))
}

/// `reps` independent replicates with per-replicate streams of `seed`.
pub fn run_replicates(
    config: &DesignConfig,
    reps: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<std::result::Result<ReplicateOutcome, Error>>> {
    config.validate()?;
    let truth = config.truth()?;
    par_map_replicates(reps, workers, |r| {
        run_replicate(config, &truth, &mut replicate_rng(seed, r))
    })
}
