//! Replicate-level aggregation into table rows.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::{CriticalValues, Hypothesis, ReplicateOutcome, SubgroupAnalysis};
use crate::error::Error;
use crate::estimators::Estimator;
use crate::hazard::DesignTruth;

/// Mean, bias and sample S.D. of a scalar over replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub bias: f64,
    /// `None` with fewer than two values.
    pub sd: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64], truth: f64) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.len() > 1)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Some(Self {
            n: values.len(),
            mean,
            bias: mean - truth,
            sd,
        })
    }
}

/// Estimation metrics of one estimator on one analysis set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorRow {
    pub estimator: Estimator,
    pub estimate: Option<Summary>,
    pub mean_se: f64,
    /// Share of `estimate ± z₀.₉₇₅·S.E.` intervals containing the truth.
    pub coverage: f64,
    pub mean_n_plus: f64,
}

/// Testing metrics of one estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerRow {
    pub estimator: Estimator,
    /// Rejections over successful replicates.
    pub rejection_rate: f64,
    /// Share of replicates testing the positive-subgroup hypothesis.
    pub positive_tests: f64,
    /// Mean size of the tested population.
    pub mean_n_plus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsTable {
    pub name: String,
    pub id: Option<u8>,
    pub reps: usize,
    pub failures: usize,
    pub truth: DesignTruth,
    pub critical: CriticalValues,
    /// Stage-I cutpoint over replicates where it was identified.
    pub c0: Option<Summary>,
    /// Replicates whose Stage II was enriched.
    pub enriched: usize,
    pub cut_hat: Option<Summary>,
    pub mean_true_negatives: f64,
    pub interaction_rejection: f64,
    /// Calibration fell back to unit weights on the estimated set.
    pub calibration_fallbacks: usize,
    /// Estimators on `(ĉ_{t*}, upper]`, truth `Δ⁽ᴾ⁾`.
    pub estimated: Vec<EstimatorRow>,
    /// Estimators on `(c_{t*}, upper]`, truth `Δ⁽ᴾ⁾`.
    pub true_cut: Vec<EstimatorRow>,
    pub power: Vec<PowerRow>,
}

impl MetricsTable {
    pub fn failure_rate(&self) -> f64 {
        if self.reps == 0 {
            0.0
        } else {
            self.failures as f64 / self.reps as f64
        }
    }

    pub fn estimated_row(&self, e: Estimator) -> Option<&EstimatorRow> {
        self.estimated.iter().find(|r| r.estimator == e)
    }

    pub fn true_cut_row(&self, e: Estimator) -> Option<&EstimatorRow> {
        self.true_cut.iter().find(|r| r.estimator == e)
    }

    pub fn power_row(&self, e: Estimator) -> Option<&PowerRow> {
        self.power.iter().find(|r| r.estimator == e)
    }
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn estimator_row<'a>(
    e: Estimator,
    sets: impl Iterator<Item = &'a SubgroupAnalysis>,
    truth: f64,
) -> EstimatorRow {
    let q = Normal::standard().inverse_cdf(0.975);
    let ests: Vec<_> = sets.filter_map(|s| s.get(e)).collect();
    let values: Vec<f64> = ests.iter().map(|x| x.estimate).collect();
    EstimatorRow {
        estimator: e,
        estimate: Summary::of(&values, truth),
        mean_se: mean(ests.iter().map(|x| x.se())),
        coverage: mean(ests.iter().map(|x| f64::from(u8::from(x.covers(truth, q))))),
        mean_n_plus: mean(ests.iter().map(|x| x.n_plus as f64)),
    }
}

/// Aggregates in replicate order, so the result does not depend on how
/// replicates were scheduled.
pub fn aggregate(
    name: &str,
    id: Option<u8>,
    truth: DesignTruth,
    critical: CriticalValues,
    estimators: &[Estimator],
    outcomes: &[Result<ReplicateOutcome, Error>],
) -> MetricsTable {
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let c0: Vec<f64> = ok
        .iter()
        .filter_map(|o| o.stage_one.enrichment_cut)
        .collect();
    let cut_hat: Vec<f64> = ok.iter().filter_map(|o| o.cut_hat).collect();
    let share = |count: usize| {
        if ok.is_empty() {
            f64::NAN
        } else {
            count as f64 / ok.len() as f64
        }
    };
    let estimated = estimators
        .iter()
        .map(|&e| {
            estimator_row(
                e,
                ok.iter().filter_map(|o| o.estimated_set.as_ref()),
                truth.delta_positive,
            )
        })
        .collect();
    let true_cut = estimators
        .iter()
        .map(|&e| estimator_row(e, ok.iter().map(|o| &o.true_set), truth.delta_positive))
        .collect();
    let power = estimators
        .iter()
        .map(|&e| {
            let results: Vec<_> = ok.iter().map(|o| o.trial_result(e, &critical)).collect();
            PowerRow {
                estimator: e,
                rejection_rate: share(results.iter().filter(|r| r.rejected).count()),
                positive_tests: share(
                    results
                        .iter()
                        .filter(|r| r.hypothesis == Hypothesis::Positive)
                        .count(),
                ),
                mean_n_plus: mean(results.iter().map(|r| r.n_plus as f64)),
            }
        })
        .collect();
    MetricsTable {
        name: name.to_string(),
        id,
        reps: outcomes.len(),
        failures: outcomes.len() - ok.len(),
        truth,
        critical,
        c0: Summary::of(&c0, truth.cutpoint),
        enriched: ok.iter().filter(|o| o.enriched()).count(),
        cut_hat: Summary::of(&cut_hat, truth.cutpoint),
        mean_true_negatives: mean(ok.iter().map(|o| o.true_negatives as f64)),
        interaction_rejection: share(ok.iter().filter(|o| o.z_beta3 > critical.q0).count()),
        calibration_fallbacks: ok
            .iter()
            .filter(|o| {
                o.estimated_set
                    .as_ref()
                    .is_some_and(|s| s.calibration_fallback)
            })
            .count(),
        estimated,
        true_cut,
        power,
    }
}

/// Global-null rejection rates over a grid of levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullSweepTable {
    pub name: String,
    pub id: Option<u8>,
    pub reps: usize,
    pub failures: usize,
    /// `(α0, interaction-test rejection rate)`.
    pub interaction: Vec<(f64, f64)>,
    pub fwer: Vec<FwerCell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FwerCell {
    pub alpha0: f64,
    pub alpha_tilde: f64,
    pub estimator: Estimator,
    pub fwer: f64,
}

impl NullSweepTable {
    pub fn fwer(&self, alpha0: f64, alpha_tilde: f64, e: Estimator) -> Option<f64> {
        self.fwer
            .iter()
            .find(|c| c.alpha0 == alpha0 && c.alpha_tilde == alpha_tilde && c.estimator == e)
            .map(|c| c.fwer)
    }
}

/// Every `(α0, α̃)` threshold is applied to the same global-null replicates.
pub fn null_sweep(
    name: &str,
    id: Option<u8>,
    alpha0s: &[f64],
    alpha_tildes: &[f64],
    estimators: &[Estimator],
    outcomes: &[Result<ReplicateOutcome, Error>],
) -> crate::Result<NullSweepTable> {
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let share = |count: usize| {
        if ok.is_empty() {
            f64::NAN
        } else {
            count as f64 / ok.len() as f64
        }
    };
    let mut interaction = Vec::new();
    let mut fwer = Vec::new();
    for &alpha0 in alpha0s {
        let q0 = CriticalValues::from_levels(alpha0, 0.0)?.q0;
        interaction.push((alpha0, share(ok.iter().filter(|o| o.z_beta3 > q0).count())));
        for &alpha_tilde in alpha_tildes {
            let crit = CriticalValues::from_levels(alpha0, alpha_tilde)?;
            for &e in estimators {
                let rejections = ok.iter().filter(|o| o.decision(e, &crit).rejected).count();
                fwer.push(FwerCell {
                    alpha0,
                    alpha_tilde,
                    estimator: e,
                    fwer: share(rejections),
                });
            }
        }
    }
    Ok(NullSweepTable {
        name: name.to_string(),
        id,
        reps: outcomes.len(),
        failures: outcomes.len() - ok.len(),
        interaction,
        fwer,
    })
}
