//! RMST-difference estimators on a (calibration-weighted) analysis set.

use serde::{Deserialize, Serialize};

use crate::cutpoint::{ipcw_outcomes, RmstRegressionFit};
use crate::error::{Error, Result};
use crate::sim::ObservedRecord;
use crate::survival::{cw_km_variance, km_curve, naive_rmst_variance, rmst_area, SurvivalSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Naive,
    CwKaplanMeier,
    CwGFormula,
    CwHajek,
    CwAugmented,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Self::Naive,
        Self::CwKaplanMeier,
        Self::CwGFormula,
        Self::CwHajek,
        Self::CwAugmented,
    ];

    /// 1-based index used in tables and on the command line.
    pub fn index(self) -> usize {
        self as usize + 1
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i.checked_sub(1)?).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::CwKaplanMeier => "cw-km",
            Self::CwGFormula => "cw-gformula",
            Self::CwHajek => "cw-hajek",
            Self::CwAugmented => "cw-augmented",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateWithVariance {
    pub estimator: Estimator,
    pub estimate: f64,
    /// Asymptotic variance of `√n₊ (Δ̂ − Δ)`.
    pub variance: f64,
    pub n_plus: usize,
}

impl EstimateWithVariance {
    pub fn se(&self) -> f64 {
        (self.variance / self.n_plus as f64).sqrt()
    }

    /// `√n₊ Δ̂ / σ̂`.
    pub fn z(&self) -> f64 {
        self.estimate / self.se()
    }

    pub fn covers(&self, truth: f64, quantile: f64) -> bool {
        (self.estimate - truth).abs() <= quantile * self.se()
    }
}

/// Patients analysed for a subgroup effect, with their calibration weights.
#[derive(Debug, Clone)]
pub struct AnalysisSet<'a> {
    pub records: Vec<ObservedRecord>,
    /// Positive weights aligned with `records`; normalised internally.
    pub weights: Vec<f64>,
    /// Outcome model `m_z(x)` for the G-formula and augmented estimators.
    pub outcome: Option<&'a RmstRegressionFit>,
}

impl<'a> AnalysisSet<'a> {
    pub fn new(
        records: Vec<ObservedRecord>,
        weights: Vec<f64>,
        outcome: Option<&'a RmstRegressionFit>,
    ) -> Result<Self> {
        if records.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} records but {} weights",
                records.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::DegenerateWeights);
        }
        for arm in [0u8, 1] {
            if !records.iter().any(|r| r.arm == arm) {
                return Err(Error::NoSamples);
            }
        }
        Ok(Self {
            records,
            weights,
            outcome,
        })
    }

    /// Every record with unit weight.
    pub fn unweighted(
        records: Vec<ObservedRecord>,
        outcome: Option<&'a RmstRegressionFit>,
    ) -> Result<Self> {
        let n = records.len();
        Self::new(records, vec![1.0; n], outcome)
    }

    pub fn n_plus(&self) -> usize {
        self.records.len()
    }

    fn normalised_weights(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }

    fn arm_samples(&self, arm: u8, weighted: bool) -> Vec<SurvivalSample> {
        self.records
            .iter()
            .zip(&self.weights)
            .filter(|(r, _)| r.arm == arm)
            .map(|(r, &w)| {
                SurvivalSample::weighted(r.time, r.event, if weighted { w } else { 1.0 })
            })
            .collect()
    }

    fn outcome(&self) -> Result<&'a RmstRegressionFit> {
        self.outcome.ok_or(Error::MissingOutcomeModel)
    }

    fn wrap(
        &self,
        estimator: Estimator,
        estimate: f64,
        variance: f64,
    ) -> Result<EstimateWithVariance> {
        if !estimate.is_finite() || !variance.is_finite() || variance < 0.0 {
            return Err(Error::VarianceUndefined(format!(
                "{} produced a non-finite result",
                estimator.label()
            )));
        }
        Ok(EstimateWithVariance {
            estimator,
            estimate,
            variance,
            n_plus: self.n_plus(),
        })
    }
}

fn km_difference(
    control: &[SurvivalSample],
    experimental: &[SurvivalSample],
    t_star: f64,
) -> Result<f64> {
    Ok(rmst_area(&km_curve(experimental)?, t_star)? - rmst_area(&km_curve(control)?, t_star)?)
}

/// Difference of unweighted Kaplan–Meier areas.
pub fn delta1_naive(set: &AnalysisSet, t_star: f64) -> Result<EstimateWithVariance> {
    let (c, e) = (set.arm_samples(0, false), set.arm_samples(1, false));
    let est = km_difference(&c, &e, t_star)?;
    set.wrap(Estimator::Naive, est, naive_rmst_variance(&c, &e, t_star)?)
}

/// Difference of calibration-weighted Kaplan–Meier areas.
pub fn delta2_cw_km(set: &AnalysisSet, t_star: f64) -> Result<EstimateWithVariance> {
    let (c, e) = (set.arm_samples(0, true), set.arm_samples(1, true));
    let est = km_difference(&c, &e, t_star)?;
    set.wrap(
        Estimator::CwKaplanMeier,
        est,
        cw_km_variance(&c, &e, t_star)?,
    )
}

/// Weighted plug-in `Σ p_i (β̂1 + β̂3 x_i)` with delta-method variance.
pub fn delta3_cw_gformula(set: &AnalysisSet, _t_star: f64) -> Result<EstimateWithVariance> {
    let fit = set.outcome()?;
    let p = set.normalised_weights();
    let mean_x: f64 = p.iter().zip(&set.records).map(|(w, r)| w * r.x).sum();
    let est = fit.beta[1] + fit.beta[3] * mean_x;
    let cov = &fit.covariance;
    let var_beta = cov[1][1] + 2.0 * mean_x * cov[1][3] + mean_x * mean_x * cov[3][3];
    set.wrap(Estimator::CwGFormula, est, set.n_plus() as f64 * var_beta)
}

/// Per-arm weighted IPCW means of `Y − m_z(x)` and their sandwich pieces.
struct HajekArm {
    mean: f64,
    bread: f64,
    /// `Φ_i` for every record (zero for the other arm).
    scores: Vec<f64>,
}

fn hajek_arm(
    set: &AnalysisSet,
    p: &[f64],
    w: &[f64],
    y: &[f64],
    arm: u8,
    m: &dyn Fn(u8, f64) -> f64,
) -> Result<HajekArm> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (((r, pi), wi), yi) in set.records.iter().zip(p).zip(w).zip(y) {
        if r.arm == arm {
            num += pi * wi * (yi - m(arm, r.x));
            den += pi * wi;
        }
    }
    if !(den > 0.0) {
        return Err(Error::VarianceUndefined(format!(
            "no uncensored outcomes in arm {arm}"
        )));
    }
    let mean = num / den;
    let scores = set
        .records
        .iter()
        .zip(p)
        .zip(w)
        .zip(y)
        .map(|(((r, pi), wi), yi)| {
            if r.arm == arm {
                pi * wi * (yi - m(arm, r.x) - mean)
            } else {
                0.0
            }
        })
        .collect();
    Ok(HajekArm {
        mean,
        bread: den,
        scores,
    })
}

fn ipcw_parts(set: &AnalysisSet, t_star: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let out = ipcw_outcomes(&set.records, t_star)?;
    Ok((
        out.iter().map(|o| o.weight).collect(),
        out.iter().map(|o| o.y).collect(),
    ))
}

/// `θ̂1 − θ̂0` with `θ̂_z` the calibration- and IPCW-weighted mean of
/// `min(U, t*)` in arm `z`; sandwich variance from the stacked equations.
pub fn delta4_cw_hajek(set: &AnalysisSet, t_star: f64) -> Result<EstimateWithVariance> {
    let p = set.normalised_weights();
    let (w, y) = ipcw_parts(set, t_star)?;
    let zero = |_: u8, _: f64| 0.0;
    let a1 = hajek_arm(set, &p, &w, &y, 1, &zero)?;
    let a0 = hajek_arm(set, &p, &w, &y, 0, &zero)?;
    // The two score components never share a record, so the meat is diagonal.
    let v1: f64 = a1.scores.iter().map(|s| s * s).sum::<f64>() / (a1.bread * a1.bread);
    let v0: f64 = a0.scores.iter().map(|s| s * s).sum::<f64>() / (a0.bread * a0.bread);
    set.wrap(
        Estimator::CwHajek,
        a1.mean - a0.mean,
        set.n_plus() as f64 * (v1 + v0),
    )
}

/// Augmented estimator with the analysis set's outcome model.
pub fn delta5_cw_augmented(set: &AnalysisSet, t_star: f64) -> Result<EstimateWithVariance> {
    let fit = set.outcome()?;
    delta5_with_outcome(set, t_star, &|z, x| fit.predict(z, x))
}

/// `ν̂1 − ν̂0 + ν̂2`: Hajek means of the residuals `Y − m_z(x)` plus the
/// weighted mean of `m_1(x) − m_0(x)`, with stacked sandwich variance.
pub fn delta5_with_outcome(
    set: &AnalysisSet,
    t_star: f64,
    m: &dyn Fn(u8, f64) -> f64,
) -> Result<EstimateWithVariance> {
    let p = set.normalised_weights();
    let (w, y) = ipcw_parts(set, t_star)?;
    let a1 = hajek_arm(set, &p, &w, &y, 1, m)?;
    let a0 = hajek_arm(set, &p, &w, &y, 0, m)?;
    let contrast: f64 = p
        .iter()
        .zip(&set.records)
        .map(|(pi, r)| pi * (m(1, r.x) - m(0, r.x)))
        .sum();
    // Scores ordered (ν1, ν0, ν2); the bread is diagonal, so the variance of
    // ν̂1 − ν̂0 + ν̂2 is cᵀ M c with c = (1/b1, −1/b0, 1/b2).
    let b2: f64 = p.iter().sum();
    let c = [1.0 / a1.bread, -1.0 / a0.bread, 1.0 / b2];
    let var: f64 = (0..set.n_plus())
        .map(|i| {
            let s2 = p[i] * (m(1, set.records[i].x) - m(0, set.records[i].x) - contrast);
            let lin = c[0] * a1.scores[i] + c[1] * a0.scores[i] + c[2] * s2;
            lin * lin
        })
        .sum();
    set.wrap(
        Estimator::CwAugmented,
        a1.mean - a0.mean + contrast,
        set.n_plus() as f64 * var,
    )
}

pub fn estimate(
    set: &AnalysisSet,
    t_star: f64,
    estimator: Estimator,
) -> Result<EstimateWithVariance> {
    match estimator {
        Estimator::Naive => delta1_naive(set, t_star),
        Estimator::CwKaplanMeier => delta2_cw_km(set, t_star),
        Estimator::CwGFormula => delta3_cw_gformula(set, t_star),
        Estimator::CwHajek => delta4_cw_hajek(set, t_star),
        Estimator::CwAugmented => delta5_cw_augmented(set, t_star),
    }
}

/// Estimate over the whole enrolled population with unit weights.
pub fn overall_estimate(
    records: &[ObservedRecord],
    t_star: f64,
    estimator: Estimator,
    outcome: Option<&RmstRegressionFit>,
) -> Result<EstimateWithVariance> {
    estimate(
        &AnalysisSet::unweighted(records.to_vec(), outcome)?,
        t_star,
        estimator,
    )
}
