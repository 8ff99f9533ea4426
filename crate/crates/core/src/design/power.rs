use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{
    analyse_overall, analyse_subgroup, par_map_replicates, run_replicates, CriticalValues,
    DesignConfig,
};
use crate::cutpoint::fit_rmst_regression;
use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::hazard::{BiomarkerSupport, DesignTruth};
use crate::sim::{observe, replicate_rng, simulate_stage1, simulate_stage2, AccrualPlan};

/// `α̃ ∈ {1.5%, 1.6%, …, 2.5%}`.
pub const DEFAULT_ALPHA_TILDE_GRID: [f64; 11] = [
    0.015, 0.016, 0.017, 0.018, 0.019, 0.020, 0.021, 0.022, 0.023, 0.024, 0.025,
];

/// Result of the global-null search for `α̃`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullCalibration {
    pub critical: CriticalValues,
    /// `(α̃, empirical family-wise error)` for every grid value.
    pub grid: Vec<(f64, f64)>,
    /// Replicates that failed and were left out.
    pub failures: usize,
}

/// Largest `α̃` on `grid` whose empirical family-wise error under the global
/// null (both arms on the control hazard) stays at or below `family_alpha`.
pub fn critical_values(
    config: &DesignConfig,
    family_alpha: f64,
    alpha0: f64,
    grid: &[f64],
    reps: usize,
    seed: u64,
    workers: usize,
) -> Result<NullCalibration> {
    if reps < 1000 {
        return Err(Error::InvalidInput(format!(
            "critical values need at least 1000 replicates, got {reps}"
        )));
    }
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty alpha-tilde grid".into()));
    }
    let null = config.global_null();
    let outcomes = run_replicates(&null, reps, seed, workers)?;
    let ok: Vec<_> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    if ok.is_empty() {
        return Err(Error::NoSamples);
    }
    let failures = outcomes.len() - ok.len();
    let mut table = Vec::with_capacity(grid.len());
    for &alpha_tilde in grid {
        let critical = CriticalValues::from_levels(alpha0, alpha_tilde)?;
        let rejections = ok
            .iter()
            .filter(|o| o.decision(config.estimator, &critical).rejected)
            .count();
        table.push((alpha_tilde, rejections as f64 / ok.len() as f64));
    }
    let best = table
        .iter()
        .filter(|(_, fwer)| *fwer <= family_alpha)
        .map(|&(a, _)| a)
        .fold(None, |acc: Option<f64>, a| {
            Some(acc.map_or(a, |b| b.max(a)))
        });
    match best {
        Some(alpha_tilde) => {
            let mut critical = CriticalValues::from_levels(alpha0, alpha_tilde)?;
            critical.reps = ok.len();
            Ok(NullCalibration {
                critical,
                grid: table,
                failures,
            })
        }
        None => Err(Error::NoFeasibleAlpha(
            table.iter().map(|t| t.1).fold(f64::INFINITY, f64::min),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    /// Half the patients accrued from the whole support, half from the
    /// positive subgroup.
    Enrichment,
    AllComer,
}

impl DesignKind {
    pub fn of(config: &DesignConfig) -> Self {
        if config.enrichment() {
            Self::Enrichment
        } else {
            Self::AllComer
        }
    }
}

/// Expected number of biomarker-positive patients among `n_total` with equal
/// accrual in both stages.
pub fn positive_fraction(
    n_total: f64,
    cut: f64,
    kind: DesignKind,
    support: BiomarkerSupport,
) -> f64 {
    let share = (support.upper() - cut) / support.width();
    match kind {
        DesignKind::Enrichment => n_total / 2.0 * (1.0 + share),
        DesignKind::AllComer => n_total * share,
    }
}

/// Monte Carlo standard deviations of `√n (estimate − truth)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sigmas {
    pub beta3: f64,
    /// Indexed by `Estimator::index() − 1`; scaled by `√n₊`.
    pub positive: [f64; 5],
    /// Indexed by `Estimator::index() − 1`; scaled by `√M`.
    pub overall: [f64; 5],
    pub m: usize,
    pub b: usize,
    pub failures: usize,
}

struct SigmaDraw {
    beta3: f64,
    positive: [Option<f64>; 5],
    overall: [Option<f64>; 5],
}

/// Root-mean-square of centred, √n-scaled estimates over `b` datasets of
/// `m` patients under the configured alternative.
///
/// `β3` and the overall estimators use all-comer data accrued like the
/// design; the positive-subgroup estimators use a dataset accrued like the
/// design itself (enriched above the true cutpoint when enrichment is on),
/// analysed in `(c_{t*}, upper]` and scaled by the realised `√n₊`.
pub fn monte_carlo_sigma(
    config: &DesignConfig,
    m: usize,
    b: usize,
    seed: u64,
    workers: usize,
) -> Result<Sigmas> {
    if m < 1000 || b < 100 {
        return Err(Error::InvalidInput(format!(
            "need M >= 1000 and B >= 100, got M = {m}, B = {b}"
        )));
    }
    config.validate()?;
    let truth = config.truth()?;
    let per_arm = (m / 4).max(1);
    let plan = AccrualPlan {
        n1: per_arm,
        n2: per_arm,
        ..config.plan
    };
    let sized = DesignConfig {
        plan,
        ..config.clone()
    };
    let enriched_cut = truth.threshold.cut().filter(|_| config.enrichment());

    let draws = par_map_replicates(b, workers, |r| -> Result<SigmaDraw> {
        let mut rng = replicate_rng(seed, r);
        let mut all_comer = simulate_stage1(&plan, &config.arms, config.support, &mut rng);
        all_comer.extend(simulate_stage2(
            &plan,
            &config.arms,
            config.support,
            None,
            &mut rng,
        )?);
        let records = observe(&all_comer, plan.t3)?;
        let fit = fit_rmst_regression(&records, config.t_star)?;
        let n = records.len() as f64;
        let overall = analyse_overall(&sized, &records, &fit);

        let positive = match enriched_cut {
            Some(c) => {
                let mut patients = simulate_stage1(&plan, &config.arms, config.support, &mut rng);
                patients.extend(simulate_stage2(
                    &plan,
                    &config.arms,
                    config.support,
                    Some(c),
                    &mut rng,
                )?);
                let recs = observe(&patients, plan.t3)?;
                let fit = fit_rmst_regression(&recs, config.t_star)?;
                analyse_subgroup(&sized, &recs, truth.cutpoint, &fit)
            }
            None => analyse_subgroup(&sized, &records, truth.cutpoint, &fit),
        };
        let np = positive.n_plus as f64;
        let mut draw = SigmaDraw {
            beta3: n.sqrt() * (fit.beta[3] - truth.beta3),
            positive: [None; 5],
            overall: [None; 5],
        };
        for e in Estimator::ALL {
            let i = e.index() - 1;
            draw.overall[i] = overall
                .get(e)
                .map(|est| n.sqrt() * (est.estimate - truth.delta_overall));
            draw.positive[i] = positive
                .get(e)
                .map(|est| np.sqrt() * (est.estimate - truth.delta_positive));
        }
        Ok(draw)
    })?;

    let ok: Vec<&SigmaDraw> = draws.iter().filter_map(|d| d.as_ref().ok()).collect();
    if ok.is_empty() {
        return Err(Error::NoSamples);
    }
    let rms = |values: Vec<f64>| -> f64 {
        if values.is_empty() {
            f64::NAN
        } else {
            (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
        }
    };
    let mut positive = [0.0; 5];
    let mut overall = [0.0; 5];
    for i in 0..5 {
        positive[i] = rms(ok.iter().filter_map(|d| d.positive[i]).collect());
        overall[i] = rms(ok.iter().filter_map(|d| d.overall[i]).collect());
    }
    Ok(Sigmas {
        beta3: rms(ok.iter().map(|d| d.beta3).collect()),
        positive,
        overall,
        m: plan.total(),
        b,
        failures: draws.len() - ok.len(),
    })
}

/// Inputs of the closed-form global power.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerInputs {
    pub truth: DesignTruth,
    pub sigmas: Sigmas,
    pub kind: DesignKind,
    pub support: BiomarkerSupport,
}

/// `η [1 − Φ(q − Δ⁽ᴾ⁾/(σ⁽ᴾ⁾/√n₊))] + (1 − η)[1 − Φ(q − Δ⁽ᴼ⁾/(σ⁽ᴼ⁾/√n))]`
/// with `η = 1 − Φ(q0 − β3/(σ_β3/√n))`.
pub fn global_power(
    inputs: &PowerInputs,
    estimator: Estimator,
    n_total: f64,
    critical: &CriticalValues,
) -> f64 {
    let phi = Normal::standard();
    let upper = |z: f64| 1.0 - phi.cdf(z);
    let i = estimator.index() - 1;
    let truth = &inputs.truth;
    let eta = upper(critical.q0 - truth.beta3 * n_total.sqrt() / inputs.sigmas.beta3);
    let n_plus = positive_fraction(n_total, truth.cutpoint, inputs.kind, inputs.support);
    let p_pos =
        upper(critical.q - truth.delta_positive * n_plus.sqrt() / inputs.sigmas.positive[i]);
    let p_all = upper(critical.q - truth.delta_overall * n_total.sqrt() / inputs.sigmas.overall[i]);
    eta * p_pos + (1.0 - eta) * p_all
}

const MIN_N: usize = 10;
const MAX_N: usize = 1_000_000;

/// Smallest even total sample size in `[10, 10⁶]` reaching `target_power`,
/// by bisection.
pub fn sample_size(
    inputs: &PowerInputs,
    estimator: Estimator,
    target_power: f64,
    critical: &CriticalValues,
) -> Result<usize> {
    if !(0.0..1.0).contains(&target_power) {
        return Err(Error::InvalidInput(format!(
            "target power {target_power} outside [0, 1)"
        )));
    }
    let power = |half: usize| global_power(inputs, estimator, (2 * half) as f64, critical);
    let (mut lo, mut hi) = (MIN_N / 2, MAX_N / 2);
    if power(lo) >= target_power {
        return Ok(2 * lo);
    }
    let best = power(hi);
    if !(best >= target_power) {
        return Err(Error::UnreachablePower(best));
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if power(mid) >= target_power {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(2 * hi)
}
