use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::poisson::{profile_fit_data, ArmData, FitOptions, FittedPwe};
use crate::error::Result;
use crate::hazard::CovariateForm;
use crate::sim::ObservedRecord;

/// Share of events trimmed from each end of the location grid.
pub const GRID_TRIM: f64 = 0.05;

/// Reference distribution for the sequential likelihood-ratio statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrtReference {
    /// Chi-square with two degrees of freedom.
    ChiSquare2,
    /// Large-sample null of the likelihood ratio maximised over the trimmed
    /// location grid: `sup_{s ∈ [π, 1−π]} B(s)² / (s(1−s))` for a Brownian
    /// bridge `B`.
    #[default]
    TrimmedSup,
}

const SUP_DRAWS: usize = 20_000;
const SUP_STEPS: usize = 1_000;

/// Sorted draws from the trimmed sup of the standardised squared bridge.
fn trimmed_sup_draws() -> &'static [f64] {
    static DRAWS: OnceLock<Vec<f64>> = OnceLock::new();
    DRAWS.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_cafe);
        let dt = 1.0 / SUP_STEPS as f64;
        let lo = (GRID_TRIM * SUP_STEPS as f64).round() as usize;
        let hi = SUP_STEPS - lo;
        let mut path = vec![0.0; SUP_STEPS + 1];
        let mut draws: Vec<f64> = (0..SUP_DRAWS)
            .map(|_| {
                for k in 1..=SUP_STEPS {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    path[k] = path[k - 1] + z * dt.sqrt();
                }
                let end = path[SUP_STEPS];
                (lo..=hi)
                    .map(|k| {
                        let s = k as f64 * dt;
                        let b = path[k] - s * end;
                        b * b / (s * (1.0 - s))
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        draws.sort_by(f64::total_cmp);
        draws
    })
}

impl LrtReference {
    /// Upper-`level` critical value.
    pub fn critical_value(self, level: f64) -> f64 {
        match self {
            Self::ChiSquare2 => ChiSquared::new(2.0)
                .expect("valid degrees of freedom")
                .inverse_cdf(1.0 - level),
            Self::TrimmedSup => {
                let draws = trimmed_sup_draws();
                let idx = (((1.0 - level) * draws.len() as f64).ceil() as usize)
                    .clamp(1, draws.len())
                    - 1;
                draws[idx]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionOptions {
    pub alpha_star: f64,
    pub j_max: usize,
    pub form: CovariateForm,
    pub reference: LrtReference,
}

/// One sequential likelihood-ratio test of `k − 1` against `k` change points.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodRatioStep {
    pub k: usize,
    pub change_points: Vec<f64>,
    pub statistic: f64,
    pub level: f64,
    pub critical: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangePointDetection {
    pub change_points: Vec<f64>,
    pub fit: FittedPwe,
    pub steps: Vec<LikelihoodRatioStep>,
    /// Set when the search stopped because the arm had too few events.
    pub too_few_events: bool,
}

/// Candidate locations: event times strictly inside the observed range,
/// without the first and last 5% of events.
fn candidates(data: &ArmData) -> Vec<f64> {
    let mut times = data.sorted_event_times();
    times.dedup();
    let n = times.len();
    let trim = (GRID_TRIM * n as f64).ceil() as usize;
    let lo = trim.max(1);
    let hi = n.saturating_sub(trim.max(1));
    if lo >= hi {
        return Vec::new();
    }
    times[lo..hi].to_vec()
}

fn insert_sorted(cps: &[f64], at: f64) -> Option<Vec<f64>> {
    if cps.contains(&at) {
        return None;
    }
    let mut out = cps.to_vec();
    out.insert(cps.partition_point(|&c| c < at), at);
    Some(out)
}

/// Best placement of one additional change point, holding `base` fixed.
fn best_addition(
    data: &ArmData,
    base: &[f64],
    grid: &[f64],
    opts: FitOptions,
    gamma0: f64,
) -> Option<FittedPwe> {
    let mut best: Option<FittedPwe> = None;
    for &c in grid {
        let Some(cps) = insert_sorted(base, c) else {
            continue;
        };
        if let Ok(fit) = profile_fit_data(data, &cps, opts, gamma0) {
            if best
                .as_ref()
                .is_none_or(|b| fit.log_likelihood > b.log_likelihood)
            {
                best = Some(fit);
            }
        }
    }
    best
}

/// Moves each change point in turn to its best grid location given the others.
fn refine(data: &ArmData, mut fit: FittedPwe, grid: &[f64], opts: FitOptions) -> FittedPwe {
    for i in 0..fit.change_points.len() {
        let mut others = fit.change_points.clone();
        others.remove(i);
        if let Some(cand) = best_addition(data, &others, grid, opts, fit.gamma) {
            if cand.log_likelihood > fit.log_likelihood {
                fit = cand;
            }
        }
    }
    fit
}

fn greedy_step(
    data: &ArmData,
    current: &FittedPwe,
    grid: &[f64],
    opts: FitOptions,
) -> Option<FittedPwe> {
    let added = best_addition(data, &current.change_points, grid, opts, current.gamma)?;
    Some(refine(data, added, grid, opts))
}

fn enough_events(data: &ArmData, k: usize) -> bool {
    data.n_events() >= 2 * (k + 1)
}

/// Sequential change-point detection for one arm with the default reference
/// distribution.
pub fn detect_changepoints(
    records: &[ObservedRecord],
    alpha_star: f64,
    j_max: usize,
    form: CovariateForm,
) -> Result<ChangePointDetection> {
    detect_changepoints_with(
        records,
        DetectionOptions {
            alpha_star,
            j_max,
            form,
            reference: LrtReference::default(),
        },
    )
}

/// Sequential change-point detection for one arm.
///
/// The `k`-th test compares the best `k`-point model to the retained
/// `(k − 1)`-point model with a likelihood-ratio statistic referred to
/// `options.reference` at level `alpha_star / 2^(k−1)`. Stops at the first
/// non-rejection or after `j_max` change points.
pub fn detect_changepoints_with(
    records: &[ObservedRecord],
    options: DetectionOptions,
) -> Result<ChangePointDetection> {
    let DetectionOptions {
        alpha_star,
        j_max,
        form,
        reference,
    } = options;
    let opts = FitOptions {
        form,
        ..FitOptions::default()
    };
    let data = ArmData::new(records, form);
    let mut fit = profile_fit_data(&data, &[], opts, 0.0)?;
    let grid = candidates(&data);
    let mut steps = Vec::new();
    let mut too_few_events = false;

    for k in 1..=j_max {
        if !enough_events(&data, k) {
            too_few_events = true;
            break;
        }
        let Some(next) = greedy_step(&data, &fit, &grid, opts) else {
            too_few_events = true;
            break;
        };
        let level = alpha_star / 2f64.powi(k as i32 - 1);
        let critical = reference.critical_value(level);
        let statistic = (2.0 * (next.log_likelihood - fit.log_likelihood)).max(0.0);
        let rejected = statistic > critical;
        steps.push(LikelihoodRatioStep {
            k,
            change_points: next.change_points.clone(),
            statistic,
            level,
            critical,
            rejected,
        });
        if !rejected {
            break;
        }
        fit = next;
    }
    Ok(ChangePointDetection {
        change_points: fit.change_points.clone(),
        fit,
        steps,
        too_few_events,
    })
}

/// Fits exactly `count` change points at their profile-likelihood locations
/// (greedy placement with a refinement pass after each addition).
pub fn fit_with_known_count(
    records: &[ObservedRecord],
    count: usize,
    form: CovariateForm,
) -> Result<FittedPwe> {
    let opts = FitOptions {
        form,
        ..FitOptions::default()
    };
    let data = ArmData::new(records, form);
    let mut fit = profile_fit_data(&data, &[], opts, 0.0)?;
    let grid = candidates(&data);
    for k in 0..count {
        fit = greedy_step(&data, &fit, &grid, opts)
            .ok_or(crate::error::Error::EmptyInterval(k + 1))?;
    }
    Ok(fit)
}
