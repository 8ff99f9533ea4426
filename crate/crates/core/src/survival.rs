//! Nonparametric survival primitives: (weighted) product-limit curves, exact
//! restricted-mean areas and the variance formulas for the Kaplan–Meier based
//! RMST difference estimators.
//!
//! Every curve is stored as its exact jump representation, so areas are exact
//! rectangle sums with no time grid.

use crate::error::{Error, Result};

/// Right-continuous step survival function starting at 1 at time zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSurvival {
    jump_times: Vec<f64>,
    values: Vec<f64>,
}

impl StepSurvival {
    /// Builds a curve from jump times and post-jump values.
    pub fn new(jump_times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if jump_times.len() != values.len() {
            return Err(Error::InvalidInput(
                "jump_times and values differ in length".into(),
            ));
        }
        let mut prev_t = f64::NEG_INFINITY;
        let mut prev_v = 1.0;
        for (&t, &v) in jump_times.iter().zip(&values) {
            if !(t >= 0.0) || t <= prev_t {
                return Err(Error::InvalidInput(
                    "jump times must be nonnegative and strictly increasing".into(),
                ));
            }
            if !(0.0..=1.0).contains(&v) || v > prev_v {
                return Err(Error::InvalidInput(
                    "survival values must be non-increasing within [0, 1]".into(),
                ));
            }
            prev_t = t;
            prev_v = v;
        }
        Ok(Self { jump_times, values })
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// S(t), right-continuous.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&s| s <= t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    /// S(t-), the value just before any jump at `t`.
    pub fn left_limit(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&s| s < t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    /// Exact area under the curve on `[from, to]` (0 when `to <= from`).
    pub fn area_between(&self, from: f64, to: f64) -> f64 {
        if to <= from {
            return 0.0;
        }
        let mut area = 0.0;
        let mut left = from;
        let mut level = self.at(from);
        let start = self.jump_times.partition_point(|&s| s <= from);
        for (&t, &v) in self.jump_times[start..].iter().zip(&self.values[start..]) {
            if t >= to {
                break;
            }
            area += level * (t - left);
            left = t;
            level = v;
        }
        area + level * (to - left)
    }
}

/// One right-censored observation with an optional nonnegative weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalSample {
    pub time: f64,
    pub event: bool,
    pub weight: f64,
}

impl SurvivalSample {
    pub fn new(time: f64, event: bool) -> Self {
        Self {
            time,
            event,
            weight: 1.0,
        }
    }

    pub fn weighted(time: f64, event: bool, weight: f64) -> Self {
        Self {
            time,
            event,
            weight,
        }
    }
}

/// Per distinct event time: weighted events, weighted risk set and the sum of
/// squared weights in the risk set.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RiskRow {
    pub time: f64,
    pub events: f64,
    pub at_risk: f64,
    pub at_risk_sq: f64,
}

pub(crate) fn risk_table(samples: &[SurvivalSample]) -> Result<Vec<RiskRow>> {
    if samples.is_empty() {
        return Err(Error::NoSamples);
    }
    for s in samples {
        if !(s.time >= 0.0) || !s.time.is_finite() {
            return Err(Error::InvalidInput(format!(
                "observed time {} must be finite and >= 0",
                s.time
            )));
        }
        if !(s.weight >= 0.0) || !s.weight.is_finite() {
            return Err(Error::InvalidInput(format!(
                "weight {} must be finite and >= 0",
                s.weight
            )));
        }
    }
    let mut sorted: Vec<&SurvivalSample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let total: f64 = sorted.iter().map(|s| s.weight).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateWeights);
    }

    // Suffix sums give the risk set at each distinct time without drift.
    let n = sorted.len();
    let mut suffix = vec![(0.0, 0.0); n + 1];
    for i in (0..n).rev() {
        let w = sorted[i].weight;
        suffix[i] = (suffix[i + 1].0 + w, suffix[i + 1].1 + w * w);
    }

    let mut rows = Vec::new();
    let mut i = 0;
    while i < n {
        let t = sorted[i].time;
        let (at_risk, at_risk_sq) = suffix[i];
        let mut events = 0.0;
        let mut j = i;
        while j < n && sorted[j].time == t {
            if sorted[j].event {
                events += sorted[j].weight;
            }
            j += 1;
        }
        if events > 0.0 {
            rows.push(RiskRow {
                time: t,
                events,
                at_risk,
                at_risk_sq,
            });
        }
        i = j;
    }
    Ok(rows)
}

fn curve_from_table(rows: &[RiskRow]) -> StepSurvival {
    let mut times = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    let mut s = 1.0;
    for r in rows {
        s *= (1.0 - r.events / r.at_risk).max(0.0);
        times.push(r.time);
        values.push(s);
    }
    StepSurvival {
        jump_times: times,
        values,
    }
}

/// Weighted product-limit estimator. With unit weights this is the ordinary
/// Kaplan–Meier curve. Events at a tied time are processed before censorings,
/// so subjects censored at `t` are still in the risk set at `t`.
pub fn km_curve(samples: &[SurvivalSample]) -> Result<StepSurvival> {
    Ok(curve_from_table(&risk_table(samples)?))
}

/// Kaplan–Meier curve of the censoring distribution (flags flipped).
pub fn censoring_km(samples: &[SurvivalSample]) -> Result<StepSurvival> {
    let flipped: Vec<SurvivalSample> = samples
        .iter()
        .map(|s| SurvivalSample {
            event: !s.event,
            ..*s
        })
        .collect();
    km_curve(&flipped)
}

/// Restricted mean: exact area under `curve` on `[0, t_star]`.
pub fn rmst_area(curve: &StepSurvival, t_star: f64) -> Result<f64> {
    if !(t_star >= 0.0) {
        return Err(Error::InvalidInput(format!("t* = {t_star} must be >= 0")));
    }
    Ok(curve.area_between(0.0, t_star))
}

fn events_before(rows: &[RiskRow], t_star: f64) -> bool {
    rows.iter().any(|r| r.time <= t_star)
}

/// `A(t) = ∫_t^{t*} S(u) du` evaluated at each event time of `rows`, with S
/// taken after the jump at that time.
///
/// `curve` must be the product-limit curve of `rows`, so its jumps sit at the
/// row times; the areas accumulate in one backward pass.
fn tail_areas(curve: &StepSurvival, rows: &[RiskRow], t_star: f64) -> Vec<f64> {
    debug_assert_eq!(curve.jump_times.len(), rows.len());
    let mut out = vec![0.0; rows.len()];
    let mut acc = 0.0;
    for k in (0..rows.len()).rev() {
        let t = rows[k].time;
        if t >= t_star {
            continue;
        }
        let right = rows.get(k + 1).map_or(t_star, |r| r.time.min(t_star));
        acc += curve.values[k] * (right - t);
        out[k] = acc;
    }
    out
}

/// n₊-scaled asymptotic variance of the unweighted KM RMST difference,
/// `Σ_z ∫ {∫_t^{t*} Ŝ_z}² dΛ̂_z(t) / (Y_z(t)/n₊)` with Nelson–Aalen increments.
///
/// Weights on the samples are ignored. The standard error of the difference is
/// `sqrt(σ²/n₊)` with `n₊` the combined count of both arms.
pub fn naive_rmst_variance(
    control: &[SurvivalSample],
    experimental: &[SurvivalSample],
    t_star: f64,
) -> Result<f64> {
    if !(t_star >= 0.0) {
        return Err(Error::InvalidInput(format!("t* = {t_star} must be >= 0")));
    }
    let n_plus = (control.len() + experimental.len()) as f64;
    let mut total = 0.0;
    for arm in [control, experimental] {
        let unit: Vec<SurvivalSample> = arm
            .iter()
            .map(|s| SurvivalSample::new(s.time, s.event))
            .collect();
        let rows = risk_table(&unit)?;
        if !events_before(&rows, t_star) {
            return Err(Error::VarianceUndefined(
                "an arm has no events before t*".into(),
            ));
        }
        let curve = curve_from_table(&rows);
        let tails = tail_areas(&curve, &rows, t_star);
        for (r, a) in rows.iter().zip(tails) {
            if r.time > t_star {
                break;
            }
            total += a * a * r.events / r.at_risk * n_plus / r.at_risk;
        }
    }
    Ok(total)
}

/// n₊-scaled asymptotic variance of the calibration-weighted KM RMST
/// difference:
/// `n₊ Σ_z ∫ {∫_u^{t*} S̃_z}² dÑ_z(u) / (W̃_z(u) (Ỹ_z(u) − ΔÑ_z(u)))`
/// with `W̃_z = Ỹ_z² / Σ p_i² Y_zi`.
pub fn cw_km_variance(
    control: &[SurvivalSample],
    experimental: &[SurvivalSample],
    t_star: f64,
) -> Result<f64> {
    if !(t_star >= 0.0) {
        return Err(Error::InvalidInput(format!("t* = {t_star} must be >= 0")));
    }
    let n_plus = (control.len() + experimental.len()) as f64;
    let mut total = 0.0;
    for arm in [control, experimental] {
        let rows = risk_table(arm)?;
        if !events_before(&rows, t_star) {
            return Err(Error::VarianceUndefined(
                "an arm has no weighted events before t*".into(),
            ));
        }
        let curve = curve_from_table(&rows);
        let tails = tail_areas(&curve, &rows, t_star);
        for (r, a) in rows.iter().zip(tails) {
            if r.time > t_star {
                break;
            }
            let remaining = r.at_risk - r.events;
            // Once the whole risk set fails the tail area is exactly zero.
            if remaining <= r.at_risk * 1e-14 || a == 0.0 {
                continue;
            }
            let w = r.at_risk * r.at_risk / r.at_risk_sq;
            total += a * a * r.events / (w * remaining);
        }
    }
    let v = n_plus * total;
    if !v.is_finite() {
        return Err(Error::VarianceUndefined(
            "non-finite weighted variance".into(),
        ));
    }
    Ok(v)
}
