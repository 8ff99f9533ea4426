use nalgebra::{DMatrix, DVector};

use super::pseudo::{expand_pseudo, PseudoRow};
use crate::error::{Error, Result};
use crate::hazard::{CovariateForm, PiecewiseExpModel};
use crate::sim::ObservedRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub form: CovariateForm,
    /// Drop the biomarker term (e.g. when every subject shares one value).
    pub with_covariate: bool,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            form: CovariateForm::Complement,
            with_covariate: true,
            max_iter: 100,
        }
    }
}

/// Piecewise-exponential fit for one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPwe {
    pub change_points: Vec<f64>,
    /// `α̂_j = log λ̂_j`.
    pub log_rates: Vec<f64>,
    pub gamma: f64,
    pub form: CovariateForm,
    /// Survival (piecewise-exponential) log-likelihood at the estimate. It
    /// differs from the Poisson pseudo-likelihood by the constant
    /// `Σ δ_ij log u_ij`.
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FittedPwe {
    pub fn to_model(&self) -> Result<PiecewiseExpModel> {
        let rates = self.log_rates.iter().map(|a| a.exp()).collect();
        PiecewiseExpModel::new(self.change_points.clone(), rates, self.gamma, self.form)
    }
}

fn interval_totals(rows: &[PseudoRow], n_intervals: usize) -> (Vec<f64>, Vec<f64>) {
    let mut events = vec![0.0; n_intervals];
    let mut exposure = vec![0.0; n_intervals];
    for r in rows {
        exposure[r.interval] += r.exposure;
        if r.event {
            events[r.interval] += 1.0;
        }
    }
    (events, exposure)
}

fn all_equal(values: impl Iterator<Item = f64>) -> bool {
    let mut first = None;
    for v in values {
        match first {
            None => first = Some(v),
            Some(f) if f != v => return false,
            _ => {}
        }
    }
    true
}

/// Maximum-likelihood fit of `log μ_ij = log u_ij + α_j + γ w(x_i)` by
/// iteratively reweighted least squares (Newton on the Poisson likelihood).
///
/// Starts from the crude per-interval rates with `γ = 0`; stops when the
/// largest score component drops below `1e-8` or the relative change in
/// log-likelihood drops below `1e-10`.
pub fn fit_poisson_loglinear(
    rows: &[PseudoRow],
    change_points: &[f64],
    opts: FitOptions,
) -> Result<FittedPwe> {
    let n_int = change_points.len() + 1;
    if rows.is_empty() {
        return Err(Error::NoSamples);
    }
    if let Some(r) = rows.iter().find(|r| r.interval >= n_int) {
        return Err(Error::InvalidInput(format!(
            "row in interval {} but only {n_int} intervals",
            r.interval
        )));
    }
    let (events, exposure) = interval_totals(rows, n_int);
    if let Some(j) = events.iter().position(|&d| d == 0.0) {
        return Err(Error::EmptyInterval(j));
    }
    let w: Vec<f64> = rows.iter().map(|r| opts.form.covariate(r.x)).collect();
    if opts.with_covariate && all_equal(w.iter().copied()) {
        return Err(Error::RankDeficient);
    }

    let p = n_int + usize::from(opts.with_covariate);
    let mut beta = DVector::from_iterator(
        p,
        (0..p).map(|k| {
            if k < n_int {
                (events[k] / exposure[k]).ln()
            } else {
                0.0
            }
        }),
    );

    let loglik = |beta: &DVector<f64>| -> f64 {
        rows.iter()
            .zip(&w)
            .map(|(r, &wi)| {
                let eta = beta[r.interval]
                    + if opts.with_covariate {
                        beta[n_int] * wi
                    } else {
                        0.0
                    };
                (if r.event { eta } else { 0.0 }) - r.exposure * eta.exp()
            })
            .sum()
    };

    let mut ll = loglik(&beta);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for (r, &wi) in rows.iter().zip(&w) {
            let j = r.interval;
            let eta = beta[j]
                + if opts.with_covariate {
                    beta[n_int] * wi
                } else {
                    0.0
                };
            let mu = r.exposure * eta.exp();
            let resid = f64::from(u8::from(r.event)) - mu;
            score[j] += resid;
            info[(j, j)] += mu;
            if opts.with_covariate {
                score[n_int] += resid * wi;
                info[(j, n_int)] += mu * wi;
                info[(n_int, n_int)] += mu * wi * wi;
            }
        }
        if opts.with_covariate {
            for j in 0..n_int {
                info[(n_int, j)] = info[(j, n_int)];
            }
        }
        if score.amax() < 1e-8 {
            converged = true;
            break;
        }
        let chol = info.cholesky().ok_or(Error::RankDeficient)?;
        let step = chol.solve(&score);

        let mut scale = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_ll = loglik(&candidate);
        while cand_ll < ll && scale > 1e-8 {
            scale *= 0.5;
            candidate = &beta + &step * scale;
            cand_ll = loglik(&candidate);
        }
        let rel = (cand_ll - ll).abs() / ll.abs().max(1.0);
        beta = candidate;
        ll = cand_ll;
        if rel < 1e-10 {
            converged = true;
            break;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::RankDeficient);
    }

    Ok(FittedPwe {
        change_points: change_points.to_vec(),
        log_rates: beta.rows(0, n_int).iter().copied().collect(),
        gamma: if opts.with_covariate {
            beta[n_int]
        } else {
            0.0
        },
        form: opts.form,
        log_likelihood: ll,
        converged,
        iterations,
    })
}

/// Pseudo-observation expansion followed by the IRLS fit, for one arm.
pub fn fit_pwe(
    records: &[ObservedRecord],
    change_points: &[f64],
    opts: FitOptions,
) -> Result<FittedPwe> {
    let expansion = expand_pseudo(records, [change_points, change_points]);
    fit_poisson_loglinear(&expansion.rows, change_points, opts)
}

/// One arm's data prepared for repeated likelihood evaluations.
pub(crate) struct ArmData {
    times: Vec<f64>,
    events: Vec<bool>,
    w: Vec<f64>,
    event_w_sum: f64,
    n_events: usize,
}

impl ArmData {
    pub(crate) fn new(records: &[ObservedRecord], form: CovariateForm) -> Self {
        let kept: Vec<&ObservedRecord> = records.iter().filter(|r| r.time > 0.0).collect();
        let times = kept.iter().map(|r| r.time).collect();
        let events: Vec<bool> = kept.iter().map(|r| r.event).collect();
        let w: Vec<f64> = kept.iter().map(|r| form.covariate(r.x)).collect();
        let event_w_sum = w
            .iter()
            .zip(&events)
            .filter(|(_, &e)| e)
            .map(|(w, _)| w)
            .sum();
        let n_events = events.iter().filter(|&&e| e).count();
        Self {
            times,
            events,
            w,
            event_w_sum,
            n_events,
        }
    }

    pub(crate) fn n_events(&self) -> usize {
        self.n_events
    }

    pub(crate) fn sorted_event_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self
            .times
            .iter()
            .zip(&self.events)
            .filter(|(_, &e)| e)
            .map(|(&t, _)| t)
            .collect();
        t.sort_by(f64::total_cmp);
        t
    }

    /// Event counts per interval, with an event on a change point closing
    /// the earlier interval (same rule as the pseudo-observation expansion).
    pub(crate) fn interval_events(&self, cps: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; cps.len() + 1];
        for (&t, &e) in self.times.iter().zip(&self.events) {
            if e {
                d[cps.partition_point(|&c| c < t)] += 1.0;
            }
        }
        d
    }

    /// `(S_j, S'_j, S''_j)` of `S_j(γ) = Σ_i u_ij e^{γ w_i}`.
    fn exposure_sums(&self, cps: &[f64], gamma: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n_int = cps.len() + 1;
        let mut s0 = vec![0.0; n_int];
        let mut s1 = vec![0.0; n_int];
        let mut s2 = vec![0.0; n_int];
        for (&t, &wi) in self.times.iter().zip(&self.w) {
            let e = (gamma * wi).exp();
            let mut start = 0.0;
            for j in 0..n_int {
                let end = cps.get(j).copied().unwrap_or(f64::INFINITY);
                let u = t.min(end) - start;
                if u <= 0.0 {
                    break;
                }
                s0[j] += u * e;
                s1[j] += u * e * wi;
                s2[j] += u * e * wi * wi;
                start = end;
            }
        }
        (s0, s1, s2)
    }
}

/// Same estimate as [`fit_pwe`], computed by profiling out the interval
/// rates (`e^{α_j} = D_j / S_j(γ)`) and running a one-dimensional Newton
/// iteration in `γ`.
pub fn profile_fit(
    records: &[ObservedRecord],
    change_points: &[f64],
    opts: FitOptions,
) -> Result<FittedPwe> {
    let data = ArmData::new(records, opts.form);
    profile_fit_data(&data, change_points, opts, 0.0)
}

pub(crate) fn profile_fit_data(
    data: &ArmData,
    cps: &[f64],
    opts: FitOptions,
    gamma0: f64,
) -> Result<FittedPwe> {
    if data.times.is_empty() {
        return Err(Error::NoSamples);
    }
    let d = data.interval_events(cps);
    if let Some(j) = d.iter().position(|&x| x == 0.0) {
        return Err(Error::EmptyInterval(j));
    }
    if opts.with_covariate && all_equal(data.w.iter().copied()) {
        return Err(Error::RankDeficient);
    }
    let total_events: f64 = d.iter().sum();

    let profile = |gamma: f64| -> (f64, f64, f64, Vec<f64>) {
        let (s0, s1, s2) = data.exposure_sums(cps, gamma);
        let mut ll = gamma * data.event_w_sum - total_events;
        let mut grad = data.event_w_sum;
        let mut hess = 0.0;
        for j in 0..d.len() {
            ll += d[j] * (d[j] / s0[j]).ln();
            let m1 = s1[j] / s0[j];
            grad -= d[j] * m1;
            hess -= d[j] * (s2[j] / s0[j] - m1 * m1);
        }
        (ll, grad, hess, s0)
    };

    let mut gamma = if opts.with_covariate { gamma0 } else { 0.0 };
    let (mut ll, mut grad, mut hess, mut s0) = profile(gamma);
    let mut converged = !opts.with_covariate;
    let mut iterations = 0;
    if opts.with_covariate {
        let tol = 1e-9 * total_events.max(1.0);
        while iterations < opts.max_iter {
            if grad.abs() < tol {
                converged = true;
                break;
            }
            iterations += 1;
            if !(hess < 0.0) {
                return Err(Error::RankDeficient);
            }
            let step = -grad / hess;
            let mut scale = 1.0;
            loop {
                let g = gamma + scale * step;
                let next = profile(g);
                if next.0 >= ll - 1e-12 * ll.abs() || scale < 1e-8 {
                    gamma = g;
                    (ll, grad, hess, s0) = next;
                    break;
                }
                scale *= 0.5;
            }
        }
    }
    Ok(FittedPwe {
        change_points: cps.to_vec(),
        log_rates: d.iter().zip(&s0).map(|(dj, sj)| (dj / sj).ln()).collect(),
        gamma,
        form: opts.form,
        log_likelihood: ll,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazard::simulation_arms;
    use crate::sim::{observe, replicate_rng, simulate_block, Stage};
    use rand::Rng;

    fn simulated(n: usize, seed: u64) -> Vec<ObservedRecord> {
        let arms = simulation_arms();
        let mut rng = replicate_rng(seed, 0);
        let pts = simulate_block(&arms, n, (0.0, 1.0), (0.0, 1.0), 0.12, Stage::I, &mut rng);
        observe(&pts, 2.0)
            .unwrap()
            .into_iter()
            .filter(|r| r.arm == 1)
            .collect()
    }

    #[test]
    fn single_interval_rate_is_occurrence_over_exposure() {
        let recs: Vec<ObservedRecord> = [(0.5, true), (1.0, false), (2.0, true), (0.7, true)]
            .iter()
            .map(|&(t, e)| ObservedRecord {
                x: 0.4,
                arm: 0,
                stage: Stage::I,
                time: t,
                event: e,
            })
            .collect();
        let opts = FitOptions {
            with_covariate: false,
            ..Default::default()
        };
        let fit = fit_pwe(&recs, &[], opts).unwrap();
        assert!((fit.log_rates[0].exp() - 3.0 / 4.2).abs() < 1e-10);
        assert!(fit.converged);
        assert_eq!(
            fit_pwe(&recs, &[], FitOptions::default()),
            Err(Error::RankDeficient)
        );
    }

    #[test]
    fn empty_interval_is_reported() {
        let recs: Vec<ObservedRecord> = [(0.5, true), (1.0, false)]
            .iter()
            .map(|&(t, e)| ObservedRecord {
                x: 0.4,
                arm: 0,
                stage: Stage::I,
                time: t,
                event: e,
            })
            .collect();
        let opts = FitOptions {
            with_covariate: false,
            ..Default::default()
        };
        assert_eq!(fit_pwe(&recs, &[0.8], opts), Err(Error::EmptyInterval(1)));
    }

    #[test]
    fn profile_and_irls_agree() {
        let recs = simulated(800, 4);
        for cps in [vec![], vec![0.25], vec![0.2, 0.9]] {
            let a = fit_pwe(&recs, &cps, FitOptions::default()).unwrap();
            let b = profile_fit(&recs, &cps, FitOptions::default()).unwrap();
            assert!(
                (a.gamma - b.gamma).abs() < 1e-7,
                "{} vs {}",
                a.gamma,
                b.gamma
            );
            for (x, y) in a.log_rates.iter().zip(&b.log_rates) {
                assert!((x - y).abs() < 1e-7);
            }
            assert!((a.log_likelihood - b.log_likelihood).abs() < 1e-6);
        }
    }

    #[test]
    fn recovers_biomarker_effect() {
        let recs = simulated(5000, 9);
        let fit = fit_pwe(&recs, &[0.25], FitOptions::default()).unwrap();
        assert!((fit.gamma - 0.9).abs() < 0.1, "{}", fit.gamma);
        assert!((fit.log_rates[0].exp() - 0.9).abs() < 0.1);
        assert!((fit.log_rates[1].exp() - 0.45).abs() < 0.06);
    }

    #[test]
    fn irls_solution_is_a_local_maximum() {
        let recs = simulated(500, 12);
        let exp = expand_pseudo(&recs, [&[0.25], &[0.25]]);
        let fit = fit_poisson_loglinear(&exp.rows, &[0.25], FitOptions::default()).unwrap();
        let ll = |a0: f64, a1: f64, g: f64| -> f64 {
            exp.rows
                .iter()
                .map(|r| {
                    let eta = if r.interval == 0 { a0 } else { a1 } + g * (1.0 - r.x);
                    (if r.event { eta } else { 0.0 }) - r.exposure * eta.exp()
                })
                .sum()
        };
        let best = ll(fit.log_rates[0], fit.log_rates[1], fit.gamma);
        assert!((best - fit.log_likelihood).abs() < 1e-8);
        let mut rng = replicate_rng(99, 1);
        for _ in 0..200 {
            let d: [f64; 3] = [
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            ];
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let s = 0.1 / norm;
            let v = ll(
                fit.log_rates[0] + d[0] * s,
                fit.log_rates[1] + d[1] * s,
                fit.gamma + d[2] * s,
            );
            assert!(v <= best);
        }
    }
}
