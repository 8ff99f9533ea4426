use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::hazard::BiomarkerSupport;
use crate::sim::ObservedRecord;
use crate::survival::{censoring_km, SurvivalSample};

/// Per-patient quantities entering the IPCW regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpcwOutcome {
    /// `min(U, t*)`.
    pub y: f64,
    /// Whether `min(T, t*)` is observed.
    pub delta_star: bool,
    /// `δ* / Ĝ(Y−)`, zero for patients censored before `t*`.
    pub weight: f64,
}

/// IPCW outcomes for `records`, with the censoring survivor function
/// estimated by Kaplan–Meier over the same records (both arms pooled).
pub fn ipcw_outcomes(records: &[ObservedRecord], t_star: f64) -> Result<Vec<IpcwOutcome>> {
    if records.is_empty() {
        return Err(Error::NoSamples);
    }
    let samples: Vec<SurvivalSample> = records
        .iter()
        .map(|r| SurvivalSample::new(r.time, r.event))
        .collect();
    let g = censoring_km(&samples)?;
    records
        .iter()
        .map(|r| {
            let y = r.time.min(t_star);
            let delta_star = r.event || r.time >= t_star;
            let weight = if delta_star {
                let gy = g.left_limit(y);
                if gy <= 0.0 {
                    return Err(Error::CensoringSupport(y));
                }
                1.0 / gy
            } else {
                0.0
            };
            Ok(IpcwOutcome {
                y,
                delta_star,
                weight,
            })
        })
        .collect()
}

/// Identity-link RMST regression `E[min(T, t*) | X, Z] = β0 + β1 Z + β2 X + β3 ZX`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmstRegressionFit {
    pub beta: [f64; 4],
    /// Sandwich covariance of `β̂` (not scaled by `n`).
    pub covariance: [[f64; 4]; 4],
    pub n: usize,
    pub t_star: f64,
}

impl RmstRegressionFit {
    /// Fitted conditional RMST for arm `z` at biomarker `x`.
    pub fn predict(&self, z: u8, x: f64) -> f64 {
        let z = f64::from(z);
        self.beta[0] + self.beta[1] * z + self.beta[2] * x + self.beta[3] * z * x
    }

    /// Standard error of `β̂3`.
    pub fn se_beta3(&self) -> f64 {
        self.covariance[3][3].max(0.0).sqrt()
    }
}

fn design_row(r: &ObservedRecord) -> Vector4<f64> {
    let z = f64::from(r.arm);
    Vector4::new(1.0, z, r.x, z * r.x)
}

/// Weighted least squares with weights `δ*/Ĝ(Y−)` and robust sandwich
/// covariance `A⁻¹ B A⁻¹`, `A = Σ w xxᵀ`, `B = Σ w² e² xxᵀ` (`Ĝ` held fixed).
pub fn fit_rmst_regression(records: &[ObservedRecord], t_star: f64) -> Result<RmstRegressionFit> {
    if !(t_star > 0.0) {
        return Err(Error::InvalidInput(format!(
            "truncation time {t_star} must be positive"
        )));
    }
    for arm in [0u8, 1] {
        let max_observed = records
            .iter()
            .filter(|r| r.arm == arm)
            .map(|r| r.time)
            .fold(f64::NEG_INFINITY, f64::max);
        if !(max_observed >= t_star) {
            return Err(Error::BeyondFollowUp {
                t_star,
                max_observed,
                arm,
            });
        }
    }
    let outcomes = ipcw_outcomes(records, t_star)?;

    let mut a = Matrix4::<f64>::zeros();
    let mut rhs = Vector4::<f64>::zeros();
    for (r, o) in records.iter().zip(&outcomes) {
        if o.weight > 0.0 {
            let x = design_row(r);
            a += o.weight * x * x.transpose();
            rhs += o.weight * o.y * x;
        }
    }
    let a_inv = a.try_inverse().ok_or(Error::SingularDesign)?;
    let beta = a_inv * rhs;
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::SingularDesign);
    }

    let mut b = Matrix4::<f64>::zeros();
    for (r, o) in records.iter().zip(&outcomes) {
        if o.weight > 0.0 {
            let x = design_row(r);
            let e = o.y - x.dot(&beta);
            b += (o.weight * e).powi(2) * x * x.transpose();
        }
    }
    let cov = a_inv * b * a_inv;
    let mut covariance = [[0.0; 4]; 4];
    for (i, row) in covariance.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = 0.5 * (cov[(i, j)] + cov[(j, i)]);
        }
    }
    Ok(RmstRegressionFit {
        beta: [beta[0], beta[1], beta[2], beta[3]],
        covariance,
        n: records.len(),
        t_star,
    })
}

/// `−β̂1/β̂3` clamped to the support; `None` unless `β̂3 > 0`.
pub fn cutpoint_from_regression(fit: &RmstRegressionFit, support: BiomarkerSupport) -> Option<f64> {
    let b3 = fit.beta[3];
    (b3 > 0.0).then(|| support.clamp(-fit.beta[1] / b3))
}

/// Wald statistic for a positive interaction, `β̂3 / SE(β̂3)`.
pub fn interaction_test(fit: &RmstRegressionFit) -> Result<f64> {
    if fit.beta[3] == 0.0 {
        return Ok(0.0);
    }
    let se = fit.se_beta3();
    if !(se > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(fit.beta[3] / se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazard::{simulation_arms, ArmPair, PiecewiseExpModel};
    use crate::sim::{observe, replicate_rng, simulate_block, Stage};
    use statrs::distribution::{ContinuousCDF, Normal};

    fn rec(x: f64, arm: u8, time: f64, event: bool) -> ObservedRecord {
        ObservedRecord {
            x,
            arm,
            stage: Stage::I,
            time,
            event,
        }
    }

    fn cohort(
        arms: &ArmPair,
        n_per_arm: usize,
        ltfu: f64,
        horizon: f64,
        seed: u64,
        rep: u64,
    ) -> Vec<ObservedRecord> {
        let mut rng = replicate_rng(seed, rep);
        let pts = simulate_block(
            arms,
            n_per_arm,
            (0.0, 1.0),
            (0.0, 1.0),
            ltfu,
            Stage::I,
            &mut rng,
        );
        observe(&pts, horizon).unwrap()
    }

    /// Least squares by modified Gram–Schmidt QR, independent of the normal equations.
    #[allow(clippy::needless_range_loop)]
    fn qr_least_squares(x: &[[f64; 4]], y: &[f64]) -> [f64; 4] {
        let n = y.len();
        let mut q: Vec<Vec<f64>> = (0..4).map(|j| x.iter().map(|r| r[j]).collect()).collect();
        let mut r = [[0.0; 4]; 4];
        for j in 0..4 {
            for i in 0..j {
                let d: f64 = (0..n).map(|k| q[i][k] * q[j][k]).sum();
                r[i][j] = d;
                for k in 0..n {
                    q[j][k] -= d * q[i][k];
                }
            }
            let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            r[j][j] = norm;
            q[j].iter_mut().for_each(|v| *v /= norm);
        }
        let qty: Vec<f64> = (0..4)
            .map(|j| (0..n).map(|k| q[j][k] * y[k]).sum())
            .collect();
        let mut b = [0.0; 4];
        for i in (0..4).rev() {
            b[i] = (qty[i] - (i + 1..4).map(|j| r[i][j] * b[j]).sum::<f64>()) / r[i][i];
        }
        b
    }

    #[test]
    fn no_censoring_reduces_to_least_squares() {
        let recs = cohort(&simulation_arms(), 300, 0.0, 100.0, 3, 0);
        assert!(recs.iter().all(|r| r.event));
        let fit = fit_rmst_regression(&recs, 2.0).unwrap();
        let xs: Vec<[f64; 4]> = recs
            .iter()
            .map(|r| {
                let z = f64::from(r.arm);
                [1.0, z, r.x, z * r.x]
            })
            .collect();
        let ys: Vec<f64> = recs.iter().map(|r| r.time.min(2.0)).collect();
        let ols = qr_least_squares(&xs, &ys);
        for (a, b) in fit.beta.iter().zip(&ols) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        assert!(ipcw_outcomes(&recs, 2.0)
            .unwrap()
            .iter()
            .all(|o| o.weight == 1.0));
    }

    #[test]
    fn weights_follow_censoring_survivor() {
        let recs = vec![
            rec(0.1, 0, 1.0, true),
            rec(0.2, 1, 2.0, false),
            rec(0.3, 0, 3.0, true),
            rec(0.4, 1, 4.0, false),
        ];
        let out = ipcw_outcomes(&recs, 3.5).unwrap();
        // Ĝ drops to 2/3 after the censoring at 2; Ĝ(3.5−) = 2/3, the
        // censoring at 4 is beyond t* and counts as observed.
        assert_eq!(out[0].weight, 1.0);
        assert_eq!(out[1].weight, 0.0);
        assert!((out[2].weight - 1.5).abs() < 1e-12);
        assert!(out[3].delta_star);
        assert!((out[3].y - 3.5).abs() < 1e-12);
        assert!((out[3].weight - 1.5).abs() < 1e-12);
    }

    #[test]
    fn truncation_beyond_follow_up_is_rejected() {
        let recs = cohort(&simulation_arms(), 50, 0.0, 1.0, 5, 0);
        assert!(matches!(
            fit_rmst_regression(&recs, 2.0),
            Err(Error::BeyondFollowUp { .. })
        ));
    }

    #[test]
    fn cutpoint_rule() {
        let mut fit = RmstRegressionFit {
            beta: [0.0, -0.5, 0.0, 1.0],
            covariance: [[0.0; 4]; 4],
            n: 1,
            t_star: 1.0,
        };
        let unit = BiomarkerSupport::unit();
        assert_eq!(cutpoint_from_regression(&fit, unit), Some(0.5));
        fit.beta[1] = 0.2;
        assert_eq!(cutpoint_from_regression(&fit, unit), Some(0.0));
        fit.beta[3] = -0.2;
        assert_eq!(cutpoint_from_regression(&fit, unit), None);
        fit.beta[3] = 0.0;
        assert_eq!(interaction_test(&fit), Ok(0.0));
    }

    #[test]
    fn cutpoint_is_scale_invariant() {
        let recs = cohort(&simulation_arms(), 400, 0.12, 4.0, 8, 0);
        let fit = fit_rmst_regression(&recs, 2.0).unwrap();
        let scaled: Vec<ObservedRecord> = recs
            .iter()
            .map(|r| ObservedRecord {
                time: r.time * 3.0,
                ..*r
            })
            .collect();
        let fit3 = fit_rmst_regression(&scaled, 6.0).unwrap();
        let c1 = cutpoint_from_regression(&fit, BiomarkerSupport::unit()).unwrap();
        let c3 = cutpoint_from_regression(&fit3, BiomarkerSupport::unit()).unwrap();
        assert!((c1 - c3).abs() < 1e-10);
        assert!((interaction_test(&fit).unwrap() - interaction_test(&fit3).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn sandwich_is_symmetric_psd() {
        let recs = cohort(&simulation_arms(), 400, 0.12, 4.0, 9, 0);
        let fit = fit_rmst_regression(&recs, 2.0).unwrap();
        let m = Matrix4::from_fn(|i, j| fit.covariance[i][j]);
        assert_eq!(m, m.transpose());
        assert!(m.symmetric_eigenvalues().iter().all(|&e| e >= -1e-15));
    }

    fn null_statistics(reps: u64) -> Vec<f64> {
        let rate = PiecewiseExpModel::exponential(0.9).unwrap();
        let arms = ArmPair::new(rate.clone(), rate);
        (0..reps)
            .map(|r| {
                let recs = cohort(&arms, 1000, 0.12, 4.0, 77, r);
                interaction_test(&fit_rmst_regression(&recs, 2.0).unwrap()).unwrap()
            })
            .collect()
    }

    #[test]
    fn interaction_test_holds_level_under_global_null() {
        let z = null_statistics(10_000);
        let q0 = Normal::standard().inverse_cdf(0.975);
        let rate = z.iter().filter(|&&v| v > q0).count() as f64 / z.len() as f64;
        assert!((rate - 0.025).abs() <= 0.005, "rejection rate {rate}");

        let mut sorted = z.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let phi = Normal::standard();
        let ks = sorted
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = phi.cdf(v);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 1.628 / n.sqrt(), "KS distance {ks}");
    }

    #[test]
    fn interaction_test_has_power_under_alternative() {
        let reps = 300;
        let q0 = Normal::standard().inverse_cdf(0.975);
        let hits = (0..reps)
            .filter(|&r| {
                let recs = cohort(&simulation_arms(), 1010, 0.12, 4.0, 91, r);
                interaction_test(&fit_rmst_regression(&recs, 2.0).unwrap()).unwrap() > q0
            })
            .count();
        assert!(hits as f64 / reps as f64 > 0.99, "{hits}/{reps}");
    }
}
