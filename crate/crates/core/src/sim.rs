//! Patient-level data generation for the all-comer and two-stage enrichment
//! designs: biomarkers, enrollment calendar times, event times by inverse
//! transform, exponential loss to follow-up and administrative censoring.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Open01};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::{ArmPair, BiomarkerSupport, PiecewiseExpModel};

/// Trial stage a patient was accrued in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    I,
    II,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::I => "I",
            Stage::II => "II",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patient {
    pub x: f64,
    pub arm: u8,
    /// Calendar enrollment time (years).
    pub enroll: f64,
    /// Latent event time measured from enrollment.
    pub event_time: f64,
    /// Loss-to-follow-up time measured from enrollment.
    pub ltfu_time: f64,
    pub stage: Stage,
}

/// What the analyst sees at a given calendar time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedRecord {
    pub x: f64,
    pub arm: u8,
    pub stage: Stage,
    pub time: f64,
    pub event: bool,
}

/// Accrual calendar and per-arm stage sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccrualPlan {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub n1: usize,
    pub n2: usize,
    /// Per-year exponential loss-to-follow-up rate (0 disables it).
    pub ltfu_rate: f64,
}

impl AccrualPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.t1 > 0.0 && self.t1 < self.t2 && self.t2 <= self.t3) {
            return Err(Error::config("accrual", "need 0 < t1 < t2 <= t3"));
        }
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::config("accrual", "n1 and n2 must be >= 1"));
        }
        if !(self.ltfu_rate >= 0.0) || !self.ltfu_rate.is_finite() {
            return Err(Error::config(
                "accrual.ltfu_rate",
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        2 * (self.n1 + self.n2)
    }
}

/// Independent stream for replicate `replicate` under `base_seed`.
pub fn replicate_rng(base_seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(replicate);
    rng
}

/// Event time `T` with `S(T | x) = u`, inverted segment by segment.
pub fn sample_event_time(model: &PiecewiseExpModel, x: f64, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidInput(format!(
            "uniform draw {u} outside (0, 1)"
        )));
    }
    Ok(invert(model, x, u))
}

fn invert(model: &PiecewiseExpModel, x: f64, u: f64) -> f64 {
    let mut remaining = -u.ln() / model.multiplier(x);
    for (a, b, r) in model.segments() {
        let capacity = r * (b - a);
        if remaining <= capacity {
            return a + remaining / r;
        }
        remaining -= capacity;
    }
    unreachable!("last segment is unbounded")
}

/// Draws one block of patients: exactly `n_per_arm` per arm in shuffled
/// order, biomarkers uniform on `[x_lo, x_hi)` and enrollment uniform on
/// `[e_lo, e_hi)`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_block<R: Rng + ?Sized>(
    arms: &ArmPair,
    n_per_arm: usize,
    (x_lo, x_hi): (f64, f64),
    (e_lo, e_hi): (f64, f64),
    ltfu_rate: f64,
    stage: Stage,
    rng: &mut R,
) -> Vec<Patient> {
    let mut assignment: Vec<u8> = std::iter::repeat_n(0u8, n_per_arm)
        .chain(std::iter::repeat_n(1u8, n_per_arm))
        .collect();
    assignment.shuffle(rng);
    let ltfu = (ltfu_rate > 0.0).then(|| Exp::new(ltfu_rate).expect("positive rate"));
    assignment
        .into_iter()
        .map(|arm| {
            let ux: f64 = rng.sample(Open01);
            let x = x_lo + (x_hi - x_lo) * ux;
            let enroll = e_lo + (e_hi - e_lo) * rng.random::<f64>();
            let u: f64 = rng.sample(Open01);
            let event_time = invert(arms.arm(arm), x, u);
            let ltfu_time = match &ltfu {
                Some(d) => d.sample(rng),
                None => f64::INFINITY,
            };
            Patient {
                x,
                arm,
                enroll,
                event_time,
                ltfu_time,
                stage,
            }
        })
        .collect()
}

/// Stage I: `n1` per arm from the whole support, enrolled on `[0, t1)`.
pub fn simulate_stage1<R: Rng + ?Sized>(
    plan: &AccrualPlan,
    arms: &ArmPair,
    support: BiomarkerSupport,
    rng: &mut R,
) -> Vec<Patient> {
    simulate_block(
        arms,
        plan.n1,
        (support.lower(), support.upper()),
        (0.0, plan.t1),
        plan.ltfu_rate,
        Stage::I,
        rng,
    )
}

/// Stage II: `n2` per arm enrolled on `[t1, t2)`, restricted to
/// `(enrichment_cut, upper]` when a cut is given.
pub fn simulate_stage2<R: Rng + ?Sized>(
    plan: &AccrualPlan,
    arms: &ArmPair,
    support: BiomarkerSupport,
    enrichment_cut: Option<f64>,
    rng: &mut R,
) -> Result<Vec<Patient>> {
    let lo = match enrichment_cut {
        Some(c) if c >= support.upper() => {
            return Err(Error::EmptyEnrichmentRegion {
                cut: c,
                upper: support.upper(),
            });
        }
        Some(c) => c.max(support.lower()),
        None => support.lower(),
    };
    Ok(simulate_block(
        arms,
        plan.n2,
        (lo, support.upper()),
        (plan.t1, plan.t2),
        plan.ltfu_rate,
        Stage::II,
        rng,
    ))
}

/// Applies loss to follow-up and administrative censoring at calendar time
/// `analysis_time`: `U = min(T, L, t′ − E)`, `δ = I[T ≤ min(L, t′ − E)]`.
pub fn observe(patients: &[Patient], analysis_time: f64) -> Result<Vec<ObservedRecord>> {
    patients
        .iter()
        .map(|p| {
            if p.enroll > analysis_time {
                return Err(Error::EnrolledAfterAnalysis {
                    enroll: p.enroll,
                    analysis: analysis_time,
                });
            }
            let censor = p.ltfu_time.min(analysis_time - p.enroll);
            let event = p.event_time <= censor;
            Ok(ObservedRecord {
                x: p.x,
                arm: p.arm,
                stage: p.stage,
                time: if event { p.event_time } else { censor },
                event,
            })
        })
        .collect()
}

/// Header of the dataset dump.
pub const RECORD_CSV_HEADER: &str = "replicate,stage,arm,x,U,delta";

/// Writes one CSV row per record in the given order.
pub fn write_records_csv<W: Write>(
    out: &mut W,
    replicate: u64,
    records: &[ObservedRecord],
) -> std::io::Result<()> {
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            replicate,
            r.stage.label(),
            r.arm,
            r.x,
            r.time,
            u8::from(r.event)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazard::{conditional_survival, simulation_arms};

    fn plan() -> AccrualPlan {
        AccrualPlan {
            t1: 1.0,
            t2: 2.0,
            t3: 4.0,
            n1: 50,
            n2: 40,
            ltfu_rate: 0.12,
        }
    }

    #[test]
    fn exponential_inverse_transform() {
        let m = PiecewiseExpModel::exponential(0.7).unwrap();
        let t = sample_event_time(&m, 0.2, 0.3).unwrap();
        assert!((t + 0.3f64.ln() / 0.7).abs() < 1e-15);
        assert!(sample_event_time(&m, 0.2, 0.0).is_err());
        assert!(sample_event_time(&m, 0.2, 1.0).is_err());
    }

    #[test]
    fn inverse_transform_identity() {
        let arms = simulation_arms();
        let mut rng = replicate_rng(7, 0);
        for _ in 0..1000 {
            let x: f64 = rng.random();
            let u: f64 = rng.sample(Open01);
            let t = sample_event_time(&arms.experimental, x, u).unwrap();
            assert!((conditional_survival(&arms.experimental, x, t).unwrap() - u).abs() < 1e-10);
        }
    }

    #[test]
    fn stage_counts_and_windows() {
        let arms = simulation_arms();
        let mut rng = replicate_rng(1, 3);
        let s1 = simulate_stage1(&plan(), &arms, BiomarkerSupport::unit(), &mut rng);
        assert_eq!(s1.len(), 100);
        assert_eq!(s1.iter().filter(|p| p.arm == 1).count(), 50);
        assert!(s1
            .iter()
            .all(|p| p.enroll >= 0.0 && p.enroll < 1.0 && p.stage == Stage::I));
        let s2 = simulate_stage2(
            &plan(),
            &arms,
            BiomarkerSupport::unit(),
            Some(0.5),
            &mut rng,
        )
        .unwrap();
        assert_eq!(s2.len(), 80);
        assert_eq!(s2.iter().filter(|p| p.arm == 0).count(), 40);
        assert!(s2
            .iter()
            .all(|p| p.x > 0.5 && p.enroll >= 1.0 && p.enroll < 2.0));
        assert!(matches!(
            simulate_stage2(
                &plan(),
                &arms,
                BiomarkerSupport::unit(),
                Some(1.0),
                &mut rng
            ),
            Err(Error::EmptyEnrichmentRegion { .. })
        ));
    }

    #[test]
    fn administrative_censoring_binds() {
        let p = Patient {
            x: 0.5,
            arm: 1,
            enroll: 0.5,
            event_time: 3.0,
            ltfu_time: 10.0,
            stage: Stage::I,
        };
        let r = observe(&[p], 2.0).unwrap()[0];
        assert!((r.time - 1.5).abs() < 1e-15);
        assert!(!r.event);
        assert!(observe(&[p], 0.4).is_err());
    }

    #[test]
    fn no_censoring_at_long_horizon() {
        let arms = simulation_arms();
        let mut p = plan();
        p.ltfu_rate = 0.0;
        let mut rng = replicate_rng(2, 0);
        let pts = simulate_stage1(&p, &arms, BiomarkerSupport::unit(), &mut rng);
        let obs = observe(&pts, 1e9).unwrap();
        assert!(obs.iter().all(|r| r.event));
    }

    #[test]
    fn same_seed_same_data() {
        let arms = simulation_arms();
        let a = simulate_stage1(
            &plan(),
            &arms,
            BiomarkerSupport::unit(),
            &mut replicate_rng(11, 5),
        );
        let b = simulate_stage1(
            &plan(),
            &arms,
            BiomarkerSupport::unit(),
            &mut replicate_rng(11, 5),
        );
        let c = simulate_stage1(
            &plan(),
            &arms,
            BiomarkerSupport::unit(),
            &mut replicate_rng(11, 6),
        );
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn csv_dump_rows() {
        let r = ObservedRecord {
            x: 0.25,
            arm: 1,
            stage: Stage::II,
            time: 1.5,
            event: true,
        };
        let mut buf = Vec::new();
        write_records_csv(&mut buf, 3, &[r]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "3,II,1,0.25,1.5,1\n");
    }
}
