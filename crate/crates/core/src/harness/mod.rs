//! Scenario runs, global-null sweeps, power curves and the worked example,
//! with their CSV outputs.

mod config;
mod metrics;
pub mod report;

use std::io::Write;
use std::path::Path;

pub use config::{
    parse_config, parse_config_str, AccrualSection, ArmsSection, ConfigFile, DesignSection,
    HazardSection, NullSweepSection, PowerSection, PredictionSection, ScenarioSection,
    ScenarioSpec, SupportSection,
};
pub use metrics::{
    aggregate, null_sweep, EstimatorRow, FwerCell, MetricsTable, NullSweepTable, PowerRow, Summary,
};

use crate::design::{
    global_power, monte_carlo_sigma, positive_fraction, run_replicates, sample_size,
    simulate_dataset, CalibrationTarget, CriticalValues, DesignConfig, DesignKind, PowerInputs,
    PredictionMode, ReplicateOutcome,
};
use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::hazard::{example_arms, BiomarkerSupport, CovariateForm, DesignTruth};
use crate::sim::{replicate_rng, write_records_csv, AccrualPlan, RECORD_CSV_HEADER};

/// Replicates of one scenario and their aggregate.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub metrics: MetricsTable,
    pub outcomes: Vec<std::result::Result<ReplicateOutcome, Error>>,
}

/// Runs `spec.reps` trials under the configured alternative.
pub fn run_scenario(spec: &ScenarioSpec, estimators: &[Estimator]) -> Result<ScenarioRun> {
    let truth = spec.design.truth()?;
    let critical = spec.design.critical()?;
    let outcomes = run_replicates(&spec.design, spec.reps, spec.seed, spec.workers)?;
    let metrics = aggregate(&spec.name, spec.id, truth, critical, estimators, &outcomes);
    Ok(ScenarioRun { metrics, outcomes })
}

/// Runs `spec.reps` trials under the global null and applies every
/// `(α0, α̃)` pair to them.
pub fn run_null_sweep(
    spec: &ScenarioSpec,
    alpha0s: &[f64],
    alpha_tildes: &[f64],
    estimators: &[Estimator],
) -> Result<NullSweepTable> {
    if alpha0s.is_empty() || alpha_tildes.is_empty() {
        return Err(Error::InvalidInput(
            "null sweep needs at least one alpha0 and one alpha-tilde".into(),
        ));
    }
    let null = spec.design.global_null();
    let outcomes = run_replicates(&null, spec.reps, spec.seed, spec.workers)?;
    null_sweep(
        &spec.name,
        spec.id,
        alpha0s,
        alpha_tildes,
        estimators,
        &outcomes,
    )
}

/// Writes the simulated cohorts of the first `reps` replicates, regenerated
/// from the same streams as [`run_scenario`].
pub fn dump_datasets(spec: &ScenarioSpec, reps: usize, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{RECORD_CSV_HEADER}")?;
    for r in 0..reps as u64 {
        let ds = simulate_dataset(&spec.design, &mut replicate_rng(spec.seed, r))?;
        write_records_csv(&mut out, r, &ds.records)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub estimator: Estimator,
    pub n_total: usize,
    pub n_plus: f64,
    pub power: f64,
}

/// Monte Carlo standard deviations, a power curve and sample sizes for one
/// design.
#[derive(Debug, Clone)]
pub struct DesignPower {
    pub kind: DesignKind,
    pub inputs: PowerInputs,
    pub critical: CriticalValues,
    pub curve: Vec<CurvePoint>,
    pub target_power: f64,
    pub sample_sizes: Vec<(Estimator, Result<usize>)>,
}

/// Settings of a power analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSettings {
    pub sigma_m: usize,
    pub sigma_b: usize,
    pub n_grid: Vec<usize>,
    pub target_power: f64,
    pub seed: u64,
    pub workers: usize,
}

pub fn design_power(
    config: &DesignConfig,
    settings: &PowerSettings,
    estimators: &[Estimator],
) -> Result<DesignPower> {
    let truth = config.truth()?;
    let critical = config.critical()?;
    let sigmas = monte_carlo_sigma(
        config,
        settings.sigma_m,
        settings.sigma_b,
        settings.seed,
        settings.workers,
    )?;
    let kind = DesignKind::of(config);
    let inputs = PowerInputs {
        truth,
        sigmas,
        kind,
        support: config.support,
    };
    let mut curve = Vec::new();
    for &e in estimators {
        for &n in &settings.n_grid {
            curve.push(CurvePoint {
                estimator: e,
                n_total: n,
                n_plus: positive_fraction(n as f64, truth.cutpoint, kind, config.support),
                power: global_power(&inputs, e, n as f64, &critical),
            });
        }
    }
    let sample_sizes = estimators
        .iter()
        .map(|&e| (e, sample_size(&inputs, e, settings.target_power, &critical)))
        .collect();
    Ok(DesignPower {
        kind,
        inputs,
        critical,
        curve,
        target_power: settings.target_power,
        sample_sizes,
    })
}

/// Enrichment and all-comer variants of the worked example.
#[derive(Debug, Clone)]
pub struct ExampleReport {
    pub truth: DesignTruth,
    pub enrichment: DesignPower,
    pub all_comer: DesignPower,
}

/// Built-in worked-example scenario: biomarker uniform on `(0.01, 1]`,
/// `t* = 1.5` years, accrual over one year with analysis at 2.5 years, 5%
/// loss to follow-up at two years, `α0 = 2.5%` and `α̃ = 2.3%`.
pub fn example_spec() -> ScenarioSpec {
    let support = BiomarkerSupport::new(0.01, 1.0).expect("valid support");
    ScenarioSpec {
        name: "worked-example".into(),
        id: None,
        design: DesignConfig {
            arms: example_arms(),
            support,
            plan: AccrualPlan {
                t1: 0.5,
                t2: 1.0,
                t3: 2.5,
                n1: 2500,
                n2: 2500,
                ltfu_rate: -(0.95f64.ln()) / 2.0,
            },
            t_star: 1.5,
            alpha0: 0.025,
            alpha_tilde: 0.023,
            estimator: Estimator::CwAugmented,
            prediction: Some(PredictionMode::KnownLocations),
            fit_form: CovariateForm::Linear,
            calibration_target: CalibrationTarget::StageOnePositives,
        },
        reps: 1000,
        seed: 2024,
        workers: 1,
        null_sweep: None,
        power: Some(PowerSection {
            family_alpha: 0.025,
            alpha_tilde_grid: crate::design::DEFAULT_ALPHA_TILDE_GRID.to_vec(),
            sigma_m: 10_000,
            sigma_b: 1000,
            n_grid: (1..=30).map(|k| 50 * k).collect(),
        }),
    }
}

/// Truths plus power curves and sample sizes of the enrichment and
/// all-comer variants of `spec`.
pub fn run_example(
    spec: &ScenarioSpec,
    settings: &PowerSettings,
    estimators: &[Estimator],
) -> Result<ExampleReport> {
    let enriched = DesignConfig {
        prediction: spec
            .design
            .prediction
            .or(Some(PredictionMode::KnownLocations)),
        ..spec.design.clone()
    };
    let all_comer = DesignConfig {
        prediction: None,
        ..spec.design.clone()
    };
    let truth = enriched.truth()?;
    Ok(ExampleReport {
        truth,
        enrichment: design_power(&enriched, settings, estimators)?,
        all_comer: design_power(
            &all_comer,
            &PowerSettings {
                seed: settings.seed.wrapping_add(1),
                ..settings.clone()
            },
            estimators,
        )?,
    })
}
