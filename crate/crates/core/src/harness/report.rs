//! CSV tables and the text summary.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::metrics::{EstimatorRow, MetricsTable, NullSweepTable, Summary};
use super::{DesignPower, ExampleReport};
use crate::design::{Hypothesis, NullCalibration, ReplicateOutcome};
use crate::error::{Error, Result};
use crate::estimators::Estimator;

pub const TABLE2: &str = "table2.csv";
pub const TABLE3: &str = "table3.csv";
pub const TABLE4: &str = "table4.csv";
pub const ETABLE1: &str = "etable1.csv";
pub const ETABLE2: &str = "etable2.csv";
pub const ETABLE3: &str = "etable3.csv";
pub const SUMMARY: &str = "summary.txt";
pub const REPLICATES: &str = "replicates.csv";

/// Fixed six-decimal rendering; `NA` for missing or non-finite values.
pub fn fmt(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.6}"),
        _ => "NA".to_string(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn scenario_label(name: &str, id: Option<u8>) -> String {
    id.map_or_else(|| name.to_string(), |i| i.to_string())
}

#[derive(Serialize)]
struct CutpointRow {
    scenario: String,
    c0_mean: String,
    c0_bias: String,
    c0_sd: String,
    c0_n: usize,
    cut_hat_mean: String,
    cut_hat_bias: String,
    cut_hat_sd: String,
    cut_hat_n: usize,
    true_cutpoint: String,
}

#[derive(Serialize)]
struct EstimationRow {
    scenario: String,
    estimator: usize,
    label: &'static str,
    n: usize,
    mean: String,
    bias: String,
    sd: String,
    mean_se: String,
    coverage: String,
    mean_n_plus: String,
    truth: String,
}

#[derive(Serialize)]
struct OperatingRow {
    scenario: String,
    estimator: usize,
    label: &'static str,
    mean_true_negatives: String,
    power: String,
    positive_tests: String,
    mean_n_plus: String,
    failure_rate: String,
}

#[derive(Serialize)]
struct InteractionRow {
    scenario: String,
    alpha0: String,
    rejection_rate: String,
    reps: usize,
}

#[derive(Serialize)]
struct FwerRow {
    scenario: String,
    alpha0: String,
    alpha_tilde: String,
    estimator: usize,
    label: &'static str,
    fwer: String,
}

fn summary_cells(s: Option<Summary>) -> (String, String, String, usize) {
    match s {
        Some(s) => (fmt(Some(s.mean)), fmt(Some(s.bias)), fmt(s.sd), s.n),
        None => ("NA".into(), "NA".into(), "NA".into(), 0),
    }
}

fn estimation_rows<'a>(
    m: &'a MetricsTable,
    rows: &'a [EstimatorRow],
) -> impl Iterator<Item = EstimationRow> + 'a {
    rows.iter().map(move |r| {
        let (mean, bias, sd, n) = summary_cells(r.estimate);
        EstimationRow {
            scenario: scenario_label(&m.name, m.id),
            estimator: r.estimator.index(),
            label: r.estimator.label(),
            n,
            mean,
            bias,
            sd,
            mean_se: fmt(Some(r.mean_se)),
            coverage: fmt(Some(r.coverage)),
            mean_n_plus: fmt(Some(r.mean_n_plus)),
            truth: fmt(Some(m.truth.delta_positive)),
        }
    })
}

/// `table2.csv`, `table3.csv`, `table4.csv` and `etable1.csv`, one block of
/// rows per scenario.
pub fn write_scenario_tables(dir: &Path, tables: &[MetricsTable]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rows(
        &dir.join(TABLE2),
        tables.iter().map(|m| {
            let (c0_mean, c0_bias, c0_sd, c0_n) = summary_cells(m.c0);
            let (cut_hat_mean, cut_hat_bias, cut_hat_sd, cut_hat_n) = summary_cells(m.cut_hat);
            CutpointRow {
                scenario: scenario_label(&m.name, m.id),
                c0_mean,
                c0_bias,
                c0_sd,
                c0_n,
                cut_hat_mean,
                cut_hat_bias,
                cut_hat_sd,
                cut_hat_n,
                true_cutpoint: fmt(Some(m.truth.cutpoint)),
            }
        }),
    )?;
    write_rows(
        &dir.join(TABLE3),
        tables.iter().flat_map(|m| estimation_rows(m, &m.estimated)),
    )?;
    write_rows(
        &dir.join(ETABLE1),
        tables.iter().flat_map(|m| estimation_rows(m, &m.true_cut)),
    )?;
    write_rows(
        &dir.join(TABLE4),
        tables.iter().flat_map(|m| {
            m.power.iter().map(move |p| OperatingRow {
                scenario: scenario_label(&m.name, m.id),
                estimator: p.estimator.index(),
                label: p.estimator.label(),
                mean_true_negatives: fmt(Some(m.mean_true_negatives)),
                power: fmt(Some(p.rejection_rate)),
                positive_tests: fmt(Some(p.positive_tests)),
                mean_n_plus: fmt(Some(p.mean_n_plus)),
                failure_rate: fmt(Some(m.failure_rate())),
            })
        }),
    )
}

/// `etable2.csv` and `etable3.csv`.
pub fn write_null_tables(dir: &Path, tables: &[NullSweepTable]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rows(
        &dir.join(ETABLE2),
        tables.iter().flat_map(|t| {
            t.interaction
                .iter()
                .map(move |&(alpha0, rate)| InteractionRow {
                    scenario: scenario_label(&t.name, t.id),
                    alpha0: fmt(Some(alpha0)),
                    rejection_rate: fmt(Some(rate)),
                    reps: t.reps - t.failures,
                })
        }),
    )?;
    write_rows(
        &dir.join(ETABLE3),
        tables.iter().flat_map(|t| {
            t.fwer.iter().map(move |c| FwerRow {
                scenario: scenario_label(&t.name, t.id),
                alpha0: fmt(Some(c.alpha0)),
                alpha_tilde: fmt(Some(c.alpha_tilde)),
                estimator: c.estimator.index(),
                label: c.estimator.label(),
                fwer: fmt(Some(c.fwer)),
            })
        }),
    )
}

/// One audit row per replicate; every table cell is an average over these.
pub fn write_replicate_log(
    path: &Path,
    seed: u64,
    estimators: &[Estimator],
    critical: &crate::design::CriticalValues,
    outcomes: &[std::result::Result<ReplicateOutcome, Error>],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = [
        "replicate",
        "base_seed",
        "status",
        "stage_one_note",
        "enriched",
        "c0",
        "cut_hat",
        "z_beta3",
        "n_total",
        "true_negatives",
        "calibration_fallback",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for e in estimators {
        let i = e.index();
        for col in [
            "est",
            "se",
            "true_est",
            "true_se",
            "hypothesis",
            "z",
            "rejected",
        ] {
            header.push(format!("{col}_{i}"));
        }
    }
    w.write_record(&header).map_err(csv_err)?;
    for (r, outcome) in outcomes.iter().enumerate() {
        let mut row = vec![r.to_string(), seed.to_string()];
        match outcome {
            Err(e) => {
                row.push(format!("failed: {e}"));
                row.resize(header.len(), "NA".to_string());
            }
            Ok(o) => {
                row.push("ok".into());
                row.push(o.stage_one.error.as_ref().map_or_else(
                    || {
                        o.stage_one
                            .threshold
                            .map_or("NA".into(), |t| format!("{t:?}"))
                    },
                    |e| e.to_string(),
                ));
                row.push(u8::from(o.enriched()).to_string());
                row.push(fmt(o.stage_one.enrichment_cut));
                row.push(fmt(o.cut_hat));
                row.push(fmt(Some(o.z_beta3)));
                row.push(o.n_total.to_string());
                row.push(o.true_negatives.to_string());
                row.push(o.estimated_set.as_ref().map_or("NA".into(), |s| {
                    u8::from(s.calibration_fallback).to_string()
                }));
                for &e in estimators {
                    let est = o.estimated_set.as_ref().and_then(|s| s.get(e));
                    let tru = o.true_set.get(e);
                    let d = o.trial_result(e, critical);
                    row.push(fmt(est.map(|x| x.estimate)));
                    row.push(fmt(est.map(|x| x.se())));
                    row.push(fmt(tru.map(|x| x.estimate)));
                    row.push(fmt(tru.map(|x| x.se())));
                    row.push(match d.hypothesis {
                        Hypothesis::Positive => "positive".into(),
                        Hypothesis::Overall => "overall".into(),
                    });
                    row.push(fmt(Some(d.z)));
                    row.push(u8::from(d.rejected).to_string());
                }
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    design: &'static str,
    estimator: usize,
    label: &'static str,
    n_total: usize,
    n_plus: String,
    power: String,
}

#[derive(Serialize)]
struct SampleSizeRow {
    design: &'static str,
    estimator: usize,
    label: &'static str,
    target_power: String,
    n_total: String,
}

#[derive(Serialize)]
struct SigmaRow {
    design: &'static str,
    quantity: &'static str,
    estimator: String,
    sigma: String,
    m: usize,
    b: usize,
    failures: usize,
}

fn design_label(p: &DesignPower) -> &'static str {
    match p.kind {
        crate::design::DesignKind::Enrichment => "enrichment",
        crate::design::DesignKind::AllComer => "all-comer",
    }
}

/// `power.csv`, `samplesize.csv` and `sigmas.csv` for one or more designs.
pub fn write_power_tables(dir: &Path, designs: &[&DesignPower]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rows(
        &dir.join("power.csv"),
        designs.iter().flat_map(|d| {
            d.curve.iter().map(move |c| CurveRow {
                design: design_label(d),
                estimator: c.estimator.index(),
                label: c.estimator.label(),
                n_total: c.n_total,
                n_plus: fmt(Some(c.n_plus)),
                power: fmt(Some(c.power)),
            })
        }),
    )?;
    write_rows(
        &dir.join("samplesize.csv"),
        designs.iter().flat_map(|d| {
            d.sample_sizes.iter().map(move |(e, n)| SampleSizeRow {
                design: design_label(d),
                estimator: e.index(),
                label: e.label(),
                target_power: fmt(Some(d.target_power)),
                n_total: n.as_ref().map_or("NA".into(), |n| n.to_string()),
            })
        }),
    )?;
    write_rows(
        &dir.join("sigmas.csv"),
        designs.iter().flat_map(|d| {
            let s = &d.inputs.sigmas;
            let label = design_label(d);
            let head = std::iter::once(SigmaRow {
                design: label,
                quantity: "beta3",
                estimator: "NA".into(),
                sigma: fmt(Some(s.beta3)),
                m: s.m,
                b: s.b,
                failures: s.failures,
            });
            let per = Estimator::ALL.into_iter().flat_map(move |e| {
                let i = e.index() - 1;
                [("positive", s.positive[i]), ("overall", s.overall[i])]
                    .into_iter()
                    .map(move |(q, v)| SigmaRow {
                        design: label,
                        quantity: q,
                        estimator: e.index().to_string(),
                        sigma: fmt(Some(v)),
                        m: s.m,
                        b: s.b,
                        failures: s.failures,
                    })
            });
            head.chain(per)
        }),
    )
}

#[derive(Serialize)]
struct CriticalRow {
    alpha0: String,
    alpha_tilde: String,
    fwer: String,
    selected: u8,
}

pub fn write_critical_values(dir: &Path, cal: &NullCalibration) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rows(
        &dir.join("critical_values.csv"),
        cal.grid.iter().map(|&(a, f)| CriticalRow {
            alpha0: fmt(Some(cal.critical.alpha0)),
            alpha_tilde: fmt(Some(a)),
            fwer: fmt(Some(f)),
            selected: u8::from(a == cal.critical.alpha_tilde),
        }),
    )
}

fn pct(x: f64) -> String {
    if x.is_finite() {
        format!("{:.1}%", 100.0 * x)
    } else {
        "NA".into()
    }
}

fn summary_line(label: &str, s: Option<Summary>) -> String {
    match s {
        Some(s) => format!(
            "{label}: mean {:.3}, bias {:+.3}, S.D. {} (n = {})",
            s.mean,
            s.bias,
            fmt(s.sd),
            s.n
        ),
        None => format!("{label}: not identified"),
    }
}

/// Human-readable report for scenario runs.
pub fn scenario_summary(tables: &[MetricsTable]) -> String {
    let mut out = String::new();
    for m in tables {
        out.push_str(&format!("== {} ==\n", m.name));
        out.push_str(&format!(
            "replicates {} (failed {}, {}), enriched {}\n",
            m.reps,
            m.failures,
            pct(m.failure_rate()),
            m.enriched
        ));
        out.push_str(&format!(
            "truth: cutpoint {:.3}, positive-subgroup RMSTD {:.3}, overall RMSTD {:.3}\n",
            m.truth.cutpoint, m.truth.delta_positive, m.truth.delta_overall
        ));
        out.push_str(&format!(
            "critical values: q0 = {:.4}, q = {:.4}\n",
            m.critical.q0, m.critical.q
        ));
        out.push_str(&summary_line("Stage-I cutpoint", m.c0));
        out.push('\n');
        out.push_str(&summary_line("Final cutpoint", m.cut_hat));
        out.push('\n');
        out.push_str(&format!(
            "interaction test rejection {}, mean true negatives {:.1}, calibration fallbacks {}\n",
            pct(m.interaction_rejection),
            m.mean_true_negatives,
            m.calibration_fallbacks
        ));
        out.push_str("estimator        est     bias    S.E.    S.D.    C.P.  | true-cut S.E.  S.D.   C.P.  | power\n");
        for p in &m.power {
            let e = p.estimator;
            let est = m.estimated_row(e);
            let tru = m.true_cut_row(e);
            let cells = |r: Option<&EstimatorRow>| -> (String, String, String, String, String) {
                match r.and_then(|r| r.estimate.map(|s| (r, s))) {
                    Some((r, s)) => (
                        format!("{:.3}", s.mean),
                        format!("{:+.3}", s.bias),
                        format!("{:.3}", r.mean_se),
                        s.sd.map_or("NA".into(), |v| format!("{v:.3}")),
                        pct(r.coverage),
                    ),
                    None => (
                        "NA".into(),
                        "NA".into(),
                        "NA".into(),
                        "NA".into(),
                        "NA".into(),
                    ),
                }
            };
            let (m1, b1, se1, sd1, cp1) = cells(est);
            let (_, _, se2, sd2, cp2) = cells(tru);
            out.push_str(&format!(
                "{:<14} {m1:>7} {b1:>7} {se1:>7} {sd1:>7} {cp1:>7} | {se2:>11} {sd2:>6} {cp2:>6} | {}\n",
                format!("{} {}", e.index(), e.label()),
                pct(p.rejection_rate)
            ));
        }
        out.push('\n');
    }
    out
}

pub fn null_summary(tables: &[NullSweepTable]) -> String {
    let mut out = String::new();
    for t in tables {
        out.push_str(&format!(
            "== {} (global null) ==\nreplicates {} (failed {})\n",
            t.name, t.reps, t.failures
        ));
        for &(a, r) in &t.interaction {
            out.push_str(&format!(
                "interaction test at alpha0 = {a}: {}\n",
                fmt(Some(r))
            ));
        }
        for c in &t.fwer {
            out.push_str(&format!(
                "alpha0 = {}, alpha_tilde = {}, estimator {}: family-wise error {}\n",
                c.alpha0,
                c.alpha_tilde,
                c.estimator.index(),
                fmt(Some(c.fwer))
            ));
        }
        out.push('\n');
    }
    out
}

pub fn example_summary(r: &ExampleReport) -> String {
    let mut out = format!(
        "true cutpoint {:.3}\npositive-subgroup RMST difference {:.3}\noverall RMST difference {:.3}\ninteraction slope {:.4}\n",
        r.truth.cutpoint, r.truth.delta_positive, r.truth.delta_overall, r.truth.beta3
    );
    for d in [&r.enrichment, &r.all_comer] {
        out.push_str(&format!(
            "\n{} design, q0 = {:.4}, q = {:.4}\n",
            design_label(d),
            d.critical.q0,
            d.critical.q
        ));
        for (e, n) in &d.sample_sizes {
            let n = n
                .as_ref()
                .map_or_else(|err| err.to_string(), |n| n.to_string());
            out.push_str(&format!(
                "  {} {}: n = {n} for power {}\n",
                e.index(),
                e.label(),
                d.target_power
            ));
        }
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    File::create(path)?.write_all(text.as_bytes())?;
    Ok(())
}
