//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmst_enrich::calibration::{calibrate_weights, target_moments};
use rmst_enrich::cutpoint::{expand_pseudo, fit_rmst_regression};
use rmst_enrich::design::{run_replicates, simulate_dataset};
use rmst_enrich::estimators::{
    delta4_cw_hajek, delta5_with_outcome, estimate, AnalysisSet, Estimator,
};
use rmst_enrich::harness::{
    design_power, example_spec, parse_config, run_example, run_null_sweep, run_scenario,
    MetricsTable, NullSweepTable, PowerSettings, ScenarioSpec,
};
use rmst_enrich::hazard::{
    conditional_survival, example_arms, simulation_arms, BiomarkerSupport, DesignTruth,
};
use rmst_enrich::sim::{
    observe, replicate_rng, sample_event_time, simulate_stage1, ObservedRecord,
};
use rmst_enrich::survival::{km_curve, rmst_area, SurvivalSample};

struct Check {
    ok: bool,
    detail: String,
}

impl Check {
    fn new() -> Self {
        Self {
            ok: true,
            detail: String::new(),
        }
    }

    fn expect(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if !ok {
            self.ok = false;
            self.detail.push_str("!! ");
        }
        self.detail.push_str(&what);
        self.detail.push_str("; ");
    }

    fn within(&mut self, label: &str, value: f64, target: f64, tol: f64) {
        self.expect(
            (value - target).abs() <= tol,
            format!("{label} {value:.4} vs {target} ± {tol:.4}"),
        );
    }

    fn rel(&mut self, label: &str, value: f64, target: f64, rel: f64) {
        self.expect(
            ((value - target) / target).abs() <= rel,
            format!("{label} {value:.4} vs {target} ± {:.0}%", rel * 100.0),
        );
    }
}

fn config(name: &str) -> ScenarioSpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn report(results: &mut Vec<(usize, bool)>, n: usize, title: &str, check: Check, started: Instant) {
    let status = if check.ok { "PASS" } else { "FAIL" };
    println!(
        "criterion {n} [{status}] {title} ({:.1}s): {}",
        started.elapsed().as_secs_f64(),
        check.detail
    );
    results.push((n, check.ok));
}

fn criterion1() -> Check {
    let mut c = Check::new();
    let example = DesignTruth::compute(
        &example_arms(),
        1.5,
        BiomarkerSupport::new(0.01, 1.0).unwrap(),
    )
    .unwrap();
    c.within("example cutpoint", example.cutpoint, 0.296, 0.001);
    c.within(
        "example positive RMSTD",
        example.delta_positive,
        0.137,
        0.001,
    );
    c.within("example overall RMSTD", example.delta_overall, 0.082, 0.001);
    let sim = DesignTruth::compute(&simulation_arms(), 2.0, BiomarkerSupport::unit()).unwrap();
    c.within("simulation cutpoint", sim.cutpoint, 0.519, 0.001);
    c.within(
        "simulation positive RMSTD",
        sim.delta_positive,
        0.134,
        0.001,
    );
    c.within("simulation overall RMSTD", sim.delta_overall, -0.012, 0.001);
    c
}

fn criterion2(tables: &[MetricsTable]) -> Check {
    let mut c = Check::new();
    let cut_sd = [0.062, 0.067, 0.066, 0.067];
    let c0 = [
        None,
        Some((0.520, 0.130)),
        Some((0.506, 0.132)),
        Some((0.509, 0.163)),
    ];
    for (i, m) in tables.iter().enumerate() {
        let s = i + 1;
        let cut = m.cut_hat.expect("final cutpoint summary");
        c.expect(
            cut.mean >= 0.519 - 0.01 && cut.mean <= 0.522 + 0.01,
            format!("S{s} final cutpoint mean {:.4} in [0.509, 0.532]", cut.mean),
        );
        c.rel(
            &format!("S{s} final cutpoint S.D."),
            cut.sd.unwrap(),
            cut_sd[i],
            0.2,
        );
        if let Some((mean, sd)) = c0[i] {
            let s0 = m.c0.expect("stage-one cutpoint summary");
            c.within(
                &format!("S{s} stage-one cutpoint mean"),
                s0.mean,
                mean,
                0.02,
            );
            c.rel(
                &format!("S{s} stage-one cutpoint S.D."),
                s0.sd.unwrap(),
                sd,
                0.2,
            );
        }
    }
    c
}

fn criterion3(tables: &[MetricsTable]) -> Check {
    let mut c = Check::new();
    for (i, m) in tables.iter().enumerate() {
        let s = i + 1;
        for e in &Estimator::ALL[1..] {
            let row = m.estimated_row(*e).unwrap();
            let bias = row.estimate.unwrap().bias;
            c.expect(
                bias.abs() < 0.005,
                format!("S{s} est{} bias {bias:+.4}", e.index()),
            );
            c.expect(
                row.coverage >= 0.96,
                format!("S{s} est{} coverage {:.3}", e.index(), row.coverage),
            );
        }
        if i > 0 {
            let bias = m
                .estimated_row(Estimator::Naive)
                .unwrap()
                .estimate
                .unwrap()
                .bias;
            c.within(&format!("S{s} naive bias"), bias, 0.010, 0.005);
        }
    }
    c
}

fn criterion4(tables: &[MetricsTable]) -> Check {
    let mut c = Check::new();
    for (i, m) in tables.iter().enumerate() {
        let s = i + 1;
        for e in Estimator::ALL {
            let row = m.true_cut_row(e).unwrap();
            let sd = row.estimate.unwrap().sd.unwrap();
            c.rel(
                &format!("S{s} est{} S.E./S.D.", e.index()),
                row.mean_se / sd,
                1.0,
                0.15,
            );
            c.expect(
                (0.93..=0.97).contains(&row.coverage),
                format!("S{s} est{} coverage {:.3}", e.index(), row.coverage),
            );
        }
        let se = |e: Estimator| m.true_cut_row(e).unwrap().mean_se;
        let g = se(Estimator::CwGFormula);
        c.expect(
            [
                Estimator::CwKaplanMeier,
                Estimator::CwHajek,
                Estimator::CwAugmented,
            ]
            .iter()
            .all(|&e| g < se(e)),
            format!("S{s} G-formula S.E. {g:.4} smallest"),
        );
    }
    c
}

fn criterion5(tables: &[MetricsTable]) -> Check {
    let mut c = Check::new();
    let power = |m: &MetricsTable, e: Estimator| m.power_row(e).unwrap().rejection_rate;
    for e in Estimator::ALL {
        let all_comer = power(&tables[0], e);
        for (i, m) in tables.iter().enumerate().skip(1) {
            c.expect(
                power(m, e) > all_comer,
                format!(
                    "S{} est{} power {:.3} > all-comer {all_comer:.3}",
                    i + 1,
                    e.index(),
                    power(m, e)
                ),
            );
        }
    }
    c.within(
        "S2 G-formula power",
        power(&tables[1], Estimator::CwGFormula),
        0.967,
        0.02,
    );
    c.within(
        "S1 true negatives",
        tables[0].mean_true_negatives,
        1048.0,
        30.0,
    );
    c.within(
        "S2 true negatives",
        tables[1].mean_true_negatives,
        628.0,
        30.0,
    );
    c
}

fn criterion6(sweeps: &[NullSweepTable], reps: usize) -> Check {
    let mut c = Check::new();
    let se = |p: f64| (p * (1.0 - p) / reps as f64).sqrt();
    for t in sweeps {
        for &(a, rate) in &t.interaction {
            c.expect(
                (rate - a).abs() <= 3.0 * se(a),
                format!("{} interaction {rate:.4} at {a}", t.name),
            );
        }
        let alphas0: Vec<f64> = t.interaction.iter().map(|x| x.0).collect();
        let mut tildes: Vec<f64> = t.fwer.iter().map(|x| x.alpha_tilde).collect();
        tildes.sort_by(f64::total_cmp);
        tildes.dedup();
        let mut monotone = true;
        let mut strict = 0;
        let mut cells = 0;
        let mut within_band = true;
        for &a0 in &alphas0 {
            for e in Estimator::ALL {
                let f: Vec<f64> = tildes
                    .iter()
                    .map(|&at| t.fwer(a0, at, e).unwrap())
                    .collect();
                monotone &= f.windows(2).all(|w| w[0] <= w[1]);
            }
            for &at in &tildes {
                let f = |e: Estimator| t.fwer(a0, at, e).unwrap();
                let low = f(Estimator::CwHajek).max(f(Estimator::CwAugmented));
                let high = f(Estimator::Naive)
                    .min(f(Estimator::CwKaplanMeier))
                    .min(f(Estimator::CwGFormula));
                cells += 1;
                strict += usize::from(low <= high);
                within_band &= low <= high + 3.0 * (2.0f64).sqrt() * se(high.max(0.01));
            }
        }
        c.expect(
            monotone,
            format!("{} family-wise error non-decreasing in alpha-tilde", t.name),
        );
        c.expect(
            within_band,
            format!("{} Hajek/augmented <= naive/KM/G-formula within MC band (strict in {strict}/{cells} cells)", t.name),
        );
    }
    c
}

fn criterion7(workers: usize, sigma_b: usize) -> Check {
    let mut c = Check::new();
    let spec = example_spec();
    let settings = PowerSettings {
        sigma_m: 10_000,
        sigma_b,
        n_grid: vec![845, 940],
        target_power: 0.9,
        seed: 7,
        workers,
    };
    let r = run_example(
        &spec,
        &settings,
        &[Estimator::Naive, Estimator::CwAugmented],
    )
    .unwrap();
    let n = |d: &rmst_enrich::harness::DesignPower, e: Estimator| {
        *d.sample_sizes
            .iter()
            .find(|(x, _)| *x == e)
            .unwrap()
            .1
            .as_ref()
            .unwrap() as f64
    };
    c.rel(
        "example enrichment augmented n",
        n(&r.enrichment, Estimator::CwAugmented),
        845.0,
        0.02,
    );
    c.rel(
        "example all-comer naive n",
        n(&r.all_comer, Estimator::Naive),
        940.0,
        0.02,
    );

    let sim = config("scenario1.toml");
    let settings = PowerSettings {
        n_grid: vec![2020],
        target_power: 0.8,
        seed: 8,
        ..settings
    };
    let d = design_power(&sim.design, &settings, &[Estimator::Naive]).unwrap();
    c.rel(
        "simulation all-comer naive n",
        n(&d, Estimator::Naive),
        2020.0,
        0.02,
    );
    c
}

fn records_from(samples: &[(f64, bool)], arm: u8) -> Vec<ObservedRecord> {
    samples
        .iter()
        .enumerate()
        .map(|(i, &(time, event))| ObservedRecord {
            x: (i as f64 + 0.5) / samples.len() as f64,
            arm,
            stage: rmst_enrich::sim::Stage::I,
            time,
            event,
        })
        .collect()
}

fn criterion8() -> Check {
    let mut c = Check::new();
    let mut rng = ChaCha8Rng::seed_from_u64(88);

    // Weighted KM: a common weight cancels.
    let data: Vec<(f64, bool)> = (0..300)
        .map(|_| (rng.random::<f64>() * 3.0, rng.random_bool(0.7)))
        .collect();
    let unit: Vec<_> = data
        .iter()
        .map(|&(t, e)| SurvivalSample::new(t, e))
        .collect();
    let scaled: Vec<_> = data
        .iter()
        .map(|&(t, e)| SurvivalSample::weighted(t, e, 4.2))
        .collect();
    let a = rmst_area(&km_curve(&unit).unwrap(), 2.0).unwrap();
    let b = rmst_area(&km_curve(&scaled).unwrap(), 2.0).unwrap();
    c.expect(
        (a - b).abs() < 1e-12,
        format!("KM weight cancellation |diff| {:.1e}", (a - b).abs()),
    );

    // Pseudo-observations conserve exposure.
    let recs = records_from(&data, 0);
    let exp = expand_pseudo(&recs, [&[0.5, 1.25], &[]]);
    let exposure: f64 = exp.rows.iter().map(|r| r.exposure).sum();
    let total: f64 = data.iter().map(|d| d.0).sum();
    c.expect(
        (exposure - total).abs() < 1e-9 * total,
        format!("pseudo exposure {exposure:.6} vs {total:.6}"),
    );

    // Entropy balancing matches moments.
    let xs: Vec<f64> = (0..500)
        .map(|_| 0.4 + 0.6 * rng.random::<f64>().powf(0.7))
        .collect();
    let stage1: Vec<f64> = (0..200).map(|_| 0.4 + 0.6 * rng.random::<f64>()).collect();
    let target = target_moments(&stage1).unwrap();
    let cal = calibrate_weights(&xs, target).unwrap();
    let total_w: f64 = cal.weights.iter().sum();
    let m1 = xs.iter().zip(&cal.weights).map(|(x, w)| x * w).sum::<f64>() / total_w;
    let m2 = xs
        .iter()
        .zip(&cal.weights)
        .map(|(x, w)| x * x * w)
        .sum::<f64>()
        / total_w;
    let worst = (m1 - target[0]).abs().max((m2 - target[1]).abs());
    c.expect(
        worst < 1e-8,
        format!("calibration moment error {worst:.1e}"),
    );

    // Augmented estimator with a zero outcome model is the Hajek estimator.
    let config = config("scenario2.toml").design;
    let ds = simulate_dataset(&config, &mut replicate_rng(5, 0)).unwrap();
    let set = AnalysisSet::unweighted(ds.records.clone(), None).unwrap();
    let h = delta4_cw_hajek(&set, config.t_star).unwrap();
    let z = delta5_with_outcome(&set, config.t_star, &|_, _| 0.0).unwrap();
    c.expect(
        (h.estimate - z.estimate).abs() < 1e-12,
        format!(
            "augmented(0) - Hajek {:.1e}",
            (h.estimate - z.estimate).abs()
        ),
    );

    // Sandwich versus nonparametric bootstrap.
    let fit = fit_rmst_regression(&ds.records, config.t_star).unwrap();
    let full = AnalysisSet::unweighted(ds.records.clone(), Some(&fit)).unwrap();
    for e in [Estimator::CwHajek, Estimator::CwGFormula] {
        let sandwich = estimate(&full, config.t_star, e).unwrap().se();
        let mut boot = Vec::new();
        let mut brng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..300 {
            let sample: Vec<ObservedRecord> = (0..ds.records.len())
                .map(|_| ds.records[brng.random_range(0..ds.records.len())])
                .collect();
            let Ok(bfit) = fit_rmst_regression(&sample, config.t_star) else {
                continue;
            };
            let bset = AnalysisSet::unweighted(sample, Some(&bfit)).unwrap();
            if let Ok(v) = estimate(&bset, config.t_star, e) {
                boot.push(v.estimate);
            }
        }
        let mean = boot.iter().sum::<f64>() / boot.len() as f64;
        let sd =
            (boot.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (boot.len() - 1) as f64).sqrt();
        c.rel(
            &format!("est{} sandwich/bootstrap S.E.", e.index()),
            sandwich / sd,
            1.0,
            0.15,
        );
    }

    // Inverse transform: S(T | x) = u.
    let arms = simulation_arms();
    let mut worst = 0.0f64;
    for _ in 0..2000 {
        let (x, u) = (
            rng.random::<f64>(),
            rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12),
        );
        for model in [&arms.control, &arms.experimental] {
            let t = sample_event_time(model, x, u).unwrap();
            worst = worst.max((conditional_survival(model, x, t).unwrap() - u).abs());
        }
    }
    c.expect(
        worst < 1e-10,
        format!("inverse transform error {worst:.1e}"),
    );

    // Bitwise determinism across worker counts.
    let mut small = config.clone();
    small.plan.n1 = 80;
    small.plan.n2 = 80;
    let one = run_replicates(&small, 12, 3, 1).unwrap();
    let four = run_replicates(&small, 12, 3, 4).unwrap();
    c.expect(one == four, "replicates identical with 1 and 4 workers");
    let stage1 = simulate_stage1(
        &small.plan,
        &small.arms,
        small.support,
        &mut replicate_rng(3, 0),
    );
    c.expect(
        observe(&stage1, small.plan.t1).is_ok(),
        "stage-one observation",
    );
    c
}

fn env_usize(name: &str, default: usize) -> usize {
    std::env::var(name)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn main() {
    let workers = env_usize("ACCEPTANCE_WORKERS", 1);
    let sigma_b = env_usize("ACCEPTANCE_SIGMA_B", 10_000);
    // Comma-separated criterion numbers; all when unset.
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut results = Vec::new();

    if wanted(1) {
        let t = Instant::now();
        report(&mut results, 1, "closed-form truths", criterion1(), t);
    }

    if (2..=5).any(wanted) {
        let t = Instant::now();
        let tables: Vec<MetricsTable> = (1..=4)
            .map(|i| {
                let mut spec = config(&format!("scenario{i}.toml"));
                spec.reps = 1000;
                spec.workers = workers;
                run_scenario(&spec, &Estimator::ALL).unwrap().metrics
            })
            .collect();
        report(
            &mut results,
            2,
            "cutpoint estimation, R = 1000",
            criterion2(&tables),
            t,
        );
        let t = Instant::now();
        report(
            &mut results,
            3,
            "estimated-subgroup effects, R = 1000",
            criterion3(&tables),
            t,
        );
        let t = Instant::now();
        report(
            &mut results,
            4,
            "true-subgroup effects and variances, R = 1000",
            criterion4(&tables),
            t,
        );
        let t = Instant::now();
        report(
            &mut results,
            5,
            "power and true negatives, R = 1000",
            criterion5(&tables),
            t,
        );
    }

    if wanted(6) {
        let t = Instant::now();
        let null_reps = 2000;
        let sweeps: Vec<NullSweepTable> = [1, 2, 4]
            .iter()
            .map(|i| {
                let mut spec = config(&format!("scenario{i}.toml"));
                spec.reps = null_reps;
                spec.workers = workers;
                let sweep = spec.null_sweep.clone().unwrap();
                run_null_sweep(&spec, &sweep.alpha0, &sweep.alpha_tilde, &Estimator::ALL).unwrap()
            })
            .collect();
        report(
            &mut results,
            6,
            "global-null error rates, R = 2000",
            criterion6(&sweeps, null_reps),
            t,
        );
    }

    if wanted(7) {
        let t = Instant::now();
        let title = format!("sample sizes, M = 10000, B = {sigma_b}");
        report(&mut results, 7, &title, criterion7(workers, sigma_b), t);
    }
    if wanted(8) {
        let t = Instant::now();
        report(&mut results, 8, "property suites", criterion8(), t);
    }

    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
