use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rmst_enrich::design::{critical_values, DesignConfig};
use rmst_enrich::estimators::Estimator;
use rmst_enrich::harness::{
    design_power, dump_datasets, example_spec, parse_config, report, run_example, run_null_sweep,
    run_scenario, PowerSettings, ScenarioSpec,
};
use rmst_enrich::Error;

/// Replicate count selected by `--full`.
const FULL_REPS: usize = 10_000;

#[derive(Parser, Debug)]
#[command(
    name = "rmst-enrich",
    version,
    about = "Two-stage adaptive enrichment designs with RMST endpoints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate trials under the configured alternative (table2/3/4, etable1).
    Simulate {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Also write the first N simulated cohorts to datasets.csv.
        #[arg(long, value_name = "N")]
        dump: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Global-null sweep over the configured significance levels (etable2/3).
    NullSweep {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Power curve over the configured sample-size grid.
    Power {
        config: PathBuf,
        /// Target power for the accompanying sample sizes.
        #[arg(long, value_name = "P", default_value_t = 0.9)]
        power: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Smallest total sample size reaching the target power.
    Samplesize {
        config: PathBuf,
        #[arg(long, value_name = "P")]
        power: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Worked example: true cutpoint, effects, power curves and sample sizes
    /// for the enrichment and all-comer designs.
    Example {
        /// Override the built-in scenario.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Target power for the sample sizes.
        #[arg(long, value_name = "P", default_value_t = 0.9)]
        power: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Largest alpha-tilde on the grid keeping the family-wise error under
    /// the global null at the configured level.
    CriticalValues {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Replicates (Monte Carlo datasets for power and sample size).
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// 1 to 5, or all.
    #[arg(long, default_value = "all", value_parser = parse_estimators)]
    estimator: EstimatorChoice,
    /// Publication-size runs (10000 replicates).
    #[arg(long)]
    full: bool,
}

#[derive(Debug, Clone)]
struct EstimatorChoice(Vec<Estimator>);

fn parse_estimators(s: &str) -> Result<EstimatorChoice, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(EstimatorChoice(Estimator::ALL.to_vec()));
    }
    s.parse::<usize>()
        .ok()
        .and_then(Estimator::from_index)
        .map(|e| EstimatorChoice(vec![e]))
        .ok_or_else(|| format!("`{s}` is not 1, 2, 3, 4, 5 or all"))
}

impl Common {
    fn apply(&self, spec: &mut ScenarioSpec) {
        if let Some(r) = self.reps {
            spec.reps = r;
        } else if self.full {
            spec.reps = FULL_REPS;
        }
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        if let Some(w) = self.workers {
            spec.workers = w;
        }
    }

    fn estimators(&self) -> &[Estimator] {
        &self.estimator.0
    }

    fn power_settings(
        &self,
        spec: &ScenarioSpec,
        target_power: f64,
    ) -> Result<PowerSettings, Error> {
        let p = spec.power.as_ref().ok_or_else(|| Error::Config {
            field: "power".into(),
            message: "this command needs a [power] table".into(),
        })?;
        let (m, b) = match (self.reps, self.full) {
            (Some(b), _) => (p.sigma_m, b),
            (None, true) => (FULL_REPS, FULL_REPS),
            (None, false) => (p.sigma_m, p.sigma_b),
        };
        Ok(PowerSettings {
            sigma_m: m,
            sigma_b: b,
            n_grid: p.n_grid.clone(),
            target_power,
            seed: self.seed.unwrap_or(spec.seed),
            workers: self.workers.unwrap_or(spec.workers),
        })
    }
}

fn load(path: &Path, common: &Common) -> Result<ScenarioSpec, Error> {
    let mut spec = parse_config(path)?;
    common.apply(&mut spec);
    if spec.reps == 0 || spec.workers == 0 {
        return Err(Error::InvalidInput(
            "--reps and --workers must be >= 1".into(),
        ));
    }
    Ok(spec)
}

fn write_summary(dir: &Path, text: &str) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    report::write_text(&dir.join(report::SUMMARY), text)?;
    print!("{text}");
    Ok(())
}

fn simulate(configs: &[PathBuf], dump: Option<usize>, common: &Common) -> Result<(), Error> {
    let specs = configs
        .iter()
        .map(|p| load(p, common))
        .collect::<Result<Vec<_>, _>>()?;
    std::fs::create_dir_all(&common.out)?;
    let mut tables = Vec::new();
    for spec in &specs {
        let run = run_scenario(spec, common.estimators())?;
        let log = if specs.len() == 1 {
            report::REPLICATES.to_string()
        } else {
            format!("replicates_{}.csv", spec.name)
        };
        report::write_replicate_log(
            &common.out.join(log),
            spec.seed,
            common.estimators(),
            &run.metrics.critical,
            &run.outcomes,
        )?;
        if let Some(n) = dump {
            let name = if specs.len() == 1 {
                "datasets.csv".to_string()
            } else {
                format!("datasets_{}.csv", spec.name)
            };
            dump_datasets(spec, n.min(spec.reps), &common.out.join(name))?;
        }
        tables.push(run.metrics);
    }
    report::write_scenario_tables(&common.out, &tables)?;
    write_summary(&common.out, &report::scenario_summary(&tables))
}

fn null_sweep(configs: &[PathBuf], common: &Common) -> Result<(), Error> {
    let specs = configs
        .iter()
        .map(|p| load(p, common))
        .collect::<Result<Vec<_>, _>>()?;
    let mut tables = Vec::new();
    for spec in &specs {
        let sweep = spec.null_sweep.as_ref().ok_or_else(|| Error::Config {
            field: "null_sweep".into(),
            message: "null-sweep needs a [null_sweep] table".into(),
        })?;
        tables.push(run_null_sweep(
            spec,
            &sweep.alpha0,
            &sweep.alpha_tilde,
            common.estimators(),
        )?);
    }
    report::write_null_tables(&common.out, &tables)?;
    write_summary(&common.out, &report::null_summary(&tables))
}

fn power(config: &Path, target: f64, common: &Common) -> Result<(), Error> {
    let spec = load(config, common)?;
    let settings = common.power_settings(&spec, target)?;
    let design = design_power(&spec.design, &settings, common.estimators())?;
    report::write_power_tables(&common.out, &[&design])?;
    let mut text = String::new();
    for (e, n) in &design.sample_sizes {
        let n = n
            .as_ref()
            .map_or_else(|err| err.to_string(), |n| n.to_string());
        text.push_str(&format!(
            "{} {}: n = {n} for power {target}\n",
            e.index(),
            e.label()
        ));
    }
    write_summary(&common.out, &text)
}

fn example(config: Option<&Path>, target: f64, common: &Common) -> Result<(), Error> {
    let mut spec = match config {
        Some(p) => parse_config(p)?,
        None => example_spec(),
    };
    common.apply(&mut spec);
    let settings = common.power_settings(&spec, target)?;
    let r = run_example(&spec, &settings, common.estimators())?;
    report::write_power_tables(&common.out, &[&r.enrichment, &r.all_comer])?;
    write_summary(&common.out, &report::example_summary(&r))
}

fn critical(config: &Path, common: &Common) -> Result<(), Error> {
    let spec = load(config, common)?;
    let p = spec.power.as_ref().ok_or_else(|| Error::Config {
        field: "power".into(),
        message: "critical-values needs a [power] table".into(),
    })?;
    let design: &DesignConfig = &spec.design;
    let cal = critical_values(
        design,
        p.family_alpha,
        design.alpha0,
        &p.alpha_tilde_grid,
        spec.reps,
        spec.seed,
        spec.workers,
    )?;
    report::write_critical_values(&common.out, &cal)?;
    let mut text = format!(
        "alpha0 = {}, selected alpha_tilde = {} (q0 = {:.4}, q = {:.4}) from {} global-null replicates ({} failed)\n",
        cal.critical.alpha0, cal.critical.alpha_tilde, cal.critical.q0, cal.critical.q, cal.critical.reps, cal.failures
    );
    for (a, f) in &cal.grid {
        text.push_str(&format!(
            "alpha_tilde = {a}: family-wise error {}\n",
            report::fmt(Some(*f))
        ));
    }
    write_summary(&common.out, &text)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate {
            configs,
            dump,
            common,
        } => simulate(&configs, dump, &common),
        Command::NullSweep { configs, common } => null_sweep(&configs, &common),
        Command::Power {
            config,
            power: p,
            common,
        }
        | Command::Samplesize {
            config,
            power: p,
            common,
        } => {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "--power {p} must lie in (0, 1)"
                )));
            }
            power(&config, p, &common)
        }
        Command::Example {
            config,
            power: p,
            common,
        } => example(config.as_deref(), p, &common),
        Command::CriticalValues { config, common } => critical(&config, &common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
