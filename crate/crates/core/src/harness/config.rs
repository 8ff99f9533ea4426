//! Strict TOML scenario files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cutpoint::LrtReference;
use crate::design::{CalibrationTarget, DesignConfig, PredictionMode};
use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::hazard::{ArmPair, BiomarkerSupport, CovariateForm, PiecewiseExpModel};
use crate::sim::AccrualPlan;

/// On-disk layout of a scenario file. Every key is required except the
/// optional `[null_sweep]` and `[power]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scenario: ScenarioSection,
    pub design: DesignSection,
    pub support: SupportSection,
    pub accrual: AccrualSection,
    pub arms: ArmsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_sweep: Option<NullSweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<PowerSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    /// 1 all-comer; 2, 3, 4 enrichment with known locations, known count,
    /// detected change points. Omit for custom scenarios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u8>,
    pub reps: usize,
    pub seed: u64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub t_star: f64,
    pub alpha0: f64,
    pub alpha_tilde: f64,
    /// 1 to 5.
    pub estimator: usize,
    pub fit_form: CovariateForm,
    pub calibration_target: CalibrationTarget,
    pub prediction: PredictionSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum PredictionSection {
    AllComer,
    KnownLocations,
    KnownCount,
    Detected {
        alpha_star: f64,
        j_max: usize,
        reference: LrtReference,
    },
}

impl PredictionSection {
    pub fn mode(self) -> Option<PredictionMode> {
        match self {
            Self::AllComer => None,
            Self::KnownLocations => Some(PredictionMode::KnownLocations),
            Self::KnownCount => Some(PredictionMode::KnownCount),
            Self::Detected {
                alpha_star,
                j_max,
                reference,
            } => Some(PredictionMode::Detected {
                alpha_star,
                j_max,
                reference,
            }),
        }
    }

    pub fn from_mode(mode: Option<PredictionMode>) -> Self {
        match mode {
            None => Self::AllComer,
            Some(PredictionMode::KnownLocations) => Self::KnownLocations,
            Some(PredictionMode::KnownCount) => Self::KnownCount,
            Some(PredictionMode::Detected {
                alpha_star,
                j_max,
                reference,
            }) => Self::Detected {
                alpha_star,
                j_max,
                reference,
            },
        }
    }

    fn scenario_id(self) -> u8 {
        match self {
            Self::AllComer => 1,
            Self::KnownLocations => 2,
            Self::KnownCount => 3,
            Self::Detected { .. } => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportSection {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccrualSection {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    /// Patients per arm in Stage I.
    pub n1: usize,
    /// Patients per arm in Stage II.
    pub n2: usize,
    pub ltfu_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmsSection {
    pub control: HazardSection,
    pub experimental: HazardSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardSection {
    pub change_points: Vec<f64>,
    pub rates: Vec<f64>,
    pub gamma: f64,
    pub form: CovariateForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NullSweepSection {
    pub alpha0: Vec<f64>,
    pub alpha_tilde: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    /// Family-wise level targeted by `critical-values`.
    pub family_alpha: f64,
    pub alpha_tilde_grid: Vec<f64>,
    /// Patients per Monte Carlo dataset.
    pub sigma_m: usize,
    /// Monte Carlo datasets.
    pub sigma_b: usize,
    /// Total sample sizes of the power curve.
    pub n_grid: Vec<usize>,
}

/// Validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub id: Option<u8>,
    pub design: DesignConfig,
    pub reps: usize,
    pub seed: u64,
    pub workers: usize,
    pub null_sweep: Option<NullSweepSection>,
    pub power: Option<PowerSection>,
}

fn hazard(field: &str, h: &HazardSection) -> Result<PiecewiseExpModel> {
    let mut prev = 0.0;
    for &c in &h.change_points {
        if !(c > prev) || !c.is_finite() {
            return Err(Error::config(
                format!("{field}.change_points"),
                format!(
                    "{:?} must be positive and strictly increasing",
                    h.change_points
                ),
            ));
        }
        prev = c;
    }
    PiecewiseExpModel::new(h.change_points.clone(), h.rates.clone(), h.gamma, h.form)
        .map_err(|e| Error::config(field, e.to_string()))
}

fn check_levels(field: &str, levels: &[f64], allow_zero: bool) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::config(field, "must not be empty"));
    }
    for &a in levels {
        let ok = if allow_zero {
            (0.0..0.5).contains(&a)
        } else {
            a > 0.0 && a < 0.5
        };
        if !ok {
            return Err(Error::config(field, format!("level {a} out of range")));
        }
    }
    Ok(())
}

impl ConfigFile {
    pub fn into_spec(self) -> Result<ScenarioSpec> {
        let s = &self.scenario;
        if s.reps == 0 {
            return Err(Error::config("scenario.reps", "must be >= 1"));
        }
        if s.workers == 0 {
            return Err(Error::config("scenario.workers", "must be >= 1"));
        }
        let prediction = self.design.prediction;
        if let Some(id) = s.id {
            if !(1..=4).contains(&id) {
                return Err(Error::config(
                    "scenario.id",
                    format!("{id} is not one of 1, 2, 3, 4"),
                ));
            }
            if id != prediction.scenario_id() {
                return Err(Error::config(
                    "design.prediction.kind",
                    format!("scenario {id} requires the matching prediction kind"),
                ));
            }
        }
        let estimator = Estimator::from_index(self.design.estimator).ok_or_else(|| {
            Error::config(
                "design.estimator",
                format!("{} is not in 1..=5", self.design.estimator),
            )
        })?;
        let support = BiomarkerSupport::new(self.support.lower, self.support.upper)
            .map_err(|e| Error::config("support", e.to_string()))?;
        let arms = ArmPair::new(
            hazard("arms.control", &self.arms.control)?,
            hazard("arms.experimental", &self.arms.experimental)?,
        );
        let a = self.accrual;
        let design = DesignConfig {
            arms,
            support,
            plan: AccrualPlan {
                t1: a.t1,
                t2: a.t2,
                t3: a.t3,
                n1: a.n1,
                n2: a.n2,
                ltfu_rate: a.ltfu_rate,
            },
            t_star: self.design.t_star,
            alpha0: self.design.alpha0,
            alpha_tilde: self.design.alpha_tilde,
            estimator,
            prediction: prediction.mode(),
            fit_form: self.design.fit_form,
            calibration_target: self.design.calibration_target,
        };
        design.validate()?;
        if let Some(sweep) = &self.null_sweep {
            check_levels("null_sweep.alpha0", &sweep.alpha0, false)?;
            check_levels("null_sweep.alpha_tilde", &sweep.alpha_tilde, true)?;
        }
        if let Some(p) = &self.power {
            check_levels("power.family_alpha", &[p.family_alpha], false)?;
            check_levels("power.alpha_tilde_grid", &p.alpha_tilde_grid, false)?;
            if p.sigma_m < 1000 || p.sigma_b < 100 {
                return Err(Error::config(
                    "power",
                    "need sigma_m >= 1000 and sigma_b >= 100",
                ));
            }
            if p.n_grid.is_empty() || p.n_grid.iter().any(|&n| n < 2) {
                return Err(Error::config(
                    "power.n_grid",
                    "needs at least one size >= 2",
                ));
            }
        }
        Ok(ScenarioSpec {
            name: s.name.clone(),
            id: s.id,
            design,
            reps: s.reps,
            seed: s.seed,
            workers: s.workers,
            null_sweep: self.null_sweep,
            power: self.power,
        })
    }
}

fn hazard_section(m: &PiecewiseExpModel) -> HazardSection {
    HazardSection {
        change_points: m.change_points().to_vec(),
        rates: m.rates().to_vec(),
        gamma: m.gamma(),
        form: m.form(),
    }
}

impl ScenarioSpec {
    /// Inverse of [`ConfigFile::into_spec`].
    pub fn to_file(&self) -> ConfigFile {
        let d = &self.design;
        let p = d.plan;
        ConfigFile {
            scenario: ScenarioSection {
                name: self.name.clone(),
                id: self.id,
                reps: self.reps,
                seed: self.seed,
                workers: self.workers,
            },
            design: DesignSection {
                t_star: d.t_star,
                alpha0: d.alpha0,
                alpha_tilde: d.alpha_tilde,
                estimator: d.estimator.index(),
                fit_form: d.fit_form,
                calibration_target: d.calibration_target,
                prediction: PredictionSection::from_mode(d.prediction),
            },
            support: SupportSection {
                lower: d.support.lower(),
                upper: d.support.upper(),
            },
            accrual: AccrualSection {
                t1: p.t1,
                t2: p.t2,
                t3: p.t3,
                n1: p.n1,
                n2: p.n2,
                ltfu_rate: p.ltfu_rate,
            },
            arms: ArmsSection {
                control: hazard_section(&d.arms.control),
                experimental: hazard_section(&d.arms.experimental),
            },
            null_sweep: self.null_sweep.clone(),
            power: self.power.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.to_file()).map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

/// Field named in a serde message such as ``missing field `rates` ``.
fn field_in(message: &str) -> Option<&str> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(&message[start..start + len])
}

/// Strict parse of a TOML document.
pub fn parse_config_str(text: &str) -> Result<ScenarioSpec> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| {
        let message = e.to_string();
        let field = field_in(e.message()).unwrap_or("<document>").to_string();
        Error::Config {
            field,
            message: message.trim_end().to_string(),
        }
    })?;
    file.into_spec()
}

pub fn parse_config(path: &Path) -> Result<ScenarioSpec> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}
