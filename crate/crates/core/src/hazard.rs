//! Closed-form piecewise-exponential hazards with a log-linear biomarker
//! term, conditional RMSTs, the true biomarker cutpoint and the true marginal
//! RMST differences used as estimands.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the biomarker enters the log hazard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateForm {
    /// `exp(γ·x)`
    Linear,
    /// `exp(γ·(1 − x))`
    Complement,
}

impl CovariateForm {
    #[inline]
    pub fn covariate(self, x: f64) -> f64 {
        match self {
            CovariateForm::Linear => x,
            CovariateForm::Complement => 1.0 - x,
        }
    }
}

/// Piecewise-constant baseline hazard times `exp(γ·w(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseExpModel {
    change_points: Vec<f64>,
    rates: Vec<f64>,
    gamma: f64,
    form: CovariateForm,
}

impl PiecewiseExpModel {
    pub fn new(
        change_points: Vec<f64>,
        rates: Vec<f64>,
        gamma: f64,
        form: CovariateForm,
    ) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::InvalidInput(
                "at least one hazard rate is required".into(),
            ));
        }
        if rates.len() != change_points.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "{} rates need {} change points, got {}",
                rates.len(),
                rates.len() - 1,
                change_points.len()
            )));
        }
        if rates.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidInput(
                "hazard rates must be positive and finite".into(),
            ));
        }
        let mut prev = 0.0;
        for &c in &change_points {
            if !(c > prev) || !c.is_finite() {
                return Err(Error::InvalidInput(
                    "change points must be positive and strictly increasing".into(),
                ));
            }
            prev = c;
        }
        if !gamma.is_finite() {
            return Err(Error::InvalidInput("gamma must be finite".into()));
        }
        Ok(Self {
            change_points,
            rates,
            gamma,
            form,
        })
    }

    /// Constant hazard `rate`, no biomarker effect.
    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![rate], 0.0, CovariateForm::Linear)
    }

    pub fn change_points(&self) -> &[f64] {
        &self.change_points
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn form(&self) -> CovariateForm {
        self.form
    }

    #[inline]
    pub fn multiplier(&self, x: f64) -> f64 {
        (self.gamma * self.form.covariate(x)).exp()
    }

    /// Segments `(start, end, baseline rate)`; the last one ends at infinity.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.rates.iter().enumerate().map(move |(j, &r)| {
            let start = if j == 0 {
                0.0
            } else {
                self.change_points[j - 1]
            };
            let end = self.change_points.get(j).copied().unwrap_or(f64::INFINITY);
            (start, end, r)
        })
    }

    /// Hazard at time `t` for biomarker `x`.
    pub fn hazard(&self, x: f64, t: f64) -> f64 {
        let j = self.change_points.partition_point(|&c| c <= t);
        self.rates[j] * self.multiplier(x)
    }

    /// Baseline cumulative hazard `∫_0^t λ(u) du`.
    pub fn baseline_cumulative(&self, t: f64) -> f64 {
        let mut h = 0.0;
        for (a, b, r) in self.segments() {
            if t <= a {
                break;
            }
            h += r * (t.min(b) - a);
        }
        h
    }

    pub(crate) fn survival_unchecked(&self, x: f64, t: f64) -> f64 {
        (-self.multiplier(x) * self.baseline_cumulative(t)).exp()
    }

    pub(crate) fn rmst_unchecked(&self, x: f64, t_star: f64) -> f64 {
        let m = self.multiplier(x);
        let mut area = 0.0;
        let mut surv = 1.0;
        for (a, b, r) in self.segments() {
            if t_star <= a {
                break;
            }
            let len = t_star.min(b) - a;
            let h = r * m;
            let decay = (-h * len).exp();
            area += surv * (1.0 - decay) / h;
            surv *= decay;
        }
        area
    }
}

fn check_biomarker(x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidInput(format!("biomarker {x} outside [0, 1]")));
    }
    Ok(())
}

/// `S(t | x) = exp{−e^{γ w(x)} Λ₀(t)}`.
pub fn conditional_survival(model: &PiecewiseExpModel, x: f64, t: f64) -> Result<f64> {
    check_biomarker(x)?;
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("time {t} must be >= 0")));
    }
    Ok(model.survival_unchecked(x, t))
}

/// `μ(t* | x) = ∫_0^{t*} S(t | x) dt`, integrated exactly segment by segment.
pub fn conditional_rmst(model: &PiecewiseExpModel, x: f64, t_star: f64) -> Result<f64> {
    check_biomarker(x)?;
    if !(t_star >= 0.0) {
        return Err(Error::InvalidInput(format!("t* = {t_star} must be >= 0")));
    }
    Ok(model.rmst_unchecked(x, t_star))
}

/// Uniform biomarker distribution on `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerSupport {
    lower: f64,
    upper: f64,
}

impl BiomarkerSupport {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lower) || !(0.0..=1.0).contains(&upper) || !(upper > lower) {
            return Err(Error::InvalidInput(format!(
                "biomarker support [{lower}, {upper}] must satisfy 0 <= lower < upper <= 1"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn unit() -> Self {
        Self {
            lower: 0.0,
            upper: 1.0,
        }
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lower, self.upper)
    }
}

/// Control (`z = 0`) and experimental (`z = 1`) hazard models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmPair {
    pub control: PiecewiseExpModel,
    pub experimental: PiecewiseExpModel,
}

impl ArmPair {
    pub fn new(control: PiecewiseExpModel, experimental: PiecewiseExpModel) -> Self {
        Self {
            control,
            experimental,
        }
    }

    pub fn arm(&self, z: u8) -> &PiecewiseExpModel {
        if z == 0 {
            &self.control
        } else {
            &self.experimental
        }
    }

    /// Both arms follow the control hazard (global null).
    pub fn global_null(&self) -> Self {
        Self {
            control: self.control.clone(),
            experimental: self.control.clone(),
        }
    }

    /// `μ₁(t*|x) − μ₀(t*|x)`.
    pub fn rmst_difference(&self, x: f64, t_star: f64) -> f64 {
        self.experimental.rmst_unchecked(x, t_star) - self.control.rmst_unchecked(x, t_star)
    }
}

/// Sign of an RMST difference that never changes sign on the support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sign {
    Positive,
    Negative,
    Zero,
}

/// Outcome of the search for the biomarker cutpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Threshold {
    /// Single crossing from negative to positive; positives are `(c, upper]`.
    Cut(f64),
    /// No crossing; carries the sign of the constant difference.
    NoCrossing(Sign),
    /// Single crossing from positive to negative (negative association).
    Reversed(f64),
}

impl Threshold {
    /// The cutpoint defining a biomarker-positive subgroup, if any.
    pub fn cut(&self) -> Option<f64> {
        match *self {
            Threshold::Cut(c) => Some(c),
            _ => None,
        }
    }
}

const SCAN_POINTS: usize = 256;
const ZERO_TOL: f64 = 1e-13;

fn sign_of(v: f64) -> i8 {
    if v > ZERO_TOL {
        1
    } else if v < -ZERO_TOL {
        -1
    } else {
        0
    }
}

/// Locates the root of a function of the biomarker on `support` by scanning
/// for sign changes and bisecting the single bracket to `1e-10`.
pub(crate) fn locate_threshold(
    f: impl Fn(f64) -> f64,
    support: BiomarkerSupport,
) -> Result<Threshold> {
    let (a, b) = (support.lower(), support.upper());
    let grid: Vec<f64> = (0..=SCAN_POINTS)
        .map(|k| a + (b - a) * k as f64 / SCAN_POINTS as f64)
        .collect();
    let vals: Vec<f64> = grid.iter().map(|&x| f(x)).collect();

    let mut brackets = Vec::new();
    let mut last: Option<(usize, i8)> = None;
    for (k, &v) in vals.iter().enumerate() {
        let s = sign_of(v);
        if s == 0 {
            continue;
        }
        if let Some((k0, s0)) = last {
            if s0 != s {
                brackets.push((k0, k, s0));
            }
        }
        last = Some((k, s));
    }

    match brackets.len() {
        0 => {
            let sign = match last {
                Some((_, 1)) => Sign::Positive,
                Some((_, -1)) => Sign::Negative,
                _ => Sign::Zero,
            };
            Ok(Threshold::NoCrossing(sign))
        }
        1 => {
            let (k0, k1, s0) = brackets[0];
            let (mut lo, mut hi) = (grid[k0], grid[k1]);
            let f_lo_sign = s0;
            while hi - lo > 1e-10 {
                let mid = 0.5 * (lo + hi);
                let s = sign_of(f(mid));
                if s == 0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if s == f_lo_sign {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let root = support.clamp(0.5 * (lo + hi));
            if f_lo_sign < 0 {
                Ok(Threshold::Cut(root))
            } else {
                Ok(Threshold::Reversed(root))
            }
        }
        n => Err(Error::AmbiguousCutpoint(n)),
    }
}

/// Root in `x` of `μ₁(t*|x) − μ₀(t*|x) = 0` on the support.
pub fn true_cutpoint(arms: &ArmPair, t_star: f64, support: BiomarkerSupport) -> Result<Threshold> {
    if !(t_star > 0.0) {
        return Err(Error::InvalidInput(format!("t* = {t_star} must be > 0")));
    }
    locate_threshold(|x| arms.rmst_difference(x, t_star), support)
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub(crate) fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Average of `μ₁(t*|x) − μ₀(t*|x)` over `x ~ Unif(x_lower, x_upper)`.
pub fn true_marginal_rmst_diff(
    arms: &ArmPair,
    t_star: f64,
    x_lower: f64,
    x_upper: f64,
) -> Result<f64> {
    if !(x_upper > x_lower) || x_lower < 0.0 || x_upper > 1.0 {
        return Err(Error::InvalidInput(format!(
            "invalid biomarker range ({x_lower}, {x_upper}]"
        )));
    }
    let width = x_upper - x_lower;
    let integral = integrate(
        &|x| arms.rmst_difference(x, t_star),
        x_lower,
        x_upper,
        1e-9 * width,
    );
    Ok(integral / width)
}

/// Interaction coefficient of the population least-squares projection of
/// the conditional RMSTs on `[1, Z, X, ZX]` with `X ~ Unif(support)` and 1:1
/// randomization: the difference of the arm-wise slopes.
pub fn projected_interaction(arms: &ArmPair, t_star: f64, support: BiomarkerSupport) -> f64 {
    let (a, b) = (support.lower(), support.upper());
    let mid = 0.5 * (a + b);
    let var = (b - a).powi(2) / 12.0;
    let slope = |m: &PiecewiseExpModel| {
        let cov = integrate(&|x| (x - mid) * m.rmst_unchecked(x, t_star), a, b, 1e-12) / (b - a);
        cov / var
    };
    slope(&arms.experimental) - slope(&arms.control)
}

/// Overall and positive-subgroup truths for a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DesignTruth {
    pub threshold: Threshold,
    /// Cutpoint used for the positive subgroup (support lower bound when none).
    pub cutpoint: f64,
    pub delta_positive: f64,
    pub delta_overall: f64,
    pub beta3: f64,
}

impl DesignTruth {
    pub fn compute(arms: &ArmPair, t_star: f64, support: BiomarkerSupport) -> Result<Self> {
        let threshold = true_cutpoint(arms, t_star, support)?;
        let cutpoint = threshold.cut().unwrap_or(support.lower());
        let delta_overall =
            true_marginal_rmst_diff(arms, t_star, support.lower(), support.upper())?;
        let delta_positive = if cutpoint < support.upper() {
            true_marginal_rmst_diff(arms, t_star, cutpoint, support.upper())?
        } else {
            0.0
        };
        Ok(Self {
            threshold,
            cutpoint,
            delta_positive,
            delta_overall,
            beta3: projected_interaction(arms, t_star, support),
        })
    }
}

/// Arms of the worked example: constant control hazard
/// `2.5 log 2`, experimental `6 log 2` up to two months then `2 log 2`,
/// times `exp(−0.8 x)` on the experimental arm.
pub fn example_arms() -> ArmPair {
    let ln2 = std::f64::consts::LN_2;
    ArmPair::new(
        PiecewiseExpModel::new(vec![], vec![2.5 * ln2], 0.0, CovariateForm::Linear).unwrap(),
        PiecewiseExpModel::new(
            vec![1.0 / 6.0],
            vec![6.0 * ln2, 2.0 * ln2],
            -0.8,
            CovariateForm::Linear,
        )
        .unwrap(),
    )
}

/// Arms of the simulation scenarios: control hazard 0.9; experimental 0.9 then
/// 0.45 after three months, times `exp(0.9 (1 − x))`.
pub fn simulation_arms() -> ArmPair {
    ArmPair::new(
        PiecewiseExpModel::new(vec![], vec![0.9], 0.0, CovariateForm::Complement).unwrap(),
        PiecewiseExpModel::new(vec![0.25], vec![0.9, 0.45], 0.9, CovariateForm::Complement)
            .unwrap(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_closed_forms() {
        let m = PiecewiseExpModel::exponential(0.7).unwrap();
        assert!((conditional_survival(&m, 0.3, 2.0).unwrap() - (-1.4f64).exp()).abs() < 1e-15);
        assert!(
            (conditional_rmst(&m, 0.3, 2.0).unwrap() - (1.0 - (-1.4f64).exp()) / 0.7).abs() < 1e-15
        );
        assert_eq!(conditional_survival(&m, 0.3, 0.0).unwrap(), 1.0);
        assert_eq!(conditional_rmst(&m, 0.3, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn example_experimental_arm_halves_at_two_months() {
        let arms = example_arms();
        let s = conditional_survival(&arms.experimental, 0.0, 1.0 / 6.0).unwrap();
        assert!((s - 0.5).abs() < 1e-14);
    }

    #[test]
    fn simulation_control_rmst() {
        let arms = simulation_arms();
        let mu = conditional_rmst(&arms.control, 0.4, 2.0).unwrap();
        let expect = (1.0 - (-1.8f64).exp()) / 0.9;
        assert!((mu - expect).abs() < 1e-14);
        assert!((expect - 0.9275).abs() < 1e-4);
    }

    #[test]
    fn biomarker_out_of_range() {
        let m = PiecewiseExpModel::exponential(1.0).unwrap();
        assert!(conditional_survival(&m, 1.2, 1.0).is_err());
        assert!(conditional_survival(&m, -0.1, 1.0).is_err());
    }

    #[test]
    fn model_validation() {
        assert!(PiecewiseExpModel::new(
            vec![0.5, 0.25],
            vec![1.0, 1.0, 1.0],
            0.0,
            CovariateForm::Linear
        )
        .is_err());
        assert!(PiecewiseExpModel::new(vec![0.5], vec![1.0], 0.0, CovariateForm::Linear).is_err());
        assert!(PiecewiseExpModel::new(vec![], vec![-1.0], 0.0, CovariateForm::Linear).is_err());
    }

    #[test]
    fn example_truths() {
        let arms = example_arms();
        let support = BiomarkerSupport::new(0.01, 1.0).unwrap();
        let c = true_cutpoint(&arms, 1.5, support).unwrap().cut().unwrap();
        assert!((c - 0.296).abs() < 5e-4, "{c}");
        assert!(arms.rmst_difference(c, 1.5).abs() < 1e-8);
        let dp = true_marginal_rmst_diff(&arms, 1.5, c, 1.0).unwrap();
        let d_o = true_marginal_rmst_diff(&arms, 1.5, 0.01, 1.0).unwrap();
        assert!((dp - 0.137).abs() < 5e-4, "{dp}");
        assert!((d_o - 0.082).abs() < 5e-4, "{d_o}");
    }

    #[test]
    fn simulation_truths() {
        let arms = simulation_arms();
        let c = true_cutpoint(&arms, 2.0, BiomarkerSupport::unit())
            .unwrap()
            .cut()
            .unwrap();
        assert!((c - 0.519).abs() < 5e-4, "{c}");
        let dp = true_marginal_rmst_diff(&arms, 2.0, c, 1.0).unwrap();
        let d_o = true_marginal_rmst_diff(&arms, 2.0, 0.0, 1.0).unwrap();
        assert!((dp - 0.134).abs() < 5e-4, "{dp}");
        assert!((d_o + 0.012).abs() < 5e-4, "{d_o}");
        assert!(true_marginal_rmst_diff(&arms, 2.0, 0.0, c).unwrap() <= 0.0);
    }

    #[test]
    fn identical_arms_have_no_cutpoint() {
        let arms = simulation_arms().global_null();
        let t = true_cutpoint(&arms, 2.0, BiomarkerSupport::unit()).unwrap();
        assert_eq!(t, Threshold::NoCrossing(Sign::Zero));
        assert_eq!(t.cut(), None);
        assert_eq!(true_marginal_rmst_diff(&arms, 2.0, 0.2, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn reversed_and_ambiguous_crossings() {
        let s = BiomarkerSupport::unit();
        assert!(
            matches!(locate_threshold(|x| 0.4 - x, s).unwrap(), Threshold::Reversed(r) if (r - 0.4).abs() < 1e-9)
        );
        assert_eq!(
            locate_threshold(|x| (x - 0.3) * (x - 0.7), s),
            Err(Error::AmbiguousCutpoint(2))
        );
        assert_eq!(
            locate_threshold(|x| x + 1.0, s).unwrap(),
            Threshold::NoCrossing(Sign::Positive)
        );
    }

    #[test]
    fn quadrature_matches_riemann_sum() {
        for (arms, t, a, b) in [
            (example_arms(), 1.5, 0.01, 1.0),
            (simulation_arms(), 2.0, 0.0, 1.0),
        ] {
            let n = 1_000_000;
            let h = (b - a) / n as f64;
            let riemann: f64 = (0..n)
                .map(|k| arms.rmst_difference(a + (k as f64 + 0.5) * h, t))
                .sum::<f64>()
                / n as f64;
            let quad = true_marginal_rmst_diff(&arms, t, a, b).unwrap();
            assert!((riemann - quad).abs() < 1e-5);
        }
    }
}
