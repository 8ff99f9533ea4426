//! Entropy-balancing calibration weights.
//!
//! Weights `p_i ∝ exp{λᵀ g(x_i)}` with `g(x) = [x, x²]` are chosen so the
//! weighted first two biomarker moments of the analysis set match a target.

use crate::error::{Error, Result};

/// Mean of `[x, x²]` over the target sample.
pub fn target_moments(x: &[f64]) -> Result<[f64; 2]> {
    if x.is_empty() {
        return Err(Error::NoStageOnePositives);
    }
    let n = x.len() as f64;
    let m1 = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| v * v).sum::<f64>() / n;
    Ok([m1, m2])
}

/// Moments of the uniform distribution on `[a, b]`.
pub fn uniform_moments(a: f64, b: f64) -> [f64; 2] {
    [(a + b) / 2.0, (a * a + a * b + b * b) / 3.0]
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    /// Positive, summing to one, aligned with the input.
    pub weights: Vec<f64>,
    /// Dual solution for the centered constraints.
    pub lambda: [f64; 2],
    pub iterations: usize,
    pub max_residual: f64,
}

/// Whether `target` lies strictly inside the convex hull of `{(x_i, x_i²)}`.
///
/// All points sit on the parabola `y = x²`, so the hull is bounded below by
/// the polyline through the sorted points and above by the chord joining
/// the extreme ones.
pub fn target_in_hull(x: &[f64], target: [f64; 2]) -> bool {
    let mut xs: Vec<f64> = x.to_vec();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 3 {
        return false;
    }
    let [m, s] = target;
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    if !(lo < m && m < hi) {
        return false;
    }
    let chord = lo * lo + (hi + lo) * (m - lo);
    let k = xs.partition_point(|&v| v <= m).clamp(1, xs.len() - 1);
    let (a, b) = (xs[k - 1], xs[k]);
    let polyline = a * a + (a + b) * (m - a);
    polyline < s && s < chord
}

struct Dual {
    objective: f64,
    weights: Vec<f64>,
    gradient: [f64; 2],
}

fn evaluate(h: &[[f64; 2]], lambda: [f64; 2]) -> Dual {
    let eta: Vec<f64> = h
        .iter()
        .map(|v| lambda[0] * v[0] + lambda[1] * v[1])
        .collect();
    let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = eta.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let mut gradient = [0.0; 2];
    for (w, v) in weights.iter().zip(h) {
        gradient[0] += w * v[0];
        gradient[1] += w * v[1];
    }
    Dual {
        objective: max + total.ln(),
        weights,
        gradient,
    }
}

const MAX_ITER: usize = 200;
const TOLERANCE: f64 = 1e-10;

/// Solves the entropy-balancing dual `min_λ log Σ exp{λᵀ(g(x_i) − g̃)}` by
/// Newton's method with Armijo backtracking.
pub fn calibrate_weights(x: &[f64], target: [f64; 2]) -> Result<CalibrationResult> {
    if x.is_empty() {
        return Err(Error::NoSamples);
    }
    if !target_in_hull(x, target) {
        return Err(Error::CalibrationInfeasible);
    }
    let h: Vec<[f64; 2]> = x
        .iter()
        .map(|&v| [v - target[0], v * v - target[1]])
        .collect();
    let mut lambda = [0.0; 2];
    let mut dual = evaluate(&h, lambda);
    let mut iterations = 0;
    loop {
        let residual = dual.gradient[0].abs().max(dual.gradient[1].abs());
        if residual < TOLERANCE {
            return Ok(CalibrationResult {
                weights: dual.weights,
                lambda,
                iterations,
                max_residual: residual,
            });
        }
        if iterations == MAX_ITER {
            return Err(Error::CalibrationNotConverged(residual));
        }
        iterations += 1;

        let g = dual.gradient;
        let (mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0);
        for (w, v) in dual.weights.iter().zip(&h) {
            h00 += w * v[0] * v[0];
            h01 += w * v[0] * v[1];
            h11 += w * v[1] * v[1];
        }
        h00 -= g[0] * g[0];
        h01 -= g[0] * g[1];
        h11 -= g[1] * g[1];
        let det = h00 * h11 - h01 * h01;
        if !(det > 0.0) {
            return Err(Error::CalibrationNotConverged(residual));
        }
        let step = [
            -(h11 * g[0] - h01 * g[1]) / det,
            -(h00 * g[1] - h01 * g[0]) / det,
        ];
        let slope = g[0] * step[0] + g[1] * step[1];

        let mut t = 1.0;
        loop {
            let trial = [lambda[0] + t * step[0], lambda[1] + t * step[1]];
            let next = evaluate(&h, trial);
            let next_residual = next.gradient[0].abs().max(next.gradient[1].abs());
            // Near the root objective changes drop below rounding; a halved
            // residual is then the deciding criterion.
            if next.objective <= dual.objective + 1e-4 * t * slope || next_residual < 0.5 * residual
            {
                lambda = trial;
                dual = next;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(Error::CalibrationNotConverged(residual));
            }
        }
    }
}
