use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CoreError, Result};

/// One calibration point: source position `x` (mm) and mean prediction `y` (ps).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearityPoint {
    pub x: f64,
    pub sx: f64,
    pub y: f64,
    pub sy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityResidual {
    pub x: f64,
    pub y: f64,
    pub fitted: f64,
    pub residual: f64,
    /// Residual over its effective uncertainty.
    pub pull: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_err: f64,
    pub intercept_err: f64,
    pub epsilon: f64,
    pub epsilon_err: f64,
    pub chi2: f64,
    pub ndf: usize,
    pub iterations: usize,
    pub residuals: Vec<LinearityResidual>,
}

/// Straight-line fit with uncertainties on both axes.
///
/// Minimizes `sum (y - a - b x)^2 / (sy^2 + b^2 sx^2)` by York's iteration.
/// Parameter uncertainties are scaled by the residual variance `chi2 / ndf`.
/// `c` converts the slope to the scale factor `epsilon = -b c / 2`.
pub fn fit_linearity(points: &[LinearityPoint], c: f64) -> Result<LinearityFit> {
    let n = points.len();
    if n < 3 {
        return Err(CoreError::FitDegenerate(format!("{n} points, need at least 3")));
    }
    if points.iter().any(|p| !(p.sy > 0.0) || !(p.sx >= 0.0) || !p.x.is_finite() || !p.y.is_finite()) {
        return Err(CoreError::FitDegenerate("non-finite point or non-positive ordinate error".into()));
    }
    let xmin = points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let xmax = points.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    if !(xmax - xmin > 0.0) {
        return Err(CoreError::FitDegenerate("no spread in abscissa".into()));
    }

    // Weighted ordinary least squares as the starting slope.
    let weights = |b: f64| -> Vec<f64> { points.iter().map(|p| 1.0 / (p.sy * p.sy + b * b * p.sx * p.sx)).collect() };
    let means = |w: &[f64]| -> (f64, f64, f64) {
        let sw: f64 = w.iter().sum();
        let xb = points.iter().zip(w).map(|(p, w)| w * p.x).sum::<f64>() / sw;
        let yb = points.iter().zip(w).map(|(p, w)| w * p.y).sum::<f64>() / sw;
        (sw, xb, yb)
    };
    let w0: Vec<f64> = points.iter().map(|p| 1.0 / (p.sy * p.sy)).collect();
    let (_, xb, yb) = means(&w0);
    let sxy: f64 = points.iter().zip(&w0).map(|(p, w)| w * (p.x - xb) * (p.y - yb)).sum();
    let sxx: f64 = points.iter().zip(&w0).map(|(p, w)| w * (p.x - xb) * (p.x - xb)).sum();
    let mut b = sxy / sxx;

    let mut iterations = 0;
    loop {
        iterations += 1;
        let w = weights(b);
        let (_, xb, yb) = means(&w);
        let (mut num, mut den) = (0.0, 0.0);
        for (p, w) in points.iter().zip(&w) {
            let (u, v) = (p.x - xb, p.y - yb);
            let beta = w * (u * p.sy * p.sy + b * v * p.sx * p.sx);
            num += w * beta * v;
            den += w * beta * u;
        }
        let next = num / den;
        if !next.is_finite() {
            return Err(CoreError::FitDegenerate("slope iteration produced a non-finite value".into()));
        }
        let done = (next - b).abs() <= 1e-15 * next.abs().max(f64::MIN_POSITIVE);
        b = next;
        if done || iterations >= 1000 {
            break;
        }
    }

    let w = weights(b);
    let (sw, xb, yb) = means(&w);
    let a = yb - b * xb;
    // Adjusted abscissae and their weighted spread give the slope variance.
    let adj: Vec<f64> = points
        .iter()
        .zip(&w)
        .map(|(p, w)| xb + w * ((p.x - xb) * p.sy * p.sy + b * (p.y - yb) * p.sx * p.sx))
        .collect();
    let adj_mean = adj.iter().zip(&w).map(|(x, w)| w * x).sum::<f64>() / sw;
    let su: f64 = adj.iter().zip(&w).map(|(x, w)| w * (x - adj_mean).powi(2)).sum();
    let chi2: f64 = points.iter().zip(&w).map(|(p, w)| w * (p.y - a - b * p.x).powi(2)).sum();
    let ndf = n - 2;
    let scale = (chi2 / ndf as f64).sqrt();
    let slope_err = (1.0 / su).sqrt() * scale;
    let intercept_err = (1.0 / sw + adj_mean * adj_mean / su).sqrt() * scale;
    let residuals = points
        .iter()
        .zip(&w)
        .map(|(p, w)| {
            let fitted = a + b * p.x;
            LinearityResidual { x: p.x, y: p.y, fitted, residual: p.y - fitted, pull: (p.y - fitted) * w.sqrt() }
        })
        .collect();
    Ok(LinearityFit {
        slope: b,
        intercept: a,
        slope_err,
        intercept_err,
        epsilon: -b * c / 2.0,
        epsilon_err: slope_err * c / 2.0,
        chi2,
        ndf,
        iterations,
        residuals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunsTest {
    pub n_positive: usize,
    pub n_negative: usize,
    pub runs: usize,
    pub expected_runs: f64,
    pub z: f64,
    /// Two-sided p-value under the normal approximation.
    pub p_value: f64,
}

/// Wald-Wolfowitz runs test on residual signs. Zeros are dropped.
pub fn runs_test(residuals: &[f64]) -> Result<RunsTest> {
    let signs: Vec<bool> = residuals.iter().filter(|r| **r != 0.0).map(|r| *r > 0.0).collect();
    let n1 = signs.iter().filter(|s| **s).count();
    let n2 = signs.len() - n1;
    if n1 == 0 || n2 == 0 {
        return Err(CoreError::TooFewSamples { got: n1.min(n2), needed: 1 });
    }
    let runs = 1 + signs.windows(2).filter(|w| w[0] != w[1]).count();
    let (a, b) = (n1 as f64, n2 as f64);
    let n = a + b;
    let expected = 2.0 * a * b / n + 1.0;
    let var = 2.0 * a * b * (2.0 * a * b - n) / (n * n * (n - 1.0));
    let z = if var > 0.0 { (runs as f64 - expected) / var.sqrt() } else { 0.0 };
    let normal = Normal::standard();
    let p_value = (2.0 * normal.cdf(-z.abs())).min(1.0);
    Ok(RunsTest { n_positive: n1, n_negative: n2, runs, expected_runs: expected, z, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SPEED_OF_LIGHT_MM_PER_PS as C;

    fn line(eps: f64, b: f64) -> Vec<LinearityPoint> {
        (-15..=9)
            .map(|k| {
                let x = 5.0 * k as f64;
                LinearityPoint { x, sx: 0.1, y: -2.0 * eps / C * x + b, sy: 2.0 }
            })
            .collect()
    }

    #[test]
    fn exact_line_gives_unit_epsilon() {
        let f = fit_linearity(&line(1.0, 0.0), C).unwrap();
        assert!((f.epsilon - 1.0).abs() < 1e-9);
        assert!(f.intercept.abs() < 1e-9);
    }

    #[test]
    fn doubled_slope_gives_two() {
        let f = fit_linearity(&line(2.0, 7.0), C).unwrap();
        assert!((f.epsilon - 2.0).abs() < 1e-9);
        assert!((f.intercept - 7.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_abscissa() {
        let p = vec![LinearityPoint { x: 1.0, sx: 0.1, y: 0.0, sy: 1.0 }; 4];
        assert!(matches!(fit_linearity(&p, C), Err(CoreError::FitDegenerate(_))));
    }

    #[test]
    fn runs_of_alternating_signs() {
        let r = runs_test(&[1.0, -1.0, 1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!(r.runs, 6);
        let r = runs_test(&[1.0, 1.0, 1.0, -1.0, -1.0, -1.0]).unwrap();
        assert_eq!(r.runs, 2);
        assert!(r.z < 0.0);
    }
}
