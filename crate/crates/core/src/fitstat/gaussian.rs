use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{CoreError, Result};
use crate::geometry::FWHM_PER_SIGMA;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mu: f64,
    pub sigma: f64,
    /// Expected total count of the fitted Gaussian.
    pub amplitude: f64,
    pub mu_err: f64,
    pub sigma_err: f64,
    pub amplitude_err: f64,
    pub chi2: f64,
    /// Bins with at least 5 expected counts, minus 3 parameters.
    pub ndf: i64,
    pub chi2_ndf: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub min_samples: usize,
    /// Fixed bin width; Freedman-Diaconis when `None`.
    pub bin_width: Option<f64>,
    /// Histogram half range in robust sigmas around the median.
    pub range_sigmas: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { min_samples: 1000, bin_width: None, range_sigmas: 6.0, max_iterations: 200 }
    }
}

/// Equal-width histogram: `counts[i]` covers `[lo + i w, lo + (i + 1) w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn edge(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.width
    }
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < v.len() {
        v[i] + f * (v[i + 1] - v[i])
    } else {
        v[i]
    }
}

/// Histogram over `median +- range_sigmas * 1.4826 MAD`.
pub fn build_histogram(samples: &[f64], opts: &FitOptions) -> Result<Histogram> {
    let mut v: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    if v.len() < opts.min_samples.max(3) {
        return Err(CoreError::TooFewSamples { got: v.len(), needed: opts.min_samples.max(3) });
    }
    v.sort_by(f64::total_cmp);
    let median = quantile_sorted(&v, 0.5);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - median).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mut robust = 1.482_602_218_505_602 * quantile_sorted(&dev, 0.5);
    if !(robust > 0.0) {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        robust = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64).sqrt();
    }
    if !(robust > 0.0) {
        return Err(CoreError::FitDegenerate("samples have no spread".into()));
    }
    let half = opts.range_sigmas * robust;
    let (lo, hi) = (median - half, median + half);
    let width = match opts.bin_width {
        Some(w) if w > 0.0 => w,
        Some(_) => return Err(CoreError::Config("histogram bin width must be positive".into())),
        None => {
            let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
            let fd = 2.0 * iqr / (v.len() as f64).cbrt();
            if fd > 0.0 { fd } else { 2.0 * half / 100.0 }
        }
    };
    let n_bins = ((hi - lo) / width).ceil().clamp(1.0, 100_000.0) as usize;
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0.0; n_bins];
    for x in v {
        if x >= lo && x < hi {
            counts[(((x - lo) / width) as usize).min(n_bins - 1)] += 1.0;
        }
    }
    Ok(Histogram { lo, width, counts })
}

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Expected bin counts and their gradients for parameters (A, mu, sigma).
fn model(h: &Histogram, p: &Vector3<f64>) -> (Vec<f64>, Vec<Vector3<f64>>) {
    let (a, mu, s) = (p[0], p[1], p[2]);
    let mut e = Vec::with_capacity(h.counts.len());
    let mut g = Vec::with_capacity(h.counts.len());
    for i in 0..h.counts.len() {
        let za = (h.edge(i) - mu) / s;
        let zb = (h.edge(i + 1) - mu) / s;
        let mass = cdf(zb) - cdf(za);
        e.push(a * mass);
        g.push(Vector3::new(
            mass,
            a * (phi(za) - phi(zb)) / s,
            a * (phi(za) * za - phi(zb) * zb) / s,
        ));
    }
    (e, g)
}

fn deviance(n: &[f64], e: &[f64]) -> f64 {
    n.iter()
        .zip(e)
        .map(|(&n, &e)| {
            let e = e.max(1e-300);
            if n > 0.0 { 2.0 * (e - n + n * (n / e).ln()) } else { 2.0 * e }
        })
        .sum()
}

/// Poisson fit of a Gaussian to histogram counts, by iteratively
/// reweighted Levenberg-Marquardt steps on the binned likelihood.
pub fn fit_histogram(h: &Histogram, seed_mu: f64, seed_sigma: f64, max_iterations: usize) -> Result<GaussianFit> {
    let total: f64 = h.counts.iter().sum();
    if total <= 0.0 || !(seed_sigma > 0.0) {
        return Err(CoreError::FitDegenerate("empty histogram or invalid seed".into()));
    }
    let span = h.width * h.counts.len() as f64;
    let mut p = Vector3::new(total, seed_mu, seed_sigma);
    let (mut e, mut g) = model(h, &p);
    let mut dev = deviance(&h.counts, &e);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iterations {
        iterations += 1;
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for i in 0..e.len() {
            let w = 1.0 / e[i].max(1.0);
            jtj += w * g[i] * g[i].transpose();
            jtr += w * (h.counts[i] - e[i]) * g[i];
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj;
            for k in 0..3 {
                a[(k, k)] *= 1.0 + lambda;
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            if !(trial[2] > 0.0 && trial[2] < 10.0 * span && trial[0] > 0.0) {
                lambda *= 10.0;
                continue;
            }
            let (te, tg) = model(h, &trial);
            let tdev = deviance(&h.counts, &te);
            if tdev <= dev {
                let small = step.iter().zip(p.iter()).all(|(d, v)| d.abs() <= 1e-12 * v.abs().max(1e-12 * span));
                let flat = dev - tdev <= 1e-14 * dev.max(1.0);
                p = trial;
                e = te;
                g = tg;
                dev = tdev;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                converged = small || flat;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(CoreError::FitDiverged(format!(
            "no convergence after {iterations} iterations (mu {}, sigma {})",
            p[1], p[2]
        )));
    }
    let (a, mu, sigma) = (p[0], p[1], p[2]);
    let hi = h.edge(h.counts.len());
    if !(sigma > 0.0 && sigma <= span && mu >= h.lo && mu <= hi) {
        return Err(CoreError::FitDiverged(format!("fit left the histogram range (mu {mu}, sigma {sigma})")));
    }
    let mut jtj = Matrix3::zeros();
    let (mut chi2, mut nbins) = (0.0, 0i64);
    for i in 0..e.len() {
        jtj += g[i] * g[i].transpose() / e[i].max(1.0);
        if e[i] >= 5.0 {
            chi2 += (h.counts[i] - e[i]).powi(2) / e[i];
            nbins += 1;
        }
    }
    let cov = jtj
        .try_inverse()
        .ok_or_else(|| CoreError::FitDiverged("singular fit covariance".into()))?;
    let ndf = nbins - 3;
    Ok(GaussianFit {
        mu,
        sigma,
        amplitude: a,
        mu_err: cov[(1, 1)].max(0.0).sqrt(),
        sigma_err: cov[(2, 2)].max(0.0).sqrt(),
        amplitude_err: cov[(0, 0)].max(0.0).sqrt(),
        chi2,
        ndf,
        chi2_ndf: if ndf > 0 { chi2 / ndf as f64 } else { f64::NAN },
        iterations,
    })
}

/// Histograms the samples and fits a Gaussian seeded by their mean and
/// standard deviation inside the histogram range.
pub fn fit_gaussian(samples: &[f64], opts: &FitOptions) -> Result<GaussianFit> {
    let h = build_histogram(samples, opts)?;
    let hi = h.edge(h.counts.len());
    let inside: Vec<f64> = samples.iter().copied().filter(|x| *x >= h.lo && *x < hi).collect();
    let n = inside.len() as f64;
    let mean = inside.iter().sum::<f64>() / n;
    let sd = (inside.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    fit_histogram(&h, mean, sd, opts.max_iterations)
}

/// Full width at half maximum and its uncertainty.
pub fn ctr_fwhm(fit: &GaussianFit) -> (f64, f64) {
    (FWHM_PER_SIGMA * fit.sigma, FWHM_PER_SIGMA * fit.sigma_err)
}
