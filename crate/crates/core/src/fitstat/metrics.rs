use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fitstat::gaussian::{fit_gaussian, FitOptions};

/// Mean absolute error.
pub fn mae(labels: &[f64], predictions: &[f64]) -> Result<f64> {
    if labels.len() != predictions.len() {
        return Err(CoreError::Config(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    if labels.is_empty() {
        return Err(CoreError::TooFewSamples { got: 0, needed: 1 });
    }
    Ok(labels.iter().zip(predictions).map(|(l, p)| (p - l).abs()).sum::<f64>() / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionMae {
    pub z_mm: f64,
    pub n: usize,
    pub mae_ps: f64,
}

fn group_by_position(z: &[f64]) -> Vec<(f64, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    let mut out: Vec<(f64, Vec<usize>)> = Vec::new();
    for i in idx {
        match out.last_mut() {
            Some((zz, v)) if *zz == z[i] => v.push(i),
            _ => out.push((z[i], vec![i])),
        }
    }
    out
}

/// MAE per distinct source position, sorted by position.
pub fn mae_by_position(z: &[f64], labels: &[f64], predictions: &[f64]) -> Result<Vec<PositionMae>> {
    if z.len() != labels.len() || labels.len() != predictions.len() {
        return Err(CoreError::Config("position, label and prediction lengths differ".into()));
    }
    group_by_position(z)
        .into_iter()
        .map(|(z_mm, idx)| {
            let l: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
            let p: Vec<f64> = idx.iter().map(|&i| predictions[i]).collect();
            Ok(PositionMae { z_mm, n: idx.len(), mae_ps: mae(&l, &p)? })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionFit {
    pub z_mm: f64,
    pub n: usize,
    pub mu_ps: f64,
    pub mu_err_ps: f64,
    pub sigma_ps: f64,
    pub chi2_ndf: f64,
    pub ndf: i64,
    /// False when the fit failed or had no degrees of freedom; such rows
    /// carry the sample mean and its standard error instead.
    pub fitted: bool,
}

/// Gaussian fit of the predictions at each source position.
pub fn goodness_by_position(z: &[f64], predictions: &[f64], opts: &FitOptions) -> Result<Vec<PositionFit>> {
    if z.len() != predictions.len() {
        return Err(CoreError::Config("position and prediction lengths differ".into()));
    }
    let groups = group_by_position(z);
    Ok(groups
        .into_iter()
        .map(|(z_mm, idx)| {
            let p: Vec<f64> = idx.iter().map(|&i| predictions[i]).collect();
            position_fit(z_mm, &p, opts)
        })
        .collect())
}

fn position_fit(z_mm: f64, p: &[f64], opts: &FitOptions) -> PositionFit {
    let n = p.len();
    match fit_gaussian(p, opts) {
        Ok(f) if f.ndf > 0 => PositionFit {
            z_mm,
            n,
            mu_ps: f.mu,
            mu_err_ps: f.mu_err,
            sigma_ps: f.sigma,
            chi2_ndf: f.chi2_ndf,
            ndf: f.ndf,
            fitted: true,
        },
        _ => {
            let mean = p.iter().sum::<f64>() / n.max(1) as f64;
            let var = if n > 1 { p.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { f64::NAN };
            PositionFit {
                z_mm,
                n,
                mu_ps: mean,
                mu_err_ps: (var / n as f64).sqrt(),
                sigma_ps: var.sqrt(),
                chi2_ndf: f64::NAN,
                ndf: 0,
                fitted: false,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[0.0, 0.0], &[10.0, -10.0]).unwrap(), 10.0);
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn by_position_groups() {
        let rows = mae_by_position(&[5.0, -5.0, 5.0], &[0.0, 0.0, 0.0], &[1.0, 4.0, 3.0]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].z_mm, rows[0].mae_ps), (-5.0, 4.0));
        assert_eq!((rows[1].n, rows[1].mae_ps), (2, 2.0));
    }

    #[test]
    fn degenerate_rows_flagged() {
        let rows = goodness_by_position(&[0.0; 3], &[1.0, 2.0, 3.0], &FitOptions::default()).unwrap();
        assert!(!rows[0].fitted);
        assert_eq!(rows[0].mu_ps, 2.0);
    }
}
