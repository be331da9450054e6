use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Sparse channel-combination matrix: row `r` has +1 in slab column
/// `rows[r].0` and -1 in column `n_slab + rows[r].1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidenceMatrix {
    pub n_slab: usize,
    pub n_oto: usize,
    pub rows: Vec<(usize, usize)>,
}

impl IncidenceMatrix {
    pub fn n_cols(&self) -> usize {
        self.n_slab + self.n_oto
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.n_cols());
        for (r, &(a, b)) in self.rows.iter().enumerate() {
            m[(r, a)] = 1.0;
            m[(r, self.n_slab + b)] = -1.0;
        }
        m
    }

    /// `M c` for corrections laid out slab first.
    pub fn apply(&self, c: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|&(a, b)| c[a] - c[self.n_slab + b]).collect()
    }
}

pub fn build_matrix(pairs: &[(usize, usize)], n_slab: usize, n_oto: usize) -> Result<IncidenceMatrix> {
    if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= n_slab || b >= n_oto) {
        return Err(CoreError::Config(format!("channel pair ({a}, {b}) outside {n_slab} x {n_oto}")));
    }
    Ok(IncidenceMatrix { n_slab, n_oto, rows: pairs.to_vec() })
}

/// Gauge-fixed least-squares corrections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corrections {
    /// Zero mean over the channels that appear in the matrix.
    pub slab_ps: Vec<f64>,
    pub oto_ps: Vec<f64>,
    /// Mean slab correction minus mean one-to-one correction.
    pub inter_detector_offset_ps: f64,
    pub slab_active: Vec<bool>,
    pub oto_active: Vec<bool>,
    /// Weighted root-sum-square of the fit residuals.
    pub residual_norm: f64,
    pub refinement_steps: usize,
}

impl Corrections {
    pub fn max_abs(&self) -> f64 {
        self.slab_ps.iter().chain(&self.oto_ps).fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Slab corrections followed by one-to-one corrections, before the
    /// per-detector mean removal (up to a common constant).
    pub fn combined(&self) -> Vec<f64> {
        let h = self.inter_detector_offset_ps / 2.0;
        self.slab_ps.iter().map(|c| c + h).chain(self.oto_ps.iter().map(|c| c - h)).collect()
    }
}

/// Weighted least squares `argmin |W^1/2 (M c - dt)|`.
///
/// The normal equations are damped by 1e-6 of their mean diagonal and the
/// damping bias is removed by iterated refinement, which converges to the
/// minimum-norm solution. Unused channels stay at zero.
pub fn solve_corrections(m: &IncidenceMatrix, dt: &[f64], weights: &[f64]) -> Result<Corrections> {
    if m.rows.is_empty() {
        return Err(CoreError::EmptyCalibration);
    }
    if dt.len() != m.n_rows() || weights.len() != m.n_rows() {
        return Err(CoreError::Config(format!(
            "{} rows but {} means and {} weights",
            m.n_rows(),
            dt.len(),
            weights.len()
        )));
    }
    if let Some(i) = (0..dt.len()).find(|&i| !dt[i].is_finite() || !(weights[i] > 0.0) || !weights[i].is_finite()) {
        return Err(CoreError::Config(format!("row {i} has a non-finite mean or non-positive weight")));
    }
    let n = m.n_cols();
    let mut ata = DMatrix::<f64>::zeros(n, n);
    let mut atb = DVector::<f64>::zeros(n);
    for (r, &(a, b)) in m.rows.iter().enumerate() {
        let o = m.n_slab + b;
        let w = weights[r];
        ata[(a, a)] += w;
        ata[(o, o)] += w;
        ata[(a, o)] -= w;
        ata[(o, a)] -= w;
        atb[a] += w * dt[r];
        atb[o] -= w * dt[r];
    }
    let active: Vec<bool> = (0..n).map(|i| ata[(i, i)] > 0.0).collect();
    let n_active = active.iter().filter(|a| **a).count();
    let lambda = 1e-6 * ata.diagonal().sum() / n_active as f64;
    let mut damped = ata.clone();
    for i in 0..n {
        damped[(i, i)] += lambda;
    }
    let chol = damped
        .cholesky()
        .ok_or_else(|| CoreError::Singular("damped normal matrix is not positive definite".into()))?;

    let mut x = DVector::<f64>::zeros(n);
    let mut steps = 0;
    for _ in 0..200 {
        steps += 1;
        let next = chol.solve(&(&atb + lambda * &x));
        let change = (&next - &x).amax();
        x = next;
        if change <= 1e-14 * x.amax().max(1e-300) {
            break;
        }
    }

    let residual_norm = m
        .rows
        .iter()
        .enumerate()
        .map(|(r, &(a, b))| weights[r] * (x[a] - x[m.n_slab + b] - dt[r]).powi(2))
        .sum::<f64>()
        .sqrt();

    let mean_over = |range: std::ops::Range<usize>| -> f64 {
        let idx: Vec<usize> = range.filter(|&i| active[i]).collect();
        if idx.is_empty() { 0.0 } else { idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64 }
    };
    let ms = mean_over(0..m.n_slab);
    let mo = mean_over(m.n_slab..n);
    let slab_ps = (0..m.n_slab).map(|i| if active[i] { x[i] - ms } else { 0.0 }).collect();
    let oto_ps = (m.n_slab..n).map(|i| if active[i] { x[i] - mo } else { 0.0 }).collect();
    Ok(Corrections {
        slab_ps,
        oto_ps,
        inter_detector_offset_ps: ms - mo,
        slab_active: active[..m.n_slab].to_vec(),
        oto_active: active[m.n_slab..].to_vec(),
        residual_norm,
        refinement_steps: steps,
    })
}
