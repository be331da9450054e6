use serde::Serialize;

use crate::error::{GbtError, Result};
use crate::shap::ShapExplanation;

/// Named set of feature indices whose attributions are summed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureGroup {
    pub name: String,
    pub features: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupImportance {
    pub group: String,
    pub n_features: usize,
    pub mean_abs_sv: f64,
}

/// Mean over samples of the absolute group-total attribution.
pub fn group_importance(
    explanations: &[ShapExplanation],
    groups: &[FeatureGroup],
) -> Result<Vec<GroupImportance>> {
    let first = explanations.first().ok_or(GbtError::EmptyBatch)?;
    let m = first.sv.len();
    for g in groups {
        if let Some(&index) = g.features.iter().find(|&&f| f >= m) {
            return Err(GbtError::FeatureIndex { index, n_features: m });
        }
    }
    let n = explanations.len() as f64;
    Ok(groups
        .iter()
        .map(|g| {
            let total: f64 = explanations
                .iter()
                .map(|e| g.features.iter().map(|&f| e.sv[f]).sum::<f64>().abs())
                .sum();
            GroupImportance {
                group: g.name.clone(),
                n_features: g.features.len(),
                mean_abs_sv: total / n,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DependencePoint {
    pub value: f64,
    pub sv: f64,
    pub color: f64,
}

/// (feature value, attribution, color feature value) per explained sample.
pub fn dependence_scan(
    explanations: &[ShapExplanation],
    feature: usize,
    color_feature: usize,
) -> Result<Vec<DependencePoint>> {
    let m = explanations.first().map_or(0, |e| e.sv.len());
    for index in [feature, color_feature] {
        if index >= m && !explanations.is_empty() {
            return Err(GbtError::FeatureIndex { index, n_features: m });
        }
    }
    Ok(explanations
        .iter()
        .map(|e| DependencePoint {
            value: e.feature_values[feature],
            sv: e.sv[feature],
            color: e.feature_values[color_feature],
        })
        .collect())
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Spearman rank correlation; `None` when either input is constant or has
/// fewer than three finite pairs.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let (a, b): (Vec<f64>, Vec<f64>) = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| (*x, *y))
        .unzip();
    if a.len() < 3 {
        return None;
    }
    pearson(&average_ranks(&a), &average_ranks(&b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationBin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Separation {
    /// Count-weighted mean of the per-bin correlations.
    pub rho: f64,
    pub bins: Vec<SeparationBin>,
}

/// Rank correlation between attribution and color value inside quantile
/// bins of the feature value, i.e. at approximately fixed feature value.
pub fn color_separation(points: &[DependencePoint], n_bins: usize) -> Separation {
    let mut pts: Vec<DependencePoint> = points
        .iter()
        .copied()
        .filter(|p| p.value.is_finite() && p.sv.is_finite() && p.color.is_finite())
        .collect();
    pts.sort_by(|a, b| a.value.total_cmp(&b.value));
    let n_bins = n_bins.max(1);
    let mut bins = Vec::with_capacity(n_bins);
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..n_bins {
        let (s, e) = (k * pts.len() / n_bins, (k + 1) * pts.len() / n_bins);
        if s == e {
            continue;
        }
        let chunk = &pts[s..e];
        let sv: Vec<f64> = chunk.iter().map(|p| p.sv).collect();
        let color: Vec<f64> = chunk.iter().map(|p| p.color).collect();
        let rho = spearman(&color, &sv);
        if let Some(r) = rho {
            num += r * chunk.len() as f64;
            den += chunk.len() as f64;
        }
        bins.push(SeparationBin { lo: chunk[0].value, hi: chunk[chunk.len() - 1].value, n: chunk.len(), rho });
    }
    Separation { rho: if den > 0.0 { num / den } else { 0.0 }, bins }
}
