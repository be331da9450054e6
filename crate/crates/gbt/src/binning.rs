use crate::matrix::{is_missing, FeatureMatrix};

/// Largest number of value bins per feature. One more slot is reserved for
/// missing values, so local bin ids stay within `u16`.
pub const MAX_BINS_LIMIT: usize = 65_000;

/// Per-feature cut points. A value lands in bin `k` when exactly `k` cuts
/// are `<=` it, so a split after bin `k` is the rule `x < cuts[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinMapper {
    cuts: Vec<Vec<f64>>,
}

impl BinMapper {
    /// With `exact`, every distinct midpoint is a candidate threshold;
    /// otherwise at most `max_bins` quantile bins are used.
    pub fn fit(x: &FeatureMatrix, max_bins: usize, exact: bool) -> Self {
        let max_bins = max_bins.clamp(2, MAX_BINS_LIMIT);
        let cuts = (0..x.n_cols())
            .map(|j| {
                let mut vals: Vec<f64> =
                    (0..x.n_rows()).map(|i| x.get(i, j)).filter(|v| !is_missing(*v)).collect();
                vals.sort_by(f64::total_cmp);
                feature_cuts(&vals, max_bins, exact)
            })
            .collect();
        Self { cuts }
    }

    pub fn n_features(&self) -> usize {
        self.cuts.len()
    }

    pub fn cuts(&self, feature: usize) -> &[f64] {
        &self.cuts[feature]
    }

    /// Number of value bins; the missing bin has id `n_bins(feature)`.
    pub fn n_bins(&self, feature: usize) -> usize {
        self.cuts[feature].len() + 1
    }

    #[inline]
    pub fn bin(&self, feature: usize, v: f64) -> u16 {
        let cuts = &self.cuts[feature];
        if is_missing(v) {
            cuts.len() as u16 + 1
        } else {
            cuts.partition_point(|&c| c <= v) as u16
        }
    }

    pub fn transform(&self, x: &FeatureMatrix) -> BinnedMatrix {
        assert_eq!(x.n_cols(), self.n_features(), "feature count mismatch");
        let mut data = Vec::with_capacity(x.n_rows() * x.n_cols());
        for row in x.rows() {
            for (j, &v) in row.iter().enumerate() {
                data.push(self.bin(j, v));
            }
        }
        BinnedMatrix { n_rows: x.n_rows(), n_cols: x.n_cols(), data }
    }
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) * 0.5;
    if mid > lo && mid <= hi {
        mid
    } else {
        hi
    }
}

fn feature_cuts(sorted: &[f64], max_bins: usize, exact: bool) -> Vec<f64> {
    let mut uniq: Vec<f64> = sorted.to_vec();
    uniq.dedup();
    if uniq.len() <= 1 {
        return Vec::new();
    }
    if exact || uniq.len() <= max_bins {
        let all: Vec<f64> = uniq.windows(2).map(|w| midpoint(w[0], w[1])).collect();
        if all.len() < MAX_BINS_LIMIT {
            return all;
        }
    }
    let n = sorted.len();
    let mut cuts = Vec::with_capacity(max_bins);
    for k in 1..max_bins {
        let idx = k * n / max_bins;
        if idx == 0 || idx >= n {
            continue;
        }
        let (lo, hi) = (sorted[idx - 1], sorted[idx]);
        let cut = if lo < hi {
            midpoint(lo, hi)
        } else {
            let next = uniq.partition_point(|&u| u <= hi);
            if next >= uniq.len() {
                continue;
            }
            midpoint(hi, uniq[next])
        };
        if cuts.last().is_none_or(|&last| cut > last) {
            cuts.push(cut);
        }
    }
    cuts
}

/// Row-major matrix of local bin ids.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<u16>,
}

impl BinnedMatrix {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u16] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_agree_with_threshold_rule() {
        let x = FeatureMatrix::from_rows(1, &[
            vec![1.0],
            vec![2.0],
            vec![2.0],
            vec![f64::NAN],
            vec![5.0],
        ]);
        let m = BinMapper::fit(&x, 256, false);
        assert_eq!(m.cuts(0), &[1.5, 3.5]);
        assert_eq!(m.bin(0, 1.0), 0);
        assert_eq!(m.bin(0, 1.5), 1);
        assert_eq!(m.bin(0, 4.0), 2);
        assert_eq!(m.bin(0, f64::NAN), 3);
    }

    #[test]
    fn quantile_cuts_are_bounded_and_increasing() {
        let rows: Vec<Vec<f64>> = (0..10_000).map(|i| vec![(i % 997) as f64 * 0.37]).collect();
        let m = BinMapper::fit(&FeatureMatrix::from_rows(1, &rows), 64, false);
        let c = m.cuts(0);
        assert!(c.len() <= 63 && c.len() > 50);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn constant_feature_has_single_bin() {
        let x = FeatureMatrix::from_rows(1, &[vec![3.0], vec![3.0]]);
        let m = BinMapper::fit(&x, 256, true);
        assert_eq!(m.n_bins(0), 1);
    }
}
