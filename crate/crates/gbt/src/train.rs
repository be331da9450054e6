use rayon::prelude::*;
use serde::Serialize;

use crate::binning::{BinMapper, BinnedMatrix};
use crate::error::{GbtError, Result};
use crate::matrix::FeatureMatrix;
use crate::tree::{Node, Tree, TreeEnsemble};

/// Boosting hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HyperParams {
    pub max_depth: usize,
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub min_samples_leaf: usize,
    /// L2 damping on leaf values; 0 gives plain residual means.
    pub lambda: f64,
    pub min_split_gain: f64,
    /// `None` trains all `n_estimators` trees.
    pub early_stopping_rounds: Option<usize>,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            max_depth: 6,
            learning_rate: 0.3,
            n_estimators: 500,
            min_samples_leaf: 20,
            lambda: 0.0,
            min_split_gain: 0.0,
            early_stopping_rounds: Some(10),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(GbtError::InvalidParam("max_depth must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(GbtError::InvalidParam("learning_rate must be finite and >= 0".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(GbtError::InvalidParam("min_samples_leaf must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) || !(self.min_split_gain >= 0.0) {
            return Err(GbtError::InvalidParam("lambda and min_split_gain must be >= 0".into()));
        }
        Ok(())
    }
}

/// Threshold candidate generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinningParams {
    pub max_bins: usize,
    /// Use every midpoint between distinct training values.
    pub exact: bool,
}

impl Default for BinningParams {
    fn default() -> Self {
        Self { max_bins: 256, exact: false }
    }
}

/// Feature rows with their regression targets.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub x: &'a FeatureMatrix,
    pub y: &'a [f64],
}

impl<'a> Samples<'a> {
    pub fn new(x: &'a FeatureMatrix, y: &'a [f64]) -> Result<Self> {
        if x.n_rows() != y.len() {
            return Err(GbtError::LabelCount { labels: y.len(), rows: x.n_rows() });
        }
        if let Some(index) = y.iter().position(|v| !v.is_finite()) {
            return Err(GbtError::NonFiniteLabel { index });
        }
        for (i, row) in x.rows().enumerate() {
            if let Some(j) = row.iter().position(|v| v.is_infinite()) {
                return Err(GbtError::InvalidParam(format!(
                    "feature value at row {i}, column {j} is infinite"
                )));
            }
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub n_trees: usize,
    pub train_mse: f64,
    pub valid_mse: Option<f64>,
}

/// Per-iteration losses. Entry 0 is the constant base model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingLog {
    pub iterations: Vec<IterationRecord>,
    pub best_n_trees: usize,
    pub best_valid_mse: Option<f64>,
    pub stopped_early: bool,
    pub warnings: Vec<String>,
}

/// Training data binned once, reusable across hyperparameter settings.
pub struct Prepared<'a> {
    names: Vec<String>,
    train: Samples<'a>,
    valid: Option<Samples<'a>>,
    binned: BinnedMatrix,
    layout: Layout,
    warnings: Vec<String>,
}

impl<'a> Prepared<'a> {
    pub fn new(
        names: Vec<String>,
        train: Samples<'a>,
        valid: Option<Samples<'a>>,
        binning: BinningParams,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(GbtError::EmptyTrainingSet);
        }
        if train.x.n_cols() != names.len() {
            return Err(GbtError::SchemaMismatch { expected: names.len(), got: train.x.n_cols() });
        }
        let mut warnings = Vec::new();
        let valid = match valid {
            Some(v) if v.is_empty() => {
                let msg = "validation set is empty; early stopping disabled".to_string();
                log::warn!("{msg}");
                warnings.push(msg);
                None
            }
            Some(v) => {
                if v.x.n_cols() != names.len() {
                    return Err(GbtError::SchemaMismatch {
                        expected: names.len(),
                        got: v.x.n_cols(),
                    });
                }
                Some(v)
            }
            None => None,
        };
        let mapper = BinMapper::fit(train.x, binning.max_bins, binning.exact);
        let binned = mapper.transform(train.x);
        let layout = Layout::new(&mapper);
        Ok(Self { names, train, valid, binned, layout, warnings })
    }

    pub fn fit(&self, params: &HyperParams) -> Result<(TreeEnsemble, TrainingLog)> {
        params.validate()?;
        let n = self.train.len();
        let lr = params.learning_rate;
        let base = self.train.y.iter().sum::<f64>() / n as f64;
        let mut resid: Vec<f64> = self.train.y.iter().map(|y| y - base).collect();
        let mut valid_pred = self.valid.map(|v| vec![base; v.len()]);

        let mut warnings = self.warnings.clone();
        let early = match (params.early_stopping_rounds, self.valid) {
            (Some(_), None) => {
                if self.warnings.is_empty() {
                    let msg = "no validation set; early stopping disabled".to_string();
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
                None
            }
            (rounds, _) => rounds,
        };

        let mut iterations = vec![IterationRecord {
            n_trees: 0,
            train_mse: mean_sq(&resid),
            valid_mse: valid_pred.as_ref().map(|p| self.valid_mse(p)),
        }];
        let mut best = (0usize, iterations[0].valid_mse.unwrap_or(f64::INFINITY));
        let mut trees = Vec::new();
        let mut rows: Vec<u32> = (0..n as u32).collect();
        let mut stopped_early = false;

        for k in 1..=params.n_estimators {
            let tree = self.grow_tree(params, &mut rows, &mut resid);
            if let (Some(pred), Some(v)) = (valid_pred.as_mut(), self.valid) {
                pred.par_iter_mut().enumerate().for_each(|(i, p)| *p += lr * tree.predict(v.x.row(i)));
            }
            trees.push(tree);
            let rec = IterationRecord {
                n_trees: k,
                train_mse: mean_sq(&resid),
                valid_mse: valid_pred.as_ref().map(|p| self.valid_mse(p)),
            };
            log::debug!(
                "depth {} lr {} iteration {k}: train mse {:.6} valid mse {:?}",
                params.max_depth,
                lr,
                rec.train_mse,
                rec.valid_mse
            );
            if let Some(v) = rec.valid_mse {
                if v < best.1 {
                    best = (k, v);
                }
            }
            iterations.push(rec);
            if let Some(rounds) = early {
                if k - best.0 >= rounds {
                    stopped_early = k < params.n_estimators;
                    break;
                }
            }
        }

        let best_n_trees = if early.is_some() { best.0 } else { trees.len() };
        let mut model =
            TreeEnsemble::new(base, lr, params.max_depth, self.names.clone(), trees)?;
        model.truncate(best_n_trees);
        let best_valid_mse = iterations[best_n_trees].valid_mse;
        Ok((
            model,
            TrainingLog { iterations, best_n_trees, best_valid_mse, stopped_early, warnings },
        ))
    }

    fn valid_mse(&self, pred: &[f64]) -> f64 {
        let v = self.valid.expect("validation set");
        pred.iter().zip(v.y).map(|(p, y)| (y - p) * (y - p)).sum::<f64>() / pred.len() as f64
    }

    fn grow_tree(&self, params: &HyperParams, rows: &mut [u32], resid: &mut [f64]) -> Tree {
        let mut grower = Grower {
            binned: &self.binned,
            layout: &self.layout,
            resid,
            params,
            nodes: Vec::new(),
            leaves: Vec::new(),
            scratch: Vec::with_capacity(rows.len()),
        };
        let hist = grower.build_hist(rows);
        grower.grow(rows, 0, hist, 0);
        let Grower { nodes, leaves, .. } = grower;
        let lr = params.learning_rate;
        for (value, start, len) in leaves {
            for &r in &rows[start..start + len] {
                resid[r as usize] -= lr * value;
            }
        }
        Tree::from_nodes_unchecked(nodes)
    }
}

/// Fits one model; see [`Prepared`] to reuse binning across fits.
pub fn train(
    names: Vec<String>,
    train: Samples<'_>,
    valid: Option<Samples<'_>>,
    binning: BinningParams,
    params: &HyperParams,
) -> Result<(TreeEnsemble, TrainingLog)> {
    Prepared::new(names, train, valid, binning)?.fit(params)
}

fn mean_sq(v: &[f64]) -> f64 {
    v.iter().map(|r| r * r).sum::<f64>() / v.len() as f64
}

/// Histogram slot layout: per feature its value bins followed by one missing slot.
struct Layout {
    offsets: Vec<usize>,
    n_bins: Vec<usize>,
    cuts: Vec<Vec<f64>>,
    total: usize,
}

impl Layout {
    fn new(mapper: &BinMapper) -> Self {
        let mut offsets = Vec::with_capacity(mapper.n_features());
        let mut n_bins = Vec::with_capacity(mapper.n_features());
        let mut total = 0;
        for f in 0..mapper.n_features() {
            offsets.push(total);
            n_bins.push(mapper.n_bins(f));
            total += mapper.n_bins(f) + 1;
        }
        let cuts = (0..mapper.n_features()).map(|f| mapper.cuts(f).to_vec()).collect();
        Self { offsets, n_bins, cuts, total }
    }
}

struct Hist {
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl Hist {
    fn zeros(n: usize) -> Self {
        Self { sum: vec![0.0; n], count: vec![0; n] }
    }

    fn add(&mut self, other: &Hist) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.count.iter_mut().zip(&other.count) {
            *a += b;
        }
    }

    fn subtract(&mut self, other: &Hist) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a -= b;
        }
        for (a, b) in self.count.iter_mut().zip(&other.count) {
            *a -= b;
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    bin: usize,
    default_left: bool,
}

const HIST_CHUNK: usize = 8192;
const PAR_SPLIT_ROWS: usize = 4096;

struct Grower<'g> {
    binned: &'g BinnedMatrix,
    layout: &'g Layout,
    resid: &'g [f64],
    params: &'g HyperParams,
    nodes: Vec<Node>,
    /// (value, start, len) of each leaf's slice of the row array.
    leaves: Vec<(f64, usize, usize)>,
    scratch: Vec<u32>,
}

impl Grower<'_> {
    fn build_hist_seq(&self, rows: &[u32]) -> Hist {
        let mut h = Hist::zeros(self.layout.total);
        for &r in rows {
            let g = self.resid[r as usize];
            let bins = self.binned.row(r as usize);
            for (&off, &b) in self.layout.offsets.iter().zip(bins) {
                let slot = off + b as usize;
                h.sum[slot] += g;
                h.count[slot] += 1;
            }
        }
        h
    }

    /// Chunks are reduced in a fixed order, so results do not depend on thread count.
    fn build_hist(&self, rows: &[u32]) -> Hist {
        if rows.len() <= HIST_CHUNK {
            return self.build_hist_seq(rows);
        }
        let parts: Vec<Hist> =
            rows.par_chunks(HIST_CHUNK).map(|c| self.build_hist_seq(c)).collect();
        let mut iter = parts.into_iter();
        let mut acc = iter.next().expect("non-empty");
        for p in iter {
            acc.add(&p);
        }
        acc
    }

    fn score(&self, s: f64, c: f64) -> f64 {
        s * s / (c + self.params.lambda)
    }

    fn best_for_feature(&self, h: &Hist, f: usize, s: f64, c: u32) -> Option<SplitCandidate> {
        let off = self.layout.offsets[f];
        let nb = self.layout.n_bins[f];
        if nb < 2 {
            return None;
        }
        let (sm, cm) = (h.sum[off + nb], h.count[off + nb]);
        let min_leaf = self.params.min_samples_leaf as u32;
        let parent = self.score(s, c as f64);
        let mut best: Option<SplitCandidate> = None;
        let (mut sl, mut cl) = (0.0, 0u32);
        for b in 0..nb - 1 {
            sl += h.sum[off + b];
            cl += h.count[off + b];
            let cr = c - cm - cl;
            if cl + cr == 0 {
                continue;
            }
            let sr = s - sm - sl;
            let options: &[bool] = if cm == 0 { &[cl >= cr] } else { &[true, false] };
            for &default_left in options {
                let (sl2, cl2, sr2, cr2) = if default_left {
                    (sl + sm, cl + cm, sr, cr)
                } else {
                    (sl, cl, sr + sm, cr + cm)
                };
                if cl2 < min_leaf || cr2 < min_leaf {
                    continue;
                }
                let gain = self.score(sl2, cl2 as f64) + self.score(sr2, cr2 as f64) - parent;
                if best.is_none_or(|bst| gain > bst.gain) {
                    best = Some(SplitCandidate { gain, feature: f, bin: b, default_left });
                }
            }
        }
        best
    }

    fn best_split(&self, h: &Hist, s: f64, c: u32, ssq: f64) -> Option<SplitCandidate> {
        let n_features = self.layout.offsets.len();
        let per_feature: Vec<Option<SplitCandidate>> = if c as usize >= PAR_SPLIT_ROWS {
            (0..n_features).into_par_iter().map(|f| self.best_for_feature(h, f, s, c)).collect()
        } else {
            (0..n_features).map(|f| self.best_for_feature(h, f, s, c)).collect()
        };
        let floor = self.params.min_split_gain.max(1e-12 * ssq);
        let mut best: Option<SplitCandidate> = None;
        for cand in per_feature.into_iter().flatten() {
            if cand.gain > floor && best.is_none_or(|b| cand.gain > b.gain) {
                best = Some(cand);
            }
        }
        best
    }

    fn push_leaf(&mut self, s: f64, c: usize, start: usize) -> usize {
        let value = s / (c as f64 + self.params.lambda);
        self.leaves.push((value, start, c));
        self.nodes.push(Node::Leaf { value, cover: c as f64 });
        self.nodes.len() - 1
    }

    fn grow(&mut self, rows: &mut [u32], start: usize, hist: Hist, depth: usize) -> usize {
        let c = rows.len();
        let (mut s, mut ssq) = (0.0, 0.0);
        for &r in rows.iter() {
            let g = self.resid[r as usize];
            s += g;
            ssq += g * g;
        }
        if depth >= self.params.max_depth || c < 2 * self.params.min_samples_leaf {
            return self.push_leaf(s, c, start);
        }
        let Some(split) = self.best_split(&hist, s, c as u32, ssq) else {
            return self.push_leaf(s, c, start);
        };

        let f = split.feature;
        let missing_bin = self.layout.n_bins[f];
        let goes_left = |b: usize| if b == missing_bin { split.default_left } else { b <= split.bin };
        self.scratch.clear();
        let mut n_left = 0;
        for i in 0..c {
            let r = rows[i];
            if goes_left(self.binned.row(r as usize)[f] as usize) {
                rows[n_left] = r;
                n_left += 1;
            } else {
                self.scratch.push(r);
            }
        }
        rows[n_left..].copy_from_slice(&self.scratch);

        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0, cover: c as f64 });
        let (lrows, rrows) = rows.split_at_mut(n_left);
        let mut parent = hist;
        let (lh, rh) = if lrows.len() <= rrows.len() {
            let lh = self.build_hist(lrows);
            parent.subtract(&lh);
            (lh, parent)
        } else {
            let rh = self.build_hist(rrows);
            parent.subtract(&rh);
            (parent, rh)
        };
        let left = self.grow(lrows, start, lh, depth + 1);
        let right = self.grow(rrows, start + n_left, rh, depth + 1);
        self.nodes[idx] = Node::Split {
            feature: f,
            threshold: self.layout.cuts[f][split.bin],
            default_left: split.default_left,
            left,
            right,
            cover: c as f64,
        };
        idx
    }
}
