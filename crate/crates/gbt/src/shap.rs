//! Path-dependent tree SHAP.
//!
//! For a leaf `l` the cover-conditional expectation is multilinear:
//! `E[f | x_S] = sum_l v_l prod_i (i in S ? p_i : q_i)`, where `p_i` says
//! whether `x` satisfies every split on feature `i` along the path and `q_i`
//! is the product of the cover fractions of those splits. The Shapley value
//! of feature `i` then is
//! `sum_l v_l (p_i - q_i) int_0^1 prod_{j != i} (q_j (1 - t) + p_j t) dt`.
//! The integrand is a polynomial of degree below the tree depth, so a
//! Gauss-Legendre rule with `ceil(depth / 2)` nodes is exact. One depth-first
//! pass carries the path product at the quadrature nodes and sums leaf
//! contributions bottom-up, which costs O(nodes * depth) per tree.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GbtError, Result};
use crate::matrix::FeatureMatrix;
use crate::tree::{Node, Tree, TreeEnsemble};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapExplanation {
    pub base_value: f64,
    pub sv: Vec<f64>,
    pub feature_values: Vec<f64>,
}

impl ShapExplanation {
    /// `base_value + sum(sv)`, which equals the model prediction.
    pub fn reconstructed(&self) -> f64 {
        self.base_value + self.sv.iter().sum::<f64>()
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

struct PreparedTree<'m> {
    tree: &'m Tree,
    depth: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Per node: cover fractions of the left and right child.
    child_w: Vec<(f64, f64)>,
}

/// Explainer with per-tree quadrature rules precomputed.
pub struct TreeExplainer<'m> {
    model: &'m TreeEnsemble,
    trees: Vec<PreparedTree<'m>>,
    base_value: f64,
}

impl<'m> TreeExplainer<'m> {
    pub fn new(model: &'m TreeEnsemble) -> Self {
        let trees = model
            .trees()
            .iter()
            .map(|tree| {
                let depth = tree.depth();
                let (nodes, weights) = gauss_legendre(depth.div_ceil(2).max(1));
                let child_w = (0..tree.nodes().len()).map(|i| tree.child_weights(i)).collect();
                PreparedTree { tree, depth, nodes, weights, child_w }
            })
            .collect();
        Self { model, trees, base_value: model.expected_value() }
    }

    pub fn base_value(&self) -> f64 {
        self.base_value
    }

    pub fn explain(&self, x: &[f64]) -> Result<ShapExplanation> {
        self.model.check_width(x)?;
        let m = self.model.n_features();
        let mut sv = vec![0.0; m];
        let mut tree_sv = vec![0.0; m];
        let mut work = Workspace::default();
        for pt in &self.trees {
            tree_sv.iter_mut().for_each(|v| *v = 0.0);
            explain_tree(pt, x, &mut tree_sv, &mut work);
            for (a, b) in sv.iter_mut().zip(&tree_sv) {
                *a += self.model.learning_rate * b;
            }
        }
        Ok(ShapExplanation { base_value: self.base_value, sv, feature_values: x.to_vec() })
    }

    pub fn explain_matrix(&self, x: &FeatureMatrix) -> Result<Vec<ShapExplanation>> {
        if x.n_cols() != self.model.n_features() {
            return Err(GbtError::SchemaMismatch {
                expected: self.model.n_features(),
                got: x.n_cols(),
            });
        }
        (0..x.n_rows()).into_par_iter().map(|i| self.explain(x.row(i))).collect()
    }
}

/// Shapley values of one prediction.
pub fn shap_values(model: &TreeEnsemble, x: &[f64]) -> Result<ShapExplanation> {
    TreeExplainer::new(model).explain(x)
}

#[derive(Default)]
struct Workspace {
    /// Path product at each depth, `k` values per level.
    path: Vec<f64>,
    /// Subtree sums at each depth.
    sub: Vec<f64>,
    /// Saved accumulator of the split feature at each depth.
    saved: Vec<f64>,
    /// Per feature: sum of subtree sums of the nearest splits on it below
    /// the current edge.
    acc: Vec<f64>,
    /// Per feature: combined (p, q) on the current path, if it appears.
    active: Vec<Option<(f64, f64)>>,
}

struct Walk<'a> {
    pt: &'a PreparedTree<'a>,
    x: &'a [f64],
    k: usize,
    w: &'a mut Workspace,
    phi: &'a mut [f64],
}

fn explain_tree(pt: &PreparedTree<'_>, x: &[f64], phi: &mut [f64], w: &mut Workspace) {
    if pt.depth == 0 {
        return;
    }
    let k = pt.nodes.len();
    let levels = pt.depth + 1;
    let m = x.len();
    w.path.clear();
    w.path.resize(levels * k, 0.0);
    w.sub.clear();
    w.sub.resize(levels * k, 0.0);
    w.saved.clear();
    w.saved.resize(levels * k, 0.0);
    w.acc.clear();
    w.acc.resize(m * k, 0.0);
    w.active.clear();
    w.active.resize(m, None);
    w.path[..k].iter_mut().for_each(|v| *v = 1.0);
    let mut walk = Walk { pt, x, k, w, phi };
    walk.visit(0, 0);
}

#[inline]
fn factor(p: f64, q: f64, t: f64) -> f64 {
    q * (1.0 - t) + p * t
}

impl Walk<'_> {
    fn visit(&mut self, u: usize, d: usize) {
        let k = self.k;
        let tree = self.pt.tree;
        let (feature, left, right) = match tree.nodes()[u] {
            Node::Leaf { value, .. } => {
                let (path, sub) = (&self.w.path[d * k..(d + 1) * k], &mut self.w.sub[d * k..(d + 1) * k]);
                for (s, p) in sub.iter_mut().zip(path) {
                    *s = value * p;
                }
                return;
            }
            Node::Split { feature, left, right, .. } => (feature, left, right),
        };
        let hot = tree.next(u, self.x).expect("split node");
        let (wl, wr) = self.pt.child_w[u];
        let old = self.w.active[feature];
        let (p_old, q_old) = old.unwrap_or((1.0, 1.0));
        let old_vanishes = p_old == 0.0 && q_old == 0.0;

        self.w.sub[d * k..(d + 1) * k].iter_mut().for_each(|v| *v = 0.0);
        let acc_range = feature * k..(feature + 1) * k;
        let saved_range = d * k..(d + 1) * k;
        for (child, wc) in [(left, wl), (right, wr)] {
            let pe = if child == hot { p_old } else { 0.0 };
            let qe = q_old * wc;
            self.w.active[feature] = Some((pe, qe));

            if old_vanishes {
                self.recompute_path(d + 1);
            } else {
                for j in 0..k {
                    let t = self.pt.nodes[j];
                    let f_old = if old.is_some() { factor(p_old, q_old, t) } else { 1.0 };
                    self.w.path[(d + 1) * k + j] = self.w.path[d * k + j] / f_old * factor(pe, qe, t);
                }
            }

            for j in 0..k {
                self.w.saved[saved_range.start + j] = self.w.acc[acc_range.start + j];
                self.w.acc[acc_range.start + j] = 0.0;
            }
            self.visit(child, d + 1);

            if pe != qe {
                let mut integral = 0.0;
                for j in 0..k {
                    let t = self.pt.nodes[j];
                    let own = self.w.sub[(d + 1) * k + j] - self.w.acc[acc_range.start + j];
                    integral += self.pt.weights[j] * own / factor(pe, qe, t);
                }
                self.phi[feature] += (pe - qe) * integral;
            }
            for j in 0..k {
                self.w.sub[d * k + j] += self.w.sub[(d + 1) * k + j];
                self.w.acc[acc_range.start + j] = self.w.saved[saved_range.start + j];
            }
        }
        self.w.active[feature] = old;
        for j in 0..k {
            self.w.acc[acc_range.start + j] += self.w.sub[d * k + j];
        }
    }

    /// Rebuilds the path product from the active factors. Only needed when a
    /// factor vanishes and cannot be divided out.
    fn recompute_path(&mut self, d: usize) {
        let k = self.k;
        for j in 0..k {
            let t = self.pt.nodes[j];
            let mut prod = 1.0;
            for &(p, q) in self.w.active.iter().flatten() {
                prod *= factor(p, q, t);
            }
            self.w.path[d * k + j] = prod;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_integrates_polynomials_exactly() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = 1.0 / (deg as f64 + 1.0);
                assert!((approx - exact).abs() < 1e-14, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn stump_example() {
        let tree = Tree::new(vec![
            Node::Split { feature: 0, threshold: 0.0, default_left: true, left: 1, right: 2, cover: 2.0 },
            Node::Leaf { value: 0.0, cover: 1.0 },
            Node::Leaf { value: 10.0, cover: 1.0 },
        ])
        .unwrap();
        let m = TreeEnsemble::new(0.0, 1.0, 1, TreeEnsemble::anonymous_names(2), vec![tree]).unwrap();
        let e = shap_values(&m, &[1.0, 7.0]).unwrap();
        assert_eq!(e.base_value, 5.0);
        assert!((e.sv[0] - 5.0).abs() < 1e-12);
        assert_eq!(e.sv[1], 0.0);
    }

    #[test]
    fn constant_model_has_zero_attributions() {
        let m = TreeEnsemble::new(3.0, 0.5, 2, TreeEnsemble::anonymous_names(3), vec![Tree::leaf(4.0, 10.0)])
            .unwrap();
        let e = shap_values(&m, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(e.sv, vec![0.0; 3]);
        assert_eq!(e.base_value, 5.0);
    }

    #[test]
    fn zero_cover_branch_is_handled() {
        let tree = Tree::new(vec![
            Node::Split { feature: 0, threshold: 0.0, default_left: true, left: 1, right: 2, cover: 4.0 },
            Node::Split { feature: 0, threshold: -1.0, default_left: true, left: 3, right: 4, cover: 0.0 },
            Node::Leaf { value: 2.0, cover: 4.0 },
            Node::Leaf { value: 5.0, cover: 0.0 },
            Node::Leaf { value: 7.0, cover: 0.0 },
        ])
        .unwrap();
        let m = TreeEnsemble::new(0.0, 1.0, 2, TreeEnsemble::anonymous_names(1), vec![tree]).unwrap();
        for x in [-2.0, -0.5, 1.0] {
            let e = shap_values(&m, &[x]).unwrap();
            assert!(e.sv.iter().all(|v| v.is_finite()));
            assert!((e.reconstructed() - m.predict(&[x]).unwrap()).abs() < 1e-12);
        }
    }
}
