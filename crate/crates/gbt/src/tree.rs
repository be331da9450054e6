use serde::{Deserialize, Serialize};

use crate::error::{GbtError, Result};
use crate::matrix::{is_missing, FeatureMatrix};

/// One node of a regression tree. Covers are training sample counts and act
/// as the background distribution for tree SHAP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf {
        value: f64,
        cover: f64,
    },
    Split {
        feature: usize,
        /// `x < threshold` goes left.
        threshold: f64,
        /// Branch taken by a missing value.
        default_left: bool,
        left: usize,
        right: usize,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match *self {
            Node::Leaf { cover, .. } | Node::Split { cover, .. } => cover,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }
}

/// Binary regression tree, root at index 0. Children always have larger
/// indices than their parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn new(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(GbtError::Malformed("tree has no nodes".into()));
        }
        let mut parents = vec![0usize; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            if !(node.cover() >= 0.0) {
                return Err(GbtError::Malformed(format!("node {i} has invalid cover")));
            }
            match *node {
                Node::Leaf { value, .. } => {
                    if !value.is_finite() {
                        return Err(GbtError::Malformed(format!("leaf {i} value not finite")));
                    }
                }
                Node::Split { threshold, left, right, .. } => {
                    if !threshold.is_finite() {
                        return Err(GbtError::Malformed(format!("node {i} threshold not finite")));
                    }
                    for child in [left, right] {
                        if child <= i || child >= nodes.len() {
                            return Err(GbtError::Malformed(format!(
                                "node {i} has invalid child {child}"
                            )));
                        }
                        parents[child] += 1;
                    }
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err(GbtError::Malformed("nodes do not form a tree".into()));
        }
        Ok(Self { nodes })
    }

    pub fn leaf(value: f64, cover: f64) -> Self {
        Self { nodes: vec![Node::Leaf { value, cover }] }
    }

    pub(crate) fn from_nodes_unchecked(nodes: Vec<Node>) -> Self {
        debug_assert!(Tree::new(nodes.clone()).is_ok());
        Self { nodes }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Index of the child an input follows at split node `node`.
    #[inline]
    pub fn next(&self, node: usize, x: &[f64]) -> Option<usize> {
        match self.nodes[node] {
            Node::Leaf { .. } => None,
            Node::Split { feature, threshold, default_left, left, right, .. } => {
                let v = x[feature];
                let go_left = if is_missing(v) { default_left } else { v < threshold };
                Some(if go_left { left } else { right })
            }
        }
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        while let Some(next) = self.next(i, x) {
            i = next;
        }
        i
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Fractions of a node's cover sent left and right. A node without
    /// cover splits evenly.
    pub fn child_weights(&self, node: usize) -> (f64, f64) {
        match self.nodes[node] {
            Node::Split { left, right, cover, .. } if cover > 0.0 => {
                (self.nodes[left].cover() / cover, self.nodes[right].cover() / cover)
            }
            _ => (0.5, 0.5),
        }
    }

    /// Prediction averaged over the cover distribution, i.e. with every
    /// split resolved by its cover fractions.
    pub fn expected_value(&self) -> f64 {
        let mut e = vec![0.0; self.nodes.len()];
        for i in (0..self.nodes.len()).rev() {
            e[i] = match self.nodes[i] {
                Node::Leaf { value, .. } => value,
                Node::Split { left, right, .. } => {
                    let (wl, wr) = self.child_weights(i);
                    wl * e[left] + wr * e[right]
                }
            };
        }
        e[0]
    }

    /// Longest root-to-leaf path, counted in decisions.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = *node {
                depth[left] = depth[i] + 1;
                depth[right] = depth[i] + 1;
                max = max.max(depth[i] + 1);
            }
        }
        max
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Split { feature, .. } => Some(feature),
                _ => None,
            })
            .max()
    }
}

/// Additive tree ensemble: `base_score + learning_rate * sum_k tree_k(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    pub base_score: f64,
    pub learning_rate: f64,
    pub max_depth: usize,
    feature_names: Vec<String>,
    trees: Vec<Tree>,
}

impl TreeEnsemble {
    pub fn new(
        base_score: f64,
        learning_rate: f64,
        max_depth: usize,
        feature_names: Vec<String>,
        trees: Vec<Tree>,
    ) -> Result<Self> {
        for tree in &trees {
            if let Some(f) = tree.max_feature() {
                if f >= feature_names.len() {
                    return Err(GbtError::FeatureIndex { index: f, n_features: feature_names.len() });
                }
            }
        }
        Ok(Self { base_score, learning_rate, max_depth, feature_names, trees })
    }

    /// Feature names `f0, f1, ...` for anonymous schemas.
    pub fn anonymous_names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub(crate) fn truncate(&mut self, n: usize) {
        self.trees.truncate(n);
    }

    pub fn schema_hash(&self) -> String {
        schema_hash(&self.feature_names)
    }

    pub fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features() {
            return Err(GbtError::SchemaMismatch { expected: self.n_features(), got: x.len() });
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_width(x)?;
        Ok(self.predict_unchecked(x))
    }

    #[inline]
    pub fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let mut acc = self.base_score;
        for tree in &self.trees {
            acc += self.learning_rate * tree.predict(x);
        }
        acc
    }

    pub fn predict_matrix(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        use rayon::prelude::*;
        if x.n_cols() != self.n_features() {
            return Err(GbtError::SchemaMismatch { expected: self.n_features(), got: x.n_cols() });
        }
        Ok((0..x.n_rows()).into_par_iter().map(|i| self.predict_unchecked(x.row(i))).collect())
    }

    /// Mean prediction under the training cover distribution.
    pub fn expected_value(&self) -> f64 {
        self.base_score
            + self.trees.iter().map(|t| self.learning_rate * t.expected_value()).sum::<f64>()
    }
}

/// FNV-1a over the newline-joined feature names, as 16 hex digits.
pub fn schema_hash<S: AsRef<str>>(names: &[S]) -> String {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for (i, name) in names.iter().enumerate() {
        if i > 0 {
            hash ^= u64::from(b'\n');
            hash = hash.wrapping_mul(0x100_0000_01b3);
        }
        for &b in name.as_ref().as_bytes() {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x100_0000_01b3);
        }
    }
    format!("{hash:016x}")
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

pub const MODEL_FORMAT: &str = "tofcal-gbt-model";
pub const MODEL_VERSION: u32 = 1;

/// Struct-of-arrays tree dump. Leaves carry `feature = -1`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDump {
    feature: Vec<i64>,
    threshold: Vec<f64>,
    default_left: Vec<bool>,
    left: Vec<i64>,
    right: Vec<i64>,
    value: Vec<f64>,
    cover: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDump {
    format: String,
    version: u32,
    schema_hash: String,
    feature_names: Vec<String>,
    base_score: f64,
    learning_rate: f64,
    max_depth: usize,
    trees: Vec<TreeDump>,
}

impl From<&Tree> for TreeDump {
    fn from(tree: &Tree) -> Self {
        let n = tree.nodes.len();
        let mut d = TreeDump {
            feature: Vec::with_capacity(n),
            threshold: Vec::with_capacity(n),
            default_left: Vec::with_capacity(n),
            left: Vec::with_capacity(n),
            right: Vec::with_capacity(n),
            value: Vec::with_capacity(n),
            cover: Vec::with_capacity(n),
        };
        for node in &tree.nodes {
            match *node {
                Node::Leaf { value, cover } => {
                    d.feature.push(-1);
                    d.threshold.push(0.0);
                    d.default_left.push(false);
                    d.left.push(-1);
                    d.right.push(-1);
                    d.value.push(value);
                    d.cover.push(cover);
                }
                Node::Split { feature, threshold, default_left, left, right, cover } => {
                    d.feature.push(feature as i64);
                    d.threshold.push(threshold);
                    d.default_left.push(default_left);
                    d.left.push(left as i64);
                    d.right.push(right as i64);
                    d.value.push(0.0);
                    d.cover.push(cover);
                }
            }
        }
        d
    }
}

impl TryFrom<TreeDump> for Tree {
    type Error = GbtError;

    fn try_from(d: TreeDump) -> Result<Self> {
        let n = d.feature.len();
        let lens = [
            d.threshold.len(),
            d.default_left.len(),
            d.left.len(),
            d.right.len(),
            d.value.len(),
            d.cover.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(GbtError::Malformed("tree arrays differ in length".into()));
        }
        let idx = |v: i64| -> Result<usize> {
            usize::try_from(v).map_err(|_| GbtError::Malformed(format!("bad child index {v}")))
        };
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            if d.feature[i] < 0 {
                nodes.push(Node::Leaf { value: d.value[i], cover: d.cover[i] });
            } else {
                nodes.push(Node::Split {
                    feature: d.feature[i] as usize,
                    threshold: d.threshold[i],
                    default_left: d.default_left[i],
                    left: idx(d.left[i])?,
                    right: idx(d.right[i])?,
                    cover: d.cover[i],
                });
            }
        }
        Tree::new(nodes)
    }
}

impl TreeEnsemble {
    pub fn to_json(&self) -> Result<String> {
        let dump = ModelDump {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            schema_hash: self.schema_hash(),
            feature_names: self.feature_names.clone(),
            base_score: self.base_score,
            learning_rate: self.learning_rate,
            max_depth: self.max_depth,
            trees: self.trees.iter().map(TreeDump::from).collect(),
        };
        Ok(serde_json::to_string(&dump)?)
    }

    /// Parses a model dump, verifying format, version and the stored schema hash.
    pub fn from_json(s: &str) -> Result<Self> {
        let dump: ModelDump = serde_json::from_str(s)?;
        if dump.format != MODEL_FORMAT {
            return Err(GbtError::Malformed(format!("unexpected format {:?}", dump.format)));
        }
        if dump.version != MODEL_VERSION {
            return Err(GbtError::Malformed(format!("unsupported version {}", dump.version)));
        }
        let computed = schema_hash(&dump.feature_names);
        if computed != dump.schema_hash {
            return Err(GbtError::SchemaHash { expected: computed, found: dump.schema_hash });
        }
        let trees = dump.trees.into_iter().map(Tree::try_from).collect::<Result<Vec<_>>>()?;
        TreeEnsemble::new(
            dump.base_score,
            dump.learning_rate,
            dump.max_depth,
            dump.feature_names,
            trees,
        )
    }

    /// Like [`TreeEnsemble::from_json`] but also requires the given feature schema.
    pub fn from_json_with_schema<S: AsRef<str>>(s: &str, names: &[S]) -> Result<Self> {
        let model = Self::from_json(s)?;
        let expected = schema_hash(names);
        if model.schema_hash() != expected {
            return Err(GbtError::SchemaHash { expected, found: model.schema_hash() });
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump() -> Tree {
        Tree::new(vec![
            Node::Split {
                feature: 0,
                threshold: 0.0,
                default_left: false,
                left: 1,
                right: 2,
                cover: 4.0,
            },
            Node::Leaf { value: 0.0, cover: 2.0 },
            Node::Leaf { value: 10.0, cover: 2.0 },
        ])
        .unwrap()
    }

    #[test]
    fn routes_by_threshold_and_default() {
        let t = stump();
        assert_eq!(t.predict(&[-1.0]), 0.0);
        assert_eq!(t.predict(&[0.0]), 10.0);
        assert_eq!(t.predict(&[f64::NAN]), 10.0);
        assert_eq!(t.expected_value(), 5.0);
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn rejects_cycles_and_bad_children() {
        let bad = vec![
            Node::Split { feature: 0, threshold: 0.0, default_left: true, left: 1, right: 1, cover: 1.0 },
            Node::Leaf { value: 0.0, cover: 1.0 },
        ];
        assert!(Tree::new(bad).is_err());
        let nan = vec![Node::Leaf { value: f64::NAN, cover: 1.0 }];
        assert!(Tree::new(nan).is_err());
    }

    #[test]
    fn empty_ensemble_predicts_base_score() {
        let m = TreeEnsemble::new(2.0, 0.3, 3, TreeEnsemble::anonymous_names(2), vec![]).unwrap();
        assert_eq!(m.predict(&[1.0, 5.0]).unwrap(), 2.0);
        assert_eq!(m.predict(&[f64::NAN, f64::NAN]).unwrap(), 2.0);
        assert!(matches!(m.predict(&[1.0]), Err(GbtError::SchemaMismatch { expected: 2, got: 1 })));
    }

    #[test]
    fn json_checks_schema() {
        let m = TreeEnsemble::new(1.5, 0.5, 1, vec!["a".into()], vec![stump()]).unwrap();
        let json = m.to_json().unwrap();
        let back = TreeEnsemble::from_json(&json).unwrap();
        assert_eq!(back, m);
        assert!(TreeEnsemble::from_json_with_schema(&json, &["a"]).is_ok());
        assert!(matches!(
            TreeEnsemble::from_json_with_schema(&json, &["b"]),
            Err(GbtError::SchemaHash { .. })
        ));
        let tampered = json.replace(&m.schema_hash(), "0000000000000000");
        assert!(TreeEnsemble::from_json(&tampered).is_err());
    }
}
