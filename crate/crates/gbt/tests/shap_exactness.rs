use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tofcal_gbt::{
    shap_values, train, BinningParams, FeatureMatrix, HyperParams, Node, Samples, Tree,
    TreeEnsemble, TreeExplainer,
};

/// Cover-conditional expectation with the features in `mask` fixed to `x`.
fn cond_expectation(tree: &Tree, x: &[f64], mask: u32, node: usize) -> f64 {
    match tree.nodes()[node] {
        Node::Leaf { value, .. } => value,
        Node::Split { feature, left, right, .. } => {
            if mask & (1 << feature) != 0 {
                cond_expectation(tree, x, mask, tree.next(node, x).unwrap())
            } else {
                let (wl, wr) = tree.child_weights(node);
                wl * cond_expectation(tree, x, mask, left)
                    + wr * cond_expectation(tree, x, mask, right)
            }
        }
    }
}

/// Shapley values by enumerating every feature subset.
fn brute_force(model: &TreeEnsemble, x: &[f64]) -> Vec<f64> {
    let m = model.n_features();
    let value: Vec<f64> = (0..1u32 << m)
        .map(|mask| {
            model.base_score
                + model
                    .trees()
                    .iter()
                    .map(|t| model.learning_rate * cond_expectation(t, x, mask, 0))
                    .sum::<f64>()
        })
        .collect();
    let fact: Vec<f64> = (0..=m).scan(1.0, |acc, k| {
        if k > 0 {
            *acc *= k as f64;
        }
        Some(*acc)
    })
    .collect();
    (0..m)
        .map(|i| {
            let mut phi = 0.0;
            for mask in 0..1u32 << m {
                if mask & (1 << i) != 0 {
                    continue;
                }
                let s = mask.count_ones() as usize;
                let w = fact[s] * fact[m - s - 1] / fact[m];
                phi += w * (value[(mask | (1 << i)) as usize] - value[mask as usize]);
            }
            phi
        })
        .collect()
}

fn random_tree(rng: &mut ChaCha8Rng, n_features: usize, max_depth: usize, zero_covers: bool) -> Tree {
    fn build(
        rng: &mut ChaCha8Rng,
        nodes: &mut Vec<Node>,
        n_features: usize,
        depth_left: usize,
        zero_covers: bool,
    ) -> usize {
        let idx = nodes.len();
        if depth_left == 0 || rng.random_bool(0.2) {
            let cover = if zero_covers && rng.random_bool(0.15) {
                0.0
            } else {
                rng.random_range(1..100) as f64
            };
            nodes.push(Node::Leaf { value: rng.random_range(-50.0..50.0), cover });
            return idx;
        }
        nodes.push(Node::Leaf { value: 0.0, cover: 0.0 });
        let left = build(rng, nodes, n_features, depth_left - 1, zero_covers);
        let right = build(rng, nodes, n_features, depth_left - 1, zero_covers);
        nodes[idx] = Node::Split {
            feature: rng.random_range(0..n_features),
            threshold: rng.random_range(-1.0..1.0),
            default_left: rng.random_bool(0.5),
            left,
            right,
            cover: nodes[left].cover() + nodes[right].cover(),
        };
        idx
    }
    let mut nodes = Vec::new();
    build(rng, &mut nodes, n_features, max_depth, zero_covers);
    Tree::new(nodes).unwrap()
}

fn random_input(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..m)
        .map(|_| if rng.random_bool(0.1) { f64::NAN } else { rng.random_range(-1.2..1.2) })
        .collect()
}

fn check(model: &TreeEnsemble, x: &[f64], tol: f64) {
    let fast = shap_values(model, x).unwrap();
    let slow = brute_force(model, x);
    for (i, (a, b)) in fast.sv.iter().zip(&slow).enumerate() {
        assert!((a - b).abs() <= tol, "feature {i}: tree shap {a} vs enumeration {b}");
    }
    let pred = model.predict(x).unwrap();
    assert!((fast.reconstructed() - pred).abs() <= tol);
}

#[test]
fn matches_enumeration_on_shallow_random_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let m = rng.random_range(1..=12);
        let tree = random_tree(&mut rng, m, 3, false);
        let model = TreeEnsemble::new(0.0, 1.0, 3, TreeEnsemble::anonymous_names(m), vec![tree]).unwrap();
        let x = random_input(&mut rng, m);
        check(&model, &x, 1e-9);
    }
}

#[test]
fn matches_enumeration_on_deep_trees_with_repeated_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..60 {
        let m = rng.random_range(1..=6);
        let trees = (0..3).map(|_| random_tree(&mut rng, m, 8, false)).collect();
        let model = TreeEnsemble::new(1.5, 0.3, 8, TreeEnsemble::anonymous_names(m), trees).unwrap();
        for _ in 0..3 {
            let x = random_input(&mut rng, m);
            check(&model, &x, 1e-9);
        }
    }
}

#[test]
fn matches_enumeration_with_empty_branches() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let m = rng.random_range(1..=5);
        let tree = random_tree(&mut rng, m, 5, true);
        let model = TreeEnsemble::new(0.0, 1.0, 5, TreeEnsemble::anonymous_names(m), vec![tree]).unwrap();
        let x = random_input(&mut rng, m);
        check(&model, &x, 1e-9);
    }
}

#[test]
fn trained_model_is_locally_accurate() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let m = 8;
    let mut x = FeatureMatrix::new(m);
    let mut y = Vec::new();
    for _ in 0..3000 {
        let row = random_input(&mut rng, m);
        let v = row.iter().map(|v| if v.is_nan() { 0.3 } else { v.sin() }).sum::<f64>()
            + 40.0 * row[0].max(0.0)
            + rng.random_range(-0.1..0.1);
        x.push_row(&row);
        y.push(v);
    }
    let params = HyperParams { max_depth: 12, n_estimators: 40, learning_rate: 0.3, early_stopping_rounds: None, ..Default::default() };
    let (model, _) = train(
        TreeEnsemble::anonymous_names(m),
        Samples::new(&x, &y).unwrap(),
        None,
        BinningParams::default(),
        &params,
    )
    .unwrap();
    let explainer = TreeExplainer::new(&model);
    for i in 0..x.n_rows() {
        let e = explainer.explain(x.row(i)).unwrap();
        let pred = model.predict(x.row(i)).unwrap();
        assert!((e.reconstructed() - pred).abs() < 1e-9, "row {i}");
    }
}

#[test]
fn consistency_under_stronger_contrast() {
    let stump = |hi: f64| {
        Tree::new(vec![
            Node::Split { feature: 0, threshold: 0.0, default_left: true, left: 1, right: 2, cover: 10.0 },
            Node::Leaf { value: 0.0, cover: 5.0 },
            Node::Leaf { value: hi, cover: 5.0 },
        ])
        .unwrap()
    };
    let other = Tree::new(vec![
        Node::Split { feature: 1, threshold: 0.0, default_left: true, left: 1, right: 2, cover: 10.0 },
        Node::Leaf { value: -3.0, cover: 4.0 },
        Node::Leaf { value: 3.0, cover: 6.0 },
    ])
    .unwrap();
    let names = TreeEnsemble::anonymous_names(2);
    let weak = TreeEnsemble::new(0.0, 1.0, 1, names.clone(), vec![stump(2.0), other.clone()]).unwrap();
    let strong = TreeEnsemble::new(0.0, 1.0, 1, names, vec![stump(8.0), other]).unwrap();
    for x in [[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]] {
        let a = shap_values(&weak, &x).unwrap().sv[0].abs();
        let b = shap_values(&strong, &x).unwrap().sv[0].abs();
        assert!(b >= a);
    }
}
