use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tofcal_gbt::{
    grid_search, train, BinningParams, FeatureMatrix, GridSpec, HyperParams, Prepared, Samples,
    TreeEnsemble,
};

fn noisy_data(seed: u64, n: usize, m: usize) -> (FeatureMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = FeatureMatrix::new(m);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..m)
            .map(|_| if rng.random_bool(0.05) { f64::NAN } else { rng.random_range(-2.0..2.0) })
            .collect();
        let signal = if row[0].is_nan() { 1.0 } else { 3.0 * row[0] } + if row[1 % m].is_nan() { 0.0 } else { row[1 % m].abs() };
        y.push(signal + rng.random_range(-1.0..1.0));
        x.push_row(&row);
    }
    (x, y)
}

fn no_early(depth: usize, lr: f64, n: usize) -> HyperParams {
    HyperParams { max_depth: depth, learning_rate: lr, n_estimators: n, early_stopping_rounds: None, ..Default::default() }
}

#[test]
fn zero_trees_predict_label_mean() {
    let x = FeatureMatrix::from_rows(1, &[[0.0], [1.0], [2.0]]);
    let y = [1.0, 2.0, 3.0];
    let (m, _) = train(
        vec!["a".into()],
        Samples::new(&x, &y).unwrap(),
        None,
        BinningParams::default(),
        &no_early(3, 0.3, 0),
    )
    .unwrap();
    assert_eq!(m.n_trees(), 0);
    for v in [-5.0, 1.0, f64::NAN] {
        assert_eq!(m.predict(&[v]).unwrap(), 2.0);
    }
}

#[test]
fn step_function_fits_within_five_trees() {
    let n = 1000;
    let mut x = FeatureMatrix::new(1);
    let mut y = Vec::new();
    for i in 0..n {
        let v = (i as f64 - 500.0) / 100.0;
        x.push_row(&[v]);
        y.push(if v >= 0.0 { 1.0 } else { 0.0 });
    }
    let params = HyperParams { min_samples_leaf: 1, ..no_early(1, 0.5, 5) };
    let (_, log) =
        train(vec!["x".into()], Samples::new(&x, &y).unwrap(), None, BinningParams { max_bins: 256, exact: true }, &params)
            .unwrap();
    let rmse = log.iterations.last().unwrap().train_mse.sqrt();
    // Each half-step shrinks the residual by half: 0.5 * 2^-5.
    assert!(rmse <= 0.5 / 32.0 + 1e-12, "{rmse}");
}

#[test]
fn early_stopping_truncates_at_validation_minimum() {
    let (x, y) = noisy_data(1, 800, 4);
    let (vx, vy) = noisy_data(2, 300, 4);
    let params = HyperParams { max_depth: 10, learning_rate: 0.5, min_samples_leaf: 2, ..Default::default() };
    let (m, log) = train(
        TreeEnsemble::anonymous_names(4),
        Samples::new(&x, &y).unwrap(),
        Some(Samples::new(&vx, &vy).unwrap()),
        BinningParams::default(),
        &params,
    )
    .unwrap();
    assert!(log.stopped_early);
    let losses: Vec<f64> = log.iterations.iter().map(|r| r.valid_mse.unwrap()).collect();
    let argmin = (0..losses.len()).min_by(|&a, &b| losses[a].total_cmp(&losses[b])).unwrap();
    assert_eq!(log.best_n_trees, argmin);
    assert_eq!(m.n_trees(), argmin);
    assert_eq!(log.iterations.len() - 1, argmin + 10);
    let pred: Vec<f64> = m.predict_matrix(&vx).unwrap();
    let mse = pred.iter().zip(&vy).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / vy.len() as f64;
    assert!((mse - losses[argmin]).abs() < 1e-9 * mse);
}

#[test]
fn empty_validation_disables_early_stopping() {
    let (x, y) = noisy_data(3, 200, 2);
    let vx = FeatureMatrix::new(2);
    let (m, log) = train(
        TreeEnsemble::anonymous_names(2),
        Samples::new(&x, &y).unwrap(),
        Some(Samples::new(&vx, &[]).unwrap()),
        BinningParams::default(),
        &HyperParams { n_estimators: 30, ..Default::default() },
    )
    .unwrap();
    assert_eq!(m.n_trees(), 30);
    assert_eq!(log.warnings.len(), 1);
}

#[test]
fn grid_has_twelve_models_and_is_deterministic() {
    let (x, y) = noisy_data(4, 600, 3);
    let (vx, vy) = noisy_data(5, 200, 3);
    let prep = Prepared::new(
        TreeEnsemble::anonymous_names(3),
        Samples::new(&x, &y).unwrap(),
        Some(Samples::new(&vx, &vy).unwrap()),
        BinningParams::default(),
    )
    .unwrap();
    let spec = GridSpec { base: HyperParams { n_estimators: 40, ..Default::default() }, ..Default::default() };
    let a = grid_search(&prep, &spec).unwrap();
    let b = grid_search(&prep, &spec).unwrap();
    assert_eq!(a.entries.len(), 12);
    assert_eq!(a.best_model().to_json().unwrap(), b.best_model().to_json().unwrap());
    let best = &a.entries[a.best];
    assert!(a.entries.iter().all(|e| e.valid_mse >= best.valid_mse));
}

#[test]
fn grid_ties_prefer_shallow_then_slow() {
    // A constant target makes every configuration equally good.
    let x = FeatureMatrix::from_rows(1, &(0..100).map(|i| [i as f64]).collect::<Vec<_>>());
    let y = vec![4.0; 100];
    let prep = Prepared::new(
        vec!["a".into()],
        Samples::new(&x, &y).unwrap(),
        Some(Samples::new(&x, &y).unwrap()),
        BinningParams::default(),
    )
    .unwrap();
    let r = grid_search(&prep, &GridSpec::default()).unwrap();
    assert_eq!((r.entries[r.best].max_depth, r.entries[r.best].learning_rate), (12, 0.1));
}

#[test]
fn serialization_round_trip_is_bit_exact() {
    let (x, y) = noisy_data(6, 1500, 5);
    let (m, _) = train(
        TreeEnsemble::anonymous_names(5),
        Samples::new(&x, &y).unwrap(),
        None,
        BinningParams::default(),
        &no_early(8, 0.3, 30),
    )
    .unwrap();
    let back = TreeEnsemble::from_json(&m.to_json().unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let row: Vec<f64> = (0..5)
            .map(|_| if rng.random_bool(0.1) { f64::NAN } else { rng.random_range(-3.0..3.0) })
            .collect();
        assert_eq!(m.predict(&row).unwrap().to_bits(), back.predict(&row).unwrap().to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn train_loss_is_non_increasing(seed in 0u64..1000, depth in 1usize..8, lr in 0.05f64..1.0) {
        let (x, y) = noisy_data(seed, 300, 3);
        let (_, log) = train(
            TreeEnsemble::anonymous_names(3),
            Samples::new(&x, &y).unwrap(),
            None,
            BinningParams::default(),
            &HyperParams { min_samples_leaf: 5, ..no_early(depth, lr, 15) },
        ).unwrap();
        for w in log.iterations.windows(2) {
            prop_assert!(w[1].train_mse <= w[0].train_mse * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_learning_rate_gives_constant_model(seed in 0u64..1000) {
        let (x, y) = noisy_data(seed, 200, 3);
        let (m, _) = train(
            TreeEnsemble::anonymous_names(3),
            Samples::new(&x, &y).unwrap(),
            None,
            BinningParams::default(),
            &no_early(4, 0.0, 5),
        ).unwrap();
        let pred = m.predict_matrix(&x).unwrap();
        prop_assert!(pred.iter().all(|p| *p == m.base_score));
    }

    #[test]
    fn prediction_is_sum_of_traversed_leaves(seed in 0u64..1000) {
        let (x, y) = noisy_data(seed, 300, 4);
        let (m, _) = train(
            TreeEnsemble::anonymous_names(4),
            Samples::new(&x, &y).unwrap(),
            None,
            BinningParams::default(),
            &no_early(5, 0.3, 8),
        ).unwrap();
        for row in x.rows().take(50) {
            let mut acc = m.base_score;
            for t in m.trees() {
                acc += m.learning_rate * t.predict(row);
            }
            prop_assert_eq!(acc, m.predict(row).unwrap());
        }
    }
}
