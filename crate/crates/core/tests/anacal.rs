use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use tofcal_core::anacal::{
    build_matrix, run_subcalibration_schedule, solve_corrections, solve_iteration, Schedule, Voxelization,
};
use tofcal_core::detsim::{run_campaign, CampaignPlan, SimConfig};
use tofcal_core::event::{Coincidence, Position};
use tofcal_core::geometry::{DetectorKind, N_SIPMS};

fn all_pairs(n_slab: usize, n_oto: usize) -> Vec<(usize, usize)> {
    (0..n_slab).flat_map(|a| (0..n_oto).map(move |b| (a, b))).collect()
}

/// Removes the per-detector mean, the representative the solver reports.
fn gauge(c: &[f64]) -> Vec<f64> {
    let m = c.iter().sum::<f64>() / c.len() as f64;
    c.iter().map(|v| v - m).collect()
}

#[test]
fn noise_free_32_channel_recovery() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let truth: Vec<f64> = (0..32).map(|_| rng.random_range(-300.0..300.0)).collect();
    let m = build_matrix(&all_pairs(16, 16), 16, 16).unwrap();
    let dt = m.apply(&truth);
    let c = solve_corrections(&m, &dt, &vec![1.0; dt.len()]).unwrap();
    let (ts, to) = (gauge(&truth[..16]), gauge(&truth[16..]));
    for k in 0..16 {
        assert!((c.slab_ps[k] - ts[k]).abs() < 1e-9, "slab {k}");
        assert!((c.oto_ps[k] - to[k]).abs() < 1e-9, "oto {k}");
    }
    let offset = truth[..16].iter().sum::<f64>() / 16.0 - truth[16..].iter().sum::<f64>() / 16.0;
    assert!((c.inter_detector_offset_ps - offset).abs() < 1e-9);
    let pred = m.apply(&c.combined());
    for (p, d) in pred.iter().zip(&dt) {
        assert!((p - d).abs() < 1e-9);
    }
}

#[test]
fn duplicate_rows_equal_weighted_rows() {
    let dt = [12.0, -40.0, 7.5, 30.0, -3.0];
    let pairs = [(0, 0), (0, 1), (1, 0), (1, 1), (2, 1)];
    let m = build_matrix(&pairs, 3, 2).unwrap();
    let weighted = solve_corrections(&m, &dt, &[2.0, 1.0, 1.0, 3.0, 1.0]).unwrap();
    let dup_pairs = [(0, 0), (0, 0), (0, 1), (1, 0), (1, 1), (1, 1), (1, 1), (2, 1)];
    let dup_dt = [12.0, 12.0, -40.0, 7.5, 30.0, 30.0, 30.0, -3.0];
    let m2 = build_matrix(&dup_pairs, 3, 2).unwrap();
    let dup = solve_corrections(&m2, &dup_dt, &[1.0; 8]).unwrap();
    for (a, b) in weighted.combined().iter().zip(dup.combined()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn unused_channels_stay_zero() {
    let m = build_matrix(&[(0, 0), (1, 0), (1, 1)], 4, 3).unwrap();
    let c = solve_corrections(&m, &[5.0, -5.0, 2.0], &[1.0; 3]).unwrap();
    assert_eq!(c.slab_active, vec![true, true, false, false]);
    assert_eq!(c.oto_active, vec![true, true, false]);
    assert_eq!((c.slab_ps[2], c.slab_ps[3], c.oto_ps[2]), (0.0, 0.0, 0.0));
    assert!((c.slab_ps[0] + c.slab_ps[1]).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn consistent_data_is_fitted_exactly(
        truth in prop::collection::vec(-500.0f64..500.0, 12),
        keep in prop::collection::vec(any::<bool>(), 36),
        weights in prop::collection::vec(0.1f64..10.0, 36),
    ) {
        // Keep the first row of every slab channel and every oto channel so
        // the bin graph stays connected.
        let pairs: Vec<(usize, usize)> = all_pairs(6, 6)
            .into_iter()
            .enumerate()
            .filter(|(i, (a, b))| keep[*i] || *b == 0 || *a == 0)
            .map(|(_, p)| p)
            .collect();
        let m = build_matrix(&pairs, 6, 6).unwrap();
        let dt = m.apply(&truth);
        let c = solve_corrections(&m, &dt, &weights[..pairs.len()]).unwrap();
        let (ts, to) = (gauge(&truth[..6]), gauge(&truth[6..]));
        for k in 0..6 {
            prop_assert!((c.slab_ps[k] - ts[k]).abs() < 1e-9);
            prop_assert!((c.oto_ps[k] - to[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn gauge_shift_leaves_solution_unchanged(
        truth in prop::collection::vec(-500.0f64..500.0, 8),
        shift in -1000.0f64..1000.0,
    ) {
        let m = build_matrix(&all_pairs(4, 4), 4, 4).unwrap();
        let mut shifted = truth.clone();
        for v in &mut shifted[..4] {
            *v += shift;
        }
        let a = solve_corrections(&m, &m.apply(&truth), &[1.0; 16]).unwrap();
        let b = solve_corrections(&m, &m.apply(&shifted), &[1.0; 16]).unwrap();
        for k in 0..4 {
            prop_assert!((a.slab_ps[k] - b.slab_ps[k]).abs() < 1e-9);
            prop_assert!((a.oto_ps[k] - b.oto_ps[k]).abs() < 1e-9);
        }
        prop_assert!((b.inter_detector_offset_ps - a.inter_detector_offset_ps - shift).abs() < 1e-9);
    }
}

/// Static per-SiPM skews and photon-statistics jitter only; positions are
/// taken from the simulated interaction points.
fn skew_only_dataset(events_per_point: usize) -> (Vec<Coincidence>, SimConfig) {
    let mut cfg = SimConfig::default();
    cfg.skew.timewalk_amplitude_ps = 0.0;
    cfg.skew.rise_jitter_ps = 0.0;
    cfg.skew.doi_timing = false;
    let plan = CampaignPlan {
        z_positions_mm: vec![-60.0, 0.0, 60.0],
        events_per_point,
        performance_events: 0,
        split_fractions: [1.0, 0.0, 0.0],
        ..Default::default()
    };
    let mut data = run_campaign(&plan, &cfg).unwrap().train;
    for c in &mut data {
        let t = c.truth.unwrap();
        let [x, y, d] = t.slab.interaction_mm;
        c.slab.position = Some(Position { x, y, doi: Some(d) });
        let [x, y, _] = t.oto.interaction_mm;
        c.oto.position = Some(Position { x, y, doi: None });
    }
    (data, cfg)
}

#[test]
fn skews_are_recovered_and_labels_preserved() {
    let (mut data, cfg) = skew_only_dataset(2000);
    let consts = tofcal_core::detsim::DetectorConstants::draw(&cfg);
    let cal = run_subcalibration_schedule(&mut data, &Schedule::default()).unwrap();

    let mut se = 0.0;
    for kind in [DetectorKind::Slab, DetectorKind::OneToOne] {
        let est = cal.sipm_skews(kind);
        let truth = gauge(&consts.skews_ps[kind.index()]);
        for k in 0..N_SIPMS {
            se += (est[k] - truth[k]).powi(2);
        }
    }
    let rmse = (se / (2 * N_SIPMS) as f64).sqrt();
    assert!(rmse < 10.0, "skew rmse {rmse}");

    let steps: Vec<f64> = cal.reports.iter().map(|r| r.max_abs_correction_ps).collect();
    // Later iterations only see bin noise, which grows with the channel count.
    assert!(steps[1..].iter().all(|s| *s < 0.5 * steps[0]), "{steps:?}");

    let before = cal.initial_ctr_ps.unwrap();
    let after = cal.reports.last().unwrap().ctr_ps.unwrap();
    assert!(after < 0.8 * before, "{before} -> {after}");

    // After subtracting the exact geometric flight-time difference, every
    // source position is centred on the same constant.
    let mut centres = Vec::new();
    for z in [-60.0, 0.0, 60.0] {
        let r: Vec<f64> = data
            .iter()
            .filter(|c| c.source_mm[2] == z)
            .map(|c| {
                let t = c.truth.unwrap();
                c.delta_t_ps().unwrap() - (t.slab.travel_ps - t.oto.travel_ps)
            })
            .collect();
        let n = r.len() as f64;
        let mean = r.iter().sum::<f64>() / n;
        let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        centres.push((mean, sd / n.sqrt()));
    }
    for w in centres.windows(2) {
        let (a, b) = (w[0], w[1]);
        assert!((a.0 - b.0).abs() < 3.0 * (a.1 * a.1 + b.1 * b.1).sqrt(), "{centres:?}");
    }

    // Re-solving a voxelization on data it already corrected finds little.
    let last = cal.solutions.last().unwrap();
    let again = solve_iteration(&data, &last.voxelization, &Schedule::default().mean, 4).unwrap();
    assert!(again.corrections.max_abs() < 0.2 * last.corrections.max_abs().max(5.0), "{}", again.corrections.max_abs());
}

#[test]
fn sipm_iteration_is_idempotent() {
    let (mut data, _) = skew_only_dataset(600);
    let sipm = Schedule { iterations: vec![Voxelization::Sipm], ..Default::default() };
    let first = run_subcalibration_schedule(&mut data, &sipm).unwrap();
    let second = run_subcalibration_schedule(&mut data, &sipm).unwrap();
    let (a, b) = (first.reports[0].max_abs_correction_ps, second.reports[0].max_abs_correction_ps);
    assert!(b < 0.05 * a, "{a} then {b}");
    assert!(second.reports[0].inter_detector_offset_ps.abs() < 2.0);
}
