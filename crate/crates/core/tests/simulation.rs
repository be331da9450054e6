use proptest::prelude::*;
use tofcal_core::detsim::{run_campaign, saturate, simulate_point, CampaignPlan, DetectorConstants, SimConfig};
use tofcal_core::event::{Coincidence, Position};
use tofcal_core::features::{build_features, process_timestamps};
use tofcal_core::geometry::{compute_label, DetectorKind, SPADS_PER_PIXEL};
use tofcal_core::prep::{
    calibrate_energy, cluster_spans, estimate_energies, find_coincidences, find_photopeak, invert_saturation,
    reconstruct, slab_truth_pairs, total_photons, PrepConfig, SlabPositionModel,
};

fn plan(z: Vec<f64>, events_per_point: usize) -> CampaignPlan {
    CampaignPlan { z_positions_mm: z, events_per_point, performance_events: 0, split_fractions: [1.0, 0.0, 0.0], ..Default::default() }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (m, sd / n.sqrt())
}

#[test]
fn zero_skew_time_difference_follows_the_label() {
    let mut cfg = SimConfig::default();
    cfg.skew.channel_skew_sd_ps = 0.0;
    cfg.skew.timewalk_amplitude_ps = 0.0;
    cfg.skew.doi_timing = false;
    let zs = vec![-100.0, 0.0, 80.0];
    let data = run_campaign(&plan(zs.clone(), 1200), &cfg).unwrap().train;
    let mut offsets = Vec::new();
    for z in zs {
        let at: Vec<&Coincidence> = data.iter().filter(|c| c.source_mm[2] == z).collect();
        let label = compute_label(z, cfg.c_mm_per_ps);
        assert!(at.iter().all(|c| c.label_ps == label));
        // Flight times alone reproduce the label up to the off-axis path difference.
        let flight: Vec<f64> = at.iter().map(|c| c.truth.unwrap().slab.travel_ps - c.truth.unwrap().oto.travel_ps).collect();
        assert!((mean_se(&flight).0 - label).abs() < 2.0, "z {z}");
        let r: Vec<f64> = at.iter().map(|c| c.delta_t_ps().unwrap() - label).collect();
        offsets.push(mean_se(&r));
    }
    // The first-timestamp selection adds one constant for all positions.
    for w in offsets.windows(2) {
        let ((a, sa), (b, sb)) = (w[0], w[1]);
        assert!((a - b).abs() < 3.0 * (sa * sa + sb * sb).sqrt() + 2.0, "{offsets:?}");
    }
}

#[test]
fn injected_skew_shifts_only_its_sipm() {
    let cfg = SimConfig::default();
    let consts = DetectorConstants::draw(&cfg);
    let mut slab = consts.skews_ps[0];
    slab[5] += 50.0;
    let shifted = consts.clone().with_skews(slab, consts.skews_ps[1]);
    let a = simulate_point([0.0; 3], 300, 9, 0, &cfg, &consts);
    let b = simulate_point([0.0; 3], 300, 9, 0, &cfg, &shifted);
    let mut seen = 0;
    for ((_, ca), (_, cb)) in a.iter().zip(&b) {
        assert_eq!(ca.oto, cb.oto);
        let find = |c: &Coincidence, k: u8| c.slab.hits.iter().find(|h| h.sipm == k).copied();
        for k in 0..16u8 {
            match (find(ca, k), find(cb, k)) {
                (Some(x), Some(y)) => {
                    let d = y.timestamp_ps - x.timestamp_ps;
                    let expect = if k == 5 { 50.0 } else { 0.0 };
                    assert!((d - expect).abs() < 1e-6, "sipm {k}: {d}");
                    seen += usize::from(k == 5);
                }
                (None, None) => {}
                _ => panic!("trigger pattern changed"),
            }
        }
    }
    assert!(seen > 10, "{seen}");
}

#[test]
fn photopeak_resolution_matches_configuration() {
    let mut cfg = SimConfig::default();
    cfg.compton_fraction = 0.0;
    cfg.slab.light_collection_sd = 0.0;
    cfg.oto.light_collection_sd = 0.0;
    let data = run_campaign(&plan(vec![0.0], 1600), &cfg).unwrap().train;
    for (kind, res) in [(DetectorKind::Slab, cfg.slab.energy_resolution), (DetectorKind::OneToOne, cfg.oto.energy_resolution)] {
        let totals: Vec<f64> = data.iter().filter_map(|c| total_photons(c.cluster(kind), SPADS_PER_PIXEL).ok()).collect();
        let (mu, sigma) = find_photopeak(&totals).unwrap();
        let fwhm = 2.354_820_045 * sigma / mu;
        assert!((fwhm - res).abs() < 0.1 * res, "{kind:?}: {fwhm} vs {res}");
    }
}

#[test]
fn empty_campaign_and_determinism() {
    let cfg = SimConfig::default();
    let out = run_campaign(&plan(vec![0.0], 0), &cfg).unwrap();
    assert!(out.train.is_empty() && out.validation.is_empty() && out.test.is_empty());

    let p = CampaignPlan { z_positions_mm: vec![-10.0, 10.0], events_per_point: 40, performance_events: 500, ..Default::default() };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let two = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
    let a = one.install(|| run_campaign(&p, &cfg)).unwrap();
    let b = two.install(|| run_campaign(&p, &cfg)).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.validation, b.validation);
    assert_eq!(a.test, b.test);
    assert_eq!(a.performance, b.performance);
}

#[test]
fn reconstruction_keeps_labels_and_features_are_well_formed() {
    let cfg = SimConfig::default();
    let data = run_campaign(&plan(vec![-50.0, 30.0], 300), &cfg).unwrap().train;
    let (recon, stats) = reconstruct(&data, &PrepConfig::default()).unwrap();
    assert_eq!(stats.records, data.len());
    assert_eq!(stats.pairs, data.len(), "isolated events pair one to one");
    assert_eq!(stats.kept + stats.noise_rejected + stats.saturated, stats.pairs);
    for c in &recon {
        assert_eq!(c.label_ps, compute_label(c.source_mm[2], cfg.c_mm_per_ps));
        assert!(c.truth.is_some());
        for kind in [DetectorKind::Slab, DetectorKind::OneToOne] {
            let t = process_timestamps(c.cluster(kind)).unwrap();
            let present: Vec<f64> = t.iter().copied().filter(|v| !v.is_nan()).collect();
            assert!(present.iter().all(|v| *v >= 0.0));
            assert!(present.windows(2).all(|w| w[0] <= w[1]));
            let cap = kind.timestamp_cap();
            assert_eq!(t.len(), cap.min(c.cluster(kind).hits.len()));
        }
    }
}

#[test]
fn slab_positions_and_energy_scale() {
    let cfg = SimConfig::default();
    let p = CampaignPlan { events_per_point: 60, ..Default::default() };
    let out = run_campaign(&p, &cfg).unwrap();
    let prep = PrepConfig::default();
    let (mut train, _) = reconstruct(&out.train, &prep).unwrap();
    let (test, _) = reconstruct(&out.test, &prep).unwrap();
    let (valid, _) = reconstruct(&out.validation, &prep).unwrap();
    let params = tofcal_gbt::HyperParams { max_depth: 8, n_estimators: 200, learning_rate: 0.1, ..Default::default() };
    let tv = slab_truth_pairs(&valid).unwrap();
    let model = SlabPositionModel::train(&slab_truth_pairs(&train).unwrap(), &tv[..tv.len().min(4000)], &params).unwrap();

    let (mut se_xy, mut se_doi, mut n) = (0.0, 0.0, 0.0);
    for (c, t) in slab_truth_pairs(&test).unwrap() {
        let pos = model.predict(c).unwrap();
        se_xy += (pos.y - t[1]).powi(2);
        se_doi += (pos.doi.unwrap() - t[2]).powi(2);
        n += 1.0;
    }
    let (rmse_planar, rmse_doi) = ((se_xy / n).sqrt(), (se_doi / n).sqrt());
    assert!(rmse_planar <= 2.5, "planar rmse {rmse_planar}");
    assert!(rmse_doi <= 3.3, "doi rmse {rmse_doi}");

    // Energy scale from truth positions: photopeak deposits land on 511 keV.
    for c in &mut train {
        let t = c.truth.unwrap();
        let [x, y, d] = t.slab.interaction_mm;
        c.slab.position = Some(Position { x, y, doi: Some(d) });
        let [x, y, _] = t.oto.interaction_mm;
        c.oto.position = Some(Position { x, y, doi: None });
    }
    let clusters = train.iter().flat_map(|c| [&c.slab, &c.oto]);
    let cal = calibrate_energy(clusters, [4, 4, 2], [8, 8], 100).unwrap();
    estimate_energies(&mut train, &cal).unwrap();
    for kind in [DetectorKind::Slab, DetectorKind::OneToOne] {
        let e: Vec<f64> = train
            .iter()
            .map(|c| (c.truth.unwrap(), c.cluster(kind)))
            .filter(|(t, _)| {
                let side = if kind == DetectorKind::Slab { t.slab } else { t.oto };
                side.energy_kev > 450.0
            })
            .map(|(_, c)| c.energy_kev.unwrap())
            .collect();
        let (peak, _) = find_photopeak(&e).unwrap();
        assert!((peak - 511.0).abs() < 0.01 * 511.0, "{kind:?} photopeak at {peak} keV");
    }
}

#[test]
fn features_build_for_reconstructed_events() {
    let cfg = SimConfig::default();
    let data = run_campaign(&plan(vec![0.0], 50), &cfg).unwrap().train;
    let (mut recon, _) = reconstruct(&data, &PrepConfig::default()).unwrap();
    for c in &mut recon {
        c.slab.position = Some(Position { x: 0.0, y: 0.0, doi: Some(5.0) });
        c.oto.position = Some(Position { x: 0.0, y: 0.0, doi: None });
        c.slab.energy_kev = Some(500.0);
        c.oto.energy_kev = Some(500.0);
        let f = build_features(c).unwrap();
        assert_eq!(f.len(), tofcal_core::features::feature_names().len());
        assert_eq!(f[0], c.delta_t_ps().unwrap());
        // Timestamp slots: 4 slab from index 1, 3 one-to-one from index 31.
        for (kind, start) in [(DetectorKind::Slab, 1), (DetectorKind::OneToOne, 31)] {
            let cap = kind.timestamp_cap();
            let missing = f[start..start + cap].iter().filter(|v| v.is_nan()).count();
            assert_eq!(missing, cap.saturating_sub(c.cluster(kind).hits.len()));
        }
    }
}

proptest! {
    #[test]
    fn saturation_inverts_exactly(n in 0.0f64..3199.0) {
        let fired = saturate(n, SPADS_PER_PIXEL);
        let back = invert_saturation(fired, SPADS_PER_PIXEL).unwrap();
        prop_assert!((back - n).abs() <= 1e-9 * n.max(1.0));
    }

    #[test]
    fn clustering_partitions_the_stream(
        mut ts in prop::collection::vec(0.0f64..1e6, 0..200),
        window in 1.0f64..50_000.0,
    ) {
        ts.sort_by(f64::total_cmp);
        let spans = cluster_spans(&ts, window).unwrap();
        let mut next = 0;
        for s in &spans {
            prop_assert_eq!(s.start, next);
            prop_assert!(s.end > s.start);
            prop_assert!(ts[s.end - 1] - ts[s.start] <= window);
            next = s.end;
        }
        prop_assert_eq!(next, ts.len());
    }

    #[test]
    fn coincidence_pairing_is_role_symmetric(
        mut a in prop::collection::vec(0.0f64..1e5, 0..60),
        mut b in prop::collection::vec(0.0f64..1e5, 0..60),
        window in 10.0f64..5000.0,
    ) {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let ab = find_coincidences(&a, &b, window);
        let mut ba: Vec<(usize, usize)> = find_coincidences(&b, &a, window).into_iter().map(|(j, i)| (i, j)).collect();
        ba.sort_unstable();
        prop_assert_eq!(&ab, &ba);
        for &(i, j) in &ab {
            prop_assert!((a[i] - b[j]).abs() <= window);
        }
    }

    #[test]
    fn label_is_odd(z in -200.0f64..200.0) {
        let c = tofcal_core::geometry::SPEED_OF_LIGHT_MM_PER_PS;
        prop_assert_eq!(compute_label(-z, c), -compute_label(z, c));
    }
}
