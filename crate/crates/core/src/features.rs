//! Feature vectors for the residual regressor.
//!
//! Layout: `dt_meas`, then the slab side (4 timestamps, their SiPM ids,
//! spread, hit count, 4 pixel counts per used SiPM, energy, x, y, doi), then
//! the one-to-one side (3 timestamps and the same fields with x, y only).
//! Absent entries are `NaN`.

use tofcal_gbt::{FeatureGroup, MISSING};

use crate::error::{CoreError, Result};
use crate::event::{Cluster, Coincidence};
use crate::geometry::DetectorKind;

pub const N_FEATURES: usize = 54;

/// Timestamps relative to the cluster's first one, at most `cap` of them.
pub fn process_timestamps(cluster: &Cluster) -> Result<Vec<f64>> {
    let t0 = cluster.first_timestamp()?;
    let cap = cluster.detector.timestamp_cap();
    Ok(cluster.hits.iter().take(cap).map(|h| h.timestamp_ps - t0).collect())
}

fn side_prefix(kind: DetectorKind) -> &'static str {
    match kind {
        DetectorKind::Slab => "s",
        DetectorKind::OneToOne => "o",
    }
}

fn side_names(kind: DetectorKind, names: &mut Vec<String>) {
    let s = side_prefix(kind);
    let cap = kind.timestamp_cap();
    names.extend((0..cap).map(|i| format!("{s}_t{i}")));
    names.extend((0..cap).map(|i| format!("{s}_sipm{i}")));
    names.push(format!("{s}_spread"));
    names.push(format!("{s}_nts"));
    for i in 0..cap {
        names.extend((0..4).map(|p| format!("{s}_c{i}_{p}")));
    }
    names.push(format!("{s}_energy"));
    names.push(format!("{s}_x"));
    names.push(format!("{s}_y"));
    if kind == DetectorKind::Slab {
        names.push(format!("{s}_doi"));
    }
}

pub fn feature_names() -> Vec<String> {
    let mut names = vec!["dt_meas".to_string()];
    side_names(DetectorKind::Slab, &mut names);
    side_names(DetectorKind::OneToOne, &mut names);
    names
}

pub fn feature_index(name: &str) -> Option<usize> {
    feature_names().iter().position(|n| n == name)
}

/// The seven feature sets `F^so`, `F_T^s`, `F_E^s`, `F_Pos^s`, `F_T^o`,
/// `F_E^o`, `F_Pos^o`.
pub fn feature_groups() -> Vec<FeatureGroup> {
    let names = feature_names();
    let pick = |pred: &dyn Fn(&str) -> bool| -> Vec<usize> {
        names.iter().enumerate().filter(|(_, n)| pred(n)).map(|(i, _)| i).collect()
    };
    let mut groups = vec![FeatureGroup { name: "F_so".into(), features: vec![0] }];
    for (tag, s) in [("s", "s_"), ("o", "o_")] {
        let timing = pick(&|n: &str| {
            n.starts_with(s)
                && (n[2..].starts_with('t') || n[2..].starts_with("sipm") || n.ends_with("spread") || n.ends_with("nts"))
        });
        let energy = pick(&|n: &str| n.starts_with(s) && (n[2..].starts_with('c') || n.ends_with("energy")));
        let pos = pick(&|n: &str| n.starts_with(s) && matches!(&n[2..], "x" | "y" | "doi"));
        groups.push(FeatureGroup { name: format!("F_T_{tag}"), features: timing });
        groups.push(FeatureGroup { name: format!("F_E_{tag}"), features: energy });
        groups.push(FeatureGroup { name: format!("F_Pos_{tag}"), features: pos });
    }
    groups
}

fn push_side(cluster: &Cluster, out: &mut Vec<f64>) -> Result<()> {
    let energy = cluster.energy_kev.ok_or(CoreError::IncompleteCluster("energy"))?;
    let pos = cluster.position.ok_or(CoreError::IncompleteCluster("position"))?;
    let cap = cluster.detector.timestamp_cap();
    let ts = process_timestamps(cluster)?;
    let used = &cluster.hits[..ts.len()];
    out.extend(ts.iter().copied().chain(std::iter::repeat(MISSING)).take(cap));
    out.extend(used.iter().map(|h| f64::from(h.sipm)).chain(std::iter::repeat(MISSING)).take(cap));
    let first = cluster.hits[0].timestamp_ps;
    let last = cluster.hits[cluster.hits.len() - 1].timestamp_ps;
    out.push(last - first);
    out.push(cluster.hits.len() as f64);
    for i in 0..cap {
        match used.get(i) {
            Some(h) => out.extend(h.counts.iter().map(|&c| f64::from(c))),
            None => out.extend([MISSING; 4]),
        }
    }
    out.push(energy);
    out.push(pos.x);
    out.push(pos.y);
    if cluster.detector == DetectorKind::Slab {
        out.push(pos.doi.ok_or(CoreError::IncompleteCluster("depth of interaction"))?);
    }
    Ok(())
}

pub fn build_features(c: &Coincidence) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(N_FEATURES);
    out.push(c.delta_t_ps()?);
    push_side(&c.slab, &mut out)?;
    push_side(&c.oto, &mut out)?;
    debug_assert_eq!(out.len(), N_FEATURES);
    Ok(out)
}

/// Summed pixel counts of the SiPM behind a side's first timestamp, read
/// from a feature vector (`#OP_0`).
pub fn first_sipm_counts(features: &[f64], kind: DetectorKind) -> f64 {
    let start = feature_index(&format!("{}_c0_0", side_prefix(kind))).expect("known feature");
    features[start..start + 4].iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Hit, Position};

    fn cluster(kind: DetectorKind, ts: &[f64]) -> Cluster {
        let hits = ts
            .iter()
            .enumerate()
            .map(|(i, &t)| Hit { sipm: i as u8, timestamp_ps: t, counts: [10, 20, 30, 40] })
            .collect();
        let mut c = Cluster::new(kind, hits);
        c.energy_kev = Some(511.0);
        c.position = Some(Position {
            x: 1.0,
            y: 2.0,
            doi: (kind == DetectorKind::Slab).then_some(3.0),
        });
        c
    }

    #[test]
    fn processed_timestamps() {
        let c = cluster(DetectorKind::OneToOne, &[1000.0, 1003.0, 1010.0]);
        assert_eq!(process_timestamps(&c).unwrap(), vec![0.0, 3.0, 10.0]);
        let c = cluster(DetectorKind::OneToOne, &[500.0]);
        assert_eq!(process_timestamps(&c).unwrap(), vec![0.0]);
        let c = cluster(DetectorKind::Slab, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(process_timestamps(&c).unwrap().len(), 4);
        let c = Cluster::new(DetectorKind::Slab, vec![]);
        assert!(matches!(process_timestamps(&c), Err(CoreError::EmptyCluster)));
    }

    #[test]
    fn feature_layout() {
        assert_eq!(feature_names().len(), N_FEATURES);
        let groups = feature_groups();
        let mut all: Vec<usize> = groups.iter().flat_map(|g| g.features.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..N_FEATURES).collect::<Vec<_>>());
        assert_eq!(groups[0].features, vec![0]);
    }

    #[test]
    fn two_hit_slab_and_sign_convention() {
        let coinc = Coincidence {
            slab: cluster(DetectorKind::Slab, &[1000.0, 1020.0]),
            oto: cluster(DetectorKind::OneToOne, &[900.0]),
            source_mm: [0.0; 3],
            label_ps: 0.0,
            truth: None,
        };
        let f = build_features(&coinc).unwrap();
        assert_eq!(f[0], 100.0);
        assert_eq!(&f[1..3], &[0.0, 20.0]);
        assert!(f[3].is_nan() && f[4].is_nan());
        let missing = f.iter().filter(|v| v.is_nan()).count();
        // slab: 2 ts + 2 ids + 8 counts; oto: 2 ts + 2 ids + 8 counts.
        assert_eq!(missing, 24);
        assert_eq!(first_sipm_counts(&f, DetectorKind::OneToOne), 100.0);
    }

    #[test]
    fn missing_estimate_is_an_error() {
        let mut slab = cluster(DetectorKind::Slab, &[0.0]);
        slab.energy_kev = None;
        let coinc = Coincidence {
            slab,
            oto: cluster(DetectorKind::OneToOne, &[0.0]),
            source_mm: [0.0; 3],
            label_ps: 0.0,
            truth: None,
        };
        assert!(matches!(build_features(&coinc), Err(CoreError::IncompleteCluster(_))));
    }
}
