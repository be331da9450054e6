use crate::error::{CoreError, Result};
use crate::event::Cluster;

pub const PHOTON_FILTER_MIN: f64 = 400.0;
pub const PHOTON_FILTER_MAX: f64 = 4000.0;

/// Incident photons estimated from `count` fired SPADs of `n_spad`.
pub fn invert_saturation(count: f64, n_spad: f64) -> Result<f64> {
    if !(count < n_spad) {
        return Err(CoreError::SaturatedChannel { count, n_spad });
    }
    Ok(-n_spad * (-count / n_spad).ln_1p())
}

/// Saturation-corrected photon sum over all pixels of a cluster.
pub fn total_photons(cluster: &Cluster, n_spad: f64) -> Result<f64> {
    let mut total = 0.0;
    for h in &cluster.hits {
        for &c in &h.counts {
            total += invert_saturation(f64::from(c), n_spad)?;
        }
    }
    Ok(total)
}

/// Keeps clusters with a corrected photon sum inside `[min, max]`.
pub fn passes_noise_filter(cluster: &Cluster, min: f64, max: f64) -> bool {
    cluster.total_photons.is_some_and(|t| !cluster.hits.is_empty() && t >= min && t <= max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detsim::saturate;
    use crate::geometry::{DetectorKind, SPADS_PER_PIXEL};

    #[test]
    fn inversion_examples() {
        assert_eq!(invert_saturation(0.0, SPADS_PER_PIXEL).unwrap(), 0.0);
        assert!((invert_saturation(1600.0, SPADS_PER_PIXEL).unwrap() - 2218.070978).abs() < 1e-5);
        assert!(invert_saturation(3200.0, SPADS_PER_PIXEL).is_err());
        for n in [1.0, 100.0, 2500.0, 9000.0] {
            let back = invert_saturation(saturate(n, SPADS_PER_PIXEL), SPADS_PER_PIXEL).unwrap();
            assert!((back - n).abs() <= 1e-9 * n);
        }
    }

    #[test]
    fn filter_bounds() {
        let mut c = Cluster::new(DetectorKind::OneToOne, vec![crate::event::Hit { sipm: 0, timestamp_ps: 0.0, counts: [0; 4] }]);
        for (t, keep) in [(399.0, false), (400.0, true), (4000.0, true), (4001.0, false)] {
            c.total_photons = Some(t);
            assert_eq!(passes_noise_filter(&c, PHOTON_FILTER_MIN, PHOTON_FILTER_MAX), keep);
        }
        let empty = Cluster { total_photons: Some(1000.0), ..Cluster::new(DetectorKind::Slab, vec![]) };
        assert!(!passes_noise_filter(&empty, PHOTON_FILTER_MIN, PHOTON_FILTER_MAX));
    }
}
