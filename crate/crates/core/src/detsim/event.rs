use rand::Rng;
use rand_distr::{Distribution, Poisson};
use statrs::function::erf::erf;

use crate::event::{Cluster, ClusterTruth, Coincidence, EventTruth, Hit};
use crate::geometry::{
    compute_label, flat_pixel, grid_index, DetectorKind, CRYSTAL_HEIGHT_MM, N_PIXELS,
    N_SIPMS, PIXELS_PER_SIDE, PIXEL_PITCH_MM, SPADS_PER_PIXEL, TILE_HALF_WIDTH_MM,
};

use super::model::{uniform, DetectorConstants, SimConfig};

/// Fired SPADs of a pixel with `n_incident` photons.
pub fn saturate(n_incident: f64, n_spad: f64) -> f64 {
    n_spad * (1.0 - (-n_incident / n_spad).exp())
}

fn normal<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    sigma * z
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng)
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

struct Side {
    truth: ClusterTruth,
    hits: Vec<Hit>,
}

/// Fraction of light on each of the 64 pixels (flat index).
fn light_pattern(cfg: &SimConfig, kind: DetectorKind, x: f64, y: f64, depth: f64) -> [f64; N_PIXELS] {
    let mut frac = [0.0; N_PIXELS];
    let (gx, gy) = (grid_index(x), grid_index(y));
    match kind {
        DetectorKind::OneToOne => {
            frac[flat_pixel(gx, gy)] = cfg.oto_core_fraction;
            let side = (1.0 - cfg.oto_core_fraction) / 4.0;
            let n = PIXELS_PER_SIDE as isize;
            for (dx, dy) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                let (nx, ny) = (gx as isize + dx, gy as isize + dy);
                if (0..n).contains(&nx) && (0..n).contains(&ny) {
                    frac[flat_pixel(nx as usize, ny as usize)] += side;
                }
            }
        }
        DetectorKind::Slab => {
            let sigma = cfg.slab_spread_base_mm + cfg.slab_spread_slope * (CRYSTAL_HEIGHT_MM - depth);
            let mut rows = [0.0; PIXELS_PER_SIDE];
            for (r, v) in rows.iter_mut().enumerate() {
                let lo = r as f64 * PIXEL_PITCH_MM - TILE_HALF_WIDTH_MM;
                *v = std_normal_cdf((lo + PIXEL_PITCH_MM - y) / sigma) - std_normal_cdf((lo - y) / sigma);
            }
            let norm: f64 = rows.iter().sum();
            let partner = gx ^ 1;
            for (r, v) in rows.iter().enumerate() {
                let f = v / norm;
                frac[flat_pixel(gx, r)] += (1.0 - cfg.slab_partner_fraction) * f;
                frac[flat_pixel(partner, r)] += cfg.slab_partner_fraction * f;
            }
        }
    }
    frac
}

fn light_collection(cfg: &SimConfig, consts: &DetectorConstants, kind: DetectorKind, x: f64, y: f64, depth: f64) -> f64 {
    match kind {
        DetectorKind::OneToOne => consts.oto_light_collection[flat_pixel(grid_index(x), grid_index(y))],
        DetectorKind::Slab => {
            // Smooth loss towards the slab ends and away from the sensor,
            // centred so the volume average stays near one.
            let s = cfg.slab.light_collection_sd;
            let ends = (y / TILE_HALF_WIDTH_MM).powi(2) - 1.0 / 3.0;
            let far = (CRYSTAL_HEIGHT_MM - depth) / CRYSTAL_HEIGHT_MM - 0.6;
            1.0 - 2.0 * s * ends - s * far
        }
    }
}

/// Simulates one detector side; `None` if no SiPM triggers.
#[allow(clippy::too_many_arguments)]
fn simulate_side<R: Rng>(
    rng: &mut R,
    cfg: &SimConfig,
    consts: &DetectorConstants,
    kind: DetectorKind,
    source: [f64; 3],
    entry: [f64; 3],
    dir: [f64; 3],
    t0: f64,
) -> Option<Side> {
    let lambda = cfg.attenuation_length_mm;
    let h = CRYSTAL_HEIGHT_MM;
    let u: f64 = rng.random();
    let depth = -lambda * (1.0 - u * (1.0 - (-h / lambda).exp())).ln();
    let path = depth / dir[2].abs();
    let lim = TILE_HALF_WIDTH_MM - 1e-9;
    let x = (entry[0] + dir[0] * path).clamp(-lim, lim);
    let y = (entry[1] + dir[1] * path).clamp(-lim, lim);
    let z = entry[2] + dir[2] * path;

    let model = cfg.model(kind);
    let energy = if rng.random::<f64>() < cfg.compton_fraction {
        uniform(rng, cfg.compton_min_kev, cfg.compton_max_kev)
    } else {
        // The photon-statistics share of the resolution comes from the Poisson draws below.
        let stat = crate::geometry::FWHM_PER_SIGMA.powi(2) / model.light_yield;
        let intrinsic = (model.energy_resolution.powi(2) - stat).max(0.0).sqrt();
        511.0 * (1.0 + normal(rng, intrinsic / crate::geometry::FWHM_PER_SIGMA))
    }
    .max(1.0);

    let lc = light_collection(cfg, consts, kind, x, y, depth);
    let mean_photons = model.light_yield * energy / 511.0 * lc;
    let pattern = light_pattern(cfg, kind, x, y, depth);
    let mut incident = [0.0; N_PIXELS];
    for (n, f) in incident.iter_mut().zip(&pattern) {
        *n = poisson(rng, mean_photons * f);
    }

    let skew = &cfg.skew;
    let (travel, transport) = if skew.doi_timing {
        let d = [x - source[0], y - source[1], z - source[2]];
        let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        (dist / cfg.c_mm_per_ps, (h - depth) * cfg.refractive_index / cfg.c_mm_per_ps)
    } else {
        let d = [entry[0] - source[0], entry[1] - source[1], entry[2] - source[2]];
        ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() / cfg.c_mm_per_ps, 0.0)
    };
    let rise = normal(rng, skew.rise_jitter_ps);
    let base = t0 + travel + transport + rise;

    let mut hits = Vec::new();
    let mut first: Option<(f64, f64, f64)> = None;
    for k in 0..N_SIPMS {
        let n: f64 = (0..4).map(|p| incident[k * 4 + p]).sum();
        if n < consts.thresholds[kind.index()][k] || n <= 0.0 {
            continue;
        }
        let walk = skew.timewalk_ps(n);
        let sk = consts.skew(kind, k);
        let ts = base + sk + walk + normal(rng, skew.jitter_sigma_ps(n));
        let mut counts = [0u16; 4];
        for (p, c) in counts.iter_mut().enumerate() {
            *c = saturate(incident[k * 4 + p], SPADS_PER_PIXEL).round() as u16;
        }
        if first.is_none_or(|(t, _, _)| ts < t) {
            first = Some((ts, sk, walk));
        }
        hits.push(Hit { sipm: k as u8, timestamp_ps: ts, counts });
    }
    let (_, skew_first_ps, timewalk_first_ps) = first?;
    hits.sort_by(|a, b| a.timestamp_ps.total_cmp(&b.timestamp_ps));
    Some(Side {
        truth: ClusterTruth {
            skew_first_ps,
            timewalk_first_ps,
            interaction_mm: [x, y, depth],
            energy_kev: energy,
            travel_ps: travel,
        },
        hits,
    })
}

/// Emits one coincidence for a source at `source` (mm) with emission time
/// `t0`. Draws are repeated until both detectors trigger.
pub fn simulate_event<R: Rng>(
    source: [f64; 3],
    t0: f64,
    cfg: &SimConfig,
    consts: &DetectorConstants,
    rng: &mut R,
) -> Coincidence {
    let slab_z = DetectorKind::Slab.face_z_mm();
    let oto_z = DetectorKind::OneToOne.face_z_mm();
    loop {
        let lim = TILE_HALF_WIDTH_MM;
        let oto_entry = [uniform(rng, -lim, lim), uniform(rng, -lim, lim), oto_z];
        let v = [oto_entry[0] - source[0], oto_entry[1] - source[1], oto_entry[2] - source[2]];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let to_oto = [v[0] / norm, v[1] / norm, v[2] / norm];
        let to_slab = [-to_oto[0], -to_oto[1], -to_oto[2]];
        let t = (slab_z - source[2]) / to_slab[2];
        let slab_entry = [source[0] + to_slab[0] * t, source[1] + to_slab[1] * t, slab_z];
        if slab_entry[0].abs() > lim || slab_entry[1].abs() > lim {
            continue;
        }
        let Some(slab) = simulate_side(rng, cfg, consts, DetectorKind::Slab, source, slab_entry, to_slab, t0) else {
            continue;
        };
        let Some(oto) = simulate_side(rng, cfg, consts, DetectorKind::OneToOne, source, oto_entry, to_oto, t0) else {
            continue;
        };
        return Coincidence {
            slab: Cluster::new(DetectorKind::Slab, slab.hits),
            oto: Cluster::new(DetectorKind::OneToOne, oto.hits),
            source_mm: source,
            label_ps: compute_label(source[2], cfg.c_mm_per_ps),
            truth: Some(EventTruth { t0_ps: t0, slab: slab.truth, oto: oto.truth }),
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturation_closed_form() {
        assert!((saturate(2218.070978, 3200.0) - 1600.0).abs() < 1e-5);
    }

    #[test]
    fn light_patterns_are_normalized() {
        let cfg = SimConfig::default();
        for kind in [DetectorKind::Slab, DetectorKind::OneToOne] {
            let f = light_pattern(&cfg, kind, 3.3, -7.1, 5.0);
            assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let f = light_pattern(&cfg, DetectorKind::OneToOne, 1.0, 1.0, 0.0);
        assert_eq!(f.iter().cloned().fold(0.0, f64::max), 0.95);
    }
}
