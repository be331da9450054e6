use serde::{Deserialize, Serialize};

/// Speed of light in vacuum, mm/ps.
pub const SPEED_OF_LIGHT_MM_PER_PS: f64 = 0.299_792_458;
/// FWHM / sigma of a Gaussian, 2 sqrt(2 ln 2).
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;
pub const N_SIPMS: usize = 16;
pub const PIXELS_PER_SIPM: usize = 4;
pub const N_PIXELS: usize = N_SIPMS * PIXELS_PER_SIPM;
pub const SPADS_PER_PIXEL: f64 = 3200.0;
pub const PIXEL_PITCH_MM: f64 = 4.0;
/// Pixels per tile side.
pub const PIXELS_PER_SIDE: usize = 8;
pub const TILE_HALF_WIDTH_MM: f64 = 16.0;
pub const CRYSTAL_HEIGHT_MM: f64 = 19.0;
pub const DETECTOR_SPACING_MM: f64 = 435.0;
pub const SLAB_COUNT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Slab,
    OneToOne,
}

impl DetectorKind {
    /// Number of processed timestamps kept as features.
    pub fn timestamp_cap(self) -> usize {
        match self {
            DetectorKind::Slab => 4,
            DetectorKind::OneToOne => 3,
        }
    }

    /// The slab sits at +z, the one-to-one detector at -z.
    pub fn face_z_mm(self) -> f64 {
        match self {
            DetectorKind::Slab => DETECTOR_SPACING_MM / 2.0,
            DetectorKind::OneToOne => -DETECTOR_SPACING_MM / 2.0,
        }
    }

    pub fn position_dims(self) -> usize {
        match self {
            DetectorKind::Slab => 3,
            DetectorKind::OneToOne => 2,
        }
    }

    pub fn index(self) -> usize {
        match self {
            DetectorKind::Slab => 0,
            DetectorKind::OneToOne => 1,
        }
    }
}

/// Static description of one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorGeometry {
    pub kind: DetectorKind,
    pub n_sipms: usize,
    pub pixels_per_sipm: usize,
    pub spads_per_pixel: f64,
    pub crystal_height_mm: f64,
    pub pitch_mm: f64,
    pub slab_count: usize,
    pub detector_spacing_mm: f64,
}

impl DetectorGeometry {
    pub fn new(kind: DetectorKind) -> Self {
        Self {
            kind,
            n_sipms: N_SIPMS,
            pixels_per_sipm: PIXELS_PER_SIPM,
            spads_per_pixel: SPADS_PER_PIXEL,
            crystal_height_mm: CRYSTAL_HEIGHT_MM,
            pitch_mm: PIXEL_PITCH_MM,
            slab_count: if kind == DetectorKind::Slab { SLAB_COUNT } else { 0 },
            detector_spacing_mm: DETECTOR_SPACING_MM,
        }
    }
}

/// Pixel `p` (0..4, `p = py * 2 + px`) of SiPM `sipm` (`sipm = row * 4 + col`)
/// as global column and row on the 8x8 pixel grid.
#[inline]
pub fn pixel_grid(sipm: usize, p: usize) -> (usize, usize) {
    let (row, col) = (sipm / 4, sipm % 4);
    let (py, px) = (p / 2, p % 2);
    (col * 2 + px, row * 2 + py)
}

/// Inverse of [`pixel_grid`].
#[inline]
pub fn grid_pixel(gx: usize, gy: usize) -> (usize, usize) {
    ((gy / 2) * 4 + gx / 2, (gy % 2) * 2 + gx % 2)
}

/// Flat pixel index `sipm * 4 + p`.
#[inline]
pub fn flat_pixel(gx: usize, gy: usize) -> usize {
    let (s, p) = grid_pixel(gx, gy);
    s * PIXELS_PER_SIPM + p
}

/// Center of grid column/row `g` in mm.
#[inline]
pub fn pixel_center_mm(g: usize) -> f64 {
    (g as f64 + 0.5) * PIXEL_PITCH_MM - TILE_HALF_WIDTH_MM
}

/// Grid column/row containing coordinate `v`, clamped to the tile.
#[inline]
pub fn grid_index(v: f64) -> usize {
    (((v + TILE_HALF_WIDTH_MM) / PIXEL_PITCH_MM).floor().max(0.0) as usize).min(PIXELS_PER_SIDE - 1)
}

/// Center (x, y) of flat pixel index `i`.
pub fn flat_pixel_center(i: usize) -> (f64, f64) {
    let (gx, gy) = pixel_grid(i / PIXELS_PER_SIPM, i % PIXELS_PER_SIPM);
    (pixel_center_mm(gx), pixel_center_mm(gy))
}

/// Label `y = -2 z / c` in ps for a source at `z_mm`.
pub fn compute_label(z_mm: f64, c_mm_per_ps: f64) -> f64 {
    -2.0 * z_mm / c_mm_per_ps
}
