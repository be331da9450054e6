//! Binary dataset files, truth sidecars and CSV export.
//!
//! Layout, all little-endian:
//!
//! ```text
//! header   magic "TOFCALDS" | version u16 | flags u16 | reserved u32 | count u64
//! record   source x, y, z (f64 mm) | label (f64 ps) | slab side | oto side
//! side     n_hits u16 | n_hits x (sipm u8, timestamp f64 ps, 4 x count u16)
//!          [FLAG_ESTIMATES] total photons, energy keV, x mm, y mm, doi mm (f64, NaN if absent)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tofcal_core::event::{Cluster, ClusterTruth, Coincidence, EventTruth, Hit, Position};
use tofcal_core::geometry::DetectorKind;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"TOFCALDS";
pub const VERSION: u16 = 1;
/// Records carry per-cluster photon totals, energies and positions.
pub const FLAG_ESTIMATES: u16 = 1;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingInput(path.to_path_buf()),
        _ => CliError::io(path, e),
    })
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map_err(|e| CliError::io(path, e))
}

fn has_estimates(c: &Cluster) -> bool {
    c.total_photons.is_some() || c.energy_kev.is_some() || c.position.is_some()
}

fn encode_side(buf: &mut Vec<u8>, c: &Cluster, estimates: bool) -> Result<()> {
    let n = u16::try_from(c.hits.len()).map_err(|_| CliError::Numerical("cluster with more than 65535 hits".into()))?;
    buf.extend_from_slice(&n.to_le_bytes());
    for h in &c.hits {
        buf.push(h.sipm);
        buf.extend_from_slice(&h.timestamp_ps.to_le_bytes());
        for v in h.counts {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if estimates {
        let pos = c.position;
        for v in [
            c.total_photons.unwrap_or(f64::NAN),
            c.energy_kev.unwrap_or(f64::NAN),
            pos.map_or(f64::NAN, |p| p.x),
            pos.map_or(f64::NAN, |p| p.y),
            pos.and_then(|p| p.doi).unwrap_or(f64::NAN),
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

pub fn write_dataset(path: &Path, coincs: &[Coincidence]) -> Result<()> {
    let estimates = coincs.iter().any(|c| has_estimates(&c.slab) || has_estimates(&c.oto));
    let mut w = BufWriter::new(create(path)?);
    let mut buf = Vec::with_capacity(64 + coincs.len() * 200);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(if estimates { FLAG_ESTIMATES } else { 0 }).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&(coincs.len() as u64).to_le_bytes());
    for c in coincs {
        for v in c.source_mm.iter().chain([&c.label_ps]) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        encode_side(&mut buf, &c.slab, estimates)?;
        encode_side(&mut buf, &c.oto, estimates)?;
    }
    w.write_all(&buf).map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self.data.get(self.pos..end).ok_or_else(|| CliError::Format {
            path: self.path.to_path_buf(),
            msg: format!("truncated at byte {}", self.pos),
        })?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice of length N"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

fn opt(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

fn decode_side(r: &mut Cursor<'_>, kind: DetectorKind, estimates: bool) -> Result<Cluster> {
    let n = r.u16()? as usize;
    let mut hits = Vec::with_capacity(n);
    for _ in 0..n {
        let sipm = r.u8()?;
        let timestamp_ps = r.f64()?;
        let mut counts = [0u16; 4];
        for c in &mut counts {
            *c = r.u16()?;
        }
        hits.push(Hit { sipm, timestamp_ps, counts });
    }
    let mut c = Cluster::new(kind, hits);
    if estimates {
        c.total_photons = opt(r.f64()?);
        c.energy_kev = opt(r.f64()?);
        let (x, y, doi) = (r.f64()?, r.f64()?, r.f64()?);
        if !x.is_nan() && !y.is_nan() {
            c.position = Some(Position { x, y, doi: opt(doi) });
        }
    }
    Ok(c)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Coincidence>> {
    let mut data = Vec::new();
    BufReader::new(open(path)?).read_to_end(&mut data).map_err(|e| CliError::io(path, e))?;
    let bad = |msg: String| CliError::Format { path: path.to_path_buf(), msg };
    let mut r = Cursor { data: &data, pos: 0, path };
    if &r.take::<8>()? != MAGIC {
        return Err(bad("not a tofcal dataset (bad magic)".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(bad(format!("dataset version {version}, expected {VERSION}")));
    }
    let flags = r.u16()?;
    if flags & !FLAG_ESTIMATES != 0 {
        return Err(bad(format!("unknown flags {flags:#06x}")));
    }
    let _reserved = r.u32()?;
    let count = r.u64()?;
    let estimates = flags & FLAG_ESTIMATES != 0;
    let mut out = Vec::with_capacity(count.min(1 << 24) as usize);
    for _ in 0..count {
        let source_mm = [r.f64()?, r.f64()?, r.f64()?];
        let label_ps = r.f64()?;
        let slab = decode_side(&mut r, DetectorKind::Slab, estimates)?;
        let oto = decode_side(&mut r, DetectorKind::OneToOne, estimates)?;
        out.push(Coincidence { slab, oto, source_mm, label_ps, truth: None });
    }
    if r.pos != data.len() {
        return Err(bad(format!("{} trailing bytes", data.len() - r.pos)));
    }
    Ok(out)
}

/// One row of the truth sidecar, in record order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct TruthRow {
    t0_ps: f64,
    slab_skew_first_ps: f64,
    slab_timewalk_first_ps: f64,
    slab_x_mm: f64,
    slab_y_mm: f64,
    slab_depth_mm: f64,
    slab_energy_kev: f64,
    slab_travel_ps: f64,
    oto_skew_first_ps: f64,
    oto_timewalk_first_ps: f64,
    oto_x_mm: f64,
    oto_y_mm: f64,
    oto_depth_mm: f64,
    oto_energy_kev: f64,
    oto_travel_ps: f64,
}

impl TruthRow {
    fn new(t: &EventTruth) -> Self {
        let (s, o) = (&t.slab, &t.oto);
        Self {
            t0_ps: t.t0_ps,
            slab_skew_first_ps: s.skew_first_ps,
            slab_timewalk_first_ps: s.timewalk_first_ps,
            slab_x_mm: s.interaction_mm[0],
            slab_y_mm: s.interaction_mm[1],
            slab_depth_mm: s.interaction_mm[2],
            slab_energy_kev: s.energy_kev,
            slab_travel_ps: s.travel_ps,
            oto_skew_first_ps: o.skew_first_ps,
            oto_timewalk_first_ps: o.timewalk_first_ps,
            oto_x_mm: o.interaction_mm[0],
            oto_y_mm: o.interaction_mm[1],
            oto_depth_mm: o.interaction_mm[2],
            oto_energy_kev: o.energy_kev,
            oto_travel_ps: o.travel_ps,
        }
    }

    fn truth(&self) -> EventTruth {
        EventTruth {
            t0_ps: self.t0_ps,
            slab: ClusterTruth {
                skew_first_ps: self.slab_skew_first_ps,
                timewalk_first_ps: self.slab_timewalk_first_ps,
                interaction_mm: [self.slab_x_mm, self.slab_y_mm, self.slab_depth_mm],
                energy_kev: self.slab_energy_kev,
                travel_ps: self.slab_travel_ps,
            },
            oto: ClusterTruth {
                skew_first_ps: self.oto_skew_first_ps,
                timewalk_first_ps: self.oto_timewalk_first_ps,
                interaction_mm: [self.oto_x_mm, self.oto_y_mm, self.oto_depth_mm],
                energy_kev: self.oto_energy_kev,
                travel_ps: self.oto_travel_ps,
            },
        }
    }
}

pub fn write_truth(path: &Path, coincs: &[Coincidence]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(create(path)?));
    let csv_err = |e: csv::Error| CliError::Format { path: path.to_path_buf(), msg: e.to_string() };
    for c in coincs {
        let t = c.truth.ok_or_else(|| CliError::Numerical("coincidence without simulation truth".into()))?;
        w.serialize(TruthRow::new(&t)).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Attaches sidecar truth to records read from the matching dataset.
pub fn read_truth(path: &Path, coincs: &mut [Coincidence]) -> Result<()> {
    let mut r = csv::Reader::from_reader(BufReader::new(open(path)?));
    let bad = |msg: String| CliError::Format { path: path.to_path_buf(), msg };
    let total = coincs.len();
    let mut n = 0;
    for row in r.deserialize::<TruthRow>() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let c = coincs.get_mut(n).ok_or_else(|| bad(format!("more truth rows than the {total} records")))?;
        c.truth = Some(row.truth());
        n += 1;
    }
    if n != coincs.len() {
        return Err(bad(format!("{n} truth rows for {} records", coincs.len())));
    }
    Ok(())
}

#[derive(Serialize)]
struct HitRow {
    record: usize,
    source_x_mm: f64,
    source_y_mm: f64,
    source_z_mm: f64,
    label_ps: f64,
    detector: &'static str,
    sipm: u8,
    timestamp_ps: f64,
    count0: u16,
    count1: u16,
    count2: u16,
    count3: u16,
}

/// One row per hit, for inspection.
pub fn write_csv(path: &Path, coincs: &[Coincidence]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(create(path)?));
    let csv_err = |e: csv::Error| CliError::Format { path: path.to_path_buf(), msg: e.to_string() };
    for (i, c) in coincs.iter().enumerate() {
        for (name, cl) in [("slab", &c.slab), ("oto", &c.oto)] {
            for h in &cl.hits {
                w.serialize(HitRow {
                    record: i,
                    source_x_mm: c.source_mm[0],
                    source_y_mm: c.source_mm[1],
                    source_z_mm: c.source_mm[2],
                    label_ps: c.label_ps,
                    detector: name,
                    sipm: h.sipm,
                    timestamp_ps: h.timestamp_ps,
                    count0: h.counts[0],
                    count1: h.counts[1],
                    count2: h.counts[2],
                    count3: h.counts[3],
                })
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Coincidence> {
        let hit = |sipm, t| Hit { sipm, timestamp_ps: t, counts: [1, 2, 3, 4] };
        let mut slab = Cluster::new(DetectorKind::Slab, vec![hit(3, 10.5), hit(4, 12.25)]);
        slab.energy_kev = Some(480.0);
        slab.total_photons = Some(2100.0);
        slab.position = Some(Position { x: 1.0, y: -2.0, doi: Some(7.0) });
        let mut oto = Cluster::new(DetectorKind::OneToOne, vec![hit(9, -3.0)]);
        oto.position = Some(Position { x: 6.0, y: 2.0, doi: None });
        vec![Coincidence { slab, oto, source_mm: [0.0, 6.0, -35.0], label_ps: 233.5, truth: None }]
    }

    #[test]
    fn header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.tcd");
        write_dataset(&p, &sample()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u16::from_le_bytes([bytes[8], bytes[9]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[10], bytes[11]]), FLAG_ESTIMATES);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 1);
        assert_eq!(read_dataset(&p).unwrap(), sample());
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.tcd");
        write_dataset(&p, &sample()).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_dataset(&p), Err(CliError::Format { .. })));
        std::fs::write(&p, b"NOTADATASET.............").unwrap();
        assert!(matches!(read_dataset(&p), Err(CliError::Format { .. })));
        assert!(matches!(read_dataset(&dir.path().join("none.tcd")), Err(CliError::MissingInput(_))));
    }
}
