//! On-disk formats: accumulated moments and per-trajectory field snapshots.
//!
//! Both formats pair a JSON header (metadata plus a SHA-256 of the payload)
//! with raw little-endian float64 data, so analysis can be re-run offline
//! and corrupted or mismatched checkpoints are rejected.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lattice::{ComplexField, Lattice3D, SpaceTag};

use super::moments::{EnsembleMoments, FieldAccumulator, MomentPlan, PairLayout};
use super::stepper::FieldPair;

const MOMENTS_MAGIC: &[u8; 8] = b"FWMOMNT1";

#[derive(Serialize, Deserialize)]
struct MomentsHeader {
    lattice_points: [usize; 3],
    lattice_lengths: [f64; 3],
    plan: MomentPlan,
    layout: PairLayout,
    sample_steps: Vec<usize>,
    sample_times: Vec<f64>,
    n_valid: usize,
    discarded: Vec<u64>,
    config_hash: String,
    density_count: usize,
    has_fields: bool,
    field_count: usize,
    has_modes: bool,
    scalar_len: usize,
    quadrant_len: usize,
    pair_len: usize,
    mode_len: usize,
    payload_sha256: String,
}

fn push_complex(buf: &mut Vec<u8>, data: &[Complex64]) {
    for c in data {
        buf.extend_from_slice(&c.re.to_le_bytes());
        buf.extend_from_slice(&c.im.to_le_bytes());
    }
}

fn push_real(buf: &mut Vec<u8>, data: &[f64]) {
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct PayloadReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    fn complex(&mut self, n: usize) -> Result<Vec<Complex64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let re = self.f64()?;
            let im = self.f64()?;
            out.push(Complex64::new(re, im));
        }
        Ok(out)
    }

    fn real(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn f64(&mut self) -> Result<f64> {
        if self.pos + 8 > self.bytes.len() {
            return Err(Error::CheckpointMismatch("payload truncated".into()));
        }
        let v = f64::from_le_bytes(self.bytes[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        Ok(v)
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn accumulator_payload(buf: &mut Vec<u8>, acc: &FieldAccumulator) {
    push_complex(buf, &acc.mean);
    push_real(buf, &acc.m2_re);
    push_real(buf, &acc.m2_im);
}

fn accumulator_from(reader: &mut PayloadReader, count: usize, len: usize) -> Result<FieldAccumulator> {
    Ok(FieldAccumulator {
        count,
        mean: reader.complex(len)?,
        m2_re: reader.real(len)?,
        m2_im: reader.real(len)?,
    })
}

/// Serialize accumulated moments.
pub fn save_moments(path: &Path, moments: &EnsembleMoments) -> Result<()> {
    let mut payload = Vec::new();
    push_complex(&mut payload, &moments.scalar_rows);
    push_complex(&mut payload, &moments.quadrant_rows);
    push_complex(&mut payload, &moments.pair_rows);
    accumulator_payload(&mut payload, &moments.density);
    if let (Some(a), Some(t)) = (&moments.field_psi, &moments.field_psi_tilde) {
        accumulator_payload(&mut payload, a);
        accumulator_payload(&mut payload, t);
    }
    if let Some(rows) = &moments.mode_rows {
        push_complex(&mut payload, rows);
    }

    let header = MomentsHeader {
        lattice_points: moments.lattice.points(),
        lattice_lengths: moments.lattice.lengths(),
        plan: moments.plan.clone(),
        layout: moments.layout.clone(),
        sample_steps: moments.sample_steps.clone(),
        sample_times: moments.sample_times.clone(),
        n_valid: moments.n_valid,
        discarded: moments.discarded.clone(),
        config_hash: moments.config_hash.clone(),
        density_count: moments.density.count,
        has_fields: moments.field_psi.is_some(),
        field_count: moments.field_psi.as_ref().map_or(0, |a| a.count),
        has_modes: moments.mode_rows.is_some(),
        scalar_len: moments.scalar_rows.len(),
        quadrant_len: moments.quadrant_rows.len(),
        pair_len: moments.pair_rows.len(),
        mode_len: moments.mode_rows.as_ref().map_or(0, |m| m.len()),
        payload_sha256: sha_hex(&payload),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Serialization(e.to_string()))?;

    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MOMENTS_MAGIC)?;
    w.write_u64::<LittleEndian>(header_json.len() as u64)?;
    w.write_all(&header_json)?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

/// Load moments saved by [`save_moments`], verifying the payload hash.
pub fn load_moments(path: &Path) -> Result<EnsembleMoments> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MOMENTS_MAGIC {
        return Err(Error::CheckpointMismatch("bad magic".into()));
    }
    let header_len = r.read_u64::<LittleEndian>()? as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json)?;
    let header: MomentsHeader =
        serde_json::from_slice(&header_json).map_err(|e| Error::Serialization(e.to_string()))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if sha_hex(&payload) != header.payload_sha256 {
        return Err(Error::CheckpointMismatch("payload hash mismatch".into()));
    }

    let lattice = Lattice3D::new(header.lattice_points, header.lattice_lengths)?;
    let n_bins = lattice.num_points();
    let mut reader = PayloadReader { bytes: &payload, pos: 0 };
    let scalar_rows = reader.complex(header.scalar_len)?;
    let quadrant_rows = reader.complex(header.quadrant_len)?;
    let pair_rows = reader.complex(header.pair_len)?;
    let density = accumulator_from(&mut reader, header.density_count, n_bins)?;
    let (field_psi, field_psi_tilde) = if header.has_fields {
        (
            Some(accumulator_from(&mut reader, header.field_count, n_bins)?),
            Some(accumulator_from(&mut reader, header.field_count, n_bins)?),
        )
    } else {
        (None, None)
    };
    let mode_rows = if header.has_modes { Some(reader.complex(header.mode_len)?) } else { None };

    Ok(EnsembleMoments {
        lattice,
        plan: header.plan,
        layout: header.layout,
        sample_steps: header.sample_steps,
        sample_times: header.sample_times,
        n_valid: header.n_valid,
        discarded: header.discarded,
        config_hash: header.config_hash,
        scalar_rows,
        quadrant_rows,
        pair_rows,
        density,
        field_psi,
        field_psi_tilde,
        mode_rows,
    })
}

/// Manifest accompanying a per-trajectory field snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub kind: String,
    pub points: [usize; 3],
    pub lengths_m: [f64; 3],
    pub trajectory_id: u64,
    pub step: usize,
    pub time_s: f64,
    pub base_seed: u64,
    pub config_hash: String,
    pub data_sha256: String,
}

/// Write one trajectory's fields as interleaved little-endian float64 pairs
/// (`psi` re/im for every site, then `psi_tilde`), plus a JSON manifest.
pub fn save_field_pair(
    data_path: &Path,
    manifest_path: &Path,
    pair: &FieldPair,
    lattice: &Lattice3D,
    base_seed: u64,
    config_hash: &str,
) -> Result<()> {
    let mut payload = Vec::with_capacity(pair.psi.values().len() * 32);
    push_complex(&mut payload, pair.psi.values());
    push_complex(&mut payload, pair.psi_tilde.values());
    let manifest = SnapshotManifest {
        kind: "field_pair".into(),
        points: lattice.points(),
        lengths_m: lattice.lengths(),
        trajectory_id: pair.trajectory_id,
        step: pair.step,
        time_s: pair.time,
        base_seed,
        config_hash: config_hash.to_string(),
        data_sha256: sha_hex(&payload),
    };
    std::fs::write(data_path, &payload)?;
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    std::fs::write(manifest_path, json)?;
    Ok(())
}

/// Load a snapshot written by [`save_field_pair`], verifying shape and hash.
/// When `expected_hash` is given, the manifest's config hash must match.
pub fn load_field_pair(
    data_path: &Path,
    manifest_path: &Path,
    expected_hash: Option<&str>,
) -> Result<(FieldPair, SnapshotManifest)> {
    let manifest: SnapshotManifest =
        serde_json::from_str(&std::fs::read_to_string(manifest_path)?)
            .map_err(|e| Error::Serialization(e.to_string()))?;
    if let Some(expected) = expected_hash {
        if manifest.config_hash != expected {
            return Err(Error::CheckpointMismatch(format!(
                "snapshot belongs to config {}, expected {}",
                manifest.config_hash, expected
            )));
        }
    }
    let payload = std::fs::read(data_path)?;
    if sha_hex(&payload) != manifest.data_sha256 {
        return Err(Error::CheckpointMismatch("snapshot data hash mismatch".into()));
    }
    let lattice = Lattice3D::new(manifest.points, manifest.lengths_m)?;
    let n = lattice.num_points();
    if payload.len() != n * 32 {
        return Err(Error::CheckpointMismatch("snapshot size does not match grid".into()));
    }
    let mut reader = PayloadReader { bytes: &payload, pos: 0 };
    let psi = ComplexField::new(reader.complex(n)?, &lattice, SpaceTag::Position)?;
    let psi_tilde = ComplexField::new(reader.complex(n)?, &lattice, SpaceTag::Position)?;
    let pair = FieldPair {
        psi,
        psi_tilde,
        time: manifest.time_s,
        step: manifest.step,
        trajectory_id: manifest.trajectory_id,
    };
    Ok((pair, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::moments::{DomainSpec, TrajectorySample};
    use num_complex::Complex64;

    fn sample_moments() -> EnsembleMoments {
        let lattice = Lattice3D::new([4, 4, 4], [2e-6, 2e-6, 2e-6]).unwrap();
        let plan = MomentPlan {
            sample_stride: 1,
            reference_wavevector: 0.0,
            lag_counts: [1, 1, 1],
            mode_row_threshold: 64,
            ..MomentPlan::default()
        };
        let domain = DomainSpec::new(&lattice, &plan).unwrap();
        let mut m = EnsembleMoments::new(&domain, vec![0, 1], 1e-6, "deadbeef".to_string());
        for t in 0..3u64 {
            let a: Vec<Complex64> = (0..lattice.num_points())
                .map(|i| Complex64::new(i as f64 + t as f64, 0.5 * t as f64))
                .collect();
            let at: Vec<Complex64> = a.iter().map(|c| c.conj()).collect();
            let samples: Vec<TrajectorySample> = vec![
                TrajectorySample::compute(&a, &at, &domain, 0, 0.0, false),
                TrajectorySample::compute(&a, &at, &domain, 1, 1e-6, true),
            ];
            m.merge_valid(&samples);
        }
        m.record_discarded(99);
        m
    }

    #[test]
    fn moments_round_trip() {
        let m = sample_moments();
        let dir = std::env::temp_dir().join("fourwave_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("moments.bin");
        save_moments(&path, &m).unwrap();
        let loaded = load_moments(&path).unwrap();
        assert_eq!(loaded.n_valid, m.n_valid);
        assert_eq!(loaded.scalar_rows, m.scalar_rows);
        assert_eq!(loaded.quadrant_rows, m.quadrant_rows);
        assert_eq!(loaded.pair_rows, m.pair_rows);
        assert_eq!(loaded.density.mean, m.density.mean);
        assert_eq!(loaded.density.m2_im, m.density.m2_im);
        assert_eq!(loaded.discarded, m.discarded);
        assert_eq!(loaded.mode_rows, m.mode_rows);
        assert_eq!(loaded.config_hash, "deadbeef");
    }

    #[test]
    fn corruption_detected() {
        let m = sample_moments();
        let dir = std::env::temp_dir().join("fourwave_ckpt_corrupt");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("moments.bin");
        save_moments(&path, &m).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 3;
        bytes[last] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_moments(&path), Err(Error::CheckpointMismatch(_))));
    }

    #[test]
    fn field_pair_round_trip_and_hash_check() {
        use crate::lattice::SpaceTag;
        let lattice = Lattice3D::new([4, 4, 4], [2e-6, 2e-6, 2e-6]).unwrap();
        let values: Vec<Complex64> =
            (0..lattice.num_points()).map(|i| Complex64::new(i as f64, -(i as f64))).collect();
        let mut pair = FieldPair::coherent(
            ComplexField::new(values, &lattice, SpaceTag::Position).unwrap(),
            &lattice,
        )
        .unwrap();
        pair.trajectory_id = 5;
        pair.step = 64;
        pair.time = 12.5e-6;

        let dir = std::env::temp_dir().join("fourwave_snap_test");
        std::fs::create_dir_all(&dir).unwrap();
        let data = dir.join("traj5.fields");
        let manifest = dir.join("traj5.json");
        save_field_pair(&data, &manifest, &pair, &lattice, 7, "cfg123").unwrap();

        let (loaded, mf) = load_field_pair(&data, &manifest, Some("cfg123")).unwrap();
        assert_eq!(loaded.psi.values(), pair.psi.values());
        assert_eq!(loaded.psi_tilde.values(), pair.psi_tilde.values());
        assert_eq!(loaded.step, 64);
        assert_eq!(mf.base_seed, 7);

        // wrong config hash is rejected
        assert!(matches!(
            load_field_pair(&data, &manifest, Some("other")),
            Err(Error::CheckpointMismatch(_))
        ));
    }
}
