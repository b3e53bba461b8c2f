//! Binary snapshots of bulk arrays.
//!
//! Layout, all little-endian:
//!
//! | bytes            | content                                   |
//! |------------------|-------------------------------------------|
//! | 4                | magic `FPLB`                              |
//! | 4 (u32)          | format version (1)                        |
//! | 4 (u32)          | rank                                      |
//! | 8 * rank (u64)   | shape                                     |
//! | 8 (u64)          | time count                                |
//! | 4 (u32)          | scalar width in bytes (8)                 |
//! | payload          | `time_count * prod(shape)` f64, row-major, time-major |
//! | trailer          | CRC-32 of the header, then one CRC-32 per 4096-byte payload block |
//!
//! Object metadata (grid, time grid, weights) lives in a JSON sidecar next to the
//! snapshot, `<file>.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpe::DensityCurve;
use crate::grid::{Grid, TimeGrid};
use crate::lagrangian::PathEnsemble;

use super::write_atomic;

pub const MAGIC: &[u8; 4] = b"FPLB";
pub const FORMAT_VERSION: u32 = 1;
pub const SCALAR_WIDTH: u32 = 8;
pub const CHECKSUM_BLOCK: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub shape: Vec<u64>,
    pub time_count: u64,
    pub data: Vec<f64>,
}

pub fn header_len(rank: usize) -> usize {
    4 + 4 + 4 + 8 * rank + 8 + 4
}

pub fn trailer_len(payload_bytes: usize) -> usize {
    4 * (1 + payload_bytes.div_ceil(CHECKSUM_BLOCK))
}

impl Snapshot {
    pub fn new(shape: Vec<u64>, time_count: u64, data: Vec<f64>) -> Result<Self> {
        let s = Self { shape, time_count, data };
        if s.expected_len()? != s.data.len() {
            return Err(Error::Integrity(format!("payload has {} values, header declares {}", s.data.len(), s.expected_len()?)));
        }
        Ok(s)
    }

    fn expected_len(&self) -> Result<usize> {
        self.shape
            .iter()
            .chain(std::iter::once(&self.time_count))
            .try_fold(1usize, |acc, &n| acc.checked_mul(usize::try_from(n).ok()?))
            .ok_or_else(|| Error::Integrity("declared size overflows".into()))
    }

    pub fn file_len(&self) -> usize {
        let payload = 8 * self.data.len();
        header_len(self.shape.len()) + payload + trailer_len(payload)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.file_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for n in &self.shape {
            out.extend_from_slice(&n.to_le_bytes());
        }
        out.extend_from_slice(&self.time_count.to_le_bytes());
        out.extend_from_slice(&SCALAR_WIDTH.to_le_bytes());
        let header_end = out.len();
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let header_crc = crc32fast::hash(&out[..header_end]);
        let block_crcs: Vec<u32> = out[header_end..].chunks(CHECKSUM_BLOCK).map(crc32fast::hash).collect();
        out.extend_from_slice(&header_crc.to_le_bytes());
        for c in block_crcs {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let take = |at: usize, n: usize| -> Result<&[u8]> {
            bytes.get(at..at + n).ok_or_else(|| Error::Integrity(format!("file truncated at offset {at}")))
        };
        let u32_at = |at: usize| -> Result<u32> { Ok(u32::from_le_bytes(take(at, 4)?.try_into().unwrap())) };
        let u64_at = |at: usize| -> Result<u64> { Ok(u64::from_le_bytes(take(at, 8)?.try_into().unwrap())) };
        if take(0, 4)? != MAGIC {
            return Err(Error::Integrity("bad magic at offset 0".into()));
        }
        let version = u32_at(4)?;
        if version != FORMAT_VERSION {
            return Err(Error::Integrity(format!("unsupported version {version} at offset 4")));
        }
        let rank = u32_at(8)? as usize;
        if rank > 64 {
            return Err(Error::Integrity(format!("implausible rank {rank} at offset 8")));
        }
        let shape = (0..rank).map(|i| u64_at(12 + 8 * i)).collect::<Result<Vec<_>>>()?;
        let time_count = u64_at(12 + 8 * rank)?;
        let width = u32_at(20 + 8 * rank)?;
        if width != SCALAR_WIDTH {
            return Err(Error::Integrity(format!("unsupported scalar width {width} at offset {}", 20 + 8 * rank)));
        }
        let hl = header_len(rank);
        let probe = Self { shape, time_count, data: Vec::new() };
        let n = probe.expected_len()?;
        let payload_bytes = n.checked_mul(8).ok_or_else(|| Error::Integrity("declared size overflows".into()))?;
        let expected = hl + payload_bytes + trailer_len(payload_bytes);
        if bytes.len() != expected {
            return Err(Error::Integrity(format!("file has {} bytes, header declares {expected}", bytes.len())));
        }
        let trailer = hl + payload_bytes;
        if crc32fast::hash(&bytes[..hl]) != u32_at(trailer)? {
            return Err(Error::Integrity("header checksum mismatch at offset 0".into()));
        }
        for (i, block) in bytes[hl..trailer].chunks(CHECKSUM_BLOCK).enumerate() {
            if crc32fast::hash(block) != u32_at(trailer + 4 * (i + 1))? {
                return Err(Error::Integrity(format!("checksum mismatch in block at offset {}", hl + i * CHECKSUM_BLOCK)));
            }
        }
        let data = bytes[hl..trailer].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { data, ..probe })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Sidecar {
    DensityCurve { grid: Grid, timegrid: TimeGrid, clamped_mass: f64 },
    PathEnsemble { dim: usize, n_paths: usize, steps: usize, start: f64, dt: f64, seed: u64, weights: Vec<f64>, exited: Vec<bool>, domain: Option<Grid> },
    Coefficients { grid: Grid, times: Vec<f64> },
}

impl Sidecar {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sidecar serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Integrity(format!("bad sidecar: {e}")))
    }
}

pub fn curve_to_snapshot(nu: &DensityCurve) -> (Snapshot, Sidecar) {
    let shape = vec![nu.grid.points_per_axis as u64; nu.grid.dim];
    let snap = Snapshot { shape, time_count: (nu.timegrid.steps + 1) as u64, data: nu.values.clone() };
    (snap, Sidecar::DensityCurve { grid: nu.grid.clone(), timegrid: nu.timegrid, clamped_mass: nu.clamped_mass })
}

pub fn curve_from_snapshot(snap: Snapshot, sidecar: Sidecar) -> Result<DensityCurve> {
    let Sidecar::DensityCurve { grid, timegrid, clamped_mass } = sidecar else {
        return Err(Error::Integrity("sidecar does not describe a density curve".into()));
    };
    if snap.shape != vec![grid.points_per_axis as u64; grid.dim] || snap.time_count != (timegrid.steps + 1) as u64 {
        return Err(Error::Integrity("snapshot shape does not match the sidecar grid".into()));
    }
    let mut nu = DensityCurve::from_values(grid, timegrid, snap.data);
    nu.clamped_mass = clamped_mass;
    Ok(nu)
}

/// Shape `[4, N, d]` per time node: states, then the drift, martingale and
/// quadratic-variation increments leading into the node (zero at the first node).
pub fn ensemble_to_snapshot(ens: &PathEnsemble) -> (Snapshot, Sidecar) {
    let (n, m, d) = (ens.n_paths, ens.steps, ens.dim);
    let mut data = Vec::with_capacity(4 * n * d * (m + 1));
    for k in 0..=m {
        for p in 0..n {
            data.extend_from_slice(ens.state(p, k));
        }
        for arr in [&ens.drift, &ens.martingale, &ens.quadratic_variation] {
            for p in 0..n {
                if k == 0 {
                    data.extend(std::iter::repeat_n(0.0, d));
                } else {
                    let i = (p * m + k - 1) * d;
                    data.extend_from_slice(&arr[i..i + d]);
                }
            }
        }
    }
    let sidecar = Sidecar::PathEnsemble {
        dim: d,
        n_paths: n,
        steps: m,
        start: ens.start,
        dt: ens.dt,
        seed: ens.seed,
        weights: ens.weights.clone(),
        exited: ens.exited.clone(),
        domain: ens.domain.clone(),
    };
    (Snapshot { shape: vec![4, n as u64, d as u64], time_count: (m + 1) as u64, data }, sidecar)
}

pub fn ensemble_from_snapshot(snap: Snapshot, sidecar: Sidecar) -> Result<PathEnsemble> {
    let Sidecar::PathEnsemble { dim, n_paths, steps, start, dt, seed, weights, exited, domain } = sidecar else {
        return Err(Error::Integrity("sidecar does not describe a path ensemble".into()));
    };
    let (n, m, d) = (n_paths, steps, dim);
    if snap.shape != [4, n as u64, d as u64] || snap.time_count != (m + 1) as u64 || weights.len() != n || exited.len() != n {
        return Err(Error::Integrity("snapshot shape does not match the sidecar".into()));
    }
    let mut states = vec![0.0; n * (m + 1) * d];
    let mut incs = [vec![0.0; n * m * d], vec![0.0; n * m * d], vec![0.0; n * m * d]];
    let block = n * d;
    for k in 0..=m {
        let base = 4 * block * k;
        for p in 0..n {
            let src = base + p * d;
            states[(p * (m + 1) + k) * d..][..d].copy_from_slice(&snap.data[src..src + d]);
            if k > 0 {
                for (c, arr) in incs.iter_mut().enumerate() {
                    let src = base + (c + 1) * block + p * d;
                    arr[(p * m + k - 1) * d..][..d].copy_from_slice(&snap.data[src..src + d]);
                }
            }
        }
    }
    let [drift, martingale, quadratic_variation] = incs;
    Ok(PathEnsemble { dim, n_paths, steps, start, dt, seed, states, drift, martingale, quadratic_variation, weights, exited, domain })
}

/// Write a snapshot and its sidecar.
pub fn save(path: &Path, snap: &Snapshot, sidecar: &Sidecar) -> Result<()> {
    snap.write(path)?;
    write_atomic(&sidecar_path(path), sidecar.to_json().as_bytes())
}

pub fn load(path: &Path) -> Result<(Snapshot, Sidecar)> {
    let snap = Snapshot::read(path)?;
    let sidecar = Sidecar::from_json(&std::fs::read_to_string(sidecar_path(path))?)?;
    Ok((snap, sidecar))
}

pub fn save_curve(path: &Path, nu: &DensityCurve) -> Result<()> {
    let (s, c) = curve_to_snapshot(nu);
    save(path, &s, &c)
}

pub fn load_curve(path: &Path) -> Result<DensityCurve> {
    let (s, c) = load(path)?;
    curve_from_snapshot(s, c)
}

pub fn save_ensemble(path: &Path, ens: &PathEnsemble) -> Result<()> {
    let (s, c) = ensemble_to_snapshot(ens);
    save(path, &s, &c)
}

pub fn load_ensemble(path: &Path) -> Result<PathEnsemble> {
    let (s, c) = load(path)?;
    ensemble_from_snapshot(s, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::CoefficientField;
    use crate::grid::Boundary;
    use crate::lagrangian::{simulate_ensemble, InitialLaw};

    #[test]
    fn empty_roundtrip() {
        let s = Snapshot::new(vec![5], 0, Vec::new()).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), header_len(1) + 4);
        assert_eq!(Snapshot::from_bytes(&bytes).unwrap(), s);
    }

    #[test]
    fn header_is_bit_exact() {
        let s = Snapshot::new(vec![2, 3], 1, vec![1.0; 6]).unwrap();
        let b = s.to_bytes();
        assert_eq!(&b[..4], b"FPLB");
        assert_eq!(b[4..8], 1u32.to_le_bytes());
        assert_eq!(b[8..12], 2u32.to_le_bytes());
        assert_eq!(b[12..20], 2u64.to_le_bytes());
        assert_eq!(b[20..28], 3u64.to_le_bytes());
        assert_eq!(b[28..36], 1u64.to_le_bytes());
        assert_eq!(b[36..40], 8u32.to_le_bytes());
        assert_eq!(b[40..48], 1f64.to_le_bytes());
    }

    #[test]
    fn curve_roundtrip_is_bitwise() {
        let g = Grid::new(2, 1.0, 4, Boundary::Periodic).unwrap();
        let tg = TimeGrid::new(1.0, 2).unwrap();
        let nu = DensityCurve::from_fn(g, tg, |t, x| (t + x[0]).sin() * 1e-300 + x[1] / 3.0);
        let (s, c) = curve_to_snapshot(&nu);
        let back = curve_from_snapshot(Snapshot::from_bytes(&s.to_bytes()).unwrap(), c).unwrap();
        assert!(back.values.iter().zip(&nu.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn corruption_names_the_offset() {
        let s = Snapshot::new(vec![1000], 2, (0..2000).map(|i| i as f64).collect()).unwrap();
        let mut b = s.to_bytes();
        let hl = header_len(1);
        b[hl + 5000] ^= 1;
        match Snapshot::from_bytes(&b) {
            Err(Error::Integrity(msg)) => assert!(msg.contains(&format!("offset {}", hl + 4096)), "{msg}"),
            other => panic!("{other:?}"),
        }
        let mut b = s.to_bytes();
        b.pop();
        assert!(matches!(Snapshot::from_bytes(&b), Err(Error::Integrity(_))));
    }

    #[test]
    fn ensemble_roundtrip() {
        let tg = TimeGrid::new(1.0, 16).unwrap();
        let ens = simulate_ensemble(&CoefficientField::ou(2, 1.0, 1.0), &InitialLaw::PointMass { x: vec![0.5, 0.0] }, tg, 300, 9, None).unwrap();
        let (s, c) = ensemble_to_snapshot(&ens);
        let bytes = s.to_bytes();
        let payload = 8 * 4 * 300 * 2 * 17;
        assert_eq!(bytes.len(), header_len(3) + payload + trailer_len(payload));
        let back = ensemble_from_snapshot(Snapshot::from_bytes(&bytes).unwrap(), Sidecar::from_json(&c.to_json()).unwrap()).unwrap();
        assert_eq!(back, ens);
    }
}
