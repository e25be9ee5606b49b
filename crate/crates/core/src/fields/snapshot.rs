//! Binary snapshot format for full solver states.
//!
//! A snapshot is a 64-byte header followed by ten planes of little-endian
//! `f64` in site order: the velocity components `u1 u2 u3`, the tensor
//! components `q11 q22 q12 q13 q23`, the temperature, and the pressure.
//! Values are stored bit-exactly, so a run restarted from a snapshot
//! continues the original trajectory without perturbation.
//!
//! Header layout (little-endian):
//!
//! | offset | size | field                 |
//! |--------|------|-----------------------|
//! | 0      | 8    | magic `"LCFSNAP1"`    |
//! | 8      | 4    | format version (`1`)  |
//! | 12     | 4    | dimension (`2`/`3`)   |
//! | 16     | 4    | points per axis `n`   |
//! | 20     | 4    | reserved (zero)       |
//! | 24     | 8    | simulation time `f64` |
//! | 32     | 8    | step counter `u64`    |
//! | 40     | 24   | reserved (zero)       |

use crate::error::{CoreError, Result};
use crate::fields::{Grid, ScalarField, TensorField, VectorField};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"LCFSNAP1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 64;
const PLANES: usize = 10;

/// A complete stored state: fields plus time and step counters.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub grid: Grid,
    pub u: VectorField,
    pub q: TensorField,
    pub theta: ScalarField,
    pub p: ScalarField,
    pub time: f64,
    pub step: u64,
}

fn write_plane(w: &mut impl Write, plane: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(plane.len() * 8);
    for v in plane {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_plane(r: &mut impl Read, len: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; len * 8];
    r.read_exact(&mut buf)
        .map_err(|e| CoreError::SnapshotFormat(format!("truncated plane data: {e}")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes a snapshot to `path`, replacing any existing file.
pub fn write_snapshot(path: &Path, snap: &Snapshot) -> Result<()> {
    let n = snap.grid.len();
    let planes: [&[f64]; PLANES] = [
        &snap.u.comps[0],
        &snap.u.comps[1],
        &snap.u.comps[2],
        &snap.q.comps[0],
        &snap.q.comps[1],
        &snap.q.comps[2],
        &snap.q.comps[3],
        &snap.q.comps[4],
        &snap.theta.data,
        &snap.p.data,
    ];
    for plane in &planes {
        if plane.len() != n {
            return Err(CoreError::SnapshotFormat(format!(
                "plane length {} does not match grid size {n}",
                plane.len()
            )));
        }
    }
    let mut header = [0u8; HEADER_LEN];
    header[0..8].copy_from_slice(MAGIC);
    header[8..12].copy_from_slice(&VERSION.to_le_bytes());
    header[12..16].copy_from_slice(&(snap.grid.dim() as u32).to_le_bytes());
    header[16..20].copy_from_slice(&(snap.grid.n() as u32).to_le_bytes());
    header[24..32].copy_from_slice(&snap.time.to_le_bytes());
    header[32..40].copy_from_slice(&snap.step.to_le_bytes());

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&header)?;
    for plane in &planes {
        write_plane(&mut w, plane)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a snapshot from `path`, validating header and payload size.
pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|e| CoreError::SnapshotFormat(format!("truncated header: {e}")))?;
    if &header[0..8] != MAGIC {
        return Err(CoreError::SnapshotFormat("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(CoreError::SnapshotFormat(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let dim = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
    let grid = Grid::new(n, dim)?;
    let time = f64::from_le_bytes(header[24..32].try_into().unwrap());
    let step = u64::from_le_bytes(header[32..40].try_into().unwrap());

    let len = grid.len();
    let mut planes = Vec::with_capacity(PLANES);
    for _ in 0..PLANES {
        planes.push(read_plane(&mut r, len)?);
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(CoreError::SnapshotFormat(
            "trailing bytes after the last plane".into(),
        ));
    }
    let mut it = planes.into_iter();
    let u = VectorField {
        comps: std::array::from_fn(|_| it.next().unwrap()),
    };
    let q = TensorField {
        comps: std::array::from_fn(|_| it.next().unwrap()),
    };
    let theta = ScalarField {
        data: it.next().unwrap(),
    };
    let p = ScalarField {
        data: it.next().unwrap(),
    };
    Ok(Snapshot {
        grid,
        u,
        q,
        theta,
        p,
        time,
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_snapshot(seed: u64) -> Snapshot {
        let grid = Grid::new(8, 2).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut plane = || -> Vec<f64> {
            (0..grid.len())
                .map(|i| match i % 5 {
                    // Exercise exact storage of awkward values.
                    0 => -0.0,
                    1 => f64::MIN_POSITIVE / 8.0,
                    2 => 1.0 / 3.0,
                    _ => r.random_range(-1e3..1e3),
                })
                .collect()
        };
        Snapshot {
            grid,
            u: VectorField {
                comps: std::array::from_fn(|_| plane()),
            },
            q: TensorField {
                comps: std::array::from_fn(|_| plane()),
            },
            theta: ScalarField { data: plane() },
            p: ScalarField { data: plane() },
            time: 0.1 + 0.2, // deliberately not exactly 0.3
            step: 12345678901234,
        }
    }

    fn bits(plane: &[f64]) -> Vec<u64> {
        plane.iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.snap");
        let snap = sample_snapshot(50);
        write_snapshot(&path, &snap).unwrap();
        let back = read_snapshot(&path).unwrap();
        assert_eq!(back.grid, snap.grid);
        assert_eq!(back.time.to_bits(), snap.time.to_bits());
        assert_eq!(back.step, snap.step);
        for a in 0..3 {
            assert_eq!(bits(&back.u.comps[a]), bits(&snap.u.comps[a]));
        }
        for c in 0..5 {
            assert_eq!(bits(&back.q.comps[c]), bits(&snap.q.comps[c]));
        }
        assert_eq!(bits(&back.theta.data), bits(&snap.theta.data));
        assert_eq!(bits(&back.p.data), bits(&snap.p.data));
    }

    #[test]
    fn file_size_is_header_plus_planes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.snap");
        let snap = sample_snapshot(51);
        write_snapshot(&path, &snap).unwrap();
        let meta = std::fs::metadata(&path).unwrap();
        assert_eq!(meta.len() as usize, 64 + 10 * snap.grid.len() * 8);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.snap");
        let snap = sample_snapshot(52);
        write_snapshot(&path, &snap).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_snapshot(&path),
            Err(CoreError::SnapshotFormat(_))
        ));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = MAGIC[0];
        bytes[8] = 9; // version 9
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_snapshot(&path),
            Err(CoreError::SnapshotFormat(_))
        ));
    }

    #[test]
    fn rejects_truncated_and_padded_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.snap");
        let snap = sample_snapshot(53);
        write_snapshot(&path, &snap).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            read_snapshot(&path),
            Err(CoreError::SnapshotFormat(_))
        ));

        let mut padded = bytes.clone();
        padded.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, &padded).unwrap();
        assert!(matches!(
            read_snapshot(&path),
            Err(CoreError::SnapshotFormat(_))
        ));
    }

    #[test]
    fn rejects_invalid_grid_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.snap");
        let snap = sample_snapshot(54);
        write_snapshot(&path, &snap).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[16..20].copy_from_slice(&12u32.to_le_bytes()); // n = 12
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_snapshot(&path),
            Err(CoreError::InvalidGrid { .. })
        ));
    }
}
