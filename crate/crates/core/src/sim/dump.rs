//! Binary dump of per-cycle demodulated records.
//!
//! Layout, little-endian: magic `STRB1`, u32 version, u64 trajectory count,
//! u64 cycle count, then for each trajectory and cycle the pair
//! (Y_cos, Y_sin) as f64. Run metadata lives in a JSON sidecar next to the
//! dump, at `<path>.meta.json`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"STRB1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpMeta {
    /// Number of leading cycles belonging to pulse A.
    pub split: usize,
    pub psn_a: f64,
    pub psn_b: f64,
    pub f_d: f64,
    pub ground_ref: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordDump {
    pub cycles: usize,
    /// Row-major by trajectory.
    pub data: Vec<[f64; 2]>,
    pub meta: DumpMeta,
}

impl RecordDump {
    pub fn n_traj(&self) -> usize {
        if self.cycles == 0 {
            0
        } else {
            self.data.len() / self.cycles
        }
    }

    pub fn trajectory(&self, i: usize) -> &[[f64; 2]] {
        &self.data[i * self.cycles..(i + 1) * self.cycles]
    }

    /// Cosine-quadrature pulse sums (q_A, q_B) of every trajectory.
    pub fn pulse_sums(&self) -> (Vec<f64>, Vec<f64>) {
        (0..self.n_traj())
            .map(|i| {
                let t = self.trajectory(i);
                let a = t[..self.meta.split].iter().map(|c| c[0]).sum::<f64>();
                let b = t[self.meta.split..].iter().map(|c| c[0]).sum::<f64>();
                (a, b)
            })
            .unzip()
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write(path: &Path, dump: &RecordDump) -> Result<()> {
    if dump.cycles == 0 || dump.data.len() % dump.cycles != 0 {
        return Err(Error::Format(
            "data length is not a multiple of the cycle count".into(),
        ));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dump.n_traj() as u64).to_le_bytes())?;
    w.write_all(&(dump.cycles as u64).to_le_bytes())?;
    for c in &dump.data {
        w.write_all(&c[0].to_le_bytes())?;
        w.write_all(&c[1].to_le_bytes())?;
    }
    w.flush()?;
    std::fs::write(meta_path(path), serde_json::to_vec_pretty(&dump.meta)?)?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read(path: &Path) -> Result<RecordDump> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n_traj = read_u64(&mut r)? as usize;
    let cycles = read_u64(&mut r)? as usize;
    let total = n_traj
        .checked_mul(cycles)
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    let mut data = Vec::with_capacity(total.min(1 << 24));
    let mut b = [0u8; 16];
    for _ in 0..total {
        r.read_exact(&mut b)
            .map_err(|_| Error::Format("truncated record data".into()))?;
        data.push([
            f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
            f64::from_le_bytes(b[8..].try_into().expect("8 bytes")),
        ]);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", rest.len())));
    }
    let meta: DumpMeta = serde_json::from_slice(&std::fs::read(meta_path(path))?)?;
    if meta.split > cycles {
        return Err(Error::Format("split exceeds cycle count".into()));
    }
    Ok(RecordDump { cycles, data, meta })
}
