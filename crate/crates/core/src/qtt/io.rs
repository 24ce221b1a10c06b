//! Plain binary container for QTT cores.
//!
//! Layout, all integers and floats little-endian:
//! magic (`QTTV` or `QTTM`), `u64` level `L`, `L + 1` `u64` ranks, then the
//! cores in order, each as row-major `f64` entries indexed `(a, j, b)`.

use std::io::{Read, Write};

use super::matrix::QttMatrix;
use super::train::{Core, Train};
use super::vector::QttVector;
use crate::{Error, Result};

const VECTOR_MAGIC: &[u8; 4] = b"QTTV";
const MATRIX_MAGIC: &[u8; 4] = b"QTTM";
const MAX_LEVEL: u64 = 64;
const MAX_RANK: u64 = 1 << 16;

fn write_train<W: Write>(w: &mut W, magic: &[u8; 4], t: &Train) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&(t.level() as u64).to_le_bytes())?;
    for r in t.ranks() {
        w.write_all(&(r as u64).to_le_bytes())?;
    }
    for c in &t.cores {
        for v in &c.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_train<R: Read>(r: &mut R, magic: &[u8; 4], mode: usize) -> Result<Train> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let level = read_u64(r)?;
    if level == 0 || level > MAX_LEVEL {
        return Err(Error::Format(format!("level {level} out of range")));
    }
    let mut ranks = Vec::with_capacity(level as usize + 1);
    for _ in 0..=level {
        let rk = read_u64(r)?;
        if rk == 0 || rk > MAX_RANK {
            return Err(Error::Format(format!("rank {rk} out of range")));
        }
        ranks.push(rk as usize);
    }
    if ranks[0] != 1 || ranks[level as usize] != 1 {
        return Err(Error::Format("boundary ranks must be 1".into()));
    }
    let mut cores = Vec::with_capacity(level as usize);
    for k in 0..level as usize {
        let (left, right) = (ranks[k], ranks[k + 1]);
        let mut data = vec![0.0; left * mode * right];
        let mut b = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
            if !v.is_finite() {
                return Err(Error::Format(format!("non-finite entry in core {k}")));
            }
        }
        cores.push(Core { left, mode, right, data });
    }
    Ok(Train { cores })
}

impl QttVector {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_train(w, VECTOR_MAGIC, &self.train)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        Ok(QttVector { train: read_train(r, VECTOR_MAGIC, 2)? })
    }
}

impl QttMatrix {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_train(w, MATRIX_MAGIC, &self.train)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        Ok(QttMatrix { train: read_train(r, MATRIX_MAGIC, 4)? })
    }
}
