//! Compact binary and CSV forms of click records.
//!
//! Binary layout (little endian): magic `ORTR`, format version u32, dt f64,
//! n_bins u64, seed u64, 8-byte parameter digest, then the clicks packed
//! eight bins per byte, least significant bit first.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::trajectories::TrajectoryRecord;

const MAGIC: &[u8; 4] = b"ORTR";
const VERSION: u32 = 1;

pub fn write_binary<W: Write>(rec: &TrajectoryRecord, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&rec.dt.to_le_bytes())?;
    w.write_all(&(rec.n_bins as u64).to_le_bytes())?;
    w.write_all(&rec.seed.to_le_bytes())?;
    w.write_all(&rec.params_used.hash8())?;
    let mut packed = vec![0u8; rec.n_bins.div_ceil(8)];
    for &b in &rec.click_bins {
        packed[b / 8] |= 1 << (b % 8);
    }
    w.write_all(&packed)?;
    Ok(())
}

/// Read a record; `params` must hash to the digest stored in the header.
pub fn read_binary<R: Read>(mut r: R, params: &ModelParams) -> Result<TrajectoryRecord> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a trajectory record".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != VERSION {
        return Err(Error::Format(format!("unsupported record version {}", u32::from_le_bytes(b4))));
    }
    r.read_exact(&mut b8)?;
    let dt = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let n_bins = usize::try_from(u64::from_le_bytes(b8)).map_err(|_| Error::Format("n_bins overflow".into()))?;
    r.read_exact(&mut b8)?;
    let seed = u64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    if b8 != params.hash8() {
        return Err(Error::Incompatible("record was produced with different parameters".into()));
    }
    let mut packed = vec![0u8; n_bins.div_ceil(8)];
    r.read_exact(&mut packed)?;
    let click_bins = (0..n_bins).filter(|&b| packed[b / 8] & (1 << (b % 8)) != 0).collect();
    Ok(TrajectoryRecord {
        dt,
        n_bins,
        click_bins,
        seed,
        params_used: *params,
    })
}

/// CSV with columns `bin,time,click`.
pub fn write_csv<W: Write>(rec: &TrajectoryRecord, mut w: W) -> Result<()> {
    writeln!(w, "bin,time,click")?;
    let clicks = rec.clicks();
    for (k, c) in clicks.iter().enumerate() {
        writeln!(w, "{k},{},{c}", k as f64 * rec.dt)?;
    }
    Ok(())
}
