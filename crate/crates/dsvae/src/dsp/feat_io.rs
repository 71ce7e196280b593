//! Feature cache files.
//!
//! Layout: magic `DSFEAT1`, u32 T, u32 d (little-endian), then `T*d`
//! little-endian f64 values, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 7] = b"DSFEAT1";

pub fn write_features(path: &Path, frames: &Tensor) -> Result<()> {
    if frames.rank() != 2 {
        return Err(Error::shape(
            "write_features",
            format!("expected rank-2 frames, got {:?}", frames.shape()),
        ));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(frames.rows() as u32).to_le_bytes())?;
    w.write_all(&(frames.cols() as u32).to_le_bytes())?;
    for v in frames.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{}: too short for magic", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}",
            path.display(),
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let t = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4) as usize;
    let mut data = Vec::with_capacity(t * d);
    let mut b8 = [0u8; 8];
    for _ in 0..t * d {
        r.read_exact(&mut b8)
            .map_err(|_| Error::Format(format!("{}: truncated payload", path.display())))?;
        data.push(f64::from_le_bytes(b8));
    }
    Tensor::new(vec![t, d], data)
}
