//! Little-endian binary container for named tensors.
//!
//! Layout: magic `CNTM`, u32 version, u64 fingerprint, u64 step, f64 dev
//! score, u8 value width (4 or 8), u32 tensor count, then per tensor a u32
//! name length, the UTF-8 name, u32 rank, u64 extents and the raw values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use cntm_core::trainer::Checkpoint;
use cntm_core::{Real, Tensor};

use crate::config::Precision;
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"CNTM";
pub const VERSION: u32 = 1;

/// Guards against absurd allocations from corrupt headers.
const MAX_ELEMENTS: u64 = 1 << 32;

pub fn write_checkpoint<T: Real, W: Write>(w: &mut W, c: &Checkpoint<T>, precision: Precision) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u64::<LE>(c.fingerprint)?;
    w.write_u64::<LE>(c.step)?;
    w.write_f64::<LE>(c.dev_score)?;
    w.write_u8(precision.code())?;
    w.write_u32::<LE>(c.tensors.len() as u32)?;
    for (name, t) in c.names.iter().zip(&c.tensors) {
        w.write_u32::<LE>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LE>(t.rank() as u32)?;
        for &e in t.shape() {
            w.write_u64::<LE>(e as u64)?;
        }
        for &x in t.data() {
            match precision {
                Precision::F32 => w.write_f32::<LE>(x.as_f64() as f32)?,
                Precision::F64 => w.write_f64::<LE>(x.as_f64())?,
            }
        }
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.into())
}

/// Returns the checkpoint and the precision it was stored in.
pub fn read_checkpoint<T: Real, R: Read>(r: &mut R) -> std::io::Result<(Checkpoint<T>, Precision)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a CNTM container"));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(bad(format!("unsupported container version {version}")));
    }
    let fingerprint = r.read_u64::<LE>()?;
    let step = r.read_u64::<LE>()?;
    let dev_score = r.read_f64::<LE>()?;
    let precision = match r.read_u8()? {
        4 => Precision::F32,
        8 => Precision::F64,
        w => return Err(bad(format!("unknown value width {w}"))),
    };
    let count = r.read_u32::<LE>()? as usize;
    let mut names = Vec::with_capacity(count.min(1 << 16));
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.read_u32::<LE>()? as usize;
        let mut name = vec![0u8; len.min(1 << 20)];
        if len > name.len() {
            return Err(bad("tensor name too long"));
        }
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = r.read_u32::<LE>()? as usize;
        if rank > 8 {
            return Err(bad(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let e = r.read_u64::<LE>()?;
            numel = numel.saturating_mul(e);
            shape.push(e as usize);
        }
        if numel > MAX_ELEMENTS {
            return Err(bad(format!("tensor {name} has {numel} elements")));
        }
        let mut data = Vec::with_capacity(numel as usize);
        for _ in 0..numel {
            let x = match precision {
                Precision::F32 => f64::from(r.read_f32::<LE>()?),
                Precision::F64 => r.read_f64::<LE>()?,
            };
            data.push(T::lit(x));
        }
        let t = Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?;
        names.push(name);
        tensors.push(t);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after the last tensor"));
    }
    Ok((
        Checkpoint {
            names,
            tensors,
            step,
            dev_score,
            fingerprint,
        },
        precision,
    ))
}

pub fn save<T: Real>(path: &Path, c: &Checkpoint<T>, precision: Precision) -> Result<()> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_checkpoint(&mut w, c, precision)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> Result<(Checkpoint<T>, Precision)> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_checkpoint(&mut BufReader::new(f)).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData | std::io::ErrorKind::UnexpectedEof => CliError::data(path, e),
        _ => CliError::io(path, e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f64> {
        Checkpoint {
            names: vec!["a.w".into(), "b".into()],
            tensors: vec![
                Tensor::matrix(2, 3, vec![0.1, -2.5, 3.0, 1e-30, 7.0, -0.0]).unwrap(),
                Tensor::vector(vec![f64::MAX]),
            ],
            step: 42,
            dev_score: 0.125,
            fingerprint: 0xDEAD_BEEF,
        }
    }

    #[test]
    fn double_round_trip_is_exact() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample(), Precision::F64).unwrap();
        assert_eq!(&buf[..4], b"CNTM");
        let (back, p) = read_checkpoint::<f64, _>(&mut buf.as_slice()).unwrap();
        assert_eq!(p, Precision::F64);
        assert_eq!(back, sample());
    }

    #[test]
    fn single_precision_round_trip() {
        let c = Checkpoint {
            tensors: vec![Tensor::vector(vec![0.1f32, 3.5]), Tensor::scalar(-1.0f32)],
            ..Checkpoint::<f32> {
                names: vec!["x".into(), "y".into()],
                tensors: vec![],
                step: 1,
                dev_score: 2.0,
                fingerprint: 3,
            }
        };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &c, Precision::F32).unwrap();
        let (back, _) = read_checkpoint::<f32, _>(&mut buf.as_slice()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample(), Precision::F64).unwrap();
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(read_checkpoint::<f64, _>(&mut bad_magic.as_slice()).is_err());
        let truncated = &buf[..buf.len() - 3];
        assert!(read_checkpoint::<f64, _>(&mut &truncated[..]).is_err());
        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(read_checkpoint::<f64, _>(&mut trailing.as_slice()).is_err());
    }
}
