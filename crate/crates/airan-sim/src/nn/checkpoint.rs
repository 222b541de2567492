//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   : 4 bytes  "ARNC"
//! version : u32      (currently 1)
//! count   : u32      number of parameter entries
//! entry   : repeated `count` times
//!   name_len : u32
//!   name     : name_len bytes, UTF-8
//!   ndim     : u32
//!   dims     : ndim × u64
//!   values   : prod(dims) × f64
//! ```
//!
//! Values are always stored as 64-bit floats regardless of the in-memory
//! scalar type.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::{Error, Result, Scalar};

const MAGIC: &[u8; 4] = b"ARNC";
const VERSION: u32 = 1;

pub fn save<S: Scalar>(store: &ParamStore<S>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(store.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, value) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&(value.shape().len() as u32).to_le_bytes()).map_err(io)?;
        for &d in value.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
        }
        for v in value.to_f64_vec() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load<S: Scalar>(path: &Path) -> Result<ParamStore<S>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let count = read_u32(&mut r, path)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r, path)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, path)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint(format!("{}: non-UTF-8 name", path.display())))?;
        let ndim = read_u32(&mut r, path)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b, path)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b, path)?;
            values.push(S::c(f64::from_le_bytes(b)));
        }
        let t = Tensor::new(shape, values)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        store.insert(&name, t);
    }
    Ok(store)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::io(path, e))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}
