//! Versioned binary tensor checkpoints: a 4-byte kind tag, format version,
//! then each tensor as a (rows, cols) header plus row-major f64 data, all
//! little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const VERSION: u32 = 1;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.into(), source: e }
}

pub fn write_tensors(path: &Path, tag: &str, tensors: &[Array2<f64>]) -> Result<()> {
    assert_eq!(tag.len(), 4, "checkpoint tags are 4 ascii bytes");
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(path, e))?;
        }
    }
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    w.write_all(tag.as_bytes()).map_err(|e| io_err(path, e))?;
    w.write_all(&VERSION.to_le_bytes()).map_err(|e| io_err(path, e))?;
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(|e| io_err(path, e))?;
    for t in tensors {
        w.write_all(&(t.nrows() as u32).to_le_bytes()).map_err(|e| io_err(path, e))?;
        w.write_all(&(t.ncols() as u32).to_le_bytes()).map_err(|e| io_err(path, e))?;
        for v in t.iter() {
            w.write_all(&v.to_le_bytes()).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_tensors(path: &Path, tag: &str) -> Result<Vec<Array2<f64>>> {
    assert_eq!(tag.len(), 4);
    let mut r = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut tag_buf = [0u8; 4];
    r.read_exact(&mut tag_buf).map_err(|e| io_err(path, e))?;
    if tag_buf != tag.as_bytes() {
        return Err(Error::Checkpoint(format!(
            "wrong checkpoint kind: found {:?}, expected {tag:?}",
            String::from_utf8_lossy(&tag_buf)
        )));
    }
    let mut u32_buf = [0u8; 4];
    r.read_exact(&mut u32_buf).map_err(|e| io_err(path, e))?;
    let version = u32::from_le_bytes(u32_buf);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    r.read_exact(&mut u32_buf).map_err(|e| io_err(path, e))?;
    let count = u32::from_le_bytes(u32_buf) as usize;
    let mut tensors = Vec::with_capacity(count);
    let mut f64_buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut u32_buf).map_err(|e| io_err(path, e))?;
        let rows = u32::from_le_bytes(u32_buf) as usize;
        r.read_exact(&mut u32_buf).map_err(|e| io_err(path, e))?;
        let cols = u32::from_le_bytes(u32_buf) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut f64_buf).map_err(|e| io_err(path, e))?;
            data.push(f64::from_le_bytes(f64_buf));
        }
        tensors.push(
            Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| Error::Checkpoint(format!("tensor shape: {e}")))?,
        );
    }
    Ok(tensors)
}
