//! Self-describing binary weights format for [`RefineNet`].
//!
//! Layout (all integers little-endian u32):
//!
//! ```text
//! "UAW1" | version=1 | n_mels | levels | base_channels | n_tensors
//! then per tensor, in the network's canonical traversal order:
//!   name_len | name (utf-8) | rank | dims[rank] | data (f32 LE, row-major)
//! ```
//!
//! The file carries every tensor the network owns, including batch-norm
//! running statistics. Reading validates the header, every tensor name and
//! shape against a freshly scaffolded network, and the positivity of running
//! variances; any disagreement is a [`Error::WeightsMismatch`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::unet::{scaffold, NetworkShape, RefineNet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"UAW1";
const VERSION: u32 = 1;

fn write_u32<W: Write>(w: &mut W, v: u32, path: &Path) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))
}

fn read_u32<R: Read>(r: &mut R, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(buf))
}

/// Serializes the network (architecture metadata plus every tensor) to
/// `path`. The traversal order is fixed, so the same network always produces
/// the same bytes.
pub fn write_weights<P: AsRef<Path>>(path: P, net: &mut RefineNet<f32>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);

    // First pass: count tensors (cheap, metadata only).
    let mut n_tensors = 0u32;
    net.for_each_tensor(false, &mut |_, _| n_tensors += 1);

    let shape = net.shape();
    w.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    write_u32(&mut w, VERSION, path)?;
    write_u32(&mut w, shape.n_mels as u32, path)?;
    write_u32(&mut w, shape.levels as u32, path)?;
    write_u32(&mut w, shape.base_channels as u32, path)?;
    write_u32(&mut w, n_tensors, path)?;

    let mut result = Ok(());
    net.for_each_tensor(false, &mut |name, t| {
        if result.is_err() {
            return;
        }
        result = (|| -> Result<()> {
            let bytes = name.as_bytes();
            write_u32(&mut w, bytes.len() as u32, path)?;
            w.write_all(bytes).map_err(|e| Error::io(path, e))?;
            write_u32(&mut w, t.value.ndim() as u32, path)?;
            for &d in t.value.shape() {
                write_u32(&mut w, d as u32, path)?;
            }
            for &v in t.value.iter() {
                w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
            }
            Ok(())
        })();
    });
    result?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a weights file back into a ready-to-use network.
pub fn read_weights<P: AsRef<Path>>(path: P) -> Result<RefineNet<f32>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::format(path, "not a weights file (bad magic)"));
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported weights version {version}")));
    }
    let n_mels = read_u32(&mut r, path)? as usize;
    let levels = read_u32(&mut r, path)? as usize;
    let base_channels = read_u32(&mut r, path)? as usize;
    let n_tensors = read_u32(&mut r, path)? as usize;

    let shape = NetworkShape { n_mels, levels, base_channels };
    shape
        .validate()
        .map_err(|e| Error::format(path, format!("invalid architecture metadata: {e}")))?;
    let mut net: RefineNet<f32> = scaffold(shape)?;

    // Load the stored tensors in file order.
    let mut stored: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = read_u32(&mut r, path)? as usize;
        if name_len > 4096 {
            return Err(Error::format(path, "implausible tensor name length"));
        }
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf).map_err(|e| Error::io(path, e))?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::format(path, "tensor name is not valid utf-8"))?;
        let rank = read_u32(&mut r, path)? as usize;
        if rank > 8 {
            return Err(Error::format(path, format!("implausible tensor rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut r, path)? as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = vec![0f32; len];
        let mut buf = [0u8; 4];
        for v in &mut data {
            r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            *v = f32::from_le_bytes(buf);
        }
        stored.push((name, dims, data));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after final tensor"));
    }

    // Match against the scaffold's canonical traversal, strictly in order.
    let mut idx = 0usize;
    let mut mismatch: Option<String> = None;
    net.for_each_tensor(false, &mut |name, mut t| {
        if mismatch.is_some() {
            return;
        }
        let Some((stored_name, dims, data)) = stored.get(idx) else {
            mismatch = Some(format!("file ends before tensor '{name}'"));
            return;
        };
        if stored_name != &name {
            mismatch = Some(format!("expected tensor '{name}', file has '{stored_name}'"));
            return;
        }
        if dims != t.value.shape() {
            mismatch = Some(format!(
                "tensor '{name}' has shape {:?} in file, expected {:?}",
                dims,
                t.value.shape()
            ));
            return;
        }
        if name.ends_with(".running_var") && data.iter().any(|&v| !(v > 0.0)) {
            mismatch = Some(format!("tensor '{name}' must be strictly positive"));
            return;
        }
        if data.iter().any(|v| !v.is_finite()) {
            mismatch = Some(format!("tensor '{name}' contains non-finite values"));
            return;
        }
        for (slot, &v) in t.value.iter_mut().zip(data.iter()) {
            *slot = v;
        }
        idx += 1;
    });
    if let Some(m) = mismatch {
        return Err(Error::WeightsMismatch(m));
    }
    if idx != stored.len() {
        return Err(Error::WeightsMismatch(format!(
            "file has {} tensors, network expects {}",
            stored.len(),
            idx
        )));
    }
    Ok(net)
}
