//! MELT: the on-disk mel spectrogram container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "MELT"
//! version u32      currently 1
//! n_mels  u32
//! n_frames u32
//! space   u8       0 = linear amplitude, 1 = dB-like, 2 = normalized
//! cfg_len u32      length of the embedded config document
//! cfg     cfg_len bytes, canonical `MelConfig::serialize` text
//! values  n_frames * n_mels f32, frame-major
//! ```
//!
//! The embedded config is canonical and the value space tag must agree with
//! it, so write→read→write cycles are byte-identical.

use crate::dsp::{MelSpectrogram, ValueSpace};
use crate::error::{Error, Result};
use crate::config::MelConfig;
use ndarray::Array2;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MELT";
const VERSION: u32 = 1;

fn space_tag(space: ValueSpace) -> u8 {
    match space {
        ValueSpace::LinearAmplitude => 0,
        ValueSpace::Db { .. } => 1,
        ValueSpace::Normalized => 2,
    }
}

/// Serializes a validated mel spectrogram.
pub fn write_melt(path: impl AsRef<Path>, m: &MelSpectrogram) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_melt(m)?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

/// Reads and validates a mel spectrogram.
pub fn read_melt(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_melt(&bytes).map_err(|message| Error::format(path, message))
}

pub(crate) fn encode_melt(m: &MelSpectrogram) -> Result<Vec<u8>> {
    m.validate()?;
    let cfg_text = m.config.serialize();
    let (frames, mels) = m.values.dim();
    let mut out = Vec::with_capacity(21 + cfg_text.len() + frames * mels * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(mels as u32).to_le_bytes());
    out.extend_from_slice(&(frames as u32).to_le_bytes());
    out.push(space_tag(m.space));
    out.extend_from_slice(&(cfg_text.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg_text.as_bytes());
    for &v in m.values.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub(crate) fn decode_melt(bytes: &[u8]) -> std::result::Result<MelSpectrogram, String> {
    let mut off = 0usize;
    let mut take = |len: usize| -> std::result::Result<&[u8], String> {
        let s = bytes.get(off..off + len).ok_or_else(|| "file truncated".to_string())?;
        off += len;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err("bad magic; not a MELT file".to_string());
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(format!("unsupported version {version} (expected {VERSION})"));
    }
    let n_mels = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let n_frames = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let tag = take(1)?[0];
    let cfg_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let cfg_text = std::str::from_utf8(take(cfg_len)?).map_err(|_| "config is not UTF-8".to_string())?;
    let config = MelConfig::parse(cfg_text).map_err(|e| format!("embedded config: {e}"))?;

    let value_bytes = take(n_frames * n_mels * 4)?;
    if off != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - off));
    }
    let values: Vec<f64> = value_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let values = Array2::from_shape_vec((n_frames, n_mels), values).expect("sized above");

    let space = ValueSpace::of(&config.split().1);
    if space_tag(space) != tag {
        return Err(format!(
            "value-space tag {tag} disagrees with the embedded config (implies {})",
            space_tag(space)
        ));
    }
    let m = MelSpectrogram { values, space, config };
    m.validate().map_err(|e| e.to_string())?;
    Ok(m)
}
