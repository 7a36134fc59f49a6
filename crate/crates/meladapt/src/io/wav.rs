//! Minimal RIFF/WAVE support: 16-bit PCM, mono, little-endian.

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

/// Decodes a 16-bit PCM mono WAV file. Samples map to `f64` by dividing by
/// 32768, so a full write→read→write cycle is byte-identical.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes).map_err(|message| Error::format(path, message))
}

/// Encodes a waveform as 16-bit PCM mono. Samples are scaled by 32768,
/// rounded to nearest and clamped to the i16 range.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(w);
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn decode_wav(bytes: &[u8]) -> std::result::Result<Waveform, String> {
    let take = |offset: usize, len: usize| -> std::result::Result<&[u8], String> {
        bytes.get(offset..offset + len).ok_or_else(|| "file truncated".to_string())
    };
    let u32_at = |offset: usize| -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(take(offset, 4)?.try_into().unwrap()))
    };
    let u16_at = |offset: usize| -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(take(offset, 2)?.try_into().unwrap()))
    };

    if take(0, 4)? != b"RIFF" || take(8, 4)? != b"WAVE" {
        return Err("not a RIFF/WAVE file".to_string());
    }

    // Walk chunks: require an fmt chunk before the data chunk.
    let mut offset = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None; // codec, channels, rate, bits
    loop {
        let id = take(offset, 4)?;
        let size = u32_at(offset + 4)? as usize;
        let body = offset + 8;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err("fmt chunk too small".to_string());
                }
                format = Some((u16_at(body)?, u16_at(body + 2)?, u32_at(body + 4)?, u16_at(body + 14)?));
            }
            b"data" => {
                let (codec, channels, rate, bits) =
                    format.ok_or_else(|| "data chunk before fmt chunk".to_string())?;
                if codec != 1 {
                    return Err(format!("unsupported codec {codec}; only PCM is supported"));
                }
                if channels != 1 {
                    return Err(format!("unsupported channel count {channels}; only mono is supported"));
                }
                if bits != 16 {
                    return Err(format!("unsupported bit depth {bits}; only 16-bit is supported"));
                }
                if rate == 0 {
                    return Err("zero sample rate".to_string());
                }
                let data = take(body, size)?;
                let samples = data
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return Ok(Waveform::new(samples, rate));
            }
            _ => {}
        }
        // Chunks are word-aligned.
        offset = body + size + (size & 1);
        if offset >= bytes.len() {
            return Err("no data chunk found".to_string());
        }
    }
}

pub(crate) fn encode_wav(w: &Waveform) -> Vec<u8> {
    let n = w.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &x in &w.samples {
        let q = (x * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let samples: Vec<f64> = (-6i16..=6).map(|s| s as f64 * 1000.0 / 32768.0).collect();
        let w = Waveform::new(samples, 22050);
        let bytes = encode_wav(&w);
        let back = decode_wav(&bytes).unwrap();
        assert_eq!(back, w);
        assert_eq!(encode_wav(&back), bytes);
    }

    #[test]
    fn extreme_samples_survive_exactly() {
        // Every representable i16, including the asymmetric extremes.
        let samples: Vec<f64> =
            [i16::MIN, -1, 0, 1, i16::MAX].iter().map(|&s| s as f64 / 32768.0).collect();
        let w = Waveform::new(samples.clone(), 16000);
        let back = decode_wav(&encode_wav(&w)).unwrap();
        assert_eq!(back.samples, samples);
    }

    #[test]
    fn out_of_range_samples_clamp() {
        let w = Waveform::new(vec![1.5, -1.5, 1.0], 8000);
        let back = decode_wav(&encode_wav(&w)).unwrap();
        assert_eq!(back.samples[0], 32767.0 / 32768.0);
        assert_eq!(back.samples[1], -1.0);
        // +1.0 clamps to i16::MAX (32768 is unrepresentable).
        assert_eq!(back.samples[2], 32767.0 / 32768.0);
    }

    #[test]
    fn rejects_non_mono_and_garbage() {
        let w = Waveform::new(vec![0.0; 4], 8000);
        let mut bytes = encode_wav(&w);
        bytes[22] = 2; // stereo
        assert!(decode_wav(&bytes).unwrap_err().contains("mono"));

        assert!(decode_wav(b"not a wav").is_err());
        let truncated = &encode_wav(&w)[..20];
        assert!(decode_wav(truncated).is_err());
    }

    #[test]
    fn file_io_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let w = Waveform::new(vec![0.25, -0.5, 0.125], 22050);
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 22050);
        assert_eq!(back.samples.len(), 3);
        // Missing file is an Io error.
        assert!(matches!(read_wav(dir.path().join("missing.wav")), Err(Error::Io { .. })));
    }
}
