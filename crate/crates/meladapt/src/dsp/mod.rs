//! Signal-processing primitives: waveforms, STFT/ISTFT, mel filterbanks,
//! dB mapping, peak normalization, resampling, and the full mel extraction
//! pipeline driven by a [`MelConfig`].

mod mel;
mod resample;
mod stft;

pub use mel::{
    amp_to_db, db_to_amp, denormalize_db, hz_to_mel, mel_filterbank, mel_filterbank_with_scale,
    mel_to_hz, normalize_db, MelFilterbank, MelScale, DB_FLOOR_AMPLITUDE,
};
pub use resample::resample;
pub use stft::{hann_window, istft_complex, stft, stft_complex};

use crate::config::{MelConfig, NormalizableParams};
use crate::error::{Error, Result};
use ndarray::Array2;

/// Mono audio at a known sample rate. Samples are `f64` in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Waveform { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// STFT framing parameters: the non-normalizable geometry minus the
/// filterbank band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameGeometry {
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub left_pad: usize,
    pub right_pad: usize,
}

impl FrameGeometry {
    pub fn from_config(cfg: &MelConfig) -> Self {
        FrameGeometry {
            n_fft: cfg.n_fft,
            win_length: cfg.win_length,
            hop_length: cfg.hop_length,
            left_pad: cfg.left_pad,
            right_pad: cfg.right_pad,
        }
    }

    /// Number of one-sided spectrum bins.
    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames produced for `n` input samples: the waveform is zero-padded by
    /// `left_pad`/`right_pad` and then framed with full `n_fft` windows, so
    /// the count is `(padded - n_fft) / hop + 1`.
    pub fn frames_for(&self, n: usize) -> Result<usize> {
        let padded = n + self.left_pad + self.right_pad;
        if padded < self.n_fft {
            return Err(Error::WaveformTooShort { samples: padded, needed: self.n_fft });
        }
        Ok((padded - self.n_fft) / self.hop_length + 1)
    }
}

/// Magnitude spectrogram with the framing that produced it.
#[derive(Debug, Clone)]
pub struct LinearSpectrogram {
    /// `frames x bins` non-negative magnitudes.
    pub magnitudes: Array2<f64>,
    pub geometry: FrameGeometry,
    pub sample_rate: u32,
}

/// Value space a mel spectrogram's entries live in. Must stay consistent
/// with the normalizable half of the spectrogram's config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValueSpace {
    /// Raw non-negative filterbank outputs.
    LinearAmplitude,
    /// `log_factor * log_base(max(amplitude, floor))`.
    Db { log_base: crate::config::LogBase, log_factor: f64 },
    /// dB values min–max rescaled into [0, 1].
    Normalized,
}

impl ValueSpace {
    /// The space implied by a normalizable parameter set.
    pub fn of(b: &NormalizableParams) -> ValueSpace {
        if !b.amp_to_db {
            ValueSpace::LinearAmplitude
        } else if b.normalize_mel {
            ValueSpace::Normalized
        } else {
            ValueSpace::Db { log_base: b.log_base, log_factor: b.log_factor }
        }
    }

    pub(crate) fn describe(&self) -> String {
        match self {
            ValueSpace::LinearAmplitude => "linear-amplitude".to_string(),
            ValueSpace::Db { log_base, log_factor } => {
                format!("db(base {}, factor {})", if log_base.ln() == 1.0 { "e" } else { "10" }, log_factor)
            }
            ValueSpace::Normalized => "normalized".to_string(),
        }
    }
}

/// A mel spectrogram tagged with the config that parametrizes it.
#[derive(Debug, Clone)]
pub struct MelSpectrogram {
    /// `frames x n_mels` values in `space`.
    pub values: Array2<f64>,
    pub space: ValueSpace,
    pub config: MelConfig,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.ncols()
    }

    /// Checks internal consistency: band count matches the config, the value
    /// space matches the config's normalizable half, and normalized values
    /// actually lie in [0, 1].
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.n_mels() != self.config.n_mels {
            return Err(Error::MelCountMismatch { left: self.n_mels(), right: self.config.n_mels });
        }
        let expected = ValueSpace::of(&self.config.split().1);
        if self.space != expected {
            return Err(Error::ValueSpaceMismatch {
                expected: expected.describe(),
                found: self.space.describe(),
            });
        }
        if self.space == ValueSpace::Normalized {
            for ((frame, mel), &v) in self.values.indexed_iter() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::NotNormalized { value: v, frame, mel });
                }
            }
        }
        Ok(())
    }
}

/// Rescales a waveform so its absolute peak equals `peak`. All-zero input is
/// returned unchanged and flagged via the second return value.
pub fn peak_normalize(w: &Waveform, peak: f64) -> (Waveform, bool) {
    let max_abs = w.samples.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if max_abs == 0.0 {
        return (w.clone(), true);
    }
    let scale = peak / max_abs;
    let samples = w.samples.iter().map(|&x| (x * scale).clamp(-peak, peak)).collect();
    (Waveform::new(samples, w.sample_rate), false)
}

/// Extracts a mel spectrogram exactly as `cfg` prescribes: resample to the
/// config's rate if needed, peak-normalize, STFT with the config's geometry,
/// apply the mel filterbank, then the configured value transform.
pub fn extract_mel(w: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    let resampled;
    let w = if w.sample_rate != cfg.sample_rate {
        resampled = resample(w, cfg.sample_rate)?;
        &resampled
    } else {
        w
    };
    let (w, _silent) = peak_normalize(w, cfg.wave_peak_norm);
    let geometry = FrameGeometry::from_config(cfg);
    let spec = stft(&w, &geometry)?;
    let fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax)?;
    let mut values = fb.apply(&spec.magnitudes);
    let b = cfg.split().1;
    if b.amp_to_db {
        amp_to_db(&mut values, b.log_base, b.log_factor);
        if b.normalize_mel {
            normalize_db(&mut values, b.ref_level_db, b.min_level_db);
        }
    }
    Ok(MelSpectrogram { values, space: ValueSpace::of(&b), config: cfg.clone() })
}
