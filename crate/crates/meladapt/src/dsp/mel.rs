//! Mel filterbanks and the dB / normalization value transforms.

use crate::config::LogBase;
use crate::error::{Error, Result};
use ndarray::Array2;

/// Amplitudes below this floor are clamped before taking logarithms, bounding
/// dB values from below (e.g. -100 dB for base 10 / factor 20).
pub const DB_FLOOR_AMPLITUDE: f64 = 1e-5;

/// Which mel scale the filterbank uses. The default everywhere is
/// [`MelScale::Slaney`]; HTK is available as an alternative policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MelScale {
    /// Linear below 1 kHz, logarithmic above: `3f/200` then
    /// `15 + 27 ln(f/1000) / ln(6.4)`.
    #[default]
    Slaney,
    /// `2595 log10(1 + f/700)`.
    Htk,
}

/// Hz → mel under the Slaney scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    hz_to_mel_scaled(hz, MelScale::Slaney)
}

/// Mel → Hz under the Slaney scale.
pub fn mel_to_hz(mel: f64) -> f64 {
    mel_to_hz_scaled(mel, MelScale::Slaney)
}

fn hz_to_mel_scaled(hz: f64, scale: MelScale) -> f64 {
    match scale {
        MelScale::Slaney => {
            const MIN_LOG_HZ: f64 = 1000.0;
            const MIN_LOG_MEL: f64 = 15.0; // 3 * 1000 / 200
            if hz < MIN_LOG_HZ {
                3.0 * hz / 200.0
            } else {
                MIN_LOG_MEL + 27.0 * (hz / MIN_LOG_HZ).ln() / 6.4f64.ln()
            }
        }
        MelScale::Htk => 2595.0 * (1.0 + hz / 700.0).log10(),
    }
}

fn mel_to_hz_scaled(mel: f64, scale: MelScale) -> f64 {
    match scale {
        MelScale::Slaney => {
            const MIN_LOG_MEL: f64 = 15.0;
            if mel < MIN_LOG_MEL {
                200.0 * mel / 3.0
            } else {
                1000.0 * ((mel - MIN_LOG_MEL) * 6.4f64.ln() / 27.0).exp()
            }
        }
        MelScale::Htk => 700.0 * (10.0f64.powf(mel / 2595.0) - 1.0),
    }
}

/// Triangular mel filterbank: `n_mels x bins` non-negative weights, each
/// triangle area-normalized by `2 / (f_right - f_left)`.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
    pub sample_rate: u32,
    pub n_fft: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn bins(&self) -> usize {
        self.weights.ncols()
    }

    /// Center frequency (Hz) of each triangle.
    pub fn center_frequencies(&self) -> Vec<f64> {
        // Recompute the band edges used at construction time.
        let lo = hz_to_mel(self.fmin);
        let hi = hz_to_mel(self.fmax);
        let n = self.n_mels();
        (1..=n).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n + 1) as f64)).collect()
    }

    /// Applies the filterbank to `frames x bins` magnitudes, producing
    /// `frames x n_mels` non-negative mel values.
    pub fn apply(&self, magnitudes: &Array2<f64>) -> Array2<f64> {
        magnitudes.dot(&self.weights.t())
    }
}

/// Builds the default (Slaney-scale) filterbank.
pub fn mel_filterbank(
    sample_rate: u32,
    n_fft: usize,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
) -> Result<MelFilterbank> {
    mel_filterbank_with_scale(sample_rate, n_fft, n_mels, fmin, fmax, MelScale::Slaney)
}

/// Builds a triangular filterbank on the chosen mel scale. Band edges are
/// `n_mels + 2` equally spaced mel points between `fmin` and `fmax`;
/// triangle `i` spans Hz points `(h[i], h[i+2])` with apex `h[i+1]` and is
/// scaled by `2 / (h[i+2] - h[i])`. Errors if any row would be all zero
/// (too few FFT bins inside the band).
pub fn mel_filterbank_with_scale(
    sample_rate: u32,
    n_fft: usize,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
    scale: MelScale,
) -> Result<MelFilterbank> {
    if sample_rate == 0 {
        return Err(Error::BadSampleRate(sample_rate));
    }
    let bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel_scaled(fmin, scale);
    let mel_hi = hz_to_mel_scaled(fmax, scale);
    let hz: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz_scaled(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64, scale))
        .collect();

    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut weights = Array2::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (left, center, right) = (hz[m], hz[m + 1], hz[m + 2]);
        let norm = 2.0 / (right - left);
        let mut any = false;
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let up = (f - left) / (center - left);
            let down = (right - f) / (right - center);
            let w = up.min(down).max(0.0);
            if w > 0.0 {
                weights[[m, k]] = w * norm;
                any = true;
            }
        }
        if !any {
            return Err(Error::EmptyFilter { row: m, fmin, fmax });
        }
    }
    Ok(MelFilterbank { weights, sample_rate, n_fft, fmin, fmax })
}

/// In-place amplitude → dB-like transform:
/// `v = log_factor * log_base(max(v, DB_FLOOR_AMPLITUDE))`.
pub fn amp_to_db(values: &mut Array2<f64>, log_base: LogBase, log_factor: f64) {
    let base_ln = log_base.ln();
    values.mapv_inplace(|v| log_factor * v.max(DB_FLOOR_AMPLITUDE).ln() / base_ln);
}

/// Inverse of [`amp_to_db`] (exact above the amplitude floor):
/// `v = base^(v / log_factor)`.
pub fn db_to_amp(values: &mut Array2<f64>, log_base: LogBase, log_factor: f64) {
    let base_ln = log_base.ln();
    values.mapv_inplace(|v| (v * base_ln / log_factor).exp());
}

/// In-place min–max normalization of dB values into [0, 1]:
/// `v = clip((v - ref_level_db - min_level_db) / -min_level_db, 0, 1)`.
pub fn normalize_db(values: &mut Array2<f64>, ref_level_db: f64, min_level_db: f64) {
    values.mapv_inplace(|v| ((v - ref_level_db - min_level_db) / -min_level_db).clamp(0.0, 1.0));
}

/// Inverse of [`normalize_db`] on the un-clipped range:
/// `v = v * -min_level_db + min_level_db + ref_level_db`.
pub fn denormalize_db(values: &mut Array2<f64>, ref_level_db: f64, min_level_db: f64) {
    values.mapv_inplace(|v| v * -min_level_db + min_level_db + ref_level_db);
}
