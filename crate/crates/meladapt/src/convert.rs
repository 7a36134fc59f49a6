//! Analytic config-to-config conversion.
//!
//! A mel spectrogram extracted under one config is converted to another by
//! re-synthesis: de-normalize to linear amel amplitudes, lift to a full
//! linear spectrogram with the filterbank's Moore–Penrose pseudo-inverse,
//! reconstruct a waveform with Griffin-Lim phase recovery, resample if the
//! target rate differs, and re-extract under the target config.

use crate::config::MelConfig;
use crate::dsp::{
    self, extract_mel, istft_complex, mel_filterbank, resample, stft_complex, FrameGeometry,
    LinearSpectrogram, MelFilterbank, MelSpectrogram, Waveform,
};
use crate::error::{Error, Result};
use crate::normalize::to_linear_amplitude;
use ndarray::Array2;
use rustfft::num_complex::Complex64;

/// Default Griffin-Lim iteration count used across the pipeline.
pub const DEFAULT_GRIFFIN_LIM_ITERS: usize = 32;

/// Relative singular-value threshold below which the pseudo-inverse treats
/// directions as null.
const PINV_RELATIVE_THRESHOLD: f64 = 1e-8;

/// Precomputed Moore–Penrose pseudo-inverse of a mel filterbank, used to
/// lift mel amplitudes back to full-resolution magnitudes.
#[derive(Debug, Clone)]
pub struct MelPseudoInverse {
    /// `bins x n_mels`.
    pinv: Array2<f64>,
    sample_rate: u32,
    n_fft: usize,
}

impl MelPseudoInverse {
    /// Computes the pseudo-inverse by SVD, zeroing singular values at or
    /// below `sigma_max * 1e-8`. Errors if the filterbank is rank-deficient
    /// (fewer positive singular values than mel bands).
    pub fn new(fb: &MelFilterbank) -> Result<MelPseudoInverse> {
        let (n_mels, bins) = fb.weights.dim();
        let mat = nalgebra::DMatrix::from_fn(n_mels, bins, |r, c| fb.weights[[r, c]]);
        let svd = mat.svd(true, true);
        let sigma_max = svd.singular_values.max();
        let threshold = sigma_max * PINV_RELATIVE_THRESHOLD;
        let rank = svd.singular_values.iter().filter(|&&s| s > threshold).count();
        if rank < n_mels {
            return Err(Error::DegenerateFilterbank { rank, n_mels });
        }
        let pinv_na = svd.pseudo_inverse(threshold).expect("threshold is positive");
        let pinv = Array2::from_shape_fn((bins, n_mels), |(r, c)| pinv_na[(r, c)]);
        Ok(MelPseudoInverse { pinv, sample_rate: fb.sample_rate, n_fft: fb.n_fft })
    }

    /// Least-squares lift of `frames x n_mels` mel amplitudes to
    /// `frames x bins` magnitudes. May contain small negative values.
    pub fn solve(&self, mel_amplitudes: &Array2<f64>) -> Array2<f64> {
        mel_amplitudes.dot(&self.pinv.t())
    }
}

/// Lifts a linear-amplitude mel spectrogram to a full magnitude spectrogram
/// via the pseudo-inverse, clamping negative magnitudes to zero.
pub fn mel_to_linear(m: &MelSpectrogram, pinv: &MelPseudoInverse) -> Result<LinearSpectrogram> {
    m.validate()?;
    if m.space != dsp::ValueSpace::LinearAmplitude {
        return Err(Error::ValueSpaceMismatch {
            expected: "linear-amplitude".to_string(),
            found: m.space.describe(),
        });
    }
    if m.n_mels() != pinv.pinv.ncols() {
        return Err(Error::MelCountMismatch { left: m.n_mels(), right: pinv.pinv.ncols() });
    }
    if pinv.sample_rate != m.config.sample_rate || pinv.n_fft != m.config.n_fft {
        return Err(Error::InvalidArgument(format!(
            "pseudo-inverse built for {} Hz / n_fft {} but the spectrogram's config says {} Hz / n_fft {}",
            pinv.sample_rate, pinv.n_fft, m.config.sample_rate, m.config.n_fft
        )));
    }
    let mut magnitudes = pinv.solve(&m.values);
    magnitudes.mapv_inplace(|v| v.max(0.0));
    Ok(LinearSpectrogram {
        magnitudes,
        geometry: FrameGeometry::from_config(&m.config),
        sample_rate: m.config.sample_rate,
    })
}

/// Result of Griffin-Lim phase reconstruction.
#[derive(Debug, Clone)]
pub struct GriffinLimResult {
    pub waveform: Waveform,
    /// Per-iteration consistency `|| |STFT(istft(S))| - M || / ||M||`
    /// (Frobenius); non-increasing across iterations.
    pub consistency: Vec<f64>,
}

/// Reconstructs a waveform whose STFT magnitude approximates `spec` by
/// alternating projection: start from zero phases, then repeatedly invert,
/// re-analyze, and restore the target magnitudes. All-zero magnitudes
/// return silence immediately.
pub fn griffin_lim(spec: &LinearSpectrogram, n_iter: usize) -> Result<GriffinLimResult> {
    griffin_lim_with_progress(spec, n_iter, |_, _| true)
}

/// [`griffin_lim`] with a cooperative progress hook called after each
/// iteration with `(iteration, consistency)`. Returning `false` cancels the
/// reconstruction with [`Error::Cancelled`].
pub fn griffin_lim_with_progress(
    spec: &LinearSpectrogram,
    n_iter: usize,
    mut progress: impl FnMut(usize, f64) -> bool,
) -> Result<GriffinLimResult> {
    let geom = spec.geometry;
    let target = &spec.magnitudes;
    let target_norm = target.iter().map(|v| v * v).sum::<f64>().sqrt();
    if target_norm == 0.0 {
        let n = istft_complex(&target.mapv(|_| Complex64::default()), &geom)?.len();
        return Ok(GriffinLimResult {
            waveform: Waveform::new(vec![0.0; n], spec.sample_rate),
            consistency: Vec::new(),
        });
    }

    // Zero initial phase: the first estimate is the real-valued magnitudes.
    let mut estimate = target.mapv(|m| Complex64::new(m, 0.0));
    let mut consistency = Vec::with_capacity(n_iter);
    for it in 0..n_iter {
        let wave = istft_complex(&estimate, &geom)?;
        let analyzed = stft_complex(&wave, &geom)?;

        let mut err = 0.0f64;
        for (a, t) in analyzed.iter().zip(target.iter()) {
            let d = a.norm() - t;
            err += d * d;
        }
        consistency.push(err.sqrt() / target_norm);

        // Keep the recovered phases, restore the target magnitudes.
        estimate = ndarray::Zip::from(&analyzed).and(target).map_collect(|a, &t| {
            let n = a.norm();
            if n > 0.0 {
                a * (t / n)
            } else {
                Complex64::new(t, 0.0)
            }
        });

        if !progress(it, *consistency.last().unwrap()) {
            return Err(Error::Cancelled);
        }
    }

    let samples = istft_complex(&estimate, &geom)?;
    Ok(GriffinLimResult { waveform: Waveform::new(samples, spec.sample_rate), consistency })
}

/// Reconstructs a waveform from a mel spectrogram: de-normalize to linear
/// amplitudes, lift through the filterbank pseudo-inverse, and recover phase
/// with Griffin-Lim. The output lives at the spectrogram's own sample rate
/// and is an intermediate, not production audio.
pub fn invert_to_waveform(m_src: &MelSpectrogram, n_iter: usize) -> Result<Waveform> {
    let cfg_src = &m_src.config;
    let amplitudes = to_linear_amplitude(m_src)?;
    let fb = mel_filterbank(
        cfg_src.sample_rate,
        cfg_src.n_fft,
        cfg_src.n_mels,
        cfg_src.fmin,
        cfg_src.fmax,
    )?;
    let pinv = MelPseudoInverse::new(&fb)?;
    let linear = mel_to_linear(&amplitudes, &pinv)?;
    Ok(griffin_lim(&linear, n_iter)?.waveform)
}

/// Converts a mel spectrogram between configs by analytic re-synthesis:
/// de-normalize → pseudo-inverse lift → Griffin-Lim → resample if the rates
/// differ → re-extract under `cfg_tgt`.
pub fn approximate_convert(
    m_src: &MelSpectrogram,
    cfg_tgt: &MelConfig,
    n_iter: usize,
) -> Result<MelSpectrogram> {
    cfg_tgt.validate()?;
    let reconstructed = invert_to_waveform(m_src, n_iter)?;
    let wave = if reconstructed.sample_rate != cfg_tgt.sample_rate {
        resample(&reconstructed, cfg_tgt.sample_rate)?
    } else {
        reconstructed
    };
    extract_mel(&wave, cfg_tgt)
}
