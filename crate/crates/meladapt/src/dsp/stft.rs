//! Short-time Fourier analysis and synthesis.
//!
//! Framing convention: the waveform is zero-padded by `left_pad` /
//! `right_pad`, then frame `f` covers padded samples
//! `[f * hop, f * hop + n_fft)`. Windows shorter than `n_fft` are
//! zero-padded symmetrically to `n_fft`. The inverse transform uses
//! windowed overlap-add with squared-window normalization and removes the
//! padding again, so `istft(stft(x))` reproduces the interior of `x`.

use super::{FrameGeometry, LinearSpectrogram, Waveform};
use crate::error::{Error, Result};
use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Relative floor applied to the overlap-add normalization in [`istft_complex`],
/// as a fraction of the squared-window sum's plateau value.
pub(crate) const OLA_FLOOR_FRACTION: f64 = 1e-3;

/// Periodic Hann window `0.5 - 0.5 cos(2 pi n / N)`. By convention a
/// length-1 window is `[1.0]` (the periodic formula would give a useless
/// all-zero window).
pub fn hann_window(win_length: usize) -> Vec<f64> {
    assert!(win_length >= 1, "window length must be positive");
    if win_length == 1 {
        return vec![1.0];
    }
    (0..win_length)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win_length as f64).cos())
        .collect()
}

/// Analysis window padded to `n_fft`: the Hann window of `win_length`
/// samples centered in an `n_fft`-sample buffer of zeros.
fn padded_window(geom: &FrameGeometry) -> Vec<f64> {
    let mut w = vec![0.0; geom.n_fft];
    let offset = (geom.n_fft - geom.win_length) / 2;
    for (i, v) in hann_window(geom.win_length).into_iter().enumerate() {
        w[offset + i] = v;
    }
    w
}

/// Complex one-sided STFT (`frames x (n_fft/2 + 1)`).
pub fn stft_complex(samples: &[f64], geom: &FrameGeometry) -> Result<Array2<Complex64>> {
    let frames = geom.frames_for(samples.len())?;
    let bins = geom.bins();
    let window = padded_window(geom);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(geom.n_fft);
    let mut buf = vec![Complex64::default(); geom.n_fft];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];

    // Padded view of the waveform without materializing it.
    let sample_at = |t: isize| -> f64 {
        let idx = t - geom.left_pad as isize;
        if idx < 0 || idx as usize >= samples.len() {
            0.0
        } else {
            samples[idx as usize]
        }
    };

    let mut out = Array2::default((frames, bins));
    for f in 0..frames {
        let start = (f * geom.hop_length) as isize;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(sample_at(start + i as isize) * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (b, v) in out.row_mut(f).iter_mut().zip(buf.iter().take(bins)) {
            *b = *v;
        }
    }
    Ok(out)
}

/// Magnitude STFT of a waveform, keeping the framing metadata.
pub fn stft(w: &Waveform, geom: &FrameGeometry) -> Result<LinearSpectrogram> {
    let complex = stft_complex(&w.samples, geom)?;
    Ok(LinearSpectrogram {
        magnitudes: complex.mapv(|c| c.norm()),
        geometry: *geom,
        sample_rate: w.sample_rate,
    })
}

/// Inverse STFT of a one-sided complex spectrogram via windowed overlap-add
/// with squared-window normalization; the normalizer is floored at a small
/// fraction of its plateau so weakly-covered edge samples are attenuated
/// instead of amplified. The left/right padding described by the geometry is
/// removed from the result.
pub fn istft_complex(spec: &Array2<Complex64>, geom: &FrameGeometry) -> Result<Vec<f64>> {
    let (frames, bins) = spec.dim();
    if bins != geom.bins() {
        return Err(Error::InvalidArgument(format!(
            "spectrogram has {bins} bins but the geometry implies {}",
            geom.bins()
        )));
    }
    if frames == 0 {
        return Err(Error::InvalidArgument("cannot invert a zero-frame spectrogram".into()));
    }
    let window = padded_window(geom);
    let padded_len = (frames - 1) * geom.hop_length + geom.n_fft;
    let mut num = vec![0.0f64; padded_len];
    let mut den = vec![0.0f64; padded_len];

    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(geom.n_fft);
    let mut buf = vec![Complex64::default(); geom.n_fft];
    let mut scratch = vec![Complex64::default(); ifft.get_inplace_scratch_len()];

    for f in 0..frames {
        // Rebuild the full spectrum by conjugate symmetry.
        for (k, b) in buf.iter_mut().enumerate().take(bins) {
            *b = spec[[f, k]];
        }
        for k in bins..geom.n_fft {
            buf[k] = spec[[f, geom.n_fft - k]].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = f * geom.hop_length;
        for i in 0..geom.n_fft {
            // rustfft's inverse transform is unnormalized.
            let sample = buf[i].re / geom.n_fft as f64;
            num[start + i] += window[i] * sample;
            den[start + i] += window[i] * window[i];
        }
    }

    // Floor the normalization relative to its plateau. Raw least-squares
    // divides edge samples by the squared tail of a single window, which
    // amplifies any inconsistency in a modified spectrogram into huge spikes
    // (observed 1e4x for Griffin-Lim estimates). Flooring trades exactness on
    // those few weakly-observed samples for bounded gain.
    let den_max = den.iter().cloned().fold(0.0f64, f64::max);
    let floor = (den_max * OLA_FLOOR_FRACTION).max(f64::MIN_POSITIVE);
    let mut out = vec![0.0f64; padded_len];
    for i in 0..padded_len {
        out[i] = num[i] / den[i].max(floor);
    }

    // Strip the analysis padding.
    let end = padded_len.saturating_sub(geom.right_pad);
    let start = geom.left_pad.min(end);
    Ok(out[start..end].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MelConfig;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn hann_window_known_values() {
        assert_eq!(hann_window(1), vec![1.0]);
        let w4 = hann_window(4);
        let expected = [0.0, 0.5, 1.0, 0.5];
        for (a, b) in w4.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15, "{w4:?}");
        }
        // Periodic symmetry: w[n] == w[N - n] for n >= 1.
        let w = hann_window(101);
        for n in 1..101 {
            assert!((w[n] - w[101 - n]).abs() < 1e-12);
        }
    }

    /// Naive O(n^2) DFT magnitude oracle for one frame.
    fn dft_magnitude_oracle(frame: &[f64], bins: usize) -> Vec<f64> {
        let n = frame.len();
        (0..bins)
            .map(|k| {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for (t, &x) in frame.iter().enumerate() {
                    let phi = -2.0 * std::f64::consts::PI * k as f64 * t as f64 / n as f64;
                    re += x * phi.cos();
                    im += x * phi.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn stft_matches_naive_dft_oracle() {
        let geom = FrameGeometry { n_fft: 64, win_length: 48, hop_length: 16, left_pad: 0, right_pad: 0 };
        let x = noise(200, 3);
        let spec = stft_complex(&x, &geom).unwrap();
        let window = padded_window(&geom);

        for f in 0..spec.nrows() {
            let frame: Vec<f64> =
                (0..64).map(|i| x.get(f * 16 + i).copied().unwrap_or(0.0) * window[i]).collect();
            let oracle = dft_magnitude_oracle(&frame, geom.bins());
            for (k, want) in oracle.iter().enumerate() {
                let got = spec[[f, k]].norm();
                assert!((got - want).abs() < 1e-9, "frame {f} bin {k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn stft_respects_padding_geometry() {
        // With pads, the first frame sees mostly zeros, so its energy is
        // lower than the equivalent unpadded first frame.
        let x = noise(4096, 5);
        let unpadded = FrameGeometry { n_fft: 1024, win_length: 1024, hop_length: 256, left_pad: 0, right_pad: 0 };
        let padded = FrameGeometry { left_pad: 384, right_pad: 384, ..unpadded };
        let a = stft_complex(&x, &unpadded).unwrap();
        let b = stft_complex(&x, &padded).unwrap();
        assert_eq!(b.nrows(), a.nrows() + 3);
        let e = |row: ndarray::ArrayView1<Complex64>| row.iter().map(|c| c.norm_sqr()).sum::<f64>();
        assert!(e(b.row(0)) < e(a.row(0)));
    }

    #[test]
    fn energy_scales_quadratically_with_gain() {
        let x = noise(8192, 7);
        let geom = FrameGeometry { n_fft: 1024, win_length: 1024, hop_length: 256, left_pad: 0, right_pad: 0 };
        let energy = |gain: f64| -> f64 {
            let scaled: Vec<f64> = x.iter().map(|v| v * gain).collect();
            stft_complex(&scaled, &geom).unwrap().iter().map(|c| c.norm_sqr()).sum()
        };
        let base = energy(1.0);
        for gain in [0.1, 0.5, 1.0] {
            let ratio = energy(gain) / (base * gain * gain);
            assert!((ratio - 1.0).abs() < 1e-3, "gain {gain}: ratio {ratio}");
        }
    }

    #[test]
    fn istft_single_frame_closed_form() {
        // One frame: output = w * y / max(w^2, floor) where y is the inverse
        // FFT of the spectrum, i.e. y / w = x wherever the squared window
        // clears the normalization floor, and an attenuated copy in the tails.
        let geom = FrameGeometry { n_fft: 32, win_length: 32, hop_length: 8, left_pad: 0, right_pad: 0 };
        let x = noise(32, 11);
        let spec = stft_complex(&x, &geom).unwrap();
        let one = spec.slice(ndarray::s![0..1, ..]).to_owned();
        let out = istft_complex(&one, &geom).unwrap();
        let window = padded_window(&geom);
        let floor = OLA_FLOOR_FRACTION * window.iter().map(|w| w * w).fold(0.0f64, f64::max);
        for i in 0..32 {
            let w2 = window[i] * window[i];
            let expected = window[i] * x[i] * window[i] / w2.max(floor);
            assert!((out[i] - expected).abs() < 1e-9, "i={i}: {} vs {expected}", out[i]);
        }
    }

    #[test]
    fn istft_round_trips_interior_for_all_builtin_geometries() {
        for cfg in MelConfig::builtins() {
            let geom = FrameGeometry::from_config(&cfg);
            let n = cfg.sample_rate as usize;
            let x = noise(n, 13);
            let spec = stft_complex(&x, &geom).unwrap();
            let y = istft_complex(&spec, &geom).unwrap();

            let lo = geom.n_fft;
            let hi = y.len().min(x.len()).saturating_sub(geom.n_fft);
            assert!(hi > lo);
            let mut err = 0.0f64;
            let mut ref_energy = 0.0f64;
            for i in lo..hi {
                err += (y[i] - x[i]).powi(2);
                ref_energy += x[i].powi(2);
            }
            let rel = (err / ref_energy).sqrt();
            // Exact geometries (win == n_fft) round-trip tighter than the
            // documented bound for zero-padded windows.
            let bound = if cfg.win_length == cfg.n_fft { 1e-6 } else { 1e-3 };
            assert!(rel < bound, "{cfg:?}: interior round-trip error {rel}");
        }
    }

    #[test]
    fn istft_rejects_mismatched_bins() {
        let geom = FrameGeometry { n_fft: 32, win_length: 32, hop_length: 8, left_pad: 0, right_pad: 0 };
        let spec = Array2::<Complex64>::default((4, 10));
        assert!(istft_complex(&spec, &geom).is_err());
    }
}
