//! Band-limited sample-rate conversion with a windowed-sinc kernel.

use super::Waveform;
use crate::error::{Error, Result};

/// Zero crossings of the sinc kernel on each side of its center.
const ZERO_CROSSINGS: usize = 32;

/// Fraction of the theoretical cutoff actually used, leaving a small
/// transition band below Nyquist to tame ringing.
const ROLLOFF: f64 = 0.95;

/// Resamples to `target_rate` with a Hann-windowed sinc low-passed at the
/// smaller of the two Nyquist frequencies. Output duration matches the input
/// within one sample: `len_out = round(len_in * target / source)`. Returns a
/// copy when the rates already match.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::BadSampleRate(target_rate));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let ratio = target_rate as f64 / w.sample_rate as f64;
    let n_out = (w.samples.len() as f64 * ratio).round() as usize;

    // Cutoff in cycles per input sample (input Nyquist = 0.5).
    let cutoff = 0.5 * ratio.min(1.0) * ROLLOFF;
    // Kernel support in input samples: ZERO_CROSSINGS crossings each side.
    let half_width = ZERO_CROSSINGS as f64 / (2.0 * cutoff);

    let x = &w.samples;
    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out {
        let t = m as f64 / ratio; // position in input coordinates
        let j_lo = ((t - half_width).ceil() as isize).max(0);
        let j_hi = ((t + half_width).floor() as isize).min(x.len() as isize - 1);
        let mut acc = 0.0;
        for j in j_lo..=j_hi {
            let u = t - j as f64;
            acc += x[j as usize] * kernel(u, cutoff, half_width);
        }
        out.push(acc);
    }
    Ok(Waveform::new(out, target_rate))
}

/// Windowed-sinc low-pass kernel: `2 fc sinc(2 fc u)` under a symmetric Hann
/// lobe spanning `|u| <= half_width`.
fn kernel(u: f64, cutoff: f64, half_width: f64) -> f64 {
    let v = u / half_width;
    if v.abs() >= 1.0 {
        return 0.0;
    }
    let window = 0.5 + 0.5 * (std::f64::consts::PI * v).cos();
    2.0 * cutoff * sinc(2.0 * cutoff * u) * window
}

fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-12 {
        1.0
    } else {
        let pz = std::f64::consts::PI * z;
        pz.sin() / pz
    }
}
