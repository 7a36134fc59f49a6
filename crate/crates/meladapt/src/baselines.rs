//! Reference conversion systems the full adaptor is compared against.
//!
//! Two deliberately simple alternatives bracket the problem:
//!
//! * [`interpolation_baseline`] — closed-form only: linearly resample the
//!   frame axis so frame *times* match the target hop, then rescale values
//!   between normalizable spaces. Nothing touches the mel axis, so any
//!   mismatch in FFT size, window, padding, or filterbank band is left in
//!   place — that untreated mismatch is exactly what the learned adaptor has
//!   to fix.
//! * [`griffin_only_baseline`] — the analytic re-synthesis route
//!   ([`approximate_convert`]) on its own, i.e. the pipeline without its
//!   learned refinement.
//!
//! Both are deterministic.

use crate::config::MelConfig;
use crate::convert::{approximate_convert, DEFAULT_GRIFFIN_LIM_ITERS};
use crate::dsp::{MelSpectrogram, ValueSpace};
use crate::error::{Error, Result};
use crate::normalize::convert_normalizable;
use ndarray::Array2;

/// Converts by time-axis interpolation plus value rescaling only.
///
/// Output frame `f` sits at time `f * hop_tgt / sr_tgt`; its value is read
/// off the source frame axis at position `f * (hop_tgt/sr_tgt) /
/// (hop_src/sr_src)` by linear interpolation (positions are clamped to the
/// source range, and an integral position copies the row bit-exactly). The
/// frame count is `floor(n_src * (hop_src/sr_src) / (hop_tgt/sr_tgt))`, at
/// least 1. Values are then re-expressed under the target's normalizable
/// parameters; when those already match the source the values pass through
/// untouched, so equal configs give a bit-exact identity.
///
/// The mel axis is copied as-is, which requires the band counts to agree.
pub fn interpolation_baseline(
    m_src: &MelSpectrogram,
    cfg_tgt: &MelConfig,
) -> Result<MelSpectrogram> {
    m_src.validate()?;
    cfg_tgt.validate()?;
    if m_src.n_mels() != cfg_tgt.n_mels {
        return Err(Error::MelCountMismatch { left: m_src.n_mels(), right: cfg_tgt.n_mels });
    }

    let cfg_src = &m_src.config;
    let period_src = cfg_src.hop_length as f64 / cfg_src.sample_rate as f64;
    let period_tgt = cfg_tgt.hop_length as f64 / cfg_tgt.sample_rate as f64;

    let n_in = m_src.frames();
    // Dividing the periods first keeps the equal-config ratio at exactly 1,
    // so identical configs stay on the bit-exact row-copy path throughout.
    let step = period_tgt / period_src;
    let n_out = ((n_in as f64 / step).floor() as usize).max(1);

    let src = &m_src.values;
    let mut values = Array2::zeros((n_out, m_src.n_mels()));
    for f in 0..n_out {
        let p = (f as f64 * step).clamp(0.0, (n_in - 1) as f64);
        let i = p.floor() as usize;
        let frac = p - i as f64;
        if frac == 0.0 {
            values.row_mut(f).assign(&src.row(i));
        } else {
            let j = (i + 1).min(n_in - 1);
            let (a, b) = (src.row(i), src.row(j));
            for (k, v) in values.row_mut(f).iter_mut().enumerate() {
                *v = (1.0 - frac) * a[k] + frac * b[k];
            }
        }
    }

    let src_b = cfg_src.split().1;
    let tgt_b = cfg_tgt.split().1;
    let interpolated =
        MelSpectrogram { values, space: m_src.space, config: cfg_src.clone() };
    let rescaled = if src_b == tgt_b {
        interpolated
    } else {
        convert_normalizable(&interpolated, &tgt_b)?
    };
    Ok(MelSpectrogram {
        values: rescaled.values,
        space: ValueSpace::of(&tgt_b),
        config: cfg_tgt.clone(),
    })
}

/// The analytic conversion by itself: exactly
/// [`approximate_convert`] with its default iteration count, named so
/// reports can refer to the un-refined system.
pub fn griffin_only_baseline(
    m_src: &MelSpectrogram,
    cfg_tgt: &MelConfig,
) -> Result<MelSpectrogram> {
    approximate_convert(m_src, cfg_tgt, DEFAULT_GRIFFIN_LIM_ITERS)
}
