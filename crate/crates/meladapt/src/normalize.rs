//! Exact conversions between the value spaces induced by normalizable
//! parameters (amp→dB flag, log base/factor, min–max normalization).
//!
//! Every spectrogram can be brought into the canonical base space —
//! un-normalized natural-log amplitudes ([`NORMALIZING_BASE`]) — by a closed
//! form: undo normalization (affine), change of log base (a single
//! multiplication, e.g. dB₁₀ₓ₂₀ values scale by `ln(10)/20`), or take the
//! floored logarithm of linear amplitudes. `to_base` and `from_base` are
//! mutually inverse wherever no clipping or amplitude floor engages.

use crate::config::{NormalizableParams, NORMALIZING_BASE};
use crate::dsp::{MelSpectrogram, ValueSpace, DB_FLOOR_AMPLITUDE};
use crate::error::Result;

/// Converts a spectrogram into the canonical base space. The output keeps
/// the source geometry but its normalizable half becomes the base.
pub fn to_base(m: &MelSpectrogram) -> Result<MelSpectrogram> {
    m.validate()?;
    let b = m.config.split().1;
    let mut values = m.values.clone();

    if b.normalize_mel {
        // Undo min–max normalization back to dB values.
        crate::dsp::denormalize_db(&mut values, b.ref_level_db, b.min_level_db);
    }
    if b.amp_to_db {
        // Change of log base/factor is a single exact multiplication:
        // v_base = v_src * ln(base_src) / factor_src.
        let scale = b.log_base.ln() / b.log_factor;
        if scale != 1.0 {
            values.mapv_inplace(|v| v * scale);
        }
    } else {
        // Linear amplitudes: apply the base-space floored logarithm.
        values.mapv_inplace(|v| v.max(DB_FLOOR_AMPLITUDE).ln());
    }

    Ok(MelSpectrogram {
        values,
        space: ValueSpace::of(&NORMALIZING_BASE),
        config: m.config.with_normalizable(&NORMALIZING_BASE),
    })
}

/// Converts a base-space spectrogram into the space described by `target`.
/// Inverse of [`to_base`] on values that neither clip nor hit the amplitude
/// floor.
pub fn from_base(m: &MelSpectrogram, target: &NormalizableParams) -> Result<MelSpectrogram> {
    m.validate()?;
    debug_assert_eq!(m.space, ValueSpace::of(&NORMALIZING_BASE), "from_base expects base space");
    let mut values = m.values.clone();

    if target.amp_to_db {
        let scale = target.log_factor / target.log_base.ln();
        if scale != 1.0 {
            values.mapv_inplace(|v| v * scale);
        }
        if target.normalize_mel {
            crate::dsp::normalize_db(&mut values, target.ref_level_db, target.min_level_db);
        }
    } else {
        values.mapv_inplace(f64::exp);
    }

    Ok(MelSpectrogram {
        values,
        space: ValueSpace::of(target),
        config: m.config.with_normalizable(target),
    })
}

/// Re-expresses a spectrogram under a different normalizable parameter set:
/// `from_base(to_base(m), target)`. The geometry half is untouched.
pub fn convert_normalizable(m: &MelSpectrogram, target: &NormalizableParams) -> Result<MelSpectrogram> {
    from_base(&to_base(m)?, target)
}

/// Convenience: the spectrogram's values as linear amplitudes.
pub fn to_linear_amplitude(m: &MelSpectrogram) -> Result<MelSpectrogram> {
    let linear = NormalizableParams { amp_to_db: false, normalize_mel: false, ..NORMALIZING_BASE };
    from_base(&to_base(m)?, &linear)
}
