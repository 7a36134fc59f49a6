//! Mel extraction configurations.
//!
//! A [`MelConfig`] captures every knob that shapes a mel spectrogram:
//! waveform peak normalization, STFT geometry (FFT size, window, hop,
//! zero-padding), the mel filterbank band, and the value transform
//! (amplitude→dB, log base/factor, min–max normalization). Configs are
//! split into a *non-normalizable* half — parameters whose effect can only
//! be approximated by re-synthesis — and a *normalizable* half, whose
//! effect is an exact, invertible value transform.
//!
//! The module also provides the canonical `key = value` text format, seven
//! builtin configs mirroring common TTS front ends, the 8-dimensional
//! feature encoding used to condition the refinement network, and a
//! uniform sampler over the supported parameter grid.

use crate::error::{Error, Result};
use rand::Rng;

/// Logarithm base used by the amplitude→dB transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogBase {
    /// Base-10 logarithm (written `10` in config files).
    Ten,
    /// Natural logarithm (written `e` in config files).
    E,
}

impl LogBase {
    /// ln of the base; dB-like values convert between bases by ratios of this.
    pub fn ln(self) -> f64 {
        match self {
            LogBase::Ten => std::f64::consts::LN_10,
            LogBase::E => 1.0,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            LogBase::Ten => "10",
            LogBase::E => "e",
        }
    }
}

/// Complete description of one mel extraction front end.
#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    /// Waveform sample rate in Hz.
    pub sample_rate: u32,
    /// Number of mel bands.
    pub n_mels: usize,
    /// Peak absolute amplitude the waveform is rescaled to before analysis.
    pub wave_peak_norm: f64,
    /// FFT size in samples.
    pub n_fft: usize,
    /// Analysis window length in samples (zero-padded to `n_fft` if shorter).
    pub win_length: usize,
    /// Hop between adjacent frames in samples.
    pub hop_length: usize,
    /// Zero samples prepended to the waveform before framing.
    pub left_pad: usize,
    /// Zero samples appended to the waveform before framing.
    pub right_pad: usize,
    /// Lower edge of the mel filterbank in Hz.
    pub fmin: f64,
    /// Upper edge of the mel filterbank in Hz.
    pub fmax: f64,
    /// Whether mel magnitudes are mapped to a dB-like scale.
    pub amp_to_db: bool,
    /// Logarithm base of the dB mapping.
    pub log_base: LogBase,
    /// Multiplier of the logarithm (20 for conventional dB, 1 for plain log).
    pub log_factor: f64,
    /// Whether dB values are min–max normalized into [0, 1].
    pub normalize_mel: bool,
    /// dB value mapped to 1.0 by normalization.
    pub ref_level_db: f64,
    /// dB value (relative to `ref_level_db`) mapped to 0.0 by normalization.
    pub min_level_db: f64,
}

impl Default for MelConfig {
    /// Documented defaults: 22.05 kHz, 80 mel bands, 1024/1024/256 STFT, no
    /// padding, full 0–8 kHz band, natural-log amplitudes, no normalization.
    fn default() -> Self {
        MelConfig {
            sample_rate: 22050,
            n_mels: 80,
            wave_peak_norm: 1.0,
            n_fft: 1024,
            win_length: 1024,
            hop_length: 256,
            left_pad: 0,
            right_pad: 0,
            fmin: 0.0,
            fmax: 8000.0,
            amp_to_db: true,
            log_base: LogBase::E,
            log_factor: 1.0,
            normalize_mel: false,
            ref_level_db: 0.0,
            min_level_db: -100.0,
        }
    }
}

/// Parameters whose effect on a mel spectrogram cannot be undone by a value
/// transform; converting between them requires approximate re-synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct NonNormalizableParams {
    pub wave_peak_norm: f64,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub left_pad: usize,
    pub right_pad: usize,
    pub fmin: f64,
    pub fmax: f64,
}

/// Parameters whose effect is an exact elementwise value transform.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizableParams {
    pub amp_to_db: bool,
    pub log_base: LogBase,
    pub log_factor: f64,
    pub normalize_mel: bool,
    pub ref_level_db: f64,
    pub min_level_db: f64,
}

/// Canonical value space every spectrogram is brought into before further
/// processing: un-normalized natural-log amplitudes.
pub const NORMALIZING_BASE: NormalizableParams = NormalizableParams {
    amp_to_db: true,
    log_base: LogBase::E,
    log_factor: 1.0,
    normalize_mel: false,
    ref_level_db: 0.0,
    min_level_db: -100.0,
};

/// Number of entries in a [`ConfigFeatureVector`].
pub const FEATURE_DIM: usize = 8;

/// Fixed-order numeric encoding of the non-normalizable parameters, used to
/// condition the refinement network. Entries lie in [0, 1] for every value
/// on the supported sampling grid; off-grid values extrapolate linearly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfigFeatureVector(pub [f64; FEATURE_DIM]);

impl MelConfig {
    /// Checks every structural invariant, reporting the offending field.
    pub fn validate(&self) -> Result<()> {
        fn bad(field: &'static str, message: impl Into<String>) -> Error {
            Error::ConfigInvalid { field, message: message.into() }
        }
        if self.sample_rate == 0 {
            return Err(bad("sample_rate", "must be positive"));
        }
        if self.n_mels == 0 {
            return Err(bad("n_mels", "must be positive"));
        }
        if !(self.wave_peak_norm > 0.0 && self.wave_peak_norm <= 1.0) {
            return Err(bad(
                "wave_peak_norm",
                format!("must lie in (0, 1], got {}", self.wave_peak_norm),
            ));
        }
        if self.n_fft < 2 {
            return Err(bad("n_fft", "must be at least 2"));
        }
        if self.win_length == 0 || self.win_length > self.n_fft {
            return Err(bad(
                "win_length",
                format!("must lie in [1, n_fft={}], got {}", self.n_fft, self.win_length),
            ));
        }
        if self.hop_length == 0 {
            return Err(bad("hop_length", "must be positive"));
        }
        if !(self.fmin >= 0.0) {
            return Err(bad("fmin", format!("must be non-negative, got {}", self.fmin)));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.fmax > self.fmin && self.fmax <= nyquist) {
            return Err(bad(
                "fmax",
                format!("must satisfy fmin < fmax <= sample_rate/2 = {nyquist}, got {}", self.fmax),
            ));
        }
        if self.log_factor != 20.0 && self.log_factor != 1.0 {
            return Err(bad("log_factor", format!("must be 20 or 1, got {}", self.log_factor)));
        }
        if self.normalize_mel && !self.amp_to_db {
            return Err(bad("normalize_mel", "requires amp_to_db = true"));
        }
        if !self.ref_level_db.is_finite() {
            return Err(bad("ref_level_db", "must be finite"));
        }
        if !(self.min_level_db < 0.0) || !self.min_level_db.is_finite() {
            return Err(bad(
                "min_level_db",
                format!("must be finite and negative, got {}", self.min_level_db),
            ));
        }
        Ok(())
    }

    /// Splits the config into its non-normalizable and normalizable halves.
    pub fn split(&self) -> (NonNormalizableParams, NormalizableParams) {
        (
            NonNormalizableParams {
                wave_peak_norm: self.wave_peak_norm,
                n_fft: self.n_fft,
                win_length: self.win_length,
                hop_length: self.hop_length,
                left_pad: self.left_pad,
                right_pad: self.right_pad,
                fmin: self.fmin,
                fmax: self.fmax,
            },
            NormalizableParams {
                amp_to_db: self.amp_to_db,
                log_base: self.log_base,
                log_factor: self.log_factor,
                normalize_mel: self.normalize_mel,
                ref_level_db: self.ref_level_db,
                min_level_db: self.min_level_db,
            },
        )
    }

    /// Inverse of [`MelConfig::split`]; validates the recombined config.
    pub fn recombine(
        sample_rate: u32,
        n_mels: usize,
        a: &NonNormalizableParams,
        b: &NormalizableParams,
    ) -> Result<MelConfig> {
        let cfg = MelConfig {
            sample_rate,
            n_mels,
            wave_peak_norm: a.wave_peak_norm,
            n_fft: a.n_fft,
            win_length: a.win_length,
            hop_length: a.hop_length,
            left_pad: a.left_pad,
            right_pad: a.right_pad,
            fmin: a.fmin,
            fmax: a.fmax,
            amp_to_db: b.amp_to_db,
            log_base: b.log_base,
            log_factor: b.log_factor,
            normalize_mel: b.normalize_mel,
            ref_level_db: b.ref_level_db,
            min_level_db: b.min_level_db,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Returns a copy with the normalizable half replaced by `b`.
    pub fn with_normalizable(&self, b: &NormalizableParams) -> MelConfig {
        let mut cfg = self.clone();
        cfg.amp_to_db = b.amp_to_db;
        cfg.log_base = b.log_base;
        cfg.log_factor = b.log_factor;
        cfg.normalize_mel = b.normalize_mel;
        cfg.ref_level_db = b.ref_level_db;
        cfg.min_level_db = b.min_level_db;
        cfg
    }

    /// Parses the `key = value` text format. Unknown keys and duplicate keys
    /// are errors; `#` starts a comment; unspecified fields take the
    /// documented defaults. The result is validated.
    pub fn parse(text: &str) -> Result<MelConfig> {
        let mut cfg = MelConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: String| Error::ConfigSyntax { line: line_no, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            if value.is_empty() {
                return Err(syntax(format!("missing value for `{key}`")));
            }
            if let Some(prev) = seen.iter().find(|k| **k == key) {
                return Err(syntax(format!("duplicate key `{prev}`")));
            }
            fn num<T: std::str::FromStr>(
                value: &str,
                key: &str,
                line: usize,
            ) -> Result<T> {
                value.parse().map_err(|_| Error::ConfigSyntax {
                    line,
                    message: format!("cannot parse `{value}` as a number for `{key}`"),
                })
            }
            fn boolean(value: &str, key: &str, line: usize) -> Result<bool> {
                match value {
                    "true" => Ok(true),
                    "false" => Ok(false),
                    _ => Err(Error::ConfigSyntax {
                        line,
                        message: format!("expected true/false for `{key}`, got `{value}`"),
                    }),
                }
            }
            match key {
                "sample_rate" => cfg.sample_rate = num(value, key, line_no)?,
                "n_mels" => cfg.n_mels = num(value, key, line_no)?,
                "wave_peak_norm" => cfg.wave_peak_norm = num(value, key, line_no)?,
                "n_fft" => cfg.n_fft = num(value, key, line_no)?,
                "win_length" => cfg.win_length = num(value, key, line_no)?,
                "hop_length" => cfg.hop_length = num(value, key, line_no)?,
                "left_pad" => cfg.left_pad = num(value, key, line_no)?,
                "right_pad" => cfg.right_pad = num(value, key, line_no)?,
                "fmin" => cfg.fmin = num(value, key, line_no)?,
                "fmax" => cfg.fmax = num(value, key, line_no)?,
                "amp_to_db" => cfg.amp_to_db = boolean(value, key, line_no)?,
                "log_base" => {
                    cfg.log_base = match value {
                        "10" => LogBase::Ten,
                        "e" => LogBase::E,
                        _ => {
                            return Err(syntax(format!(
                                "log_base must be `10` or `e`, got `{value}`"
                            )))
                        }
                    }
                }
                "log_factor" => cfg.log_factor = num(value, key, line_no)?,
                "normalize_mel" => cfg.normalize_mel = boolean(value, key, line_no)?,
                "ref_level_db" => cfg.ref_level_db = num(value, key, line_no)?,
                "min_level_db" => cfg.min_level_db = num(value, key, line_no)?,
                _ => return Err(syntax(format!("unknown key `{key}`"))),
            }
            seen.push(match key {
                "sample_rate" => "sample_rate",
                "n_mels" => "n_mels",
                "wave_peak_norm" => "wave_peak_norm",
                "n_fft" => "n_fft",
                "win_length" => "win_length",
                "hop_length" => "hop_length",
                "left_pad" => "left_pad",
                "right_pad" => "right_pad",
                "fmin" => "fmin",
                "fmax" => "fmax",
                "amp_to_db" => "amp_to_db",
                "log_base" => "log_base",
                "log_factor" => "log_factor",
                "normalize_mel" => "normalize_mel",
                "ref_level_db" => "ref_level_db",
                "min_level_db" => "min_level_db",
                _ => unreachable!(),
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a config file.
    pub fn parse_file(path: impl AsRef<std::path::Path>) -> Result<MelConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MelConfig::parse(&text)
    }

    /// Canonical text form: every field, fixed order. `parse(serialize(c))`
    /// reproduces `c` exactly (float formatting round-trips).
    pub fn serialize(&self) -> String {
        format!(
            "sample_rate = {}\n\
             n_mels = {}\n\
             wave_peak_norm = {}\n\
             n_fft = {}\n\
             win_length = {}\n\
             hop_length = {}\n\
             left_pad = {}\n\
             right_pad = {}\n\
             fmin = {}\n\
             fmax = {}\n\
             amp_to_db = {}\n\
             log_base = {}\n\
             log_factor = {}\n\
             normalize_mel = {}\n\
             ref_level_db = {}\n\
             min_level_db = {}\n",
            self.sample_rate,
            self.n_mels,
            self.wave_peak_norm,
            self.n_fft,
            self.win_length,
            self.hop_length,
            self.left_pad,
            self.right_pad,
            self.fmin,
            self.fmax,
            self.amp_to_db,
            self.log_base.as_str(),
            self.log_factor,
            self.normalize_mel,
            self.ref_level_db,
            self.min_level_db,
        )
    }

    /// Returns the builtin config registered under `name` (`cfg1`..`cfg7`).
    pub fn builtin(name: &str) -> Result<MelConfig> {
        let cfg = match name {
            "cfg1" => MelConfig {
                n_fft: 2048,
                win_length: 1100,
                hop_length: 275,
                fmin: 40.0,
                fmax: 11025.0,
                log_base: LogBase::Ten,
                log_factor: 20.0,
                normalize_mel: true,
                ..MelConfig::default()
            },
            "cfg2" => MelConfig::default(),
            "cfg3" => MelConfig { left_pad: 384, right_pad: 384, ..MelConfig::default() },
            "cfg4" => MelConfig {
                wave_peak_norm: 0.95,
                left_pad: 384,
                right_pad: 384,
                fmax: 11025.0,
                log_base: LogBase::Ten,
                ..MelConfig::default()
            },
            "cfg5" => MelConfig {
                sample_rate: 24000,
                n_fft: 2048,
                win_length: 1200,
                hop_length: 300,
                fmax: 12000.0,
                log_base: LogBase::Ten,
                log_factor: 20.0,
                ..MelConfig::default()
            },
            "cfg6" => MelConfig {
                wave_peak_norm: 0.95,
                hop_length: 240,
                left_pad: 392,
                right_pad: 392,
                ..MelConfig::default()
            },
            "cfg7" => MelConfig {
                sample_rate: 16000,
                n_fft: 465,
                win_length: 465,
                hop_length: 160,
                fmin: 80.0,
                ..MelConfig::default()
            },
            _ => return Err(Error::UnknownBuiltin(name.to_string())),
        };
        debug_assert!(cfg.validate().is_ok());
        Ok(cfg)
    }

    /// Names of all builtin configs, in order.
    pub fn builtin_names() -> [&'static str; 7] {
        ["cfg1", "cfg2", "cfg3", "cfg4", "cfg5", "cfg6", "cfg7"]
    }

    /// All builtin configs, in order.
    pub fn builtins() -> Vec<MelConfig> {
        Self::builtin_names()
            .iter()
            .map(|n| MelConfig::builtin(n).expect("builtin"))
            .collect()
    }
}

/// Encodes the non-normalizable parameters as the fixed-order vector
/// `[wave_peak_norm, n_fft, ln(win_length), ln(hop_length), left_pad,
/// right_pad, fmin, fmax]`, each dimension affinely rescaled into [0, 1]
/// over the supported grid (peak spans [0.9, 1.0]; n_fft, log window and
/// log hop divide by their 2048 maximum; pads divide by 1024, above the
/// largest centering pad 924; fmin by 100; fmax by 12000). Window and hop
/// use their logarithm because their raw ranges span an order of magnitude.
pub fn encode_config_features(a: &NonNormalizableParams) -> ConfigFeatureVector {
    let ln_max = (2048f64).ln();
    ConfigFeatureVector([
        (a.wave_peak_norm - 0.9) / 0.1,
        a.n_fft as f64 / 2048.0,
        (a.win_length as f64).ln() / ln_max,
        (a.hop_length as f64).ln() / ln_max,
        a.left_pad as f64 / 1024.0,
        a.right_pad as f64 / 1024.0,
        a.fmin / 100.0,
        a.fmax / 12000.0,
    ])
}

/// Supported grid for random config sampling. Peak normalization is drawn
/// uniformly from a real interval; every other field from a finite set.
pub mod grid {
    pub const WAVE_PEAK_NORM: (f64, f64) = (0.9, 1.0);
    pub const N_FFT: [usize; 2] = [1024, 2048];
    pub const WIN_LENGTH: [usize; 5] = [800, 900, 1024, 1100, 1200];
    pub const FMIN: [f64; 5] = [0.0, 30.0, 50.0, 70.0, 90.0];
    pub const FMAX: [f64; 4] = [7600.0, 8000.0, 9500.0, 11025.0];
    pub const LOG_FACTOR: [f64; 2] = [20.0, 1.0];
}

/// Draws a uniformly random config over the supported grid at 22.05 kHz /
/// 80 mels: hop is a quarter window, padding is either zero or centering
/// `(n_fft - hop)/2`, and the normalizable half is drawn over dB/log
/// conventions with fixed reference levels. Combinations violating a config
/// invariant (window larger than FFT) and configs equal to any entry of
/// `exclude` are rejected and redrawn, up to a bounded number of attempts.
pub fn sample_random_config<R: Rng>(rng: &mut R, exclude: &[MelConfig]) -> Result<MelConfig> {
    const MAX_ATTEMPTS: usize = 10_000;
    for _ in 0..MAX_ATTEMPTS {
        let n_fft = grid::N_FFT[rng.gen_range(0..grid::N_FFT.len())];
        let win_length = grid::WIN_LENGTH[rng.gen_range(0..grid::WIN_LENGTH.len())];
        let hop_length = win_length / 4;
        let pads = [0, (n_fft.saturating_sub(hop_length)) / 2];
        let left_pad = pads[rng.gen_range(0..2)];
        let right_pad = pads[rng.gen_range(0..2)];
        let fmin = grid::FMIN[rng.gen_range(0..grid::FMIN.len())];
        let fmax = grid::FMAX[rng.gen_range(0..grid::FMAX.len())];
        let wave_peak_norm = rng.gen_range(grid::WAVE_PEAK_NORM.0..=grid::WAVE_PEAK_NORM.1);
        let amp_to_db = rng.gen_bool(0.5);
        let log_base = if rng.gen_bool(0.5) { LogBase::Ten } else { LogBase::E };
        let log_factor = grid::LOG_FACTOR[rng.gen_range(0..2)];
        let normalize_mel = amp_to_db && rng.gen_bool(0.5);
        let cfg = MelConfig {
            sample_rate: 22050,
            n_mels: 80,
            wave_peak_norm,
            n_fft,
            win_length,
            hop_length,
            left_pad,
            right_pad,
            fmin,
            fmax,
            amp_to_db,
            log_base,
            log_factor,
            normalize_mel,
            ref_level_db: 0.0,
            min_level_db: -100.0,
        };
        if cfg.validate().is_err() {
            continue;
        }
        if exclude.contains(&cfg) {
            continue;
        }
        return Ok(cfg);
    }
    Err(Error::SamplingExhausted(MAX_ATTEMPTS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn defaults_are_valid() {
        MelConfig::default().validate().unwrap();
    }

    #[test]
    fn shipped_config_files_match_the_builtins() {
        // The repository ships each built-in as a standalone config file;
        // those files must stay byte-identical to the canonical text form.
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for name in MelConfig::builtin_names() {
            let path = dir.join(format!("{name}.cfg"));
            let builtin = MelConfig::builtin(name).unwrap();
            assert_eq!(
                MelConfig::parse_file(&path).unwrap(),
                builtin,
                "{name}.cfg drifted from the builtin"
            );
            let text = std::fs::read_to_string(&path).unwrap();
            assert_eq!(text, builtin.serialize(), "{name}.cfg is not in canonical form");
        }
    }

    #[test]
    fn builtin_table_spot_checks() {
        let c1 = MelConfig::builtin("cfg1").unwrap();
        assert_eq!(c1.n_fft, 2048);
        assert_eq!(c1.win_length, 1100);
        assert_eq!(c1.hop_length, 275);
        assert_eq!(c1.fmin, 40.0);
        assert_eq!(c1.fmax, 11025.0);
        assert_eq!(c1.log_base, LogBase::Ten);
        assert_eq!(c1.log_factor, 20.0);
        assert!(c1.normalize_mel);
        assert_eq!(c1.sample_rate, 22050);

        let c4 = MelConfig::builtin("cfg4").unwrap();
        assert_eq!(c4.wave_peak_norm, 0.95);
        assert_eq!(c4.left_pad, 384);
        assert_eq!(c4.right_pad, 384);
        assert_eq!(c4.fmax, 11025.0);
        assert_eq!(c4.log_base, LogBase::Ten);
        assert_eq!(c4.log_factor, 1.0);
        assert!(!c4.normalize_mel);

        // Centering pads equal (n_fft - hop)/2 for the padded builtins.
        let c3 = MelConfig::builtin("cfg3").unwrap();
        assert_eq!(c3.left_pad, (c3.n_fft - c3.hop_length) / 2);
        let c6 = MelConfig::builtin("cfg6").unwrap();
        assert_eq!(c6.left_pad, (c6.n_fft - c6.hop_length) / 2);

        // The two non-22.05 kHz builtins keep fmax within Nyquist.
        let c5 = MelConfig::builtin("cfg5").unwrap();
        assert_eq!((c5.sample_rate, c5.fmax), (24000, 12000.0));
        let c7 = MelConfig::builtin("cfg7").unwrap();
        assert_eq!((c7.sample_rate, c7.n_fft, c7.hop_length, c7.fmin), (16000, 465, 160, 80.0));

        for cfg in MelConfig::builtins() {
            cfg.validate().unwrap();
            assert_eq!(cfg.n_mels, 80);
            assert!(cfg.amp_to_db);
        }
        assert!(MelConfig::builtin("cfg8").is_err());
    }

    #[test]
    fn parse_applies_defaults_and_comments() {
        let cfg = MelConfig::parse("# comment only\n\nn_fft = 2048 # trailing\nwin_length=1100\nhop_length = 275\n").unwrap();
        assert_eq!(cfg.sample_rate, 22050);
        assert_eq!(cfg.n_mels, 80);
        assert_eq!(cfg.n_fft, 2048);
        assert_eq!(cfg.win_length, 1100);
        // Empty document is all defaults.
        assert_eq!(MelConfig::parse("").unwrap(), MelConfig::default());
    }

    #[test]
    fn parse_rejects_bad_documents() {
        // Unknown key.
        assert!(matches!(
            MelConfig::parse("nfft = 2048"),
            Err(Error::ConfigSyntax { line: 1, .. })
        ));
        // Duplicate key.
        assert!(MelConfig::parse("n_fft = 1024\nn_fft = 2048").is_err());
        // Not key = value.
        assert!(MelConfig::parse("n_fft 1024").is_err());
        // Bad number.
        assert!(MelConfig::parse("n_fft = large").is_err());
        // Invariant violation reports the field: fmax above Nyquist.
        match MelConfig::parse("fmax = 12000") {
            Err(Error::ConfigInvalid { field, .. }) => assert_eq!(field, "fmax"),
            other => panic!("expected fmax invariant error, got {other:?}"),
        }
        // win_length > n_fft.
        match MelConfig::parse("win_length = 2048") {
            Err(Error::ConfigInvalid { field, .. }) => assert_eq!(field, "win_length"),
            other => panic!("expected win_length invariant error, got {other:?}"),
        }
        // normalize_mel without amp_to_db.
        assert!(MelConfig::parse("amp_to_db = false\nnormalize_mel = true").is_err());
        // log_factor outside {20, 1}.
        assert!(MelConfig::parse("log_factor = 10").is_err());
    }

    #[test]
    fn serialize_parse_round_trips_builtins() {
        for cfg in MelConfig::builtins() {
            let text = cfg.serialize();
            assert_eq!(MelConfig::parse(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn split_recombine_is_identity() {
        for cfg in MelConfig::builtins() {
            let (a, b) = cfg.split();
            let back = MelConfig::recombine(cfg.sample_rate, cfg.n_mels, &a, &b).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn feature_encoding_matches_hand_computed_values() {
        let cfg = MelConfig::builtin("cfg2").unwrap();
        let ConfigFeatureVector(f) = encode_config_features(&cfg.split().0);
        assert!((f[0] - 1.0).abs() < 1e-12, "peak 1.0 -> 1.0, got {}", f[0]);
        assert!((f[1] - 0.5).abs() < 1e-12, "n_fft 1024 -> 0.5, got {}", f[1]);
        assert!((f[2] - (1024f64).ln() / (2048f64).ln()).abs() < 1e-12);
        assert!((f[3] - (256f64).ln() / (2048f64).ln()).abs() < 1e-12);
        assert_eq!(f[4], 0.0);
        assert_eq!(f[5], 0.0);
        assert_eq!(f[6], 0.0);
        assert!((f[7] - 8000.0 / 12000.0).abs() < 1e-12);

        // All builtins and the whole sampling grid stay in [0, 1].
        for cfg in MelConfig::builtins() {
            for v in encode_config_features(&cfg.split().0).0 {
                assert!((0.0..=1.0).contains(&v), "feature {v} outside [0,1] for {cfg:?}");
            }
        }
    }

    #[test]
    fn feature_encoding_is_injective_over_the_grid() {
        // Enumerate the finite part of the sampling grid (peak fixed to a
        // few representative values) and check no two configs collide.
        let mut seen: Vec<[f64; FEATURE_DIM]> = Vec::new();
        for &peak in &[0.9, 0.95, 1.0] {
            for &n_fft in &grid::N_FFT {
                for &win in &grid::WIN_LENGTH {
                    if win > n_fft {
                        continue;
                    }
                    let hop = win / 4;
                    for &left in &[0, (n_fft - hop) / 2] {
                        for &right in &[0, (n_fft - hop) / 2] {
                            for &fmin in &grid::FMIN {
                                for &fmax in &grid::FMAX {
                                    let a = NonNormalizableParams {
                                        wave_peak_norm: peak,
                                        n_fft,
                                        win_length: win,
                                        hop_length: hop,
                                        left_pad: left,
                                        right_pad: right,
                                        fmin,
                                        fmax,
                                    };
                                    seen.push(encode_config_features(&a).0);
                                }
                            }
                        }
                    }
                }
            }
        }
        let total = seen.len();
        seen.sort_by(|x, y| x.partial_cmp(y).unwrap());
        seen.dedup();
        assert_eq!(seen.len(), total, "feature encoding collided on the grid");
    }

    #[test]
    fn sampler_is_deterministic_and_respects_exclusions() {
        let exclude = MelConfig::builtins();
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a = sample_random_config(&mut r1, &exclude).unwrap();
            let b = sample_random_config(&mut r2, &exclude).unwrap();
            assert_eq!(a, b);
            a.validate().unwrap();
            assert!(!exclude.contains(&a));
            assert!(grid::N_FFT.contains(&a.n_fft));
            assert!(grid::WIN_LENGTH.contains(&a.win_length));
            assert_eq!(a.hop_length, a.win_length / 4);
            assert!(a.left_pad == 0 || a.left_pad == (a.n_fft - a.hop_length) / 2);
            assert!(a.wave_peak_norm >= 0.9 && a.wave_peak_norm <= 1.0);
            assert!(a.win_length <= a.n_fft);
        }
    }

    proptest! {
        /// Any sampled config survives a serialize→parse round trip exactly.
        #[test]
        fn sampled_configs_round_trip(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = sample_random_config(&mut rng, &[]).unwrap();
            prop_assert_eq!(MelConfig::parse(&cfg.serialize()).unwrap(), cfg);
        }

        /// Split followed by recombine reproduces any sampled config.
        #[test]
        fn sampled_configs_split_recombine(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = sample_random_config(&mut rng, &[]).unwrap();
            let (a, b) = cfg.split();
            prop_assert_eq!(
                MelConfig::recombine(cfg.sample_rate, cfg.n_mels, &a, &b).unwrap(),
                cfg
            );
        }
    }
}
