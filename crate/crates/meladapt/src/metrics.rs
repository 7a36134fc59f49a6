//! Objective comparison of two waveforms: mel-cepstral distortion (MCD),
//! fundamental-frequency RMSE over a YIN pitch track, and the
//! voiced/unvoiced disagreement rate.
//!
//! All three metrics use fixed internal analysis settings independent of any
//! [`MelConfig`](crate::config::MelConfig): the point is to compare audio, so
//! the analysis must not inherit either side's extraction conventions.
//! Comparisons are frame-aligned (no dynamic time warping): both inputs are
//! analyzed with the same framing and trimmed to the shorter frame count,
//! which suits signals that are already time-aligned by construction.

use crate::dsp::{mel_filterbank, stft, FrameGeometry, Waveform, DB_FLOOR_AMPLITUDE};
use crate::error::{Error, Result};
use ndarray::Array2;
use serde::Serialize;

/// FFT size and window length of the cepstral analysis frames.
const CEPSTRAL_N_FFT: usize = 1024;
/// Hop between cepstral analysis frames, in samples.
const CEPSTRAL_HOP: usize = 256;
/// Mel bands underlying the cepstra. The band spans 0 Hz to Nyquist.
const CEPSTRAL_MELS: usize = 80;
/// Cepstral coefficients kept for MCD: `c1..=CEPSTRAL_ORDER`. `c0` carries
/// the overall gain and is excluded, which makes MCD invariant to uniform
/// amplitude scaling.
pub const CEPSTRAL_ORDER: usize = 13;

/// Pitch search band, Hz. Voiced estimates always land inside it.
pub const F0_MIN_HZ: f64 = 50.0;
pub const F0_MAX_HZ: f64 = 600.0;
/// YIN integration window (seconds) and hop (seconds).
const F0_WINDOW_SECONDS: f64 = 0.025;
const F0_HOP_SECONDS: f64 = 0.010;
/// Cumulative-mean-normalized difference threshold below which a lag is
/// accepted as periodic.
const F0_THRESHOLD: f64 = 0.15;
/// Frames whose RMS falls below this are classified unvoiced outright.
const F0_SILENCE_RMS: f64 = 1e-4;

/// Per-frame pitch track. `f0_hz[i] == 0.0` exactly when `voiced[i]` is
/// false; voiced values lie within [`F0_MIN_HZ`], [`F0_MAX_HZ`]].
#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    pub f0_hz: Vec<f64>,
    pub voiced: Vec<bool>,
    /// Hop between frames, in samples.
    pub hop_length: usize,
}

impl F0Track {
    pub fn frames(&self) -> usize {
        self.f0_hz.len()
    }
}

/// One evaluation record comparing a generated waveform against a reference.
/// `f0_rmse_hz` is absent (JSON `null`) when the two tracks share no
/// commonly-voiced frame. `frames` counts the compared cepstral frames.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub mcd_db: f64,
    pub f0_rmse_hz: Option<f64>,
    pub vuv_error_pct: f64,
    pub frames: usize,
}

/// Orthonormal DCT-II rows `1..=order` for length-`m` inputs:
/// `table[k-1][j] = sqrt(2/m) * cos(pi * k * (2j+1) / (2m))`. Rows are unit
/// length and orthogonal to each other and to the constant vector.
fn dct_rows(order: usize, m: usize) -> Array2<f64> {
    let norm = (2.0 / m as f64).sqrt();
    Array2::from_shape_fn((order, m), |(row, j)| {
        let k = (row + 1) as f64;
        norm * (std::f64::consts::PI * k * (2.0 * j as f64 + 1.0) / (2.0 * m as f64)).cos()
    })
}

/// Mel cepstra of `w`: frames x `order` coefficients `c1..=c_order`.
///
/// The analysis is fixed — 1024-point windows and FFT, hop 256, 80 mel bands
/// over 0 Hz..Nyquist, natural log with the usual amplitude floor, then an
/// orthonormal DCT-II along the mel axis keeping coefficients 1..=order
/// (c0, the frame gain, is dropped). The waveform is analyzed as-is: no peak
/// normalization and no padding, so identical audio yields identical cepstra.
pub fn mel_cepstra(w: &Waveform, order: usize) -> Result<Array2<f64>> {
    if order == 0 || order >= CEPSTRAL_MELS {
        return Err(Error::InvalidArgument(format!(
            "cepstral order must be in 1..{CEPSTRAL_MELS}, got {order}"
        )));
    }
    let geometry = FrameGeometry {
        n_fft: CEPSTRAL_N_FFT,
        win_length: CEPSTRAL_N_FFT,
        hop_length: CEPSTRAL_HOP,
        left_pad: 0,
        right_pad: 0,
    };
    let spec = stft(w, &geometry)?;
    let fb = mel_filterbank(
        w.sample_rate,
        CEPSTRAL_N_FFT,
        CEPSTRAL_MELS,
        0.0,
        w.sample_rate as f64 / 2.0,
    )?;
    let mut logmel = fb.apply(&spec.magnitudes);
    logmel.mapv_inplace(|v| v.max(DB_FLOOR_AMPLITUDE).ln());
    Ok(logmel.dot(&dct_rows(order, CEPSTRAL_MELS).t()))
}

/// Mel-cepstral distortion in dB between two same-rate waveforms:
/// `(10/ln 10) * sqrt(2) * mean_f ||c_a[f] - c_b[f]||_2` over coefficients
/// `c1..=c13`, after trimming both cepstra to the shorter frame count.
///
/// Symmetric, zero for identical audio, and invariant to uniform amplitude
/// scaling of either side (the gain lands entirely in the excluded c0).
pub fn mcd(a: &Waveform, b: &Waveform) -> Result<f64> {
    if a.sample_rate != b.sample_rate {
        return Err(Error::SampleRateMismatch { left: a.sample_rate, right: b.sample_rate });
    }
    let ca = mel_cepstra(a, CEPSTRAL_ORDER)?;
    let cb = mel_cepstra(b, CEPSTRAL_ORDER)?;
    let frames = ca.nrows().min(cb.nrows());
    if frames == 0 {
        return Err(Error::InvalidArgument("no overlapping analysis frames".into()));
    }
    let mut total = 0.0;
    for f in 0..frames {
        let d2: f64 = ca
            .row(f)
            .iter()
            .zip(cb.row(f).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        total += d2.sqrt();
    }
    let scale = 10.0 / std::f64::consts::LN_10 * std::f64::consts::SQRT_2;
    Ok(scale * total / frames as f64)
}

/// Estimates a pitch track with the YIN difference-function method: 25 ms
/// integration window, 10 ms hop, cumulative-mean normalization, absolute
/// threshold 0.15, search band 50–600 Hz.
///
/// Per frame: the squared difference `d(tau)` is normalized by its running
/// mean, the first lag dipping below the threshold is walked to its local
/// minimum and refined by parabolic interpolation, and the frame is voiced
/// with `f0 = sr / tau`. Frames with RMS below 1e-4 or with no lag under the
/// threshold are unvoiced (there is no fallback to the global minimum —
/// aperiodic frames should stay unvoiced). Waveforms too short for a single
/// window yield an empty track rather than an error.
pub fn estimate_f0(w: &Waveform) -> Result<F0Track> {
    if w.sample_rate == 0 {
        return Err(Error::BadSampleRate(0));
    }
    let sr = w.sample_rate as f64;
    let window = (F0_WINDOW_SECONDS * sr).round() as usize;
    let hop = ((F0_HOP_SECONDS * sr).round() as usize).max(1);
    let tau_min = (sr / F0_MAX_HZ).ceil() as usize;
    let tau_max = (sr / F0_MIN_HZ).floor() as usize;

    let mut track = F0Track { f0_hz: Vec::new(), voiced: Vec::new(), hop_length: hop };
    // Degenerate band (sample rate far below speech rates): nothing is
    // searchable, so every frame is unvoiced.
    let searchable = tau_min >= 1 && tau_min < tau_max;

    let x = &w.samples;
    let mut start = 0;
    // d(tau) over the cumulative range 1..=tau_max, reused across frames.
    let mut diff = vec![0.0f64; tau_max + 1];
    let mut cmnd = vec![1.0f64; tau_max + 1];
    while start + window + tau_max <= x.len() {
        let frame = &x[start..start + window + tau_max];
        start += hop;

        let rms = (frame[..window].iter().map(|v| v * v).sum::<f64>() / window as f64).sqrt();
        if !searchable || rms < F0_SILENCE_RMS {
            track.f0_hz.push(0.0);
            track.voiced.push(false);
            continue;
        }

        // Difference function and its cumulative-mean normalization.
        let mut running = 0.0;
        for tau in 1..=tau_max {
            let mut d = 0.0;
            for j in 0..window {
                let e = frame[j] - frame[j + tau];
                d += e * e;
            }
            diff[tau] = d;
            running += d;
            cmnd[tau] = if running > 0.0 { d * tau as f64 / running } else { 1.0 };
        }

        // First lag under the threshold, walked down to its local minimum.
        let mut found = None;
        for tau in tau_min..=tau_max {
            if cmnd[tau] < F0_THRESHOLD {
                let mut t = tau;
                while t + 1 <= tau_max && cmnd[t + 1] < cmnd[t] {
                    t += 1;
                }
                found = Some(t);
                break;
            }
        }

        match found {
            Some(t) => {
                let mut tau_hat = t as f64;
                if t > 1 && t < tau_max {
                    let (dm, d0, dp) = (cmnd[t - 1], cmnd[t], cmnd[t + 1]);
                    let denom = dm - 2.0 * d0 + dp;
                    if denom.abs() > 1e-12 {
                        let delta = 0.5 * (dm - dp) / denom;
                        if delta.abs() < 1.0 {
                            tau_hat += delta;
                        }
                    }
                }
                tau_hat = tau_hat.clamp(tau_min as f64, tau_max as f64);
                track.f0_hz.push(sr / tau_hat);
                track.voiced.push(true);
            }
            None => {
                track.f0_hz.push(0.0);
                track.voiced.push(false);
            }
        }
    }
    Ok(track)
}

/// Root-mean-square F0 error in Hz over frames voiced in *both* tracks
/// (tracks are trimmed to the shorter one first). `None` when no frame is
/// commonly voiced — the error is undefined there, not zero. Both tracks
/// must come from the same estimator settings so frames align.
pub fn f0_rmse(a: &F0Track, b: &F0Track) -> Option<f64> {
    let frames = a.frames().min(b.frames());
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..frames {
        if a.voiced[i] && b.voiced[i] {
            let d = a.f0_hz[i] - b.f0_hz[i];
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        None
    } else {
        Some((sum / n as f64).sqrt())
    }
}

/// Percentage of frames (after trimming to the shorter track) whose
/// voiced/unvoiced flags disagree. Two empty tracks disagree nowhere: 0%.
pub fn vuv_error(a: &F0Track, b: &F0Track) -> f64 {
    let frames = a.frames().min(b.frames());
    if frames == 0 {
        return 0.0;
    }
    let disagree = (0..frames).filter(|&i| a.voiced[i] != b.voiced[i]).count();
    100.0 * disagree as f64 / frames as f64
}

/// Runs all three metrics on a generated/reference pair (equal sample rates
/// required). `frames` is the number of cepstral frames compared by MCD.
pub fn evaluate_pair(generated: &Waveform, reference: &Waveform) -> Result<EvalReport> {
    let mcd_db = mcd(generated, reference)?;
    let frames = mel_cepstra(generated, CEPSTRAL_ORDER)?
        .nrows()
        .min(mel_cepstra(reference, CEPSTRAL_ORDER)?.nrows());
    let ta = estimate_f0(generated)?;
    let tb = estimate_f0(reference)?;
    Ok(EvalReport {
        mcd_db,
        f0_rmse_hz: f0_rmse(&ta, &tb),
        vuv_error_pct: vuv_error(&ta, &tb),
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SR: u32 = 22050;

    fn sine(freq: f64, seconds: f64, amp: f64) -> Waveform {
        let n = (seconds * SR as f64).round() as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SR as f64).sin())
            .collect();
        Waveform::new(samples, SR)
    }

    fn noise(seconds: f64, amp: f64, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (seconds * SR as f64).round() as usize;
        let samples = (0..n).map(|_| rng.gen_range(-amp..amp)).collect();
        Waveform::new(samples, SR)
    }

    #[test]
    fn dct_rows_are_orthonormal_and_kill_constants() {
        let t = dct_rows(CEPSTRAL_ORDER, CEPSTRAL_MELS);
        let gram = t.dot(&t.t());
        for i in 0..CEPSTRAL_ORDER {
            for j in 0..CEPSTRAL_ORDER {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (gram[[i, j]] - want).abs() < 1e-12,
                    "gram[{i},{j}] = {}",
                    gram[[i, j]]
                );
            }
        }
        // Every kept row is orthogonal to the constant (c0) direction.
        for i in 0..CEPSTRAL_ORDER {
            let s: f64 = t.row(i).sum();
            assert!(s.abs() < 1e-12, "row {i} sums to {s}");
        }
    }

    #[test]
    fn identical_waveforms_give_identical_cepstra_and_zero_mcd() {
        let w = noise(0.5, 0.3, 1);
        let c1 = mel_cepstra(&w, CEPSTRAL_ORDER).unwrap();
        let c2 = mel_cepstra(&w, CEPSTRAL_ORDER).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(mcd(&w, &w).unwrap(), 0.0);
    }

    #[test]
    fn silence_cepstra_sit_at_the_floor() {
        // All-zero audio hits the amplitude floor in every band, so the
        // log-mel frame is constant and every kept coefficient vanishes.
        let w = Waveform::new(vec![0.0; SR as usize / 4], SR);
        let c = mel_cepstra(&w, CEPSTRAL_ORDER).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn mcd_is_symmetric_and_nonnegative() {
        let a = sine(220.0, 0.4, 0.5);
        let b = noise(0.4, 0.3, 2);
        let ab = mcd(&a, &b).unwrap();
        let ba = mcd(&b, &a).unwrap();
        assert_eq!(ab, ba);
        assert!(ab > 0.0);
    }

    #[test]
    fn mcd_ignores_uniform_amplitude_scaling() {
        // Doubling the signal shifts every log-mel value by ln 2, which the
        // orthonormal DCT routes entirely into the dropped c0.
        let x = noise(0.5, 0.3, 3);
        let double = Waveform::new(x.samples.iter().map(|v| 2.0 * v).collect(), SR);
        assert!(mcd(&x, &double).unwrap() < 1e-9);
    }

    #[test]
    fn mcd_requires_matching_rates_and_rejects_bad_order() {
        let a = sine(220.0, 0.2, 0.5);
        let b = Waveform::new(a.samples.clone(), 16000);
        assert!(matches!(mcd(&a, &b), Err(Error::SampleRateMismatch { .. })));
        assert!(mel_cepstra(&a, 0).is_err());
        assert!(mel_cepstra(&a, CEPSTRAL_MELS).is_err());
    }

    #[test]
    fn sine_pitch_is_recovered_within_three_hz() {
        let w = sine(220.0, 1.0, 0.5);
        let t = estimate_f0(&w).unwrap();
        assert!(t.frames() > 50);
        assert!(t.voiced.iter().all(|&v| v), "pure tone should be voiced everywhere");
        for (i, &f) in t.f0_hz.iter().enumerate() {
            assert!((f - 220.0).abs() <= 3.0, "frame {i}: {f} Hz");
            assert!((F0_MIN_HZ..=F0_MAX_HZ).contains(&f));
        }
    }

    #[test]
    fn noise_is_mostly_unvoiced_and_silence_entirely() {
        let n = noise(1.0, 0.3, 4);
        let t = estimate_f0(&n).unwrap();
        let unvoiced = t.voiced.iter().filter(|&&v| !v).count();
        assert!(
            unvoiced as f64 >= 0.9 * t.frames() as f64,
            "{unvoiced}/{} unvoiced",
            t.frames()
        );

        let s = Waveform::new(vec![0.0; SR as usize], SR);
        let ts = estimate_f0(&s).unwrap();
        assert!(ts.frames() > 0);
        assert!(ts.voiced.iter().all(|&v| !v));
        assert!(ts.f0_hz.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn track_invariants_hold_on_mixed_audio() {
        // Half tone, half silence: voiced frames stay in band, unvoiced
        // frames report exactly 0 Hz.
        let mut samples = sine(220.0, 0.5, 0.5).samples;
        samples.extend(std::iter::repeat(0.0).take(SR as usize / 2));
        let t = estimate_f0(&Waveform::new(samples, SR)).unwrap();
        assert!(t.voiced.iter().any(|&v| v));
        assert!(t.voiced.iter().any(|&v| !v));
        for (&f, &v) in t.f0_hz.iter().zip(&t.voiced) {
            assert_eq!(f == 0.0, !v);
            if v {
                assert!((F0_MIN_HZ..=F0_MAX_HZ).contains(&f));
            }
        }
    }

    #[test]
    fn identical_tracks_score_zero_and_inverted_flags_score_hundred() {
        let t = estimate_f0(&sine(220.0, 0.5, 0.5)).unwrap();
        assert_eq!(f0_rmse(&t, &t), Some(0.0));
        assert_eq!(vuv_error(&t, &t), 0.0);

        let flipped = F0Track {
            f0_hz: t.voiced.iter().map(|&v| if v { 0.0 } else { 100.0 }).collect(),
            voiced: t.voiced.iter().map(|&v| !v).collect(),
            hop_length: t.hop_length,
        };
        assert_eq!(vuv_error(&t, &flipped), 100.0);
        // No commonly-voiced frame: the RMSE is absent, not zero.
        assert_eq!(f0_rmse(&t, &flipped), None);
    }

    #[test]
    fn detuned_sines_differ_by_about_four_hz() {
        let ta = estimate_f0(&sine(220.0, 1.0, 0.5)).unwrap();
        let tb = estimate_f0(&sine(224.0, 1.0, 0.5)).unwrap();
        let rmse = f0_rmse(&ta, &tb).expect("both tones are voiced");
        assert!((rmse - 4.0).abs() <= 1.0, "rmse {rmse}");
        assert_eq!(vuv_error(&ta, &tb), 0.0);
    }

    #[test]
    fn evaluate_pair_reports_and_serializes() {
        let a = sine(220.0, 0.5, 0.5);
        let r = evaluate_pair(&a, &a).unwrap();
        assert_eq!(r.mcd_db, 0.0);
        assert_eq!(r.f0_rmse_hz, Some(0.0));
        assert_eq!(r.vuv_error_pct, 0.0);
        assert!(r.frames > 0);

        // Absent RMSE serializes as null, not 0.
        let b = noise(0.5, 0.3, 5);
        let rb = evaluate_pair(&a, &b).unwrap();
        let json = serde_json::to_string(&rb).unwrap();
        assert!(json.contains("\"mcd_db\":"));
        if rb.f0_rmse_hz.is_none() {
            assert!(json.contains("\"f0_rmse_hz\":null"));
        }
    }

    #[test]
    fn trailing_silence_up_to_one_hop_changes_nothing() {
        let a = sine(220.0, 0.7, 0.5);
        let mut padded_samples = a.samples.clone();
        padded_samples.extend(std::iter::repeat(0.0).take(200));
        let padded = Waveform::new(padded_samples, SR);

        let base = evaluate_pair(&a, &a).unwrap();
        let with_pad = evaluate_pair(&a, &padded).unwrap();
        assert_eq!(base.mcd_db, with_pad.mcd_db);
        assert_eq!(base.f0_rmse_hz, with_pad.f0_rmse_hz);
        assert_eq!(base.vuv_error_pct, with_pad.vuv_error_pct);
        assert_eq!(base.frames, with_pad.frames);
    }
}
