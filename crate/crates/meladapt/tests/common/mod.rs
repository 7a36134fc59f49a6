//! Deterministic synthetic audio for the integration suite: pitched clips
//! with a few decaying harmonics, a slow amplitude envelope, and a touch of
//! low-passed noise, so extraction, pitch tracking, and training all have
//! something realistic to chew on.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use meladapt::dsp::Waveform;
use meladapt::io::write_wav;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A pitched synthetic clip, bit-reproducible per seed, shaped like a short
/// voiced utterance: the fundamental lies in [150, 300] Hz (comfortably
/// inside the pitch tracker's search band), the harmonic stack extends to
/// ~7 kHz with a slow spectral decay, a quiet low-passed noise floor keeps
/// spectral valleys off the extraction floor, and 80 ms raised-cosine fades
/// take both ends to silence the way recorded clips do. The peak is scaled
/// to 0.7 so 16-bit quantization never clips.
pub fn harmonic_clip(seed: u64, sample_rate: u32, seconds: f64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0xc11f);
    let f0: f64 = rng.gen_range(150.0..300.0);
    let n_harm = (7000.0 / f0).floor() as usize;
    let decay: f64 = rng.gen_range(0.5..0.9);
    let amps: Vec<f64> =
        (1..=n_harm).map(|h| rng.gen_range(0.6..1.0) / (h as f64).powf(decay)).collect();
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let env_rate: f64 = rng.gen_range(0.5..2.0);
    let env_phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let noise_level: f64 = rng.gen_range(0.015..0.035);

    let n = (seconds * sample_rate as f64).round() as usize;
    let mut lowpass = [0.0f64; 3];
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sample_rate as f64;
        let mut v = 0.0;
        for h in 0..n_harm {
            v += amps[h] * (2.0 * PI * f0 * (h + 1) as f64 * t + phases[h]).sin();
        }
        let env = 0.6 + 0.4 * (2.0 * PI * env_rate * t + env_phase).sin().powi(2);
        let mut noise = rng.gen_range(-1.0f64..1.0);
        for stage in lowpass.iter_mut() {
            *stage += 0.75 * (noise - *stage);
            noise = *stage;
        }
        samples.push(v * env + noise_level * noise);
    }
    let fade_n = ((0.08 * sample_rate as f64).round() as usize).min(n / 2);
    for i in 0..fade_n {
        let gain = 0.5 - 0.5 * (PI * i as f64 / fade_n as f64).cos();
        samples[i] *= gain;
        samples[n - 1 - i] *= gain;
    }
    let peak = samples.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-9);
    for s in &mut samples {
        *s *= 0.7 / peak;
    }
    Waveform::new(samples, sample_rate)
}

/// Writes `count` clips (seeds `first_seed..first_seed+count`) into `dir` as
/// `clip000.wav`, `clip001.wav`, … and returns the paths.
pub fn write_corpus(
    dir: &Path,
    count: usize,
    first_seed: u64,
    sample_rate: u32,
    seconds: f64,
) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).expect("corpus dir");
    (0..count)
        .map(|i| {
            let path = dir.join(format!("clip{i:03}.wav"));
            let clip = harmonic_clip(first_seed + i as u64, sample_rate, seconds);
            write_wav(&path, &clip).expect("write corpus clip");
            path
        })
        .collect()
}
