//! Self-contained trainer for the refinement network.
//!
//! Training data is prepared once by [`prepare_training_set`]: the corpus is
//! partitioned into subsets, each subset gets a random source config, and
//! every utterance is stored alongside its analytically reconstructed
//! intermediate waveform. The [`train`] loop then samples a fresh pool of
//! target configs every epoch, extracts the network input (from the
//! intermediate) and the ground truth (from the original) under each drawn
//! target config, and regresses the input onto the truth with a masked L1
//! loss in the common base value space.
//!
//! Every random choice flows from one seed through [`derive_rng`], so runs
//! are bit-reproducible.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4, ArrayD, ArrayViewD, ArrayViewMutD, NdFloat};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{cast, masked_l1_loss, Mode};
use super::unet::{NetworkShape, RefineNet};
use super::weights::write_weights;
use crate::config::{sample_random_config, MelConfig, FEATURE_DIM};
use crate::convert::{invert_to_waveform, DEFAULT_GRIFFIN_LIM_ITERS};
use crate::dsp::{extract_mel, peak_normalize, Waveform};
use crate::error::{Error, Result};
use crate::io::{read_wav, write_wav};
use crate::normalize::to_base;

// ---------------------------------------------------------------------------
// Seed derivation
// ---------------------------------------------------------------------------

/// Derives an independent, reproducible RNG stream from the master seed, a
/// purpose label, and an index (epoch number, utterance number, …). Streams
/// with different purposes or indices never share state.
pub(crate) fn derive_rng(seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    // FNV-1a over the purpose string.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in purpose.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&h.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..32].copy_from_slice(&0x5eed_da7a_0f0e_0d0cu64.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

// ---------------------------------------------------------------------------
// Training configuration
// ---------------------------------------------------------------------------

/// Hyperparameters of a training run. Parsed from the same `key = value`
/// document format as mel configs; unset keys keep their defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub segment_frames: usize,
    pub initial_lr: f64,
    pub lr_halving_epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Pooling levels of the network to train.
    pub levels: usize,
    /// Base channel width of the network to train.
    pub base_channels: usize,
    /// Size of the per-epoch pool of random target configs.
    pub configs_per_epoch: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 100,
            batch_size: 32,
            segment_frames: 200,
            initial_lr: 1e-3,
            lr_halving_epochs: 50,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            validation_fraction: 0.10,
            seed: 0,
            levels: 4,
            base_channels: 32,
            configs_per_epoch: 100,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        fn bad(field: &'static str, message: impl Into<String>) -> Error {
            Error::ConfigInvalid { field, message: message.into() }
        }
        if self.epochs == 0 {
            return Err(bad("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be positive"));
        }
        if self.segment_frames == 0 {
            return Err(bad("segment_frames", "must be positive"));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(bad("learning_rate", "must be positive and finite"));
        }
        if self.lr_halving_epochs == 0 {
            return Err(bad("lr_halving_epochs", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(bad("weight_decay", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(bad("beta1", "betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(bad("epsilon", "must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(bad("validation_fraction", "must lie strictly between 0 and 1"));
        }
        if self.configs_per_epoch == 0 {
            return Err(bad("configs_per_epoch", "must be positive"));
        }
        NetworkShape { n_mels: 80, levels: self.levels, base_channels: self.base_channels }
            .validate()?;
        Ok(())
    }

    /// Parses a `key = value` document (same syntax as config files:
    /// `#` comments, blank lines allowed, duplicate or unknown keys are
    /// errors). Missing keys keep the defaults.
    pub fn parse(text: &str) -> Result<TrainingConfig> {
        let mut cfg = TrainingConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::ConfigSyntax {
                    line,
                    message: format!("expected 'key = value', got '{content}'"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(Error::ConfigSyntax { line, message: format!("duplicate key '{key}'") });
            }
            seen.push(key.to_string());

            fn int(line: usize, key: &str, value: &str) -> Result<usize> {
                value.parse::<usize>().map_err(|_| Error::ConfigSyntax {
                    line,
                    message: format!("'{key}' expects a non-negative integer, got '{value}'"),
                })
            }
            fn float(line: usize, key: &str, value: &str) -> Result<f64> {
                value.parse::<f64>().map_err(|_| Error::ConfigSyntax {
                    line,
                    message: format!("'{key}' expects a number, got '{value}'"),
                })
            }

            match key {
                "epochs" => cfg.epochs = int(line, key, value)?,
                "batch_size" => cfg.batch_size = int(line, key, value)?,
                "segment_frames" => cfg.segment_frames = int(line, key, value)?,
                "learning_rate" => cfg.initial_lr = float(line, key, value)?,
                "lr_halving_epochs" => cfg.lr_halving_epochs = int(line, key, value)?,
                "weight_decay" => cfg.weight_decay = float(line, key, value)?,
                "beta1" => cfg.beta1 = float(line, key, value)?,
                "beta2" => cfg.beta2 = float(line, key, value)?,
                "epsilon" => cfg.epsilon = float(line, key, value)?,
                "validation_fraction" => cfg.validation_fraction = float(line, key, value)?,
                "seed" => {
                    cfg.seed = value.parse::<u64>().map_err(|_| Error::ConfigSyntax {
                        line,
                        message: format!("'seed' expects a non-negative integer, got '{value}'"),
                    })?
                }
                "levels" => cfg.levels = int(line, key, value)?,
                "base_channels" => cfg.base_channels = int(line, key, value)?,
                "configs_per_epoch" => cfg.configs_per_epoch = int(line, key, value)?,
                other => {
                    return Err(Error::ConfigSyntax {
                        line,
                        message: format!("unknown key '{other}'"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(path: impl AsRef<Path>) -> Result<TrainingConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainingConfig::parse(&text)
    }
}

// ---------------------------------------------------------------------------
// Learning-rate schedule
// ---------------------------------------------------------------------------

/// Step schedule: the rate halves every `halving_epochs` epochs.
pub fn lr_schedule(initial_lr: f64, halving_epochs: usize, epoch: usize) -> f64 {
    initial_lr * 0.5f64.powi((epoch / halving_epochs) as i32)
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

/// One elementwise AdamW update with decoupled weight decay, shared by the
/// optimizer and its oracle tests:
/// `m ← β1 m + (1−β1) g`, `v ← β2 v + (1−β2) g²`,
/// `θ ← θ − lr·wd·θ − lr·(m/bc1)/(√(v/bc2) + ε)`,
/// where `bc1 = 1 − β1^t`, `bc2 = 1 − β2^t`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn adamw_update<T: NdFloat>(
    mut value: ArrayViewMutD<'_, T>,
    grad: ArrayViewD<'_, T>,
    m: &mut ArrayD<T>,
    v: &mut ArrayD<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
) {
    let b1 = cast::<T>(beta1);
    let b2 = cast::<T>(beta2);
    let one = T::one();
    let bc1 = cast::<T>(1.0 - beta1.powi(t as i32));
    let bc2 = cast::<T>(1.0 - beta2.powi(t as i32));
    let lr_t = cast::<T>(lr);
    let eps_t = cast::<T>(eps);
    let decay = cast::<T>(lr * weight_decay);
    for ((p, &g), (mi, vi)) in
        value.iter_mut().zip(grad.iter()).zip(m.iter_mut().zip(v.iter_mut()))
    {
        *mi = b1 * *mi + (one - b1) * g;
        *vi = b2 * *vi + (one - b2) * g * g;
        let mhat = *mi / bc1;
        let vhat = *vi / bc2;
        *p = *p - decay * *p - lr_t * mhat / (vhat.sqrt() + eps_t);
    }
}

/// AdamW over every trainable tensor of a [`RefineNet`], with first/second
/// moment state kept in the network's canonical traversal order. A step with
/// any non-finite gradient is skipped entirely (and counted) instead of
/// corrupting the moments.
pub(crate) struct AdamW<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
    pub skipped_steps: usize,
}

impl<T: NdFloat> AdamW<T> {
    pub fn new(net: &mut RefineNet<T>, tcfg: &TrainingConfig) -> Self {
        let mut m = Vec::new();
        net.for_each_tensor(true, &mut |_, tref| {
            m.push(ArrayD::zeros(tref.value.raw_dim()));
        });
        let v = m.clone();
        AdamW {
            beta1: tcfg.beta1,
            beta2: tcfg.beta2,
            eps: tcfg.epsilon,
            weight_decay: tcfg.weight_decay,
            t: 0,
            m,
            v,
            skipped_steps: 0,
        }
    }

    /// Applies one update using the gradients currently stored in the
    /// network. Returns `false` (and leaves everything untouched) when a
    /// non-finite gradient is present.
    pub fn step(&mut self, net: &mut RefineNet<T>, lr: f64) -> bool {
        let mut finite = true;
        net.for_each_tensor(true, &mut |_, tref| {
            if finite {
                let grad = tref.grad.expect("trainable tensor has a gradient");
                if grad.iter().any(|g| !g.is_finite()) {
                    finite = false;
                }
            }
        });
        if !finite {
            self.skipped_steps += 1;
            return false;
        }
        self.t += 1;
        let (t, b1, b2, eps, wd) = (self.t, self.beta1, self.beta2, self.eps, self.weight_decay);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut i = 0usize;
        net.for_each_tensor(true, &mut |_, tref| {
            let grad = tref.grad.expect("trainable tensor has a gradient");
            adamw_update(tref.value, grad.view(), &mut ms[i], &mut vs[i], lr, b1, b2, eps, wd, t);
            i += 1;
        });
        true
    }
}

// ---------------------------------------------------------------------------
// Training-set preparation
// ---------------------------------------------------------------------------

/// One prepared utterance: where its files live and how it was produced.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    /// Stem of the source file in the corpus.
    pub name: String,
    /// Original waveform, relative to the prepared directory.
    pub original: String,
    /// Analytically reconstructed intermediate waveform, relative path.
    pub intermediate: String,
    /// Which subset (and therefore which source config) produced it.
    pub subset: usize,
    /// The subset's source config as a canonical config document.
    pub source_config: String,
}

/// Index of a prepared training set, stored as `manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub n_subsets: usize,
    pub griffin_lim_iters: usize,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Partitions the corpus into `n_subsets` subsets, samples one source config
/// per subset (never one of the built-in test configs), and stores each
/// utterance's original waveform together with its reconstruction through
/// the source config's mel analysis and back. `progress` is called after
/// each utterance with `(done, total)`.
pub fn prepare_training_set(
    corpus_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    n_subsets: usize,
    seed: u64,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<Manifest> {
    let corpus_dir = corpus_dir.as_ref();
    let out_dir = out_dir.as_ref();
    if n_subsets == 0 {
        return Err(Error::InvalidArgument("subset count must be positive".into()));
    }

    let mut wavs: Vec<PathBuf> = std::fs::read_dir(corpus_dir)
        .map_err(|e| Error::io(corpus_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().map(|e| e.eq_ignore_ascii_case("wav")).unwrap_or(false) && p.is_file()
        })
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        return Err(Error::TrainingSet(format!(
            "no .wav files found in {}",
            corpus_dir.display()
        )));
    }

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    // Shuffle, then deal utterances round-robin into subsets.
    let mut order: Vec<usize> = (0..wavs.len()).collect();
    order.shuffle(&mut derive_rng(seed, "prepare-shuffle", 0));

    let exclude = MelConfig::builtins();
    let used_subsets = n_subsets.min(wavs.len());
    let subset_configs: Vec<MelConfig> = (0..used_subsets)
        .map(|s| sample_random_config(&mut derive_rng(seed, "subset-config", s as u64), &exclude))
        .collect::<Result<_>>()?;

    let mut entries: Vec<Option<ManifestEntry>> = vec![None; wavs.len()];
    for (pos, &utt) in order.iter().enumerate() {
        let subset = pos % used_subsets;
        let cfg_src = &subset_configs[subset];
        let src_path = &wavs[utt];
        let stem = src_path
            .file_stem()
            .and_then(|s| s.to_str())
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("utt{utt:05}"));

        let orig_name = format!("utt{utt:05}_orig.wav");
        let interm_name = format!("utt{utt:05}_interm.wav");

        let wave = read_wav(src_path)?;
        let mel = extract_mel(&wave, cfg_src)?;
        let reconstructed = invert_to_waveform(&mel, DEFAULT_GRIFFIN_LIM_ITERS)?;
        // Scale to a safe peak before 16-bit quantization; extraction
        // re-normalizes the peak anyway, so this is transparent downstream.
        let (scaled, _) = peak_normalize(&reconstructed, 0.95);

        std::fs::copy(src_path, out_dir.join(&orig_name)).map_err(|e| Error::io(src_path, e))?;
        write_wav(out_dir.join(&interm_name), &scaled)?;

        entries[utt] = Some(ManifestEntry {
            name: stem,
            original: orig_name,
            intermediate: interm_name,
            subset,
            source_config: cfg_src.serialize(),
        });
        progress(pos + 1, wavs.len());
    }

    let manifest = Manifest {
        seed,
        n_subsets,
        griffin_lim_iters: DEFAULT_GRIFFIN_LIM_ITERS,
        entries: entries.into_iter().map(|e| e.expect("every utterance assigned")).collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let manifest_path = out_dir.join(MANIFEST_NAME);
    std::fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

pub fn read_manifest(prepared_dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = prepared_dir.as_ref().join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, format!("invalid manifest: {e}")))
}

// ---------------------------------------------------------------------------
// The training loop
// ---------------------------------------------------------------------------

/// Per-epoch summary, surfaced to the progress callback and the log file.
#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Result of a completed training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Optimizer steps skipped because of non-finite gradients.
    pub skipped_steps: usize,
}

/// One utterance segment ready for batching: base-space input/target frames,
/// the loss mask, and the conditioning row of its target config.
struct Sample {
    input: Array2<f32>,
    target: Array2<f32>,
    mask: Vec<f32>,
    cond: [f32; FEATURE_DIM],
}

/// Extracts input/target mels for one utterance under `cfg_tgt`, converts
/// both to the base space, aligns them, and cuts one `segment` — at `start`
/// when the utterance is long enough, else zero-padded with a mask.
fn build_sample(
    interm: &Waveform,
    orig: &Waveform,
    cfg_tgt: &MelConfig,
    segment: usize,
    start_fraction: f64,
) -> Result<Sample> {
    let mel_in = to_base(&extract_mel(interm, cfg_tgt)?)?;
    let mel_gt = to_base(&extract_mel(orig, cfg_tgt)?)?;
    debug_assert_eq!(mel_in.space, mel_gt.space, "both sides share the base space");
    let frames = mel_in.frames().min(mel_gt.frames());
    if frames == 0 {
        return Err(Error::TrainingSet("utterance produced zero mel frames".into()));
    }
    let n_mels = mel_in.n_mels();
    let start = if frames > segment {
        ((frames - segment + 1) as f64 * start_fraction).floor() as usize
    } else {
        0
    };
    let take = segment.min(frames - start.min(frames));
    let mut input = Array2::zeros((segment, n_mels));
    let mut target = Array2::zeros((segment, n_mels));
    let mut mask = vec![0f32; segment];
    for f in 0..take {
        mask[f] = 1.0;
        for m in 0..n_mels {
            input[[f, m]] = mel_in.values[[start + f, m]] as f32;
            target[[f, m]] = mel_gt.values[[start + f, m]] as f32;
        }
    }
    let feats = crate::config::encode_config_features(&cfg_tgt.split().0);
    let mut cond = [0f32; FEATURE_DIM];
    for (c, &v) in cond.iter_mut().zip(feats.0.iter()) {
        *c = v as f32;
    }
    Ok(Sample { input, target, mask, cond })
}

/// Stacks samples into batch tensors.
fn collate(samples: &[Sample]) -> (Array4<f32>, Array4<f32>, Array2<f32>, Array2<f32>) {
    let b = samples.len();
    let (s, m) = samples[0].input.dim();
    let mut x = Array4::zeros((b, 1, s, m));
    let mut t = Array4::zeros((b, 1, s, m));
    let mut mask = Array2::zeros((b, s));
    let mut cond = Array2::zeros((b, FEATURE_DIM));
    for (n, smp) in samples.iter().enumerate() {
        for f in 0..s {
            mask[[n, f]] = smp.mask[f];
            for mm in 0..m {
                x[[n, 0, f, mm]] = smp.input[[f, mm]];
                t[[n, 0, f, mm]] = smp.target[[f, mm]];
            }
        }
        for k in 0..FEATURE_DIM {
            cond[[n, k]] = smp.cond[k];
        }
    }
    (x, t, mask, cond)
}

/// Number of loss-active elements under a mask (frames × mels × channels).
fn active_elements(mask: &Array2<f32>, n_mels: usize) -> f64 {
    mask.iter().map(|&m| m as f64).sum::<f64>() * n_mels as f64
}

/// Trains a refinement network on a prepared set. Writes the
/// best-by-validation weights to `out_weights` and a newline-delimited JSON
/// log beside it (`<out_weights>.log`); calls `on_epoch` after every epoch.
pub fn train(
    prepared_dir: impl AsRef<Path>,
    tcfg: &TrainingConfig,
    out_weights: impl AsRef<Path>,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    let prepared_dir = prepared_dir.as_ref();
    let out_weights = out_weights.as_ref();
    tcfg.validate()?;
    let manifest = read_manifest(prepared_dir)?;
    if manifest.entries.is_empty() {
        return Err(Error::TrainingSet("prepared set has no utterances".into()));
    }

    // Load all waveforms up front: corpora here are modest and this keeps
    // the epoch loop free of disk I/O.
    let mut pairs: Vec<(Waveform, Waveform)> = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let orig = read_wav(prepared_dir.join(&e.original))?;
        let interm = read_wav(prepared_dir.join(&e.intermediate))?;
        pairs.push((interm, orig));
    }

    let n = pairs.len();
    if n < 2 {
        return Err(Error::TrainingSet(
            "need at least 2 utterances to hold out a validation split".into(),
        ));
    }
    let seed = tcfg.seed;
    let exclude = MelConfig::builtins();

    // Deterministic validation split.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derive_rng(seed, "split", 0));
    let val_n = ((n as f64 * tcfg.validation_fraction).round() as usize).clamp(1, n - 1);
    let val_idx: Vec<usize> = order[..val_n].to_vec();
    let train_idx: Vec<usize> = order[val_n..].to_vec();

    // Validation target configs are fixed at split time so the curve is
    // comparable across epochs; precompute the tensors once.
    let mut val_samples: Vec<Sample> = Vec::with_capacity(val_n);
    for (i, &utt) in val_idx.iter().enumerate() {
        let cfg = sample_random_config(&mut derive_rng(seed, "val-cfg", i as u64), &exclude)?;
        let (interm, orig) = &pairs[utt];
        val_samples.push(build_sample(interm, orig, &cfg, tcfg.segment_frames, 0.0)?);
    }
    let n_mels = val_samples[0].input.dim().1;

    let shape = NetworkShape { n_mels, levels: tcfg.levels, base_channels: tcfg.base_channels };
    let mut net = RefineNet::<f32>::new(shape, &mut derive_rng(seed, "init", 0))?;
    let mut opt = AdamW::new(&mut net, tcfg);

    let log_path = PathBuf::from(format!("{}.log", out_weights.display()));
    let log_file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);

    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;

    for epoch in 0..tcfg.epochs {
        let lr = lr_schedule(tcfg.initial_lr, tcfg.lr_halving_epochs, epoch);

        // Fresh pool of candidate target configs for this epoch.
        let mut pool_rng = derive_rng(seed, "epoch-pool", epoch as u64);
        let pool: Vec<MelConfig> = (0..tcfg.configs_per_epoch)
            .map(|_| sample_random_config(&mut pool_rng, &exclude))
            .collect::<Result<_>>()?;

        // Draw the epoch's utterance order, per-utterance config, and
        // segment position up front so the RNG stream is independent of
        // extraction results.
        let mut draw_rng = derive_rng(seed, "epoch-draw", epoch as u64);
        let mut epoch_order = train_idx.clone();
        epoch_order.shuffle(&mut draw_rng);
        let assignments: Vec<(usize, f64)> = epoch_order
            .iter()
            .map(|_| (draw_rng.gen_range(0..pool.len()), draw_rng.gen::<f64>()))
            .collect();

        let mut train_abs = 0.0f64;
        let mut train_den = 0.0f64;
        for (batch_no, chunk) in epoch_order.chunks(tcfg.batch_size).enumerate() {
            let base = batch_no * tcfg.batch_size;
            let mut samples = Vec::with_capacity(chunk.len());
            for (k, &utt) in chunk.iter().enumerate() {
                let (cfg_idx, frac) = assignments[base + k];
                let (interm, orig) = &pairs[utt];
                samples.push(build_sample(
                    interm,
                    orig,
                    &pool[cfg_idx],
                    tcfg.segment_frames,
                    frac,
                )?);
            }
            let (x, t, mask, cond) = collate(&samples);
            let pred = net.forward(&x, &cond, Mode::Train);
            let (loss, grad) = masked_l1_loss(&pred, &t, &mask);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: batch_no });
            }
            let den = active_elements(&mask, n_mels);
            train_abs += loss as f64 * den;
            train_den += den;
            net.zero_grad();
            net.backward(&grad)?;
            opt.step(&mut net, lr);
        }
        let train_loss = if train_den > 0.0 { train_abs / train_den } else { 0.0 };

        // Validation in eval mode on the fixed samples.
        let mut val_abs = 0.0f64;
        let mut val_den = 0.0f64;
        for (batch_no, chunk) in val_samples.chunks(tcfg.batch_size).enumerate() {
            let (x, t, mask, cond) = collate(chunk);
            let pred = net.forward(&x, &cond, Mode::Eval);
            let (loss, _) = masked_l1_loss(&pred, &t, &mask);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: batch_no });
            }
            let den = active_elements(&mask, n_mels);
            val_abs += loss as f64 * den;
            val_den += den;
        }
        let val_loss = if val_den > 0.0 { val_abs / val_den } else { 0.0 };

        let stats = EpochStats { epoch, train_loss, val_loss, lr };
        let line = serde_json::to_string(&stats).expect("stats serialize");
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        on_epoch(&stats);

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            write_weights(out_weights, &mut net)?;
        }
    }

    Ok(TrainOutcome {
        best_val_loss: best_val,
        best_epoch,
        epochs_run: tcfg.epochs,
        skipped_steps: opt.skipped_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn derived_streams_are_reproducible_and_distinct() {
        let mut a1 = derive_rng(7, "epoch-pool", 3);
        let mut a2 = derive_rng(7, "epoch-pool", 3);
        assert_eq!(a1.gen::<u64>(), a2.gen::<u64>());

        let mut b = derive_rng(7, "epoch-pool", 4);
        let mut c = derive_rng(7, "epoch-draw", 3);
        let mut d = derive_rng(8, "epoch-pool", 3);
        let base = derive_rng(7, "epoch-pool", 3).gen::<u64>();
        assert_ne!(base, b.gen::<u64>());
        assert_ne!(base, c.gen::<u64>());
        assert_ne!(base, d.gen::<u64>());
    }

    #[test]
    fn lr_schedule_examples() {
        assert_eq!(lr_schedule(1e-3, 50, 0), 1e-3);
        assert_eq!(lr_schedule(1e-3, 50, 49), 1e-3);
        assert_eq!(lr_schedule(1e-3, 50, 50), 5e-4);
        assert_eq!(lr_schedule(1e-3, 50, 99), 5e-4);
        assert_eq!(lr_schedule(1e-3, 50, 100), 2.5e-4);
    }

    /// Single-parameter update against an independently written closed-form
    /// expression of the same recipe, two steps deep.
    #[test]
    fn adamw_matches_hand_computed_oracle() {
        let (lr, b1, b2, eps, wd) = (0.1f64, 0.9, 0.999, 1e-8, 0.01);
        let mut theta = ArrayD::from_elem(IxDyn(&[1]), 1.0f64);
        let mut m = ArrayD::zeros(IxDyn(&[1]));
        let mut v = ArrayD::zeros(IxDyn(&[1]));

        // Step 1 with gradient 0.5.
        let g1 = 0.5f64;
        let grad = ArrayD::from_elem(IxDyn(&[1]), g1);
        adamw_update(theta.view_mut(), grad.view(), &mut m, &mut v, lr, b1, b2, eps, wd, 1);
        let m1 = (1.0 - b1) * g1;
        let v1 = (1.0 - b2) * g1 * g1;
        let mhat = m1 / (1.0 - b1);
        let vhat = v1 / (1.0 - b2);
        let expect1 = 1.0 - lr * wd * 1.0 - lr * mhat / (vhat.sqrt() + eps);
        assert!((theta[[0]] - expect1).abs() < 1e-12, "{} vs {}", theta[[0]], expect1);

        // Step 2 with gradient -0.25.
        let g2 = -0.25f64;
        let grad = ArrayD::from_elem(IxDyn(&[1]), g2);
        adamw_update(theta.view_mut(), grad.view(), &mut m, &mut v, lr, b1, b2, eps, wd, 2);
        let m2 = b1 * m1 + (1.0 - b1) * g2;
        let v2 = b2 * v1 + (1.0 - b2) * g2 * g2;
        let mhat = m2 / (1.0 - b1 * b1);
        let vhat = v2 / (1.0 - b2 * b2);
        let expect2 = expect1 - lr * wd * expect1 - lr * mhat / (vhat.sqrt() + eps);
        assert!((theta[[0]] - expect2).abs() < 1e-12, "{} vs {}", theta[[0]], expect2);
    }

    #[test]
    fn adamw_zero_gradient_zero_decay_leaves_params_unchanged() {
        let mut theta = ArrayD::from_elem(IxDyn(&[3]), 2.5f64);
        let grad = ArrayD::zeros(IxDyn(&[3]));
        let mut m = ArrayD::zeros(IxDyn(&[3]));
        let mut v = ArrayD::zeros(IxDyn(&[3]));
        adamw_update(theta.view_mut(), grad.view(), &mut m, &mut v, 0.1, 0.9, 0.999, 1e-8, 0.0, 1);
        assert!(theta.iter().all(|&p| p == 2.5));
    }

    #[test]
    fn adamw_step_size_approaches_lr_for_constant_gradient() {
        let lr = 0.01f64;
        let mut theta = ArrayD::from_elem(IxDyn(&[1]), 0.0f64);
        let grad = ArrayD::from_elem(IxDyn(&[1]), 1e-3f64);
        let mut m = ArrayD::zeros(IxDyn(&[1]));
        let mut v = ArrayD::zeros(IxDyn(&[1]));
        let mut prev = theta[[0]];
        let mut last_step = 0.0;
        for t in 1..=2000u64 {
            adamw_update(theta.view_mut(), grad.view(), &mut m, &mut v, lr, 0.9, 0.999, 1e-8, 0.0, t);
            last_step = prev - theta[[0]];
            prev = theta[[0]];
        }
        // Adam's asymptotic step for a constant gradient is lr, independent
        // of the gradient's magnitude.
        assert!(
            (last_step - lr).abs() < 0.01 * lr,
            "asymptotic step {last_step} should approach lr {lr}"
        );
    }

    #[test]
    fn optimizer_skips_steps_with_non_finite_gradients() {
        let shape = NetworkShape { n_mels: 8, levels: 1, base_channels: 2 };
        let mut net =
            RefineNet::<f32>::new(shape, &mut derive_rng(0, "init", 0)).unwrap();
        let mut opt = AdamW::new(&mut net, &TrainingConfig::default());

        let mut before = Vec::new();
        net.for_each_tensor(true, &mut |_, t| before.push(t.value.to_owned()));

        // Poison one gradient.
        net.for_each_tensor(true, &mut |name, t| {
            if name == "enc1.conv.bias" {
                t.grad.expect("trainable")[[0]] = f32::NAN;
            }
        });
        assert!(!opt.step(&mut net, 1e-3));
        assert_eq!(opt.skipped_steps, 1);

        let mut after = Vec::new();
        net.for_each_tensor(true, &mut |_, t| after.push(t.value.to_owned()));
        assert_eq!(before, after, "a skipped step must not change parameters");
    }

    #[test]
    fn training_config_parses_with_defaults_and_overrides() {
        let cfg = TrainingConfig::parse("").unwrap();
        assert_eq!(cfg, TrainingConfig::default());
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.segment_frames, 200);
        assert_eq!(cfg.initial_lr, 1e-3);
        assert_eq!(cfg.lr_halving_epochs, 50);
        assert_eq!(cfg.validation_fraction, 0.10);

        let text = "epochs = 30\nbatch_size = 8 # small\nlevels=2\nbase_channels = 8\nseed = 42\n";
        let cfg = TrainingConfig::parse(text).unwrap();
        assert_eq!(cfg.epochs, 30);
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.levels, 2);
        assert_eq!(cfg.base_channels, 8);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.initial_lr, 1e-3, "unset keys keep defaults");
    }

    #[test]
    fn training_config_rejects_bad_documents() {
        assert!(TrainingConfig::parse("nonsense").is_err());
        assert!(TrainingConfig::parse("unknown_key = 3").is_err());
        assert!(TrainingConfig::parse("epochs = 10\nepochs = 20").is_err());
        assert!(TrainingConfig::parse("epochs = zero").is_err());
        assert!(TrainingConfig::parse("validation_fraction = 1.5").is_err());
        assert!(TrainingConfig::parse("validation_fraction = 0").is_err());
        assert!(TrainingConfig::parse("learning_rate = -1").is_err());
    }

    fn synth_corpus(dir: &Path, count: usize, sr: u32, seconds: f64) {
        for i in 0..count {
            let f0 = 150.0 + 40.0 * i as f64;
            let n = (seconds * sr as f64) as usize;
            let samples: Vec<f64> = (0..n)
                .map(|j| {
                    let t = j as f64 / sr as f64;
                    0.4 * (2.0 * std::f64::consts::PI * f0 * t).sin()
                        + 0.15 * (2.0 * std::f64::consts::PI * 2.0 * f0 * t).sin()
                })
                .collect();
            write_wav(dir.join(format!("clip{i:02}.wav")), &Waveform::new(samples, sr)).unwrap();
        }
    }

    #[test]
    fn prepare_partitions_every_utterance_exactly_once() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = tmp.path().join("corpus");
        let out = tmp.path().join("prepared");
        std::fs::create_dir(&corpus).unwrap();
        synth_corpus(&corpus, 6, 22050, 0.3);

        let manifest = prepare_training_set(&corpus, &out, 3, 9, &mut |_, _| {}).unwrap();
        assert_eq!(manifest.entries.len(), 6);
        let mut names: Vec<&str> = manifest.entries.iter().map(|e| e.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 6, "every utterance exactly once");
        for e in &manifest.entries {
            assert!(e.subset < 3);
            assert!(out.join(&e.original).is_file());
            assert!(out.join(&e.intermediate).is_file());
            let cfg = MelConfig::parse(&e.source_config).unwrap();
            for b in MelConfig::builtins() {
                assert_ne!(cfg, b, "subset config must avoid the built-in test configs");
            }
        }
        // Round-robin over 3 subsets: each subset holds 2 utterances.
        for s in 0..3 {
            assert_eq!(manifest.entries.iter().filter(|e| e.subset == s).count(), 2);
        }
    }

    #[test]
    fn prepare_is_deterministic_for_a_fixed_seed() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = tmp.path().join("corpus");
        std::fs::create_dir(&corpus).unwrap();
        synth_corpus(&corpus, 4, 22050, 0.25);

        let out1 = tmp.path().join("p1");
        let out2 = tmp.path().join("p2");
        prepare_training_set(&corpus, &out1, 2, 5, &mut |_, _| {}).unwrap();
        prepare_training_set(&corpus, &out2, 2, 5, &mut |_, _| {}).unwrap();
        let m1 = std::fs::read_to_string(out1.join(MANIFEST_NAME)).unwrap();
        let m2 = std::fs::read_to_string(out2.join(MANIFEST_NAME)).unwrap();
        assert_eq!(m1, m2);
        for name in ["utt00000_interm.wav", "utt00003_interm.wav"] {
            let b1 = std::fs::read(out1.join(name)).unwrap();
            let b2 = std::fs::read(out2.join(name)).unwrap();
            assert_eq!(b1, b2, "{name} differs between identical runs");
        }
    }

    #[test]
    fn prepare_rejects_an_empty_corpus() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = tmp.path().join("corpus");
        std::fs::create_dir(&corpus).unwrap();
        let out = tmp.path().join("prepared");
        assert!(matches!(
            prepare_training_set(&corpus, &out, 4, 0, &mut |_, _| {}),
            Err(Error::TrainingSet(_))
        ));
    }

    #[test]
    fn short_training_run_is_deterministic_and_logs_every_epoch() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = tmp.path().join("corpus");
        std::fs::create_dir(&corpus).unwrap();
        synth_corpus(&corpus, 6, 22050, 0.3);
        let prepared = tmp.path().join("prepared");
        prepare_training_set(&corpus, &prepared, 3, 1, &mut |_, _| {}).unwrap();

        let tcfg = TrainingConfig {
            epochs: 2,
            batch_size: 4,
            segment_frames: 24,
            levels: 1,
            base_channels: 2,
            configs_per_epoch: 5,
            seed: 3,
            ..TrainingConfig::default()
        };

        let w1 = tmp.path().join("a.uaw");
        let w2 = tmp.path().join("b.uaw");
        let mut epochs_seen = Vec::new();
        let out1 = train(&prepared, &tcfg, &w1, &mut |s| epochs_seen.push(s.epoch)).unwrap();
        let out2 = train(&prepared, &tcfg, &w2, &mut |_| {}).unwrap();

        assert_eq!(epochs_seen, vec![0, 1]);
        assert_eq!(out1.epochs_run, 2);
        assert_eq!(out1.best_val_loss, out2.best_val_loss);
        assert_eq!(
            std::fs::read(&w1).unwrap(),
            std::fs::read(&w2).unwrap(),
            "weights differ between identical runs"
        );
        let log1 = std::fs::read_to_string(format!("{}.log", w1.display())).unwrap();
        let log2 = std::fs::read_to_string(format!("{}.log", w2.display())).unwrap();
        assert_eq!(log1, log2);

        // The log is one JSON object per epoch with the documented fields.
        let lines: Vec<&str> = log1.lines().collect();
        assert_eq!(lines.len(), 2);
        for (i, line) in lines.iter().enumerate() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["epoch"].as_u64().unwrap() as usize, i);
            assert!(v["train_loss"].as_f64().unwrap().is_finite());
            assert!(v["val_loss"].as_f64().unwrap().is_finite());
            assert!(v["lr"].as_f64().unwrap() > 0.0);
        }

        // Best-by-validation weights must load back cleanly.
        let net = super::super::weights::read_weights(&w1).unwrap();
        assert_eq!(net.shape().levels, 1);
    }
}
