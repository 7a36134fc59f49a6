//! Command-line surface tying the pipeline together.
//!
//! Subcommands: `extract`, `convert`, `invert`, `baseline`, `prepare`,
//! `train`, `eval`. Every command is deterministic given its flags and
//! `--seed` (default 0); data goes to stdout or the named output files,
//! progress goes to stderr and is silenced by `--quiet`. Exit codes: 0 on
//! success, 1 for runtime failures (cancellation, diverged training), 2 for
//! usage or input problems.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand, ValueEnum};

use crate::baselines::{griffin_only_baseline, interpolation_baseline};
use crate::config::MelConfig;
use crate::convert::{approximate_convert, invert_to_waveform, DEFAULT_GRIFFIN_LIM_ITERS};
use crate::dsp::{extract_mel, peak_normalize};
use crate::error::{Error, Result};
use crate::io::{read_melt, read_wav, write_melt, write_wav};
use crate::metrics::evaluate_pair;
use crate::refine::train::{prepare_training_set, train, TrainingConfig};
use crate::refine::{read_weights, refine_convert};

/// Mel-spectrogram adaptation between extraction configurations.
#[derive(Debug, Parser)]
#[command(
    name = "meladapt",
    version,
    about = "Convert mel spectrograms between extraction configurations",
    long_about = "Converts a mel spectrogram extracted under one configuration into one \
                  parametrized by another: an analytic stage re-synthesizes audio through the \
                  filterbank pseudo-inverse and Griffin-Lim, and an optional learned stage \
                  refines the result conditioned on the target configuration."
)]
pub struct Cli {
    /// Seed for every random choice the command makes (`train` uses the
    /// training config's seed unless this flag is given explicitly).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads for batch (`--list`) conversion and evaluation.
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    jobs: usize,

    /// Suppress progress reporting on stderr.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract a mel spectrogram from a WAV file.
    Extract {
        /// Input 16-bit PCM mono WAV file.
        wav: PathBuf,
        /// Extraction config: a built-in name (cfg1..cfg7) or a config file.
        config: String,
        /// Output mel file.
        out: PathBuf,
    },

    /// Convert a mel file to a target configuration.
    #[command(
        after_help = "Single file:  meladapt convert IN_MEL SRC_CONFIG TGT_CONFIG OUT_MEL\n\
                      Batch:        meladapt convert --list PAIRS SRC_CONFIG TGT_CONFIG\n\
                      PAIRS holds one `input output` line per conversion; `--jobs N` runs them \
                      in parallel."
    )]
    Convert {
        /// IN_MEL SRC_CONFIG TGT_CONFIG OUT_MEL (with --list: SRC_CONFIG TGT_CONFIG).
        #[arg(value_name = "ARG", num_args = 2..=4)]
        args: Vec<String>,
        /// Conversion stage: 1 = analytic only, 2 = analytic + learned refinement.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// Weights file for the refinement network (required with --stage 2).
        #[arg(long, value_name = "FILE")]
        weights: Option<PathBuf>,
        /// Batch file of `input output` path pairs, one per line.
        #[arg(long, value_name = "FILE")]
        list: Option<PathBuf>,
        /// Griffin-Lim iterations for the analytic stage.
        #[arg(long, default_value_t = DEFAULT_GRIFFIN_LIM_ITERS, value_name = "N")]
        iters: usize,
    },

    /// Reconstruct audio from a mel file (peak-normalized to 0.95).
    Invert {
        /// Input mel file.
        in_mel: PathBuf,
        /// The mel file's config (built-in name or file); must match the
        /// config embedded in the file.
        config: String,
        /// Output WAV file.
        out_wav: PathBuf,
        /// Griffin-Lim iterations.
        #[arg(long, default_value_t = DEFAULT_GRIFFIN_LIM_ITERS, value_name = "N")]
        iters: usize,
    },

    /// Convert with a reference baseline instead of the full pipeline.
    Baseline {
        /// Which baseline to run.
        #[arg(long, value_enum)]
        method: Method,
        /// Input mel file.
        in_mel: PathBuf,
        /// Source config (must match the config embedded in the input).
        src_config: String,
        /// Target config.
        tgt_config: String,
        /// Output mel file.
        out_mel: PathBuf,
    },

    /// Prepare a training set from a directory of WAV files.
    Prepare {
        /// Directory scanned (non-recursively) for .wav files.
        corpus_dir: PathBuf,
        /// Output directory for the prepared set and its manifest.
        out_dir: PathBuf,
        /// Number of source-config subsets to partition the corpus into.
        #[arg(long, default_value_t = 100, value_name = "N")]
        subsets: usize,
    },

    /// Train refinement weights on a prepared training set.
    Train {
        /// Directory produced by `prepare`.
        prepared_dir: PathBuf,
        /// Training hyperparameter file (`key = value` lines).
        training_config: PathBuf,
        /// Where to write the best-by-validation weights (a `.log` file with
        /// one JSON record per epoch is written beside it).
        out_weights: PathBuf,
    },

    /// Compare two waveforms; prints one JSON record per pair to stdout.
    #[command(
        after_help = "Single pair:  meladapt eval GENERATED.wav REFERENCE.wav\n\
                      Batch:        meladapt eval --list PAIRS\n\
                      PAIRS holds one `generated reference` line per comparison."
    )]
    Eval {
        /// GENERATED_WAV REFERENCE_WAV (omit with --list).
        #[arg(value_name = "WAV", num_args = 0..=2)]
        args: Vec<String>,
        /// Batch file of `generated reference` path pairs, one per line.
        #[arg(long, value_name = "FILE")]
        list: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    /// Time-axis interpolation plus value rescaling only.
    Interp,
    /// The analytic conversion without the learned refinement.
    Griffin,
}

/// Parses the process arguments and runs the selected command, returning the
/// process exit code. Usage errors (and `--help`/`--version`) are handled by
/// the parser itself.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let quiet = cli.quiet;
    let jobs = cli.jobs.max(1);

    match cli.command {
        Command::Extract { wav, config, out } => {
            let cfg = resolve_config(&config)?;
            let mel = extract_mel(&read_wav(&wav)?, &cfg)?;
            write_melt(&out, &mel)?;
            report(quiet, format_args!("extracted {} -> {}", wav.display(), out.display()));
            Ok(())
        }

        Command::Convert { args, stage, weights, list, iters } => {
            let (pairs, src_arg, tgt_arg) = match (&list, args.len()) {
                (Some(path), 2) => (read_pair_list(path)?, &args[0], &args[1]),
                (None, 4) => (
                    vec![(PathBuf::from(&args[0]), PathBuf::from(&args[3]))],
                    &args[1],
                    &args[2],
                ),
                (Some(_), n) => {
                    return Err(Error::InvalidArgument(format!(
                        "with --list, convert takes SRC_CONFIG TGT_CONFIG (got {n} arguments)"
                    )))
                }
                (None, n) => {
                    return Err(Error::InvalidArgument(format!(
                        "convert takes IN_MEL SRC_CONFIG TGT_CONFIG OUT_MEL (got {n} arguments)"
                    )))
                }
            };
            let cfg_src = resolve_config(src_arg)?;
            let cfg_tgt = resolve_config(tgt_arg)?;
            if stage == 2 && weights.is_none() {
                return Err(Error::InvalidArgument(
                    "--stage 2 needs --weights pointing at a trained network".into(),
                ));
            }
            if stage == 2 {
                // Fail on a bad weights file before starting the batch.
                read_weights(weights.as_ref().expect("checked above"))?;
            }

            let total = pairs.len();
            let done = AtomicUsize::new(0);
            let results = in_parallel(&pairs, jobs, |(input, output)| -> Result<()> {
                let m = read_melt(input)?;
                require_matching_config(input, &m.config, &cfg_src)?;
                let converted = match stage {
                    1 => approximate_convert(&m, &cfg_tgt, iters)?,
                    _ => {
                        let mut net = read_weights(weights.as_ref().expect("checked above"))?;
                        refine_convert(&m, &cfg_tgt, &mut net, iters)?
                    }
                };
                write_melt(output, &converted)?;
                let k = done.fetch_add(1, Ordering::Relaxed) + 1;
                report(quiet, format_args!("converted {k}/{total}: {}", output.display()));
                Ok(())
            });
            results.into_iter().collect()
        }

        Command::Invert { in_mel, config, out_wav, iters } => {
            let cfg = resolve_config(&config)?;
            let m = read_melt(&in_mel)?;
            require_matching_config(&in_mel, &m.config, &cfg)?;
            let wave = invert_to_waveform(&m, iters)?;
            // Peak-normalize before 16-bit quantization so reconstruction
            // overshoot cannot clip; extraction re-normalizes peaks anyway.
            let (wave, _) = peak_normalize(&wave, 0.95);
            write_wav(&out_wav, &wave)?;
            report(quiet, format_args!("inverted {} -> {}", in_mel.display(), out_wav.display()));
            Ok(())
        }

        Command::Baseline { method, in_mel, src_config, tgt_config, out_mel } => {
            let cfg_src = resolve_config(&src_config)?;
            let cfg_tgt = resolve_config(&tgt_config)?;
            let m = read_melt(&in_mel)?;
            require_matching_config(&in_mel, &m.config, &cfg_src)?;
            let out = match method {
                Method::Interp => interpolation_baseline(&m, &cfg_tgt)?,
                Method::Griffin => griffin_only_baseline(&m, &cfg_tgt)?,
            };
            write_melt(&out_mel, &out)?;
            report(quiet, format_args!("baseline wrote {}", out_mel.display()));
            Ok(())
        }

        Command::Prepare { corpus_dir, out_dir, subsets } => {
            let manifest =
                prepare_training_set(&corpus_dir, &out_dir, subsets, seed, &mut |done, total| {
                    report(quiet, format_args!("prepared {done}/{total}"));
                })?;
            report(
                quiet,
                format_args!(
                    "prepared {} utterances in {} subsets -> {}",
                    manifest.entries.len(),
                    manifest.n_subsets.min(manifest.entries.len()),
                    out_dir.display()
                ),
            );
            Ok(())
        }

        Command::Train { prepared_dir, training_config, out_weights } => {
            let mut tcfg = TrainingConfig::parse_file(&training_config)?;
            if let Some(s) = cli.seed {
                tcfg.seed = s;
            }
            let outcome = train(&prepared_dir, &tcfg, &out_weights, &mut |stats| {
                report(
                    quiet,
                    format_args!(
                        "epoch {}: train {:.6} val {:.6} lr {:.3e}",
                        stats.epoch, stats.train_loss, stats.val_loss, stats.lr
                    ),
                );
            })?;
            report(
                quiet,
                format_args!(
                    "finished {} epochs; best val {:.6} at epoch {} -> {}",
                    outcome.epochs_run,
                    outcome.best_val_loss,
                    outcome.best_epoch,
                    out_weights.display()
                ),
            );
            Ok(())
        }

        Command::Eval { args, list } => {
            let pairs = match (&list, args.len()) {
                (Some(path), 0) => read_pair_list(path)?,
                (None, 2) => vec![(PathBuf::from(&args[0]), PathBuf::from(&args[1]))],
                (Some(_), n) => {
                    return Err(Error::InvalidArgument(format!(
                        "with --list, eval takes no positional arguments (got {n})"
                    )))
                }
                (None, n) => {
                    return Err(Error::InvalidArgument(format!(
                        "eval takes GENERATED_WAV REFERENCE_WAV (got {n} arguments)"
                    )))
                }
            };
            let results = in_parallel(&pairs, jobs, |(generated, reference)| {
                evaluate_pair(&read_wav(generated)?, &read_wav(reference)?)
            });
            // Records print in input order regardless of completion order.
            for r in results {
                println!("{}", serde_json::to_string(&r?).expect("report serializes"));
            }
            Ok(())
        }
    }
}

/// Interprets a config argument as a built-in name first, then as a file.
fn resolve_config(arg: &str) -> Result<MelConfig> {
    if MelConfig::builtin_names().contains(&arg) {
        return MelConfig::builtin(arg);
    }
    if Path::new(arg).is_file() {
        return MelConfig::parse_file(arg);
    }
    Err(Error::InvalidArgument(format!(
        "`{arg}` is neither a built-in config ({}) nor a config file",
        MelConfig::builtin_names().join(", ")
    )))
}

/// Mixing up source configs corrupts conversions silently, so the config
/// named on the command line must equal the one embedded in the mel file.
fn require_matching_config(path: &Path, embedded: &MelConfig, given: &MelConfig) -> Result<()> {
    if embedded == given {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{}: the file was extracted under a different config than the one given",
            path.display()
        )))
    }
}

/// Reads a batch file: one `input output` pair of whitespace-separated paths
/// per line; blank lines and `#` comments are skipped.
fn read_pair_list(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::format(
                path,
                format!(
                    "line {}: expected two whitespace-separated paths, found {}",
                    lineno + 1,
                    fields.len()
                ),
            ));
        }
        pairs.push((PathBuf::from(fields[0]), PathBuf::from(fields[1])));
    }
    if pairs.is_empty() {
        return Err(Error::format(path, "no pairs listed"));
    }
    Ok(pairs)
}

/// Maps `f` over `items` on up to `jobs` worker threads, returning results
/// in input order. Item `i`'s result lands in slot `i`, so parallelism never
/// reorders output.
fn in_parallel<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.min(items.len()).max(1);
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}

fn report(quiet: bool, message: std::fmt::Arguments<'_>) {
    if !quiet {
        eprintln!("{message}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argument_grammar_parses() {
        Cli::try_parse_from(["meladapt", "extract", "a.wav", "cfg2", "out.melt"]).unwrap();
        Cli::try_parse_from([
            "meladapt", "convert", "in.melt", "cfg2", "cfg1", "out.melt", "--stage", "2",
            "--weights", "w.uaw",
        ])
        .unwrap();
        Cli::try_parse_from(["meladapt", "convert", "--list", "pairs.txt", "cfg2", "cfg1"])
            .unwrap();
        Cli::try_parse_from(["meladapt", "invert", "in.melt", "cfg2", "out.wav", "--iters", "8"])
            .unwrap();
        Cli::try_parse_from([
            "meladapt", "baseline", "--method", "interp", "in.melt", "cfg2", "cfg1", "out.melt",
        ])
        .unwrap();
        Cli::try_parse_from(["meladapt", "prepare", "corpus", "out", "--subsets", "10"]).unwrap();
        Cli::try_parse_from(["meladapt", "train", "prepared", "train.cfg", "out.uaw"]).unwrap();
        Cli::try_parse_from(["meladapt", "eval", "a.wav", "b.wav", "--jobs", "4"]).unwrap();
        Cli::try_parse_from(["meladapt", "eval", "--list", "pairs.txt", "--seed", "7"]).unwrap();

        // Rejected shapes.
        assert!(Cli::try_parse_from(["meladapt", "convert", "in.melt"]).is_err());
        assert!(Cli::try_parse_from(["meladapt", "convert", "a", "b", "c", "d", "e"]).is_err());
        assert!(Cli::try_parse_from(["meladapt", "frobnicate"]).is_err());
        assert!(Cli::try_parse_from(["meladapt", "convert", "a", "b", "c", "d", "--stage", "3"])
            .is_err());
    }

    #[test]
    fn config_resolution_prefers_builtins_then_files() {
        assert_eq!(resolve_config("cfg2").unwrap(), MelConfig::builtin("cfg2").unwrap());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("custom.cfg");
        let custom = MelConfig { hop_length: 123, ..MelConfig::default() };
        std::fs::write(&path, custom.serialize()).unwrap();
        assert_eq!(resolve_config(path.to_str().unwrap()).unwrap(), custom);

        assert!(matches!(resolve_config("definitely-missing"), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn pair_lists_parse_and_reject_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.txt");
        std::fs::write(&path, "# comment\na.melt b.melt\n\n c.melt\td.melt \n").unwrap();
        let pairs = read_pair_list(&path).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].0, PathBuf::from("c.melt"));

        std::fs::write(&path, "only-one-field\n").unwrap();
        assert!(matches!(read_pair_list(&path), Err(Error::FileFormat { .. })));
        std::fs::write(&path, "# nothing\n").unwrap();
        assert!(read_pair_list(&path).is_err());
    }

    #[test]
    fn parallel_map_preserves_input_order() {
        let items: Vec<usize> = (0..97).collect();
        let doubled = in_parallel(&items, 8, |&x| {
            // Stagger completion so slots would scramble if order depended
            // on finish time.
            std::thread::sleep(std::time::Duration::from_micros((97 - x as u64) * 10));
            x * 2
        });
        assert_eq!(doubled, items.iter().map(|x| x * 2).collect::<Vec<_>>());

        let single = in_parallel(&items, 1, |&x| x + 1);
        assert_eq!(single[96], 97);
        let empty: Vec<usize> = Vec::new();
        assert!(in_parallel(&empty, 4, |&x: &usize| x).is_empty());
    }

    #[test]
    fn mismatched_embedded_config_is_refused() {
        let cfg2 = MelConfig::builtin("cfg2").unwrap();
        let cfg1 = MelConfig::builtin("cfg1").unwrap();
        assert!(require_matching_config(Path::new("x.melt"), &cfg2, &cfg2).is_ok());
        let err = require_matching_config(Path::new("x.melt"), &cfg2, &cfg1).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
