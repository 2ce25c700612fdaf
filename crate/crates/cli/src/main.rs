//! `remiforge`: every pipeline stage as a subcommand. Exit status is 0 on
//! success, 1 for usage errors and 2 for data errors.

mod analysis;
mod corpus;
mod error;
mod generate;
mod io;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use remiforge_core::Composer;

use crate::error::Result;
use crate::io::RunRecord;

#[derive(Debug, Parser)]
#[command(name = "remiforge", version, about = "Composer-conditioned symbolic piano music toolkit")]
struct Cli {
    /// Also write a JSON run manifest (inputs, outputs, config hash, wall time).
    #[arg(long, global = true, value_name = "PATH")]
    run_manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageArg {
    Pretrain,
    Finetune,
}

impl From<StageArg> for remiforge_core::corpus::Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Pretrain => Self::Pretrain,
            StageArg::Finetune => Self::Finetune,
        }
    }
}

fn parse_composer(s: &str) -> std::result::Result<Composer, String> {
    s.parse().map_err(|e: remiforge_core::score::UnknownComposer| e.to_string())
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode a MIDI file as tokens (or ids).
    Tokenize {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write integer ids instead of token names.
        #[arg(long)]
        ids: bool,
        /// Override the composer label stored in the file.
        #[arg(long, value_parser = parse_composer)]
        composer: Option<Composer>,
    },
    /// Decode a token or id file back to MIDI.
    Detokenize {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the vocabulary as `id<TAB>token`.
    Vocab {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse every file of a `path,category,composer` manifest into an index.
    Index {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw training batches from an index and summarize the segments.
    SegmentStats {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value_t = 256)]
        context: usize,
        #[arg(long, value_enum, default_value_t = StageArg::Pretrain)]
        stage: StageArg,
        #[arg(long, default_value_t = 100)]
        batches: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pitch-class entropy, groove similarity and structureness per MIDI file.
    Metrics {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bar-level chord labels per MIDI file.
    Chords {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare chord-progression rankings of generated and real pieces.
    /// Subdirectories are treated as one group per composer.
    Progressions {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "10,15,20")]
        topn: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fréchet distance between two embedding files.
    Fad {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Train from a TOML config; writes model.ckpt and run.json into `--out`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a continuation with nucleus sampling.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_composer, default_value = "none")]
        composer: Composer,
        /// Prompt file (MIDI, tokens or ids); defaults to composer, tempo and BOS.
        #[arg(long)]
        prompt: Option<PathBuf>,
        #[arg(long, default_value_t = 120)]
        tempo: u32,
        #[arg(long, default_value_t = 512)]
        max_new: usize,
        #[arg(long, default_value_t = 0.99)]
        p: f64,
        /// Defaults to 1.1 with a composer and 1.0 without.
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        ids: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also decode the result to a MIDI file.
        #[arg(long)]
        midi: Option<PathBuf>,
    },
    /// Nucleus sizes while generating the bar after each primer's first four.
    Choices {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_composer, default_value = "none")]
        composer: Composer,
        #[arg(long, default_value_t = 0.99)]
        p: f64,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        primers: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Tokenize { .. } => "tokenize",
            Command::Detokenize { .. } => "detokenize",
            Command::Vocab { .. } => "vocab",
            Command::Index { .. } => "index",
            Command::SegmentStats { .. } => "segment-stats",
            Command::Metrics { .. } => "metrics",
            Command::Chords { .. } => "chords",
            Command::Progressions { .. } => "progressions",
            Command::Fad { .. } => "fad",
            Command::Train { .. } => "train",
            Command::Sample { .. } => "sample",
            Command::Choices { .. } => "choices",
        }
    }
}

/// Usual setting for composer-conditioned sampling; unconditioned sampling
/// keeps the raw distribution.
fn default_temperature(composer: Composer) -> f64 {
    if composer.is_specified() {
        1.1
    } else {
        1.0
    }
}

fn run(command: &Command) -> Result<RunRecord> {
    let mut record = match command {
        Command::Tokenize {
            input,
            out,
            ids,
            composer,
        } => corpus::tokenize(input, out.as_deref(), *ids, *composer),
        Command::Detokenize { input, out } => corpus::detokenize(input, out),
        Command::Vocab { out } => corpus::vocab(out.as_deref()),
        Command::Index { manifest, out } => corpus::index(manifest, out),
        Command::SegmentStats {
            index,
            context,
            stage,
            batches,
            batch_size,
            seed,
            out,
        } => corpus::segment_stats(index, *context, (*stage).into(), *batches, *batch_size, *seed, out.as_deref()),
        Command::Metrics { input, out } => analysis::metrics(input, out.as_deref()),
        Command::Chords { input, out } => analysis::chords(input, out.as_deref()),
        Command::Progressions {
            real,
            model,
            topn,
            k,
            out,
        } => analysis::progressions(real, model, topn, *k, out.as_deref()),
        Command::Fad { a, b } => analysis::fad(a, b),
        Command::Train { config, seed, out } => train::train(config, *seed, out),
        Command::Sample {
            checkpoint,
            composer,
            prompt,
            tempo,
            max_new,
            p,
            temperature,
            seed,
            ids,
            out,
            midi,
        } => generate::sample(generate::SampleArgs {
            checkpoint,
            composer: *composer,
            prompt: prompt.as_deref(),
            tempo: *tempo,
            max_new: *max_new,
            p: *p,
            temperature: temperature.unwrap_or(default_temperature(*composer)),
            seed: *seed,
            ids: *ids,
            out: out.as_deref(),
            midi: midi.as_deref(),
        }),
        Command::Choices {
            checkpoint,
            composer,
            p,
            temperature,
            seed,
            out,
            primers,
        } => generate::choices(
            checkpoint,
            *composer,
            *p,
            temperature.unwrap_or(default_temperature(*composer)),
            *seed,
            primers,
            out.as_deref(),
        ),
    }?;
    record.config = format!("{command:?}");
    Ok(record)
}

/// Prints the help of the subcommand named on the command line, if any.
fn subcommand_help() -> Option<String> {
    let mut cmd = Cli::command();
    cmd.build();
    let name = std::env::args().skip(1).find(|a| cmd.find_subcommand(a).is_some())?;
    Some(cmd.find_subcommand_mut(&name)?.render_help().to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => {
                    if let Some(help) = subcommand_help() {
                        eprintln!("\n{help}");
                    }
                    ExitCode::from(1)
                }
            };
        }
    };
    let started = Instant::now();
    let result = run(&cli.command).and_then(|record| match &cli.run_manifest {
        Some(path) => io::write_manifest(path, cli.command.name(), record, started),
        None => Ok(()),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
