//! Command-line front end: corpus synthesis, training, enhancement,
//! evaluation and the verification suites.
//!
//! Options may come from flags or from a `--config` file of `key = value`
//! lines using the flag names as keys; flags win. Each command prints its
//! resolved configuration to stderr in the same format, so the header can be
//! saved and replayed with `--config`.

mod commands;
pub mod config;
pub mod selftest;

use clap::{Args, Parser, Subcommand};
use complex_se::Error;

/// Exit code for invalid input or configuration.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit code for failures while running a valid request.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "complex-se",
    version,
    about = "Complex-valued conv-recurrent GAN speech enhancement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic noisy-speech corpus with manifests.
    SynthData(SynthDataArgs),
    /// Train a generator/discriminator pair on a manifest.
    Train(TrainArgs),
    /// Enhance one WAV file with a trained checkpoint.
    Enhance(EnhanceArgs),
    /// Score a checkpoint on a manifest and write a metric report.
    Evaluate(EvaluateArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Run signal-path and loss sanity checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct SynthDataArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<String>,
    #[arg(long, value_name = "DIR")]
    out: Option<String>,
    #[arg(long, value_name = "N")]
    n_train: Option<String>,
    #[arg(long, value_name = "M")]
    n_test: Option<String>,
    #[arg(long, value_name = "S")]
    seed: Option<String>,
    /// Shortest utterance in samples.
    #[arg(long, value_name = "SAMPLES")]
    min_len: Option<String>,
    /// Longest utterance in samples.
    #[arg(long, value_name = "SAMPLES")]
    max_len: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<String>,
    #[arg(long, value_name = "FILE")]
    manifest: Option<String>,
    #[arg(long, value_name = "DIR")]
    out: Option<String>,
    /// crm, polar or real
    #[arg(long)]
    mask: Option<String>,
    /// lstm, clstm or cblstm
    #[arg(long)]
    recurrent: Option<String>,
    /// r or ra
    #[arg(long)]
    loss: Option<String>,
    #[arg(long, value_name = "E")]
    epochs: Option<String>,
    #[arg(long, value_name = "B")]
    batch: Option<String>,
    #[arg(long, value_name = "LR")]
    lr: Option<String>,
    /// Factor applied to the learning rates when the epoch loss rises.
    #[arg(long, value_name = "F")]
    lr_decay: Option<String>,
    #[arg(long, value_name = "L")]
    lambda_l1: Option<String>,
    #[arg(long, value_name = "S")]
    seed: Option<String>,
    /// paper or toy
    #[arg(long)]
    scale: Option<String>,
    /// Share of utterances held out for per-epoch validation.
    #[arg(long, value_name = "F")]
    val_fraction: Option<String>,
    /// f32 or f64
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Args, Debug)]
struct EnhanceArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<String>,
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<String>,
    #[arg(long = "in", value_name = "WAV")]
    input: Option<String>,
    #[arg(long, value_name = "WAV")]
    out: Option<String>,
    /// Slices per generator forward pass.
    #[arg(long, value_name = "B")]
    batch: Option<String>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<String>,
    #[arg(long, value_name = "FILE")]
    manifest: Option<String>,
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<String>,
    #[arg(long, value_name = "FILE")]
    report: Option<String>,
    /// Slices per generator forward pass.
    #[arg(long, value_name = "B")]
    batch: Option<String>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<String>,
    /// Restrict the suite to one section.
    #[arg(long, value_name = "NAME")]
    module: Option<String>,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<String>,
}

/// Exit code for an error: validation problems give 1, the rest 2.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code. Diagnostics go to stderr; data only to the files named in `argv`.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_VALIDATION,
            };
        }
    };
    let result = match cli.command {
        Command::SynthData(a) => commands::synth_data(a),
        Command::Train(a) => commands::train(a),
        Command::Enhance(a) => commands::enhance(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Selftest(a) => commands::selftest(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
