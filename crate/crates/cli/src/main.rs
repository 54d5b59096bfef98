use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod binary;
mod cipher;
mod io;
mod semisup;

/// Joint sequence models learned from unpaired marginals.
#[derive(Debug, Parser)]
#[command(name = "seqjoint", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Count n-gram statistics of a text corpus (one utterance per line).
    Ingest(cipher::IngestArgs),
    /// Split a corpus into plaintext and enciphered halves under a random key.
    Encipher(cipher::EncipherArgs),
    /// Recover a substitution key analytically from bigram statistics.
    SolveSvd(cipher::SolveSvdArgs),
    /// Seeded gradient-based decipherment runs, one CSV row per run.
    SolveGrad(cipher::SolveGradArgs),
    /// Closed-form identifiability analysis of a binary noisy channel.
    Identifiability(binary::IdentifiabilityArgs),
    /// Semi-supervised training on a synthetic tabular task.
    TrainSemisup(semisup::TrainArgs),
    /// Score a trained model (and posterior) against the truth.
    Eval(semisup::EvalArgs),
    /// Summarise a solve-grad CSV.
    Report(cipher::ReportArgs),
}

/// Where to write a JSON result; stdout when omitted.
#[derive(Debug, Clone, Args)]
struct OutArg {
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Bad input detected after parsing; reported like a usage error.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => cipher::ingest(a),
        Command::Encipher(a) => cipher::encipher(a),
        Command::SolveSvd(a) => cipher::solve_svd(a),
        Command::SolveGrad(a) => cipher::solve_grad(a),
        Command::Identifiability(a) => binary::identifiability(a),
        Command::TrainSemisup(a) => semisup::train(a),
        Command::Eval(a) => semisup::eval(a),
        Command::Report(a) => cipher::report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("usage error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
