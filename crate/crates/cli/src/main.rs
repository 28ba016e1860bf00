use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use picle_cli::{cmd_generate, cmd_report, cmd_run, CliError, RunOptions};
use picle_core::engine::Mode;

#[derive(Parser)]
#[command(name = "picle", version, about = "Modular continual learning over compositional benchmark sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the datasets of a sequence from a spec file.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an engine mode over a generated sequence.
    Run {
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Engine configuration (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// picle, pt_only, nt_only, sa or rs.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue an interrupted run in `--out`.
        #[arg(long)]
        resume: bool,
        /// Worker threads (0 = all cores); PICLE_THREADS overrides.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        name: Option<String>,
        /// Stop after this many problems.
        #[arg(long)]
        max_problems: Option<usize>,
    },
    /// Compare finished runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| format!("unknown mode `{s}`"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), CliError> = match cli.command {
        Command::Generate { spec, out } => cmd_generate(&spec, &out).map(|n| {
            eprintln!("wrote {n} problems to {}", out.display());
        }),
        Command::Run {
            sequence,
            out,
            config,
            mode,
            seed,
            resume,
            threads,
            name,
            max_problems,
        } => cmd_run(&RunOptions {
            sequence_dir: sequence,
            config_path: config,
            out_dir: out,
            mode,
            seed,
            resume,
            threads,
            run_name: name,
            max_problems,
        })
        .map(|o| {
            if let Some(s) = o.summary {
                let tr = s.tr_last.map(|t| format!("{:.4}", t)).unwrap_or_else(|| "-".into());
                eprintln!("A {:.4}  F {:.4}  Tr_last {tr}  trainings {}", s.a, s.f, s.total_trainings);
            } else {
                eprintln!("solved {}/{} problems", o.num_solved, o.num_problems);
            }
        }),
        Command::Report { runs, csv } => cmd_report(&runs, csv.as_deref()).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
