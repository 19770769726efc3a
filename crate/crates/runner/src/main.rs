use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fastconv_runner::{audit, execute, parse_config, plotdata, resume, report::summary_text};

/// Run and check fastconv experiments.
#[derive(Parser)]
#[command(name = "fastconv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the preset of an experiment file and write its report.
    Run {
        config: PathBuf,
        /// Directory under which reports are written.
        #[arg(long, env = "FASTCONV_OUTPUT_ROOT", default_value = ".")]
        output_root: PathBuf,
        /// Concurrent runs (default: one per core).
        #[arg(long, env = "FASTCONV_WORKERS")]
        workers: Option<usize>,
    },
    /// Re-evaluate the checks of a report from its stored runs.
    Audit { rundir: PathBuf },
    /// Continue a checkpointed run to its end time.
    Resume { checkpoint: PathBuf },
    /// Write per-figure CSVs for a report.
    Plotdata { rundir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, output_root, workers } => parse_config(&config).map_err(Into::into).and_then(|spec| {
            let rep = execute(&spec, &output_root, workers)?;
            print!("{}", summary_text(&rep.meta.preset, &rep.meta.run_id, &rep.checks, &rep.failures));
            println!("report: {}", rep.dir.display());
            Ok(rep.meta.passed)
        }),
        Command::Audit { rundir } => audit(&rundir).map(|a| {
            print!("{}", summary_text("audit", &rundir.display().to_string(), &a.checks, &[]));
            println!(
                "stored checks {}",
                if a.reproduced { "reproduced bit-exactly" } else { "differ from the recomputed ones" }
            );
            a.checks.iter().all(|c| c.pass)
        }),
        Command::Resume { checkpoint } => resume(&checkpoint).map(|t| {
            println!("{} resumed to t = {} after {} steps", t.run_id(), t.last().t, t.steps);
            true
        }),
        Command::Plotdata { rundir } => plotdata(&rundir).map(|dir| {
            println!("plot data: {}", dir.display());
            true
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
