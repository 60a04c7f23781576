use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fwmeta_cli::{describe, run, Overrides, VERSION};

#[derive(Parser)]
#[command(name = "fwmeta", version, about = "Small-noise reaction-diffusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Maximum number of worker threads.
        #[arg(long, env = "FWMETA_WORKERS")]
        workers: Option<usize>,
        /// Output directory, overriding output.directory.
        #[arg(long, env = "FWMETA_OUTPUT_DIR")]
        output: Option<PathBuf>,
    },
    /// Print the options and outputs of a task.
    Describe { task: String },
    /// Print the version.
    Version,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, workers, output } => run(&config, &Overrides { output_dir: output, workers }).map(|s| {
            println!("wrote {} files to {}", s.files.len() + 1, s.output_dir.display());
        }),
        Command::Describe { task } => describe::describe(&task).map(|text| print!("{text}")),
        Command::Version => {
            println!("fwmeta {VERSION}");
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
