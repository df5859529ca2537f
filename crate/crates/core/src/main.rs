use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shelab::cli::{cmd_analyze, cmd_islands, cmd_report, cmd_simulate, exit_code, load_config, Options};

#[derive(Parser)]
#[command(name = "shelab", version, about = "Stochastic heat equation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze the kernel and write report.json.
    Analyze(Common),
    /// Simulate the ensemble and write snapshots and statistics.
    Simulate(Common),
    /// Island, sup-growth and tail statistics for the parabolic Anderson model.
    Islands(Common),
    /// Print the kernel report.
    Report(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    unsafe_skip_gate: bool,
}

fn run(cli: Cli) -> shelab::Result<()> {
    let (Command::Analyze(c) | Command::Simulate(c) | Command::Islands(c) | Command::Report(c)) = &cli.command;
    let cfg = load_config(&c.config)?;
    let opts = Options { seed: c.seed, out: c.out.clone(), threads: c.threads, unsafe_skip_gate: c.unsafe_skip_gate };
    match cli.command {
        Command::Analyze(_) => {
            let (r, files) = cmd_analyze(&cfg, &opts)?;
            println!("classification {:?}, mixing {:?}", r.classification, r.mixing_ok);
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Simulate(_) => {
            let out = cmd_simulate(&cfg, &opts)?;
            for w in &out.summary.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(e) = &out.ergodicity {
                println!("ergodicity: {:?}", e.decision);
            }
            if let Some(p) = &out.poincare {
                println!("poincare pass: {}", p.pass);
            }
            for f in out.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Islands(_) => {
            let out = cmd_islands(&cfg, &opts)?;
            for w in &out.scan.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(t) = &out.tail {
                println!("tail slope {:.4} ± {:.4} (theory {:.4})", t.slope, t.stderr, t.theory);
            }
            for f in out.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Report(_) => print!("{}", cmd_report(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
