use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use perception_cli::commands::BENCH_METRICS;
use perception_cli::{cmd_bench, cmd_perturb, cmd_score, cmd_synth, cmd_train, CliError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "pscore", version, about = "Learned realness metric for generated text")]
struct Args {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Dotted-key override, e.g. `--set model.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a perception model and write checkpoint.json and training_log.json.
    Train,
    /// Score a test corpus with a checkpoint; prints P_sys.
    Score,
    /// Graded-quality harness comparing the learned score with BLEU.
    Bench,
    /// Write a synthetic corpus.
    Synth,
    /// Perturb the generation column of a corpus.
    Perturb,
}

fn run(args: Args) -> Result<(), CliError> {
    let config = RunConfig::load(args.config.as_deref(), &args.overrides, args.seed, args.out.as_deref())?;
    match args.command {
        Command::Train => {
            let t = cmd_train(&config)?;
            match t.selected_epoch {
                Some(e) => eprintln!("selected epoch {e}"),
                None => eprintln!("no epochs run; checkpoint holds the initialization"),
            }
            eprintln!("wrote {} and {}", t.checkpoint.display(), t.log.display());
        }
        Command::Score => {
            let s = cmd_score(&config)?;
            println!("{:.6}", s.p_sys);
            eprintln!("wrote {} and {}", s.report.display(), s.scores.display());
        }
        Command::Bench => {
            let b = cmd_bench(&config)?;
            println!("level\t{}", BENCH_METRICS.join("\t"));
            for s in &b.systems {
                let row: Vec<String> = s.scores.iter().map(|v| format!("{v:.6}")).collect();
                println!("{}\t{}", s.level, row.join("\t"));
            }
            for c in &b.correlations {
                let rho = c.spearman_vs_level.map_or("undefined".to_string(), |r| format!("{r:.4}"));
                let flag = if c.degenerate { " (degenerate)" } else { "" };
                println!("spearman({}, level) = {rho}{flag}", c.metric);
            }
        }
        Command::Synth => {
            let p = cmd_synth(&config)?;
            eprintln!("wrote {}", p.display());
        }
        Command::Perturb => {
            let p = cmd_perturb(&config)?;
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
