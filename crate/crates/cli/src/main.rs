use clap::Parser;

use gridmem_cli::{analyze, eval, gen_env, report, train};

/// Train and analyse hierarchical grid-code models on square graph worlds.
#[derive(Parser)]
#[command(name = "gridmem", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Subcommand)]
enum Cmd {
    /// Generate a graph world (and optionally a sample walk) as JSON.
    GenEnv(gen_env::GenEnvArgs),
    /// Train a model by sensory prediction on random walks.
    Train(train::TrainArgs),
    /// Replay a checkpoint on a fresh walk and export metrics.
    Eval(eval::EvalArgs),
    /// Compare exported rate maps across two environments.
    Analyze(analyze::AnalyzeArgs),
    /// Aggregate one run directory into a single summary JSON.
    Report(report::ReportArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::GenEnv(a) => gen_env::run(&a),
        Cmd::Train(a) => train::run(&a),
        Cmd::Eval(a) => eval::run(&a),
        Cmd::Analyze(a) => analyze::run(&a),
        Cmd::Report(a) => report::run(&a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
