use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairwash_cli::commands;
use fairwash_cli::{CliError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "fairwash", version, about = "Explanation manipulation and tangent-space projection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Print a machine-readable summary on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the classifier.
    Train(Common),
    /// Fine-tune the trained classifier towards the target explanation.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Attack the tangent-space-projected explanation.
        #[arg(long)]
        tsp: bool,
    },
    /// Write explanation maps of every available model.
    Explain(Common),
    /// Project the explanation maps onto estimated tangent spaces.
    Project(Common),
    /// Compare maps and models; write report and pixel-flipping files.
    Evaluate(Common),
    /// Analytic fairwashing of the logistic credit model.
    CreditDemo(Common),
    /// Hyperplane reconstruction error against the tangent dimension.
    TangentSweep(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Attack { common, .. } => common,
            Command::Train(c)
            | Command::Explain(c)
            | Command::Project(c)
            | Command::Evaluate(c)
            | Command::CreditDemo(c)
            | Command::TangentSweep(c) => c,
        }
    }
}

fn run(command: &Command) -> Result<serde_json::Value, CliError> {
    let common = command.common();
    let overrides = Overrides {
        seed: common.seed,
        output_dir: common.output_dir.clone(),
    };
    let mut cfg = RunConfig::load(&common.config, &overrides)?;
    if let Command::Attack { tsp: true, .. } = command {
        cfg.attack.tsp = true;
    }
    match command {
        Command::Train(_) => commands::cmd_train(&cfg),
        Command::Attack { .. } => commands::cmd_attack(&cfg),
        Command::Explain(_) => commands::cmd_explain(&cfg),
        Command::Project(_) => commands::cmd_project(&cfg),
        Command::Evaluate(_) => commands::cmd_evaluate(&cfg),
        Command::CreditDemo(_) => commands::cmd_credit_demo(&cfg),
        Command::TangentSweep(_) => commands::cmd_tangent_sweep(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.command.common().json;
    match run(&cli.command) {
        Ok(summary) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&summary).expect("serializable summary"));
            } else {
                println!("{} done", summary["command"].as_str().unwrap_or("command"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if json {
                println!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            }
            eprintln!("fairwash: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
