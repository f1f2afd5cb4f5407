//! `goalsim` command-line runner.
//!
//! Exit codes: 0 on success, 1 when the command line or configuration is
//! invalid, 2 when a run fails or ends unstable.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use goalsim::experiment::{catalog, execute, output_dir, ExperimentConfig, ExperimentKind, OUT_ENV};

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "goalsim", version, about = "Goal-oriented communication experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs one experiment and writes its CSV outputs.
    Run(RunArgs),
    /// Lists the experiment kinds and their default configurations.
    List {
        /// Machine-readable JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Tracking,
    RemoteMdp,
    GraphCoding,
    Aircomp,
    Feel,
    Feedback,
    EdgeBatch,
}

impl From<Kind> for ExperimentKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Tracking => ExperimentKind::Tracking,
            Kind::RemoteMdp => ExperimentKind::RemoteMdp,
            Kind::GraphCoding => ExperimentKind::GraphCoding,
            Kind::Aircomp => ExperimentKind::Aircomp,
            Kind::Feel => ExperimentKind::Feel,
            Kind::Feedback => ExperimentKind::Feedback,
            Kind::EdgeBatch => ExperimentKind::EdgeBatch,
        }
    }
}

#[derive(clap::Args)]
struct RunArgs {
    kind: Kind,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Output directory; defaults to the configuration's `out`, then $GOALSIM_OUT, then ./goalsim-out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path override such as `feel.train.rounds=50`; repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Feedback: user population size.
    #[arg(long)]
    n: Option<u64>,
    /// Feedback: acknowledged-set sizes as start:end:step.
    #[arg(long, value_name = "START:END:STEP")]
    k_range: Option<String>,
    /// Feedback: comma-separated false-alarm targets.
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
}

fn parse_k_range(s: &str) -> Result<Vec<usize>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| format!("--k-range `{s}`: {e}"))?;
    let (start, end, step) = match nums[..] {
        [a, b] => (a, b, 1),
        [a, b, c] => (a, b, c),
        _ => return Err(format!("--k-range `{s}` must be START:END or START:END:STEP")),
    };
    goalsim::feedback_codec::SweepConfig::range(start, end, step).map_err(|e| format!("--k-range: {e}"))
}

fn overrides(args: &RunArgs) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    if let Some(s) = args.seed {
        out.push(format!("seed={s}"));
    }
    if let Some(r) = args.replications {
        out.push(format!("replications={r}"));
    }
    if let Some(n) = args.n {
        out.push(format!("feedback.population={n}"));
    }
    if let Some(k) = &args.k_range {
        let ks: Vec<String> = parse_k_range(k)?.iter().map(usize::to_string).collect();
        out.push(format!("feedback.k_values=[{}]", ks.join(",")));
    }
    if !args.eps.is_empty() {
        let es: Vec<String> = args.eps.iter().map(|e| format!("{e:e}")).collect();
        out.push(format!("feedback.eps=[{}]", es.join(",")));
    }
    out.extend(args.set.iter().cloned());
    Ok(out)
}

fn run(args: RunArgs) -> ExitCode {
    let kind = ExperimentKind::from(args.kind);
    let text = match &args.config {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(t) => Some(t),
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", p.display());
                return ExitCode::from(EXIT_VALIDATION);
            }
        },
        None => None,
    };
    let cfg = overrides(&args)
        .and_then(|o| ExperimentConfig::load(text.as_deref(), Some(kind), &o).map_err(|e| e.to_string()));
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            let origin = args.config.as_ref().map_or(String::new(), |p| format!(" in {}", p.display()));
            eprintln!("error{origin}: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    let env = std::env::var(OUT_ENV).ok();
    let dir = output_dir(args.out.as_deref(), &cfg, env.as_deref());
    let result = execute(&cfg);
    let written = match result.write(&dir) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("error: writing outputs to {}: {e}", dir.display());
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    println!(
        "{} seed={} config_hash={}: {} files in {}",
        kind,
        cfg.seed,
        result.config_hash,
        written.len(),
        dir.display()
    );
    if result.failed() {
        for r in &result.replications {
            if let Some(msg) = &r.failure {
                eprintln!("error: replication {} (seed {}) failed: {msg}", r.index, r.seed);
            }
        }
        return ExitCode::from(EXIT_RUNTIME);
    }
    ExitCode::SUCCESS
}

fn list(json: bool) -> ExitCode {
    let entries = catalog();
    if json {
        println!("{}", serde_json::to_string_pretty(&entries).expect("catalog serializes"));
        return ExitCode::SUCCESS;
    }
    for e in &entries {
        println!("{:<13} {}", e.kind, e.description);
        println!("  block [{}], outputs: {}", e.block, e.outputs.join(", "));
        println!("  default configuration:");
        for line in e.default_config.lines() {
            println!("    {line}");
        }
        println!();
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Run(args) => run(args),
        Command::List { json } => list(json),
    }
}
