use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kipg::env::{induce_contexts, Behavior, MusicWorld, WorldConfig};
use kipg::harness::{
    compare, read_curves, run_experiment, validate_file, write_outputs, ExperimentSpec, HarnessError, OUTPUT_DIR_ENV,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "kipg",
    version,
    about = "Relational contextual bandits with knowledge-infused policy gradients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write per-run, mean and summary files.
    Run {
        /// TOML experiment spec; defaults apply when omitted.
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Override a spec field, e.g. `--set environment.behavior=B`.
        #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory; takes precedence over the spec.
        #[arg(short, long, env = OUTPUT_DIR_ENV)]
        output_dir: Option<PathBuf>,
        /// Print the resolved spec and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Summarise per-run or mean regret CSVs.
    Compare {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Emit CSV instead of an aligned table.
        #[arg(long)]
        csv: bool,
    },
    /// Print the candidate contexts induced from random warm-up pulls.
    Induce {
        #[arg(long, default_value_t = 50)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Behaviors assigned to users in turn, e.g. `ABC` or `A`.
        #[arg(long, default_value = "ABC")]
        behaviors: String,
    },
    /// Check regret CSVs against their schema or parse fact, replay,
    /// knowledge and clause files.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn fail(e: &HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn cmd_run(config: Option<PathBuf>, overrides: Vec<String>, output_dir: Option<PathBuf>, dry_run: bool) -> ExitCode {
    let spec = match &config {
        Some(p) => ExperimentSpec::load(p, &overrides),
        None => ExperimentSpec::from_toml("", &overrides),
    };
    let mut spec = match spec {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    if let Some(d) = output_dir {
        spec.output_dir = d;
    }
    if dry_run {
        print!("{}", spec.to_toml());
        return ExitCode::SUCCESS;
    }
    let trace = match run_experiment(&spec) {
        Ok(t) => t,
        Err(e) => return fail(&e),
    };
    for w in &trace.warnings {
        eprintln!("warning: {w}");
    }
    match write_outputs(&spec, &trace, &spec.output_dir) {
        Ok(out) => {
            println!("{}", trace.summary_line());
            print!("{}", out.table.render_text());
            println!("wrote {} files to {}", out.files.len(), spec.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn cmd_compare(files: Vec<PathBuf>, csv: bool) -> ExitCode {
    match read_curves(&files).and_then(|c| compare(&c)) {
        Ok(t) if csv => {
            print!("{}", t.render_csv());
            ExitCode::SUCCESS
        }
        Ok(t) => {
            print!("{}", t.render_text());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn cmd_induce(warmup: usize, seed: u64, behaviors: &str) -> ExitCode {
    let parsed: Result<Vec<Behavior>, String> = behaviors.chars().map(|c| c.to_string().parse()).collect();
    let cfg = match parsed {
        Ok(behaviors) => WorldConfig {
            behaviors,
            ..WorldConfig::default()
        },
        Err(e) => return fail(&HarnessError::Config(e)),
    };
    let world = match MusicWorld::new(cfg) {
        Ok(w) => w,
        Err(e) => return fail(&HarnessError::Config(e.to_string())),
    };
    if warmup < 1 {
        return fail(&HarnessError::Config("warmup must be >= 1".into()));
    }
    let set = induce_contexts(&world, warmup, &mut ChaCha8Rng::seed_from_u64(seed));
    for w in &set.warnings {
        eprintln!("warning: {w}");
    }
    for c in &set.clauses {
        println!("{c}");
    }
    ExitCode::SUCCESS
}

fn cmd_validate(files: Vec<PathBuf>) -> ExitCode {
    let mut code = ExitCode::SUCCESS;
    for f in files {
        match validate_file(&f) {
            Ok((kind, n)) => println!("ok   {} ({kind}, {n} records)", f.display()),
            Err(e) => {
                println!("FAIL {e}");
                code = ExitCode::from(1);
            }
        }
    }
    code
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            overrides,
            output_dir,
            dry_run,
        } => cmd_run(config, overrides, output_dir, dry_run),
        Command::Compare { files, csv } => cmd_compare(files, csv),
        Command::Induce {
            warmup,
            seed,
            behaviors,
        } => cmd_induce(warmup, seed, &behaviors),
        Command::Validate { files } => cmd_validate(files),
    }
}
