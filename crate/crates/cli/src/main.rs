//! `htam` command-line driver.
//!
//! Exit statuses: 0 success, 1 filesystem or other failure, 2 bad
//! configuration or input files, 3 every task aborted on an adapter
//! (transport) failure, 4 some tasks aborted and the rest completed.

use std::fs;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use htam::adapters::{serve_protocol, Evaluator, ScriptedEvaluator, SimulatedEnvironment, SimulatedEvaluator};
use htam::campaign::run_campaign;
use htam::config::{load_tasks, ConfigError};
use htam::cost::{cost_per_task, PriceSheet, TokenLedger};
use htam::memory::{default_bank, load_bank, merge_banks, save_bank, MergeError, PersistError};
use htam::report::{build_report, compute_metrics, render_report};
use htam::state::RuleBasedSymptoms;
use htam::trajectory::{read_log_file, write_log_file, LogError};
use htam::{Engine, RunConfig};

const EXIT_GENERIC: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TRANSPORT: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(name = "htam", version, about = "Transition-aware operator optimization driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default memory bank.
    InitMemory {
        output: PathBuf,
        /// Use the richer rationale text for common transitions.
        #[arg(long)]
        seed_priors: bool,
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Run an optimization campaign over a task file.
    Run(RunArgs),
    /// Summarize the trajectory logs in a directory.
    Report {
        logs: PathBuf,
        /// Speedup thresholds for Valid@ρ; repeatable.
        #[arg(long = "valid-at", default_values_t = [2.0])]
        valid_at: Vec<f64>,
    },
    /// Fold fork banks back into their base.
    Merge {
        base: PathBuf,
        #[arg(required = true)]
        forks: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        evidence_cap: usize,
    },
    /// Price a token budget: per-task cost and, with --tasks, the campaign.
    Cost {
        #[arg(long)]
        tokens_in: u64,
        #[arg(long)]
        tokens_out: u64,
        /// Dollars per million input tokens.
        #[arg(long)]
        input_price: f64,
        /// Dollars per million output tokens.
        #[arg(long)]
        output_price: f64,
        #[arg(long)]
        tasks: Option<u64>,
    },
    /// Serve the evaluator wire protocol on stdin/stdout from a fixture
    /// table or the simulated environment.
    FixtureEvaluator {
        /// Scripted evaluator fixture.
        #[arg(long, conflicts_with = "simulated")]
        fixture: Option<PathBuf>,
        /// Simulated environment file; the built-in one when given without a path.
        #[arg(long, num_args = 0..=1, default_missing_value = "")]
        simulated: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    tasks: PathBuf,
    /// Memory bank; the default bank when absent.
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Run configuration; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for logs, forks and the merged bank.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<u32>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    freeze_memory: bool,
    #[arg(long)]
    no_prefix: bool,
    #[arg(long)]
    flat_alpha: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

/// A run that finished but not cleanly.
#[derive(Debug)]
struct Aborted {
    aborted: usize,
    total: usize,
}

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} of {} tasks aborted", self.aborted, self.total)
    }
}

impl std::error::Error for Aborted {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(a) = cause.downcast_ref::<Aborted>() {
            return if a.aborted == a.total { EXIT_TRANSPORT } else { EXIT_PARTIAL };
        }
        if let Some(e) = cause.downcast_ref::<PersistError>() {
            return match e {
                PersistError::Io { .. } => EXIT_GENERIC,
                _ => EXIT_CONFIG,
            };
        }
        if let Some(e) = cause.downcast_ref::<ConfigError>() {
            return match e {
                ConfigError::Io { .. } => EXIT_GENERIC,
                _ => EXIT_CONFIG,
            };
        }
        if cause.is::<LogError>() || cause.is::<MergeError>() {
            return EXIT_CONFIG;
        }
    }
    EXIT_GENERIC
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::InitMemory { output, seed_priors, force } => init_memory(&output, seed_priors, force),
        Command::Run(args) => run(args),
        Command::Report { logs, valid_at } => report(&logs, &valid_at),
        Command::Merge { base, forks, out, evidence_cap } => merge(&base, &forks, &out, evidence_cap),
        Command::Cost { tokens_in, tokens_out, input_price, output_price, tasks } => {
            cost(tokens_in, tokens_out, input_price, output_price, tasks)
        }
        Command::FixtureEvaluator { fixture, simulated } => fixture_evaluator(fixture, simulated),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn init_memory(output: &Path, seed_priors: bool, force: bool) -> Result<()> {
    if output.exists() && !force {
        bail!("{} already exists; pass --force to overwrite", output.display());
    }
    let bank = default_bank(seed_priors);
    save_bank(&bank, output)?;
    println!(
        "wrote {} ({} globals, {} locals, {} edges)",
        output.display(),
        bank.globals.len(),
        bank.locals.len(),
        bank.edges.len()
    );
    Ok(())
}

/// File-name-safe form of a task id.
fn slug(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = args.tau {
        cfg.tau = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.ablation.freeze_memory |= args.freeze_memory;
    cfg.ablation.no_prefix |= args.no_prefix;
    cfg.ablation.flat_alpha |= args.flat_alpha;
    cfg.validate()?;

    let tasks = load_tasks(&args.tasks)?;
    if tasks.is_empty() {
        bail!(ConfigError::Invalid(format!("{}: no tasks", args.tasks.display())));
    }
    let base = match &args.bank {
        Some(p) => load_bank(p)?,
        None => default_bank(false),
    };
    let templates = cfg.templates()?;
    let ledger = TokenLedger::new();
    let detector = RuleBasedSymptoms;
    let engine = Engine::new(&cfg, &templates, &detector).with_ledger(&ledger);

    let outcome = run_campaign(&engine, &tasks, &base, args.jobs, |_| {
        Ok((cfg.build_backend()?, cfg.build_evaluator()?))
    })?;

    let logs = args.out.join("logs");
    let forks = args.out.join("forks");
    for dir in [&logs, &forks] {
        fs::create_dir_all(dir).with_context(|| format!("create {}", dir.display()))?;
    }
    for (i, r) in outcome.results.iter().enumerate() {
        let name = format!("{i:04}-{}", slug(&r.record.task_id));
        let log = logs.join(format!("{name}.jsonl"));
        write_log_file(&log, &r.record, &cfg.prices).with_context(|| format!("write {}", log.display()))?;
        save_bank(&r.fork, &forks.join(format!("{name}.json")))?;
    }
    save_bank(&outcome.bank, &args.out.join("bank.json"))?;

    let records: Vec<_> = outcome.results.iter().map(|r| r.record.clone()).collect();
    for r in &records {
        match (&r.aborted, r.best_generated_speedup()) {
            (Some(a), _) => println!("{:<24} aborted after {} steps: {a}", r.task_id, r.steps.len()),
            (None, Some(s)) => println!("{:<24} best {s:.3}x (step {})", r.task_id, r.best.step),
            (None, None) => println!("{:<24} no correct candidate", r.task_id),
        }
    }
    let m = compute_metrics(&records, &[]);
    match m.geomean_speedup {
        Some(g) => println!("geomean speedup {g:.3}x over {} of {} tasks", m.correct, m.tasks),
        None => println!("geomean speedup - (no correct tasks)"),
    }
    println!("cost {} ({})", ledger.snapshot().cost(&cfg.prices), cfg.prices.label);

    if m.aborted > 0 {
        return Err(Aborted { aborted: m.aborted, total: m.tasks }.into());
    }
    Ok(())
}

fn report(dir: &Path, valid_at: &[f64]) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("read {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<io::Result<_>>()
        .with_context(|| format!("read {}", dir.display()))?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "jsonl"));
    paths.sort();
    if paths.is_empty() {
        bail!("no trajectory logs (*.jsonl) in {}", dir.display());
    }
    let mut records = Vec::with_capacity(paths.len());
    let mut prices: Option<PriceSheet> = None;
    for p in &paths {
        let (record, sheet) = read_log_file(p).with_context(|| p.display().to_string())?;
        match &prices {
            None => prices = Some(sheet),
            Some(first) if *first != sheet => {
                bail!("{}: price sheet `{}` differs from `{}`", p.display(), sheet.label, first.label)
            }
            Some(_) => {}
        }
        records.push(record);
    }
    let report = build_report(&records, prices.as_ref().expect("at least one log"), valid_at);
    print!("{}", render_report(&report, &records));
    Ok(())
}

fn merge(base: &Path, forks: &[PathBuf], out: &Path, evidence_cap: usize) -> Result<()> {
    let base_bank = load_bank(base)?;
    let fork_banks = forks.iter().map(|p| load_bank(p)).collect::<Result<Vec<_>, _>>()?;
    let merged = merge_banks(&base_bank, &fork_banks, evidence_cap)?;
    save_bank(&merged, out)?;
    println!("merged {} forks into {}", forks.len(), out.display());
    Ok(())
}

fn cost(tokens_in: u64, tokens_out: u64, input_price: f64, output_price: f64, tasks: Option<u64>) -> Result<()> {
    let prices = PriceSheet::from_dollars("cli", input_price, output_price).map_err(ConfigError::Invalid)?;
    let per_task = cost_per_task(tokens_in, tokens_out, &prices);
    println!("per task {per_task}");
    if let Some(n) = tasks {
        let total = per_task * n;
        println!("{n} tasks {total}");
    }
    Ok(())
}

fn fixture_evaluator(fixture: Option<PathBuf>, simulated: Option<PathBuf>) -> Result<()> {
    let mut evaluator: Box<dyn Evaluator> = match (fixture, simulated) {
        (Some(p), _) => {
            let text = fs::read_to_string(&p).with_context(|| format!("read {}", p.display()))?;
            Box::new(ScriptedEvaluator::from_json(&text).map_err(|e| ConfigError::Invalid(e.to_string()))?)
        }
        (None, Some(p)) if p.as_os_str().is_empty() => Box::new(SimulatedEvaluator::new(SimulatedEnvironment::default_env())),
        (None, Some(p)) => {
            let text = fs::read_to_string(&p).with_context(|| format!("read {}", p.display()))?;
            let env: SimulatedEnvironment = serde_json::from_str(&text)
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", p.display())))?;
            env.validate().map_err(ConfigError::Invalid)?;
            Box::new(SimulatedEvaluator::new(env))
        }
        (None, None) => bail!(ConfigError::Invalid("pass --fixture or --simulated".into())),
    };
    let stdin = io::stdin();
    serve_protocol(evaluator.as_mut(), stdin.lock(), BufWriter::new(io::stdout().lock()))?;
    Ok(())
}
