//! The `optimforge` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use optimforge_core::evolution::{RestartPolicy, SearchConfig, Strategy};
use optimforge_core::optim::{preset, Hyperparams, Reference, ProgramRule, UpdateRule};
use optimforge_core::program::{estimate_space, MutationConfig};
use optimforge_core::simplify::{canonicalize, simplify, DEFAULT_EPSILON};
use optimforge_core::task::{eval_seed, funnel_select, Ladder, ProxyTask, StepMetrics};
use optimforge_core::{analyze, functional_hash, strip_redundant, Program};
use serde_json::json;
use thiserror::Error;

use crate::format::{load_program, load_task, FormatError};
use crate::parallel::{resolve_threads, Pool, WallClock};
use crate::run::{self, RunDir, RunError, SearchRun};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: flags, files, programs, configs. Exit code 1.
    #[error("{0}")]
    User(String),
    /// Something broke that the input cannot explain. Exit code 2.
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::User(_) | RunError::Corrupt { .. } => CliError::User(e.to_string()),
            RunError::Io { .. } => CliError::Internal(e.to_string()),
        }
    }
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn user(e: impl std::fmt::Display) -> CliError {
    CliError::User(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "optimforge", version, about = "Evolutionary search over optimizer programs")]
pub struct Cli {
    /// Worker threads; overrides OPTIMFORGE_THREADS. Never changes results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Run (or resume) an evolutionary search into a run directory.
    Search(SearchArgs),
    /// Fitness of a program on a task.
    Eval(EvalArgs),
    /// Train with a program or reference optimizer, printing per-step metrics as JSONL.
    Train(TrainArgs),
    /// Strip, prune and canonicalize a program; prints a JSON report.
    Simplify(SimplifyArgs),
    /// Print a program without its redundant statements.
    Strip(StripArgs),
    /// Print the functional hash of a program.
    Hash(HashArgs),
    /// Filter candidates through increasingly large task variants.
    Funnel(FunnelArgs),
    /// Size of the program space: (functions * variables^arity)^length.
    EstimateSpace(SpaceArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Evolution,
    Random,
    ConstantsOnly,
}

#[derive(Debug, Args)]
struct SearchArgs {
    /// Built-in task id or task config file.
    #[arg(long, default_value = "linreg")]
    task: String,
    /// Starting program: a file or a shipped asset name.
    #[arg(long, default_value = "adamw")]
    init: String,
    /// Defaults to the task's population, else 1000.
    #[arg(long)]
    population: Option<usize>,
    #[arg(long, default_value_t = 2)]
    tournament: usize,
    /// Children per run.
    #[arg(long, default_value_t = 1000)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Children generated per population snapshot.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// `none`, `initial:K` (K independent runs) or `best:N` (reseed from best every N children).
    #[arg(long, default_value = "none")]
    restart: String,
    #[arg(long, value_enum, default_value = "evolution")]
    strategy: StrategyArg,
    /// Longest program drawn by the random strategy.
    #[arg(long, default_value_t = 16)]
    max_len: usize,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value_t = optimforge_core::program::DEFAULT_MAX_STATEMENTS)]
    max_statements: usize,
    #[arg(long, default_value_t = 100)]
    checkpoint_every: usize,
    /// Continue the run in --out from its checkpoint; other search flags are ignored.
    #[arg(long)]
    resume: bool,
    /// Stop (with a checkpoint) once this many children exist.
    #[arg(long)]
    stop_after: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    program: String,
    #[arg(long, default_value = "linreg")]
    task: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Meta-validation level (A, B, C) instead of the task itself.
    #[arg(long)]
    level: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adamw,
    Lion,
    Ablation,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value = "linreg")]
    task: String,
    /// Program file or asset name.
    #[arg(long, conflicts_with = "optimizer")]
    program: Option<String>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    /// Hyperparameter row for the reference optimizers.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Metrics file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimplifyArgs {
    program: String,
    #[arg(long, default_value = "linreg")]
    task: String,
    /// Largest fitness drop accepted per deletion.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the canonical program text here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StripArgs {
    program: String,
    /// Also rename variables canonically.
    #[arg(long)]
    canonical: bool,
}

#[derive(Debug, Args)]
struct HashArgs {
    program: String,
}

#[derive(Debug, Args)]
struct FunnelArgs {
    /// Candidate program files or asset names.
    programs: Vec<String>,
    /// Take candidates from a search run directory.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    /// Defaults to the run's task, else linreg.
    #[arg(long)]
    task: Option<String>,
    #[arg(long, default_value = "adamw")]
    baseline: String,
    /// Use only the first N ladder levels.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SpaceArgs {
    #[arg(long)]
    functions: u32,
    #[arg(long)]
    variables: u32,
    #[arg(long)]
    arity: u32,
    #[arg(long)]
    length: u32,
}

/// Runs the command line; returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let pool = || -> Result<Pool, CliError> {
        let threads = resolve_threads(cli.threads).map_err(user)?;
        Pool::new(threads).map_err(internal)
    };
    match cli.verb {
        Verb::Search(a) => search(a, &pool()?, out),
        Verb::Eval(a) => eval(a, out),
        Verb::Train(a) => train(a, out, err),
        Verb::Simplify(a) => simplify_verb(a, out),
        Verb::Strip(a) => {
            let p = load_program(&a.program)?;
            let q = if a.canonical { canonicalize(&p) } else { strip_redundant(&p) };
            out.write_all(q.print().as_bytes()).map_err(internal)
        }
        Verb::Hash(a) => {
            let p = load_program(&a.program)?;
            p.compile().map_err(user)?;
            writeln!(out, "{}", functional_hash(&p)).map_err(internal)
        }
        Verb::Funnel(a) => funnel(a, &pool()?, out),
        Verb::EstimateSpace(a) => {
            writeln!(out, "{}", estimate_space(a.functions, a.variables, a.arity, a.length)).map_err(internal)
        }
    }
}

fn parse_restart(s: &str) -> Result<RestartPolicy, CliError> {
    let bad = || CliError::User(format!("--restart: expected none, initial:K or best:N, got {s:?}"));
    if s == "none" {
        return Ok(RestartPolicy::None);
    }
    let (kind, n) = s.split_once(':').ok_or_else(bad)?;
    let n: usize = n.parse().map_err(|_| bad())?;
    match kind {
        "initial" => Ok(RestartPolicy::FromInitial { runs: n }),
        "best" => Ok(RestartPolicy::FromBestAfter { children: n }),
        _ => Err(bad()),
    }
}

fn search(a: SearchArgs, pool: &Pool, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = RunDir::new(&a.out);
    let summary = if a.resume {
        run::resume(&dir, pool, a.stop_after)?
    } else {
        let task = load_task(&a.task)?;
        let mutation = MutationConfig {
            max_statements: a.max_statements,
            constants_only: matches!(a.strategy, StrategyArg::ConstantsOnly),
            ..MutationConfig::default()
        };
        let strategy = match a.strategy {
            StrategyArg::Random => Strategy::Random { max_len: a.max_len },
            _ => Strategy::Evolution,
        };
        let cfg = SearchConfig {
            population: a.population.or(task.population).unwrap_or(1000),
            tournament: a.tournament,
            budget: a.budget,
            seed: a.seed,
            restart: parse_restart(&a.restart)?,
            mutation,
            strategy,
            repeats: a.repeats,
            batch: a.batch,
        };
        cfg.validate().map_err(user)?;
        let initial = load_program(&a.init)?;
        let mut run_cfg = SearchRun::new(task, cfg, initial);
        run_cfg.checkpoint_every = a.checkpoint_every;
        run::start(&dir, &run_cfg, pool, a.stop_after)?
    };
    let text = serde_json::to_string_pretty(&summary).map_err(internal)?;
    writeln!(out, "{text}").map_err(internal)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let p = load_program(&a.program)?;
    let mut task = load_task(&a.task)?;
    if let Some(name) = &a.level {
        let ladder = Ladder::default();
        let level = ladder.level(name).ok_or_else(|| CliError::User(format!("unknown level {name:?}")))?;
        task = task.scaled(level);
    }
    let prepared = task.prepare();
    let analysis = analyze(&p, &prepared.signature()).map_err(user)?;
    let seed = eval_seed(a.seed, analysis.hash, &task);
    let fitness = prepared.evaluate(&p, seed, &WallClock::after(task.timeout_secs)).map_err(user)?;
    let report = json!({
        "task": task.id,
        "hash": analysis.hash,
        "seed": a.seed,
        "eval_seed": seed,
        "fitness": fitness,
    });
    writeln!(out, "{report}").map_err(internal)
}

fn train(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let task = load_task(&a.task)?;
    let prepared = task.prepare();
    let w = prepared.init_weights(a.seed);
    let mut rule: Box<dyn UpdateRule> = match (&a.program, a.optimizer) {
        (Some(path), _) => {
            let p = load_program(path)?;
            analyze(&p, &prepared.signature()).map_err(user)?;
            Box::new(ProgramRule::new(&p, &w).map_err(user)?)
        }
        (None, Some(opt)) => {
            let row = match &a.preset {
                Some(key) => Some(preset(key).ok_or_else(|| CliError::User(format!("unknown preset {key:?}")))?),
                None => None,
            };
            let mut hp = match (opt, row) {
                (OptimizerArg::Adamw, Some(r)) => r.baseline,
                (_, Some(r)) => r.lion,
                (OptimizerArg::Adamw, None) => Hyperparams::adamw(),
                (_, None) => Hyperparams::lion(),
            };
            hp.lr = a.lr.unwrap_or(hp.lr);
            hp.beta1 = a.beta1.unwrap_or(hp.beta1);
            hp.beta2 = a.beta2.unwrap_or(hp.beta2);
            hp.eps = a.eps.unwrap_or(hp.eps);
            hp.lambda = a.lambda.unwrap_or(hp.lambda);
            hp.validate().map_err(user)?;
            let reference = match opt {
                OptimizerArg::Adamw => Reference::AdamW(hp),
                OptimizerArg::Lion => Reference::Lion(hp),
                OptimizerArg::Ablation => Reference::Ablation(hp),
            };
            Box::new(reference.rule(&w))
        }
        (None, None) => return Err(CliError::User("train needs --program or --optimizer".into())),
    };
    let mut file;
    let (sink, summary_sink): (&mut dyn Write, &mut dyn Write) = match &a.out {
        Some(path) => {
            file = std::io::BufWriter::new(fs::File::create(path).map_err(|e| user(format!("{}: {e}", path.display())))?);
            (&mut file, out)
        }
        None => (out, err),
    };
    let mut write_error = None;
    let outcome = prepared.train(rule.as_mut(), a.seed, &WallClock::after(task.timeout_secs), |m: &StepMetrics| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(sink, "{line}") {
            write_error.get_or_insert(e);
        }
    });
    if let Some(e) = write_error {
        return Err(internal(e));
    }
    sink.flush().map_err(internal)?;
    let summary = json!({ "task": task.id, "steps_run": outcome.steps_run, "fitness": outcome.fitness });
    writeln!(summary_sink, "{summary}").map_err(internal)
}

fn simplify_verb(a: SimplifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.epsilon.is_nan() || a.epsilon < 0.0 {
        return Err(CliError::User("--epsilon must be non-negative".into()));
    }
    let p = load_program(&a.program)?;
    let task = load_task(&a.task)?;
    let prepared = task.prepare();
    let report = simplify(&p, &prepared, a.epsilon, a.seed, &WallClock::after(f64::INFINITY)).map_err(user)?;
    if let Some(path) = &a.out {
        fs::write(path, report.program.print()).map_err(|e| internal(format!("{}: {e}", path.display())))?;
    }
    let text = serde_json::to_string_pretty(&report).map_err(internal)?;
    writeln!(out, "{text}").map_err(internal)
}

fn funnel(a: FunnelArgs, pool: &Pool, out: &mut dyn Write) -> Result<(), CliError> {
    let mut candidates: Vec<(String, Program)> = Vec::new();
    for spec in &a.programs {
        candidates.push((spec.clone(), load_program(spec)?));
    }
    let mut run_task = None;
    if let Some(dir) = &a.run {
        let dir = RunDir::new(dir);
        let config = dir.read_config()?;
        let state = dir.read_checkpoint()?;
        for ind in run::top_programs(&state, a.top_k) {
            candidates.push((ind.hash.to_hex(), ind.program));
        }
        run_task = Some(config.task);
    }
    let task = match (&a.task, run_task) {
        (Some(spec), _) => load_task(spec)?,
        (None, Some(task)) => task,
        (None, None) => load_task("linreg")?,
    };
    funnel_with(candidates, task, &a, pool, out)
}

fn funnel_with(candidates: Vec<(String, Program)>, task: ProxyTask, a: &FunnelArgs, pool: &Pool, out: &mut dyn Write) -> Result<(), CliError> {
    if candidates.is_empty() {
        return Err(CliError::User("funnel needs candidate programs or --run".into()));
    }
    let ladder = match a.levels {
        Some(n) => Ladder::default().truncated(n),
        None => Ladder::default(),
    };
    let baseline = load_program(&a.baseline)?;
    let programs: Vec<Program> = candidates.iter().map(|(_, p)| p.clone()).collect();
    let levels = funnel_select(&programs, &task, &ladder, &baseline, a.seed, pool);
    let names: Vec<serde_json::Value> = candidates
        .iter()
        .enumerate()
        .map(|(i, (source, p))| json!({ "index": i, "source": source, "hash": functional_hash(p) }))
        .collect();
    let report = json!({ "task": task.id, "candidates": names, "levels": levels });
    let text = serde_json::to_string_pretty(&report).map_err(internal)?;
    writeln!(out, "{text}").map_err(internal)
}
