//! Subcommands behind the `tarl` binary.
//!
//! Exit codes: 0 ok, 1 I/O or other failure, 2 parse or shape error,
//! 3 no source-to-sink flow, 4 non-convergence (with `--require-converged`),
//! 5 degenerate localization, 6 no constants on the culprit line,
//! 7 not enough search data to select an arm.

pub mod manifest;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use tarl::config::RunConfig;
use tarl::executor::{instrument, uninstrumented, HookEvent, InstrumentedProgram};
use tarl::faultloc::{default_window, localize, LocalizationReport, LocalizeError};
use tarl::lang::{parse, statement_text, Program, SourceFile};
use tarl::mend::{
    atr, episode_rewards, epsilon_greedy_search, eval_seed, generate_mutants, select_and_validate, ArmStats,
    MendError,
};
use tarl::sarsa::{learn_observed, LearnStats, UtilityTable};
use tarl::taintflow::{taint_analyze, TaintError, TaintReport};
use tarl::world::{Environment, ODOMETRY_TOPIC, VELOCITY_TOPIC};

use manifest::RunManifest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    NoFlow(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("{0}")]
    Degenerate(String),
    #[error("{0}")]
    NoConstants(String),
    #[error("{0}")]
    InsufficientData(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Other(_) => 1,
            CliError::Parse(_) => 2,
            CliError::NoFlow(_) => 3,
            CliError::NotConverged(_) => 4,
            CliError::Degenerate(_) => 5,
            CliError::NoConstants(_) => 6,
            CliError::InsufficientData(_) => 7,
        }
    }
}

impl From<TaintError> for CliError {
    fn from(e: TaintError) -> Self {
        match e {
            TaintError::NoFlow(_) => CliError::NoFlow(e.to_string()),
            TaintError::Analysis(_) => CliError::Parse(e.to_string()),
        }
    }
}

impl From<LocalizeError> for CliError {
    fn from(e: LocalizeError) -> Self {
        match e {
            LocalizeError::Shape(_) => CliError::Parse(e.to_string()),
            LocalizeError::Degenerate(_) => CliError::Degenerate(e.to_string()),
        }
    }
}

impl From<MendError> for CliError {
    fn from(e: MendError) -> Self {
        match e {
            MendError::NoConstants(_) => CliError::NoConstants(e.to_string()),
            MendError::InsufficientData { .. } => CliError::InsufficientData(e.to_string()),
            MendError::MissingLine(_) => CliError::Parse(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tarl", version, about = "Taint-guided utility learning, fault localization and repair")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Trace data flow from a subscribed topic to a published one.
    Taint(TaintArgs),
    /// Learn the utility table of the instrumented program.
    Learn(LearnArgs),
    /// Compare two utility tables and name the culprit line.
    Localize(LocalizeArgs),
    /// Search guarded constant mutations of the culprit line.
    Repair(RepairArgs),
}

#[derive(Debug, Args)]
pub struct TaintArgs {
    pub program: PathBuf,
    #[arg(long, default_value = ODOMETRY_TOPIC)]
    pub source: String,
    #[arg(long, default_value = VELOCITY_TOPIC)]
    pub sink: String,
    /// Write the report here instead of printing it.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnvArg {
    Offline,
    Online,
}

impl From<EnvArg> for Environment {
    fn from(e: EnvArg) -> Self {
        match e {
            EnvArg::Offline => Environment::Offline,
            EnvArg::Online => Environment::Online,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SeedArgs {
    /// Run seed; falls back to TARL_SEED, then to the config file.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Sweep `a..b` (exclusive) or `a..=b`; output paths must contain `{seed}`.
    #[arg(long)]
    pub seeds: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct LearnArgs {
    pub program: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "offline")]
    pub env: EnvArg,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[command(flatten)]
    pub seeds: SeedArgs,
    /// Utility table CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Stats JSON; defaults to `<out>.stats.json`.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Hook events of every episode as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub require_converged: bool,
    #[arg(long, default_value = ODOMETRY_TOPIC)]
    pub source: String,
    #[arg(long, default_value = VELOCITY_TOPIC)]
    pub sink: String,
}

#[derive(Debug, Clone, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub offline: PathBuf,
    #[arg(long)]
    pub online: PathBuf,
    /// Window width in odometry bins; defaults to a quarter of the bins.
    #[arg(long)]
    pub window: Option<usize>,
    /// Program the tables were learned from, used to name the culprit.
    #[arg(long)]
    pub program: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RepairArgs {
    pub program: PathBuf,
    /// Localization report JSON.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub seeds: SeedArgs,
    #[arg(long)]
    pub search_episodes: Option<usize>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    #[arg(long)]
    pub out_patch: PathBuf,
    #[arg(long)]
    pub out_log: PathBuf,
    /// ATR summary JSON; defaults to `<out-patch>.summary.json`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_program(path: &Path) -> Result<(SourceFile, Program, Vec<u8>), CliError> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::Parse(format!("{}: not UTF-8", path.display())))?;
    let src = SourceFile::new(path.display().to_string(), text);
    let program = parse(&src).map_err(|e| CliError::Parse(format!("{}:{e}", path.display())))?;
    Ok((src, program, bytes))
}

fn load_config(path: Option<&Path>, manifest: &mut RunManifest) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let bytes = read_file(p)?;
            manifest.input(p, &bytes);
            let text = String::from_utf8(bytes).map_err(|_| CliError::Other(format!("{}: not UTF-8", p.display())))?;
            RunConfig::from_toml_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", p.display())))
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

/// Parses `a..b` (exclusive) or `a..=b` (inclusive).
pub fn parse_seed_range(range: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Other(format!("bad seed range `{range}`; expected a..b or a..=b"));
    let (lo, hi, inclusive) = if let Some((a, b)) = range.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = range.split_once("..") {
        (a, b, false)
    } else {
        return Err(bad());
    };
    let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
    Ok(if inclusive { (lo..=hi).collect() } else { (lo..hi).collect() })
}

/// Seed for a single run: flag, then `TARL_SEED`, then the config.
fn resolve_seed(flag: Option<u64>, config: &RunConfig) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("TARL_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Other(format!("TARL_SEED is not an unsigned integer: `{v}`"))),
        Err(_) => Ok(config.rl.seed),
    }
}

fn seeded_path(path: &Path, seed: u64) -> PathBuf {
    PathBuf::from(path.display().to_string().replace("{seed}", &seed.to_string()))
}

fn require_placeholder(paths: &[&Path]) -> Result<(), CliError> {
    for p in paths {
        if !p.display().to_string().contains("{seed}") {
            return Err(CliError::Other(format!(
                "{}: output paths of a seed sweep must contain {{seed}}",
                p.display()
            )));
        }
    }
    Ok(())
}

/// Runs `one` for each seed concurrently; reports in seed order and returns
/// the first failure.
fn sweep<F>(seeds: &[u64], one: F) -> Result<(), CliError>
where
    F: Fn(u64) -> Result<String, CliError> + Sync,
{
    let results: Vec<(u64, Result<String, CliError>)> = seeds.par_iter().map(|&s| (s, one(s))).collect();
    let mut first_err = None;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (seed, r) in results {
        match r {
            Ok(line) => {
                let _ = writeln!(out, "{line}");
            }
            Err(e) => {
                eprintln!("seed {seed}: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<(), CliError> {
    match cli.command {
        Command::Taint(a) => cmd_taint(&a, argv),
        Command::Learn(a) => match a.seeds.seeds.clone() {
            None => {
                let line = cmd_learn(&a, None, &argv)?;
                println!("{line}");
                Ok(())
            }
            Some(range) => {
                let seeds = parse_seed_range(&range)?;
                let mut outs = vec![a.out.as_path()];
                outs.extend(a.stats.as_deref());
                outs.extend(a.trace.as_deref());
                require_placeholder(&outs)?;
                sweep(&seeds, |s| cmd_learn(&a, Some(s), &argv))
            }
        },
        Command::Localize(a) => cmd_localize(&a, argv),
        Command::Repair(a) => match a.seeds.seeds.clone() {
            None => {
                let line = cmd_repair(&a, None, &argv)?;
                println!("{line}");
                Ok(())
            }
            Some(range) => {
                let seeds = parse_seed_range(&range)?;
                let mut outs = vec![a.out_patch.as_path(), a.out_log.as_path()];
                outs.extend(a.summary.as_deref());
                require_placeholder(&outs)?;
                sweep(&seeds, |s| cmd_repair(&a, Some(s), &argv))
            }
        },
    }
}

pub fn cmd_taint(a: &TaintArgs, argv: Vec<String>) -> Result<(), CliError> {
    let (_, program, bytes) = read_program(&a.program)?;
    let report = taint_analyze(&program, &a.source, &a.sink)?;
    let json = report.to_json();
    match &a.json {
        None => print!("{json}"),
        Some(out) => {
            write_file(out, json.as_bytes())?;
            let mut m = RunManifest::new("taint", argv, None, None);
            m.input(&a.program, &bytes);
            m.output(out);
            m.write_beside(out)?;
            for e in &report.chain {
                println!("{:>4}  {}", e.line, e.text);
            }
        }
    }
    Ok(())
}

fn analyzed(path: &Path, source: &str, sink: &str) -> Result<(SourceFile, Program, Vec<u8>, TaintReport, InstrumentedProgram), CliError> {
    let (src, program, bytes) = read_program(path)?;
    let report = taint_analyze(&program, source, sink)?;
    let iprog = instrument(&program, &report).map_err(|e| CliError::Parse(e.to_string()))?;
    Ok((src, program, bytes, report, iprog))
}

#[derive(Serialize)]
struct LearnSummary<'a> {
    program: String,
    env: &'a str,
    seed: u64,
    #[serde(flatten)]
    stats: &'a LearnStats,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    episode: usize,
    #[serde(flatten)]
    event: &'a HookEvent,
}

/// One learning run; returns the one-line summary.
pub fn cmd_learn(a: &LearnArgs, sweep_seed: Option<u64>, argv: &[String]) -> Result<String, CliError> {
    let (_, _, bytes, _, iprog) = analyzed(&a.program, &a.source, &a.sink)?;
    let mut m = RunManifest::new("learn", argv.to_vec(), a.config.as_deref(), None);
    m.input(&a.program, &bytes);
    let mut config = load_config(a.config.as_deref(), &mut m)?;
    let seed = match sweep_seed {
        Some(s) => s,
        None => resolve_seed(a.seeds.seed, &config)?,
    };
    m.seed = Some(seed);
    config = config.with_seed(seed);
    if let Some(e) = a.episodes {
        config.rl.episodes = e;
    }
    let world = config.world.for_env(a.env.into());

    let mut trace_text = a.trace.as_ref().map(|_| String::new());
    let (table, stats) = learn_observed(&iprog, &world, &config.rl, &mut |e, t| {
        if let Some(buf) = trace_text.as_mut() {
            for ev in &t.events {
                buf.push_str(&serde_json::to_string(&TraceLine { episode: e, event: ev }).expect("event serializes"));
                buf.push('\n');
            }
        }
    })
    .map_err(|e| CliError::Other(e.to_string()))?;

    let out = seeded_path(&a.out, seed);
    let csv = table.to_csv_string().map_err(|e| CliError::Other(e.to_string()))?;
    write_file(&out, csv.as_bytes())?;
    m.output(&out);
    let stats_path = seeded_path(&a.stats.clone().unwrap_or_else(|| with_suffix(&a.out, ".stats.json")), seed);
    let env = match a.env {
        EnvArg::Offline => "offline",
        EnvArg::Online => "online",
    };
    let summary = LearnSummary {
        program: a.program.display().to_string(),
        env,
        seed,
        stats: &stats,
    };
    write_file(&stats_path, to_json(&summary).as_bytes())?;
    m.output(&stats_path);
    if let (Some(p), Some(text)) = (&a.trace, &trace_text) {
        let p = seeded_path(p, seed);
        write_file(&p, text.as_bytes())?;
        m.output(&p);
    }
    m.write_beside(&out)?;

    let line = format!(
        "seed {seed}: env {env} episodes {} success_rate {:.4} converged {}",
        stats.episodes,
        stats.success_rate,
        stats.converged.map_or("n/a".to_string(), |c| c.to_string())
    );
    if a.require_converged && stats.converged != Some(true) {
        return Err(CliError::NotConverged(format!("seed {seed}: utility table did not converge")));
    }
    Ok(line)
}

fn load_table(path: &Path, m: &mut RunManifest) -> Result<UtilityTable, CliError> {
    let bytes = read_file(path)?;
    m.input(path, &bytes);
    UtilityTable::load_csv(bytes.as_slice()).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

pub fn cmd_localize(a: &LocalizeArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut m = RunManifest::new("localize", argv, None, None);
    let q_off = load_table(&a.offline, &mut m)?;
    let q_on = load_table(&a.online, &mut m)?;
    let program = match &a.program {
        Some(p) => {
            let (_, program, bytes) = read_program(p)?;
            m.input(p, &bytes);
            Some(program)
        }
        None => None,
    };
    let text_of = |line: usize| {
        program
            .as_ref()
            .and_then(|p| p.find_line(line))
            .map(statement_text)
            .unwrap_or_default()
    };
    let window = a.window.unwrap_or_else(|| default_window(q_off.bins));
    let report = localize(&q_off, &q_on, window, &text_of)?;
    let json = report.to_json();
    match &a.out {
        None => print!("{json}"),
        Some(out) => {
            write_file(out, json.as_bytes())?;
            m.output(out);
            m.write_beside(out)?;
            println!("culprit line {}: {}", report.culprit_line, report.culprit_text);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RepairSummary {
    seed: u64,
    culprit_line: usize,
    culprit_text: String,
    selected_arm: usize,
    original_value: f64,
    value: f64,
    factor: f64,
    guard: String,
    search_episodes: usize,
    eval_episodes: usize,
    search_final_atr: Option<f64>,
    eval_atr: f64,
    unrepaired_online_atr: f64,
    offline_atr: f64,
    arms: Vec<ArmSummary>,
    eval_atr_series: Vec<f64>,
}

#[derive(Serialize)]
struct ArmSummary {
    id: usize,
    value: f64,
    pulls: usize,
    mean: f64,
}

/// One repair run; returns the one-line summary.
pub fn cmd_repair(a: &RepairArgs, sweep_seed: Option<u64>, argv: &[String]) -> Result<String, CliError> {
    let (_, program, bytes) = read_program(&a.program)?;
    let mut m = RunManifest::new("repair", argv.to_vec(), a.config.as_deref(), None);
    m.input(&a.program, &bytes);
    let report_bytes = read_file(&a.report)?;
    m.input(&a.report, &report_bytes);
    let report = LocalizationReport::from_json(&String::from_utf8_lossy(&report_bytes))
        .map_err(|e| CliError::Parse(format!("{}: {e}", a.report.display())))?;
    let mut config = load_config(a.config.as_deref(), &mut m)?;
    let seed = match sweep_seed {
        Some(s) => s,
        None => resolve_seed(a.seeds.seed, &config)?,
    };
    m.seed = Some(seed);
    config = config.with_seed(seed);
    if let Some(n) = a.search_episodes {
        config.repair.search_episodes = n;
    }
    if let Some(n) = a.eval_episodes {
        config.repair.eval_episodes = n;
    }
    let online = config.world.for_env(Environment::Online);
    let offline = config.world.for_env(Environment::Offline);

    let arms = generate_mutants(&program, report.culprit_line, &report.region, &config.world, &config.repair)?;
    let mut log = epsilon_greedy_search(&arms, &online, &config.repair)?;
    let log_path = seeded_path(&a.out_log, seed);
    let selection = select_and_validate(&mut log, &arms, &online, &config.repair);
    write_file(&log_path, log.to_csv_string().as_bytes())?;
    m.output(&log_path);
    let patch = match selection {
        Ok(p) => p,
        Err(e) => {
            m.write_beside(&log_path)?;
            return Err(e.into());
        }
    };

    let base = uninstrumented(&program).map_err(|e| CliError::Other(e.to_string()))?;
    let baseline = |world| -> Result<f64, CliError> {
        let r = episode_rewards(&base, world, eval_seed(&config.repair), config.repair.eval_episodes)
            .map_err(|e| CliError::Other(e.to_string()))?;
        Ok(atr(&r).last().copied().unwrap_or(0.0))
    };
    let unrepaired = baseline(&online)?;
    let offline_atr = baseline(&offline)?;

    let patch_path = seeded_path(&a.out_patch, seed);
    write_file(&patch_path, patch.source.as_bytes())?;
    m.output(&patch_path);
    let chosen = &arms[patch.arm];
    let summary = RepairSummary {
        seed,
        culprit_line: report.culprit_line,
        culprit_text: report.culprit_text.clone(),
        selected_arm: patch.arm,
        original_value: chosen.original,
        value: chosen.value,
        factor: chosen.factor,
        guard: chosen.guard.clone(),
        search_episodes: config.repair.search_episodes,
        eval_episodes: config.repair.eval_episodes,
        search_final_atr: log.final_atr(),
        eval_atr: patch.atr_eval,
        unrepaired_online_atr: unrepaired,
        offline_atr,
        arms: arms
            .iter()
            .zip(&log.arms)
            .map(|(arm, s): (_, &ArmStats)| ArmSummary {
                id: arm.id,
                value: arm.value,
                pulls: s.pulls,
                mean: s.mean(),
            })
            .collect(),
        eval_atr_series: patch.atr_series.clone(),
    };
    let summary_path = seeded_path(
        &a.summary.clone().unwrap_or_else(|| with_suffix(&a.out_patch, ".summary.json")),
        seed,
    );
    write_file(&summary_path, to_json(&summary).as_bytes())?;
    m.output(&summary_path);
    m.write_beside(&patch_path)?;
    Ok(format!(
        "seed {seed}: arm {} value {} eval_atr {} search_atr {} unrepaired {} offline {}",
        patch.arm,
        chosen.value,
        patch.atr_eval,
        log.final_atr().unwrap_or(0.0),
        unrepaired,
        offline_atr
    ))
}
