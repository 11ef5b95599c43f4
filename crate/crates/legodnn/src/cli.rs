//! Subcommands of the `legodnn` tool.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use legodnn_core::blockify::{self, BlockifyError};
use legodnn_core::latency::{estimate_latencies, LatencyObservation};
use legodnn_core::optimizer::{self, DnnRequest, ObjectiveMode, OptimizeError, ScalingRequest};
use legodnn_core::profile::{self, generate_synthetic, DnnProfile, Selection};
use legodnn_core::runtime::{self, DeviceModel, Load, Scenario, ScenarioTrace, Strategy, WorkloadConfig};
use legodnn_core::schedule::{self, jobs_from_profile, Policy};
use log::{debug, info};

use crate::format::{self, FormatError};
use crate::units::{parse_bytes, parse_duration_us, parse_seed_range, parse_selection};

/// Failure classes, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable input or malformed arguments: exit code 1.
    #[error("{0:#}")]
    Parse(anyhow::Error),
    /// Inputs that parse but break an invariant: exit code 2.
    #[error("{0:#}")]
    Validation(anyhow::Error),
    /// No selection satisfies the budgets: exit code 3.
    #[error("{0:#}")]
    Infeasible(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Infeasible(_) => 3,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Parse(e.into())
    }
}

fn invalid(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Validation(e.into())
}

fn io_error(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Parse(anyhow!("{}: {e}", path.display()))
}

impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::InfeasibleBudgets { .. } | OptimizeError::NodeLimit { .. } => {
                CliError::Infeasible(e.into())
            }
            other => CliError::Validation(other.into()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "legodnn",
    version,
    about = "Block-grained DNN scaling: block identification, descendant selection, exchange planning and workload simulation",
    after_help = "Exit codes: 0 ok, 1 parse error, 2 validation error, 3 infeasible budgets.\nLogging: set LEGODNN_LOG to off, info or debug."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a layer graph into blocks and write a partition document.
    Blockify(BlockifyArgs),
    /// Select one descendant per block for one or more models.
    Optimize(OptimizeArgs),
    /// Run the multi-app workload simulator.
    Simulate(SimulateArgs),
    /// Schedule descendant training jobs under a memory cap.
    Schedule(ScheduleArgs),
    /// Check profile, graph or jobs documents.
    Validate(ValidateArgs),
    /// Write a synthetic profile, or the training jobs of a profile.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct BlockifyArgs {
    /// Layer graph document (`legodnn-graph/1`).
    pub graph: PathBuf,
    /// Merge elementary blocks down to this many; all elementary blocks
    /// when absent.
    #[arg(long)]
    pub num_blocks: Option<usize>,
    /// Verify the partition against the graph's edges; violations exit 2.
    #[arg(long)]
    pub check: bool,
    /// Output path; standard output when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    MaxAccuracy,
    MinLatency,
    Balanced,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Profile documents (`legodnn-profile/1`), one per model.
    #[arg(required = true)]
    pub profiles: Vec<PathBuf>,
    /// Latency budget `t^max` (e.g. 100ms); give once for all models or
    /// once per model.
    #[arg(long, value_parser = parse_duration_us, required = true)]
    pub latency_max: Vec<f64>,
    /// Shared memory budget `s^max` (bytes, or e.g. 600MB).
    #[arg(long, value_parser = parse_bytes)]
    pub memory_max: u64,
    /// Measured latency of each model's deployed blocks (e.g. 40ms); split
    /// across blocks in proportion to size, then re-estimated for every
    /// descendant. Give once for all models or once per model.
    #[arg(long, value_parser = parse_duration_us, required = true)]
    pub measured_latency: Vec<f64>,
    /// Deployed selection per model (e.g. 0,2,1); the original model when
    /// absent. Give once per model.
    #[arg(long, value_parser = parse_selection)]
    pub current: Vec<Vec<usize>>,
    /// Early-stopping gap; 0 proves optimality.
    #[arg(long, default_value_t = optimizer::DEFAULT_SIGMA)]
    pub sigma: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::MaxAccuracy)]
    pub mode: ModeArg,
    /// Total accuracy-loss budget `A^max` in min-latency mode.
    #[arg(long)]
    pub accuracy_max: Option<f64>,
    /// Latency weight in balanced mode.
    #[arg(long, default_value_t = optimizer::DEFAULT_BALANCE_LAMBDA)]
    pub lambda: f64,
    /// Stop after this many branch-and-bound nodes and report the open gap.
    #[arg(long)]
    pub node_limit: Option<usize>,
    /// Cross-check against exhaustive enumeration; disagreement exits 2.
    #[arg(long)]
    pub oracle: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LoadArg {
    Small,
    Medium,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    BlockGrained,
    WholeModel,
    Both,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = LoadArg::Medium)]
    pub load: LoadArg,
    #[arg(long, value_enum, default_value_t = ModeArg::MaxAccuracy)]
    pub scenario: ModeArg,
    /// Simulated seconds.
    #[arg(long, default_value_t = 1800)]
    pub duration: u64,
    #[arg(long, default_value_t = 0, conflicts_with = "seeds")]
    pub seed: u64,
    /// Inclusive seed range `a..b`, simulated in parallel.
    #[arg(long, value_parser = parse_seed_range)]
    pub seeds: Option<(u64, u64)>,
    #[arg(long, value_enum, default_value_t = StrategyArg::Both)]
    pub strategy: StrategyArg,
    /// Whole-model variants per app for the baseline.
    #[arg(long, default_value_t = 5)]
    pub variants: usize,
    /// Device memory for models (bytes, or e.g. 600MB).
    #[arg(long, value_parser = parse_bytes)]
    pub memory: Option<u64>,
    /// Per-app latency budget (e.g. 100ms).
    #[arg(long, value_parser = parse_duration_us)]
    pub latency_max: Option<f64>,
    #[arg(long, default_value_t = optimizer::DEFAULT_SIGMA)]
    pub sigma: f64,
    /// Branch-and-bound node limit per rescale; 0 removes the limit.
    #[arg(long, default_value_t = runtime::DEFAULT_NODE_LIMIT)]
    pub node_limit: usize,
    /// Directory for traces (JSON lines), per-app CSV series and the
    /// summary document.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Print the summary document instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    SmallestFirst,
    LargestFirst,
    Random,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Jobs document (`legodnn-jobs/1`).
    pub jobs: PathBuf,
    /// GPU memory available for training (bytes, or e.g. 8GB).
    #[arg(long, value_parser = parse_bytes)]
    pub capacity: u64,
    #[arg(long, value_enum, default_value_t = PolicyArg::SmallestFirst)]
    pub policy: PolicyArg,
    /// Seed of the random policy.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also print a text Gantt chart to standard error.
    #[arg(long)]
    pub gantt: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    pub blocks: usize,
    #[arg(long, default_value_t = 5)]
    pub descendants: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write one of the simulator's built-in app profiles instead.
    #[arg(long, conflicts_with_all = ["blocks", "descendants", "seed"])]
    pub builtin: Option<String>,
    /// Emit the training jobs of this profile instead of a profile.
    #[arg(long, conflicts_with_all = ["blocks", "descendants", "seed", "builtin"])]
    pub jobs_from: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Blockify(a) => cmd_blockify(&a),
        Command::Optimize(a) => cmd_optimize(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Schedule(a) => cmd_schedule(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(path) => fs::write(path, text).map_err(io_error(path)),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Parse(e.into()))
        }
    }
}

fn blockify_error(e: BlockifyError) -> CliError {
    match e {
        BlockifyError::Empty
        | BlockifyError::DuplicateId(_)
        | BlockifyError::UnknownLayer(_)
        | BlockifyError::EdgeOutOfRange(_) => CliError::Parse(e.into()),
        _ => invalid(e),
    }
}

pub fn cmd_blockify(args: &BlockifyArgs) -> Result<(), CliError> {
    let doc: format::GraphDoc = format::read_doc(&args.graph, format::GRAPH_FORMAT)?;
    let graph = doc.to_graph().map_err(blockify_error)?;
    let elementary = blockify::elementary_blocks(&graph).map_err(blockify_error)?;
    info!("{} elementary blocks", elementary.blocks.len());
    let partition = match args.num_blocks {
        Some(n) => blockify::merge_blocks(&elementary, n).map_err(blockify_error)?,
        None => elementary,
    };
    if args.check {
        blockify::check_partition(&graph, &partition)
            .map_err(|v| invalid(anyhow!("partition check failed: {v}")))?;
        info!("partition check passed");
    }
    emit(
        args.output.as_deref(),
        &format::to_pretty(&format::PartitionDoc::new(&graph, &partition)),
    )
}

/// One value for every model, or one per model.
fn per_model<T: Copy>(values: &[T], models: usize, flag: &str) -> Result<Vec<T>, CliError> {
    match values.len() {
        1 => Ok(vec![values[0]; models]),
        n if n == models => Ok(values.to_vec()),
        n => Err(CliError::Parse(anyhow!(
            "--{flag} given {n} times for {models} models; give it once or once per model"
        ))),
    }
}

/// Latencies of every descendant from one measurement of the deployed
/// blocks, split in proportion to their sizes.
pub fn estimated_latencies(
    profile: &DnnProfile,
    deployed: &Selection,
    measured_us: f64,
) -> Result<Vec<Vec<f64>>, CliError> {
    let sizes: Vec<u64> = profile
        .blocks
        .iter()
        .zip(deployed.iter())
        .map(|(b, &j)| b.descendants[j].size_bytes)
        .collect();
    let total: u64 = sizes.iter().sum();
    profile
        .blocks
        .iter()
        .zip(deployed.iter())
        .zip(&sizes)
        .map(|((block, &j), &size)| {
            let observation = LatencyObservation {
                block_id: block.block_id,
                descendant_index: j,
                measured_latency_us: measured_us * size as f64 / total as f64,
            };
            estimate_latencies(&observation, block).map_err(invalid)
        })
        .collect()
}

pub fn build_request(args: &OptimizeArgs) -> Result<ScalingRequest, CliError> {
    let profiles = args
        .profiles
        .iter()
        .map(|p| format::read_profile(p))
        .collect::<Result<Vec<_>, _>>()?;
    for (p, path) in profiles.iter().zip(&args.profiles) {
        profile::validate_profile(p).map_err(|e| invalid(anyhow!("{}: {e}", path.display())))?;
    }
    let m = profiles.len();
    let budgets = per_model(&args.latency_max, m, "latency-max")?;
    let measured = per_model(&args.measured_latency, m, "measured-latency")?;
    if !args.current.is_empty() && args.current.len() != m {
        return Err(CliError::Parse(anyhow!(
            "--current given {} times for {m} models",
            args.current.len()
        )));
    }
    let mode = match args.mode {
        ModeArg::MaxAccuracy => ObjectiveMode::MaxAccuracy,
        ModeArg::MinLatency => ObjectiveMode::MinLatency {
            accuracy_budget: args
                .accuracy_max
                .ok_or_else(|| CliError::Parse(anyhow!("--mode min-latency needs --accuracy-max")))?,
        },
        ModeArg::Balanced => ObjectiveMode::Balanced { lambda: args.lambda },
    };
    let mut dnns = Vec::with_capacity(m);
    for (a, profile) in profiles.into_iter().enumerate() {
        let current = args.current.get(a).map(|c| Selection::new(c.clone()));
        if let Some(c) = &current {
            profile
                .check_selection(c)
                .map_err(|e| invalid(anyhow!("--current for {}: {e}", profile.dnn_id)))?;
        }
        let deployed = current.clone().unwrap_or_else(|| profile.original_selection());
        let latencies = estimated_latencies(&profile, &deployed, measured[a])?;
        let mut dnn = DnnRequest::new(profile, budgets[a], latencies);
        dnn.current = current;
        dnns.push(dnn);
    }
    let mut request = ScalingRequest::new(dnns, args.memory_max, mode).with_sigma(args.sigma);
    request.node_limit = args.node_limit;
    request.validate()?;
    Ok(request)
}

/// [`optimizer::solve`] with its wall-clock time recorded.
pub fn timed_solve(request: &ScalingRequest) -> Result<optimizer::ScalingDecision, OptimizeError> {
    let start = std::time::Instant::now();
    let mut decision = optimizer::solve(request)?;
    decision.solve_time = Some(start.elapsed());
    Ok(decision)
}

pub fn cmd_optimize(args: &OptimizeArgs) -> Result<(), CliError> {
    let request = build_request(args)?;
    let decision = timed_solve(&request)?;
    info!(
        "objective {} gap {} after {} nodes",
        decision.objective_value, decision.bound_gap, decision.nodes_explored
    );
    optimizer::verify_decision(&request, &decision.selections)
        .map_err(|e| invalid(anyhow!("decision failed re-validation: {e}")))?;
    if args.oracle {
        let exact = optimizer::oracle_solve(&request)?;
        let gap = (decision.objective_value - exact.objective_value).abs();
        let agrees = if request.sigma == 0.0 { gap == 0.0 } else { gap <= request.sigma };
        if !agrees {
            return Err(invalid(anyhow!(
                "oracle disagrees: solve {} vs oracle {}",
                decision.objective_value,
                exact.objective_value
            )));
        }
        info!("oracle objective {}", exact.objective_value);
    }
    let doc = format::DecisionDoc::new(&request, &decision);
    for d in &doc.dnns {
        eprintln!(
            "{}: selection {:?}, loss {:.6}, latency {:.1} us, size {} B",
            d.dnn_id, d.selection, d.accuracy_loss, d.latency_us, d.model_size_bytes
        );
    }
    eprintln!(
        "objective {} (gap {}, {} nodes)",
        doc.objective_value, doc.bound_gap, doc.nodes_explored
    );
    emit(args.output.as_deref(), &format::to_pretty(&doc))
}

fn scenario_of(mode: ModeArg) -> Scenario {
    match mode {
        ModeArg::MaxAccuracy => Scenario::MaxAccuracy,
        ModeArg::MinLatency => Scenario::MinLatency,
        ModeArg::Balanced => Scenario::Balanced,
    }
}

fn load_of(load: LoadArg) -> Load {
    match load {
        LoadArg::Small => Load::Small,
        LoadArg::Medium => Load::Medium,
        LoadArg::Large => Load::Large,
    }
}

/// Runs every (seed, strategy) pair, one thread per seed.
pub fn simulate_batch(
    base: &WorkloadConfig,
    device: &DeviceModel,
    seeds: (u64, u64),
    strategies: &[Strategy],
) -> Result<Vec<ScenarioTrace>, CliError> {
    let seeds: Vec<u64> = (seeds.0..=seeds.1).collect();
    let width = thread::available_parallelism().map_or(1, |n| n.get());
    let mut traces = Vec::with_capacity(seeds.len() * strategies.len());
    for chunk in seeds.chunks(width) {
        let results: Vec<Result<Vec<ScenarioTrace>, runtime::SimError>> = thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| {
                    scope.spawn(move || {
                        let workload = WorkloadConfig {
                            seed,
                            ..base.clone()
                        };
                        strategies
                            .iter()
                            .map(|&s| {
                                debug!("simulating seed {seed} {}", s.name());
                                runtime::run(&workload, device, s)
                            })
                            .collect()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("simulation thread panicked"))
                .collect()
        });
        for r in results {
            traces.extend(r.map_err(invalid)?);
        }
    }
    Ok(traces)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let catalog = runtime::builtin_catalog();
    let names: Vec<String> = catalog.iter().map(|a| a.name.clone()).collect();
    let mut workload = WorkloadConfig::new(load_of(args.load), catalog, args.seed);
    workload.duration_s = args.duration;
    let mut device = DeviceModel::new(scenario_of(args.scenario));
    if let Some(m) = args.memory {
        device.total_memory_bytes = m;
    }
    if let Some(t) = args.latency_max {
        device.latency_budget_us = t;
    }
    device.sigma = args.sigma;
    device.node_limit = (args.node_limit > 0).then_some(args.node_limit);
    let whole = Strategy::WholeModel {
        variants: args.variants,
    };
    let strategies: Vec<Strategy> = match args.strategy {
        StrategyArg::BlockGrained => vec![Strategy::BlockGrained],
        StrategyArg::WholeModel => vec![whole],
        StrategyArg::Both => vec![Strategy::BlockGrained, whole],
    };
    let seeds = args.seeds.unwrap_or((args.seed, args.seed));
    let traces = simulate_batch(&workload, &device, seeds, &strategies)?;

    let mut summary = format::SummaryDoc {
        format: format::SUMMARY_FORMAT.into(),
        runs: Vec::new(),
    };
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    for trace in &traces {
        let s = runtime::summarize(trace, &device.exchange_costs);
        summary.runs.push(format::RunSummaryDoc::new(trace, &s));
        if let Some(dir) = &args.out_dir {
            let stem = format!("{}_seed{}", format::strategy_label(trace.strategy), trace.seed);
            let path = dir.join(format!("trace_{stem}.jsonl"));
            let file = File::create(&path).map_err(io_error(&path))?;
            format::write_jsonl(BufWriter::new(file), &format::trace_records(trace, &names))
                .map_err(io_error(&path))?;
            let path = dir.join(format!("series_{stem}.csv"));
            let file = File::create(&path).map_err(io_error(&path))?;
            format::write_csv(BufWriter::new(file), trace).map_err(io_error(&path))?;
        }
    }
    if let Some(dir) = &args.out_dir {
        format::write_doc(&dir.join("summary.json"), &summary)?;
    }
    if args.json {
        emit(None, &format::to_pretty(&summary))
    } else {
        emit(None, &summary_table(&summary))
    }
}

/// Plain-text table with one row per run.
pub fn summary_table(summary: &format::SummaryDoc) -> String {
    let mut out = format!(
        "{:<15} {:>5} {:>9} {:>11} {:>11} {:>11} {:>9} {:>13} {:>9}\n",
        "strategy", "seed", "loss_%", "mean_ms", "p90_ms", "max_ms", "infeas", "exchange_MB", "joules"
    );
    for r in &summary.runs {
        out.push_str(&format!(
            "{:<15} {:>5} {:>9.3} {:>11.2} {:>11.2} {:>11.2} {:>9} {:>13.1} {:>9.2}\n",
            r.strategy,
            r.seed,
            r.mean_accuracy_loss_pct,
            r.mean_latency_us / 1e3,
            r.p90_latency_us / 1e3,
            r.max_latency_us / 1e3,
            r.infeasible,
            r.exchange_bytes as f64 / 1e6,
            r.energy_joules
        ));
    }
    out
}

pub fn cmd_schedule(args: &ScheduleArgs) -> Result<(), CliError> {
    let doc: format::JobsDoc = format::read_doc(&args.jobs, format::JOBS_FORMAT)?;
    let jobs = doc.to_jobs();
    let policy = match args.policy {
        PolicyArg::SmallestFirst => Policy::SmallestFirst,
        PolicyArg::LargestFirst => Policy::LargestFirst,
        PolicyArg::Random => Policy::Random { seed: args.seed },
    };
    let result = schedule::schedule(&jobs, args.capacity, policy).map_err(invalid)?;
    info!("makespan {} with {} jobs", result.makespan, jobs.len());
    if args.gantt {
        eprint!("{}", gantt(&jobs, &result));
    }
    emit(
        args.output.as_deref(),
        &format::to_pretty(&format::ScheduleDoc::new(&jobs, args.capacity, &result)),
    )
}

/// One row per job, scaled to at most 60 columns.
pub fn gantt(jobs: &[schedule::TrainJob], result: &schedule::ScheduleResult) -> String {
    let width = 60u64;
    let span = result.makespan.max(1);
    let col = |t: u64| (t * width).div_ceil(span) as usize;
    let mut out = format!("{} makespan {}\n", result.policy, result.makespan);
    for s in &result.timeline {
        let j = &jobs[s.job];
        let (a, b) = (col(s.start), col(s.end).max(col(s.start) + 1));
        out.push_str(&format!(
            "b{:<3} d{:<3} |{}{}{}|\n",
            j.block_id,
            j.descendant_index,
            " ".repeat(a),
            "#".repeat(b - a),
            " ".repeat((width as usize).saturating_sub(b))
        ));
    }
    out
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<(), CliError> {
    let mut failures = Vec::new();
    for path in &args.files {
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        let tag: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Parse(anyhow!("{}: {e}", path.display())))?;
        let kind = tag.get("format").and_then(|f| f.as_str()).unwrap_or_default();
        match kind {
            format::PROFILE_FORMAT => {
                let doc: format::ProfileDoc = format::from_str(&text, path, format::PROFILE_FORMAT)?;
                let p = DnnProfile::from(&doc);
                match profile::validate_profile(&p) {
                    Ok(()) => println!(
                        "{}: ok, {} blocks, scaling space {}",
                        path.display(),
                        p.blocks.len(),
                        profile::scaling_space_size(&p)
                    ),
                    Err(errors) => {
                        for v in &errors.0 {
                            eprintln!("{}: {v}", path.display());
                        }
                        failures.push(path.clone());
                    }
                }
            }
            format::GRAPH_FORMAT => {
                let doc: format::GraphDoc = format::from_str(&text, path, format::GRAPH_FORMAT)?;
                let checked = doc.to_graph().and_then(|g| {
                    let p = blockify::elementary_blocks(&g)?;
                    Ok((g, p))
                });
                match checked {
                    Ok((g, p)) => {
                        match blockify::check_partition(&g, &p) {
                            Ok(()) => println!(
                                "{}: ok, {} layers, {} elementary blocks",
                                path.display(),
                                g.layers().len(),
                                p.blocks.len()
                            ),
                            Err(v) => {
                                eprintln!("{}: {v}", path.display());
                                failures.push(path.clone());
                            }
                        }
                    }
                    Err(e) => {
                        eprintln!("{}: {e}", path.display());
                        failures.push(path.clone());
                    }
                }
            }
            format::JOBS_FORMAT => {
                let doc: format::JobsDoc = format::from_str(&text, path, format::JOBS_FORMAT)?;
                let bad: Vec<usize> = doc
                    .to_jobs()
                    .iter()
                    .enumerate()
                    .filter(|(_, j)| j.memory_demand == 0 || j.duration == 0)
                    .map(|(k, _)| k)
                    .collect();
                if bad.is_empty() {
                    println!("{}: ok, {} jobs", path.display(), doc.jobs.len());
                } else {
                    eprintln!("{}: jobs {bad:?} have zero demand or duration", path.display());
                    failures.push(path.clone());
                }
            }
            other => {
                return Err(CliError::Parse(anyhow!(
                    "{}: unsupported format {other:?}",
                    path.display()
                )))
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(invalid(anyhow!("{} of {} files failed validation", failures.len(), args.files.len())))
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    if let Some(path) = &args.jobs_from {
        let p = format::read_profile(path)?;
        profile::validate_profile(&p).map_err(|e| invalid(anyhow!("{}: {e}", path.display())))?;
        let doc = format::JobsDoc::new(&jobs_from_profile(&p));
        return emit(args.output.as_deref(), &format::to_pretty(&doc));
    }
    let p = match &args.builtin {
        Some(name) => runtime::builtin_catalog()
            .into_iter()
            .find(|a| &a.name == name)
            .map(|a| a.profile)
            .with_context(|| {
                let names: Vec<String> = runtime::builtin_catalog().into_iter().map(|a| a.name).collect();
                format!("unknown built-in profile {name:?}; available: {}", names.join(", "))
            })
            .map_err(CliError::Parse)?,
        None => {
            if args.blocks == 0 {
                return Err(CliError::Parse(anyhow!("--blocks must be at least 1")));
            }
            generate_synthetic(args.blocks, args.descendants, args.seed)
        }
    };
    emit(
        args.output.as_deref(),
        &format::to_pretty(&format::ProfileDoc::from(&p)),
    )
}
