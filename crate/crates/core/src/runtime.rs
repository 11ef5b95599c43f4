//! Discrete-event simulation of several models sharing one device.
//!
//! Every `event_interval_s` seconds an app arrives (with `event_probability`)
//! or a running app is killed, within the configured load range. After every
//! population change all running apps are rescaled together: the
//! block-grained strategy solves the joint descendant selection, the
//! whole-model strategy picks one of `k` fixed compressed models per app. The
//! processor is time-shared, so every app's latency is multiplied by the
//! number of running apps.
//!
//! Each rescale of an app that was already running is charged under three
//! exchange accountings (block swaps, whole-model reload, nested pages) so the
//! same decision sequence can be compared across them.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exchange::{self, ExchangeCostModel};
use crate::latency::{estimate_latencies, LatencyError, LatencyObservation};
use crate::optimizer::{
    self, Constraint, DnnRequest, ObjectiveMode, OptimizeError, ScalingRequest, DEFAULT_SIGMA,
};
use crate::profile::{BlockProfile, DnnProfile, Selection};

const MS: f64 = 1_000.0;
const MB: u64 = 1_000_000;

/// Default node limit of a rescaling solve.
pub const DEFAULT_NODE_LIMIT: usize = 64;

/// One deployable model in the app catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct AppSpec {
    pub name: String,
    pub profile: DnnProfile,
    /// Accuracy of the uncompressed model.
    pub original_accuracy: f64,
    /// Lowest acceptable accuracy in the min-latency scenario.
    pub accuracy_floor: f64,
    /// Latency of each original block on an idle device, in microseconds.
    pub block_latency_us: Vec<f64>,
}

impl AppSpec {
    /// Per-block, per-descendant latency on an idle device.
    pub fn idle_latencies(&self) -> Vec<Vec<f64>> {
        self.profile
            .blocks
            .iter()
            .zip(&self.block_latency_us)
            .map(|(b, &t)| crate::latency::latencies_from_original(t, b))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Load {
    Small,
    Medium,
    Large,
}

impl Load {
    pub fn range(self) -> (usize, usize) {
        match self {
            Load::Small => (1, 6),
            Load::Medium => (2, 8),
            Load::Large => (3, 10),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Load::Small => "small",
            Load::Medium => "medium",
            Load::Large => "large",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadConfig {
    pub duration_s: u64,
    pub event_interval_s: u64,
    /// Probability that an event is an arrival rather than a kill.
    pub event_probability: f64,
    pub load_range: (usize, usize),
    pub catalog: Vec<AppSpec>,
    pub seed: u64,
}

impl WorkloadConfig {
    pub fn new(load: Load, catalog: Vec<AppSpec>, seed: u64) -> Self {
        WorkloadConfig {
            duration_s: 1800,
            event_interval_s: 20,
            event_probability: 0.6,
            load_range: load.range(),
            catalog,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    MaxAccuracy,
    MinLatency,
    Balanced,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::MaxAccuracy => "max_accuracy",
            Scenario::MinLatency => "min_latency",
            Scenario::Balanced => "balanced",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Contention {
    /// Latency multiplied by the number of running apps.
    PerApp,
    None,
}

impl Contention {
    fn multiplier(self, apps: usize) -> f64 {
        match self {
            Contention::PerApp => apps.max(1) as f64,
            Contention::None => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceModel {
    pub total_memory_bytes: u64,
    /// Per-app latency budget, in microseconds.
    pub latency_budget_us: f64,
    pub scenario: Scenario,
    pub contention: Contention,
    pub sigma: f64,
    /// Node limit of each rescaling solve; the gap left open is recorded.
    pub node_limit: Option<usize>,
    pub exchange_costs: ExchangeCostModel,
}

impl DeviceModel {
    /// A device sized for the built-in catalog: 600 MB of model memory and
    /// a 100 ms budget per app.
    pub fn new(scenario: Scenario) -> Self {
        DeviceModel {
            total_memory_bytes: 600 * MB,
            latency_budget_us: 100.0 * MS,
            scenario,
            contention: Contention::PerApp,
            sigma: DEFAULT_SIGMA,
            node_limit: Some(DEFAULT_NODE_LIMIT),
            exchange_costs: ExchangeCostModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    BlockGrained,
    /// Each app picks one of `variants` whole models compressed uniformly
    /// across its blocks.
    WholeModel { variants: usize },
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::BlockGrained => "block_grained",
            Strategy::WholeModel { .. } => "whole_model",
        }
    }
}

/// Bytes moved by one rescale, or summed over a run, under each accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExchangeTally {
    /// Only changed blocks paged in and out.
    pub block_bytes: u64,
    /// Incoming block bytes, a subset of `block_bytes`.
    pub block_bytes_in: u64,
    /// Whole models paged out and in.
    pub whole_model_bytes: u64,
    /// Changed blocks plus a per-swap reconstruction charge.
    pub nested_bytes: u64,
    pub swaps: u64,
    /// Apps whose selection changed.
    pub model_switches: u64,
}

impl ExchangeTally {
    fn add(&mut self, other: &ExchangeTally) {
        self.block_bytes += other.block_bytes;
        self.block_bytes_in += other.block_bytes_in;
        self.whole_model_bytes += other.whole_model_bytes;
        self.nested_bytes += other.nested_bytes;
        self.swaps += other.swaps;
        self.model_switches += other.model_switches;
    }

    /// Bytes under the strategy's own exchange mechanism.
    pub fn native_bytes(&self, strategy: Strategy) -> u64 {
        match strategy {
            Strategy::BlockGrained => self.block_bytes,
            Strategy::WholeModel { .. } => self.whole_model_bytes,
        }
    }
}

/// One running app after a rescale.
#[derive(Debug, Clone, PartialEq)]
pub struct AppState {
    pub app: usize,
    /// Index into the catalog.
    pub model: usize,
    pub selection: Selection,
    pub latency_us: f64,
    pub accuracy_loss: f64,
    /// `accuracy_loss` relative to the model's original accuracy.
    pub relative_loss: f64,
    pub model_size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Arrive { app: usize, model: usize },
    Kill { app: usize },
    /// New selections for every running app.
    Rescale {
        apps: Vec<AppState>,
        objective: f64,
        bound_gap: f64,
        nodes: usize,
        memory_used_bytes: u64,
        exchange: ExchangeTally,
    },
    /// No selection met the budgets, or the node limit ran out before one
    /// was found (`constraint` is `None`); every app fell back to its most
    /// compressed model.
    Infeasible {
        constraint: Option<Constraint>,
        apps: Vec<AppState>,
        memory_used_bytes: u64,
        exchange: ExchangeTally,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time_s: u64,
    pub kind: EventKind,
}

impl Event {
    /// Running apps as of this event, if it is a rescale of either kind.
    pub fn apps(&self) -> Option<&[AppState]> {
        match &self.kind {
            EventKind::Rescale { apps, .. } | EventKind::Infeasible { apps, .. } => Some(apps),
            _ => None,
        }
    }

    pub fn exchange(&self) -> Option<&ExchangeTally> {
        match &self.kind {
            EventKind::Rescale { exchange, .. } | EventKind::Infeasible { exchange, .. } => {
                Some(exchange)
            }
            _ => None,
        }
    }

    pub fn memory_used_bytes(&self) -> Option<u64> {
        match self.kind {
            EventKind::Rescale {
                memory_used_bytes, ..
            }
            | EventKind::Infeasible {
                memory_used_bytes, ..
            } => Some(memory_used_bytes),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTrace {
    pub strategy: Strategy,
    pub scenario: Scenario,
    pub duration_s: u64,
    pub load_range: (usize, usize),
    pub seed: u64,
    pub events: Vec<Event>,
    pub totals: ExchangeTally,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("app catalog is empty")]
    EmptyCatalog,
    #[error("invalid workload: {0}")]
    InvalidWorkload(&'static str),
    #[error("catalog entry {index}: {reason}")]
    InvalidApp { index: usize, reason: &'static str },
    #[error("whole-model strategy needs at least 2 variants")]
    TooFewVariants,
    #[error(transparent)]
    Latency(#[from] LatencyError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
}

struct Running {
    app: usize,
    model: usize,
    selection: Selection,
}

/// Runs one simulation. Deterministic for a fixed configuration.
pub fn run(
    workload: &WorkloadConfig,
    device: &DeviceModel,
    strategy: Strategy,
) -> Result<ScenarioTrace, SimError> {
    check_inputs(workload, strategy)?;
    let catalog = &workload.catalog;
    let idle: Vec<Vec<Vec<f64>>> = catalog.iter().map(AppSpec::idle_latencies).collect();
    let variants: Vec<Vec<Selection>> = match strategy {
        Strategy::BlockGrained => Vec::new(),
        Strategy::WholeModel { variants } => catalog
            .iter()
            .map(|spec| uniform_variants(&spec.profile, variants))
            .collect(),
    };
    let (min_apps, max_apps) = workload.load_range;
    let mut rng = ChaCha8Rng::seed_from_u64(workload.seed);
    let mut running: Vec<Running> = Vec::new();
    let mut next_app = 0;
    let mut events = Vec::new();
    let mut totals = ExchangeTally::default();

    let mut arrive = |running: &mut Vec<Running>, rng: &mut ChaCha8Rng, events: &mut Vec<Event>, t| {
        let model = rng.random_range(0..catalog.len());
        let spec = &catalog[model];
        running.push(Running {
            app: next_app,
            model,
            selection: spec.profile.original_selection(),
        });
        events.push(Event {
            time_s: t,
            kind: EventKind::Arrive {
                app: next_app,
                model,
            },
        });
        next_app += 1;
    };

    for _ in 0..min_apps {
        arrive(&mut running, &mut rng, &mut events, 0);
    }
    let mut previous: Vec<usize> = Vec::new();
    let mut time = 0;
    let mut changed = true;
    loop {
        if changed {
            let event = rescale(
                workload,
                device,
                strategy,
                &idle,
                &variants,
                &mut running,
                &previous,
                time,
            )?;
            if let Some(tally) = event.exchange() {
                totals.add(tally);
            }
            events.push(event);
            previous = running.iter().map(|r| r.app).collect();
        }
        time += workload.event_interval_s;
        if time >= workload.duration_s {
            break;
        }
        changed = min_apps != max_apps;
        if !changed {
            continue;
        }
        let wants_arrival = rng.random_bool(workload.event_probability);
        let arrival = if running.len() <= min_apps {
            true
        } else if running.len() >= max_apps {
            false
        } else {
            wants_arrival
        };
        if arrival {
            arrive(&mut running, &mut rng, &mut events, time);
        } else {
            let k = rng.random_range(0..running.len());
            let gone = running.remove(k);
            events.push(Event {
                time_s: time,
                kind: EventKind::Kill { app: gone.app },
            });
        }
    }
    Ok(ScenarioTrace {
        strategy,
        scenario: device.scenario,
        duration_s: workload.duration_s,
        load_range: workload.load_range,
        seed: workload.seed,
        events,
        totals,
    })
}

fn check_inputs(workload: &WorkloadConfig, strategy: Strategy) -> Result<(), SimError> {
    if workload.catalog.is_empty() {
        return Err(SimError::EmptyCatalog);
    }
    let (lo, hi) = workload.load_range;
    if lo > hi || hi == 0 {
        return Err(SimError::InvalidWorkload("load range must satisfy min <= max, max >= 1"));
    }
    if !(0.0..=1.0).contains(&workload.event_probability) {
        return Err(SimError::InvalidWorkload("event probability outside [0, 1]"));
    }
    if workload.event_interval_s == 0 || workload.duration_s == 0 {
        return Err(SimError::InvalidWorkload("duration and interval must be positive"));
    }
    for (index, spec) in workload.catalog.iter().enumerate() {
        if crate::profile::validate_profile(&spec.profile).is_err() {
            return Err(SimError::InvalidApp {
                index,
                reason: "profile fails validation",
            });
        }
        if spec.block_latency_us.len() != spec.profile.blocks.len()
            || spec.block_latency_us.iter().any(|t| !(*t > 0.0))
        {
            return Err(SimError::InvalidApp {
                index,
                reason: "need one positive latency per block",
            });
        }
        if !(spec.accuracy_floor <= spec.original_accuracy && spec.original_accuracy > 0.0) {
            return Err(SimError::InvalidApp {
                index,
                reason: "accuracy floor above original accuracy",
            });
        }
    }
    if let Strategy::WholeModel { variants } = strategy {
        if variants < 2 {
            return Err(SimError::TooFewVariants);
        }
    }
    Ok(())
}

/// `k` selections that use the same descendant index in every block, evenly
/// spread from the original to the most compressed.
pub fn uniform_variants(profile: &DnnProfile, k: usize) -> Vec<Selection> {
    let deepest = profile
        .blocks
        .iter()
        .map(BlockProfile::options)
        .min()
        .unwrap_or(1)
        - 1;
    let mut levels: Vec<usize> = (0..k)
        .map(|v| {
            if k <= 1 {
                0
            } else {
                libm::round(v as f64 * deepest as f64 / (k - 1) as f64) as usize
            }
        })
        .collect();
    levels.dedup();
    levels
        .into_iter()
        .map(|j| Selection::new(alloc::vec![j; profile.blocks.len()]))
        .collect()
}

/// A one-block profile whose descendants are whole-model variants, so the
/// same optimizer can choose among them.
fn variant_profile(profile: &DnnProfile, variants: &[Selection], latencies: &[Vec<f64>]) -> (DnnProfile, Vec<f64>) {
    let residue = profile.residue_size_bytes();
    let latency_of = |s: &Selection| -> f64 {
        s.iter()
            .enumerate()
            .fold(0.0, |acc, (i, &j)| acc + latencies[i][j])
    };
    let original_latency = latency_of(&variants[0]);
    let parts: Vec<(f64, u64, f64)> = variants
        .iter()
        .map(|s| {
            let t = latency_of(s);
            let reduction = if original_latency > 0.0 {
                (1.0 - t / original_latency).clamp(0.0, 1.0 - f64::EPSILON)
            } else {
                0.0
            };
            (profile.accuracy_loss(s), profile.model_size(s) - residue, reduction)
        })
        .collect();
    let mut parts = parts;
    parts[0].0 = 0.0;
    parts[0].2 = 0.0;
    let block = BlockProfile::from_parts(1, &parts);
    let lat = variants.iter().map(latency_of).collect();
    (
        DnnProfile {
            dnn_id: profile.dnn_id.clone(),
            base_size_bytes: profile.base_size_bytes,
            blocks: alloc::vec![block],
        },
        lat,
    )
}

#[allow(clippy::too_many_arguments)]
fn rescale(
    workload: &WorkloadConfig,
    device: &DeviceModel,
    strategy: Strategy,
    idle: &[Vec<Vec<f64>>],
    variants: &[Vec<Selection>],
    running: &mut [Running],
    previous: &[usize],
    time: u64,
) -> Result<Event, SimError> {
    let catalog = &workload.catalog;
    let contention = device.contention.multiplier(running.len());
    // Observe each block's deployed descendant under the current load and
    // estimate every alternative from it.
    let mut estimated: Vec<Vec<Vec<f64>>> = Vec::with_capacity(running.len());
    for r in running.iter() {
        let spec = &catalog[r.model];
        let mut per_block = Vec::with_capacity(spec.profile.blocks.len());
        for (i, block) in spec.profile.blocks.iter().enumerate() {
            let v = r.selection[i];
            let observation = LatencyObservation {
                block_id: block.block_id,
                descendant_index: v,
                measured_latency_us: idle[r.model][i][v] * contention,
            };
            per_block.push(estimate_latencies(&observation, block)?);
        }
        estimated.push(per_block);
    }

    let accuracy_budget: f64 = running
        .iter()
        .map(|r| catalog[r.model].original_accuracy - catalog[r.model].accuracy_floor)
        .sum();
    let mode = match device.scenario {
        Scenario::MaxAccuracy => ObjectiveMode::MaxAccuracy,
        Scenario::MinLatency => ObjectiveMode::MinLatency { accuracy_budget },
        Scenario::Balanced => ObjectiveMode::Balanced {
            lambda: optimizer::DEFAULT_BALANCE_LAMBDA,
        },
    };
    let dnns: Vec<DnnRequest> = running
        .iter()
        .zip(&estimated)
        .map(|(r, lat)| {
            let spec = &catalog[r.model];
            match strategy {
                Strategy::BlockGrained => {
                    let mut dnn =
                        DnnRequest::new(spec.profile.clone(), device.latency_budget_us, lat.clone());
                    dnn.current = Some(r.selection.clone());
                    dnn
                }
                Strategy::WholeModel { .. } => {
                    let (profile, lats) = variant_profile(&spec.profile, &variants[r.model], lat);
                    let mut dnn = DnnRequest::new(profile, device.latency_budget_us, alloc::vec![lats]);
                    dnn.current = variants[r.model]
                        .iter()
                        .position(|v| *v == r.selection)
                        .map(|k| Selection::new(alloc::vec![k]));
                    dnn
                }
            }
        })
        .collect();

    let outcome = if dnns.is_empty() {
        None
    } else {
        let request = ScalingRequest {
            dnns,
            memory_budget_bytes: device.total_memory_bytes,
            mode,
            sigma: device.sigma,
            node_limit: device.node_limit,
        };
        Some(optimizer::solve(&request))
    };

    let mut exchange = ExchangeTally::default();
    let mut apply = |r: &mut Running, target: Selection| {
        let profile = &catalog[r.model].profile;
        if previous.contains(&r.app) && r.selection != target {
            let plan = exchange::diff(&r.selection, &target, profile).expect("valid selections");
            let whole = exchange::whole_model_diff(&r.selection, &target, profile)
                .expect("valid selections");
            exchange.block_bytes += plan.total_bytes();
            exchange.block_bytes_in += plan.bytes_in;
            exchange.whole_model_bytes += whole.total_bytes();
            exchange.nested_bytes += device.exchange_costs.nested_page_bytes(&plan);
            exchange.swaps += plan.swaps.len() as u64;
            exchange.model_switches += 1;
        }
        r.selection = target;
    };

    let expand = |r: &Running, chosen: &Selection| -> Selection {
        match strategy {
            Strategy::BlockGrained => chosen.clone(),
            Strategy::WholeModel { .. } => variants[r.model][chosen[0]].clone(),
        }
    };

    let fallback = |running: &mut [Running], apply: &mut dyn FnMut(&mut Running, Selection)| {
        for r in running.iter_mut() {
            let target = match strategy {
                Strategy::BlockGrained => catalog[r.model].profile.most_compressed_selection(),
                Strategy::WholeModel { .. } => variants[r.model]
                    .last()
                    .cloned()
                    .expect("at least one variant"),
            };
            apply(r, target);
        }
    };
    let decided: Result<(f64, f64, usize), Option<Constraint>> = match outcome {
        None => Ok((0.0, 0.0, 0)),
        Some(Ok(decision)) => {
            for (r, chosen) in running.iter_mut().zip(&decision.selections) {
                let target = expand(r, chosen);
                apply(r, target);
            }
            Ok((decision.objective_value, decision.bound_gap, decision.nodes_explored))
        }
        Some(Err(OptimizeError::InfeasibleBudgets { constraint, .. })) => {
            fallback(running, &mut apply);
            Err(Some(constraint))
        }
        Some(Err(OptimizeError::NodeLimit { .. })) => {
            fallback(running, &mut apply);
            Err(None)
        }
        Some(Err(e)) => return Err(e.into()),
    };

    let apps: Vec<AppState> = running
        .iter()
        .zip(&estimated)
        .map(|(r, lat)| {
            let spec = &catalog[r.model];
            let latency_us = r
                .selection
                .iter()
                .enumerate()
                .fold(0.0, |acc, (i, &j)| acc + lat[i][j]);
            let accuracy_loss = spec.profile.accuracy_loss(&r.selection);
            AppState {
                app: r.app,
                model: r.model,
                selection: r.selection.clone(),
                latency_us,
                accuracy_loss,
                relative_loss: accuracy_loss / spec.original_accuracy,
                model_size_bytes: spec.profile.model_size(&r.selection),
            }
        })
        .collect();
    let memory_used_bytes = apps.iter().map(|a| a.model_size_bytes).sum();
    let kind = match decided {
        Ok((objective, bound_gap, nodes)) => EventKind::Rescale {
            apps,
            objective,
            bound_gap,
            nodes,
            memory_used_bytes,
            exchange,
        },
        Err(constraint) => EventKind::Infeasible {
            constraint,
            apps,
            memory_used_bytes,
            exchange,
        },
    };
    Ok(Event { time_s: time, kind })
}

/// Aggregates over a trace. Averages are time-weighted over the seconds in
/// which at least one app was running.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub strategy: Strategy,
    pub scenario: Scenario,
    pub occupied_s: u64,
    /// Mean over time of the per-app mean relative accuracy loss, in percent.
    pub mean_accuracy_loss_pct: f64,
    pub mean_latency_us: f64,
    pub p50_latency_us: f64,
    pub p90_latency_us: f64,
    pub p99_latency_us: f64,
    pub max_latency_us: f64,
    pub rescales: usize,
    pub infeasible: usize,
    pub peak_memory_bytes: u64,
    pub exchange: ExchangeTally,
    /// Bytes under the strategy's own exchange mechanism.
    pub exchange_bytes: u64,
    pub energy_joules: f64,
}

/// Summary of `trace`; `costs` converts exchanged bytes to joules.
pub fn summarize(trace: &ScenarioTrace, costs: &ExchangeCostModel) -> Summary {
    // Each rescale holds until the next one or the end of the run.
    let snapshots: Vec<(&Event, &[AppState])> = trace
        .events
        .iter()
        .filter_map(|e| e.apps().map(|apps| (e, apps)))
        .collect();
    let mut occupied = 0u64;
    let mut loss_area = 0.0;
    let mut latency_area = 0.0;
    let mut app_seconds = 0u64;
    let mut samples: Vec<(f64, u64)> = Vec::new();
    for (k, (event, apps)) in snapshots.iter().enumerate() {
        let end = snapshots
            .get(k + 1)
            .map_or(trace.duration_s, |(next, _)| next.time_s)
            .min(trace.duration_s);
        let span = end.saturating_sub(event.time_s);
        if apps.is_empty() || span == 0 {
            continue;
        }
        occupied += span;
        let mean_loss = apps.iter().map(|a| a.relative_loss).sum::<f64>() / apps.len() as f64;
        loss_area += mean_loss * span as f64;
        for a in apps.iter() {
            latency_area += a.latency_us * span as f64;
            app_seconds += span;
            samples.push((a.latency_us, span));
        }
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let percentile = |q: f64| weighted_percentile(&samples, q);
    let rescales = snapshots.len();
    let infeasible = trace
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Infeasible { .. }))
        .count();
    let exchange_bytes = trace.totals.native_bytes(trace.strategy);
    Summary {
        strategy: trace.strategy,
        scenario: trace.scenario,
        occupied_s: occupied,
        mean_accuracy_loss_pct: if occupied > 0 {
            100.0 * loss_area / occupied as f64
        } else {
            0.0
        },
        mean_latency_us: if app_seconds > 0 {
            latency_area / app_seconds as f64
        } else {
            0.0
        },
        p50_latency_us: percentile(0.5),
        p90_latency_us: percentile(0.9),
        p99_latency_us: percentile(0.99),
        max_latency_us: samples.last().map_or(0.0, |s| s.0),
        rescales,
        infeasible,
        peak_memory_bytes: trace
            .events
            .iter()
            .filter_map(Event::memory_used_bytes)
            .max()
            .unwrap_or(0),
        exchange: trace.totals,
        exchange_bytes,
        energy_joules: costs.joules_per_mb * exchange_bytes as f64 / MB as f64,
    }
}

/// Nearest-rank percentile of sorted `(value, weight)` samples.
fn weighted_percentile(sorted: &[(f64, u64)], q: f64) -> f64 {
    let total: u64 = sorted.iter().map(|s| s.1).sum();
    if total == 0 {
        return 0.0;
    }
    let rank = libm::ceil(q * total as f64).max(1.0) as u64;
    let mut seen = 0;
    for &(value, weight) in sorted {
        seen += weight;
        if seen >= rank {
            return value;
        }
    }
    sorted.last().map_or(0.0, |s| s.0)
}

/// Three built-in apps shaped like a VGG16 classifier, a ResNet18
/// classifier and a YOLOv3 detector, five descendants per block.
pub fn builtin_catalog() -> Vec<AppSpec> {
    alloc::vec![
        catalog_app(
            "vgg16",
            &[0.15, 1.1, 5.9, 23.6, 28.3],
            2.1,
            &[0.08, 0.06, 0.05, 0.04, 0.03],
            &[6.0, 6.0, 6.0, 6.0, 2.0],
            0.935,
            0.87,
        ),
        catalog_app(
            "resnet18",
            &[0.3, 0.3, 0.9, 1.2, 3.5, 4.7, 14.2, 18.9],
            2.1,
            &[0.05, 0.04, 0.04, 0.03, 0.03, 0.03, 0.02, 0.02],
            &[2.0; 8],
            0.698,
            0.685,
        ),
        catalog_app(
            "yolov3",
            &[8.0, 30.0, 60.0, 80.0, 60.0],
            10.0,
            &[0.05, 0.04, 0.03, 0.03, 0.02],
            &[10.0; 5],
            0.31,
            0.27,
        ),
    ]
}

/// Filter sparsity of descendants 1..=5.
const CATALOG_SPARSITY: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

fn catalog_app(
    name: &str,
    block_mb: &[f64],
    residue_mb: f64,
    sensitivity: &[f64],
    block_ms: &[f64],
    original_accuracy: f64,
    accuracy_floor: f64,
) -> AppSpec {
    let blocks: Vec<BlockProfile> = block_mb
        .iter()
        .zip(sensitivity)
        .enumerate()
        .map(|(i, (&mb, &sens))| {
            let original = libm::round(mb * MB as f64) as u64;
            let mut parts = alloc::vec![(0.0, original, 0.0)];
            for s in CATALOG_SPARSITY {
                let size = libm::round(original as f64 * (1.0 - s)) as u64;
                let reduction = crate::latency::latency_reduction(original, size)
                    .expect("sizes within original");
                parts.push((sens * s * s, size, reduction));
            }
            BlockProfile::from_parts(i + 1, &parts)
        })
        .collect();
    let total: u64 = blocks.iter().map(|b| b.original_size_bytes).sum();
    AppSpec {
        name: name.into(),
        profile: DnnProfile {
            dnn_id: name.into(),
            base_size_bytes: total + libm::round(residue_mb * MB as f64) as u64,
            blocks,
        },
        original_accuracy,
        accuracy_floor,
        block_latency_us: block_ms.iter().map(|ms| ms * MS).collect(),
    }
}
