//! Versioned JSON documents and their conversions to core types.
//!
//! Every document carries a `format` tag (`legodnn-<kind>/<version>`) that is
//! checked on load. Parse failures (unreadable file, malformed JSON, wrong
//! tag) are [`FormatError`]s; semantic problems are reported by the core
//! validators after conversion.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use legodnn_core::blockify::{Layer, LayerGraph, LayerKind};
use legodnn_core::optimizer::{Constraint, ScalingDecision, ScalingRequest};
use legodnn_core::profile::{BlockProfile, DescendantProfile, DnnProfile, Selection};
use legodnn_core::runtime::{AppState, Event, EventKind, ExchangeTally, ScenarioTrace, Summary};
use legodnn_core::schedule::{ScheduleResult, TrainJob};
use legodnn_core::BlockPartition;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const PROFILE_FORMAT: &str = "legodnn-profile/1";
pub const GRAPH_FORMAT: &str = "legodnn-graph/1";
pub const PARTITION_FORMAT: &str = "legodnn-partition/1";
pub const DECISION_FORMAT: &str = "legodnn-decision/1";
pub const JOBS_FORMAT: &str = "legodnn-jobs/1";
pub const SCHEDULE_FORMAT: &str = "legodnn-schedule/1";
pub const TRACE_FORMAT: &str = "legodnn-trace/1";
pub const SUMMARY_FORMAT: &str = "legodnn-summary/1";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: format {found:?}, expected {expected:?}")]
    Version {
        path: PathBuf,
        found: String,
        expected: &'static str,
    },
}

#[derive(Deserialize)]
struct Tag {
    format: String,
}

/// Reads a document, checking its format tag before decoding the body.
pub fn read_doc<T: DeserializeOwned>(path: &Path, expected: &'static str) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.into(),
        source,
    })?;
    from_str(&text, path, expected)
}

/// Decodes a document held in memory; `origin` names it in errors.
pub fn from_str<T: DeserializeOwned>(text: &str, origin: &Path, expected: &'static str) -> Result<T, FormatError> {
    let json = |source| FormatError::Json {
        path: origin.into(),
        source,
    };
    let tag: Tag = serde_json::from_str(text).map_err(json)?;
    if tag.format != expected {
        return Err(FormatError::Version {
            path: origin.into(),
            found: tag.format,
            expected,
        });
    }
    serde_json::from_str(text).map_err(json)
}

/// Writes `doc` as pretty JSON followed by a newline.
pub fn write_doc<T: Serialize>(path: &Path, doc: &T) -> Result<(), FormatError> {
    let io = |source| FormatError::Io {
        path: path.into(),
        source,
    };
    let mut text = serde_json::to_string_pretty(doc).expect("documents serialize");
    text.push('\n');
    fs::write(path, text).map_err(io)
}

pub fn to_pretty<T: Serialize>(doc: &T) -> String {
    let mut text = serde_json::to_string_pretty(doc).expect("documents serialize");
    text.push('\n');
    text
}

// Profiles.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileDoc {
    pub format: String,
    pub dnn_id: String,
    pub base_size_bytes: u64,
    pub blocks: Vec<BlockDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockDoc {
    pub block_id: usize,
    /// Descendant 0 is the original block.
    pub descendants: Vec<DescendantDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescendantDoc {
    pub accuracy_loss: f64,
    pub size_bytes: u64,
    pub latency_reduction: f64,
}

impl From<&DnnProfile> for ProfileDoc {
    fn from(p: &DnnProfile) -> Self {
        ProfileDoc {
            format: PROFILE_FORMAT.into(),
            dnn_id: p.dnn_id.clone(),
            base_size_bytes: p.base_size_bytes,
            blocks: p
                .blocks
                .iter()
                .map(|b| BlockDoc {
                    block_id: b.block_id,
                    descendants: b
                        .descendants
                        .iter()
                        .map(|d| DescendantDoc {
                            accuracy_loss: d.accuracy_loss,
                            size_bytes: d.size_bytes,
                            latency_reduction: d.latency_reduction,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl From<&ProfileDoc> for DnnProfile {
    /// Indices come from list positions; the original size and the size
    /// reductions are derived from descendant 0.
    fn from(doc: &ProfileDoc) -> Self {
        DnnProfile {
            dnn_id: doc.dnn_id.clone(),
            base_size_bytes: doc.base_size_bytes,
            blocks: doc
                .blocks
                .iter()
                .map(|b| {
                    let original = b.descendants.first().map_or(0, |d| d.size_bytes);
                    BlockProfile {
                        block_id: b.block_id,
                        original_size_bytes: original,
                        descendants: b
                            .descendants
                            .iter()
                            .enumerate()
                            .map(|(j, d)| DescendantProfile {
                                descendant_index: j,
                                accuracy_loss: d.accuracy_loss,
                                size_bytes: d.size_bytes,
                                latency_reduction: d.latency_reduction,
                                size_reduction_bytes: original.saturating_sub(d.size_bytes),
                            })
                            .collect(),
                    }
                })
                .collect(),
        }
    }
}

pub fn read_profile(path: &Path) -> Result<DnnProfile, FormatError> {
    let doc: ProfileDoc = read_doc(path, PROFILE_FORMAT)?;
    Ok(DnnProfile::from(&doc))
}

pub fn write_profile(path: &Path, profile: &DnnProfile) -> Result<(), FormatError> {
    write_doc(path, &ProfileDoc::from(profile))
}

// Layer graphs and partitions.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDoc {
    pub format: String,
    pub layers: Vec<LayerDoc>,
    pub edges: Vec<EdgeDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    pub id: String,
    pub kind: KindDoc,
    #[serde(default)]
    pub param_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KindDoc {
    #[serde(rename = "conv")]
    Conv,
    #[serde(rename = "non-conv")]
    NonConv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub from: String,
    pub to: String,
}

impl GraphDoc {
    pub fn to_graph(&self) -> Result<LayerGraph, legodnn_core::blockify::BlockifyError> {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                id: l.id.clone(),
                kind: match l.kind {
                    KindDoc::Conv => LayerKind::Conv,
                    KindDoc::NonConv => LayerKind::NonConv,
                },
                param_count: l.param_count,
            })
            .collect();
        let edges: Vec<(&str, &str)> = self
            .edges
            .iter()
            .map(|e| (e.from.as_str(), e.to.as_str()))
            .collect();
        LayerGraph::from_ids(layers, &edges)
    }

    pub fn from_graph(graph: &LayerGraph) -> Self {
        let name = |v: usize| graph.layers()[v].id.clone();
        GraphDoc {
            format: GRAPH_FORMAT.into(),
            layers: graph
                .layers()
                .iter()
                .map(|l| LayerDoc {
                    id: l.id.clone(),
                    kind: match l.kind {
                        LayerKind::Conv => KindDoc::Conv,
                        LayerKind::NonConv => KindDoc::NonConv,
                    },
                    param_count: l.param_count,
                })
                .collect(),
            edges: graph
                .edges()
                .iter()
                .map(|&(u, v)| EdgeDoc {
                    from: name(u),
                    to: name(v),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionDoc {
    pub format: String,
    pub blocks: Vec<PartitionBlockDoc>,
    pub residue: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionBlockDoc {
    pub block_id: usize,
    pub layers: Vec<String>,
    pub param_count: u64,
}

impl PartitionDoc {
    pub fn new(graph: &LayerGraph, partition: &BlockPartition) -> Self {
        let name = |v: &usize| graph.layers()[*v].id.clone();
        PartitionDoc {
            format: PARTITION_FORMAT.into(),
            blocks: partition
                .blocks
                .iter()
                .enumerate()
                .map(|(b, block)| PartitionBlockDoc {
                    block_id: b + 1,
                    layers: block.layers.iter().map(name).collect(),
                    param_count: block.param_count,
                })
                .collect(),
            residue: partition.residue.iter().map(name).collect(),
        }
    }
}

// Scaling decisions.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionDoc {
    pub format: String,
    pub mode: String,
    pub sigma: f64,
    pub objective_value: f64,
    pub bound_gap: f64,
    pub root_bound: f64,
    pub nodes_explored: usize,
    pub limit_reached: bool,
    pub solve_time_us: Option<u64>,
    pub memory_budget_bytes: u64,
    pub memory_used_bytes: u64,
    pub dnns: Vec<DnnDecisionDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnDecisionDoc {
    pub dnn_id: String,
    pub selection: Vec<usize>,
    pub accuracy_loss: f64,
    pub latency_us: f64,
    pub latency_budget_us: f64,
    pub model_size_bytes: u64,
    /// Blocks to swap from the current selection, when one was given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swaps: Option<Vec<SwapDoc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapDoc {
    pub block_id: usize,
    pub from: usize,
    pub to: usize,
}

impl DecisionDoc {
    pub fn new(request: &ScalingRequest, decision: &ScalingDecision) -> Self {
        let plans = request.exchange_plans(decision).ok();
        let dnns: Vec<DnnDecisionDoc> = request
            .dnns
            .iter()
            .zip(&decision.selections)
            .enumerate()
            .map(|(a, (d, s))| DnnDecisionDoc {
                dnn_id: d.profile.dnn_id.clone(),
                selection: s.choices().to_vec(),
                accuracy_loss: d.profile.accuracy_loss(s),
                latency_us: selection_latency(&d.latencies_us, s),
                latency_budget_us: d.latency_budget_us,
                model_size_bytes: d.profile.model_size(s),
                swaps: d.current.as_ref().and_then(|_| {
                    plans.as_ref().map(|p| {
                        p[a].swaps
                            .iter()
                            .map(|w| SwapDoc {
                                block_id: w.block_id,
                                from: w.from_descendant,
                                to: w.to_descendant,
                            })
                            .collect()
                    })
                }),
            })
            .collect();
        DecisionDoc {
            format: DECISION_FORMAT.into(),
            mode: request.mode.name().into(),
            sigma: request.sigma,
            objective_value: decision.objective_value,
            bound_gap: decision.bound_gap,
            root_bound: decision.root_bound,
            nodes_explored: decision.nodes_explored,
            limit_reached: decision.limit_reached,
            solve_time_us: decision.solve_time.map(|t| t.as_micros() as u64),
            memory_budget_bytes: request.memory_budget_bytes,
            memory_used_bytes: dnns.iter().map(|d| d.model_size_bytes).sum(),
            dnns,
        }
    }
}

/// Left-to-right sum of the selected descendants' latencies.
pub fn selection_latency(latencies_us: &[Vec<f64>], selection: &Selection) -> f64 {
    selection
        .iter()
        .enumerate()
        .fold(0.0, |acc, (i, &j)| acc + latencies_us[i][j])
}

// Training jobs and schedules.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobsDoc {
    pub format: String,
    pub jobs: Vec<JobDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobDoc {
    pub block_id: usize,
    pub descendant_index: usize,
    pub memory_demand: u64,
    /// Defaults to one time unit per started MiB of demand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<u64>,
}

impl JobsDoc {
    pub fn new(jobs: &[TrainJob]) -> Self {
        JobsDoc {
            format: JOBS_FORMAT.into(),
            jobs: jobs
                .iter()
                .map(|j| JobDoc {
                    block_id: j.block_id,
                    descendant_index: j.descendant_index,
                    memory_demand: j.memory_demand,
                    duration: Some(j.duration),
                })
                .collect(),
        }
    }

    pub fn to_jobs(&self) -> Vec<TrainJob> {
        self.jobs
            .iter()
            .map(|j| match j.duration {
                Some(duration) => TrainJob {
                    block_id: j.block_id,
                    descendant_index: j.descendant_index,
                    memory_demand: j.memory_demand,
                    duration,
                },
                None => TrainJob::with_default_duration(j.block_id, j.descendant_index, j.memory_demand),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDoc {
    pub format: String,
    pub policy: String,
    pub capacity_bytes: u64,
    pub makespan: u64,
    pub peak_concurrency: usize,
    pub timeline: Vec<ScheduledDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledDoc {
    pub job: usize,
    pub block_id: usize,
    pub descendant_index: usize,
    pub memory_demand: u64,
    pub start: u64,
    pub end: u64,
}

impl ScheduleDoc {
    pub fn new(jobs: &[TrainJob], capacity_bytes: u64, result: &ScheduleResult) -> Self {
        ScheduleDoc {
            format: SCHEDULE_FORMAT.into(),
            policy: result.policy.to_string(),
            capacity_bytes,
            makespan: result.makespan,
            peak_concurrency: result.peak_concurrency,
            timeline: result
                .timeline
                .iter()
                .map(|s| ScheduledDoc {
                    job: s.job,
                    block_id: jobs[s.job].block_id,
                    descendant_index: jobs[s.job].descendant_index,
                    memory_demand: jobs[s.job].memory_demand,
                    start: s.start,
                    end: s.end,
                })
                .collect(),
        }
    }
}

// Simulator traces.

/// One line of a trace file. The first line is the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceRecord {
    Header {
        format: String,
        strategy: String,
        scenario: String,
        duration_s: u64,
        load_range: (usize, usize),
        seed: u64,
        catalog: Vec<String>,
    },
    Arrive {
        time_s: u64,
        app: usize,
        model: usize,
    },
    Kill {
        time_s: u64,
        app: usize,
    },
    Rescale {
        time_s: u64,
        objective: f64,
        bound_gap: f64,
        nodes: usize,
        memory_used_bytes: u64,
        exchange: TallyDoc,
        apps: Vec<AppDoc>,
    },
    Infeasible {
        time_s: u64,
        /// `None` when the node limit ran out before a feasible selection.
        constraint: Option<String>,
        memory_used_bytes: u64,
        exchange: TallyDoc,
        apps: Vec<AppDoc>,
    },
    Totals {
        exchange: TallyDoc,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyDoc {
    pub block_bytes: u64,
    pub block_bytes_in: u64,
    pub whole_model_bytes: u64,
    pub nested_bytes: u64,
    pub swaps: u64,
    pub model_switches: u64,
}

impl From<&ExchangeTally> for TallyDoc {
    fn from(t: &ExchangeTally) -> Self {
        TallyDoc {
            block_bytes: t.block_bytes,
            block_bytes_in: t.block_bytes_in,
            whole_model_bytes: t.whole_model_bytes,
            nested_bytes: t.nested_bytes,
            swaps: t.swaps,
            model_switches: t.model_switches,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppDoc {
    pub app: usize,
    pub model: usize,
    pub selection: Vec<usize>,
    pub latency_us: f64,
    pub accuracy_loss: f64,
    pub relative_loss: f64,
    pub model_size_bytes: u64,
}

impl From<&AppState> for AppDoc {
    fn from(a: &AppState) -> Self {
        AppDoc {
            app: a.app,
            model: a.model,
            selection: a.selection.choices().to_vec(),
            latency_us: a.latency_us,
            accuracy_loss: a.accuracy_loss,
            relative_loss: a.relative_loss,
            model_size_bytes: a.model_size_bytes,
        }
    }
}

fn constraint_name(c: &Constraint) -> String {
    match c {
        Constraint::Latency { dnn } => format!("latency:{dnn}"),
        Constraint::Memory => "memory".into(),
        Constraint::Accuracy => "accuracy".into(),
    }
}

fn event_record(e: &Event) -> TraceRecord {
    let time_s = e.time_s;
    let apps = |apps: &[AppState]| apps.iter().map(AppDoc::from).collect();
    match &e.kind {
        EventKind::Arrive { app, model } => TraceRecord::Arrive {
            time_s,
            app: *app,
            model: *model,
        },
        EventKind::Kill { app } => TraceRecord::Kill { time_s, app: *app },
        EventKind::Rescale {
            apps: a,
            objective,
            bound_gap,
            nodes,
            memory_used_bytes,
            exchange,
        } => TraceRecord::Rescale {
            time_s,
            objective: *objective,
            bound_gap: *bound_gap,
            nodes: *nodes,
            memory_used_bytes: *memory_used_bytes,
            exchange: exchange.into(),
            apps: apps(a),
        },
        EventKind::Infeasible {
            constraint,
            apps: a,
            memory_used_bytes,
            exchange,
        } => TraceRecord::Infeasible {
            time_s,
            constraint: constraint.as_ref().map(constraint_name),
            memory_used_bytes: *memory_used_bytes,
            exchange: exchange.into(),
            apps: apps(a),
        },
    }
}

/// Header, one record per event, then the run totals.
pub fn trace_records(trace: &ScenarioTrace, catalog: &[String]) -> Vec<TraceRecord> {
    let mut records = Vec::with_capacity(trace.events.len() + 2);
    records.push(TraceRecord::Header {
        format: TRACE_FORMAT.into(),
        strategy: strategy_label(trace.strategy),
        scenario: trace.scenario.name().into(),
        duration_s: trace.duration_s,
        load_range: trace.load_range,
        seed: trace.seed,
        catalog: catalog.to_vec(),
    });
    records.extend(trace.events.iter().map(event_record));
    records.push(TraceRecord::Totals {
        exchange: (&trace.totals).into(),
    });
    records
}

pub fn strategy_label(s: legodnn_core::runtime::Strategy) -> String {
    match s {
        legodnn_core::runtime::Strategy::BlockGrained => "block_grained".into(),
        legodnn_core::runtime::Strategy::WholeModel { variants } => format!("whole_model_{variants}"),
    }
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[TraceRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Vec<TraceRecord>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| serde_json::from_str(&l?).map_err(io::Error::from))
        .collect()
}

/// Per-app time series for plotting: one row per app per rescale.
pub fn write_csv<W: Write>(mut out: W, trace: &ScenarioTrace) -> io::Result<()> {
    writeln!(
        out,
        "time_s,app,model,latency_us,accuracy_loss,relative_loss,model_size_bytes,selection"
    )?;
    for e in &trace.events {
        let Some(apps) = e.apps() else { continue };
        for a in apps {
            let selection: Vec<String> = a.selection.iter().map(|j| j.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                e.time_s,
                a.app,
                a.model,
                a.latency_us,
                a.accuracy_loss,
                a.relative_loss,
                a.model_size_bytes,
                selection.join(" ")
            )?;
        }
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub format: String,
    pub runs: Vec<RunSummaryDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummaryDoc {
    pub strategy: String,
    pub scenario: String,
    pub load_range: (usize, usize),
    pub seed: u64,
    pub occupied_s: u64,
    pub mean_accuracy_loss_pct: f64,
    pub mean_latency_us: f64,
    pub p50_latency_us: f64,
    pub p90_latency_us: f64,
    pub p99_latency_us: f64,
    pub max_latency_us: f64,
    pub rescales: usize,
    pub infeasible: usize,
    pub peak_memory_bytes: u64,
    pub exchange_bytes: u64,
    pub energy_joules: f64,
    pub exchange: TallyDoc,
}

impl RunSummaryDoc {
    pub fn new(trace: &ScenarioTrace, s: &Summary) -> Self {
        RunSummaryDoc {
            strategy: strategy_label(s.strategy),
            scenario: s.scenario.name().into(),
            load_range: trace.load_range,
            seed: trace.seed,
            occupied_s: s.occupied_s,
            mean_accuracy_loss_pct: s.mean_accuracy_loss_pct,
            mean_latency_us: s.mean_latency_us,
            p50_latency_us: s.p50_latency_us,
            p90_latency_us: s.p90_latency_us,
            p99_latency_us: s.p99_latency_us,
            max_latency_us: s.max_latency_us,
            rescales: s.rescales,
            infeasible: s.infeasible,
            peak_memory_bytes: s.peak_memory_bytes,
            exchange_bytes: s.exchange_bytes,
            energy_joules: s.energy_joules,
            exchange: (&s.exchange).into(),
        }
    }
}
