//! Descendant selection for one or many models.
//!
//! Picking one descendant per block is a multi-choice knapsack with a
//! latency row per model and one memory row shared by all of them. The
//! binary program is relaxed to an LP, and branch and bound searches from the
//! relaxation's optimum: every node's fractional solution is rounded to a
//! candidate incumbent, the most fractional variable is pinned to 0 and to 1,
//! and the search stops as soon as the incumbent is within `sigma` of the
//! best bound still open.
//!
//! Feasibility of a selection is always re-checked on the raw profile data:
//! sizes in exact integer bytes, latencies against the budget plus
//! [`LATENCY_TOLERANCE_US`]. The same check and the same left-to-right
//! summation are shared with [`oracle_solve`], so the two agree bit for bit.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::time::Duration;

use crate::exchange::{self, ExchangePlan};
use crate::lp::{self, LpError, LpProblem, LpStatus, Row};
use crate::profile::{
    validate_profile, DnnProfile, Selection, SelectionError, ValidationErrors,
};

/// Early-stopping threshold used when none is configured.
pub const DEFAULT_SIGMA: f64 = 0.005;
/// Weight of normalised latency in the balanced objective.
pub const DEFAULT_BALANCE_LAMBDA: f64 = 1.0;
/// Slack allowed on latency budgets, in microseconds.
pub const LATENCY_TOLERANCE_US: f64 = 1e-6;
/// Slack allowed on the accuracy-loss budget.
pub const ACCURACY_TOLERANCE: f64 = 1e-9;
/// Largest joint scaling space the exhaustive oracle accepts.
pub const ORACLE_LIMIT: u128 = 10_000_000;

const INTEGRALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveMode {
    /// Minimise total accuracy loss under latency and memory budgets.
    MaxAccuracy,
    /// Maximise the summed latency-reduction fractions while the total
    /// accuracy loss stays within `accuracy_budget`.
    MinLatency { accuracy_budget: f64 },
    /// Minimise `loss + lambda * latency / t_max` under the memory budget
    /// only; `t_max` acts as a normaliser.
    Balanced { lambda: f64 },
}

impl ObjectiveMode {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveMode::MaxAccuracy => "max_accuracy",
            ObjectiveMode::MinLatency { .. } => "min_latency",
            ObjectiveMode::Balanced { .. } => "balanced",
        }
    }

    fn has_latency_rows(&self) -> bool {
        !matches!(self, ObjectiveMode::Balanced { .. })
    }
}

/// One model taking part in a scaling decision.
#[derive(Debug, Clone, PartialEq)]
pub struct DnnRequest {
    pub profile: DnnProfile,
    /// `t^max` in microseconds.
    pub latency_budget_us: f64,
    /// Estimated `t_{i,j}` per block and descendant, in microseconds.
    pub latencies_us: Vec<Vec<f64>>,
    /// Selection currently deployed, if any.
    pub current: Option<Selection>,
}

impl DnnRequest {
    pub fn new(profile: DnnProfile, latency_budget_us: f64, latencies_us: Vec<Vec<f64>>) -> Self {
        DnnRequest {
            profile,
            latency_budget_us,
            latencies_us,
            current: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRequest {
    pub dnns: Vec<DnnRequest>,
    /// `s^max`, shared by every model.
    pub memory_budget_bytes: u64,
    pub mode: ObjectiveMode,
    pub sigma: f64,
    /// Caps the explored nodes once an incumbent exists; the decision then
    /// reports the gap left open. `None` searches until the gap is below
    /// `sigma`.
    pub node_limit: Option<usize>,
}

impl ScalingRequest {
    pub fn new(dnns: Vec<DnnRequest>, memory_budget_bytes: u64, mode: ObjectiveMode) -> Self {
        ScalingRequest {
            dnns,
            memory_budget_bytes,
            mode,
            sigma: DEFAULT_SIGMA,
            node_limit: None,
        }
    }

    pub fn with_node_limit(mut self, limit: usize) -> Self {
        self.node_limit = Some(limit);
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        if self.dnns.is_empty() {
            return Err(OptimizeError::EmptyRequest);
        }
        if self.memory_budget_bytes == 0 {
            return Err(OptimizeError::InvalidBudget("memory budget must be positive"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(OptimizeError::InvalidSigma(self.sigma));
        }
        match self.mode {
            ObjectiveMode::MinLatency { accuracy_budget }
                if !(accuracy_budget >= 0.0) || !accuracy_budget.is_finite() =>
            {
                return Err(OptimizeError::InvalidBudget(
                    "accuracy budget must be finite and non-negative",
                ));
            }
            ObjectiveMode::Balanced { lambda } if !(lambda >= 0.0) || !lambda.is_finite() => {
                return Err(OptimizeError::InvalidBudget(
                    "balance weight must be finite and non-negative",
                ));
            }
            _ => {}
        }
        for (a, dnn) in self.dnns.iter().enumerate() {
            validate_profile(&dnn.profile)
                .map_err(|errors| OptimizeError::InvalidProfile { dnn: a, errors })?;
            if !(dnn.latency_budget_us > 0.0) || !dnn.latency_budget_us.is_finite() {
                return Err(OptimizeError::InvalidBudget("latency budget must be positive"));
            }
            for (i, block) in dnn.profile.blocks.iter().enumerate() {
                let row = dnn
                    .latencies_us
                    .get(i)
                    .filter(|r| r.len() == block.options())
                    .ok_or(OptimizeError::MissingLatencies { dnn: a, block: i })?;
                if let Some(j) = row.iter().position(|t| !(*t >= 0.0) || !t.is_finite()) {
                    return Err(OptimizeError::InvalidLatency {
                        dnn: a,
                        block: i,
                        descendant: j,
                    });
                }
            }
            if dnn.latencies_us.len() != dnn.profile.blocks.len() {
                return Err(OptimizeError::MissingLatencies {
                    dnn: a,
                    block: dnn.profile.blocks.len(),
                });
            }
            if let Some(current) = &dnn.current {
                dnn.profile
                    .check_selection(current)
                    .map_err(|source| OptimizeError::Selection { dnn: a, source })?;
            }
        }
        Ok(())
    }

    /// Block swaps taking each model from its current selection to the one in
    /// `decision`. Models without a current selection are loaded from their
    /// originals' layout, i.e. the plan is computed against index 0.
    pub fn exchange_plans(
        &self,
        decision: &ScalingDecision,
    ) -> Result<Vec<ExchangePlan>, SelectionError> {
        self.dnns
            .iter()
            .zip(&decision.selections)
            .map(|(dnn, target)| {
                let current = dnn
                    .current
                    .clone()
                    .unwrap_or_else(|| dnn.profile.original_selection());
                exchange::diff(&current, target, &dnn.profile)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingDecision {
    pub selections: Vec<Selection>,
    /// Total accuracy loss; total latency-reduction fraction in min-latency
    /// mode; the weighted sum in balanced mode.
    pub objective_value: f64,
    /// `o^opt - o^remain` when the search stopped; zero once proven optimal.
    pub bound_gap: f64,
    pub nodes_explored: usize,
    /// The node limit stopped the search before the gap closed below sigma.
    pub limit_reached: bool,
    /// Objective of the root relaxation, in the same units as
    /// `objective_value`.
    pub root_bound: f64,
    /// Filled in by callers that time the solve.
    pub solve_time: Option<Duration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Latency { dnn: usize },
    Memory,
    Accuracy,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::Latency { dnn } => write!(f, "latency of model {dnn}"),
            Constraint::Memory => write!(f, "shared memory"),
            Constraint::Accuracy => write!(f, "accuracy loss"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimizeError {
    #[error("request has no models")]
    EmptyRequest,
    #[error("invalid budget: {0}")]
    InvalidBudget(&'static str),
    #[error("sigma must be finite and non-negative, got {0}")]
    InvalidSigma(f64),
    #[error("model {dnn}: {errors}")]
    InvalidProfile { dnn: usize, errors: ValidationErrors },
    #[error("model {dnn}: missing latency estimates for block {block}")]
    MissingLatencies { dnn: usize, block: usize },
    #[error("model {dnn}: invalid latency for block {block}, descendant {descendant}")]
    InvalidLatency {
        dnn: usize,
        block: usize,
        descendant: usize,
    },
    #[error("model {dnn}: {source}")]
    Selection { dnn: usize, source: SelectionError },
    #[error("infeasible budgets: {constraint} needs at least {required}, budget is {budget}")]
    InfeasibleBudgets {
        constraint: Constraint,
        required: f64,
        budget: f64,
    },
    #[error("oracle limit: scaling space {space} exceeds {ORACLE_LIMIT}")]
    OracleLimit { space: u128 },
    #[error("node limit reached after {nodes} nodes without a feasible selection")]
    NodeLimit { nodes: usize },
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// Position of one block's variables in the flattened problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSlot {
    pub dnn: usize,
    pub block: usize,
    /// First variable of this block.
    pub start: usize,
    pub options: usize,
}

/// The binary program: its LP relaxation, which variables are integral, and
/// what each inequality row means.
#[derive(Debug, Clone, PartialEq)]
pub struct IlpModel {
    pub problem: LpProblem,
    pub integer_vars: Vec<usize>,
    pub slots: Vec<BlockSlot>,
    pub inequality_kinds: Vec<Constraint>,
}

/// Builds the relaxation for `request`.
pub fn build_ilp(request: &ScalingRequest) -> Result<IlpModel, OptimizeError> {
    request.validate()?;
    let model = Model::new(request);
    Ok(model.ilp())
}

/// A block (by slot) moved to a descendant.
type Change = (usize, usize);

/// Flattened, read-only view of a request shared by search and oracle.
struct Model<'a> {
    request: &'a ScalingRequest,
    slots: Vec<BlockSlot>,
    /// Minimised objective coefficient per variable.
    cost: Vec<f64>,
    latency: Vec<f64>,
    loss: Vec<f64>,
    size_reduction: Vec<u64>,
    /// Slot range of each model.
    dnn_slots: Vec<core::ops::Range<usize>>,
    base_total: i128,
}

impl<'a> Model<'a> {
    fn new(request: &'a ScalingRequest) -> Self {
        let mut slots = Vec::new();
        let mut cost = Vec::new();
        let mut latency = Vec::new();
        let mut loss = Vec::new();
        let mut size_reduction = Vec::new();
        let mut dnn_slots = Vec::new();
        let mut base_total = 0i128;
        for (a, dnn) in request.dnns.iter().enumerate() {
            let first = slots.len();
            base_total += dnn.profile.base_size_bytes as i128;
            for (i, block) in dnn.profile.blocks.iter().enumerate() {
                slots.push(BlockSlot {
                    dnn: a,
                    block: i,
                    start: cost.len(),
                    options: block.options(),
                });
                for (j, d) in block.descendants.iter().enumerate() {
                    let t = dnn.latencies_us[i][j];
                    cost.push(match request.mode {
                        ObjectiveMode::MaxAccuracy => d.accuracy_loss,
                        ObjectiveMode::MinLatency { .. } => -d.latency_reduction,
                        ObjectiveMode::Balanced { lambda } => {
                            d.accuracy_loss + lambda * t / dnn.latency_budget_us
                        }
                    });
                    latency.push(t);
                    loss.push(d.accuracy_loss);
                    size_reduction.push(d.size_reduction_bytes);
                }
            }
            dnn_slots.push(first..slots.len());
        }
        Model {
            request,
            slots,
            cost,
            latency,
            loss,
            size_reduction,
            dnn_slots,
            base_total,
        }
    }

    fn num_vars(&self) -> usize {
        self.cost.len()
    }

    fn ilp(&self) -> IlpModel {
        let n = self.num_vars();
        let mut problem = LpProblem::unit_box(self.cost.clone());
        for slot in &self.slots {
            let mut row = vec![0.0; n];
            row[slot.start..slot.start + slot.options].fill(1.0);
            problem.equalities.push(Row::new(row, 1.0));
        }
        let mut kinds = Vec::new();
        if self.request.mode.has_latency_rows() {
            for (a, dnn) in self.request.dnns.iter().enumerate() {
                let tmax = dnn.latency_budget_us;
                let mut row = vec![0.0; n];
                for slot in &self.slots[self.dnn_slots[a].clone()] {
                    let cols = slot.start..slot.start + slot.options;
                    for (r, &t) in row[cols.clone()].iter_mut().zip(&self.latency[cols]) {
                        *r = t / tmax;
                    }
                }
                problem
                    .inequalities
                    .push(Row::new(row, (tmax + LATENCY_TOLERANCE_US) / tmax));
                kinds.push(Constraint::Latency { dnn: a });
            }
        }
        // s^base - sum S B <= s^max, summed over models, scaled by s^max.
        let smax = self.request.memory_budget_bytes as f64;
        let row = self
            .size_reduction
            .iter()
            .map(|&s| -(s as f64) / smax)
            .collect();
        let rhs = (smax + 0.5 - self.base_total as f64) / smax;
        problem.inequalities.push(Row::new(row, rhs));
        kinds.push(Constraint::Memory);
        if let ObjectiveMode::MinLatency { accuracy_budget } = self.request.mode {
            problem
                .inequalities
                .push(Row::new(self.loss.clone(), accuracy_budget + ACCURACY_TOLERANCE));
            kinds.push(Constraint::Accuracy);
        }
        IlpModel {
            problem,
            integer_vars: (0..n).collect(),
            slots: self.slots.clone(),
            inequality_kinds: kinds,
        }
    }

    /// Objective of a flat choice (one descendant per slot), minimised form.
    fn cost_of(&self, choice: &[usize]) -> f64 {
        self.slots
            .iter()
            .zip(choice)
            .fold(0.0, |acc, (slot, &j)| acc + self.cost[slot.start + j])
    }

    fn dnn_latency(&self, a: usize, choice: &[usize]) -> f64 {
        self.dnn_slots[a]
            .clone()
            .fold(0.0, |acc, k| acc + self.latency[self.slots[k].start + choice[k]])
    }

    fn memory(&self, choice: &[usize]) -> i128 {
        let reduction: i128 = self
            .slots
            .iter()
            .zip(choice)
            .map(|(slot, &j)| self.size_reduction[slot.start + j] as i128)
            .sum();
        self.base_total - reduction
    }

    fn total_loss(&self, choice: &[usize]) -> f64 {
        self.slots
            .iter()
            .zip(choice)
            .fold(0.0, |acc, (slot, &j)| acc + self.loss[slot.start + j])
    }

    fn latency_ok(&self, a: usize, latency: f64) -> bool {
        latency <= self.request.dnns[a].latency_budget_us + LATENCY_TOLERANCE_US
    }

    fn memory_ok(&self, memory: i128) -> bool {
        memory <= self.request.memory_budget_bytes as i128
    }

    fn accuracy_ok(&self, loss: f64) -> bool {
        match self.request.mode {
            ObjectiveMode::MinLatency { accuracy_budget } => {
                loss <= accuracy_budget + ACCURACY_TOLERANCE
            }
            _ => true,
        }
    }

    /// Violated constraint classes of a flat choice: latency-violating models,
    /// memory, accuracy.
    fn violations(&self, choice: &[usize]) -> (Vec<usize>, bool, bool) {
        let latency = if self.request.mode.has_latency_rows() {
            (0..self.request.dnns.len())
                .filter(|&a| !self.latency_ok(a, self.dnn_latency(a, choice)))
                .collect()
        } else {
            Vec::new()
        };
        let memory = !self.memory_ok(self.memory(choice));
        let accuracy = !self.accuracy_ok(self.total_loss(choice));
        (latency, memory, accuracy)
    }

    fn feasible(&self, choice: &[usize]) -> bool {
        let (latency, memory, accuracy) = self.violations(choice);
        latency.is_empty() && !memory && !accuracy
    }

    /// The constraint that is hardest to meet on its own, as
    /// `(constraint, least achievable value, budget)`.
    fn tightest_constraint(&self) -> (Constraint, f64, f64) {
        let mut candidates = Vec::new();
        if self.request.mode.has_latency_rows() {
            for (a, dnn) in self.request.dnns.iter().enumerate() {
                let least = self.dnn_slots[a].clone().fold(0.0, |acc, k| {
                    let s = self.slots[k];
                    acc + self.latency[s.start..s.start + s.options]
                        .iter()
                        .copied()
                        .fold(f64::INFINITY, f64::min)
                });
                candidates.push((
                    Constraint::Latency { dnn: a },
                    least,
                    dnn.latency_budget_us,
                    self.latency_ok(a, least),
                ));
            }
        }
        let max_reduction: i128 = self
            .slots
            .iter()
            .map(|s| {
                self.size_reduction[s.start..s.start + s.options]
                    .iter()
                    .copied()
                    .max()
                    .unwrap_or(0) as i128
            })
            .sum();
        let least_memory = self.base_total - max_reduction;
        candidates.push((
            Constraint::Memory,
            least_memory as f64,
            self.request.memory_budget_bytes as f64,
            self.memory_ok(least_memory),
        ));
        if let ObjectiveMode::MinLatency { accuracy_budget } = self.request.mode {
            let least = self.slots.iter().fold(0.0, |acc, s| {
                acc + self.loss[s.start..s.start + s.options]
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min)
            });
            candidates.push((
                Constraint::Accuracy,
                least,
                accuracy_budget,
                self.accuracy_ok(least),
            ));
        }
        let ratio = |least: f64, budget: f64| {
            if budget > 0.0 {
                least / budget
            } else if least > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        };
        // An individually violated constraint always wins over satisfied ones.
        candidates
            .into_iter()
            .max_by(|x, y| {
                (!x.3)
                    .cmp(&!y.3)
                    .then(ratio(x.1, x.2).total_cmp(&ratio(y.1, y.2)))
                    .then(Ordering::Greater)
            })
            .map(|(c, least, budget, _)| (c, least, budget))
            .expect("memory candidate always present")
    }

    fn infeasible(&self) -> OptimizeError {
        let (constraint, required, budget) = self.tightest_constraint();
        OptimizeError::InfeasibleBudgets {
            constraint,
            required,
            budget,
        }
    }

    /// Fails fast when some constraint cannot be met even on its own.
    fn precheck(&self) -> Result<(), OptimizeError> {
        let (constraint, least, _) = self.tightest_constraint();
        let ok = match constraint {
            Constraint::Latency { dnn } => self.latency_ok(dnn, least),
            Constraint::Memory => self.memory_ok(least as i128),
            Constraint::Accuracy => self.accuracy_ok(least),
        };
        if ok {
            Ok(())
        } else {
            Err(self.infeasible())
        }
    }

    /// Per slot, the descendant with the largest fractional value.
    fn round(&self, values: &[f64]) -> Vec<usize> {
        self.slots
            .iter()
            .map(|s| {
                let mut best = 0;
                for j in 1..s.options {
                    if values[s.start + j] > values[s.start + best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Turns a rounded choice into a feasible one by repeatedly sending the
    /// block with the cheapest objective increase per unit of freed resource
    /// to its most compressed descendant.
    fn repair(&self, mut choice: Vec<usize>) -> Option<Vec<usize>> {
        loop {
            let (latency, memory, accuracy) = self.violations(&choice);
            if accuracy {
                return None;
            }
            if latency.is_empty() && !memory {
                return Some(choice);
            }
            let mut best: Option<(f64, usize)> = None;
            for (k, slot) in self.slots.iter().enumerate() {
                let by_latency = !latency.is_empty();
                if by_latency && !latency.contains(&slot.dnn) {
                    continue;
                }
                let last = slot.options - 1;
                let (cur, tgt) = (slot.start + choice[k], slot.start + last);
                if choice[k] == last {
                    continue;
                }
                let freed = if by_latency {
                    self.latency[cur] - self.latency[tgt]
                } else {
                    self.size_reduction[tgt] as f64 - self.size_reduction[cur] as f64
                };
                if !(freed > 0.0) {
                    continue;
                }
                let ratio = (self.cost[tgt] - self.cost[cur]) / freed;
                if best.is_none_or(|(r, _)| ratio < r) {
                    best = Some((ratio, k));
                }
            }
            let (_, k) = best?;
            choice[k] = self.slots[k].options - 1;
        }
    }

    /// Local search from a feasible choice: repeatedly applies the best
    /// objective-improving change of one block, or of two blocks at once,
    /// that keeps every constraint satisfied.
    fn improve(&self, mut choice: Vec<usize>) -> Vec<usize> {
        let dnns = self.request.dnns.len();
        loop {
            let mut latency: Vec<f64> = (0..dnns).map(|a| self.dnn_latency(a, &choice)).collect();
            let memory = self.memory(&choice);
            let loss = self.total_loss(&choice);
            // Every alternative descendant as (slot, var, cost delta).
            let mut moves = Vec::new();
            for (k, slot) in self.slots.iter().enumerate() {
                let cur = slot.start + choice[k];
                for v in slot.start..slot.start + slot.options {
                    if v != cur {
                        moves.push((k, v, self.cost[v] - self.cost[cur]));
                    }
                }
            }
            let fits = |latency: &mut Vec<f64>, parts: &[(usize, usize)]| -> bool {
                let mut mem = memory;
                let mut l = loss;
                for &(k, v) in parts {
                    let slot = self.slots[k];
                    let cur = slot.start + choice[k];
                    latency[slot.dnn] += self.latency[v] - self.latency[cur];
                    mem += self.size_reduction[cur] as i128 - self.size_reduction[v] as i128;
                    l += self.loss[v] - self.loss[cur];
                }
                let ok = self.memory_ok(mem)
                    && self.accuracy_ok(l)
                    && (!self.request.mode.has_latency_rows()
                        || parts
                            .iter()
                            .all(|&(k, _)| self.latency_ok(self.slots[k].dnn, latency[self.slots[k].dnn])));
                for &(k, v) in parts {
                    let slot = self.slots[k];
                    let cur = slot.start + choice[k];
                    latency[slot.dnn] -= self.latency[v] - self.latency[cur];
                }
                ok
            };
            let mut best: Option<(f64, Change, Option<Change>)> = None;
            let better = |delta: f64, best: &Option<(f64, _, _)>| {
                delta < -1e-12 && best.as_ref().is_none_or(|b: &(f64, _, _)| delta < b.0)
            };
            for &(k, v, delta) in &moves {
                if better(delta, &best) && fits(&mut latency, &[(k, v)]) {
                    best = Some((delta, (k, v), None));
                }
            }
            for (x, &(k1, v1, d1)) in moves.iter().enumerate() {
                for &(k2, v2, d2) in &moves[x + 1..] {
                    if k1 != k2 && better(d1 + d2, &best) && fits(&mut latency, &[(k1, v1), (k2, v2)]) {
                        best = Some((d1 + d2, (k1, v1), Some((k2, v2))));
                    }
                }
            }
            let Some((_, first, second)) = best else {
                return choice;
            };
            let mut next = choice.clone();
            for (k, v) in core::iter::once(first).chain(second) {
                next[k] = v - self.slots[k].start;
            }
            // Incremental sums can round differently from the canonical ones.
            if !self.feasible(&next) || self.cost_of(&next) >= self.cost_of(&choice) {
                return choice;
            }
            choice = next;
        }
    }

    /// Bytes exchanged to move slot `k` from descendant `from` to `to`.
    fn swap_bytes(&self, k: usize, from: usize, to: usize) -> u64 {
        if from == to {
            return 0;
        }
        let slot = self.slots[k];
        let block = &self.request.dnns[slot.dnn].profile.blocks[slot.block];
        block.descendants[from].size_bytes + block.descendants[to].size_bytes
    }

    /// Moves blocks of `choice` back to their deployed descendant, largest
    /// exchange first, while the result stays feasible and `accept`s its
    /// cost.
    fn settle(&self, mut choice: Vec<usize>, current: &[usize], accept: impl Fn(f64) -> bool) -> Vec<usize> {
        loop {
            let mut order: Vec<usize> = (0..choice.len()).filter(|&k| choice[k] != current[k]).collect();
            order.sort_by_key(|&k| (core::cmp::Reverse(self.swap_bytes(k, current[k], choice[k])), k));
            let mut moved = false;
            for k in order {
                let mut next = choice.clone();
                next[k] = current[k];
                if self.feasible(&next) && accept(self.cost_of(&next)) {
                    choice = next;
                    moved = true;
                }
            }
            if !moved {
                return choice;
            }
        }
    }

    fn split(&self, choice: &[usize]) -> Vec<Selection> {
        self.dnn_slots
            .iter()
            .map(|r| Selection::new(choice[r.clone()].to_vec()))
            .collect()
    }

    /// Joint choice of the deployed selections, when every model has one.
    fn current_choice(&self) -> Option<Vec<usize>> {
        let mut choice = Vec::with_capacity(self.slots.len());
        for dnn in &self.request.dnns {
            choice.extend_from_slice(dnn.current.as_ref()?.choices());
        }
        Some(choice)
    }

    /// Objective in the units reported to callers.
    fn reported(&self, cost: f64) -> f64 {
        match self.request.mode {
            ObjectiveMode::MinLatency { .. } => -cost,
            _ => cost,
        }
    }
}

struct Node {
    bound: f64,
    depth: usize,
    id: usize,
    pins: Vec<(usize, bool)>,
    values: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    /// Max-heap order: lowest bound first, then deepest, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.id.cmp(&self.id))
    }
}

struct Search<'m, 'a> {
    model: &'m Model<'a>,
    problem: LpProblem,
    incumbent: Option<(f64, Vec<usize>)>,
    nodes: usize,
    next_id: usize,
}

impl<'m, 'a> Search<'m, 'a> {
    fn prune_tolerance(cost: f64) -> f64 {
        1e-9 * cost.abs().max(1.0)
    }

    fn offer(&mut self, choice: Vec<usize>) {
        if !self.model.feasible(&choice) {
            return;
        }
        let cost = self.model.cost_of(&choice);
        if self.incumbent.as_ref().is_none_or(|(c, _)| cost < *c) {
            self.incumbent = Some((cost, choice));
        }
    }

    /// Solves the relaxation under `pins`; `None` when it is infeasible.
    fn evaluate(&mut self, pins: Vec<(usize, bool)>, depth: usize) -> Result<Option<Node>, OptimizeError> {
        self.problem.lower.fill(0.0);
        self.problem.upper.fill(1.0);
        for &(v, one) in &pins {
            let b = if one { 1.0 } else { 0.0 };
            self.problem.lower[v] = b;
            self.problem.upper[v] = b;
        }
        self.nodes += 1;
        let sol = lp::solve_lp(&self.problem)?;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Ok(None),
            LpStatus::Unbounded => unreachable!("binary variables are bounded"),
        }
        let rounded = self.model.round(&sol.values);
        if let Some(fixed) = self.model.repair(rounded) {
            let improved = self.model.improve(fixed);
            self.offer(improved);
        }
        let id = self.next_id;
        self.next_id += 1;
        Ok(Some(Node {
            bound: sol.objective,
            depth,
            id,
            pins,
            values: sol.values,
        }))
    }

    /// Variable to branch on: the most fractional one, or for an integral
    /// point that failed the exact check, the first unpinned variable at 1.
    fn branching_var(&self, node: &Node) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (v, &x) in node.values.iter().enumerate() {
            if x <= INTEGRALITY_TOL || x >= 1.0 - INTEGRALITY_TOL {
                continue;
            }
            let dist = (x - 0.5).abs();
            if best.is_none_or(|(d, _)| dist < d) {
                best = Some((dist, v));
            }
        }
        if let Some((_, v)) = best {
            return Some(v);
        }
        let pinned = |v: usize| node.pins.iter().any(|&(p, _)| p == v);
        (0..node.values.len()).find(|&v| node.values[v] >= 1.0 - INTEGRALITY_TOL && !pinned(v))
    }

    fn is_resolved(&self, node: &Node) -> bool {
        let integral = node
            .values
            .iter()
            .all(|&x| x <= INTEGRALITY_TOL || x >= 1.0 - INTEGRALITY_TOL);
        integral && self.model.feasible(&self.model.round(&node.values))
    }

    fn worth_keeping(&self, node: &Node) -> bool {
        match &self.incumbent {
            Some((cost, _)) => node.bound < cost + Self::prune_tolerance(*cost),
            None => true,
        }
    }
}

/// Branch and bound over the relaxation with early stopping at `sigma`.
pub fn solve(request: &ScalingRequest) -> Result<ScalingDecision, OptimizeError> {
    request.validate()?;
    let model = Model::new(request);
    model.precheck()?;
    let ilp = model.ilp();
    let mut search = Search {
        model: &model,
        problem: ilp.problem,
        incumbent: None,
        nodes: 0,
        next_id: 0,
    };
    // The deployed selections, made feasible and polished, are a first
    // incumbent that changes few blocks.
    if let Some(fixed) = model.current_choice().and_then(|c| model.repair(c)) {
        search.offer(model.improve(fixed));
    }
    let Some(root) = search.evaluate(Vec::new(), 0)? else {
        return Err(model.infeasible());
    };
    let root_bound = root.bound;
    let mut open = BinaryHeap::new();
    if !search.is_resolved(&root) {
        open.push(root);
    }
    let sigma = request.sigma;
    let mut gap = 0.0;
    let mut limit_reached = false;
    while let Some(top) = open.peek() {
        let at_limit = request.node_limit.is_some_and(|limit| search.nodes >= limit);
        if at_limit && search.incumbent.is_none() {
            limit_reached = true;
            break;
        }
        if let Some((cost, _)) = &search.incumbent {
            if top.bound >= cost + Search::prune_tolerance(*cost) {
                break;
            }
            if sigma > 0.0 && cost - top.bound < sigma {
                gap = (cost - top.bound).max(0.0);
                break;
            }
            if at_limit {
                gap = (cost - top.bound).max(0.0);
                limit_reached = true;
                break;
            }
        }
        let node = open.pop().expect("peeked");
        let Some(var) = search.branching_var(&node) else {
            continue;
        };
        for one in [false, true] {
            let mut pins = node.pins.clone();
            pins.push((var, one));
            if let Some(child) = search.evaluate(pins, node.depth + 1)? {
                if !search.is_resolved(&child) && search.worth_keeping(&child) {
                    open.push(child);
                }
            }
        }
    }
    let nodes = search.nodes;
    let Some((mut cost, mut choice)) = search.incumbent else {
        if limit_reached {
            return Err(OptimizeError::NodeLimit { nodes });
        }
        return Err(model.infeasible());
    };
    // Any selection within the proven gap is as good an answer; prefer the
    // one closest to what is deployed.
    if let Some(current) = model.current_choice() {
        let (incumbent, bound) = (cost, cost - gap);
        choice = model.settle(choice, &current, |c| c <= incumbent || c - bound < sigma);
        cost = model.cost_of(&choice);
        gap = (cost - bound).max(0.0);
    }
    Ok(ScalingDecision {
        selections: model.split(&choice),
        objective_value: model.reported(cost),
        bound_gap: gap,
        nodes_explored: nodes,
        limit_reached,
        root_bound: model.reported(root_bound),
        solve_time: None,
    })
}

/// [`solve`] with the balanced objective; a request already in balanced
/// mode keeps its weight, any other mode uses [`DEFAULT_BALANCE_LAMBDA`].
pub fn balanced_solve(request: &ScalingRequest) -> Result<ScalingDecision, OptimizeError> {
    if let ObjectiveMode::Balanced { .. } = request.mode {
        return solve(request);
    }
    let mut balanced = request.clone();
    balanced.mode = ObjectiveMode::Balanced {
        lambda: DEFAULT_BALANCE_LAMBDA,
    };
    solve(&balanced)
}

/// Exact optimum by enumerating every joint selection in lexicographic
/// order; the first optimum found wins ties.
pub fn oracle_solve(request: &ScalingRequest) -> Result<ScalingDecision, OptimizeError> {
    request.validate()?;
    let model = Model::new(request);
    let space = model
        .slots
        .iter()
        .fold(1u128, |acc, s| acc.saturating_mul(s.options as u128));
    if space > ORACLE_LIMIT {
        return Err(OptimizeError::OracleLimit { space });
    }
    let mut walk = OracleWalk {
        model: &model,
        choice: vec![0; model.slots.len()],
        latency: vec![0.0; request.dnns.len()],
        best: None,
        visited: 0,
    };
    walk.descend(0, 0.0, 0.0, model.base_total);
    let visited = walk.visited;
    let Some((cost, choice)) = walk.best else {
        return Err(model.infeasible());
    };
    Ok(ScalingDecision {
        selections: model.split(&choice),
        objective_value: model.reported(cost),
        bound_gap: 0.0,
        nodes_explored: visited,
        limit_reached: false,
        root_bound: model.reported(cost),
        solve_time: None,
    })
}

struct OracleWalk<'m, 'a> {
    model: &'m Model<'a>,
    choice: Vec<usize>,
    /// Running latency of each model, summed in block order.
    latency: Vec<f64>,
    best: Option<(f64, Vec<usize>)>,
    visited: usize,
}

impl OracleWalk<'_, '_> {
    // Partial sums are accumulated in the same order as the model's
    // evaluation helpers, so totals are bit-identical to theirs.
    fn descend(&mut self, k: usize, cost: f64, loss: f64, memory: i128) {
        let m = self.model;
        if k == m.slots.len() {
            self.visited += 1;
            let latency_ok = !m.request.mode.has_latency_rows()
                || self
                    .latency
                    .iter()
                    .enumerate()
                    .all(|(a, &t)| m.latency_ok(a, t));
            if latency_ok
                && m.memory_ok(memory)
                && m.accuracy_ok(loss)
                && self.best.as_ref().is_none_or(|(c, _)| cost < *c)
            {
                self.best = Some((cost, self.choice.clone()));
            }
            return;
        }
        let slot = m.slots[k];
        let saved = self.latency[slot.dnn];
        for j in 0..slot.options {
            let v = slot.start + j;
            self.choice[k] = j;
            self.latency[slot.dnn] = saved + m.latency[v];
            self.descend(
                k + 1,
                cost + m.cost[v],
                loss + m.loss[v],
                memory - m.size_reduction[v] as i128,
            );
        }
        self.latency[slot.dnn] = saved;
    }
}

/// Checks a decision against the raw request constraints.
pub fn verify_decision(
    request: &ScalingRequest,
    selections: &[Selection],
) -> Result<(), OptimizeError> {
    request.validate()?;
    let model = Model::new(request);
    if selections.len() != request.dnns.len() {
        return Err(OptimizeError::Selection {
            dnn: selections.len().min(request.dnns.len()),
            source: SelectionError::LengthMismatch {
                expected: request.dnns.len(),
                found: selections.len(),
            },
        });
    }
    let mut choice = Vec::new();
    for (a, (dnn, sel)) in request.dnns.iter().zip(selections).enumerate() {
        dnn.profile
            .check_selection(sel)
            .map_err(|source| OptimizeError::Selection { dnn: a, source })?;
        choice.extend_from_slice(sel);
    }
    let (latency, memory, accuracy) = model.violations(&choice);
    let (constraint, required, budget) = if let Some(&a) = latency.first() {
        (
            Constraint::Latency { dnn: a },
            model.dnn_latency(a, &choice),
            request.dnns[a].latency_budget_us,
        )
    } else if memory {
        (
            Constraint::Memory,
            model.memory(&choice) as f64,
            request.memory_budget_bytes as f64,
        )
    } else if accuracy {
        let budget = match request.mode {
            ObjectiveMode::MinLatency { accuracy_budget } => accuracy_budget,
            _ => f64::INFINITY,
        };
        (Constraint::Accuracy, model.total_loss(&choice), budget)
    } else {
        return Ok(());
    };
    Err(OptimizeError::InfeasibleBudgets {
        constraint,
        required,
        budget,
    })
}

/// Objective of explicit selections under `request`'s mode, in reported
/// units. Uses the same summation order as [`solve`] and [`oracle_solve`].
pub fn objective_of(request: &ScalingRequest, selections: &[Selection]) -> f64 {
    let model = Model::new(request);
    let choice: Vec<usize> = selections.iter().flat_map(|s| s.iter().copied()).collect();
    model.reported(model.cost_of(&choice))
}

#[cfg(test)]
mod tests;
