//! Block-grained scaling of deep neural networks.
//!
//! A network is cut into a handful of blocks, each block is compressed into a
//! list of *descendant* blocks, and at run time one descendant per block is
//! chosen so the assembled model fits the latency and memory left on the
//! device while losing as little accuracy as possible.
//!
//! This crate holds the pure algorithmic parts and builds without `std`:
//!
//! * [`profile`]: descendant/block/model profiles, validation, scaling-space
//!   counting and synthetic fixtures.
//! * [`blockify`]: block identification on a layer-dependency graph.
//! * [`latency`]: size-proportional latency reduction and two-step run-time
//!   latency estimation.
//! * [`lp`]: a dense bounded-variable simplex for the relaxation.
//! * [`optimizer`]: the multi-choice selection ILP, branch and bound with an
//!   early-stopping gap, and an exhaustive oracle.
//! * [`exchange`]: block swap plans and page-in/page-out accounting.
//! * [`instances`]: seeded random scaling requests.
//! * [`schedule`]: memory-constrained list scheduling of descendant training.
//! * [`runtime`]: a discrete-event multi-model workload simulator.
//!
//! File formats, wall-clock timing and the command-line tool live in the
//! companion `legodnn` crate.

#![no_std]
// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod blockify;
pub mod exchange;
pub mod instances;
pub mod latency;
pub mod lp;
pub mod optimizer;
pub mod profile;
pub mod runtime;
pub mod schedule;

pub use blockify::{BlockPartition, LayerGraph, LayerKind};
pub use exchange::{ExchangeCostModel, ExchangePlan};
pub use latency::LatencyObservation;
pub use lp::{LpProblem, LpSolution, LpStatus};
pub use optimizer::{DnnRequest, ObjectiveMode, ScalingDecision, ScalingRequest};
pub use profile::{BlockProfile, DescendantProfile, DnnProfile, Selection};
pub use schedule::{Policy, ScheduleResult, TrainJob};
