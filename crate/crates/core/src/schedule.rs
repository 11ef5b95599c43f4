//! Offline scheduling of descendant re-training under a memory cap.
//!
//! Jobs are queued in policy order. Whenever memory frees up, the queue is
//! scanned front to back and every job that fits is started; nothing is
//! preempted. Time is in abstract units.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Reverse;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::profile::DnnProfile;

/// Bytes of demand per unit of default training duration.
pub const BYTES_PER_TIME_UNIT: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrainJob {
    pub block_id: usize,
    pub descendant_index: usize,
    pub memory_demand: u64,
    pub duration: u64,
}

impl TrainJob {
    /// A job whose duration is proportional to its demand.
    pub fn with_default_duration(block_id: usize, descendant_index: usize, memory_demand: u64) -> Self {
        TrainJob {
            block_id,
            descendant_index,
            memory_demand,
            duration: default_duration(memory_demand),
        }
    }
}

/// One time unit per started MiB of demand.
pub fn default_duration(memory_demand: u64) -> u64 {
    memory_demand.div_ceil(BYTES_PER_TIME_UNIT).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    SmallestFirst,
    LargestFirst,
    Random { seed: u64 },
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::SmallestFirst => "smallest_first",
            Policy::LargestFirst => "largest_first",
            Policy::Random { .. } => "random",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Random { seed } => write!(f, "random({seed})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledJob {
    /// Position of the job in the input list.
    pub job: usize,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleResult {
    pub policy: Policy,
    pub makespan: u64,
    /// In start order; ties by queue position.
    pub timeline: Vec<ScheduledJob>,
    pub peak_concurrency: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("job {job} needs {demand} bytes, capacity is {capacity}")]
    ExceedsCapacity { job: usize, demand: u64, capacity: u64 },
    #[error("job {job} has zero memory demand")]
    ZeroDemand { job: usize },
    #[error("job {job} has zero duration")]
    ZeroDuration { job: usize },
}

/// Queue order of `jobs` under `policy`, as input positions.
pub fn queue_order(jobs: &[TrainJob], policy: Policy) -> Vec<usize> {
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    match policy {
        Policy::SmallestFirst => order.sort_by_key(|&k| (jobs[k].memory_demand, k)),
        Policy::LargestFirst => order.sort_by_key(|&k| (Reverse(jobs[k].memory_demand), k)),
        Policy::Random { seed } => order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
    }
    order
}

pub fn schedule(
    jobs: &[TrainJob],
    memory_capacity: u64,
    policy: Policy,
) -> Result<ScheduleResult, ScheduleError> {
    for (k, job) in jobs.iter().enumerate() {
        if job.memory_demand == 0 {
            return Err(ScheduleError::ZeroDemand { job: k });
        }
        if job.duration == 0 {
            return Err(ScheduleError::ZeroDuration { job: k });
        }
        if job.memory_demand > memory_capacity {
            return Err(ScheduleError::ExceedsCapacity {
                job: k,
                demand: job.memory_demand,
                capacity: memory_capacity,
            });
        }
    }
    let mut queue = queue_order(jobs, policy);
    let mut running: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    let mut free = memory_capacity;
    let mut now = 0;
    let mut timeline = Vec::with_capacity(jobs.len());
    let mut peak = 0;
    while !queue.is_empty() {
        queue.retain(|&k| {
            let job = &jobs[k];
            if job.memory_demand > free {
                return true;
            }
            free -= job.memory_demand;
            running.push(Reverse((now + job.duration, k)));
            timeline.push(ScheduledJob {
                job: k,
                start: now,
                end: now + job.duration,
            });
            false
        });
        peak = peak.max(running.len());
        if queue.is_empty() {
            break;
        }
        // Advance to the next completion and release everything ending then.
        let Reverse((t, _)) = *running.peek().expect("a waiting job implies a running one");
        now = t;
        while let Some(&Reverse((end, k))) = running.peek() {
            if end != now {
                break;
            }
            running.pop();
            free += jobs[k].memory_demand;
        }
    }
    let makespan = timeline.iter().map(|s| s.end).max().unwrap_or(0);
    Ok(ScheduleResult {
        policy,
        makespan,
        timeline,
        peak_concurrency: peak,
    })
}

/// One training job per non-original descendant of every block. Demand is
/// the descendant's size plus the original block it is distilled from.
pub fn jobs_from_profile(profile: &DnnProfile) -> Vec<TrainJob> {
    profile
        .blocks
        .iter()
        .flat_map(|block| {
            block.descendants.iter().skip(1).map(move |d| {
                TrainJob::with_default_duration(
                    block.block_id,
                    d.descendant_index,
                    block.original_size_bytes + d.size_bytes,
                )
            })
        })
        .collect()
}

/// A broken schedule invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleViolation {
    MissingJob(usize),
    WrongDuration(usize),
    OverCapacity { at: u64, used: u64 },
    /// A queued job fitted in free memory at `at` but was not started.
    Idle { at: u64, job: usize },
}

/// Checks capacity at every instant, durations, and that no job that fits
/// waits while memory is free.
pub fn check_schedule(
    jobs: &[TrainJob],
    memory_capacity: u64,
    result: &ScheduleResult,
) -> Vec<ScheduleViolation> {
    let mut violations = Vec::new();
    let mut start_of = alloc::vec![None; jobs.len()];
    for s in &result.timeline {
        if s.end - s.start != jobs[s.job].duration {
            violations.push(ScheduleViolation::WrongDuration(s.job));
        }
        start_of[s.job] = Some(*s);
    }
    for (k, s) in start_of.iter().enumerate() {
        if s.is_none() {
            violations.push(ScheduleViolation::MissingJob(k));
        }
    }
    let mut instants: Vec<u64> = result
        .timeline
        .iter()
        .flat_map(|s| [s.start, s.end])
        .collect();
    instants.sort_unstable();
    instants.dedup();
    for &t in &instants {
        let used: u64 = result
            .timeline
            .iter()
            .filter(|s| s.start <= t && t < s.end)
            .map(|s| jobs[s.job].memory_demand)
            .sum();
        if used > memory_capacity {
            violations.push(ScheduleViolation::OverCapacity { at: t, used });
        }
        let free = memory_capacity.saturating_sub(used);
        let waiting = result
            .timeline
            .iter()
            .filter(|s| s.start > t && jobs[s.job].memory_demand <= free)
            .min_by_key(|s| s.job);
        if let Some(s) = waiting {
            violations.push(ScheduleViolation::Idle { at: t, job: s.job });
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::generate_synthetic;

    fn equal(demands: &[u64], d: u64) -> Vec<TrainJob> {
        demands
            .iter()
            .enumerate()
            .map(|(k, &m)| TrainJob {
                block_id: k + 1,
                descendant_index: 1,
                memory_demand: m,
                duration: d,
            })
            .collect()
    }

    const POLICIES: [Policy; 4] = [
        Policy::SmallestFirst,
        Policy::LargestFirst,
        Policy::Random { seed: 1 },
        Policy::Random { seed: 2 },
    ];

    #[test]
    fn symmetric_packing() {
        let jobs = equal(&[2, 2, 2, 2], 5);
        for p in POLICIES {
            let r = schedule(&jobs, 4, p).unwrap();
            assert_eq!(r.makespan, 10, "{p}");
            assert_eq!(r.peak_concurrency, 2);
            assert!(check_schedule(&jobs, 4, &r).is_empty());
        }
    }

    #[test]
    fn one_large_three_small() {
        // Hand-simulated: smallest-first co-runs the three small jobs then the
        // large one; largest-first runs the large job with one small job, then
        // the remaining two.
        let jobs = equal(&[9, 1, 1, 1], 3);
        let sf = schedule(&jobs, 10, Policy::SmallestFirst).unwrap();
        let lf = schedule(&jobs, 10, Policy::LargestFirst).unwrap();
        assert_eq!((sf.makespan, lf.makespan), (6, 6));
        assert_eq!((sf.peak_concurrency, lf.peak_concurrency), (3, 2));

        let jobs = equal(&[9, 2, 2, 2], 3);
        let sf = schedule(&jobs, 10, Policy::SmallestFirst).unwrap();
        let lf = schedule(&jobs, 10, Policy::LargestFirst).unwrap();
        assert_eq!((sf.makespan, lf.makespan), (6, 6));
        assert_eq!((sf.peak_concurrency, lf.peak_concurrency), (3, 3));
        assert_eq!(
            lf.timeline,
            [
                ScheduledJob { job: 0, start: 0, end: 3 },
                ScheduledJob { job: 1, start: 3, end: 6 },
                ScheduledJob { job: 2, start: 3, end: 6 },
                ScheduledJob { job: 3, start: 3, end: 6 },
            ]
        );
    }

    #[test]
    fn backfills_past_a_blocked_head() {
        // Head of the queue (6) does not fit next to the running 5, the 3
        // behind it does.
        let jobs = equal(&[5, 6, 3], 4);
        let r = schedule(&jobs, 10, Policy::Random { seed: 0 }).unwrap();
        assert!(check_schedule(&jobs, 10, &r).is_empty());
        let r = schedule(&jobs, 10, Policy::SmallestFirst).unwrap();
        // 3 and 5 start together, 6 waits for both.
        assert_eq!(r.makespan, 8);
        assert!(check_schedule(&jobs, 10, &r).is_empty());
    }

    #[test]
    fn errors() {
        assert_eq!(
            schedule(&equal(&[5, 11], 1), 10, Policy::SmallestFirst),
            Err(ScheduleError::ExceedsCapacity {
                job: 1,
                demand: 11,
                capacity: 10
            })
        );
        assert!(schedule(&equal(&[0], 1), 10, Policy::SmallestFirst).is_err());
        assert!(schedule(&equal(&[1], 0), 10, Policy::SmallestFirst).is_err());
        let empty = schedule(&[], 10, Policy::LargestFirst).unwrap();
        assert_eq!((empty.makespan, empty.peak_concurrency), (0, 0));
    }

    #[test]
    fn random_policy_is_seeded() {
        let jobs = jobs_from_profile(&generate_synthetic(8, 5, 3));
        let a = queue_order(&jobs, Policy::Random { seed: 9 });
        assert_eq!(a, queue_order(&jobs, Policy::Random { seed: 9 }));
        assert_ne!(a, queue_order(&jobs, Policy::Random { seed: 10 }));
    }

    #[test]
    fn profile_jobs() {
        let p = generate_synthetic(8, 5, 3);
        let jobs = jobs_from_profile(&p);
        assert_eq!(jobs.len(), 40);
        let j = jobs[7];
        assert_eq!((j.block_id, j.descendant_index), (2, 3));
        assert_eq!(
            j.memory_demand,
            p.blocks[1].original_size_bytes + p.blocks[1].descendants[3].size_bytes
        );
        assert_eq!(j.duration, default_duration(j.memory_demand));
        assert_eq!(default_duration(1), 1);
        assert_eq!(default_duration(BYTES_PER_TIME_UNIT + 1), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn instance() -> impl Strategy<Value = (Vec<TrainJob>, u64, Policy)> {
            let job = (1u64..50, 1u64..20);
            (
                proptest::collection::vec(job, 0..25),
                0u64..40,
                prop_oneof![
                    Just(Policy::SmallestFirst),
                    Just(Policy::LargestFirst),
                    any::<u64>().prop_map(|seed| Policy::Random { seed }),
                ],
            )
                .prop_map(|(raw, slack, policy)| {
                    let jobs: Vec<TrainJob> = raw
                        .iter()
                        .enumerate()
                        .map(|(k, &(m, d))| TrainJob {
                            block_id: k + 1,
                            descendant_index: 1,
                            memory_demand: m,
                            duration: d,
                        })
                        .collect();
                    let biggest = jobs.iter().map(|j| j.memory_demand).max().unwrap_or(1);
                    (jobs, biggest + slack, policy)
                })
        }

        proptest! {
            #[test]
            fn invariants((jobs, cap, policy) in instance()) {
                let r = schedule(&jobs, cap, policy).unwrap();
                prop_assert!(check_schedule(&jobs, cap, &r).is_empty());
                prop_assert_eq!(r.timeline.len(), jobs.len());
                let longest = jobs.iter().map(|j| j.duration).max().unwrap_or(0);
                prop_assert!(r.makespan >= longest);
                let work: u64 = jobs.iter().map(|j| j.duration).sum();
                if r.peak_concurrency > 0 {
                    prop_assert!(r.makespan * r.peak_concurrency as u64 >= work);
                }
                let area: u64 = jobs.iter().map(|j| j.duration * j.memory_demand).sum();
                prop_assert!(r.makespan * cap >= area);
                prop_assert_eq!(&r, &schedule(&jobs, cap, policy).unwrap());
            }
        }
    }
}
