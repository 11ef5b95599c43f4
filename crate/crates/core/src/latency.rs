//! Latency model for descendant blocks.
//!
//! A block's processing latency is taken to be proportional to its parameter
//! count, so the fraction of latency a descendant removes is
//! `T = 1 - s_desc / s_orig`. At run time the latency of whichever
//! descendant is currently deployed is observed, the original block's latency
//! is recovered from it, and every other descendant's latency follows from its
//! reduction fraction. Latencies are in microseconds.

use alloc::vec::Vec;

use crate::profile::BlockProfile;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LatencyError {
    #[error("descendant larger than original ({descendant} > {original} bytes)")]
    DescendantLarger { original: u64, descendant: u64 },
    #[error("block sizes must be positive")]
    ZeroSize,
    #[error("unknown descendant index {index} for block {block_id} ({options} options)")]
    UnknownDescendant {
        block_id: usize,
        index: usize,
        options: usize,
    },
    #[error("observation is for block {observed}, not block {block_id}")]
    BlockMismatch { observed: usize, block_id: usize },
    #[error("measured latency must be positive")]
    NonPositiveLatency,
    #[error("latency reduction {0} of the observed descendant must be in [0, 1)")]
    InvalidReduction(f64),
}

/// One latency measurement of the descendant currently running in a block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyObservation {
    pub block_id: usize,
    /// Index `v` of the deployed descendant.
    pub descendant_index: usize,
    pub measured_latency_us: f64,
}

/// Fraction of the original block's latency removed by a descendant.
pub fn latency_reduction(original_size: u64, descendant_size: u64) -> Result<f64, LatencyError> {
    if original_size == 0 || descendant_size == 0 {
        return Err(LatencyError::ZeroSize);
    }
    if descendant_size > original_size {
        return Err(LatencyError::DescendantLarger {
            original: original_size,
            descendant: descendant_size,
        });
    }
    Ok(1.0 - descendant_size as f64 / original_size as f64)
}

/// Estimates `t_{i,j}` for every descendant of `block` from one observation.
///
/// The original latency is recovered as `t_i = measured / (1 - T_v)` and each
/// descendant gets `t_i * (1 - T_j)`. The observed descendant keeps the
/// measured value exactly.
pub fn estimate_latencies(
    observation: &LatencyObservation,
    block: &BlockProfile,
) -> Result<Vec<f64>, LatencyError> {
    if observation.block_id != block.block_id {
        return Err(LatencyError::BlockMismatch {
            observed: observation.block_id,
            block_id: block.block_id,
        });
    }
    let measured = observation.measured_latency_us;
    if !(measured > 0.0) || !measured.is_finite() {
        return Err(LatencyError::NonPositiveLatency);
    }
    let v = observation.descendant_index;
    let observed = block
        .descendants
        .get(v)
        .ok_or(LatencyError::UnknownDescendant {
            block_id: block.block_id,
            index: v,
            options: block.descendants.len(),
        })?;
    let reduction = observed.latency_reduction;
    if !(0.0..1.0).contains(&reduction) {
        return Err(LatencyError::InvalidReduction(reduction));
    }
    let original = measured / (1.0 - reduction);
    Ok(block
        .descendants
        .iter()
        .enumerate()
        .map(|(j, d)| {
            if j == v {
                measured
            } else {
                original * (1.0 - d.latency_reduction)
            }
        })
        .collect())
}

/// Latencies of every descendant given the original block's latency `t_i`.
pub fn latencies_from_original(original_latency_us: f64, block: &BlockProfile) -> Vec<f64> {
    block
        .descendants
        .iter()
        .map(|d| original_latency_us * (1.0 - d.latency_reduction))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{generate_synthetic, BlockProfile};

    fn block(sizes: &[u64]) -> BlockProfile {
        let descendants = sizes
            .iter()
            .enumerate()
            .map(|(j, &s)| (j as f64 * 0.01, s, latency_reduction(sizes[0], s).unwrap()))
            .collect::<Vec<_>>();
        BlockProfile::from_parts(1, &descendants)
    }

    #[test]
    fn reduction_examples() {
        assert_eq!(latency_reduction(100, 100).unwrap(), 0.0);
        assert_eq!(latency_reduction(100, 25).unwrap(), 0.75);
        assert_eq!(latency_reduction(100, 50).unwrap(), 0.5);
        assert_eq!(
            latency_reduction(100, 101),
            Err(LatencyError::DescendantLarger {
                original: 100,
                descendant: 101
            })
        );
        assert_eq!(latency_reduction(100, 0), Err(LatencyError::ZeroSize));
    }

    #[test]
    fn two_step_estimation() {
        // T = [0, 0.5, 0.75]
        let b = block(&[100, 50, 25]);
        let obs = LatencyObservation {
            block_id: 1,
            descendant_index: 1,
            measured_latency_us: 80.0,
        };
        let t = estimate_latencies(&obs, &b).unwrap();
        assert_eq!(t, [160.0, 80.0, 40.0]);

        let obs = LatencyObservation {
            block_id: 1,
            descendant_index: 0,
            measured_latency_us: 100.0,
        };
        let t = estimate_latencies(&obs, &b).unwrap();
        assert_eq!(t[0], 100.0);
    }

    #[test]
    fn estimation_errors() {
        let b = block(&[100, 50]);
        let mut obs = LatencyObservation {
            block_id: 1,
            descendant_index: 2,
            measured_latency_us: 10.0,
        };
        assert!(matches!(
            estimate_latencies(&obs, &b),
            Err(LatencyError::UnknownDescendant { index: 2, .. })
        ));
        obs.descendant_index = 0;
        obs.measured_latency_us = 0.0;
        assert_eq!(
            estimate_latencies(&obs, &b),
            Err(LatencyError::NonPositiveLatency)
        );
        obs.measured_latency_us = 5.0;
        obs.block_id = 2;
        assert!(matches!(
            estimate_latencies(&obs, &b),
            Err(LatencyError::BlockMismatch { .. })
        ));
    }

    #[test]
    fn round_trip_through_other_descendant() {
        for seed in 0..200 {
            let profile = generate_synthetic(4, 5, seed);
            for b in &profile.blocks {
                for v in 0..b.descendants.len() {
                    let measured = 1_000.0 + seed as f64 * 37.0;
                    let obs = LatencyObservation {
                        block_id: b.block_id,
                        descendant_index: v,
                        measured_latency_us: measured,
                    };
                    let t = estimate_latencies(&obs, b).unwrap();
                    for (j, &tj) in t.iter().enumerate() {
                        let back = LatencyObservation {
                            block_id: b.block_id,
                            descendant_index: j,
                            measured_latency_us: tj,
                        };
                        let again = estimate_latencies(&back, b).unwrap();
                        assert!((again[v] - measured).abs() < 1.0);
                    }
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn monotone_positive_and_scale_invariant(
                seed in 0u64..10_000,
                measured in 1.0f64..1e7,
                scale in 0.1f64..100.0,
            ) {
                let profile = generate_synthetic(3, 6, seed);
                for b in &profile.blocks {
                    let v = (seed as usize) % b.descendants.len();
                    let obs = LatencyObservation { block_id: b.block_id, descendant_index: v, measured_latency_us: measured };
                    let t = estimate_latencies(&obs, b).unwrap();
                    prop_assert!(t.iter().all(|&x| x > 0.0));
                    // Sizes strictly decrease with j, so latencies must too.
                    for w in t.windows(2) {
                        prop_assert!(w[0] > w[1]);
                    }
                    let scaled = LatencyObservation { measured_latency_us: measured * scale, ..obs };
                    let ts = estimate_latencies(&scaled, b).unwrap();
                    for (a, b) in t.iter().zip(&ts) {
                        prop_assert!((a * scale - b).abs() <= 1e-9 * b.abs());
                    }
                }
            }
        }
    }
}
