//! Random scaling requests for tests, benchmarks and demos.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::latency::latencies_from_original;
use crate::optimizer::{DnnRequest, ObjectiveMode, ScalingRequest, DEFAULT_SIGMA};
use crate::profile::{generate_synthetic, joint_scaling_space, DnnProfile};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceShape {
    pub dnns: usize,
    /// Blocks per model are drawn from `1..=max_blocks`.
    pub max_blocks: usize,
    /// Descendants per block (besides the original) from `0..=max_descendants`.
    pub max_descendants: usize,
    /// Descendants are trimmed until the joint space is at most this.
    pub max_space: u128,
    /// Where budgets sit between the tightest and loosest meaningful value,
    /// drawn uniformly from this range; below 0 can be infeasible.
    pub tightness: (f64, f64),
}

impl Default for InstanceShape {
    fn default() -> Self {
        InstanceShape {
            dnns: 1,
            max_blocks: 5,
            max_descendants: 4,
            max_space: 100_000,
            tightness: (0.0, 1.0),
        }
    }
}

/// A max-accuracy request drawn deterministically from `seed`.
///
/// Each block's original latency is proportional to its size with a
/// per-block speed factor, and descendants follow the size-proportional
/// latency model.
pub fn random_request(seed: u64, shape: &InstanceShape) -> ScalingRequest {
    assert!(shape.dnns >= 1 && shape.max_blocks >= 1 && shape.max_space >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut profiles: Vec<DnnProfile> = (0..shape.dnns)
        .map(|_| {
            let blocks = rng.random_range(1..=shape.max_blocks);
            let descendants = rng.random_range(0..=shape.max_descendants);
            generate_synthetic(blocks, descendants, rng.random())
        })
        .collect();
    shrink_to_space(&mut profiles, shape.max_space);

    let mut dnns = Vec::with_capacity(profiles.len());
    let (mut base, mut squeezed) = (0u64, 0u64);
    for (a, profile) in profiles.into_iter().enumerate() {
        let latencies: Vec<Vec<f64>> = profile
            .blocks
            .iter()
            .map(|b| {
                let us_per_byte = rng.random_range(0.5e-3..1.5e-3);
                latencies_from_original(b.original_size_bytes as f64 * us_per_byte, b)
            })
            .collect();
        let fastest: f64 = latencies
            .iter()
            .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
            .sum();
        let slowest: f64 = latencies.iter().map(|row| row[0]).sum();
        let u = draw(&mut rng, shape.tightness);
        let budget = (fastest + u * (slowest - fastest)).max(1e-3);
        base += profile.base_size_bytes;
        squeezed += profile.model_size(&profile.most_compressed_selection());
        let mut dnn = DnnRequest::new(profile, budget, latencies);
        dnn.profile.dnn_id = alloc::format!("{}-{a}", dnn.profile.dnn_id);
        dnns.push(dnn);
    }
    let u = draw(&mut rng, shape.tightness);
    let memory = squeezed as f64 + u * (base - squeezed) as f64;
    ScalingRequest {
        dnns,
        memory_budget_bytes: (libm::round(memory) as u64).max(1),
        mode: ObjectiveMode::MaxAccuracy,
        sigma: DEFAULT_SIGMA,
        node_limit: None,
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Drops the last descendant of the widest block, then whole blocks, until
/// the joint space fits.
fn shrink_to_space(profiles: &mut [DnnProfile], max_space: u128) {
    while joint_scaling_space(profiles.iter()) > max_space {
        let widest = profiles
            .iter()
            .enumerate()
            .flat_map(|(a, p)| p.blocks.iter().enumerate().map(move |(i, b)| (b.options(), a, i)))
            .filter(|&(options, _, _)| options > 1)
            .max_by(|x, y| x.0.cmp(&y.0).then(y.1.cmp(&x.1)).then(y.2.cmp(&x.2)));
        match widest {
            Some((_, a, i)) => {
                profiles[a].blocks[i].descendants.pop();
            }
            None => break,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::validate_profile;

    #[test]
    fn deterministic_and_valid() {
        let shape = InstanceShape {
            dnns: 3,
            ..InstanceShape::default()
        };
        for seed in 0..50 {
            let a = random_request(seed, &shape);
            assert_eq!(a, random_request(seed, &shape));
            a.validate().unwrap();
            for d in &a.dnns {
                validate_profile(&d.profile).unwrap();
            }
            assert!(joint_scaling_space(a.dnns.iter().map(|d| &d.profile)) <= shape.max_space);
        }
    }

    #[test]
    fn shrinking_reaches_tiny_spaces() {
        let shape = InstanceShape {
            dnns: 4,
            max_space: 16,
            ..InstanceShape::default()
        };
        let r = random_request(9, &shape);
        assert!(joint_scaling_space(r.dnns.iter().map(|d| &d.profile)) <= 16);
    }
}
