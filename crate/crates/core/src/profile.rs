//! Block and descendant profiles.
//!
//! Descendant index 0 is always the uncompressed original block, so its
//! accuracy loss, latency reduction and size reduction are all zero. Sizes are
//! integer bytes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::latency::latency_reduction;

/// Default number of representative model sparsities averaged per descendant.
pub const DEFAULT_REPRESENTATIVE_SPARSITIES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct DescendantProfile {
    pub descendant_index: usize,
    /// Accuracy loss `A_{i,j}` as a fraction of top-1 accuracy (or mAP).
    pub accuracy_loss: f64,
    pub size_bytes: u64,
    /// Latency reduction `T_{i,j}` in `[0, 1)`.
    pub latency_reduction: f64,
    /// `S_{i,j}`: size of descendant 0 minus this descendant's size.
    pub size_reduction_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockProfile {
    pub block_id: usize,
    pub original_size_bytes: u64,
    pub descendants: Vec<DescendantProfile>,
}

impl BlockProfile {
    /// Builds a block from `(accuracy_loss, size_bytes, latency_reduction)`
    /// triples, deriving indices and size reductions. The first triple is the
    /// original block.
    pub fn from_parts(block_id: usize, parts: &[(f64, u64, f64)]) -> Self {
        let original = parts.first().map_or(0, |p| p.1);
        let descendants = parts
            .iter()
            .enumerate()
            .map(|(j, &(accuracy_loss, size_bytes, latency_reduction))| DescendantProfile {
                descendant_index: j,
                accuracy_loss,
                size_bytes,
                latency_reduction,
                size_reduction_bytes: original.saturating_sub(size_bytes),
            })
            .collect();
        BlockProfile {
            block_id,
            original_size_bytes: original,
            descendants,
        }
    }

    /// Number of selectable options, `n_i + 1`.
    pub fn options(&self) -> usize {
        self.descendants.len()
    }

    /// Index of the most compressed descendant.
    pub fn most_compressed(&self) -> usize {
        self.descendants.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnnProfile {
    pub dnn_id: String,
    /// `s^base`: whole-model size before scaling, including non-block layers.
    pub base_size_bytes: u64,
    pub blocks: Vec<BlockProfile>,
}

impl DnnProfile {
    /// Bytes held by layers outside every block.
    pub fn residue_size_bytes(&self) -> u64 {
        let blocks: u64 = self.blocks.iter().map(|b| b.original_size_bytes).sum();
        self.base_size_bytes.saturating_sub(blocks)
    }

    pub fn check_selection(&self, selection: &Selection) -> Result<(), SelectionError> {
        if selection.len() != self.blocks.len() {
            return Err(SelectionError::LengthMismatch {
                expected: self.blocks.len(),
                found: selection.len(),
            });
        }
        for (i, (&j, block)) in selection.iter().zip(&self.blocks).enumerate() {
            if j >= block.options() {
                return Err(SelectionError::IndexOutOfRange {
                    block: i,
                    index: j,
                    options: block.options(),
                });
            }
        }
        Ok(())
    }

    /// Model size after scaling: `s^base - sum S_{i,j}`. Assumes a checked
    /// selection.
    pub fn model_size(&self, selection: &Selection) -> u64 {
        let reduction: u64 = selection
            .iter()
            .zip(&self.blocks)
            .map(|(&j, b)| b.descendants[j].size_reduction_bytes)
            .sum();
        self.base_size_bytes - reduction
    }

    /// Additive accuracy loss of a checked selection.
    pub fn accuracy_loss(&self, selection: &Selection) -> f64 {
        selection
            .iter()
            .zip(&self.blocks)
            .fold(0.0, |acc, (&j, b)| acc + b.descendants[j].accuracy_loss)
    }

    pub fn original_selection(&self) -> Selection {
        Selection::original(self.blocks.len())
    }

    pub fn most_compressed_selection(&self) -> Selection {
        Selection::new(self.blocks.iter().map(BlockProfile::most_compressed).collect())
    }
}

/// One descendant index per block; `choices[i] = j` selects descendant `j` of
/// block `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Selection {
    choices: Vec<usize>,
}

impl Selection {
    pub fn new(choices: Vec<usize>) -> Self {
        Selection { choices }
    }

    /// Every block at its original (index 0).
    pub fn original(blocks: usize) -> Self {
        Selection {
            choices: alloc::vec![0; blocks],
        }
    }

    pub fn choices(&self) -> &[usize] {
        &self.choices
    }

    pub fn into_choices(self) -> Vec<usize> {
        self.choices
    }
}

impl core::ops::Deref for Selection {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.choices
    }
}

impl From<Vec<usize>> for Selection {
    fn from(choices: Vec<usize>) -> Self {
        Selection { choices }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SelectionError {
    #[error("selection has {found} entries, profile has {expected} blocks")]
    LengthMismatch { expected: usize, found: usize },
    #[error("block {block}: descendant {index} out of range ({options} options)")]
    IndexOutOfRange {
        block: usize,
        index: usize,
        options: usize,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProfileError {
    #[error("no measurements")]
    NoMeasurements,
    #[error("measurement {index} = {value} outside [-1, 1]")]
    MeasurementOutOfRange { index: usize, value: f64 },
}

/// A single broken invariant, located by block position and descendant index.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoBlocks,
    ZeroBaseSize,
    BaseSmallerThanBlocks { base: u64, blocks: u64 },
    BlockIdOutOfOrder { block: usize, found: usize },
    NoDescendants { block: usize },
    OriginalSizeMismatch { block: usize, declared: u64, first: u64 },
    OriginalLoss { block: usize },
    OriginalLatency { block: usize },
    IndexMismatch { block: usize, position: usize, found: usize },
    ZeroSize { block: usize, descendant: usize },
    SizesNotDecreasing { block: usize, descendant: usize },
    LossOutOfRange { block: usize, descendant: usize, value: f64 },
    LatencyOutOfRange { block: usize, descendant: usize, value: f64 },
    SizeReductionMismatch { block: usize, descendant: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match *self {
            NoBlocks => write!(f, "profile has no blocks"),
            ZeroBaseSize => write!(f, "base size must be positive"),
            BaseSmallerThanBlocks { base, blocks } => write!(
                f,
                "base size {base} smaller than total original block size {blocks}"
            ),
            BlockIdOutOfOrder { block, found } => write!(
                f,
                "block {block}: block_id {found}, expected {}",
                block + 1
            ),
            NoDescendants { block } => write!(f, "block {block}: no descendants (original missing)"),
            OriginalSizeMismatch {
                block,
                declared,
                first,
            } => write!(
                f,
                "block {block}: original size {declared} differs from descendant 0 size {first}"
            ),
            OriginalLoss { block } => {
                write!(f, "block {block}, descendant 0: original block must have zero loss")
            }
            OriginalLatency { block } => write!(
                f,
                "block {block}, descendant 0: original block must have zero latency reduction"
            ),
            IndexMismatch {
                block,
                position,
                found,
            } => write!(
                f,
                "block {block}, descendant {position}: index field says {found}"
            ),
            ZeroSize { block, descendant } => {
                write!(f, "block {block}, descendant {descendant}: size must be positive")
            }
            SizesNotDecreasing { block, descendant } => {
                write!(f, "block {block}, descendant {descendant}: sizes not decreasing")
            }
            LossOutOfRange {
                block,
                descendant,
                value,
            } => write!(
                f,
                "block {block}, descendant {descendant}: accuracy loss {value} outside [0, 1]"
            ),
            LatencyOutOfRange {
                block,
                descendant,
                value,
            } => write!(
                f,
                "block {block}, descendant {descendant}: latency reduction {value} outside [0, 1)"
            ),
            SizeReductionMismatch { block, descendant } => write!(
                f,
                "block {block}, descendant {descendant}: size reduction inconsistent with sizes"
            ),
        }
    }
}

/// Every violation found in a profile.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{} profile violation(s): {}", .0.len(), join(.0))]
pub struct ValidationErrors(pub Vec<Violation>);

fn join(violations: &[Violation]) -> String {
    let mut out = String::new();
    for (k, v) in violations.iter().enumerate() {
        if k > 0 {
            out.push_str("; ");
        }
        out.push_str(&format!("{v}"));
    }
    out
}

pub fn validate_profile(profile: &DnnProfile) -> Result<(), ValidationErrors> {
    let mut out = Vec::new();
    if profile.blocks.is_empty() {
        out.push(Violation::NoBlocks);
    }
    if profile.base_size_bytes == 0 {
        out.push(Violation::ZeroBaseSize);
    }
    let blocks_total: u64 = profile.blocks.iter().map(|b| b.original_size_bytes).sum();
    if profile.base_size_bytes < blocks_total {
        out.push(Violation::BaseSmallerThanBlocks {
            base: profile.base_size_bytes,
            blocks: blocks_total,
        });
    }
    for (bi, block) in profile.blocks.iter().enumerate() {
        validate_block(bi, block, &mut out);
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(ValidationErrors(out))
    }
}

fn validate_block(bi: usize, block: &BlockProfile, out: &mut Vec<Violation>) {
    if block.block_id != bi + 1 {
        out.push(Violation::BlockIdOutOfOrder {
            block: bi,
            found: block.block_id,
        });
    }
    let Some(first) = block.descendants.first() else {
        out.push(Violation::NoDescendants { block: bi });
        return;
    };
    if first.size_bytes != block.original_size_bytes {
        out.push(Violation::OriginalSizeMismatch {
            block: bi,
            declared: block.original_size_bytes,
            first: first.size_bytes,
        });
    }
    if first.accuracy_loss != 0.0 {
        out.push(Violation::OriginalLoss { block: bi });
    }
    if first.latency_reduction != 0.0 {
        out.push(Violation::OriginalLatency { block: bi });
    }
    for (j, d) in block.descendants.iter().enumerate() {
        if d.descendant_index != j {
            out.push(Violation::IndexMismatch {
                block: bi,
                position: j,
                found: d.descendant_index,
            });
        }
        if d.size_bytes == 0 {
            out.push(Violation::ZeroSize {
                block: bi,
                descendant: j,
            });
        }
        if j > 0 && d.size_bytes >= block.descendants[j - 1].size_bytes {
            out.push(Violation::SizesNotDecreasing {
                block: bi,
                descendant: j,
            });
        }
        if !(0.0..=1.0).contains(&d.accuracy_loss) {
            out.push(Violation::LossOutOfRange {
                block: bi,
                descendant: j,
                value: d.accuracy_loss,
            });
        }
        if !(0.0..1.0).contains(&d.latency_reduction) {
            out.push(Violation::LatencyOutOfRange {
                block: bi,
                descendant: j,
                value: d.latency_reduction,
            });
        }
        let expected = first.size_bytes.checked_sub(d.size_bytes);
        if expected != Some(d.size_reduction_bytes) {
            out.push(Violation::SizeReductionMismatch {
                block: bi,
                descendant: j,
            });
        }
    }
}

/// Number of distinct models reachable by block selection, `prod (n_i + 1)`.
/// Saturates at `u128::MAX`.
pub fn scaling_space_size(profile: &DnnProfile) -> u128 {
    profile
        .blocks
        .iter()
        .fold(1u128, |acc, b| acc.saturating_mul(b.options() as u128))
}

/// Joint scaling space of several models selected together.
pub fn joint_scaling_space<'a>(profiles: impl IntoIterator<Item = &'a DnnProfile>) -> u128 {
    profiles
        .into_iter()
        .fold(1u128, |acc, p| acc.saturating_mul(scaling_space_size(p)))
}

/// Mean accuracy loss over `k` profiling contexts, clamped to `[0, 1]`.
pub fn average_accuracy_loss(measurements: &[f64]) -> Result<f64, ProfileError> {
    if measurements.is_empty() {
        return Err(ProfileError::NoMeasurements);
    }
    for (index, &value) in measurements.iter().enumerate() {
        if !(-1.0..=1.0).contains(&value) {
            return Err(ProfileError::MeasurementOutOfRange { index, value });
        }
    }
    let mean = measurements.iter().sum::<f64>() / measurements.len() as f64;
    Ok(mean.clamp(0.0, 1.0))
}

/// Deterministic synthetic profile for tests and demos.
///
/// Descendant `j` of every block sits at a jittered sparsity around
/// `j / (n_descendants + 1)`; its loss grows as a power of that sparsity
/// scaled by a per-block importance, and its latency reduction follows from
/// its size. Panics when `n_blocks == 0` or `n_descendants >= 10_000`.
pub fn generate_synthetic(n_blocks: usize, n_descendants: usize, seed: u64) -> DnnProfile {
    assert!(n_blocks >= 1, "a profile needs at least one block");
    assert!(n_descendants < 10_000, "too many descendants");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots = (n_descendants + 1) as f64;
    let mut blocks = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let params: u64 = rng.random_range(50_000..=2_000_000);
        let original = params * 4;
        let importance: f64 = rng.random_range(0.01..0.25);
        let exponent: f64 = rng.random_range(1.2..3.0);
        let mut parts = Vec::with_capacity(n_descendants + 1);
        parts.push((0.0, original, 0.0));
        let mut prev_size = original;
        let mut prev_loss = 0.0f64;
        for j in 1..=n_descendants {
            let jitter: f64 = rng.random_range(-0.4..0.4);
            let sparsity = (j as f64 + jitter) / slots;
            let size = (libm::round(original as f64 * (1.0 - sparsity)) as u64)
                .min(prev_size - 1)
                .max(1);
            let loss = (importance * libm::pow(sparsity, exponent))
                .max(prev_loss)
                .min(1.0);
            let reduction = latency_reduction(original, size).expect("descendant within original");
            parts.push((loss, size, reduction));
            prev_size = size;
            prev_loss = loss;
        }
        blocks.push(BlockProfile::from_parts(b + 1, &parts));
    }
    let total: u64 = blocks.iter().map(|b| b.original_size_bytes).sum();
    let residue_fraction: f64 = rng.random_range(0.02..0.15);
    let residue = (total as f64 * residue_fraction) as u64;
    DnnProfile {
        dnn_id: format!("synthetic-{seed}"),
        base_size_bytes: total + residue,
        blocks,
    }
}

/// Every selection of `profile` in lexicographic order. Intended for small
/// profiles in tests and oracles.
pub fn enumerate_selections(profile: &DnnProfile) -> Vec<Selection> {
    let mut out = Vec::new();
    let mut current = alloc::vec![0usize; profile.blocks.len()];
    loop {
        out.push(Selection::new(current.clone()));
        let mut k = current.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            current[k] += 1;
            if current[k] < profile.blocks[k].options() {
                break;
            }
            current[k] = 0;
        }
    }
}
