//! Block exchange plans.
//!
//! Every descendant of a block keeps the block's input and output shapes, so
//! moving between two selections only swaps the blocks whose descendant
//! changed. Whole-model and nested-page baselines are accounted here too so
//! the simulator can compare them on the same decisions.

use alloc::vec::Vec;

use crate::profile::{DnnProfile, Selection, SelectionError};

const BYTES_PER_MB: f64 = 1_000_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Swap {
    pub block_id: usize,
    pub from_descendant: usize,
    pub to_descendant: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExchangePlan {
    pub swaps: Vec<Swap>,
    /// Bytes paged in (incoming descendants).
    pub bytes_in: u64,
    /// Bytes paged out (outgoing descendants).
    pub bytes_out: u64,
}

impl ExchangePlan {
    pub fn total_bytes(&self) -> u64 {
        self.bytes_in + self.bytes_out
    }

    pub fn is_empty(&self) -> bool {
        self.swaps.is_empty() && self.total_bytes() == 0
    }

    /// Energy proxy in joules.
    pub fn energy_joules(&self, costs: &ExchangeCostModel) -> f64 {
        costs.joules_per_mb * self.total_bytes() as f64 / BYTES_PER_MB
    }
}

/// Constants for turning exchanged bytes into comparable costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExchangeCostModel {
    /// Joules per MB paged in or out.
    pub joules_per_mb: f64,
    /// Byte-equivalent charged per swapped block by the nested-page baseline
    /// for rebuilding layers from loaded pages.
    pub reconstruction_bytes_per_swap: u64,
}

impl Default for ExchangeCostModel {
    fn default() -> Self {
        ExchangeCostModel {
            joules_per_mb: 0.005,
            reconstruction_bytes_per_swap: 1 << 20,
        }
    }
}

impl ExchangeCostModel {
    /// Cost of the same swaps under the nested-page baseline: identical paging
    /// plus a per-swap reconstruction overhead.
    pub fn nested_page_bytes(&self, plan: &ExchangePlan) -> u64 {
        plan.total_bytes() + self.reconstruction_bytes_per_swap * plan.swaps.len() as u64
    }
}

/// Swaps needed to move `profile` from `current` to `target`.
pub fn diff(
    current: &Selection,
    target: &Selection,
    profile: &DnnProfile,
) -> Result<ExchangePlan, SelectionError> {
    if current.len() != target.len() {
        return Err(SelectionError::LengthMismatch {
            expected: current.len(),
            found: target.len(),
        });
    }
    profile.check_selection(current)?;
    profile.check_selection(target)?;
    let mut plan = ExchangePlan::default();
    for ((&from, &to), block) in current.iter().zip(target.iter()).zip(&profile.blocks) {
        if from == to {
            continue;
        }
        plan.swaps.push(Swap {
            block_id: block.block_id,
            from_descendant: from,
            to_descendant: to,
        });
        plan.bytes_out += block.descendants[from].size_bytes;
        plan.bytes_in += block.descendants[to].size_bytes;
    }
    Ok(plan)
}

/// Replacing one whole model by another: everything out, everything in.
pub fn whole_model_cost(current_model_size: u64, target_model_size: u64) -> ExchangePlan {
    ExchangePlan {
        swaps: Vec::new(),
        bytes_in: target_model_size,
        bytes_out: current_model_size,
    }
}

/// Whole-model cost of moving between two selections of the same profile.
pub fn whole_model_diff(
    current: &Selection,
    target: &Selection,
    profile: &DnnProfile,
) -> Result<ExchangePlan, SelectionError> {
    profile.check_selection(current)?;
    profile.check_selection(target)?;
    if current == target {
        return Ok(ExchangePlan::default());
    }
    Ok(whole_model_cost(
        profile.model_size(current),
        profile.model_size(target),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{generate_synthetic, BlockProfile};
    use alloc::vec;

    fn two_blocks() -> DnnProfile {
        let b = |id| {
            BlockProfile::from_parts(
                id,
                &[(0.0, 400, 0.0), (0.1, 300, 0.25), (0.2, 200, 0.5), (0.3, 100, 0.75)],
            )
        };
        DnnProfile {
            dnn_id: "t".into(),
            base_size_bytes: 1000,
            blocks: vec![b(1), b(2)],
        }
    }

    #[test]
    fn single_changed_block() {
        let p = two_blocks();
        let plan = diff(&vec![0, 3].into(), &vec![0, 1].into(), &p).unwrap();
        assert_eq!(
            plan.swaps,
            [Swap {
                block_id: 2,
                from_descendant: 3,
                to_descendant: 1
            }]
        );
        assert_eq!(plan.bytes_in, 300);
        assert_eq!(plan.bytes_out, 100);
    }

    #[test]
    fn identity_is_empty() {
        let p = two_blocks();
        let s: Selection = vec![2, 1].into();
        let plan = diff(&s, &s, &p).unwrap();
        assert!(plan.is_empty());
        assert_eq!(plan.energy_joules(&ExchangeCostModel::default()), 0.0);
    }

    #[test]
    fn mismatched_lengths() {
        let p = two_blocks();
        assert!(diff(&vec![0].into(), &vec![0, 1].into(), &p).is_err());
        assert!(diff(&vec![0, 4].into(), &vec![0, 1].into(), &p).is_err());
    }

    #[test]
    fn whole_model_examples() {
        let mb = 1_000_000;
        let c = whole_model_cost(50 * mb, 30 * mb);
        assert_eq!((c.bytes_in, c.bytes_out), (30 * mb, 50 * mb));
        let c = whole_model_cost(7, 7);
        assert_eq!(c.bytes_in, c.bytes_out);
    }

    #[test]
    fn block_swap_beats_full_swap_on_five_blocks() {
        let p = generate_synthetic(5, 5, 3);
        let a: Selection = vec![0, 1, 2, 3, 4].into();
        let b: Selection = vec![0, 1, 5, 3, 2].into();
        let plan = diff(&a, &b, &p).unwrap();
        assert_eq!(plan.swaps.len(), 2);
        let full = p.model_size(&a) + p.model_size(&b);
        let blocks = p.blocks[2].descendants[2].size_bytes
            + p.blocks[2].descendants[5].size_bytes
            + p.blocks[4].descendants[4].size_bytes
            + p.blocks[4].descendants[2].size_bytes;
        assert_eq!(plan.total_bytes(), blocks);
        assert!(plan.total_bytes() < full);
        assert_eq!(whole_model_diff(&a, &b, &p).unwrap().total_bytes(), full);
    }

    #[test]
    fn energy_and_nested_costs_are_linear() {
        let costs = ExchangeCostModel {
            joules_per_mb: 0.5,
            reconstruction_bytes_per_swap: 10,
        };
        let p = two_blocks();
        let plan = diff(&vec![0, 0].into(), &vec![1, 2].into(), &p).unwrap();
        assert_eq!(plan.total_bytes(), 800 + 500);
        assert_eq!(costs.nested_page_bytes(&plan), 1300 + 20);
        assert!((plan.energy_joules(&costs) - 0.5 * 1300.0 / 1e6).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pair() -> impl Strategy<Value = (DnnProfile, Selection, Selection)> {
            (any::<u64>(), 1usize..8, 1usize..6).prop_flat_map(|(seed, n, d)| {
                let sel = proptest::collection::vec(0..=d, n);
                (Just(generate_synthetic(n, d, seed)), sel.clone(), sel)
                    .prop_map(|(p, a, b)| (p, a.into(), b.into()))
            })
        }

        proptest! {
            #[test]
            fn symmetric_and_dominated((p, a, b) in pair()) {
                let fwd = diff(&a, &b, &p).unwrap();
                let back = diff(&b, &a, &p).unwrap();
                prop_assert_eq!(fwd.bytes_in, back.bytes_out);
                prop_assert_eq!(fwd.bytes_out, back.bytes_in);
                // Applying the swaps reproduces the target and back again.
                let mut s = a.clone().into_choices();
                for sw in &fwd.swaps { s[sw.block_id - 1] = sw.to_descendant; }
                prop_assert_eq!(&Selection::from(s.clone()), &b);
                for sw in &back.swaps { s[sw.block_id - 1] = sw.to_descendant; }
                prop_assert_eq!(&Selection::from(s), &a);

                let full = whole_model_cost(p.model_size(&a), p.model_size(&b)).total_bytes();
                prop_assert!(fwd.total_bytes() <= full);
                let all_change = a.iter().zip(b.iter()).all(|(x, y)| x != y);
                if fwd.total_bytes() == full {
                    prop_assert!(all_change && p.residue_size_bytes() == 0);
                }
            }
        }
    }
}
