//! End-to-end use of the public API: a layer graph is cut into blocks, the
//! blocks get descendants, run-time latencies are estimated from one
//! measurement, a selection is solved and reached by swapping blocks.

use legodnn_core::blockify::{check_partition, elementary_blocks, merge_blocks, Layer};
use legodnn_core::exchange::diff;
use legodnn_core::latency::estimate_latencies;
use legodnn_core::optimizer::{self, DnnRequest, ObjectiveMode, ScalingRequest};
use legodnn_core::profile::{enumerate_selections, validate_profile};
use legodnn_core::{BlockProfile, DnnProfile, LatencyObservation, LayerGraph, LayerKind, Selection};

fn layer(id: &str, kind: LayerKind, params: u64) -> Layer {
    Layer {
        id: id.into(),
        kind,
        param_count: params,
    }
}

/// Stem, two residual stages and a classifier.
fn residual_net() -> LayerGraph {
    use LayerKind::*;
    let layers = vec![
        layer("stem", Conv, 1_000),
        layer("stem_relu", NonConv, 0),
        layer("s1_a", Conv, 20_000),
        layer("s1_b", Conv, 20_000),
        layer("s1_add", NonConv, 0),
        layer("s2_a", Conv, 80_000),
        layer("s2_b", Conv, 80_000),
        layer("s2_proj", Conv, 8_000),
        layer("s2_add", NonConv, 0),
        layer("pool", NonConv, 0),
        layer("fc", NonConv, 5_000),
    ];
    let edges = [
        ("stem", "stem_relu"),
        ("stem_relu", "s1_a"),
        ("s1_a", "s1_b"),
        ("s1_b", "s1_add"),
        ("stem_relu", "s1_add"),
        ("s1_add", "s2_a"),
        ("s2_a", "s2_b"),
        ("s2_b", "s2_add"),
        ("s1_add", "s2_proj"),
        ("s2_proj", "s2_add"),
        ("s2_add", "pool"),
        ("pool", "fc"),
    ];
    LayerGraph::from_ids(layers, &edges).unwrap()
}

fn ids<'a>(graph: &'a LayerGraph, layers: &[usize]) -> Vec<&'a str> {
    layers.iter().map(|&k| graph.layers()[k].id.as_str()).collect()
}

#[test]
fn residual_stages_become_blocks() {
    let graph = residual_net();
    let partition = elementary_blocks(&graph).unwrap();
    check_partition(&graph, &partition).unwrap();
    let blocks: Vec<Vec<&str>> = partition.blocks.iter().map(|b| ids(&graph, &b.layers)).collect();
    // Each stage ends where the graph narrows back to one tensor.
    assert!(blocks.iter().any(|b| b.contains(&"s1_a") && b.contains(&"s1_b") && b.contains(&"s1_add")));
    assert!(blocks
        .iter()
        .any(|b| b.contains(&"s2_a") && b.contains(&"s2_proj") && b.contains(&"s2_add")));
    let covered: usize = partition.blocks.iter().map(|b| b.layers.len()).sum::<usize>() + partition.residue.len();
    assert_eq!(covered, graph.layers().len());

    let merged = merge_blocks(&partition, 2).unwrap();
    check_partition(&graph, &merged).unwrap();
    assert_eq!(merged.blocks.len(), 2);
    let params: u64 = merged.blocks.iter().map(|b| b.param_count).sum();
    let total: u64 = partition.blocks.iter().map(|b| b.param_count).sum();
    assert_eq!(params, total);
}

/// Descendants at sparsities 0, 0.25, 0.5, 0.75 with losses growing with
/// each block's share of parameters.
fn profile_from_blocks(param_counts: &[u64], residue_params: u64) -> DnnProfile {
    let total: u64 = param_counts.iter().sum();
    let blocks = param_counts
        .iter()
        .enumerate()
        .map(|(i, &params)| {
            let original = params * 4;
            let weight = params as f64 / total as f64;
            let parts: Vec<(f64, u64, f64)> = [0.0, 0.25, 0.5, 0.75]
                .iter()
                .map(|&sparsity: &f64| {
                    let size = (original as f64 * (1.0 - sparsity)).round() as u64;
                    (0.08 * weight * sparsity.powi(2), size, sparsity)
                })
                .collect();
            BlockProfile::from_parts(i + 1, &parts)
        })
        .collect();
    DnnProfile {
        dnn_id: "residual-net".into(),
        base_size_bytes: total * 4 + residue_params * 4,
        blocks,
    }
}

#[test]
fn graph_to_decision_to_swaps() {
    let graph = residual_net();
    let partition = elementary_blocks(&graph).unwrap();
    let params: Vec<u64> = partition.blocks.iter().map(|b| b.param_count).collect();
    let residue: u64 = partition.residue.iter().map(|&k| graph.layers()[k].param_count).sum();
    let profile = profile_from_blocks(&params, residue);
    validate_profile(&profile).unwrap();

    // Deployed: every block at sparsity 0.25, measured at 1 us per 100 B.
    let deployed = Selection::new(vec![1; profile.blocks.len()]);
    let latencies: Vec<Vec<f64>> = profile
        .blocks
        .iter()
        .map(|b| {
            let observation = LatencyObservation {
                block_id: b.block_id,
                descendant_index: 1,
                measured_latency_us: b.descendants[1].size_bytes as f64 / 100.0,
            };
            let row = estimate_latencies(&observation, b).unwrap();
            // Original latency recovered from the observed descendant.
            let original = b.descendants[1].size_bytes as f64 / 100.0 / 0.75;
            for (j, d) in b.descendants.iter().enumerate() {
                assert!((row[j] - original * (1.0 - d.latency_reduction)).abs() < 1e-9);
            }
            row
        })
        .collect();
    let slowest: f64 = latencies.iter().map(|r| r[0]).sum();
    let memory = profile.base_size_bytes * 7 / 10;
    let mut dnn = DnnRequest::new(profile.clone(), slowest * 0.6, latencies.clone());
    dnn.current = Some(deployed.clone());
    let request = ScalingRequest::new(vec![dnn], memory, ObjectiveMode::MaxAccuracy).with_sigma(0.0);
    let decision = optimizer::solve(&request).unwrap();

    // Independent exhaustive optimum.
    let best = enumerate_selections(&profile)
        .into_iter()
        .filter(|s| {
            let t: f64 = s.iter().enumerate().map(|(i, &j)| latencies[i][j]).sum();
            t <= slowest * 0.6 + 1e-6 && profile.model_size(s) <= memory
        })
        .map(|s| (profile.accuracy_loss(&s), s))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();
    assert!((decision.objective_value - best.0).abs() < 1e-12);
    optimizer::verify_decision(&request, &decision.selections).unwrap();

    // Applying the swaps to the deployed selection reaches the target.
    let target = &decision.selections[0];
    let plan = diff(&deployed, target, &profile).unwrap();
    let mut running = deployed.clone().into_choices();
    for swap in &plan.swaps {
        let k = swap.block_id - 1;
        assert_eq!(running[k], swap.from_descendant);
        running[k] = swap.to_descendant;
    }
    assert_eq!(&Selection::new(running), target);
    let moved: u64 = plan
        .swaps
        .iter()
        .map(|s| {
            let b = &profile.blocks[s.block_id - 1];
            b.descendants[s.from_descendant].size_bytes + b.descendants[s.to_descendant].size_bytes
        })
        .sum();
    assert_eq!(plan.total_bytes(), moved);
    let whole = profile.model_size(&deployed) + profile.model_size(target);
    if plan.swaps.len() == profile.blocks.len() && profile.residue_size_bytes() == 0 {
        assert_eq!(plan.total_bytes(), whole);
    } else {
        assert!(plan.total_bytes() < whole);
    }
}

#[test]
fn shared_memory_couples_models() {
    // Alone a model keeps the original; two copies under one shared budget
    // must give up some accuracy.
    let profile = profile_from_blocks(&[10_000, 40_000], 1_000);
    let latencies: Vec<Vec<f64>> = profile
        .blocks
        .iter()
        .map(|b| b.descendants.iter().map(|d| d.size_bytes as f64).collect())
        .collect();
    let dnn = |id: &str| {
        let mut p = profile.clone();
        p.dnn_id = id.into();
        DnnRequest::new(p, 1e12, latencies.clone())
    };
    let one = ScalingRequest::new(vec![dnn("a")], profile.base_size_bytes, ObjectiveMode::MaxAccuracy);
    assert_eq!(optimizer::solve(&one).unwrap().objective_value, 0.0);

    let budget = profile.base_size_bytes * 2 - 40_000;
    let two = ScalingRequest::new(vec![dnn("a"), dnn("b")], budget, ObjectiveMode::MaxAccuracy).with_sigma(0.0);
    let decision = optimizer::solve(&two).unwrap();
    let exact = optimizer::oracle_solve(&two).unwrap();
    assert_eq!(decision.objective_value, exact.objective_value);
    let used: u64 = decision.selections.iter().map(|s| profile.model_size(s)).sum();
    assert!(used <= budget);
    assert!(decision.objective_value > 0.0);
}
