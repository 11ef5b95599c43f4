use super::*;
use crate::instances::{random_request, InstanceShape};
use crate::latency::latencies_from_original;
use crate::profile::{enumerate_selections, generate_synthetic, BlockProfile};
use alloc::vec;

/// Independent brute force: every joint selection, feasibility and objective
/// recomputed from the profiles, smallest objective kept (first on ties).
fn brute_force(request: &ScalingRequest) -> Option<(f64, Vec<Selection>)> {
    let per_dnn: Vec<Vec<Selection>> = request
        .dnns
        .iter()
        .map(|d| enumerate_selections(&d.profile))
        .collect();
    let mut best: Option<(f64, Vec<Selection>)> = None;
    let mut idx = vec![0usize; per_dnn.len()];
    loop {
        let sels: Vec<Selection> = idx.iter().zip(&per_dnn).map(|(&k, v)| v[k].clone()).collect();
        if let Some(obj) = evaluate(request, &sels) {
            if best.as_ref().is_none_or(|(b, _)| obj < *b - 1e-12) {
                best = Some((obj, sels));
            }
        }
        let mut a = idx.len();
        loop {
            if a == 0 {
                return best;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < per_dnn[a].len() {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Minimised objective of a joint selection, or `None` when infeasible.
fn evaluate(request: &ScalingRequest, sels: &[Selection]) -> Option<f64> {
    let mut memory = 0u64;
    let mut loss = 0.0;
    let mut obj = 0.0;
    for (d, s) in request.dnns.iter().zip(sels) {
        memory += d.profile.model_size(s);
        let mut t = 0.0;
        for (i, &j) in s.iter().enumerate() {
            let desc = &d.profile.blocks[i].descendants[j];
            t += d.latencies_us[i][j];
            loss += desc.accuracy_loss;
            obj += match request.mode {
                ObjectiveMode::MaxAccuracy => desc.accuracy_loss,
                ObjectiveMode::MinLatency { .. } => -desc.latency_reduction,
                ObjectiveMode::Balanced { lambda } => {
                    desc.accuracy_loss + lambda * d.latencies_us[i][j] / d.latency_budget_us
                }
            };
        }
        if request.mode.has_latency_rows() && t > d.latency_budget_us + 1e-6 {
            return None;
        }
    }
    if memory > request.memory_budget_bytes {
        return None;
    }
    if let ObjectiveMode::MinLatency { accuracy_budget } = request.mode {
        if loss > accuracy_budget + 1e-9 {
            return None;
        }
    }
    Some(obj)
}

fn single(profile: DnnProfile, latency_budget: f64, memory: u64) -> ScalingRequest {
    let latencies = profile
        .blocks
        .iter()
        .map(|b| latencies_from_original(b.original_size_bytes as f64 / 100.0, b))
        .collect();
    ScalingRequest::new(
        vec![DnnRequest::new(profile, latency_budget, latencies)],
        memory,
        ObjectiveMode::MaxAccuracy,
    )
}

fn block(id: usize, parts: &[(f64, u64)]) -> BlockProfile {
    let original = parts[0].1;
    let parts: Vec<(f64, u64, f64)> = parts
        .iter()
        .map(|&(loss, size)| (loss, size, 1.0 - size as f64 / original as f64))
        .collect();
    BlockProfile::from_parts(id, &parts)
}

#[test]
fn dimensions_of_two_single_descendant_blocks() {
    let p = DnnProfile {
        dnn_id: "d".into(),
        base_size_bytes: 300,
        blocks: vec![block(1, &[(0.0, 100), (0.1, 50)]), block(2, &[(0.0, 100), (0.2, 40)])],
    };
    let req = single(p, 10.0, 1000);
    let ilp = build_ilp(&req).unwrap();
    assert_eq!(ilp.problem.num_vars(), 4);
    assert_eq!(ilp.problem.equalities.len(), 2);
    assert_eq!(ilp.problem.inequalities.len(), 2);
    assert_eq!(ilp.integer_vars, [0, 1, 2, 3]);

    let mut lat = req.clone();
    lat.mode = ObjectiveMode::MinLatency {
        accuracy_budget: 0.1,
    };
    let ilp = build_ilp(&lat).unwrap();
    assert_eq!(ilp.problem.inequalities.len(), 3);
    assert_eq!(ilp.inequality_kinds[2], Constraint::Accuracy);
}

#[test]
fn two_identical_models_share_one_memory_row() {
    let p = generate_synthetic(3, 2, 5);
    let one = single(p, 1e9, u64::MAX / 4);
    let mut two = one.clone();
    two.dnns.push(one.dnns[0].clone());
    let ilp = build_ilp(&two).unwrap();
    let memory_rows = ilp
        .inequality_kinds
        .iter()
        .filter(|k| **k == Constraint::Memory)
        .count();
    assert_eq!(memory_rows, 1);
    assert_eq!(
        ilp.inequality_kinds,
        [
            Constraint::Latency { dnn: 0 },
            Constraint::Latency { dnn: 1 },
            Constraint::Memory
        ]
    );
}

#[test]
fn generous_budgets_keep_the_original() {
    let p = DnnProfile {
        dnn_id: "d".into(),
        base_size_bytes: 100,
        blocks: vec![block(1, &[(0.0, 80), (0.1, 40)])],
    };
    let req = single(p, 1e9, 1 << 40);
    let d = solve(&req).unwrap();
    assert_eq!(d.selections, [Selection::new(vec![0])]);
    assert_eq!(d.objective_value, 0.0);
    assert_eq!(d.bound_gap, 0.0);

    let p = generate_synthetic(6, 5, 1);
    let d = solve(&single(p.clone(), 1e12, 1 << 40)).unwrap();
    assert_eq!(d.selections, [p.original_selection()]);
    assert_eq!(d.objective_value, 0.0);
}

#[test]
fn three_by_three_matches_enumeration() {
    for seed in 0..40 {
        let p = generate_synthetic(3, 2, seed);
        let base = single(p.clone(), 1.0, 1);
        let lats = &base.dnns[0].latencies_us;
        let slow: f64 = lats.iter().map(|r| r[0]).sum();
        let fast: f64 = lats.iter().map(|r| r[2]).sum();
        let small = p.model_size(&p.most_compressed_selection());
        let mut req = base.clone();
        req.dnns[0].latency_budget_us = fast + 0.4 * (slow - fast);
        req.memory_budget_bytes = small + (p.base_size_bytes - small) * 6 / 10;
        req.sigma = 0.0;
        let (obj, _) = brute_force(&req).expect("feasible by construction");
        let d = solve(&req).unwrap();
        assert_eq!(d.objective_value, obj, "seed {seed}");
        assert_eq!(d.bound_gap, 0.0);
        // Ties may resolve differently; the chosen selection must be optimal.
        assert_eq!(evaluate(&req, &d.selections), Some(obj), "seed {seed}");
    }
}

#[test]
fn oracle_agrees_with_brute_force_and_breaks_ties_lexicographically() {
    let shape = InstanceShape {
        dnns: 2,
        max_blocks: 3,
        max_descendants: 3,
        max_space: 5_000,
        tightness: (0.0, 1.0),
    };
    for seed in 0..60 {
        let req = random_request(seed, &shape);
        match (oracle_solve(&req), brute_force(&req)) {
            (Ok(d), Some((obj, sels))) => {
                assert!((d.objective_value - obj).abs() <= 1e-12, "seed {seed}");
                assert_eq!(d.selections, sels, "seed {seed}");
            }
            (Err(OptimizeError::InfeasibleBudgets { .. }), None) => {}
            (a, b) => panic!("seed {seed}: oracle {a:?} vs brute force {b:?}"),
        }
    }
    // Two identical descendants: lexicographically first wins.
    let p = DnnProfile {
        dnn_id: "tie".into(),
        base_size_bytes: 200,
        blocks: vec![
            block(1, &[(0.0, 100), (0.1, 50)]),
            block(2, &[(0.0, 100), (0.1, 50)]),
        ],
    };
    let mut req = single(p, 1e9, 150);
    req.sigma = 0.0;
    let d = oracle_solve(&req).unwrap();
    assert_eq!(d.selections, [Selection::new(vec![0, 1])]);
    assert_eq!(d.nodes_explored, 4);
}

#[test]
fn sigma_zero_equals_oracle() {
    let shape = InstanceShape {
        dnns: 3,
        ..InstanceShape::default()
    };
    for seed in 0..80 {
        let mut req = random_request(seed, &shape);
        req.sigma = 0.0;
        match (solve(&req), oracle_solve(&req)) {
            (Ok(a), Ok(b)) => {
                assert_eq!(a.objective_value, b.objective_value, "seed {seed}");
                verify_decision(&req, &a.selections).unwrap();
                assert!(a.root_bound <= a.objective_value + 1e-9);
            }
            (Err(OptimizeError::InfeasibleBudgets { .. }), Err(OptimizeError::InfeasibleBudgets { .. })) => {}
            (a, b) => panic!("seed {seed}: {a:?} vs {b:?}"),
        }
    }
}

#[test]
fn other_modes_match_oracle() {
    let shape = InstanceShape {
        dnns: 2,
        max_blocks: 4,
        max_descendants: 3,
        ..InstanceShape::default()
    };
    for seed in 0..60 {
        let mut req = random_request(seed, &shape);
        req.sigma = 0.0;
        let total_max: f64 = req
            .dnns
            .iter()
            .map(|d| d.profile.accuracy_loss(&d.profile.most_compressed_selection()))
            .sum();
        req.mode = if seed % 2 == 0 {
            ObjectiveMode::MinLatency {
                accuracy_budget: total_max * 0.3,
            }
        } else {
            ObjectiveMode::Balanced {
                lambda: 0.05 * (seed % 7) as f64,
            }
        };
        let expect = brute_force(&req);
        match (solve(&req), expect) {
            (Ok(d), Some((obj, _))) => {
                let reported = match req.mode {
                    ObjectiveMode::MinLatency { .. } => -obj,
                    _ => obj,
                };
                assert!((d.objective_value - reported).abs() <= 1e-12, "seed {seed}");
                assert_eq!(d.objective_value, oracle_solve(&req).unwrap().objective_value);
            }
            (Err(OptimizeError::InfeasibleBudgets { .. }), None) => {}
            (a, b) => panic!("seed {seed}: {a:?} vs {b:?}"),
        }
    }
}

#[test]
fn balanced_with_zero_weight_ignores_latency() {
    let p = generate_synthetic(3, 3, 11);
    let mut req = single(p, 1.0, 1 << 40);
    req.mode = ObjectiveMode::Balanced { lambda: 0.0 };
    let d = solve(&req).unwrap();
    assert_eq!(d.objective_value, 0.0);
    assert_eq!(d.selections[0], req.dnns[0].profile.original_selection());
    // Under max-accuracy the same one-microsecond budget is infeasible.
    req.mode = ObjectiveMode::MaxAccuracy;
    assert!(matches!(
        solve(&req),
        Err(OptimizeError::InfeasibleBudgets {
            constraint: Constraint::Latency { dnn: 0 },
            ..
        })
    ));
}

#[test]
fn balanced_picks_a_dominating_selection() {
    // Descendant 1 is as accurate as the original and faster; descendant 2
    // is faster still but not worth its loss.
    let b = block(1, &[(0.0, 100), (0.0, 60), (0.5, 30)]);
    let p = DnnProfile {
        dnn_id: "dom".into(),
        base_size_bytes: 100,
        blocks: vec![b],
    };
    let req = single(p, 1.0, 1 << 20);
    let d = balanced_solve(&req).unwrap();
    assert_eq!(d.selections, [Selection::new(vec![1])]);
}

#[test]
fn infeasible_memory_is_reported() {
    let p = generate_synthetic(4, 3, 2);
    let small = p.model_size(&p.most_compressed_selection());
    let req = single(p, 1e12, small - 1);
    assert_eq!(
        solve(&req),
        Err(OptimizeError::InfeasibleBudgets {
            constraint: Constraint::Memory,
            required: small as f64,
            budget: (small - 1) as f64,
        })
    );
    assert!(matches!(
        oracle_solve(&req),
        Err(OptimizeError::InfeasibleBudgets { .. })
    ));
    let ok = single(req.dnns[0].profile.clone(), 1e12, small);
    let d = solve(&ok).unwrap();
    assert_eq!(d.selections[0], ok.dnns[0].profile.most_compressed_selection());
}

#[test]
fn jointly_infeasible_budgets_without_individual_violation() {
    // Each constraint alone is satisfiable, together they are not: latency
    // needs block 1 compressed, memory needs block 2 compressed, and only one
    // of the two fits under the accuracy budget.
    let p = DnnProfile {
        dnn_id: "j".into(),
        base_size_bytes: 200,
        blocks: vec![block(1, &[(0.0, 100), (0.5, 90)]), block(2, &[(0.0, 100), (0.5, 10)])],
    };
    let latencies = vec![vec![100.0, 10.0], vec![1.0, 0.1]];
    let dnn = DnnRequest::new(p, 50.0, latencies);
    let mut req = ScalingRequest::new(vec![dnn], 150, ObjectiveMode::MinLatency { accuracy_budget: 0.6 });
    req.sigma = 0.0;
    assert!(matches!(solve(&req), Err(OptimizeError::InfeasibleBudgets { .. })));
    assert!(matches!(oracle_solve(&req), Err(OptimizeError::InfeasibleBudgets { .. })));
    req.mode = ObjectiveMode::MinLatency { accuracy_budget: 1.0 };
    let d = solve(&req).unwrap();
    assert_eq!(d.selections, [Selection::new(vec![1, 1])]);
    assert!((d.objective_value - 1.0).abs() < 1e-12);
}

#[test]
fn request_validation() {
    let p = generate_synthetic(2, 2, 3);
    let good = single(p, 100.0, 1000);
    let mut r = good.clone();
    r.dnns.clear();
    assert_eq!(r.validate(), Err(OptimizeError::EmptyRequest));
    let mut r = good.clone();
    r.sigma = -1.0;
    assert!(matches!(r.validate(), Err(OptimizeError::InvalidSigma(_))));
    let mut r = good.clone();
    r.dnns[0].latencies_us.pop();
    assert!(matches!(
        r.validate(),
        Err(OptimizeError::MissingLatencies { dnn: 0, block: 1 })
    ));
    let mut r = good.clone();
    r.dnns[0].latencies_us[1].pop();
    assert!(matches!(r.validate(), Err(OptimizeError::MissingLatencies { .. })));
    let mut r = good.clone();
    r.dnns[0].latencies_us[0][1] = f64::NAN;
    assert!(matches!(r.validate(), Err(OptimizeError::InvalidLatency { .. })));
    let mut r = good.clone();
    r.memory_budget_bytes = 0;
    assert!(matches!(r.validate(), Err(OptimizeError::InvalidBudget(_))));
    let mut r = good.clone();
    r.dnns[0].profile.blocks[0].descendants[0].accuracy_loss = 0.01;
    assert!(matches!(r.validate(), Err(OptimizeError::InvalidProfile { .. })));
    let mut r = good.clone();
    r.dnns[0].current = Some(Selection::new(vec![0]));
    assert!(matches!(r.validate(), Err(OptimizeError::Selection { .. })));
    good.validate().unwrap();
}

#[test]
fn oracle_refuses_large_spaces() {
    let p = generate_synthetic(10, 5, 0);
    let req = single(p, 1e12, 1 << 40);
    assert_eq!(
        oracle_solve(&req),
        Err(OptimizeError::OracleLimit { space: 60_466_176 })
    );
    // The branch and bound copes with it.
    assert_eq!(solve(&req).unwrap().objective_value, 0.0);
}

#[test]
fn exchange_plans_follow_current_selection() {
    let p = generate_synthetic(3, 2, 8);
    let mut req = single(p.clone(), 1e12, 1 << 40).with_sigma(0.0);
    req.dnns[0].current = Some(Selection::new(vec![2, 0, 1]));
    let d = solve(&req).unwrap();
    let plans = req.exchange_plans(&d).unwrap();
    assert_eq!(plans.len(), 1);
    assert_eq!(plans[0].swaps.len(), 2);
    assert_eq!(
        plans[0].bytes_in,
        p.blocks[0].descendants[0].size_bytes + p.blocks[2].descendants[0].size_bytes
    );
}

#[test]
fn verify_decision_catches_violations() {
    let p = generate_synthetic(3, 2, 4);
    let small = p.model_size(&p.most_compressed_selection());
    let req = single(p.clone(), 1e12, small);
    verify_decision(&req, &[p.most_compressed_selection()]).unwrap();
    assert!(matches!(
        verify_decision(&req, &[p.original_selection()]),
        Err(OptimizeError::InfeasibleBudgets {
            constraint: Constraint::Memory,
            ..
        })
    ));
    assert!(verify_decision(&req, &[]).is_err());
}

#[test]
fn objective_of_matches_solver() {
    let shape = InstanceShape {
        dnns: 2,
        ..InstanceShape::default()
    };
    let req = random_request(77, &shape);
    if let Ok(d) = solve(&req) {
        assert_eq!(objective_of(&req, &d.selections), d.objective_value);
    }
}

#[test]
fn settles_on_the_deployed_selection_within_sigma() {
    let p = generate_synthetic(4, 3, 21);
    let mut req = single(p.clone(), 1e12, 1 << 40);
    let deployed = Selection::new(vec![1, 0, 0, 0]);
    let loss = p.accuracy_loss(&deployed);
    assert!(loss > 0.0);
    req.dnns[0].current = Some(deployed.clone());
    req.sigma = loss * 2.0;
    let d = solve(&req).unwrap();
    assert_eq!(d.selections, [deployed]);
    assert_eq!(d.bound_gap, loss);
    // Without slack the proven optimum wins.
    req.sigma = 0.0;
    let d = solve(&req).unwrap();
    assert_eq!(d.selections, [p.original_selection()]);
    assert_eq!(d.bound_gap, 0.0);
}

#[test]
fn node_limit_reports_the_open_gap() {
    let shape = InstanceShape {
        dnns: 4,
        max_blocks: 5,
        max_descendants: 4,
        max_space: 1_000_000,
        tightness: (0.2, 0.4),
    };
    let mut limited = 0;
    for seed in 0..20 {
        let req = random_request(seed, &shape).with_sigma(0.0);
        let full = solve(&req);
        match solve(&req.clone().with_node_limit(1)) {
            Ok(d) => {
                let full = full.unwrap();
                verify_decision(&req, &d.selections).unwrap();
                assert!(d.nodes_explored <= 3);
                assert!(d.objective_value >= full.objective_value);
                // The reported gap brackets the optimum.
                assert!(d.objective_value - d.bound_gap <= full.objective_value + 1e-9);
                if d.limit_reached {
                    limited += 1;
                } else {
                    assert_eq!(d.objective_value, full.objective_value);
                }
            }
            Err(OptimizeError::NodeLimit { nodes }) => {
                assert!(nodes >= 1);
                limited += 1;
            }
            Err(OptimizeError::InfeasibleBudgets { .. }) => assert!(full.is_err()),
            Err(e) => panic!("{e}"),
        }
    }
    assert!(limited > 0);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    fn shape() -> impl Strategy<Value = (u64, InstanceShape)> {
        (any::<u64>(), 1usize..=3).prop_map(|(seed, dnns)| {
            (
                seed,
                InstanceShape {
                    dnns,
                    max_space: 20_000,
                    tightness: (-0.1, 1.0),
                    ..InstanceShape::default()
                },
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn exact_and_anytime((seed, shape) in shape(), sigma in prop_oneof![Just(0.0), 1e-4..0.05f64]) {
            let req = random_request(seed, &shape).with_sigma(sigma);
            let oracle = oracle_solve(&req);
            match solve(&req) {
                Ok(d) => {
                    let o = oracle.unwrap();
                    verify_decision(&req, &d.selections).unwrap();
                    if sigma == 0.0 {
                        prop_assert_eq!(d.objective_value, o.objective_value);
                    } else {
                        prop_assert!(d.bound_gap < sigma);
                        prop_assert!(d.objective_value - o.objective_value <= sigma);
                    }
                    prop_assert!(d.objective_value >= o.objective_value);
                    prop_assert!(d.root_bound <= o.objective_value + 1e-9);
                }
                Err(OptimizeError::InfeasibleBudgets { .. }) => {
                    let infeasible = matches!(oracle, Err(OptimizeError::InfeasibleBudgets { .. }));
                    prop_assert!(infeasible);
                }
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn looser_budgets_never_hurt((seed, shape) in shape(), grow in 1.0..2.0f64) {
            let tight = random_request(seed, &shape).with_sigma(0.0);
            let mut loose = tight.clone();
            for d in &mut loose.dnns { d.latency_budget_us *= grow; }
            loose.memory_budget_bytes = (loose.memory_budget_bytes as f64 * grow) as u64;
            if let Ok(t) = solve(&tight) {
                let l = solve(&loose).unwrap();
                prop_assert!(l.objective_value <= t.objective_value);
            }
        }

        #[test]
        fn deterministic((seed, shape) in shape()) {
            let req = random_request(seed, &shape);
            prop_assert_eq!(solve(&req), solve(&req));
        }
    }
}
