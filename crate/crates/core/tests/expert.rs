mod common;

use mbrec::encoder::{EmbeddingPair, PropagationPlan};
use mbrec::expert::{self, ExpertParams, Gate, GatedModel, Lambdas, PlanSet, Role};
use mbrec::evaluator::Scorer;
use mbrec::store::{self, InteractionLog, ItemKind, Record, Schema};
use proptest::prelude::*;
use rand::Rng;

use common::{random_log, rng};

fn three_behavior_log(seed: u64) -> InteractionLog {
    let mut r = rng(seed);
    let records = (0..40)
        .map(|_| Record {
            user: r.gen_range(0..10),
            item: r.gen_range(0..15),
            behavior: r.gen_range(0..3),
            timestamp: None,
        })
        .collect();
    InteractionLog::new(10, 15, Schema::three_stage().behaviors, records).unwrap()
}

fn experts(seed: u64, nu: usize, ni: usize, dim: usize) -> (ExpertParams, ExpertParams) {
    let mut r = rng(seed);
    (
        ExpertParams::xavier(nu, ni, dim, 0.4, Role::Visited, &mut r).unwrap(),
        ExpertParams::xavier(nu, ni, dim, 0.6, Role::Unvisited, &mut r).unwrap(),
    )
}

fn rows_dot(a: &EmbeddingPair, u: usize, i: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..a.dim() {
        s += a.users[[u, k]] * a.items[[i, k]];
    }
    s
}

#[test]
fn local_view_is_mean_of_independent_behavior_views() {
    let log = three_behavior_log(31);
    let plans = PlanSet::from_train(&log, 2).unwrap();
    let (v, _) = experts(1, 10, 15, 4);
    let enc = expert::encode(&v, &plans, 0).unwrap();
    let mut mean = EmbeddingPair::zeros(10, 15, 4);
    for name in log.behaviors() {
        let g = store::build_behavior_graph(&log, name).unwrap();
        let view = PropagationPlan::prepare(&g, 2).propagate(&v.local).unwrap();
        mean.scaled_add(1.0 / 3.0, &view);
    }
    assert!(common::max_rel_diff(&common::stack(&enc.local), &common::stack(&mean)) < 1e-12);
    assert_eq!(enc.per_behavior.len(), 3);
}

#[test]
fn partition_views_use_the_literal_init_tables() {
    let log = three_behavior_log(32);
    let plans = PlanSet::from_train(&log, 2).unwrap();
    let (vp, up) = experts(2, 10, 15, 4);
    let (ev, er) = store::derive_ssl_partitions(&log).unwrap();
    let venc = expert::encode(&vp, &plans, 0).unwrap();
    let uenc = expert::encode(&up, &plans, 0).unwrap();
    assert_eq!(venc.partition, PropagationPlan::prepare(&ev, 2).propagate(&vp.local).unwrap());
    assert_eq!(uenc.partition, PropagationPlan::prepare(&er, 2).propagate(&up.global).unwrap());
    let all = store::build_all_behavior_graphs(&log).unwrap();
    let global = store::build_global_graph(&all).unwrap();
    assert_eq!(venc.global, PropagationPlan::prepare(&global, 2).propagate(&vp.global).unwrap());
}

#[test]
fn single_behavior_local_equals_its_view() {
    let log = InteractionLog::new(
        3,
        3,
        vec!["buy".into()],
        vec![
            Record { user: 0, item: 1, behavior: 0, timestamp: None },
            Record { user: 2, item: 2, behavior: 0, timestamp: None },
        ],
    )
    .unwrap();
    let plans = PlanSet::from_train(&log, 2).unwrap();
    let (v, _) = experts(3, 3, 3, 2);
    let enc = expert::encode(&v, &plans, 0).unwrap();
    assert_eq!(enc.local, enc.per_behavior[0]);
}

#[test]
fn zero_params_give_zero_views() {
    let log = three_behavior_log(33);
    let plans = PlanSet::from_train(&log, 2).unwrap();
    let z = EmbeddingPair::zeros(10, 15, 4);
    let p = ExpertParams::new(z.clone(), z, 0.5, Role::Unvisited).unwrap();
    let enc = expert::encode(&p, &plans, 0).unwrap();
    for view in [&enc.global, &enc.local, &enc.partition].into_iter().chain(&enc.per_behavior) {
        assert!(view.is_zero());
    }
}

#[test]
fn missing_plan_is_an_error() {
    let (v, _) = experts(4, 10, 15, 4);
    let empty = PlanSet::new(vec!["buy".into()], Default::default());
    assert!(expert::encode(&v, &empty, 0).is_err());
}

#[test]
fn score_matches_scalar_loop() {
    let log = three_behavior_log(34);
    let plans = PlanSet::from_train(&log, 2).unwrap();
    let (v, _) = experts(5, 10, 15, 4);
    let enc = expert::encode(&v, &plans, 0).unwrap();
    let slate: Vec<usize> = (0..15).rev().collect();
    for u in 0..10 {
        let batched = expert::score_slate(&enc, 0.4, u, &slate).unwrap();
        for (k, &i) in slate.iter().enumerate() {
            let expect = 0.4 * rows_dot(&enc.global, u, i) + 0.6 * rows_dot(&enc.local, u, i);
            let s = expert::score(&enc, 0.4, u, i).unwrap();
            assert!((s - expect).abs() < 1e-12);
            assert_eq!(batched[k], s);
        }
    }
    assert!(expert::score(&enc, 0.4, 10, 0).is_err());
    assert!(expert::score(&enc, 0.4, 0, 15).is_err());
}

#[test]
fn gated_scores_are_a_mask_select() {
    let log = three_behavior_log(35);
    let plans = PlanSet::from_train(&log, 2).unwrap();
    let index = store::derive_visited_index(&log);
    let (vp, up) = experts(6, 10, 15, 4);
    let venc = expert::encode(&vp, &plans, 0).unwrap();
    let uenc = expert::encode(&up, &plans, 0).unwrap();
    let lambdas = Lambdas { visited: 0.4, unvisited: 0.6 };
    let model = GatedModel {
        visited: &venc,
        unvisited: &uenc,
        lambdas,
        index: &index,
        gate: Gate::Hard,
    };
    let aux = common::edge_set(&log, &log.auxiliary_ids());
    for u in 0..10 {
        let sv = venc.score_all(0.4, u);
        let su = uenc.score_all(0.6, u);
        let full = model.scores(u);
        for i in 0..15 {
            let expect = if aux.contains(&(u, i)) { sv[i] } else { su[i] };
            assert_eq!(full[i], expect);
            assert_eq!(expert::gated_score(&venc, &uenc, lambdas, &index, u, i), expect);
        }
        assert_eq!(model.typed_scores(u, ItemKind::Visited), sv);
        assert_eq!(model.typed_scores(u, ItemKind::Unvisited), su);
    }
}

#[test]
fn average_gate_is_the_mean() {
    let log = three_behavior_log(36);
    let plans = PlanSet::from_train(&log, 1).unwrap();
    let index = store::derive_visited_index(&log);
    let (vp, up) = experts(7, 10, 15, 3);
    let venc = expert::encode(&vp, &plans, 0).unwrap();
    let uenc = expert::encode(&up, &plans, 0).unwrap();
    let model = GatedModel {
        visited: &venc,
        unvisited: &uenc,
        lambdas: Lambdas::default(),
        index: &index,
        gate: Gate::Average,
    };
    for u in 0..10 {
        let (a, b) = (venc.score_all(0.5, u), uenc.score_all(0.5, u));
        for (i, s) in model.scores(u).into_iter().enumerate() {
            assert!((s - 0.5 * (a[i] + b[i])).abs() < 1e-15);
        }
    }
}

proptest! {
    #[test]
    fn perturbing_one_expert_leaves_the_other_side_bit_identical(seed in 0u64..5000, bump in -1.0f64..1.0) {
        let mut r = rng(seed);
        let log = random_log(&mut r, 8, 9, 80, false);
        let plans = PlanSet::from_train(&log, 2).unwrap();
        let index = store::derive_visited_index(&log);
        let (vp, up) = experts(seed, 8, 9, 3);
        let mut up2 = up.clone();
        up2.global.users.mapv_inplace(|x| x + bump);
        up2.local.items.mapv_inplace(|x| x * (1.0 + bump));
        let mut vp2 = vp.clone();
        vp2.local.users.mapv_inplace(|x| x - bump);
        let enc = |p: &ExpertParams| expert::encode(p, &plans, 0).unwrap();
        let (v, u, u2, v2) = (enc(&vp), enc(&up), enc(&up2), enc(&vp2));
        let l = Lambdas::default();
        for user in 0..8 {
            for i in 0..9 {
                let base = expert::gated_score(&v, &u, l, &index, user, i);
                if index.is_visited(user, i) {
                    prop_assert_eq!(expert::gated_score(&v, &u2, l, &index, user, i).to_bits(), base.to_bits());
                } else {
                    prop_assert_eq!(expert::gated_score(&v2, &u, l, &index, user, i).to_bits(), base.to_bits());
                }
            }
        }
    }

    #[test]
    fn scaling_an_expert_scales_its_scores_quadratically(seed in 0u64..5000, alpha in 0.1f64..3.0) {
        let log = three_behavior_log(seed);
        let plans = PlanSet::from_train(&log, 2).unwrap();
        let (vp, up) = experts(seed, 10, 15, 4);
        let mut scaled = vp.clone();
        for t in scaled.tables_mut() {
            t.mapv_inplace(|x| x * alpha);
        }
        let base = expert::encode(&vp, &plans, 0).unwrap();
        let big = expert::encode(&scaled, &plans, 0).unwrap();
        let other = expert::encode(&up, &plans, 0).unwrap();
        for u in 0..10 {
            for (a, b) in base.score_all(0.4, u).iter().zip(big.score_all(0.4, u)) {
                prop_assert!((alpha * alpha * a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
        // the unvisited expert is untouched by construction
        prop_assert_eq!(other, expert::encode(&up, &plans, 0).unwrap());
    }

    #[test]
    fn local_is_mean_of_behavior_views(seed in 0u64..5000) {
        let log = three_behavior_log(seed);
        let plans = PlanSet::from_train(&log, 2).unwrap();
        let (vp, _) = experts(seed, 10, 15, 4);
        let enc = expert::encode(&vp, &plans, 0).unwrap();
        let mut mean = EmbeddingPair::zeros(10, 15, 4);
        for view in &enc.per_behavior {
            mean.scaled_add(1.0 / 3.0, view);
        }
        prop_assert!(common::max_rel_diff(&common::stack(&enc.local), &common::stack(&mean)) < 1e-6);
    }
}
