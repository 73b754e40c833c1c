mod common;

use std::path::Path;

use common::{random_market, random_nondegenerate_market, rng};
use fluidgate::io::{instance_json, parse_instance};
use fluidgate::lp::{self, enumerate_vertices, to_standard_form, DenseLp};
use fluidgate::market::{
    build_dlp, build_hindsight_lp, build_sampled_lp, decision_rng, episode_seed, hindsight_value,
    CountState, Market, OrderType, RealizedSequence,
};
use fluidgate::policy::{
    AcceptanceMode, DecisionContext, Policy, PolicyConfig, PolicyKind, UnseenRule,
};
use fluidgate::sim::{compare_policies, run_episode, run_episode_with, SimSetup};
use fluidgate::stability::{
    basis_preserved_for, classify_fluid, compute_L, FluidSolution, Perturbation,
};
use proptest::prelude::*;
use rand::Rng;

fn lp_strategy() -> impl Strategy<Value = DenseLp> {
    (1usize..=4, 1usize..=3).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(-0.5f64..1.0, n),
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, n), m),
            prop::collection::vec(0.0f64..1.5, m),
            prop::collection::vec(0.1f64..2.0, n),
        )
            .prop_map(|(c, a, b, u)| DenseLp::new(c, a, b, u).unwrap())
    })
}

fn policy_strategy() -> impl Strategy<Value = PolicyConfig> {
    (
        prop_oneof![
            Just(PolicyKind::AdaptiveUnknown),
            Just(PolicyKind::AdaptiveKnown),
            Just(PolicyKind::StaticFluid),
            Just(PolicyKind::Greedy),
        ],
        prop_oneof![
            Just(AcceptanceMode::RandomizedBinary),
            Just(AcceptanceMode::Partial)
        ],
        prop_oneof![Just(UnseenRule::DualPrice), Just(UnseenRule::AlwaysAccept)],
    )
        .prop_map(|(kind, acceptance, unseen)| PolicyConfig {
            kind,
            acceptance,
            unseen,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn simplex_matches_vertex_enumeration(lp in lp_strategy()) {
        let sol = lp::solve(&lp).unwrap();
        let best = enumerate_vertices(&lp, 1_000_000).unwrap()
            .iter().map(|v| v.objective).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((sol.objective_value - best).abs() <= 1e-7);
        prop_assert!(lp.is_feasible(&sol.primal, 1e-9));
    }

    #[test]
    fn strong_duality_and_dual_feasibility(lp in lp_strategy()) {
        let sol = lp::solve(&lp).unwrap();
        prop_assert!((sol.dual_objective(&lp) - sol.objective_value).abs() <= 1e-8);
        prop_assert!(sol.duals.iter().all(|&v| v >= 0.0));
        for j in 0..lp.n_vars() {
            let priced: f64 = (0..lp.n_rows()).map(|i| lp.matrix[i][j] * sol.duals[i]).sum();
            prop_assert!(priced + sol.box_duals[j] >= lp.objective[j] - 1e-9);
        }
    }

    #[test]
    fn standard_form_round_trip(lp in lp_strategy()) {
        let sol = lp::solve(&lp).unwrap();
        let sf = to_standard_form(&lp);
        let x = sol.standard_form_point();
        prop_assert_eq!(sf.lift(&lp, &sol.primal).len(), sf.n_columns());
        for (row, b) in sf.equality_matrix.iter().zip(&sf.equality_rhs) {
            let lhs: f64 = row.iter().zip(&x).map(|(a, v)| a * v).sum();
            prop_assert!((lhs - b).abs() <= 1e-9);
        }
        let rc = sol.standard_form_reduced_costs();
        for &j in &sol.basis {
            prop_assert!(rc[j].abs() <= 1e-9);
        }
        prop_assert_eq!(sol.basis.len(), lp.n_rows() + lp.n_vars());
    }

    #[test]
    fn rhs_increase_never_hurts(lp in lp_strategy(), i in 0usize..3, extra in 0.0f64..1.0) {
        let base = lp::solve(&lp).unwrap().objective_value;
        let mut more = lp.clone();
        let i = i % more.n_rows();
        more.rhs[i] += extra;
        prop_assert!(lp::solve(&more).unwrap().objective_value >= base - 1e-12);
    }

    #[test]
    fn solves_are_bit_identical(lp in lp_strategy()) {
        prop_assert_eq!(lp::solve(&lp).unwrap(), lp::solve(&lp).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn proportional_counts_give_the_fluid_lp(
        weights in prop::collection::vec(1u64..6, 3),
        scale in 1u64..20,
    ) {
        let total: u64 = weights.iter().sum();
        let p: Vec<f64> = weights.iter().map(|&w| w as f64 / total as f64).collect();
        let types = vec![
            OrderType::single(0.5, vec![0.2, 0.7]),
            OrderType::single(0.9, vec![0.6, 0.1]),
            OrderType::single(0.3, vec![0.3, 0.3]),
        ];
        let m = Market::new(types, p, vec![0.4, 0.3], 100, false).unwrap();
        let counts = CountState::from_counts(weights.iter().map(|w| w * scale).collect());
        let sampled = build_sampled_lp(&counts, &m, &m.avg_capacity).unwrap();
        prop_assert_eq!(sampled, build_dlp(&m, &m.avg_capacity).unwrap());
    }

    #[test]
    fn episode_invariants(seed in any::<u64>(), market_seed in 0u64..1000, cfg in policy_strategy()) {
        let m = random_market(&mut rng(market_seed)).with_horizon(60);
        let (a, trace) = run_episode(&m, cfg, seed, true).unwrap();
        let (b, _) = run_episode(&m, cfg, seed, false).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.arrivals.iter().sum::<u64>(), 60);
        prop_assert!(a.reward_to_tau <= a.reward_to_t);
        prop_assert!(a.tau <= 60);
        for j in 0..m.n_types() {
            prop_assert!(a.accepted_to_tau[j] <= a.accepted_to_t[j]);
            prop_assert!(a.accepted_to_t[j] <= a.arrivals[j] as f64 + 1e-12);
        }
        // Conservation step by step and overall.
        let trace = trace.unwrap();
        let mut used = vec![0.0; m.n_resources()];
        for (s, next) in trace.iter().zip(trace.iter().skip(1)) {
            for (i, u) in used.iter_mut().enumerate() {
                let c = s.allocation[0] * m.types[s.arriving].arms[0].consumption[i];
                prop_assert_eq!(next.remaining[i], s.remaining[i] - c);
                prop_assert!(next.remaining[i] >= 0.0);
                *u += c;
            }
        }
        let total = m.total_capacity();
        let last = trace.last().unwrap();
        for i in 0..m.n_resources() {
            let c = last.allocation[0] * m.types[last.arriving].arms[0].consumption[i];
            prop_assert!((a.final_remaining[i] + used[i] + c - total[i]).abs() <= 1e-9);
            prop_assert!(a.final_remaining[i] >= 0.0);
        }
    }

    #[test]
    fn partial_mode_takes_the_lp_fraction(market_seed in 0u64..1000, t in 2usize..40) {
        let m = random_market(&mut rng(market_seed)).with_horizon(40);
        let seq = RealizedSequence::generate(&m, market_seed);
        let mut counts = CountState::new(m.n_types());
        for &j in &seq.type_indices[..t - 1] {
            counts.observe(j);
        }
        let remaining: Vec<f64> = m.total_capacity().iter().map(|b| b * 0.9).collect();
        let ctx = DecisionContext {
            t,
            horizon: 40,
            remaining: &remaining,
            counts: &counts,
            arriving: seq.type_indices[t - 1],
        };
        let cfg = PolicyConfig { acceptance: AcceptanceMode::Partial, ..PolicyConfig::default() };
        let pol = Policy::new(&m, cfg).unwrap();
        let proposal = pol.acceptance_probabilities(&ctx).unwrap();
        let d = pol.decide(&ctx, &mut decision_rng(0)).unwrap();
        if d.feasible {
            prop_assert_eq!(d.allocation, proposal.probabilities);
        } else {
            prop_assert!(d.allocation.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn hindsight_aggregation_matches_per_period_lp(market_seed in 0u64..1000, seed in any::<u64>()) {
        let m = random_market(&mut rng(market_seed)).with_horizon(25);
        let seq = RealizedSequence::generate(&m, seed);
        let lp = build_hindsight_lp(&seq, &m).unwrap();
        let sol = lp::solve(&lp).unwrap();
        prop_assert!(lp.is_feasible(&sol.primal, 1e-9));
        let agg = hindsight_value(&seq.counts(m.n_types()).counts, &m).unwrap();
        prop_assert!((agg - sol.objective_value).abs() <= 1e-9);
    }

    #[test]
    fn instance_round_trip(market_seed in any::<u64>()) {
        let m = random_market(&mut rng(market_seed));
        let text = instance_json(&m).unwrap();
        prop_assert_eq!(parse_instance(&text, Path::new("x")).unwrap(), m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn radius_is_invariant_under_type_permutation(market_seed in any::<u64>(), rot in 1usize..4) {
        let m = random_nondegenerate_market(&mut rng(market_seed));
        let n = m.n_types();
        let order: Vec<usize> = (0..n).map(|j| (j + rot) % n).collect();
        let types: Vec<OrderType> = order.iter().map(|&j| m.types[j].clone()).collect();
        let p: Vec<f64> = order.iter().map(|&j| m.probabilities[j]).collect();
        let permuted = Market::new(types, p, m.avg_capacity.clone(), m.horizon, false).unwrap();
        let (a, b) = (compute_L(&m).unwrap(), compute_L(&permuted).unwrap());
        prop_assert!(((a - b) / a).abs() <= 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn perturbations_inside_the_box_keep_the_basis(market_seed in any::<u64>(), draw in any::<u64>()) {
        let m = random_nondegenerate_market(&mut rng(market_seed));
        let fluid = FluidSolution::new(&m).unwrap();
        let radius = compute_L(&m).unwrap();
        let binding = classify_fluid(&m, &fluid).binding;
        let mut r = rng(draw);
        let mut p = Perturbation::zero(m.n_resources(), m.n_types());
        for v in p.matrix.iter_mut().flatten().chain(p.objective.iter_mut()) {
            *v = r.random_range(-radius..=radius);
        }
        for (i, v) in p.rhs.iter_mut().enumerate() {
            *v = if binding.contains(&i) { r.random_range(-radius..=radius) } else { r.random_range(-radius..=2.0) };
        }
        prop_assert!(basis_preserved_for(&fluid, &p).unwrap());
    }

    #[test]
    fn paired_differences_do_not_depend_on_execution_order(seed in any::<u64>(), trials in 2usize..6) {
        let m = common::example_market([1.0, 1.0]);
        let known = PolicyConfig::new(PolicyKind::AdaptiveKnown);
        let r = compare_policies(&m, PolicyConfig::default(), known, 80, trials, seed).unwrap();
        prop_assert_eq!(r.differences.len(), trials);
        let market = m.with_horizon(80);
        let setup = SimSetup::new(&market).unwrap();
        for trial in (0..trials).rev() {
            let s = episode_seed(seed, 80, trial as u64);
            let (a, _) = run_episode_with(&market, &setup, PolicyConfig::default(), s, trial, false).unwrap();
            let (b, _) = run_episode_with(&market, &setup, known, s, trial, false).unwrap();
            prop_assert_eq!(r.differences[trial], a.regret_fluid - b.regret_fluid);
        }
    }
}
