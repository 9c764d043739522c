//! Property-based invariants of the market primitives and risk functionals.

mod common;

use proptest::prelude::*;
use treehedge::loss::LossSpec;
use treehedge::market::{
    self, Claim, ReferenceMeasureSet, ScenarioTree, Strategy as TradingStrategy, TreeMeasure,
};
use treehedge::risk;

fn tree_strategy() -> impl Strategy<Value = ScenarioTree> {
    (1usize..=3, 2usize..=3, 0.1f64..0.3, 0.05f64..0.3).prop_map(|(steps, branches, up, down)| {
        let mut factors = vec![1.0 + up, 1.0 - down];
        if branches == 3 {
            factors.push(1.0);
        }
        ScenarioTree::generate(100.0, &factors, steps).unwrap()
    })
}

fn positions_for(tree: &ScenarioTree, raw: &[f64]) -> TradingStrategy {
    let positions = tree
        .nonterminals()
        .iter()
        .enumerate()
        .map(|(k, _)| vec![raw[k % raw.len()]])
        .collect();
    TradingStrategy::new(tree, positions).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gains_are_linear_in_the_strategy(
        tree in tree_strategy(),
        raw1 in prop::collection::vec(-2.0f64..2.0, 4),
        raw2 in prop::collection::vec(-2.0f64..2.0, 4),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let z1 = positions_for(&tree, &raw1);
        let z2 = positions_for(&tree, &raw2);
        let combo_positions: Vec<Vec<f64>> = z1
            .positions()
            .iter()
            .zip(z2.positions())
            .map(|(p1, p2)| vec![a * p1[0] + b * p2[0]])
            .collect();
        let combo = TradingStrategy::new(&tree, combo_positions).unwrap();
        let g1 = market::gains_all(&tree, &z1);
        let g2 = market::gains_all(&tree, &z2);
        let gc = market::gains_all(&tree, &combo);
        for n in 0..tree.node_count() {
            prop_assert!((gc[n] - (a * g1[n] + b * g2[n])).abs() < 1e-9);
        }
        prop_assert_eq!(gc[tree.root()], 0.0);
    }

    #[test]
    fn martingale_vertices_kill_expected_gains(
        tree in tree_strategy(),
        raw in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let pset = ReferenceMeasureSet::new(&tree, vec![TreeMeasure::uniform(&tree)]).unwrap();
        let vertices = treehedge::oracle::enumerate_martingale_vertices(&tree, pset.support());
        prop_assume!(vertices.is_ok());
        let z = positions_for(&tree, &raw);
        let gains = market::gains_all(&tree, &z);
        let zmax = raw.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let bound = 10.0 * 1e-9 * (tree.steps() as f64) * zmax.max(1.0) * tree.price_scale();
        for q in vertices.unwrap() {
            let lp = q.leaf_probabilities(&tree);
            let e: f64 = tree
                .leaves()
                .iter()
                .enumerate()
                .map(|(li, &l)| lp[li] * gains[l])
                .sum();
            prop_assert!(e.abs() <= bound, "E_Q[gains] = {} (bound {})", e, bound);
        }
    }

    #[test]
    fn adding_measures_never_shrinks_support(
        tree in tree_strategy(),
        seed in 0u64..1000,
    ) {
        let mut r = common::rng(seed);
        let m1 = common::random_measure(&mut r, &tree, true);
        let m2 = common::random_measure(&mut r, &tree, true);
        let small = ReferenceMeasureSet::new(&tree, vec![m1.clone()]).unwrap();
        let big = ReferenceMeasureSet::new(&tree, vec![m1, m2]).unwrap();
        for n in 0..tree.node_count() {
            prop_assert!(!small.is_supported(n) || big.is_supported(n));
        }
    }

    #[test]
    fn fenchel_young_holds(
        x in -40.0f64..40.0,
        y in 0.0f64..40.0,
        pick in 0usize..4,
    ) {
        let specs = [
            LossSpec::power(3.0).unwrap(),
            LossSpec::cvar(0.7).unwrap(),
            LossSpec::entropic(),
            LossSpec::piecewise_linear(vec![-1.0, 2.0], vec![0.0, 0.5, 3.0]).unwrap(),
        ];
        let spec = &specs[pick];
        let lhs = x * y;
        let rhs = spec.eval(x).unwrap() + spec.conjugate(y).unwrap();
        prop_assert!(lhs <= rhs + 1e-9);
    }

    #[test]
    fn robust_oce_translation_and_monotonicity(
        tree in tree_strategy(),
        seed in 0u64..1000,
        shift in -6.0f64..6.0,
        bump in 0.0f64..4.0,
    ) {
        let mut r = common::rng(seed);
        let pset = common::random_pset(&mut r, &tree, 3);
        let x = common::random_claim(&mut r, &tree);
        let spec = LossSpec::cvar(0.8).unwrap();
        let base = risk::robust_oce(&tree, &pset, &x, &spec).unwrap().value;

        let shifted = Claim::from_leaf_values(
            &tree,
            x.values().iter().map(|&v| v + shift).collect(),
        ).unwrap();
        let moved = risk::robust_oce(&tree, &pset, &shifted, &spec).unwrap().value;
        prop_assert!((moved - (base - shift)).abs() < 1e-9);

        let raised = Claim::from_leaf_values(
            &tree,
            x.values().iter().map(|&v| v + bump).collect(),
        ).unwrap();
        let up = risk::robust_oce(&tree, &pset, &raised, &spec).unwrap().value;
        prop_assert!(base >= up - 1e-9);
    }

    #[test]
    fn admissibility_matches_running_minimum(
        tree in tree_strategy(),
        seed in 0u64..1000,
        raw in prop::collection::vec(-2.0f64..2.0, 4),
        floor in 0.0f64..30.0,
    ) {
        let mut r = common::rng(seed);
        let pset = common::random_pset(&mut r, &tree, 2);
        let z = positions_for(&tree, &raw);
        // independent oracle: re-walk every supported node's path
        let mut worst = f64::INFINITY;
        for n in 0..tree.node_count() {
            if !pset.is_supported(n) {
                continue;
            }
            let path = tree.path_from_root(n);
            let mut g = 0.0;
            for w in path.windows(2) {
                let k = tree.nonterminal_index(w[0]).unwrap();
                g += z.position(k)[0] * (tree.node(w[1]).prices[0] - tree.node(w[0]).prices[0]);
            }
            worst = worst.min(g);
        }
        let expected = worst >= -floor;
        prop_assert_eq!(market::admissible(&tree, &pset, &z, floor), expected);
    }

    #[test]
    fn acceptance_threshold_is_respected(
        tree in tree_strategy(),
        seed in 0u64..1000,
    ) {
        let mut r = common::rng(seed);
        let pset = common::random_pset(&mut r, &tree, 2);
        let spec = LossSpec::cvar(0.6).unwrap();
        let x = common::random_claim(&mut r, &tree);
        let rho = risk::robust_oce(&tree, &pset, &x, &spec).unwrap().value;
        let acceptable = risk::is_acceptable(&tree, &pset, &x, &spec).unwrap();
        prop_assert_eq!(acceptable, rho <= 1e-9);
    }
}
