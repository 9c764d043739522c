//! Shared instance generation for the integration suites.
#![allow(dead_code)]

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use treehedge::dual::{viability_check, Viability};
use treehedge::loss::LossSpec;
use treehedge::market::{Claim, ReferenceMeasureSet, ScenarioTree, TreeMeasure};

pub struct Instance {
    pub tree: ScenarioTree,
    pub pset: ReferenceMeasureSet,
    pub claim: Claim,
    pub spec: LossSpec,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tree(rng: &mut ChaCha8Rng, max_steps: usize, max_branches: usize) -> ScenarioTree {
    let steps = rng.gen_range(1..=max_steps);
    let branches = rng.gen_range(2..=max_branches);
    let mut factors = vec![rng.gen_range(1.05..1.35), rng.gen_range(0.65..0.95)];
    for _ in 2..branches {
        factors.push(rng.gen_range(0.9..1.1));
    }
    ScenarioTree::generate(100.0, &factors, steps).unwrap()
}

pub fn random_measure(rng: &mut ChaCha8Rng, tree: &ScenarioTree, allow_zeros: bool) -> TreeMeasure {
    let transitions = tree
        .nonterminals()
        .iter()
        .map(|&n| {
            let k = tree.node(n).children.len();
            let mut w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            if allow_zeros && k > 2 && rng.gen_bool(0.25) {
                let kill = rng.gen_range(0..k);
                w[kill] = 0.0;
            }
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        })
        .collect();
    TreeMeasure::new(tree, transitions).unwrap()
}

pub fn random_pset(
    rng: &mut ChaCha8Rng,
    tree: &ScenarioTree,
    max_measures: usize,
) -> ReferenceMeasureSet {
    let k = rng.gen_range(1..=max_measures);
    let measures = (0..k).map(|_| random_measure(rng, tree, true)).collect();
    ReferenceMeasureSet::new(tree, measures).unwrap()
}

pub fn random_claim(rng: &mut ChaCha8Rng, tree: &ScenarioTree) -> Claim {
    match rng.gen_range(0..3) {
        0 => Claim::call(tree, 0, rng.gen_range(80.0..120.0)).unwrap(),
        1 => Claim::put(tree, 0, rng.gen_range(80.0..120.0)).unwrap(),
        _ => Claim::from_leaf_values(
            tree,
            (0..tree.leaves().len()).map(|_| rng.gen_range(-10.0..25.0)).collect(),
        )
        .unwrap(),
    }
}

pub fn spec_pool() -> Vec<LossSpec> {
    vec![
        LossSpec::cvar(0.5).unwrap(),
        LossSpec::cvar(0.8).unwrap(),
        LossSpec::cvar(0.9).unwrap(),
        LossSpec::power(3.0).unwrap(),
        LossSpec::entropic(),
        LossSpec::strict_cone(),
    ]
}

pub fn random_spec(rng: &mut ChaCha8Rng) -> LossSpec {
    let pool = spec_pool();
    pool[rng.gen_range(0..pool.len())].clone()
}

/// Draws instances until the viability probe accepts one.
pub fn random_viable_instance(
    rng: &mut ChaCha8Rng,
    max_steps: usize,
    max_branches: usize,
    max_measures: usize,
    spec: Option<LossSpec>,
) -> Instance {
    for _ in 0..500 {
        let tree = random_tree(rng, max_steps, max_branches);
        let pset = random_pset(rng, &tree, max_measures);
        let spec = spec.clone().unwrap_or_else(|| random_spec(rng));
        if viability_check(&tree, &pset, &spec).unwrap() == Viability::Viable {
            let claim = random_claim(rng, &tree);
            return Instance { tree, pset, claim, spec };
        }
    }
    panic!("no viable instance found in 500 draws");
}
