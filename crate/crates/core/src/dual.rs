//! Dual solvers over the martingale-measure polytope: the superhedging dual,
//! the penalized dual of the relaxed price, market-viability detection, and
//! primal/dual cross reports.
//!
//! The penalty of a candidate measure is minimized over mixtures of the
//! reference family (the exact conjugate of the robust OCE on a finite
//! tree), so strong duality against the primal solvers holds for every
//! finite family, not just families closed under mixing.

use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::market::{Claim, NodeId, ReferenceMeasureSet, ScenarioTree, TreeMeasure};
use crate::primal::{self, PrimalSolution};
use crate::risk::MixtureDual;
use crate::simplex::{Cmp, LpBuilder, LpStatus};
use crate::SolveStatus;

/// Tolerance for the weak-duality check `primal - dual >= -tol`.
pub const WEAK_DUALITY_TOL: f64 = 1e-6;
/// Tolerance for the strong-duality check `|primal - dual| <= tol`.
pub const STRONG_DUALITY_TOL: f64 = 1e-4;

/// Linear description of the martingale measures supported on the union
/// support: leaf-probability variables, the normalization row, and one
/// conditional-drift row per supported non-terminal node and asset.
#[derive(Debug, Clone)]
pub struct MartingalePolytope {
    leaf_ids: Vec<NodeId>,
    rows: Vec<(Vec<f64>, f64)>,
}

/// Assembles the martingale constraint system on the supported leaves.
pub fn build_polytope(tree: &ScenarioTree, pset: &ReferenceMeasureSet) -> MartingalePolytope {
    let leaf_ids = pset.supported_leaves(tree);
    let nv = leaf_ids.len();
    let mut rows = vec![(vec![1.0; nv], 1.0)];
    for &n in tree.nonterminals() {
        if !pset.is_supported(n) {
            continue;
        }
        for a in 0..tree.asset_count() {
            let mut row = vec![0.0; nv];
            for (col, &leaf) in leaf_ids.iter().enumerate() {
                let path = tree.path_from_root(leaf);
                for w in path.windows(2) {
                    if w[0] == n {
                        row[col] += tree.node(w[1]).prices[a] - tree.node(n).prices[a];
                    }
                }
            }
            if row.iter().any(|&c| c != 0.0) {
                rows.push((row, 0.0));
            }
        }
    }
    MartingalePolytope { leaf_ids, rows }
}

impl MartingalePolytope {
    pub fn num_vars(&self) -> usize {
        self.leaf_ids.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Supported leaves, in variable order.
    pub fn leaf_ids(&self) -> &[NodeId] {
        &self.leaf_ids
    }

    pub fn rows(&self) -> &[(Vec<f64>, f64)] {
        &self.rows
    }

    /// Any feasible point, or `None` when no martingale measure lives on
    /// the support.
    pub fn feasible_point(&self) -> Option<Vec<f64>> {
        let sol = self.linear_lp(&vec![0.0; self.num_vars()], true).solve();
        match sol.status {
            LpStatus::Optimal => Some(sol.x),
            _ => None,
        }
    }

    /// Maximizes a linear objective over the polytope.
    pub(crate) fn maximize_linear(&self, obj: &[f64]) -> (LpStatus, Vec<f64>, f64, usize) {
        let sol = self.linear_lp(obj, false).solve();
        (sol.status, sol.x, sol.objective, sol.iterations)
    }

    fn linear_lp(&self, obj: &[f64], feasibility_only: bool) -> LpBuilder {
        let mut lp = if feasibility_only { LpBuilder::minimize() } else { LpBuilder::maximize() };
        let qv: Vec<usize> =
            (0..self.num_vars()).map(|i| lp.add_var(obj[i], false)).collect();
        for (coeffs, rhs) in &self.rows {
            let row: Vec<(usize, f64)> = coeffs
                .iter()
                .enumerate()
                .filter(|(_, &c)| c != 0.0)
                .map(|(i, &c)| (qv[i], c))
                .collect();
            lp.add_row(row, Cmp::Eq, *rhs);
        }
        lp
    }

    /// Expands polytope variables to a full leaf-order probability vector,
    /// clamping LP dust and renormalizing.
    pub fn full_leaf_vector(&self, tree: &ScenarioTree, q: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; tree.leaves().len()];
        for (i, &leaf) in self.leaf_ids.iter().enumerate() {
            let v = if q[i] > 1e-12 { q[i] } else { 0.0 };
            full[tree.leaf_index(leaf).unwrap()] = v;
        }
        let total: f64 = full.iter().sum();
        if total > 0.0 {
            for v in full.iter_mut() {
                *v /= total;
            }
        }
        full
    }

    pub fn to_measure(&self, tree: &ScenarioTree, q: &[f64]) -> Result<TreeMeasure> {
        TreeMeasure::from_leaf_probabilities(tree, &self.full_leaf_vector(tree, q))
    }

    /// Adds rows forcing the listed variables to zero (restriction to the
    /// support of one reference member).
    fn with_zero_cols(&self, zero_cols: &[usize]) -> MartingalePolytope {
        let mut rows = self.rows.clone();
        for &c in zero_cols {
            let mut row = vec![0.0; self.num_vars()];
            row[c] = 1.0;
            rows.push((row, 0.0));
        }
        MartingalePolytope { leaf_ids: self.leaf_ids.clone(), rows }
    }
}

/// Solution of a dual pricing program.
#[derive(Debug, Clone)]
pub struct DualSolution {
    /// Optimal value (negative infinity when no feasible measure exists).
    pub value: f64,
    /// Optimizing martingale measure.
    pub measure: Option<TreeMeasure>,
    /// Its leaf probabilities in leaf order.
    pub leaf_probabilities: Option<Vec<f64>>,
    /// Index of the reference measure carrying the largest mixture weight.
    pub selected_p: Option<usize>,
    /// Mixture weights over the reference family at the optimum.
    pub lambda: Option<Vec<f64>>,
    /// Divergence penalty at the optimum (0 for the superhedging dual).
    pub penalty: f64,
    pub status: SolveStatus,
    /// Certified suboptimality bound (0 for exact LP solves).
    pub gap: f64,
    pub iterations: usize,
}

impl DualSolution {
    fn infeasible(iterations: usize) -> Self {
        DualSolution {
            value: f64::NEG_INFINITY,
            measure: None,
            leaf_probabilities: None,
            selected_p: None,
            lambda: None,
            penalty: f64::INFINITY,
            status: SolveStatus::Infeasible,
            gap: 0.0,
            iterations,
        }
    }
}

/// Superhedging dual: maximizes the expected payoff over the martingale
/// polytope. Equals the superhedging price by linear-programming duality;
/// an empty polytope signals a strict arbitrage on the support.
pub fn superhedge_dual(
    tree: &ScenarioTree,
    pset: &ReferenceMeasureSet,
    x: &Claim,
) -> Result<DualSolution> {
    let poly = build_polytope(tree, pset);
    let obj: Vec<f64> = poly
        .leaf_ids
        .iter()
        .map(|&l| x.at(tree.leaf_index(l).unwrap()))
        .collect();
    let (status, q, value, iterations) = poly.maximize_linear(&obj);
    match status {
        LpStatus::Optimal => {
            let full = poly.full_leaf_vector(tree, &q);
            let measure = TreeMeasure::from_leaf_probabilities(tree, &full)?;
            Ok(DualSolution {
                value,
                measure: Some(measure),
                leaf_probabilities: Some(full),
                selected_p: None,
                lambda: None,
                penalty: 0.0,
                status: SolveStatus::Optimal,
                gap: 0.0,
                iterations,
            })
        }
        LpStatus::Infeasible => Ok(DualSolution::infeasible(iterations)),
        LpStatus::Unbounded => {
            Err(Error::Solver("martingale polytope reported unbounded".into()))
        }
    }
}

/// Penalized dual of the relaxed hedging price: maximizes
/// `E_Q[X] - E_{P_lambda}[l*(dQ/dP_lambda)]` over martingale measures Q on
/// the support and mixtures lambda of the reference family. The strict cone
/// delegates to [`superhedge_dual`].
pub fn dual_price(
    tree: &ScenarioTree,
    pset: &ReferenceMeasureSet,
    x: &Claim,
    spec: &LossSpec,
) -> Result<DualSolution> {
    if spec.is_strict_cone() {
        return superhedge_dual(tree, pset, x);
    }
    let poly = build_polytope(tree, pset);
    let problem = MixtureDual::new(tree, pset, x.values().to_vec(), spec);
    debug_assert_eq!(problem.leaf_ids, poly.leaf_ids);
    if spec.is_polyhedral() {
        let martingale_rows: Vec<(Vec<f64>, f64)> = poly.rows[1..].to_vec();
        let sol = problem.solve_lp(Some(&martingale_rows))?;
        if sol.value == f64::NEG_INFINITY {
            return Ok(DualSolution::infeasible(sol.iterations));
        }
        return finish_dual(tree, &poly, sol.value, sol.q, sol.lambda, sol.penalty, 0.0, sol.iterations);
    }
    // Smooth penalty: conditional gradient over (Q, lambda); the linear
    // oracle on the Q block is the martingale-polytope simplex.
    let Some(q0) = poly.feasible_point() else {
        return Ok(DualSolution::infeasible(0));
    };
    let n = poly.num_vars();
    let k = pset.len();
    let mut best = problem.solve_smooth(q0, polytope_block_lmo(&poly, k), 1e-7, 50_000, 3)?;
    // Per-member anchor runs over the member-supported face of the polytope;
    // see the mixture-vertex remark in the risk module.
    if k > 1 {
        for j in 0..k {
            let zero_cols: Vec<usize> =
                (0..n).filter(|&i| problem.member_probs[j][i] <= 0.0).collect();
            let masked = poly.with_zero_cols(&zero_cols);
            let Some(q0j) = masked.feasible_point() else { continue };
            let sub = problem.for_member(j);
            let sol = sub.solve_smooth(q0j, polytope_block_lmo(&masked, 1), 1e-7, 50_000, 3)?;
            let sol = problem.embed_member(j, sol);
            if sol.value > best.value {
                best = sol;
            }
        }
    }
    let status = if best.gap <= 1e-6 { SolveStatus::Optimal } else { SolveStatus::IterationLimit };
    let mut out = finish_dual(
        tree,
        &poly,
        best.value,
        best.q,
        best.lambda,
        best.penalty,
        best.gap,
        best.iterations,
    )?;
    out.status = status;
    Ok(out)
}

/// Joint linear oracle: the martingale-polytope simplex on the q block and
/// the best vertex on the mixture block.
fn polytope_block_lmo(
    poly: &MartingalePolytope,
    kk: usize,
) -> impl FnMut(&[f64]) -> Vec<f64> + '_ {
    move |g: &[f64]| -> Vec<f64> {
        let nn = g.len() - kk;
        let (status, qx, _, _) = poly.maximize_linear(&g[..nn]);
        debug_assert_eq!(status, LpStatus::Optimal);
        let mut v = qx;
        v.resize(nn + kk, 0.0);
        let bl = (0..kk).max_by(|&a, &b| g[nn + a].partial_cmp(&g[nn + b]).unwrap()).unwrap();
        v[nn + bl] = 1.0;
        v
    }
}

#[allow(clippy::too_many_arguments)]
fn finish_dual(
    tree: &ScenarioTree,
    poly: &MartingalePolytope,
    value: f64,
    q: Vec<f64>,
    lambda: Vec<f64>,
    penalty: f64,
    gap: f64,
    iterations: usize,
) -> Result<DualSolution> {
    let full = poly.full_leaf_vector(tree, &q);
    let measure = TreeMeasure::from_leaf_probabilities(tree, &full)?;
    let selected_p = lambda
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i);
    Ok(DualSolution {
        value,
        measure: Some(measure),
        leaf_probabilities: Some(full),
        selected_p,
        lambda: Some(lambda),
        penalty,
        status: SolveStatus::Optimal,
        gap,
        iterations,
    })
}

/// Market viability status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Viability {
    /// Some martingale measure on the support has a finite divergence
    /// penalty; relaxed prices are bounded below.
    Viable,
    /// Every martingale candidate has infinite penalty (or none exists);
    /// the relaxed price of every claim is unbounded below.
    Nonviable,
}

/// Dual-feasibility probe of market viability.
pub fn viability_check(
    tree: &ScenarioTree,
    pset: &ReferenceMeasureSet,
    spec: &LossSpec,
) -> Result<Viability> {
    let poly = build_polytope(tree, pset);
    if poly.feasible_point().is_none() {
        return Ok(Viability::Nonviable);
    }
    if spec.is_strict_cone() || spec.is_smooth() {
        // Smooth conjugates are finite on the whole half-line, so any
        // martingale measure on the support has finite penalty.
        return Ok(Viability::Viable);
    }
    let problem = MixtureDual::new(tree, pset, vec![0.0; tree.leaves().len()], spec);
    let martingale_rows: Vec<(Vec<f64>, f64)> = poly.rows[1..].to_vec();
    let sol = problem.solve_lp(Some(&martingale_rows))?;
    Ok(if sol.value == f64::NEG_INFINITY { Viability::Nonviable } else { Viability::Viable })
}

/// Primal/dual cross report for one instance.
#[derive(Debug, Clone)]
pub struct DualityReport {
    pub primal: PrimalSolution,
    pub dual: DualSolution,
    /// `primal - dual`; NaN when either side failed.
    pub gap: f64,
    /// Weak duality `gap >= -1e-6`; `None` when a side is not optimal.
    pub weak_duality_ok: Option<bool>,
    /// Strong duality `|gap| <= 1e-4`; checked only without a gains floor
    /// (the martingale dual bounds the floored primal only from below).
    pub strong_duality_ok: Option<bool>,
    /// Both probes agree that the market is nonviable.
    pub nonviable: bool,
    pub floor: Option<f64>,
}

/// Runs the primal solver (floored when `floor` is given) and the penalized
/// dual, and reports the duality gap with pass/fail flags.
pub fn duality_report(
    tree: &ScenarioTree,
    pset: &ReferenceMeasureSet,
    x: &Claim,
    spec: &LossSpec,
    floor: Option<f64>,
) -> Result<DualityReport> {
    let primal = match floor {
        Some(c) => primal::accept_price_bounded(tree, pset, x, spec, c)?,
        None => primal::accept_price(tree, pset, x, spec)?,
    };
    let dual = dual_price(tree, pset, x, spec)?;
    let nonviable = primal.status == SolveStatus::Unbounded
        && dual.status == SolveStatus::Infeasible;
    let both_finite = primal.price.is_finite() && dual.value.is_finite();
    let gap = if both_finite { primal.price - dual.value } else { f64::NAN };
    let weak = if both_finite { Some(gap >= -WEAK_DUALITY_TOL) } else { None };
    let strong = if both_finite && floor.map_or(true, |c| !c.is_finite()) {
        Some(gap.abs() <= STRONG_DUALITY_TOL)
    } else {
        None
    };
    Ok(DualityReport {
        primal,
        dual,
        gap,
        weak_duality_ok: weak,
        strong_duality_ok: strong,
        nonviable,
        floor,
    })
}

/// Checks that a leaf-probability vector vanishes off the union support.
pub fn supported_only(tree: &ScenarioTree, pset: &ReferenceMeasureSet, leaf_probs: &[f64]) -> bool {
    tree.leaves()
        .iter()
        .enumerate()
        .all(|(li, &l)| pset.is_supported(l) || leaf_probs[li] <= 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{self, DEFAULT_MARTINGALE_TOL};
    use crate::risk;

    fn trinomial_uniform() -> (ScenarioTree, ReferenceMeasureSet) {
        let t = ScenarioTree::generate(100.0, &[1.2, 1.0, 0.8], 1).unwrap();
        let pset = ReferenceMeasureSet::new(&t, vec![TreeMeasure::uniform(&t)]).unwrap();
        (t, pset)
    }

    #[test]
    fn polytope_binomial_unique_point() {
        let t = ScenarioTree::generate(100.0, &[1.2, 0.8], 1).unwrap();
        let pset = ReferenceMeasureSet::new(&t, vec![TreeMeasure::uniform(&t)]).unwrap();
        let poly = build_polytope(&t, &pset);
        assert_eq!(poly.num_vars(), 2);
        let q = poly.feasible_point().unwrap();
        assert!((q[0] - 0.5).abs() < 1e-9 && (q[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn polytope_two_step_product_structure() {
        let t = ScenarioTree::generate(100.0, &[1.2, 0.8], 2).unwrap();
        let pset = ReferenceMeasureSet::new(&t, vec![TreeMeasure::uniform(&t)]).unwrap();
        let poly = build_polytope(&t, &pset);
        let q = poly.feasible_point().unwrap();
        // symmetric two-step binomial: unique point, all leaves 1/4
        for &v in &q {
            assert!((v - 0.25).abs() < 1e-9, "leaf prob {v}");
        }
    }

    #[test]
    fn superhedge_dual_trinomial_call() {
        let (t, pset) = trinomial_uniform();
        let call = Claim::call(&t, 0, 100.0).unwrap();
        let sol = superhedge_dual(&t, &pset, &call).unwrap();
        assert!((sol.value - 10.0).abs() < 1e-8);
        let lp = sol.leaf_probabilities.unwrap();
        assert!((lp[0] - 0.5).abs() < 1e-8);
        assert!(lp[1].abs() < 1e-8);
        assert!((lp[2] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn superhedge_dual_constant_claim() {
        let (t, pset) = trinomial_uniform();
        let x = Claim::constant(&t, 4.0).unwrap();
        let sol = superhedge_dual(&t, &pset, &x).unwrap();
        assert!((sol.value - 4.0).abs() < 1e-9);
    }

    #[test]
    fn superhedge_dual_ignores_reference_weights() {
        let t = ScenarioTree::generate(100.0, &[1.2, 0.8], 1).unwrap();
        let p = TreeMeasure::new(&t, vec![vec![0.9, 0.1]]).unwrap();
        let pset = ReferenceMeasureSet::new(&t, vec![p]).unwrap();
        let call = Claim::call(&t, 0, 100.0).unwrap();
        let sol = superhedge_dual(&t, &pset, &call).unwrap();
        assert!((sol.value - 10.0).abs() < 1e-8);
    }

    #[test]
    fn dual_price_cvar_fixture() {
        let (t, pset) = trinomial_uniform();
        let call = Claim::call(&t, 0, 100.0).unwrap();
        let spec = LossSpec::cvar(0.9).unwrap();
        let sol = dual_price(&t, &pset, &call, &spec).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(
            (sol.value - 200.0 / 27.0).abs() < 1e-8,
            "value {} vs {}",
            sol.value,
            200.0 / 27.0
        );
        let lp = sol.leaf_probabilities.unwrap();
        for (got, want) in lp.iter().zip([10.0 / 27.0, 7.0 / 27.0, 10.0 / 27.0]) {
            assert!((got - want).abs() < 1e-7, "leaf prob {got} vs {want}");
        }
        assert!(sol.penalty.abs() < 1e-9);
    }

    #[test]
    fn dual_price_nonviable_biased_binomial() {
        let t = ScenarioTree::generate(100.0, &[1.2, 0.8], 1).unwrap();
        let p = TreeMeasure::new(&t, vec![vec![0.9, 0.1]]).unwrap();
        let pset = ReferenceMeasureSet::new(&t, vec![p]).unwrap();
        let call = Claim::call(&t, 0, 100.0).unwrap();
        let spec = LossSpec::cvar(0.8).unwrap();
        let sol = dual_price(&t, &pset, &call, &spec).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert_eq!(
            viability_check(&t, &pset, &spec).unwrap(),
            Viability::Nonviable
        );
        // the uniform variant is viable
        let pset_u =
            ReferenceMeasureSet::new(&t, vec![TreeMeasure::uniform(&t)]).unwrap();
        assert_eq!(
            viability_check(&t, &pset_u, &spec).unwrap(),
            Viability::Viable
        );
    }

    #[test]
    fn entropic_always_viable_with_martingale_point() {
        let (t, pset) = trinomial_uniform();
        assert_eq!(
            viability_check(&t, &pset, &LossSpec::entropic()).unwrap(),
            Viability::Viable
        );
    }

    #[test]
    fn dual_price_power_cross_check() {
        let (t, pset) = trinomial_uniform();
        let call = Claim::call(&t, 0, 100.0).unwrap();
        let spec = LossSpec::power(3.0).unwrap();
        let dual = dual_price(&t, &pset, &call, &spec).unwrap();
        let expected = 10.0 - 2.0 * 1.5_f64.powf(1.5) / 4.5;
        assert!(
            (dual.value - expected).abs() < 1e-5,
            "dual {} vs {expected}",
            dual.value
        );
        let primal = primal::accept_price(&t, &pset, &call, &spec).unwrap();
        assert!((primal.price - dual.value).abs() < 1e-4);
        // strictly between the zero-penalty bound and the superhedge price
        assert!(dual.value < 10.0 - 1e-3);
        // returned measure is a martingale measure on the support
        let q = dual.measure.as_ref().unwrap();
        assert!(market::is_martingale_measure(&t, q, 1e-8));
        assert!(supported_only(&t, &pset, dual.leaf_probabilities.as_ref().unwrap()));
    }

    #[test]
    fn conjugate_decomposition_at_optimum() {
        let (t, pset) = trinomial_uniform();
        let call = Claim::call(&t, 0, 100.0).unwrap();
        for spec in [LossSpec::cvar(0.9).unwrap(), LossSpec::power(3.0).unwrap()] {
            let sol = dual_price(&t, &pset, &call, &spec).unwrap();
            let q = sol.measure.as_ref().unwrap();
            let lp = q.leaf_probabilities(&t);
            let eqx: f64 = lp.iter().zip(call.values()).map(|(&p, &v)| p * v).sum();
            let (pen, _) =
                risk::divergence_penalty_mixture(&t, q, &pset, &spec).unwrap();
            assert!(
                (sol.value - (eqx - pen)).abs() < 1e-6,
                "{}: value {} vs decomposition {}",
                spec.kind_name(),
                sol.value,
                eqx - pen
            );
        }
    }

    #[test]
    fn duality_report_trinomial() {
        let (t, pset) = trinomial_uniform();
        let call = Claim::call(&t, 0, 100.0).unwrap();
        for spec in [
            LossSpec::strict_cone(),
            LossSpec::cvar(0.9).unwrap(),
            LossSpec::power(3.0).unwrap(),
            LossSpec::entropic(),
        ] {
            let report = duality_report(&t, &pset, &call, &spec, None).unwrap();
            assert_eq!(report.weak_duality_ok, Some(true), "{}", spec.kind_name());
            assert_eq!(report.strong_duality_ok, Some(true), "{}", spec.kind_name());
        }
    }

    #[test]
    fn dual_value_monotone_in_cvar_level() {
        // Larger alpha tightens the density cap (smaller acceptance set for
        // the seller), so the dual value never increases.
        let (t, pset) = trinomial_uniform();
        let call = Claim::call(&t, 0, 100.0).unwrap();
        let mut prev = f64::INFINITY;
        for alpha in [0.5, 0.8, 0.9] {
            let spec = LossSpec::cvar(alpha).unwrap();
            let v = dual_price(&t, &pset, &call, &spec).unwrap().value;
            assert!(v <= prev + 1e-8, "alpha {alpha}: {v} > {prev}");
            prev = v;
        }
    }

    #[test]
    fn returned_measures_are_martingales() {
        let (t, pset) = trinomial_uniform();
        let call = Claim::call(&t, 0, 100.0).unwrap();
        for spec in [LossSpec::cvar(0.9).unwrap(), LossSpec::entropic()] {
            let sol = dual_price(&t, &pset, &call, &spec).unwrap();
            let q = sol.measure.unwrap();
            assert!(market::is_martingale_measure(&t, &q, 1e-8));
        }
        let sd = superhedge_dual(&t, &pset, &call).unwrap();
        assert!(market::is_martingale_measure(&t, &sd.measure.unwrap(), DEFAULT_MARTINGALE_TOL));
    }
}
