//! Classical and robust optimized certainty equivalents, acceptance-set
//! queries, divergence penalties, and the dual representation of the
//! robust OCE.
//!
//! The robust OCE is evaluated exactly as an inf over the cash shift of the
//! sup over the reference family; no minimax interchange is assumed. Dual
//! programs maximize over pairs (Q, lambda) where lambda mixes the reference
//! family: on finite trees the conjugate of the worst-case expectation is
//! the divergence penalty minimized over mixtures, and restricting lambda to
//! the family members alone can leave a genuine duality gap.

use crate::error::{Error, Result};
use crate::fw::{self, FwOptions};
use crate::loss::LossSpec;
use crate::market::{Claim, ReferenceMeasureSet, ScenarioTree, TreeMeasure};
use crate::optim;
use crate::simplex::{Cmp, LpBuilder, LpStatus};

/// Robust-OCE values at or below this threshold count as acceptable;
/// primal optimizers return shortfalls sitting numerically on the boundary.
pub const ACCEPTANCE_TOL: f64 = 1e-9;

/// Bracket-expansion cap for the cash-shift minimization.
const SHIFT_MAX_RADIUS: f64 = (1u64 << 40) as f64;

/// Value and optimizer of an OCE evaluation.
#[derive(Debug, Clone)]
pub struct RiskResult {
    pub value: f64,
    /// Attaining cash shift, when the bracket closed.
    pub m_star: Option<f64>,
    /// Index of the reference measure attaining the inner supremum at the
    /// optimal shift (`None` for a single-measure evaluation).
    pub worst_measure: Option<usize>,
}

/// Classical optimized certainty equivalent under one measure:
/// `inf_m E_P[l(m - X)] - m`.
pub fn oce(
    tree: &ScenarioTree,
    p: &TreeMeasure,
    x: &Claim,
    spec: &LossSpec,
) -> Result<RiskResult> {
    let lp = p.leaf_probabilities(tree);
    let mut r = oce_multi(tree, std::slice::from_ref(&lp), x, spec)?;
    r.worst_measure = None;
    Ok(r)
}

/// Robust optimized certainty equivalent:
/// `inf_m max_P (E_P[l(m - X)] - m)` over the reference family.
pub fn robust_oce(
    tree: &ScenarioTree,
    pset: &ReferenceMeasureSet,
    x: &Claim,
    spec: &LossSpec,
) -> Result<RiskResult> {
    let lps: Vec<Vec<f64>> =
        pset.measures().iter().map(|p| p.leaf_probabilities(tree)).collect();
    oce_multi(tree, &lps, x, spec)
}

fn oce_multi(
    tree: &ScenarioTree,
    leaf_probs: &[Vec<f64>],
    x: &Claim,
    spec: &LossSpec,
) -> Result<RiskResult> {
    if spec.is_strict_cone() {
        return Err(Error::StrictConeLoss);
    }
    let _ = tree;
    let inner = |m: f64, lp: &[f64]| -> f64 {
        let mut e = 0.0;
        for (li, &pl) in lp.iter().enumerate() {
            if pl > 0.0 {
                e += pl * spec.eval(m - x.at(li)).unwrap();
            }
        }
        e - m
    };
    let objective = |m: f64| -> f64 {
        leaf_probs.iter().map(|lp| inner(m, lp)).fold(f64::NEG_INFINITY, f64::max)
    };
    let scale = x.values().iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let min = optim::minimize_convex(
        &objective,
        -(scale + 1.0),
        scale + 1.0,
        SHIFT_MAX_RADIUS * (1.0 + scale),
    )
    .ok_or_else(|| {
        Error::NonCoercive("cash-shift objective does not increase at the bracket ends".into())
    })?;
    let worst = leaf_probs
        .iter()
        .enumerate()
        .max_by(|a, b| {
            inner(min.x, a.1).partial_cmp(&inner(min.x, b.1)).unwrap_or(std::cmp::Ordering::Equal)
        })
        .map(|(i, _)| i);
    Ok(RiskResult { value: min.value, m_star: Some(min.x), worst_measure: worst })
}

/// Acceptance-set membership. For the strict cone this means being
/// nonnegative at every supported leaf; otherwise the robust OCE must not
/// exceed [`ACCEPTANCE_TOL`].
pub fn is_acceptable(
    tree: &ScenarioTree,
    pset: &ReferenceMeasureSet,
    x: &Claim,
    spec: &LossSpec,
) -> Result<bool> {
    if spec.is_strict_cone() {
        return Ok(tree
            .leaves()
            .iter()
            .enumerate()
            .all(|(li, &leaf)| !pset.is_supported(leaf) || x.at(li) >= -ACCEPTANCE_TOL));
    }
    Ok(robust_oce(tree, pset, x, spec)?.value <= ACCEPTANCE_TOL)
}

/// Divergence penalty `min_P E_P[l*(dQ/dP)]` over the family members.
/// Infinite when Q is absolutely continuous with respect to no member.
pub fn divergence_penalty(
    tree: &ScenarioTree,
    q: &TreeMeasure,
    pset: &ReferenceMeasureSet,
    spec: &LossSpec,
) -> Result<f64> {
    if spec.is_strict_cone() {
        return Err(Error::StrictConeLoss);
    }
    let ql = q.leaf_probabilities(tree);
    let mut best = f64::INFINITY;
    for p in pset.measures() {
        let pl = p.leaf_probabilities(tree);
        best = best.min(penalty_against(&ql, &pl, spec)?);
    }
    Ok(best)
}

fn penalty_against(ql: &[f64], pl: &[f64], spec: &LossSpec) -> Result<f64> {
    let mut total = 0.0;
    for (&qi, &pi) in ql.iter().zip(pl.iter()) {
        if pi > 0.0 {
            total += pi * spec.conjugate(qi / pi)?;
        } else if qi > 0.0 {
            return Ok(f64::INFINITY);
        }
    }
    Ok(total)
}

/// Divergence penalty minimized over mixtures of the family,
/// `min_{lambda} E_{P_lambda}[l*(dQ/dP_lambda)]`; this is the exact
/// conjugate of the robust OCE. Returns the value and the minimizing
/// mixture weights.
pub fn divergence_penalty_mixture(
    tree: &ScenarioTree,
    q: &TreeMeasure,
    pset: &ReferenceMeasureSet,
    spec: &LossSpec,
) -> Result<(f64, Vec<f64>)> {
    if spec.is_strict_cone() {
        return Err(Error::StrictConeLoss);
    }
    let k = pset.len();
    let ql = q.leaf_probabilities(tree);
    let plfs: Vec<Vec<f64>> =
        pset.measures().iter().map(|p| p.leaf_probabilities(tree)).collect();
    if k == 1 {
        return Ok((penalty_against(&ql, &plfs[0], spec)?, vec![1.0]));
    }
    if spec.is_polyhedral() {
        // min sum_l v_l  s.t.  v_l >= b_i q_l + c_i P_lambda(l), domain caps.
        let pieces = spec.conjugate_pieces().unwrap();
        let mut lp = LpBuilder::minimize();
        let lam: Vec<usize> = (0..k).map(|_| lp.add_var(0.0, false)).collect();
        lp.add_row(lam.iter().map(|&v| (v, 1.0)).collect(), Cmp::Eq, 1.0);
        for (li, &qi) in ql.iter().enumerate() {
            let pbar: Vec<(usize, f64)> =
                lam.iter().enumerate().map(|(j, &v)| (v, plfs[j][li])).collect();
            let v = lp.add_var(1.0, true);
            for &(b, c) in &pieces.points {
                // v - c * P_lambda >= b * q
                let mut row = vec![(v, 1.0)];
                row.extend(pbar.iter().map(|&(var, pc)| (var, -c * pc)));
                lp.add_row(row, Cmp::Ge, b * qi);
            }
            let (s_lo, s_hi) = pieces.domain;
            // q_l within the slope range of P_lambda(l)
            if s_hi.is_finite() {
                lp.add_row(pbar.iter().map(|&(var, pc)| (var, s_hi * pc)).collect(), Cmp::Ge, qi);
            }
            if s_lo > 0.0 {
                lp.add_row(pbar.iter().map(|&(var, pc)| (var, s_lo * pc)).collect(), Cmp::Le, qi);
            }
        }
        let sol = lp.solve();
        return match sol.status {
            LpStatus::Optimal => {
                let lambda: Vec<f64> = lam.iter().map(|&v| sol.x[v]).collect();
                Ok((sol.objective, lambda))
            }
            _ => Ok((f64::INFINITY, vec![0.0; k])),
        };
    }
    // Smooth conjugate: concave maximization of -penalty over the mixture
    // simplex.
    let f = |lambda: &[f64]| -> f64 {
        match mixture_penalty_value(&ql, &plfs, lambda, spec) {
            Some(v) => -v,
            None => f64::NEG_INFINITY,
        }
    };
    let grad = |lambda: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; k];
        for (li, &qi) in ql.iter().enumerate() {
            let pbar: f64 = (0..k).map(|j| lambda[j] * plfs[j][li]).sum();
            if pbar <= 0.0 {
                continue;
            }
            let resid = spec.conjugate_perspective_residual(qi / pbar).unwrap();
            for (j, gj) in g.iter_mut().enumerate() {
                *gj -= plfs[j][li] * resid;
            }
        }
        g
    };
    let lmo = |g: &[f64]| -> Vec<f64> {
        let mut v = vec![0.0; k];
        let best =
            g.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        v[best] = 1.0;
        v
    };
    let x0 = vec![1.0 / k as f64; k];
    if f(&x0) == f64::NEG_INFINITY {
        return Ok((f64::INFINITY, x0));
    }
    let out = fw::maximize_concave(
        x0,
        f,
        grad,
        lmo,
        &FwOptions { tol: 1e-8, max_iter: 50_000, lmo_refresh: 1 },
    );
    Ok((-out.value, out.x))
}

/// Joint linear oracle over the product of the q-simplex and the mixture
/// simplex.
fn simplex_block_lmo(n: usize, k: usize) -> impl FnMut(&[f64]) -> Vec<f64> {
    move |g: &[f64]| {
        let mut v = vec![0.0; n + k];
        let bq = (0..n).max_by(|&a, &b| g[a].partial_cmp(&g[b]).unwrap()).unwrap();
        let bl = (n..n + k).max_by(|&a, &b| g[a].partial_cmp(&g[b]).unwrap()).unwrap();
        v[bq] = 1.0;
        v[bl] = 1.0;
        v
    }
}

fn mixture_penalty_value(
    ql: &[f64],
    plfs: &[Vec<f64>],
    lambda: &[f64],
    spec: &LossSpec,
) -> Option<f64> {
    let mut total = 0.0;
    for (li, &qi) in ql.iter().enumerate() {
        let pbar: f64 = lambda.iter().zip(plfs.iter()).map(|(&l, p)| l * p[li]).sum();
        if pbar > 0.0 {
            total += pbar * spec.conjugate(qi / pbar).ok()?;
        } else if qi > 0.0 {
            return None;
        }
    }
    Some(total)
}

/// Outcome of the dual OCE program.
#[derive(Debug, Clone)]
pub struct DualOce {
    pub value: f64,
    /// Optimizing leaf probabilities, aligned with [`ScenarioTree::leaves`].
    pub leaf_probabilities: Vec<f64>,
    /// Mixture weights over the reference family at the optimum.
    pub lambda: Vec<f64>,
    /// Certified suboptimality bound of the reported value.
    pub gap: f64,
    pub iterations: usize,
}

/// Dual representation of the robust OCE:
/// `sup_{Q, lambda} E_Q[-X] - E_{P_lambda}[l*(dQ/dP_lambda)]`
/// over probability measures Q on the supported leaves and mixtures lambda
/// of the reference family. Equals [`robust_oce`] up to solver tolerance.
pub fn dual_oce(
    tree: &ScenarioTree,
    pset: &ReferenceMeasureSet,
    x: &Claim,
    spec: &LossSpec,
) -> Result<DualOce> {
    if spec.is_strict_cone() {
        return Err(Error::StrictConeLoss);
    }
    let neg_payoff: Vec<f64> = x.values().iter().map(|&v| -v).collect();
    let problem = MixtureDual::new(tree, pset, neg_payoff, spec);
    let sol = problem.solve()?;
    Ok(DualOce {
        value: sol.value,
        leaf_probabilities: problem.full_leaf_vector(tree, &sol.q),
        lambda: sol.lambda,
        gap: sol.gap,
        iterations: sol.iterations,
    })
}

/// Shared machinery for the penalized dual programs: maximize
/// `sum_l payoff_l q_l - E_{P_lambda}[l*(q/P_lambda)]` over `q` in a polytope
/// and `lambda` in the mixture simplex. Used with the plain probability
/// simplex here and with the martingale polytope by the dual pricing module.
pub(crate) struct MixtureDual<'a> {
    /// Supported leaves, variable order for `q`.
    pub leaf_ids: Vec<usize>,
    /// Payoff per q-variable (already signed for the objective).
    pub payoff: Vec<f64>,
    /// Per member, leaf probabilities restricted to the q-variable order.
    pub member_probs: Vec<Vec<f64>>,
    pub spec: &'a LossSpec,
}

pub(crate) struct MixtureDualSolution {
    pub value: f64,
    pub q: Vec<f64>,
    pub lambda: Vec<f64>,
    pub penalty: f64,
    pub gap: f64,
    pub iterations: usize,
}

impl<'a> MixtureDual<'a> {
    pub fn new(
        tree: &ScenarioTree,
        pset: &ReferenceMeasureSet,
        payoff_full: Vec<f64>,
        spec: &'a LossSpec,
    ) -> Self {
        let leaf_ids: Vec<usize> = pset.supported_leaves(tree);
        let payoff: Vec<f64> = leaf_ids
            .iter()
            .map(|&l| payoff_full[tree.leaf_index(l).unwrap()])
            .collect();
        let member_probs: Vec<Vec<f64>> = pset
            .measures()
            .iter()
            .map(|p| {
                let lp = p.leaf_probabilities(tree);
                leaf_ids.iter().map(|&l| lp[tree.leaf_index(l).unwrap()]).collect()
            })
            .collect();
        Self { leaf_ids, payoff, member_probs, spec }
    }

    /// Expands a q-variable vector back to the full leaf order.
    pub fn full_leaf_vector(&self, tree: &ScenarioTree, q: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; tree.leaves().len()];
        for (vi, &leaf) in self.leaf_ids.iter().enumerate() {
            full[tree.leaf_index(leaf).unwrap()] = q[vi];
        }
        full
    }

    /// Solves over the plain probability simplex in q.
    pub fn solve(&self) -> crate::error::Result<MixtureDualSolution> {
        if self.spec.is_polyhedral() {
            return self.solve_lp(None);
        }
        let n = self.payoff.len();
        let k = self.member_probs.len();
        // Average measure restricted to the support is a safe interior
        // start.
        let mut q0 = vec![0.0; n];
        for probs in &self.member_probs {
            for (qi, &pi) in q0.iter_mut().zip(probs.iter()) {
                *qi += pi / k as f64;
            }
        }
        let total: f64 = q0.iter().sum();
        for qi in q0.iter_mut() {
            *qi /= total;
        }
        let mut best = self.solve_smooth(q0, simplex_block_lmo(n, k), 1e-8, 200_000, 1)?;
        // Per-member anchor runs: when member supports barely overlap, the
        // joint iteration can lock onto the wrong mixture vertex, because a
        // first-order step cannot see the coupled (q, lambda) move across
        // the absolute-continuity wall.
        if k > 1 {
            for j in 0..k {
                let sub = self.for_member(j);
                let q0j = self.member_probs[j].clone();
                let sol = sub.solve_smooth(q0j, simplex_block_lmo(n, 1), 1e-8, 200_000, 1)?;
                let sol = self.embed_member(j, sol);
                if sol.value > best.value {
                    best = sol;
                }
            }
        }
        Ok(best)
    }

    /// Exact LP for polyhedral conjugates. When `extra_rows` is given, those
    /// equality rows over the q-variables are added (martingale constraints);
    /// the probability normalization row is always included.
    pub fn solve_lp(
        &self,
        extra_rows: Option<&[(Vec<f64>, f64)]>,
    ) -> crate::error::Result<MixtureDualSolution> {
        let n = self.payoff.len();
        let k = self.member_probs.len();
        let pieces = self.spec.conjugate_pieces().unwrap();
        let mut lp = LpBuilder::maximize();
        let qv: Vec<usize> = (0..n).map(|i| lp.add_var(self.payoff[i], false)).collect();
        let lam: Vec<usize> = (0..k).map(|_| lp.add_var(0.0, false)).collect();
        lp.add_row(qv.iter().map(|&v| (v, 1.0)).collect(), Cmp::Eq, 1.0);
        lp.add_row(lam.iter().map(|&v| (v, 1.0)).collect(), Cmp::Eq, 1.0);
        if let Some(rows) = extra_rows {
            for (coeffs, rhs) in rows {
                lp.add_row(
                    coeffs.iter().enumerate().map(|(i, &c)| (qv[i], c)).collect(),
                    Cmp::Eq,
                    *rhs,
                );
            }
        }
        let mut vvars = Vec::with_capacity(n);
        for i in 0..n {
            let pbar: Vec<(usize, f64)> =
                lam.iter().enumerate().map(|(j, &v)| (v, self.member_probs[j][i])).collect();
            let v = lp.add_var(-1.0, true);
            vvars.push(v);
            for &(b, c) in &pieces.points {
                let mut row = vec![(v, 1.0), (qv[i], -b)];
                row.extend(pbar.iter().map(|&(var, pc)| (var, c * pc)));
                lp.add_row(row, Cmp::Ge, 0.0);
            }
            let (s_lo, s_hi) = pieces.domain;
            if s_hi.is_finite() {
                let mut row = vec![(qv[i], 1.0)];
                row.extend(pbar.iter().map(|&(var, pc)| (var, -s_hi * pc)));
                lp.add_row(row, Cmp::Le, 0.0);
            }
            if s_lo > 0.0 {
                let mut row = vec![(qv[i], 1.0)];
                row.extend(pbar.iter().map(|&(var, pc)| (var, -s_lo * pc)));
                lp.add_row(row, Cmp::Ge, 0.0);
            }
        }
        let sol = lp.solve();
        match sol.status {
            LpStatus::Optimal => {
                let q: Vec<f64> = qv.iter().map(|&v| sol.x[v].max(0.0)).collect();
                let lambda: Vec<f64> = lam.iter().map(|&v| sol.x[v].max(0.0)).collect();
                let penalty: f64 = vvars.iter().map(|&v| sol.x[v]).sum();
                Ok(MixtureDualSolution {
                    value: sol.objective,
                    q,
                    lambda,
                    penalty,
                    gap: 0.0,
                    iterations: sol.iterations,
                })
            }
            LpStatus::Infeasible => Ok(MixtureDualSolution {
                value: f64::NEG_INFINITY,
                q: Vec::new(),
                lambda: Vec::new(),
                penalty: f64::INFINITY,
                gap: 0.0,
                iterations: sol.iterations,
            }),
            LpStatus::Unbounded => Err(Error::Solver(
                "penalized dual program reported unbounded".into(),
            )),
        }
    }

    pub fn objective(&self, q: &[f64], lambda: &[f64]) -> f64 {
        let n = self.payoff.len();
        let mut total = 0.0;
        for i in 0..n {
            let qi = q[i].max(0.0);
            let pbar: f64 =
                lambda.iter().zip(self.member_probs.iter()).map(|(&l, p)| l * p[i]).sum();
            if pbar > 0.0 {
                total += self.payoff[i] * qi - pbar * self.spec.conjugate(qi / pbar).unwrap();
            } else if qi > 1e-15 {
                return f64::NEG_INFINITY;
            }
        }
        total
    }

    pub fn penalty(&self, q: &[f64], lambda: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.payoff.len() {
            let qi = q[i].max(0.0);
            let pbar: f64 =
                lambda.iter().zip(self.member_probs.iter()).map(|(&l, p)| l * p[i]).sum();
            if pbar > 0.0 {
                total += pbar * self.spec.conjugate(qi / pbar).unwrap();
            } else if qi > 1e-15 {
                return f64::INFINITY;
            }
        }
        total
    }

    fn gradient(&self, q: &[f64], lambda: &[f64]) -> Vec<f64> {
        let n = self.payoff.len();
        let k = self.member_probs.len();
        let mut g = vec![0.0; n + k];
        for i in 0..n {
            let qi = q[i].max(0.0);
            let pbar: f64 =
                lambda.iter().zip(self.member_probs.iter()).map(|(&l, p)| l * p[i]).sum();
            if pbar <= 0.0 {
                // Dead coordinate under the current mixture: any mass here
                // sends the objective to -inf, so keep the oracle away. The
                // mixture block still sees the perspective slope at zero.
                g[i] = -1e12 * (1.0 + self.payoff[i].abs());
                let resid = self.spec.conjugate_perspective_residual(0.0).unwrap();
                for j in 0..k {
                    g[n + j] -= self.member_probs[j][i] * resid;
                }
                continue;
            }
            let y = qi / pbar;
            let y_eff = y.max(1e-14);
            g[i] = self.payoff[i] - self.spec.conjugate_deriv(y_eff).unwrap();
            let resid = self.spec.conjugate_perspective_residual(y).unwrap();
            for j in 0..k {
                g[n + j] -= self.member_probs[j][i] * resid;
            }
        }
        g
    }

    /// Restriction to a single reference member.
    pub fn for_member(&self, j: usize) -> MixtureDual<'a> {
        MixtureDual {
            leaf_ids: self.leaf_ids.clone(),
            payoff: self.payoff.clone(),
            member_probs: vec![self.member_probs[j].clone()],
            spec: self.spec,
        }
    }

    /// Embeds a single-member solution into the full mixture coordinates.
    pub fn embed_member(&self, j: usize, mut sol: MixtureDualSolution) -> MixtureDualSolution {
        let mut lambda = vec![0.0; self.member_probs.len()];
        lambda[j] = 1.0;
        sol.lambda = lambda;
        sol
    }

    /// Conditional-gradient solve for smooth conjugates; `lmo` receives the
    /// gradient over `(q, lambda)` and must return a vertex of the product
    /// feasible set.
    pub fn solve_smooth<L>(
        &self,
        q0: Vec<f64>,
        lmo: L,
        tol: f64,
        max_iter: usize,
        lmo_refresh: usize,
    ) -> crate::error::Result<MixtureDualSolution>
    where
        L: FnMut(&[f64]) -> Vec<f64>,
    {
        let n = self.payoff.len();
        let k = self.member_probs.len();
        let mut x0 = q0;
        x0.extend(std::iter::repeat(1.0 / k as f64).take(k));
        let f = |x: &[f64]| self.objective(&x[..n], &x[n..]);
        let grad = |x: &[f64]| self.gradient(&x[..n], &x[n..]);
        let out = fw::maximize_concave(
            x0,
            f,
            grad,
            lmo,
            &FwOptions { tol, max_iter, lmo_refresh },
        );
        let q = out.x[..n].to_vec();
        let lambda = out.x[n..].to_vec();
        let penalty = self.penalty(&q, &lambda);
        Ok(MixtureDualSolution {
            value: out.value,
            q,
            lambda,
            penalty,
            gap: out.gap,
            iterations: out.iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::ScenarioTree;

    fn quad_tree() -> (ScenarioTree, ReferenceMeasureSet) {
        // One-step tree with 4 leaves; prices are irrelevant for pure risk
        // functionals.
        let t = ScenarioTree::generate(100.0, &[1.2, 1.1, 0.9, 0.8], 1).unwrap();
        let p = TreeMeasure::uniform(&t);
        let pset = ReferenceMeasureSet::new(&t, vec![p]).unwrap();
        (t, pset)
    }

    #[test]
    fn constant_claim_entropic() {
        let (t, pset) = quad_tree();
        let c = 3.5;
        let x = Claim::constant(&t, c).unwrap();
        let spec = LossSpec::entropic();
        let r = robust_oce(&t, &pset, &x, &spec).unwrap();
        assert!((r.value + c).abs() < 1e-9, "rho(c) = {}", r.value);
    }

    #[test]
    fn cvar_oce_matches_sorted_tail() {
        let (t, pset) = quad_tree();
        let x = Claim::from_leaf_values(&t, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let spec = LossSpec::cvar(0.5).unwrap();
        let r = oce(&t, &pset.measures()[0], &x, &spec).unwrap();
        assert!((r.value + 1.5).abs() < 1e-9, "cvar oce = {}", r.value);
    }

    #[test]
    fn entropic_oce_closed_form() {
        let t = ScenarioTree::generate(100.0, &[1.2, 0.8], 1).unwrap();
        let p = TreeMeasure::uniform(&t);
        let x = Claim::from_leaf_values(&t, vec![0.0, 2.0_f64.ln()]).unwrap();
        let spec = LossSpec::entropic();
        let r = oce(&t, &p, &x, &spec).unwrap();
        assert!((r.value - 0.75_f64.ln()).abs() < 1e-9, "got {}", r.value);
    }

    #[test]
    fn robust_oce_singleton_reduces_to_oce() {
        let (t, pset) = quad_tree();
        let x = Claim::from_leaf_values(&t, vec![2.0, -1.0, 0.5, 3.0]).unwrap();
        for spec in [LossSpec::cvar(0.8).unwrap(), LossSpec::entropic(), LossSpec::power(3.0).unwrap()]
        {
            let a = robust_oce(&t, &pset, &x, &spec).unwrap().value;
            let b = oce(&t, &pset.measures()[0], &x, &spec).unwrap().value;
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn robust_oce_dominates_each_member() {
        let t = ScenarioTree::generate(100.0, &[1.2, 1.0, 0.8], 1).unwrap();
        let p1 = TreeMeasure::new(&t, vec![vec![0.6, 0.2, 0.2]]).unwrap();
        let p2 = TreeMeasure::new(&t, vec![vec![0.1, 0.3, 0.6]]).unwrap();
        let pset = ReferenceMeasureSet::new(&t, vec![p1, p2]).unwrap();
        let x = Claim::from_leaf_values(&t, vec![5.0, -2.0, 1.0]).unwrap();
        let spec = LossSpec::cvar(0.8).unwrap();
        let robust = robust_oce(&t, &pset, &x, &spec).unwrap().value;
        for p in pset.measures() {
            let single = oce(&t, p, &x, &spec).unwrap().value;
            assert!(robust >= single - 1e-9);
        }
    }

    #[test]
    fn acceptance_examples() {
        let (t, pset) = quad_tree();
        let spec = LossSpec::cvar(0.5).unwrap();
        let pos = Claim::from_leaf_values(&t, vec![0.0, 1.0, 2.0, 0.5]).unwrap();
        assert!(is_acceptable(&t, &pset, &pos, &spec).unwrap());
        let neg = Claim::constant(&t, -1.0).unwrap();
        assert!(!is_acceptable(&t, &pset, &neg, &spec).unwrap());

        let cone = LossSpec::strict_cone();
        assert!(is_acceptable(&t, &pset, &pos, &cone).unwrap());
        assert!(!is_acceptable(&t, &pset, &neg, &cone).unwrap());
    }

    #[test]
    fn divergence_penalty_examples() {
        let t = ScenarioTree::generate(100.0, &[1.2, 1.0, 0.8], 1).unwrap();
        let p = TreeMeasure::uniform(&t);
        let pset = ReferenceMeasureSet::new(&t, vec![p.clone()]).unwrap();
        let cv = LossSpec::cvar(0.5).unwrap();
        assert!(divergence_penalty(&t, &p, &pset, &cv).unwrap().abs() < 1e-12);

        let q = TreeMeasure::new(&t, vec![vec![0.5, 0.0, 0.5]]).unwrap();
        let p3 = LossSpec::power(3.0).unwrap();
        let pen = divergence_penalty(&t, &q, &pset, &p3).unwrap();
        let expected = (2.0 / 3.0) * 1.5_f64.sqrt();
        assert!((pen - expected).abs() < 1e-9, "penalty {pen} vs {expected}");

        // Q charging a leaf that is null under every member
        let p_null = TreeMeasure::new(&t, vec![vec![0.6, 0.4, 0.0]]).unwrap();
        let pset_null = ReferenceMeasureSet::new(&t, vec![p_null]).unwrap();
        assert_eq!(divergence_penalty(&t, &q, &pset_null, &p3).unwrap(), f64::INFINITY);
    }

    #[test]
    fn dual_oce_dominates_member_candidate_bound() {
        let (t, pset) = quad_tree();
        let x = Claim::from_leaf_values(&t, vec![1.0, -2.0, 0.0, 3.0]).unwrap();
        for spec in [LossSpec::power(3.0).unwrap(), LossSpec::entropic()] {
            let d = dual_oce(&t, &pset, &x, &spec).unwrap();
            // Q = P is feasible, so the dual dominates E_P[-X] - l*(1).
            let p = &pset.measures()[0];
            let lp = p.leaf_probabilities(&t);
            let bound: f64 = lp
                .iter()
                .zip(x.values())
                .map(|(&pi, &xi)| pi * (-xi))
                .sum::<f64>()
                - spec.conjugate(1.0).unwrap();
            assert!(d.value >= bound - 1e-7, "{}: {} < {}", spec.kind_name(), d.value, bound);
        }
    }

    #[test]
    fn dual_oce_equals_robust_oce() {
        let (t, pset) = quad_tree();
        let x = Claim::from_leaf_values(&t, vec![1.5, -0.5, 0.25, 2.0]).unwrap();
        for spec in [
            LossSpec::cvar(0.5).unwrap(),
            LossSpec::cvar(0.9).unwrap(),
            LossSpec::power(3.0).unwrap(),
            LossSpec::entropic(),
        ] {
            let primal = robust_oce(&t, &pset, &x, &spec).unwrap().value;
            let dual = dual_oce(&t, &pset, &x, &spec).unwrap();
            assert!(
                (primal - dual.value).abs() < 1e-6,
                "{}: primal {primal} dual {}",
                spec.kind_name(),
                dual.value
            );
        }
    }

    #[test]
    fn dual_oce_mixture_closes_the_family_gap() {
        // Family with disjoint-support members: the robust OCE strictly
        // exceeds every per-member dual, and only the mixture dual matches.
        let t = ScenarioTree::generate(100.0, &[1.2, 1.0, 0.8], 1).unwrap();
        let p1 = TreeMeasure::new(&t, vec![vec![0.3, 0.7, 0.0]]).unwrap();
        let p2 = TreeMeasure::new(&t, vec![vec![0.0, 0.0, 1.0]]).unwrap();
        let pset = ReferenceMeasureSet::new(&t, vec![p1, p2]).unwrap();
        let x = Claim::from_leaf_values(&t, vec![0.0, 100.0, 4.0]).unwrap();
        let spec = LossSpec::cvar(0.5).unwrap();
        let primal = robust_oce(&t, &pset, &x, &spec).unwrap().value;
        assert!((primal + 16.0 / 7.0).abs() < 1e-6, "robust value {primal}");
        let dual = dual_oce(&t, &pset, &x, &spec).unwrap();
        assert!((dual.value - primal).abs() < 1e-6, "dual {}", dual.value);
        // each member alone stays strictly below
        for p in pset.measures() {
            let single = ReferenceMeasureSet::new(&t, vec![p.clone()]).unwrap();
            let member = dual_oce(&t, &single, &x, &spec).unwrap().value;
            assert!(member < primal - 1e-3);
        }
    }

    #[test]
    fn translation_property() {
        let (t, pset) = quad_tree();
        let x = Claim::from_leaf_values(&t, vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        for spec in [LossSpec::cvar(0.8).unwrap(), LossSpec::entropic(), LossSpec::power(3.0).unwrap()]
        {
            let base = robust_oce(&t, &pset, &x, &spec).unwrap().value;
            for c in [-5.0, 0.3, 7.0] {
                let shifted = Claim::from_leaf_values(
                    &t,
                    x.values().iter().map(|&v| v + c).collect(),
                )
                .unwrap();
                let v = robust_oce(&t, &pset, &shifted, &spec).unwrap().value;
                assert!((v - (base - c)).abs() < 1e-9, "{}: c={c}", spec.kind_name());
            }
        }
    }

    #[test]
    fn non_coercive_loss_errors() {
        let (t, pset) = quad_tree();
        let x = Claim::constant(&t, 1.0).unwrap();
        // slope never exceeds 1: objective keeps decreasing in m
        let spec = LossSpec::piecewise_linear(vec![0.0], vec![0.0, 0.5]).unwrap();
        assert!(matches!(
            robust_oce(&t, &pset, &x, &spec),
            Err(Error::NonCoercive(_))
        ));
    }
}
