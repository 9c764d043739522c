//! Independent brute-force verifiers used by the test suite and the hidden
//! CLI subcommand. Deliberately naive: plain grids, path re-walks, and a
//! local Gaussian elimination. Nothing here shares code with the production
//! solvers (no simplex, no cutting planes, no conditional gradient, no
//! golden section).

use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::market::{Claim, NodeId, ReferenceMeasureSet, ScenarioTree, TreeMeasure};

/// One grid coordinate: inclusive range and step.
#[derive(Debug, Clone, Copy)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

/// Grid description for the brute-force sweeps: per-coordinate ranges and
/// steps, plus local refinement settings.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub axes: Vec<GridAxis>,
    /// Each refinement round divides the steps by this factor.
    pub refine_factor: f64,
    pub rounds: usize,
}

const GRID_GUARD: f64 = 1e7;

impl GridSpec {
    /// Total grid size guard (at most 1e7 points per round).
    pub(crate) fn guard_counts(&self, axes: &[(f64, f64, f64)]) -> Result<()> {
        let mut total = 1.0_f64;
        for &(lo, hi, step) in axes {
            if !(step > 0.0) || hi < lo {
                return Err(Error::GuardExceeded(format!(
                    "bad axis [{lo}, {hi}] step {step}"
                )));
            }
            total *= ((hi - lo) / step).round() + 1.0;
        }
        if total > GRID_GUARD {
            return Err(Error::GuardExceeded(format!(
                "grid would have {total:.0} points (cap {GRID_GUARD:.0})"
            )));
        }
        Ok(())
    }
}

/// Grid minimization of the cash for an acceptable shortfall: sweeps the
/// strategy axes (`axes[1..]`), and for each grid strategy finds the
/// smallest cash on `axes[0]` whose shortfall passes an independent
/// acceptability scan. Upper-bounds the true relaxed price and converges to
/// it as the grid refines.
pub fn brute_force_primal(
    tree: &ScenarioTree,
    pset: &ReferenceMeasureSet,
    x: &Claim,
    spec: &LossSpec,
    grid: &GridSpec,
) -> Result<f64> {
    // Strategy coordinates: (supported non-terminal node, asset).
    let d = tree.asset_count();
    let mut zcoords: Vec<(NodeId, usize)> = Vec::new();
    for &n in tree.nonterminals() {
        if pset.is_supported(n) {
            for a in 0..d {
                zcoords.push((n, a));
            }
        }
    }
    if zcoords.len() > 3 {
        return Err(Error::GuardExceeded(format!(
            "brute force supports at most 3 strategy coordinates, instance has {}",
            zcoords.len()
        )));
    }
    if grid.axes.len() != zcoords.len() + 1 {
        return Err(Error::GuardExceeded(format!(
            "grid needs {} axes (cash + strategy), got {}",
            zcoords.len() + 1,
            grid.axes.len()
        )));
    }
    let leaves: Vec<(NodeId, usize)> = tree
        .leaves()
        .iter()
        .enumerate()
        .filter(|&(_, &l)| pset.is_supported(l))
        .map(|(li, &l)| (l, li))
        .collect();
    let probs: Vec<Vec<f64>> = pset
        .measures()
        .iter()
        .map(|p| {
            let lp = p.leaf_probabilities(tree);
            leaves.iter().map(|&(_, li)| lp[li]).collect()
        })
        .collect();
    // Independent gains: re-walk the root path of every leaf.
    let gain_at = |z: &[f64], leaf: NodeId| -> f64 {
        let path = tree.path_from_root(leaf);
        let mut total = 0.0;
        for w in path.windows(2) {
            let (u, v) = (w[0], w[1]);
            for (c, &(n, a)) in zcoords.iter().enumerate() {
                if n == u {
                    total += z[c] * (tree.node(v).prices[a] - tree.node(u).prices[a]);
                }
            }
        }
        total
    };
    let payoffs: Vec<f64> = leaves.iter().map(|&(_, li)| x.at(li)).collect();
    let spread = {
        let lo = payoffs.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = payoffs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        (hi - lo).max(1.0)
    };

    // Minimal acceptable cash for a base shortfall (gains - payoff): the
    // risk of the base position, computed by an independent shift scan;
    // cash enters the risk additively, so one scan per strategy suffices.
    let min_cash = |w0: &[f64]| -> f64 {
        if spec.is_strict_cone() {
            return w0.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(-v));
        }
        let wmax = w0.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
        let radius = wmax + 8.0 * spread + 16.0;
        shift_scan_min(w0, &probs, spec, -radius, radius)
    };

    let mut axes: Vec<(f64, f64, f64)> =
        grid.axes.iter().map(|a| (a.lo, a.hi, a.step)).collect();
    let mut best: Option<(f64, Vec<f64>)> = None; // (cash, strategy point)
    for round in 0..=grid.rounds {
        // The cash axis is bisected, not swept, so only the strategy axes
        // count against the size guard (the cash axis costs log points).
        let m_axis = axes[0];
        let m_count_est = ((m_axis.1 - m_axis.0) / m_axis.2).round().max(1.0);
        let mut guard_axes = axes[1..].to_vec();
        guard_axes.push((0.0, m_count_est.log2().ceil().max(1.0), 1.0));
        grid.guard_counts(&guard_axes)?;
        let m_count = ((m_axis.1 - m_axis.0) / m_axis.2).round() as usize + 1;
        let z_axes = &axes[1..];
        let counts: Vec<usize> = z_axes
            .iter()
            .map(|&(lo, hi, step)| ((hi - lo) / step).round() as usize + 1)
            .collect();
        let mut idx = vec![0usize; zcoords.len()];
        let mut z = vec![0.0; zcoords.len()];
        loop {
            for (c, &i) in idx.iter().enumerate() {
                z[c] = z_axes[c].0 + i as f64 * z_axes[c].2;
            }
            let base: Vec<f64> = leaves
                .iter()
                .enumerate()
                .map(|(i, &(leaf, _))| gain_at(&z, leaf) - payoffs[i])
                .collect();
            // smallest on-axis cash at or above the required level
            let need = min_cash(&base);
            if need <= m_axis.1 {
                let mi = ((need - m_axis.0) / m_axis.2).ceil().max(0.0) as usize;
                if mi < m_count {
                    let m = m_axis.0 + mi as f64 * m_axis.2;
                    if best.as_ref().map_or(true, |(bm, _)| m < *bm) {
                        best = Some((m, z.clone()));
                    }
                }
            }
            let mut c = 0;
            loop {
                if c == zcoords.len() {
                    break;
                }
                idx[c] += 1;
                if idx[c] < counts[c] {
                    break;
                }
                idx[c] = 0;
                c += 1;
            }
            if c == zcoords.len() {
                break;
            }
        }
        if round < grid.rounds {
            let Some((_, ref bz)) = best else {
                return Err(Error::GuardExceeded(
                    "no acceptable grid point found; enlarge the grid".into(),
                ));
            };
            // Keep the full cash range (refined strategy points may need
            // cash far from the current best); only its step shrinks.
            let mut next = Vec::with_capacity(axes.len());
            next.push((axes[0].0, axes[0].1, axes[0].2 / grid.refine_factor));
            for (c, &(_, _, step)) in axes[1..].iter().enumerate() {
                next.push((bz[c] - 2.0 * step, bz[c] + 2.0 * step, step / grid.refine_factor));
            }
            axes = next;
        }
    }
    best.map(|(m, _)| m).ok_or_else(|| {
        Error::GuardExceeded("no acceptable grid point found; enlarge the grid".into())
    })
}

/// Grid evaluation of `inf_t max_P (E_P[l(t - w)] - t)` with local
/// refinement. The grid infimum dominates the true one, so acceptability
/// decisions based on it are conservative.
fn shift_scan_min(
    w: &[f64],
    probs: &[Vec<f64>],
    spec: &LossSpec,
    lo: f64,
    hi: f64,
) -> f64 {
    let eval = |t: f64| -> f64 {
        probs
            .iter()
            .map(|p| {
                p.iter()
                    .zip(w.iter())
                    .filter(|(&pi, _)| pi > 0.0)
                    .map(|(&pi, &wi)| pi * spec.eval(t - wi).unwrap())
                    .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)
            - t
    };
    let mut lo = lo;
    let mut hi = hi;
    let mut best = f64::INFINITY;
    let mut best_t = lo;
    for _round in 0..5 {
        let n = 128;
        let step = (hi - lo) / n as f64;
        for i in 0..=n {
            let t = lo + i as f64 * step;
            let v = eval(t);
            if v < best {
                best = v;
                best_t = t;
            }
        }
        lo = best_t - 2.0 * step;
        hi = best_t + 2.0 * step;
    }
    best
}

/// Dense m-grid evaluation of the robust OCE with two local refinement
/// rounds; used to verify the production bracketing minimizer.
pub fn robust_oce_grid(
    tree: &ScenarioTree,
    pset: &ReferenceMeasureSet,
    x: &Claim,
    spec: &LossSpec,
    spacing: f64,
) -> Result<f64> {
    if spec.is_strict_cone() {
        return Err(Error::StrictConeLoss);
    }
    let probs: Vec<Vec<f64>> =
        pset.measures().iter().map(|p| p.leaf_probabilities(tree)).collect();
    let eval = |m: f64| -> f64 {
        probs
            .iter()
            .map(|p| {
                p.iter()
                    .zip(x.values())
                    .filter(|(&pi, _)| pi > 0.0)
                    .map(|(&pi, &xi)| pi * spec.eval(m - xi).unwrap())
                    .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)
            - m
    };
    let r = x.values().iter().fold(0.0_f64, |a, &v| a.max(v.abs())) + 2.0;
    let mut lo = -r;
    let mut hi = r;
    let mut h = spacing;
    let mut best = f64::INFINITY;
    let mut best_m = lo;
    for _round in 0..3 {
        let n = ((hi - lo) / h).ceil() as usize;
        for i in 0..=n {
            let m = lo + i as f64 * h;
            let v = eval(m);
            if v < best {
                best = v;
                best_m = m;
            }
        }
        lo = best_m - 2.0 * h;
        hi = best_m + 2.0 * h;
        h /= 100.0;
    }
    Ok(best)
}

/// All basic feasible solutions of the martingale system on the supported
/// leaves, found by enumerating column bases of the row-reduced system and
/// solving each square subsystem by Gaussian elimination.
pub fn enumerate_martingale_vertices(
    tree: &ScenarioTree,
    support: &[bool],
) -> Result<Vec<TreeMeasure>> {
    let leaves: Vec<NodeId> =
        tree.leaves().iter().copied().filter(|&l| support[l]).collect();
    let nv = leaves.len();
    if nv > 12 {
        return Err(Error::GuardExceeded(format!(
            "vertex enumeration supports at most 12 leaf variables, got {nv}"
        )));
    }
    // Assemble normalization and conditional-drift rows directly.
    let mut rows: Vec<Vec<f64>> = vec![vec![1.0; nv]];
    let mut rhs: Vec<f64> = vec![1.0];
    let d = tree.asset_count();
    for &n in tree.nonterminals() {
        if !support[n] {
            continue;
        }
        for a in 0..d {
            let mut row = vec![0.0; nv];
            for (col, &leaf) in leaves.iter().enumerate() {
                let path = tree.path_from_root(leaf);
                for w in path.windows(2) {
                    if w[0] == n {
                        row[col] += tree.node(w[1]).prices[a] - tree.node(n).prices[a];
                    }
                }
            }
            if row.iter().any(|&c| c != 0.0) {
                rows.push(row);
                rhs.push(0.0);
            }
        }
    }
    // Row-reduce to an independent system.
    let scale = rows
        .iter()
        .flat_map(|r| r.iter())
        .fold(1.0_f64, |a, &v| a.max(v.abs()));
    let (red_rows, red_rhs) = row_reduce(rows.clone(), rhs.clone(), 1e-10 * scale);
    if red_rows.is_empty() {
        return Ok(Vec::new());
    }
    let rank = red_rows.len();
    if rank > nv {
        return Ok(Vec::new());
    }
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    let mut combo: Vec<usize> = (0..rank).collect();
    loop {
        if let Some(sol) = solve_square(&red_rows, &red_rhs, &combo, 1e-10 * scale) {
            let mut q = vec![0.0; nv];
            let mut feasible = true;
            for (k, &c) in combo.iter().enumerate() {
                if sol[k] < -1e-9 {
                    feasible = false;
                    break;
                }
                q[c] = sol[k].max(0.0);
            }
            if feasible {
                let resid = rows
                    .iter()
                    .zip(rhs.iter())
                    .map(|(row, &b)| {
                        (row.iter().zip(q.iter()).map(|(&a, &x)| a * x).sum::<f64>() - b).abs()
                    })
                    .fold(0.0, f64::max);
                if resid <= 1e-9 * scale
                    && !vertices.iter().any(|v| {
                        v.iter().zip(q.iter()).all(|(&a, &b)| (a - b).abs() <= 1e-9)
                    })
                {
                    vertices.push(q);
                }
            }
        }
        if !next_combination(&mut combo, nv) {
            break;
        }
    }
    finish_vertices(tree, &leaves, vertices)
}

/// Advances `combo` to the next k-subset of `0..n` in lexicographic order.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn finish_vertices(
    tree: &ScenarioTree,
    leaves: &[NodeId],
    vertices: Vec<Vec<f64>>,
) -> Result<Vec<TreeMeasure>> {
    vertices
        .into_iter()
        .map(|q| {
            let mut full = vec![0.0; tree.leaves().len()];
            for (i, &leaf) in leaves.iter().enumerate() {
                full[tree.leaf_index(leaf).unwrap()] = q[i];
            }
            TreeMeasure::from_leaf_probabilities(tree, &full)
        })
        .collect()
}

fn row_reduce(
    mut rows: Vec<Vec<f64>>,
    mut rhs: Vec<f64>,
    tol: f64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let m = rows.len();
    let n = if m > 0 { rows[0].len() } else { 0 };
    let mut rank = 0;
    for col in 0..n {
        if rank >= m {
            break;
        }
        let piv = (rank..m)
            .max_by(|&a, &b| rows[a][col].abs().partial_cmp(&rows[b][col].abs()).unwrap());
        let Some(p) = piv else { break };
        if rows[p][col].abs() <= tol {
            continue;
        }
        rows.swap(rank, p);
        rhs.swap(rank, p);
        for i in 0..m {
            if i != rank && rows[i][col].abs() > 0.0 {
                let f = rows[i][col] / rows[rank][col];
                for j in 0..n {
                    rows[i][j] -= f * rows[rank][j];
                }
                rhs[i] -= f * rhs[rank];
            }
        }
        rank += 1;
    }
    rows.truncate(rank);
    rhs.truncate(rank);
    (rows, rhs)
}

/// Solves the square system restricted to the chosen columns.
fn solve_square(
    rows: &[Vec<f64>],
    rhs: &[f64],
    cols: &[usize],
    tol: f64,
) -> Option<Vec<f64>> {
    let k = cols.len();
    let mut a: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| cols.iter().map(|&c| r[c]).collect())
        .collect();
    let mut b: Vec<f64> = rhs.to_vec();
    for col in 0..k {
        let p = (col..k).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[p][col].abs() <= tol {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for i in 0..k {
            if i != col {
                let f = a[i][col] / a[col][col];
                for j in 0..k {
                    a[i][j] -= f * a[col][j];
                }
                b[i] -= f * b[col];
            }
        }
    }
    Some((0..k).map(|i| b[i] / a[i][i]).collect())
}

/// Sorted-tail oracle for the classical OCE with the scaled-positive-part
/// loss: the average of the worst `alpha`-tail of the loss `-X` under `P`,
/// with fractional weighting of the boundary atom.
pub fn cvar_sorted(tree: &ScenarioTree, p: &TreeMeasure, x: &Claim, alpha: f64) -> f64 {
    let lp = p.leaf_probabilities(tree);
    let mut items: Vec<(f64, f64)> = lp
        .iter()
        .zip(x.values())
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &xi)| (-xi, pi))
        .collect();
    items.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut remaining = alpha;
    let mut total = 0.0;
    for (loss, prob) in items {
        let take = prob.min(remaining);
        total += take * loss;
        remaining -= take;
        if remaining <= 0.0 {
            break;
        }
    }
    total / alpha
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cvar_sorted_examples() {
        let t = ScenarioTree::generate(100.0, &[1.2, 1.1, 0.9, 0.8], 1).unwrap();
        let p = TreeMeasure::uniform(&t);
        let x = Claim::from_leaf_values(&t, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((cvar_sorted(&t, &p, &x, 0.5) + 1.5).abs() < 1e-12);
        // near alpha = 1 the tail is the whole distribution
        assert!((cvar_sorted(&t, &p, &x, 0.999) + 2.5).abs() < 3e-3);
        let c = Claim::constant(&t, 4.25).unwrap();
        for alpha in [0.1, 0.5, 0.9] {
            assert!((cvar_sorted(&t, &p, &c, alpha) + 4.25).abs() < 1e-12);
        }
    }

    #[test]
    fn vertices_binomial_unique() {
        let t = ScenarioTree::generate(100.0, &[1.2, 0.8], 1).unwrap();
        let pset = ReferenceMeasureSet::new(&t, vec![TreeMeasure::uniform(&t)]).unwrap();
        let vs = enumerate_martingale_vertices(&t, pset.support()).unwrap();
        assert_eq!(vs.len(), 1);
        let lp = vs[0].leaf_probabilities(&t);
        assert!((lp[0] - 0.5).abs() < 1e-9);
        assert!((lp[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn vertices_trinomial_segment_endpoints() {
        let t = ScenarioTree::generate(100.0, &[1.2, 1.0, 0.8], 1).unwrap();
        let pset = ReferenceMeasureSet::new(&t, vec![TreeMeasure::uniform(&t)]).unwrap();
        let mut vs: Vec<Vec<f64>> = enumerate_martingale_vertices(&t, pset.support())
            .unwrap()
            .iter()
            .map(|m| m.leaf_probabilities(&t))
            .collect();
        vs.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(vs.len(), 2);
        assert!(vs[0].iter().zip([0.0, 1.0, 0.0].iter()).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!(vs[1].iter().zip([0.5, 0.0, 0.5].iter()).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn vertices_two_step_symmetric() {
        let t = ScenarioTree::generate(100.0, &[1.2, 0.8], 2).unwrap();
        let pset = ReferenceMeasureSet::new(&t, vec![TreeMeasure::uniform(&t)]).unwrap();
        let vs = enumerate_martingale_vertices(&t, pset.support()).unwrap();
        assert_eq!(vs.len(), 1);
        // nodewise: every one-step subtree has the unique half-half solution
        for tr in vs[0].transitions() {
            assert!((tr[0] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn brute_force_constant_claim() {
        let t = ScenarioTree::generate(100.0, &[1.2, 0.8], 1).unwrap();
        let pset = ReferenceMeasureSet::new(&t, vec![TreeMeasure::uniform(&t)]).unwrap();
        let x = Claim::constant(&t, 3.0).unwrap();
        let grid = GridSpec {
            axes: vec![
                GridAxis { lo: -5.0, hi: 8.0, step: 0.001 },
                GridAxis { lo: -1.0, hi: 1.0, step: 0.05 },
            ],
            refine_factor: 10.0,
            rounds: 2,
        };
        let v = brute_force_primal(&t, &pset, &x, &LossSpec::strict_cone(), &grid).unwrap();
        assert!((v - 3.0).abs() < 2e-5, "got {v}");
    }

    #[test]
    fn grid_guard_trips() {
        let t = ScenarioTree::generate(100.0, &[1.2, 0.8], 1).unwrap();
        let pset = ReferenceMeasureSet::new(&t, vec![TreeMeasure::uniform(&t)]).unwrap();
        let x = Claim::constant(&t, 0.0).unwrap();
        let grid = GridSpec {
            axes: vec![
                GridAxis { lo: -1e4, hi: 1e4, step: 1e-5 },
                GridAxis { lo: -1.0, hi: 1.0, step: 1e-7 },
            ],
            refine_factor: 10.0,
            rounds: 0,
        };
        assert!(matches!(
            brute_force_primal(&t, &pset, &x, &LossSpec::strict_cone(), &grid),
            Err(Error::GuardExceeded(_))
        ));
    }
}
