//! Conditional-gradient (Frank-Wolfe) maximization of a concave function
//! over a polytope given by a linear maximization oracle, with away steps
//! over the discovered atoms and a certified optimality gap.
//!
//! The objective may return `-inf` outside its effective domain; the line
//! search then simply stops short of the boundary.

use crate::optim;

pub(crate) struct FwOptions {
    /// Stop once the linearization gap drops below this value.
    pub tol: f64,
    pub max_iter: usize,
    /// Call the (possibly expensive) true oracle every this many iterations;
    /// in between, steps use the cached atoms.
    pub lmo_refresh: usize,
}

pub(crate) struct FwOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    /// Certified linearization gap (upper bound on suboptimality).
    pub gap: f64,
    pub iterations: usize,
}

pub(crate) fn maximize_concave<F, G, L>(
    x0: Vec<f64>,
    f: F,
    grad: G,
    mut lmo: L,
    opts: &FwOptions,
) -> FwOutcome
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
    L: FnMut(&[f64]) -> Vec<f64>,
{
    let dim = x0.len();
    // The starting point is kept as an artificial atom; it is dropped once
    // its weight reaches zero.
    let mut atoms: Vec<(Vec<f64>, f64)> = vec![(x0.clone(), 1.0)];
    let mut x = x0;
    let mut fx = f(&x);
    let mut since_progress = 0usize;
    let mut iter = 0usize;

    while iter < opts.max_iter {
        iter += 1;
        let g = grad(&x);
        let refresh =
            opts.lmo_refresh <= 1 || iter == 1 || iter % opts.lmo_refresh == 0 || since_progress > 0;
        if refresh {
            let s = lmo(&g);
            let true_gap = dot(&g, &s) - dot(&g, &x);
            if true_gap <= opts.tol {
                return FwOutcome { value: fx, x, gap: true_gap.max(0.0), iterations: iter };
            }
            insert_atom(&mut atoms, s);
        }
        // Best cached forward atom and worst active atom for the away step.
        let gx = dot(&g, &x);
        let (mut fw_i, mut fw_val) = (0usize, f64::NEG_INFINITY);
        let (mut aw_i, mut aw_val) = (0usize, f64::INFINITY);
        for (i, (v, w)) in atoms.iter().enumerate() {
            let s = dot(&g, v);
            if s > fw_val {
                fw_i = i;
                fw_val = s;
            }
            if *w > 1e-14 && s < aw_val {
                aw_i = i;
                aw_val = s;
            }
        }
        let fw_gain = fw_val - gx;
        let aw_gain = gx - aw_val;
        let use_away = aw_gain > fw_gain && atoms.len() > 1 && atoms[aw_i].1 < 1.0 - 1e-14;
        let (dir, gamma_max, chosen_gain) = if use_away {
            let w = atoms[aw_i].1;
            let d: Vec<f64> = x.iter().zip(atoms[aw_i].0.iter()).map(|(a, b)| a - b).collect();
            (d, w / (1.0 - w), aw_gain)
        } else {
            let d: Vec<f64> = atoms[fw_i].0.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
            (d, 1.0, fw_gain)
        };
        if !(chosen_gain > 0.0) || !(gamma_max > 0.0) {
            since_progress += 1;
            if since_progress > 60 {
                break;
            }
            continue;
        }
        // Concave line search on [0, gamma_max].
        let line = |t: f64| {
            let y: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            -f(&y)
        };
        let lm = optim::golden_min(&line, 0.0, gamma_max, 1e-13 * (1.0 + gamma_max));
        let gamma = lm.x;
        let new_val = -lm.value;
        if gamma <= 0.0 || new_val < fx - 1e-12 * (1.0 + fx.abs()) {
            since_progress += 1;
            if since_progress > 60 {
                break;
            }
            continue;
        }
        if new_val > fx + 1e-13 * (1.0 + fx.abs()) {
            since_progress = 0;
        } else {
            since_progress += 1;
            if since_progress > 60 {
                break;
            }
        }
        if use_away {
            for (_, w) in atoms.iter_mut() {
                *w *= 1.0 + gamma;
            }
            atoms[aw_i].1 -= gamma;
        } else {
            for (_, w) in atoms.iter_mut() {
                *w *= 1.0 - gamma;
            }
            atoms[fw_i].1 += gamma;
        }
        atoms.retain(|(_, w)| *w > 1e-14);
        let total: f64 = atoms.iter().map(|(_, w)| w).sum();
        x = vec![0.0; dim];
        for (v, w) in &atoms {
            for (xi, vi) in x.iter_mut().zip(v.iter()) {
                *xi += (w / total) * vi;
            }
        }
        for (_, w) in atoms.iter_mut() {
            *w /= total;
        }
        fx = f(&x);
    }
    // Final certificate at the returned point.
    let g = grad(&x);
    let s = lmo(&g);
    let gap = dot(&g, &s) - dot(&g, &x);
    FwOutcome { value: f(&x), x, gap: gap.max(0.0), iterations: iter }
}

fn insert_atom(atoms: &mut Vec<(Vec<f64>, f64)>, v: Vec<f64>) {
    for (a, _) in atoms.iter() {
        if a.iter().zip(v.iter()).all(|(x, y)| (x - y).abs() <= 1e-12) {
            return;
        }
    }
    atoms.push((v, 0.0));
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simplex_lmo(n: usize) -> impl FnMut(&[f64]) -> Vec<f64> {
        move |g: &[f64]| {
            let mut v = vec![0.0; n];
            let best = g
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            v[best] = 1.0;
            v
        }
    }

    /// Maximize a concave quadratic over the probability simplex.
    #[test]
    fn quadratic_over_simplex() {
        let n = 5;
        let target = [0.05, 0.1, 0.2, 0.25, 0.4];
        let f = |x: &[f64]| -> f64 {
            -x.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let grad = |x: &[f64]| -> Vec<f64> {
            x.iter().zip(target.iter()).map(|(a, b)| -2.0 * (a - b)).collect()
        };
        let x0 = vec![1.0 / n as f64; n];
        let out = maximize_concave(
            x0,
            f,
            grad,
            simplex_lmo(n),
            &FwOptions { tol: 1e-8, max_iter: 20_000, lmo_refresh: 1 },
        );
        assert!(out.gap <= 1e-7, "gap {}", out.gap);
        for (xi, ti) in out.x.iter().zip(target.iter()) {
            assert!((xi - ti).abs() < 1e-4);
        }
    }

    /// Entropy-like objective with unbounded gradient at the boundary.
    #[test]
    fn entropy_interior_optimum() {
        let n = 4;
        let f = |x: &[f64]| -> f64 {
            x.iter().map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 }).sum()
        };
        let grad = |x: &[f64]| -> Vec<f64> {
            x.iter().map(|&v| -(v.max(1e-300).ln() + 1.0)).collect()
        };
        let mut x0 = vec![0.1; n];
        x0[0] = 0.7;
        let out = maximize_concave(
            x0,
            f,
            grad,
            simplex_lmo(n),
            &FwOptions { tol: 1e-9, max_iter: 50_000, lmo_refresh: 1 },
        );
        // optimum is uniform with value ln(n)
        assert!((out.value - (n as f64).ln()).abs() < 1e-6, "value {}", out.value);
    }
}
