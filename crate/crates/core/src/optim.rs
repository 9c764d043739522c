//! One-dimensional convex minimization: bracket expansion plus golden
//! section. Shared by the risk functionals and the numeric conjugation.

/// Result of a one-dimensional minimization.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LineMin {
    pub x: f64,
    pub value: f64,
}

/// Expands `[lo, hi]` by doubling until a coarse scan of the convex
/// objective has an interior minimizer, then returns the two scan points
/// around it. Infinite values (overflowing losses) are fine anywhere except
/// on the whole scan. Returns `None` when expansion exceeds `max_radius`
/// (non-coercive objective).
pub(crate) fn bracket_convex<F: Fn(f64) -> f64>(
    f: &F,
    mut lo: f64,
    mut hi: f64,
    max_radius: f64,
) -> Option<(f64, f64)> {
    const N: usize = 8;
    if !(lo < hi) {
        let c = lo;
        lo = c - 1.0;
        hi = c + 1.0;
    }
    loop {
        let w = hi - lo;
        let step = w / N as f64;
        let mut best_i = 0usize;
        let mut best = f64::INFINITY;
        for i in 0..=N {
            let v = f(lo + step * i as f64);
            if v < best {
                best = v;
                best_i = i;
            }
        }
        if best_i == 0 {
            hi = lo + step;
            lo -= w;
        } else if best_i == N || best == f64::INFINITY {
            lo = hi - step;
            hi += w;
        } else {
            // Convexity puts the minimum between the scan neighbours.
            return Some((lo + step * (best_i - 1) as f64, lo + step * (best_i + 1) as f64));
        }
        if hi - lo > max_radius {
            return None;
        }
    }
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
/// Returns the best evaluated point; `tol_x` is the final interval width.
pub(crate) fn golden_min<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, tol_x: f64) -> LineMin {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut best = if f1 <= f2 {
        LineMin { x: x1, value: f1 }
    } else {
        LineMin { x: x2, value: f2 }
    };
    while hi - lo > tol_x {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
        let (xc, fc) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
        if fc < best.value {
            best = LineMin { x: xc, value: fc };
        }
    }
    best
}

/// Convenience wrapper: bracket then golden-section a convex function.
pub(crate) fn minimize_convex<F: Fn(f64) -> f64>(
    f: &F,
    init_lo: f64,
    init_hi: f64,
    max_radius: f64,
) -> Option<LineMin> {
    let (lo, hi) = bracket_convex(f, init_lo, init_hi, max_radius)?;
    let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    Some(golden_min(f, lo, hi, tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_minimum() {
        let f = |x: f64| (x - 3.0) * (x - 3.0) + 1.0;
        let m = minimize_convex(&f, -1.0, 1.0, 1e12).unwrap();
        assert!((m.x - 3.0).abs() < 1e-6);
        assert!((m.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn kinked_minimum() {
        let f = |x: f64| (x - 0.25).abs();
        let m = minimize_convex(&f, -5.0, 5.0, 1e12).unwrap();
        assert!(m.value < 1e-9);
    }

    #[test]
    fn non_coercive_detected() {
        let f = |x: f64| -x;
        assert!(minimize_convex(&f, -1.0, 1.0, 1e6).is_none());
    }
}
