//! Loss functions, their convex conjugates, and diagnostics for the
//! standing convexity/normalization/growth assumptions.
//!
//! A loss specification either carries a pointwise convex nondecreasing loss
//! `l` with `l(0) = 0`, or is the `StrictCone` sentinel for the positive-cone
//! acceptance set (no loss function; the relaxed price degenerates to the
//! superhedging price).

use crate::error::{Error, Result};
use crate::optim;

/// Radius cap for the numeric conjugation bracket.
const CONJ_MAX_RADIUS: f64 = (1u64 << 60) as f64;

/// An affine piece `slope * x + intercept` of a piecewise-linear loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinePiece {
    pub slope: f64,
    pub intercept: f64,
}

/// Polyhedral description of a conjugate: `l*(y) = max_i (b_i y + c_i)` on
/// `domain`, `+inf` outside.
#[derive(Debug, Clone)]
pub struct ConjugatePieces {
    /// Pairs `(b_i, c_i)` with `c_i = -l(b_i)`.
    pub points: Vec<(f64, f64)>,
    /// Slope range of the loss: the conjugate is finite on this interval.
    pub domain: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    /// `l(x) = (x^+)^p / p`, `p > 1`.
    Power { p: f64 },
    /// `l(x) = x^+ / alpha`, `alpha` in (0,1).
    Cvar { alpha: f64 },
    /// `l(x) = e^x - 1`.
    Entropic,
    /// Continuous piecewise-linear loss anchored at `l(0) = 0`; `slopes`
    /// has one more entry than `breakpoints` and is nondecreasing.
    PiecewiseLinear { breakpoints: Vec<f64>, slopes: Vec<f64> },
    /// Positive-cone sentinel: acceptance means being nonnegative.
    StrictCone,
}

/// A loss function together with its conjugate and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    kind: Kind,
}

impl LossSpec {
    pub fn power(p: f64) -> Result<Self> {
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::InvalidLoss(format!("power loss needs p > 1, got {p}")));
        }
        Ok(Self { kind: Kind::Power { p } })
    }

    pub fn cvar(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidLoss(format!(
                "cvar loss needs alpha in (0,1), got {alpha}"
            )));
        }
        Ok(Self { kind: Kind::Cvar { alpha } })
    }

    pub fn entropic() -> Self {
        Self { kind: Kind::Entropic }
    }

    pub fn piecewise_linear(breakpoints: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if slopes.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidLoss(format!(
                "need {} slopes for {} breakpoints, got {}",
                breakpoints.len() + 1,
                breakpoints.len(),
                slopes.len()
            )));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidLoss("breakpoints must be strictly increasing".into()));
        }
        if breakpoints.iter().chain(slopes.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidLoss("non-finite breakpoint or slope".into()));
        }
        if slopes.iter().any(|&s| s < 0.0) {
            return Err(Error::InvalidLoss("slopes must be nonnegative".into()));
        }
        if slopes.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidLoss("slopes must be nondecreasing".into()));
        }
        Ok(Self { kind: Kind::PiecewiseLinear { breakpoints, slopes } })
    }

    pub fn strict_cone() -> Self {
        Self { kind: Kind::StrictCone }
    }

    pub fn is_strict_cone(&self) -> bool {
        matches!(self.kind, Kind::StrictCone)
    }

    /// True when the loss is a finite maximum of affine pieces, so that the
    /// hedging programs reduce to one linear program.
    pub fn is_polyhedral(&self) -> bool {
        matches!(self.kind, Kind::Cvar { .. } | Kind::PiecewiseLinear { .. })
    }

    /// True for the differentiable kinds handled by the cutting-plane and
    /// conditional-gradient paths.
    pub fn is_smooth(&self) -> bool {
        matches!(self.kind, Kind::Power { .. } | Kind::Entropic)
    }

    /// Growth exponent `p` when the loss grows like `x^p` on the right.
    pub fn growth_exponent(&self) -> Option<f64> {
        match self.kind {
            Kind::Power { p } => Some(p),
            Kind::Cvar { .. } => Some(1.0),
            _ => None,
        }
    }

    /// A short stable tag for reports.
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            Kind::Power { .. } => "power",
            Kind::Cvar { .. } => "cvar",
            Kind::Entropic => "entropic",
            Kind::PiecewiseLinear { .. } => "piecewise_linear",
            Kind::StrictCone => "strict_cone",
        }
    }

    /// Evaluates the loss at `x`. Errors for the strict-cone sentinel.
    pub fn eval(&self, x: f64) -> Result<f64> {
        match &self.kind {
            Kind::Power { p } => Ok(x.max(0.0).powf(*p) / p),
            Kind::Cvar { alpha } => Ok(x.max(0.0) / alpha),
            Kind::Entropic => Ok(x.exp() - 1.0),
            Kind::PiecewiseLinear { breakpoints, slopes } => {
                Ok(eval_piecewise(breakpoints, slopes, x))
            }
            Kind::StrictCone => Err(Error::StrictConeLoss),
        }
    }

    /// Derivative of the loss, available for the smooth kinds.
    pub fn deriv(&self, x: f64) -> Option<f64> {
        match self.kind {
            Kind::Power { p } => Some(x.max(0.0).powf(p - 1.0)),
            Kind::Entropic => Some(x.exp()),
            _ => None,
        }
    }

    /// Second derivative of the loss, available for the smooth kinds.
    pub fn deriv2(&self, x: f64) -> Option<f64> {
        match self.kind {
            Kind::Power { p } => Some((p - 1.0) * x.max(0.0).powf(p - 2.0)),
            Kind::Entropic => Some(x.exp()),
            _ => None,
        }
    }

    /// Convex conjugate `l*(y) = sup_x (x y - l(x))` for `y >= 0`;
    /// `l*(inf) = inf`. Errors on negative `y` and for the strict cone.
    pub fn conjugate(&self, y: f64) -> Result<f64> {
        if y.is_nan() || y < 0.0 {
            return Err(Error::InvalidLoss(format!("conjugate needs y >= 0, got {y}")));
        }
        if y == f64::INFINITY {
            return Ok(f64::INFINITY);
        }
        match &self.kind {
            Kind::Power { p } => {
                let q = p / (p - 1.0);
                Ok(y.powf(q) / q)
            }
            Kind::Cvar { alpha } => {
                if y <= 1.0 / alpha {
                    Ok(0.0)
                } else {
                    Ok(f64::INFINITY)
                }
            }
            Kind::Entropic => {
                if y == 0.0 {
                    Ok(1.0)
                } else {
                    Ok(y * y.ln() - y + 1.0)
                }
            }
            Kind::PiecewiseLinear { breakpoints, slopes } => {
                let lo = slopes[0];
                let hi = *slopes.last().unwrap();
                if y < lo || y > hi {
                    return Ok(f64::INFINITY);
                }
                if breakpoints.is_empty() {
                    // Linear loss: conjugate is the indicator of its slope.
                    return Ok(0.0);
                }
                // Supremum attained at the breakpoint whose slope pair
                // straddles y.
                let mut best = f64::NEG_INFINITY;
                for (i, &b) in breakpoints.iter().enumerate() {
                    if slopes[i] <= y && y <= slopes[i + 1] {
                        best = best.max(b * y - eval_piecewise(breakpoints, slopes, b));
                    }
                }
                Ok(best)
            }
            Kind::StrictCone => Err(Error::StrictConeLoss),
        }
    }

    /// Derivative of the conjugate, available for the smooth kinds.
    pub fn conjugate_deriv(&self, y: f64) -> Option<f64> {
        match self.kind {
            Kind::Power { p } => {
                let q = p / (p - 1.0);
                Some(y.max(0.0).powf(q - 1.0))
            }
            Kind::Entropic => Some(if y <= 0.0 { f64::NEG_INFINITY } else { y.ln() }),
            _ => None,
        }
    }

    /// `l*(y) - y l*'(y)`, the derivative of the perspective
    /// `p |-> p l*(q/p)` with respect to `p`. Continuous at `y = 0`.
    pub fn conjugate_perspective_residual(&self, y: f64) -> Option<f64> {
        match self.kind {
            Kind::Power { p } => {
                let q = p / (p - 1.0);
                Some(-y.max(0.0).powf(q) / p)
            }
            Kind::Entropic => Some(1.0 - y.max(0.0)),
            _ => None,
        }
    }

    /// Affine pieces whose maximum is the loss, for the polyhedral kinds.
    pub fn pieces(&self) -> Option<Vec<LinePiece>> {
        match &self.kind {
            Kind::Cvar { alpha } => Some(vec![
                LinePiece { slope: 0.0, intercept: 0.0 },
                LinePiece { slope: 1.0 / alpha, intercept: 0.0 },
            ]),
            Kind::PiecewiseLinear { breakpoints, slopes } => {
                let mut pieces = Vec::with_capacity(slopes.len());
                for (i, &s) in slopes.iter().enumerate() {
                    // Anchor each segment line at an incident breakpoint
                    // (or at 0 for a breakpoint-free loss).
                    let x = if breakpoints.is_empty() {
                        0.0
                    } else if i == 0 {
                        breakpoints[0]
                    } else {
                        breakpoints[i - 1]
                    };
                    let lx = eval_piecewise(breakpoints, slopes, x);
                    pieces.push(LinePiece { slope: s, intercept: lx - s * x });
                }
                pieces.dedup_by(|a, b| a == b);
                Some(pieces)
            }
            _ => None,
        }
    }

    /// Polyhedral description of the conjugate, for the polyhedral kinds.
    pub fn conjugate_pieces(&self) -> Option<ConjugatePieces> {
        match &self.kind {
            Kind::Cvar { alpha } => Some(ConjugatePieces {
                points: vec![(0.0, 0.0)],
                domain: (0.0, 1.0 / alpha),
            }),
            Kind::PiecewiseLinear { breakpoints, slopes } => {
                let points = if breakpoints.is_empty() {
                    vec![(0.0, 0.0)]
                } else {
                    breakpoints
                        .iter()
                        .map(|&b| (b, -eval_piecewise(breakpoints, slopes, b)))
                        .collect()
                };
                Some(ConjugatePieces {
                    points,
                    domain: (slopes[0], *slopes.last().unwrap()),
                })
            }
            _ => None,
        }
    }

    /// Numeric conjugate by bracketed concave maximization of
    /// `x |-> x y - l(x)` to absolute tolerance about 1e-10. Returns
    /// `INFINITY` when the bracket expansion past 2^60 still sees the
    /// objective rising; suprema reached only in the limit (flat tails)
    /// return the converged plateau value.
    pub fn numeric_conjugate(&self, y: f64) -> Result<f64> {
        if y.is_nan() || y < 0.0 {
            return Err(Error::InvalidLoss(format!("conjugate needs y >= 0, got {y}")));
        }
        if y == f64::INFINITY {
            return Ok(f64::INFINITY);
        }
        if self.is_strict_cone() {
            return Err(Error::StrictConeLoss);
        }
        let phi = |x: f64| x * y - self.eval(x).unwrap();
        let mut r = 2.0 * (1.0 + y);
        loop {
            let left_open = phi(-r) > phi(-r / 2.0);
            let right_open = phi(r) > phi(r / 2.0);
            if !left_open && !right_open {
                break;
            }
            if r > CONJ_MAX_RADIUS {
                let mut best = phi(0.0);
                for side in [-1.0, 1.0] {
                    let (a, b) = (phi(side * r / 2.0), phi(side * r));
                    if b > a + 1e-9 * (1.0 + b.abs()) {
                        return Ok(f64::INFINITY);
                    }
                    best = best.max(b);
                }
                return Ok(best);
            }
            r *= 2.0;
        }
        let neg = |x: f64| -phi(x);
        let m = optim::golden_min(&neg, -r, r, 1e-11);
        Ok(-m.value)
    }

    /// Diagnostics for the standing assumptions on the loss: convexity,
    /// monotonicity, boundedness from below, `l(0) = 0`, the normalization
    /// `l*(1) = 0`, and the growth margin of `l(x) > x` for large `|x|`.
    ///
    /// Solvers do not reject un-normalized losses; `rho(0) = -l*(1)` is then
    /// simply nonzero.
    pub fn validate_cib(&self) -> Result<CibReport> {
        if self.is_strict_cone() {
            return Err(Error::StrictConeLoss);
        }
        let (convex, increasing, bounded_below) = match &self.kind {
            Kind::Power { .. } | Kind::Cvar { .. } | Kind::Entropic => (true, true, true),
            Kind::PiecewiseLinear { slopes, .. } => {
                let convex = slopes.windows(2).all(|w| w[0] <= w[1]);
                let increasing = slopes.iter().all(|&s| s >= 0.0);
                (convex, increasing, slopes[0] == 0.0)
            }
            Kind::StrictCone => unreachable!(),
        };
        let l0 = self.eval(0.0)?;
        let lstar1 = self.numeric_conjugate(1.0)?;
        // Scan a sign-symmetric doubling grid for the radius past which
        // l(x) > x holds, and the worst margin beyond it.
        let grid: Vec<f64> = (-8..=40).map(|k| (k as f64 / 2.0).exp2()).collect();
        let mut radius = f64::INFINITY;
        let mut margin = f64::NEG_INFINITY;
        for (i, &r) in grid.iter().enumerate() {
            let tail = &grid[i..];
            let ok = tail.iter().all(|&x| {
                self.eval(x).map(|v| v > x).unwrap_or(false)
                    && self.eval(-x).map(|v| v > -x).unwrap_or(false)
            });
            if ok {
                radius = r;
                margin = tail
                    .iter()
                    .flat_map(|&x| [x, -x])
                    .map(|x| self.eval(x).unwrap() - x)
                    .fold(f64::INFINITY, f64::min);
                break;
            }
        }
        Ok(CibReport {
            convex,
            increasing,
            bounded_below,
            l0_zero: l0.abs() <= 1e-12,
            lstar1,
            lstar1_zero: lstar1.abs() <= 1e-8,
            growth_radius: radius,
            growth_margin: margin,
            growth_holds: margin > 0.0,
        })
    }
}

fn eval_piecewise(breakpoints: &[f64], slopes: &[f64], x: f64) -> f64 {
    // Integrate the slope function from 0 to x; l(0) = 0 by construction.
    let (lo, hi, sign) = if x >= 0.0 { (0.0, x, 1.0) } else { (x, 0.0, -1.0) };
    let k = breakpoints.len();
    let mut total = 0.0;
    for (i, &s) in slopes.iter().enumerate() {
        let seg_lo = if i == 0 { f64::NEG_INFINITY } else { breakpoints[i - 1] };
        let seg_hi = if i == k { f64::INFINITY } else { breakpoints[i] };
        let a = seg_lo.max(lo);
        let b = seg_hi.min(hi);
        if b > a {
            total += s * (b - a);
        }
    }
    sign * total
}

/// Outcome of [`LossSpec::validate_cib`].
#[derive(Debug, Clone)]
pub struct CibReport {
    pub convex: bool,
    pub increasing: bool,
    pub bounded_below: bool,
    pub l0_zero: bool,
    /// Numeric value of `l*(1)`.
    pub lstar1: f64,
    pub lstar1_zero: bool,
    /// Radius past which `l(x) > x` held on the scan grid.
    pub growth_radius: f64,
    /// Worst value of `l(x) - x` beyond the radius (one-sided report).
    pub growth_margin: f64,
    pub growth_holds: bool,
}
