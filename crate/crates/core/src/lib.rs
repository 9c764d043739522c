//! Pricing of contingent claims on finite scenario trees under model
//! uncertainty.
//!
//! A market is a finite event tree carrying asset prices, together with a
//! finite family of reference probability measures on that tree. The library
//! computes
//!
//! * the minimal superhedging price of a claim (dominate the payoff at every
//!   supported leaf),
//! * the relaxed hedging price where the shortfall only has to be acceptable
//!   under a robust optimized certainty equivalent risk measure, and
//! * the dual values of both programs, obtained by maximizing over (penalized)
//!   martingale measures supported on the tree,
//!
//! and cross-checks primal against dual. Self-contained solvers are used
//! throughout: a dense two-phase simplex for the linear programs, a
//! cutting-plane loop for smooth acceptance constraints, and a conditional
//! gradient method for the smooth dual programs. The [`oracle`] module holds
//! independent brute-force verifiers that deliberately share no solver code.

pub mod dual;
pub mod error;
pub mod loss;
pub mod market;
pub mod oracle;
pub mod primal;
pub mod risk;

mod fw;
mod optim;
mod simplex;

pub use error::{Error, Result};

/// Termination state reported by the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Optimum found within tolerance.
    Optimal,
    /// Objective unbounded below (primal) resp. infeasible market detected.
    Unbounded,
    /// No feasible point exists.
    Infeasible,
    /// Iteration or cut cap reached before the target tolerance.
    IterationLimit,
}

impl SolveStatus {
    /// True when the solver stopped at a certified optimum.
    pub fn is_optimal(self) -> bool {
        matches!(self, SolveStatus::Optimal)
    }
}
