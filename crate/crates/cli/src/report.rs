//! Machine-readable reports emitted by the commands. Every report carries
//! the tolerances in effect and the solver iteration counts.

use serde::Serialize;
use treehedge::risk::ACCEPTANCE_TOL;
use treehedge::SolveStatus;

#[derive(Debug, Clone, Serialize)]
pub struct Tolerances {
    pub martingale_tol: f64,
    pub acceptance_tol: f64,
    pub weak_duality_tol: f64,
    pub strong_duality_tol: f64,
}

impl Tolerances {
    pub fn with_martingale(martingale_tol: f64) -> Self {
        Tolerances {
            martingale_tol,
            acceptance_tol: ACCEPTANCE_TOL,
            weak_duality_tol: treehedge::dual::WEAK_DUALITY_TOL,
            strong_duality_tol: treehedge::dual::STRONG_DUALITY_TOL,
        }
    }
}

pub fn status_name(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Unbounded => "unbounded",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::IterationLimit => "iteration_limit",
    }
}

#[derive(Debug, Serialize)]
pub struct PriceReport {
    pub format: u32,
    pub command: &'static str,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi_c: Option<f64>,
    pub strategy: Vec<Vec<f64>>,
    pub shortfall: Vec<f64>,
    pub tolerances: Tolerances,
    pub iterations: IterationCounts,
}

#[derive(Debug, Default, Serialize)]
pub struct IterationCounts {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub superhedge: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relaxed: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub floored: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dual: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct DualReport {
    pub format: u32,
    pub command: &'static str,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_p: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_leaf_probabilities: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_transitions: Option<Vec<Vec<f64>>>,
    pub gap: f64,
    pub tolerances: Tolerances,
    pub iterations: IterationCounts,
}

#[derive(Debug, Serialize)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub format: u32,
    pub command: &'static str,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub primal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_p: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate_q: Option<Vec<f64>>,
    pub invariants: Vec<InvariantCheck>,
    pub tolerances: Tolerances,
    pub iterations: IterationCounts,
}

#[derive(Debug, Serialize)]
pub struct RiskReport {
    pub format: u32,
    pub command: &'static str,
    pub status: String,
    pub oce_per_measure: Vec<f64>,
    pub robust_oce: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_measure: Option<usize>,
    pub dual_oce: f64,
    pub dual_oce_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty_q_mixture: Option<f64>,
    pub tolerances: Tolerances,
    pub iterations: IterationCounts,
}
