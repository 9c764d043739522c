//! Instance file format (versioned JSON) and validation.
//!
//! One document per instance. `format` is fixed at 1. Transition arrays are
//! indexed by non-terminal node in breadth-first node order; payoff arrays
//! by leaf in node order.

use serde::{Deserialize, Serialize};
use treehedge::loss::LossSpec;
use treehedge::market::{
    Claim, NodeSpec, ReferenceMeasureSet, ScenarioTree, TreeMeasure, DEFAULT_MARTINGALE_TOL,
};

/// A field-path diagnostic produced by validation.
#[derive(Debug)]
pub struct ValidationError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDto {
    pub format: u32,
    pub tree: TreeDto,
    pub measures: Vec<MeasureDto>,
    pub claim: ClaimDto,
    pub loss: LossDto,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub floor_c: Option<f64>,
    /// Explicit leaf payoffs for the `risk` command.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position: Option<Vec<f64>>,
    /// Optional candidate measure whose divergence penalty is reported.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_measure: Option<MeasureDto>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<TolerancesDto>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDto {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorDto>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<NodeDto>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorDto {
    pub initial_price: f64,
    pub factors: Vec<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDto {
    pub time: usize,
    pub prices: Vec<f64>,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureDto {
    pub transitions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClaimDto {
    Call {
        strike: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        asset: Option<usize>,
    },
    Put {
        strike: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        asset: Option<usize>,
    },
    Explicit {
        payoffs: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossDto {
    Power { p: f64 },
    Cvar { alpha: f64 },
    Entropic,
    PiecewiseLinear { breakpoints: Vec<f64>, slopes: Vec<f64> },
    StrictCone,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesDto {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub martingale_tol: Option<f64>,
}

/// A fully validated instance, ready for the solvers.
pub struct Instance {
    pub tree: ScenarioTree,
    pub pset: ReferenceMeasureSet,
    pub claim: Claim,
    pub spec: LossSpec,
    pub floor: Option<f64>,
    pub position: Option<Claim>,
    pub q_measure: Option<TreeMeasure>,
    pub martingale_tol: f64,
}

/// Canonical serialization used by the fixtures (pretty JSON, two-space
/// indent, trailing newline).
pub fn canonical_json(dto: &InstanceDto) -> String {
    let mut s = serde_json::to_string_pretty(dto).expect("instance serializes");
    s.push('\n');
    s
}

pub fn parse(text: &str) -> Result<InstanceDto, ValidationError> {
    serde_json::from_str(text).map_err(|e| ValidationError {
        path: "$".into(),
        message: e.to_string(),
    })
}

fn err(path: impl Into<String>, message: impl std::fmt::Display) -> ValidationError {
    ValidationError { path: path.into(), message: message.to_string() }
}

pub fn build(dto: &InstanceDto) -> Result<Instance, ValidationError> {
    if dto.format != 1 {
        return Err(err("format", format!("unsupported format {}", dto.format)));
    }
    let tree = match (&dto.tree.generator, &dto.tree.nodes) {
        (Some(g), None) => ScenarioTree::generate(g.initial_price, &g.factors, g.steps)
            .map_err(|e| err("tree.generator", e))?,
        (None, Some(nodes)) => {
            let specs: Vec<NodeSpec> = nodes
                .iter()
                .map(|n| NodeSpec {
                    time: n.time,
                    prices: n.prices.clone(),
                    children: n.children.clone(),
                })
                .collect();
            ScenarioTree::from_nodes(specs).map_err(|e| err("tree.nodes", e))?
        }
        _ => {
            return Err(err(
                "tree",
                "exactly one of `generator` and `nodes` must be present",
            ))
        }
    };
    if dto.measures.is_empty() {
        return Err(err("measures", "at least one reference measure is required"));
    }
    let mut measures = Vec::with_capacity(dto.measures.len());
    for (i, m) in dto.measures.iter().enumerate() {
        let tm = build_measure(&tree, m, &format!("measures[{i}]"))?;
        measures.push(tm);
    }
    let pset =
        ReferenceMeasureSet::new(&tree, measures).map_err(|e| err("measures", e))?;
    let claim = match &dto.claim {
        ClaimDto::Call { strike, asset } => Claim::call(&tree, asset.unwrap_or(0), *strike)
            .map_err(|e| err("claim", e))?,
        ClaimDto::Put { strike, asset } => {
            Claim::put(&tree, asset.unwrap_or(0), *strike).map_err(|e| err("claim", e))?
        }
        ClaimDto::Explicit { payoffs } => Claim::from_leaf_values(&tree, payoffs.clone())
            .map_err(|e| err("claim.payoffs", e))?,
    };
    let spec = match &dto.loss {
        LossDto::Power { p } => LossSpec::power(*p).map_err(|e| err("loss.p", e))?,
        LossDto::Cvar { alpha } => LossSpec::cvar(*alpha).map_err(|e| err("loss.alpha", e))?,
        LossDto::Entropic => LossSpec::entropic(),
        LossDto::PiecewiseLinear { breakpoints, slopes } => {
            LossSpec::piecewise_linear(breakpoints.clone(), slopes.clone())
                .map_err(|e| err("loss", e))?
        }
        LossDto::StrictCone => LossSpec::strict_cone(),
    };
    if let Some(c) = dto.floor_c {
        if c.is_nan() || c < 0.0 {
            return Err(err("floor_c", "must be nonnegative"));
        }
    }
    let position = match &dto.position {
        Some(p) => Some(
            Claim::from_leaf_values(&tree, p.clone()).map_err(|e| err("position", e))?,
        ),
        None => None,
    };
    let q_measure = match &dto.q_measure {
        Some(m) => Some(build_measure(&tree, m, "q_measure")?),
        None => None,
    };
    let martingale_tol = dto
        .tolerances
        .as_ref()
        .and_then(|t| t.martingale_tol)
        .unwrap_or(DEFAULT_MARTINGALE_TOL);
    if !(martingale_tol > 0.0) {
        return Err(err("tolerances.martingale_tol", "must be positive"));
    }
    Ok(Instance {
        tree,
        pset,
        claim,
        spec,
        floor: dto.floor_c,
        position,
        q_measure,
        martingale_tol,
    })
}

fn build_measure(
    tree: &ScenarioTree,
    m: &MeasureDto,
    path: &str,
) -> Result<TreeMeasure, ValidationError> {
    if m.transitions.len() != tree.nonterminals().len() {
        return Err(err(
            format!("{path}.transitions"),
            format!(
                "expected {} transition vectors (one per non-terminal node), got {}",
                tree.nonterminals().len(),
                m.transitions.len()
            ),
        ));
    }
    for (k, v) in m.transitions.iter().enumerate() {
        let node = tree.nonterminals()[k];
        let arity = tree.node(node).children.len();
        if v.len() != arity {
            return Err(err(
                format!("{path}.transitions[{k}]"),
                format!("node {node} has {arity} children, got {} probabilities", v.len()),
            ));
        }
    }
    TreeMeasure::new(tree, m.transitions.clone()).map_err(|e| err(format!("{path}.transitions"), e))
}
