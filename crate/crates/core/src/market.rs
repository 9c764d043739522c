//! Discrete market model: scenario trees, tree probability measures,
//! reference measure families with their quasi-sure support, adapted
//! strategies, claims, and martingale diagnostics.
//!
//! Trees are non-recombining, so nodes are in bijection with path prefixes
//! and path-dependent claims need no extra machinery.

use crate::error::{Error, Result};

/// Index of a node inside a [`ScenarioTree`].
pub type NodeId = usize;

/// Default tolerance for the conditional-drift test in
/// [`is_martingale_measure`], relative to the node price scale.
pub const DEFAULT_MARTINGALE_TOL: f64 = 1e-9;

/// One node of a scenario tree.
#[derive(Debug, Clone)]
pub struct TreeNode {
    /// Time step of the node (root has 0, leaves have `steps`).
    pub time: usize,
    /// Asset prices at this node, one entry per asset.
    pub prices: Vec<f64>,
    /// Children, empty exactly for leaves.
    pub children: Vec<NodeId>,
    /// Parent, `None` only for the root.
    pub parent: Option<NodeId>,
}

/// Raw node description used to build a tree explicitly.
#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub time: usize,
    pub prices: Vec<f64>,
    pub children: Vec<NodeId>,
}

/// A finite, non-recombining event tree with per-node asset prices.
///
/// Exactly one root at time 0; every non-terminal node has at least one
/// child at the next time step; all leaves sit at the final step.
#[derive(Debug, Clone)]
pub struct ScenarioTree {
    nodes: Vec<TreeNode>,
    steps: usize,
    asset_count: usize,
    leaves: Vec<NodeId>,
    nonterminal: Vec<NodeId>,
    leaf_pos: Vec<Option<usize>>,
    nonterminal_pos: Vec<Option<usize>>,
}

impl ScenarioTree {
    /// Builds a tree from explicit node descriptions. Node 0 need not be the
    /// root; the root is inferred as the unique node never listed as a child.
    pub fn from_nodes(specs: Vec<NodeSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidTree("no nodes".into()));
        }
        let n = specs.len();
        let asset_count = specs[0].prices.len();
        if asset_count == 0 {
            return Err(Error::InvalidTree("need at least one asset".into()));
        }
        let mut parent: Vec<Option<NodeId>> = vec![None; n];
        for (i, s) in specs.iter().enumerate() {
            if s.prices.len() != asset_count {
                return Err(Error::InvalidTree(format!(
                    "node {i}: expected {asset_count} prices, got {}",
                    s.prices.len()
                )));
            }
            if s.prices.iter().any(|p| !p.is_finite()) {
                return Err(Error::InvalidTree(format!("node {i}: non-finite price")));
            }
            for &c in &s.children {
                if c >= n {
                    return Err(Error::InvalidTree(format!(
                        "node {i}: child index {c} out of range"
                    )));
                }
                if c == i {
                    return Err(Error::InvalidTree(format!("node {i}: child of itself")));
                }
                if parent[c].is_some() {
                    return Err(Error::InvalidTree(format!("node {c}: two parents")));
                }
                if specs[c].time != s.time + 1 {
                    return Err(Error::InvalidTree(format!(
                        "node {c}: child time {} must be parent time {} + 1",
                        specs[c].time, s.time
                    )));
                }
                parent[c] = Some(i);
            }
        }
        let roots: Vec<NodeId> = (0..n).filter(|&i| parent[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidTree(format!(
                "expected exactly one root, found {}",
                roots.len()
            )));
        }
        let root = roots[0];
        if specs[root].time != 0 {
            return Err(Error::InvalidTree("root must sit at time 0".into()));
        }
        // Reindex so the root is node 0 and indices are in BFS order.
        let mut order = Vec::with_capacity(n);
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &c in &specs[u].children {
                queue.push_back(c);
            }
        }
        if order.len() != n {
            return Err(Error::InvalidTree("nodes unreachable from the root".into()));
        }
        let mut new_id = vec![0usize; n];
        for (pos, &old) in order.iter().enumerate() {
            new_id[old] = pos;
        }
        let nodes: Vec<TreeNode> = order
            .iter()
            .map(|&old| TreeNode {
                time: specs[old].time,
                prices: specs[old].prices.clone(),
                children: specs[old].children.iter().map(|&c| new_id[c]).collect(),
                parent: parent[old].map(|p| new_id[p]),
            })
            .collect();
        let steps = nodes.iter().map(|nd| nd.time).max().unwrap();
        if steps == 0 {
            return Err(Error::InvalidTree("tree must have at least one step".into()));
        }
        for (i, nd) in nodes.iter().enumerate() {
            if nd.children.is_empty() && nd.time != steps {
                return Err(Error::InvalidTree(format!(
                    "node {i}: leaf at time {} but horizon is {steps}",
                    nd.time
                )));
            }
        }
        Ok(Self::index(nodes, steps, asset_count))
    }

    /// Builds a non-recombining tree by applying every multiplicative factor
    /// at every node: child price = parent price * factor.
    pub fn generate(initial_price: f64, factors: &[f64], steps: usize) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidTree("empty factor set".into()));
        }
        if factors.iter().any(|&f| !(f.is_finite() && f > 0.0)) {
            return Err(Error::InvalidTree("factors must be finite and positive".into()));
        }
        if steps == 0 {
            return Err(Error::InvalidTree("steps must be at least 1".into()));
        }
        if !initial_price.is_finite() {
            return Err(Error::InvalidTree("initial price must be finite".into()));
        }
        let k = factors.len();
        let mut nodes = vec![TreeNode {
            time: 0,
            prices: vec![initial_price],
            children: Vec::new(),
            parent: None,
        }];
        let mut frontier = vec![0usize];
        for t in 1..=steps {
            let mut next = Vec::with_capacity(frontier.len() * k);
            for &u in &frontier {
                for &f in factors {
                    let id = nodes.len();
                    let price = nodes[u].prices[0] * f;
                    nodes.push(TreeNode {
                        time: t,
                        prices: vec![price],
                        children: Vec::new(),
                        parent: Some(u),
                    });
                    nodes[u].children.push(id);
                    next.push(id);
                }
            }
            frontier = next;
        }
        Ok(Self::index(nodes, steps, 1))
    }

    fn index(nodes: Vec<TreeNode>, steps: usize, asset_count: usize) -> Self {
        let n = nodes.len();
        let mut leaves = Vec::new();
        let mut nonterminal = Vec::new();
        let mut leaf_pos = vec![None; n];
        let mut nonterminal_pos = vec![None; n];
        for (i, nd) in nodes.iter().enumerate() {
            if nd.children.is_empty() {
                leaf_pos[i] = Some(leaves.len());
                leaves.push(i);
            } else {
                nonterminal_pos[i] = Some(nonterminal.len());
                nonterminal.push(i);
            }
        }
        Self {
            nodes,
            steps,
            asset_count,
            leaves,
            nonterminal,
            leaf_pos,
            nonterminal_pos,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn asset_count(&self) -> usize {
        self.asset_count
    }

    /// Number of time steps (leaves sit at this time index).
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id].children.is_empty()
    }

    /// Leaf node ids in index order; claims are stored in this order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    /// Non-terminal node ids in index order; strategies and transition
    /// vectors are stored in this order.
    pub fn nonterminals(&self) -> &[NodeId] {
        &self.nonterminal
    }

    /// Position of a leaf node in [`Self::leaves`].
    pub fn leaf_index(&self, id: NodeId) -> Option<usize> {
        self.leaf_pos[id]
    }

    /// Position of a non-terminal node in [`Self::nonterminals`].
    pub fn nonterminal_index(&self, id: NodeId) -> Option<usize> {
        self.nonterminal_pos[id]
    }

    /// Nodes on the path from the root to `id`, inclusive.
    pub fn path_from_root(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Largest absolute price on the tree; used to scale tolerances.
    pub fn price_scale(&self) -> f64 {
        self.nodes
            .iter()
            .flat_map(|nd| nd.prices.iter())
            .fold(1.0_f64, |acc, &p| acc.max(p.abs()))
    }
}

/// A probability measure on a tree, stored as one transition vector per
/// non-terminal node (in [`ScenarioTree::nonterminals`] order).
#[derive(Debug, Clone)]
pub struct TreeMeasure {
    transitions: Vec<Vec<f64>>,
}

impl TreeMeasure {
    /// Sum tolerance for transition vectors.
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(tree: &ScenarioTree, transitions: Vec<Vec<f64>>) -> Result<Self> {
        if transitions.len() != tree.nonterminals().len() {
            return Err(Error::InvalidMeasure(format!(
                "expected {} transition vectors, got {}",
                tree.nonterminals().len(),
                transitions.len()
            )));
        }
        let mut cleaned = Vec::with_capacity(transitions.len());
        for (k, v) in transitions.into_iter().enumerate() {
            let node = tree.nonterminals()[k];
            let arity = tree.node(node).children.len();
            if v.len() != arity {
                return Err(Error::InvalidMeasure(format!(
                    "node {node}: expected {arity} transition probabilities, got {}",
                    v.len()
                )));
            }
            let mut w = Vec::with_capacity(arity);
            for (j, &p) in v.iter().enumerate() {
                if !p.is_finite() || p < -1e-9 {
                    return Err(Error::InvalidMeasure(format!(
                        "node {node}, branch {j}: probability {p}"
                    )));
                }
                w.push(p.max(0.0));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > Self::SUM_TOL {
                return Err(Error::InvalidMeasure(format!(
                    "node {node}: transition probabilities sum to {sum}"
                )));
            }
            cleaned.push(w);
        }
        Ok(Self { transitions: cleaned })
    }

    /// Uniform transition probabilities at every non-terminal node.
    pub fn uniform(tree: &ScenarioTree) -> Self {
        let transitions = tree
            .nonterminals()
            .iter()
            .map(|&n| {
                let k = tree.node(n).children.len();
                vec![1.0 / k as f64; k]
            })
            .collect();
        Self { transitions }
    }

    /// Reconstructs a measure from leaf probabilities (in leaf order) by
    /// aggregating mass up the tree. Unreached nodes get uniform transitions.
    pub fn from_leaf_probabilities(tree: &ScenarioTree, leaf_probs: &[f64]) -> Result<Self> {
        if leaf_probs.len() != tree.leaves().len() {
            return Err(Error::InvalidMeasure(format!(
                "expected {} leaf probabilities, got {}",
                tree.leaves().len(),
                leaf_probs.len()
            )));
        }
        let mut mass = vec![0.0; tree.node_count()];
        for (li, &leaf) in tree.leaves().iter().enumerate() {
            let p = leaf_probs[li];
            if !p.is_finite() || p < -1e-9 {
                return Err(Error::InvalidMeasure(format!("leaf {leaf}: probability {p}")));
            }
            mass[leaf] = p.max(0.0);
        }
        // Aggregate bottom-up; node ids are in BFS order so reverse works.
        for id in (0..tree.node_count()).rev() {
            if !tree.is_leaf(id) {
                mass[id] = tree.node(id).children.iter().map(|&c| mass[c]).sum();
            }
        }
        let total = mass[tree.root()];
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMeasure(format!(
                "leaf probabilities sum to {total}"
            )));
        }
        let transitions = tree
            .nonterminals()
            .iter()
            .map(|&n| {
                let node = tree.node(n);
                if mass[n] > 0.0 {
                    node.children.iter().map(|&c| (mass[c] / mass[n]).clamp(0.0, 1.0)).collect()
                } else {
                    vec![1.0 / node.children.len() as f64; node.children.len()]
                }
            })
            .collect();
        Ok(Self { transitions })
    }

    /// Transition vector of the `k`-th non-terminal node.
    pub fn transition(&self, k: usize) -> &[f64] {
        &self.transitions[k]
    }

    pub fn transitions(&self) -> &[Vec<f64>] {
        &self.transitions
    }

    /// Probability of reaching each node.
    pub fn node_probabilities(&self, tree: &ScenarioTree) -> Vec<f64> {
        let mut prob = vec![0.0; tree.node_count()];
        prob[tree.root()] = 1.0;
        for (k, &n) in tree.nonterminals().iter().enumerate() {
            for (j, &c) in tree.node(n).children.iter().enumerate() {
                prob[c] = prob[n] * self.transitions[k][j];
            }
        }
        prob
    }

    /// Induced leaf probabilities, in leaf order.
    pub fn leaf_probabilities(&self, tree: &ScenarioTree) -> Vec<f64> {
        let prob = self.node_probabilities(tree);
        tree.leaves().iter().map(|&l| prob[l]).collect()
    }
}

/// A nonempty finite family of reference measures on a shared tree, with the
/// cached union support (nodes reached with positive probability under at
/// least one member).
#[derive(Debug, Clone)]
pub struct ReferenceMeasureSet {
    measures: Vec<TreeMeasure>,
    support: Vec<bool>,
}

impl ReferenceMeasureSet {
    pub fn new(tree: &ScenarioTree, measures: Vec<TreeMeasure>) -> Result<Self> {
        if measures.is_empty() {
            return Err(Error::InvalidMeasure("reference family must be nonempty".into()));
        }
        for m in &measures {
            if m.transitions.len() != tree.nonterminals().len() {
                return Err(Error::InvalidMeasure(
                    "measure defined on a different tree".into(),
                ));
            }
        }
        let mut support = vec![false; tree.node_count()];
        for m in &measures {
            for (n, p) in m.node_probabilities(tree).into_iter().enumerate() {
                if p > 0.0 {
                    support[n] = true;
                }
            }
        }
        Ok(Self { measures, support })
    }

    pub fn measures(&self) -> &[TreeMeasure] {
        &self.measures
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    /// Union support flags, indexed by node id.
    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn is_supported(&self, node: NodeId) -> bool {
        self.support[node]
    }

    /// Supported leaves, in leaf order.
    pub fn supported_leaves(&self, tree: &ScenarioTree) -> Vec<NodeId> {
        tree.leaves().iter().copied().filter(|&l| self.support[l]).collect()
    }
}

/// An adapted trading strategy: one position vector (per asset) at each
/// non-terminal node, in [`ScenarioTree::nonterminals`] order.
#[derive(Debug, Clone)]
pub struct Strategy {
    positions: Vec<Vec<f64>>,
}

impl Strategy {
    pub fn new(tree: &ScenarioTree, positions: Vec<Vec<f64>>) -> Result<Self> {
        if positions.len() != tree.nonterminals().len() {
            return Err(Error::InvalidStrategy(format!(
                "expected {} position vectors, got {}",
                tree.nonterminals().len(),
                positions.len()
            )));
        }
        for (k, z) in positions.iter().enumerate() {
            if z.len() != tree.asset_count() {
                return Err(Error::InvalidStrategy(format!(
                    "node {}: expected {} positions, got {}",
                    tree.nonterminals()[k],
                    tree.asset_count(),
                    z.len()
                )));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidStrategy("non-finite position".into()));
            }
        }
        Ok(Self { positions })
    }

    pub fn zeros(tree: &ScenarioTree) -> Self {
        Self {
            positions: vec![vec![0.0; tree.asset_count()]; tree.nonterminals().len()],
        }
    }

    /// Position vector at the `k`-th non-terminal node.
    pub fn position(&self, k: usize) -> &[f64] {
        &self.positions[k]
    }

    pub fn positions(&self) -> &[Vec<f64>] {
        &self.positions
    }
}

/// A claim: one payoff per leaf, in leaf order.
#[derive(Debug, Clone)]
pub struct Claim {
    values: Vec<f64>,
}

impl Claim {
    pub fn from_leaf_values(tree: &ScenarioTree, values: Vec<f64>) -> Result<Self> {
        if values.len() != tree.leaves().len() {
            return Err(Error::InvalidClaim(format!(
                "expected {} leaf payoffs, got {}",
                tree.leaves().len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidClaim("non-finite payoff".into()));
        }
        Ok(Self { values })
    }

    pub fn constant(tree: &ScenarioTree, c: f64) -> Result<Self> {
        Self::from_leaf_values(tree, vec![c; tree.leaves().len()])
    }

    /// Call payoff `max(S_asset - strike, 0)` at each leaf.
    pub fn call(tree: &ScenarioTree, asset: usize, strike: f64) -> Result<Self> {
        if asset >= tree.asset_count() {
            return Err(Error::InvalidClaim(format!("asset index {asset} out of range")));
        }
        let values = tree
            .leaves()
            .iter()
            .map(|&l| (tree.node(l).prices[asset] - strike).max(0.0))
            .collect();
        Self::from_leaf_values(tree, values)
    }

    /// Put payoff `max(strike - S_asset, 0)` at each leaf.
    pub fn put(tree: &ScenarioTree, asset: usize, strike: f64) -> Result<Self> {
        if asset >= tree.asset_count() {
            return Err(Error::InvalidClaim(format!("asset index {asset} out of range")));
        }
        let values = tree
            .leaves()
            .iter()
            .map(|&l| (strike - tree.node(l).prices[asset]).max(0.0))
            .collect();
        Self::from_leaf_values(tree, values)
    }

    /// Payoffs in leaf order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Payoff at the `li`-th leaf.
    pub fn at(&self, li: usize) -> f64 {
        self.values[li]
    }
}

/// Accumulated trading gains at `node`: the sum over edges on the
/// root-to-node path of position times price increment. Zero at the root.
pub fn gains(tree: &ScenarioTree, strategy: &Strategy, node: NodeId) -> f64 {
    let path = tree.path_from_root(node);
    let mut total = 0.0;
    for w in path.windows(2) {
        let (u, v) = (w[0], w[1]);
        let k = tree.nonterminal_index(u).expect("path node has children");
        let z = strategy.position(k);
        for a in 0..tree.asset_count() {
            total += z[a] * (tree.node(v).prices[a] - tree.node(u).prices[a]);
        }
    }
    total
}

/// Trading gains at every node, computed by one pass down the tree.
pub fn gains_all(tree: &ScenarioTree, strategy: &Strategy) -> Vec<f64> {
    let mut g = vec![0.0; tree.node_count()];
    for (k, &n) in tree.nonterminals().iter().enumerate() {
        let z = strategy.position(k);
        for &c in &tree.node(n).children {
            let mut inc = 0.0;
            for a in 0..tree.asset_count() {
                inc += z[a] * (tree.node(c).prices[a] - tree.node(n).prices[a]);
            }
            g[c] = g[n] + inc;
        }
    }
    g
}

/// True when running gains stay at or above `-floor` at every supported node
/// of every time step. `floor` may be `f64::INFINITY`.
pub fn admissible(
    tree: &ScenarioTree,
    pset: &ReferenceMeasureSet,
    strategy: &Strategy,
    floor: f64,
) -> bool {
    if floor == f64::INFINITY {
        return true;
    }
    let g = gains_all(tree, strategy);
    (0..tree.node_count()).all(|n| !pset.is_supported(n) || g[n] >= -floor)
}

/// True when the conditional one-step expected price increment vanishes
/// (within `tol`, relative to the local price scale) at every non-terminal
/// node the measure reaches with positive probability.
pub fn is_martingale_measure(tree: &ScenarioTree, measure: &TreeMeasure, tol: f64) -> bool {
    let prob = measure.node_probabilities(tree);
    for (k, &n) in tree.nonterminals().iter().enumerate() {
        if prob[n] <= 0.0 {
            continue;
        }
        let q = measure.transition(k);
        for a in 0..tree.asset_count() {
            let s0 = tree.node(n).prices[a];
            let mut drift = 0.0;
            let mut scale = s0.abs().max(1.0);
            for (j, &c) in tree.node(n).children.iter().enumerate() {
                let sc = tree.node(c).prices[a];
                drift += q[j] * (sc - s0);
                scale = scale.max(sc.abs());
            }
            if drift.abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Leaf-wise likelihood ratio dQ/dP of induced leaf probabilities.
///
/// Entries are `INFINITY` where Q charges a P-null leaf; 0/0 is defined
/// as 0. Order matches [`ScenarioTree::leaves`].
pub fn density(tree: &ScenarioTree, q: &TreeMeasure, p: &TreeMeasure) -> Vec<f64> {
    let ql = q.leaf_probabilities(tree);
    let pl = p.leaf_probabilities(tree);
    ql.iter()
        .zip(pl.iter())
        .map(|(&qi, &pi)| {
            if pi > 0.0 {
                qi / pi
            } else if qi > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect()
}
