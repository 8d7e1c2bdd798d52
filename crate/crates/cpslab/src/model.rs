//! Core market-model data types: discretely sampled price paths, path
//! ensembles, finite scenario trees, and the max-norm underlying every
//! deviation measurement.
//!
//! All types are immutable after construction. Downstream computations attach
//! their results in separate side tables keyed by node or scenario index, so
//! concurrent reads are safe.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Structural probability tolerance: edge probabilities at a node must sum to
/// one within this bound.
pub const PROB_TOL: f64 = 1e-12;

/// Aggregated probability tolerance: total leaf mass must equal one within
/// this bound (products of edge probabilities accumulate more rounding).
pub const LEAF_MASS_TOL: f64 = 1e-10;

/// Max-norm of a vector: the largest absolute coordinate.
///
/// Errors on the empty vector; every deviation in this crate is measured in
/// this norm.
pub fn max_norm(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Dimension("max_norm of empty vector".into()));
    }
    Ok(x.iter().fold(0.0, |m, v| m.max(v.abs())))
}

/// Max-norm of the difference `a - b`.
pub fn max_norm_diff(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "max_norm_diff on lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .fold(0.0, |m, (x, y)| m.max((x - y).abs())))
}

/// A single strictly positive d-dimensional price trajectory on a uniform
/// time grid starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePath {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl PricePath {
    /// Validates and wraps a trajectory. Times must be strictly increasing
    /// and start at 0; every coordinate of every value must be positive and
    /// all values must share one dimension.
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        validate_grid(&times)?;
        if values.len() != times.len() {
            return Err(Error::Config(format!(
                "{} grid points but {} value vectors",
                times.len(),
                values.len()
            )));
        }
        let d = values.first().map(|v| v.len()).unwrap_or(0);
        if d == 0 {
            return Err(Error::Dimension("price path with dimension 0".into()));
        }
        for (k, v) in values.iter().enumerate() {
            if v.len() != d {
                return Err(Error::Dimension(format!(
                    "value vector {k} has dimension {} != {d}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !(*x > 0.0)) {
                return Err(Error::Config(format!(
                    "non-positive price coordinate at grid index {k}"
                )));
            }
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Price vector at grid index `t`.
    pub fn at(&self, t: usize) -> &[f64] {
        &self.values[t]
    }

    /// Number of assets.
    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Terminal grid index (number of steps).
    pub fn last_index(&self) -> usize {
        self.times.len() - 1
    }
}

fn validate_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Config("empty time grid".into()));
    }
    if times[0] != 0.0 {
        return Err(Error::Config(format!(
            "time grid must start at 0, got {}",
            times[0]
        )));
    }
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Config(format!(
                "time grid not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// A collection of price paths sharing one grid, one dimension and the seed
/// that generated them. `weights` is a probability weight per path; uniform
/// generators leave it flat, exhaustive tree exports carry the scenario
/// probabilities.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    times: Vec<f64>,
    paths: Vec<PricePath>,
    weights: Vec<f64>,
    seed: u64,
}

impl PathEnsemble {
    pub fn new(paths: Vec<PricePath>, seed: u64) -> Result<Self> {
        let n = paths.len();
        Self::with_weights(paths, vec![1.0 / n.max(1) as f64; n], seed)
    }

    pub fn with_weights(paths: Vec<PricePath>, weights: Vec<f64>, seed: u64) -> Result<Self> {
        let first = paths
            .first()
            .ok_or_else(|| Error::Config("empty path ensemble".into()))?;
        let times = first.times().to_vec();
        let d = first.dim();
        for (i, p) in paths.iter().enumerate() {
            if p.times() != times.as_slice() {
                return Err(Error::Config(format!("path {i} is on a different grid")));
            }
            if p.dim() != d {
                return Err(Error::Dimension(format!(
                    "path {i} has dimension {} != {d}",
                    p.dim()
                )));
            }
        }
        if weights.len() != paths.len() || weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("path weights must be positive, one per path".into()));
        }
        Ok(Self {
            times,
            paths,
            weights,
            seed,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn paths(&self) -> &[PricePath] {
        &self.paths
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.paths[0].dim()
    }

    pub fn last_index(&self) -> usize {
        self.times.len() - 1
    }
}

/// A signed real-valued trajectory ensemble (one coordinate set per grid
/// point, no positivity requirement). Raw driving processes such as Brownian
/// motion started at zero or fractional Brownian motion live here; strictly
/// positive price processes use [`PathEnsemble`].
#[derive(Debug, Clone)]
pub struct RealEnsemble {
    pub times: Vec<f64>,
    /// `paths[p][t][i]`: path p, grid index t, coordinate i.
    pub paths: Vec<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl RealEnsemble {
    pub fn new(times: Vec<f64>, paths: Vec<Vec<Vec<f64>>>, seed: u64) -> Result<Self> {
        validate_grid(&times)?;
        if paths.is_empty() {
            return Err(Error::Config("empty ensemble".into()));
        }
        let d = paths[0][0].len();
        for p in &paths {
            if p.len() != times.len() || p.iter().any(|v| v.len() != d) {
                return Err(Error::Dimension("ragged ensemble".into()));
            }
        }
        Ok(Self { times, paths, seed })
    }

    pub fn dim(&self) -> usize {
        self.paths[0][0].len()
    }

    pub fn last_index(&self) -> usize {
        self.times.len() - 1
    }
}

/// One node of a scenario tree: a price vector at an integer depth, with
/// probability-weighted children. Leaves have no children.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub time_index: usize,
    pub price: Vec<f64>,
    /// Child node ids with one-step transition probabilities.
    pub children: Vec<(usize, f64)>,
}

/// A finite filtered market model: rooted tree, strictly positive prices,
/// strictly positive one-step probabilities summing to one, all leaves at a
/// common terminal depth.
///
/// Immutable after construction. The information state at grid time `t` is
/// the node occupied at depth `t`; a scenario is a root-to-leaf path,
/// identified with its leaf.
#[derive(Debug, Clone)]
pub struct ScenarioTree {
    nodes: Vec<TreeNode>,
    root: usize,
    parent: Vec<Option<usize>>,
    leaves: Vec<usize>,
    depth: usize,
}

/// One invariant violation found by [`validate_tree`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub node_id: usize,
    pub message: String,
}

impl ScenarioTree {
    /// Builds a tree from a node arena and a root id. Checks structural
    /// integrity (indices, connectivity, acyclicity, uniform dimension);
    /// numeric invariants are reported by [`validate_tree`].
    pub fn new(nodes: Vec<TreeNode>, root: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Config("tree with no nodes".into()));
        }
        if root >= nodes.len() {
            return Err(Error::Index(format!("root id {root} out of range")));
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::Config(format!(
                    "node at position {i} carries id {}",
                    n.id
                )));
            }
        }
        let d = nodes[root].price.len();
        if d == 0 {
            return Err(Error::Dimension("tree with dimension 0".into()));
        }
        let mut parent = vec![None; nodes.len()];
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![root];
        seen[root] = true;
        let mut depth = 0;
        let mut leaves = Vec::new();
        while let Some(id) = stack.pop() {
            let n = &nodes[id];
            if n.price.len() != d {
                return Err(Error::Dimension(format!(
                    "node {id} has dimension {} != {d}",
                    n.price.len()
                )));
            }
            if n.children.is_empty() {
                depth = depth.max(n.time_index);
                leaves.push(id);
            }
            for &(c, _) in &n.children {
                if c >= nodes.len() {
                    return Err(Error::Index(format!("child id {c} out of range")));
                }
                if seen[c] {
                    return Err(Error::Config(format!(
                        "node {c} reached twice; tree is not acyclic"
                    )));
                }
                if nodes[c].time_index != n.time_index + 1 {
                    return Err(Error::Config(format!(
                        "child {c} at depth {} under node {id} at depth {}",
                        nodes[c].time_index, n.time_index
                    )));
                }
                seen[c] = true;
                parent[c] = Some(id);
                stack.push(c);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("tree has unreachable nodes".into()));
        }
        // Deterministic scenario order: by leaf id.
        leaves.sort_unstable();
        Ok(Self {
            nodes,
            root,
            parent,
            leaves,
            depth,
        })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Leaf node ids in deterministic (ascending id) order; leaf k is
    /// scenario k.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn num_scenarios(&self) -> usize {
        self.leaves.len()
    }

    /// Terminal depth N; every leaf sits at this depth in a valid tree.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.nodes[self.root].price.len()
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.parent[id]
    }

    /// Node ids visited by scenario `s`, indexed by depth `0..=N`.
    pub fn scenario_nodes(&self, s: usize) -> Vec<usize> {
        let mut path = Vec::with_capacity(self.depth + 1);
        let mut cur = self.leaves[s];
        path.push(cur);
        while let Some(p) = self.parent[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Unconditional probability of scenario `s` (product of edge
    /// probabilities along its path).
    pub fn scenario_prob(&self, s: usize) -> f64 {
        let path = self.scenario_nodes(s);
        let mut p = 1.0;
        for w in path.windows(2) {
            let (parent, child) = (w[0], w[1]);
            let edge = self.nodes[parent]
                .children
                .iter()
                .find(|(c, _)| *c == child)
                .map(|(_, q)| *q)
                .unwrap_or(0.0);
            p *= edge;
        }
        p
    }

    /// All scenario probabilities, in scenario order.
    pub fn scenario_probs(&self) -> Vec<f64> {
        (0..self.num_scenarios())
            .map(|s| self.scenario_prob(s))
            .collect()
    }

    /// Largest one-step relative price move over all edges and coordinates,
    /// as a factor >= 1. Grid stopping times may overshoot a band edge by at
    /// most this factor in one step.
    pub fn overshoot_factor(&self) -> f64 {
        let mut g: f64 = 1.0;
        for n in &self.nodes {
            for &(c, _) in &n.children {
                for (a, b) in n.price.iter().zip(&self.nodes[c].price) {
                    if *a > 0.0 && *b > 0.0 {
                        let r = b / a;
                        g = g.max(r.max(1.0 / r));
                    }
                }
            }
        }
        g
    }

    /// Exports the tree as an exhaustive weighted path ensemble on the grid
    /// `0, 1, ..., N` (unit time steps), one path per scenario, weighted by
    /// scenario probability.
    pub fn to_weighted_ensemble(&self) -> Result<PathEnsemble> {
        let times: Vec<f64> = (0..=self.depth).map(|t| t as f64).collect();
        let mut paths = Vec::with_capacity(self.num_scenarios());
        for s in 0..self.num_scenarios() {
            let values: Vec<Vec<f64>> = self
                .scenario_nodes(s)
                .into_iter()
                .map(|id| self.nodes[id].price.clone())
                .collect();
            paths.push(PricePath::new(times.clone(), values)?);
        }
        PathEnsemble::with_weights(paths, self.scenario_probs(), 0)
    }
}

/// Checks every numeric tree invariant and returns the full list of
/// violations: probability sums at each non-terminal node, strict positivity
/// of probabilities and prices, and a common leaf depth. Empty report iff the
/// tree is valid. Diagnostics, not exceptions.
pub fn validate_tree(tree: &ScenarioTree) -> Vec<Violation> {
    let mut out = Vec::new();
    for n in tree.nodes() {
        if n.price.iter().any(|p| !(*p > 0.0)) {
            out.push(Violation {
                node_id: n.id,
                message: format!("non-positive price coordinate in {:?}", n.price),
            });
        }
        if !n.children.is_empty() {
            let sum: f64 = n.children.iter().map(|(_, q)| q).sum();
            if (sum - 1.0).abs() > PROB_TOL {
                out.push(Violation {
                    node_id: n.id,
                    message: format!("edge probabilities sum to {sum} != 1"),
                });
            }
            for &(c, q) in &n.children {
                if !(q > 0.0) {
                    out.push(Violation {
                        node_id: n.id,
                        message: format!("edge to {c} has non-positive probability {q}"),
                    });
                }
            }
        } else if n.time_index != tree.depth() {
            out.push(Violation {
                node_id: n.id,
                message: format!(
                    "leaf at depth {} but terminal depth is {}",
                    n.time_index,
                    tree.depth()
                ),
            });
        }
    }
    out
}

/// Spread parameters: the target band size and the working size the
/// construction runs at, related by `(1 + working)^4 = 1 + target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonParams {
    pub eps_target: f64,
    pub eps_working: f64,
}

impl EpsilonParams {
    /// Derives the working spread from a target. Errors on non-positive
    /// targets.
    pub fn from_target(eps_target: f64) -> Result<Self> {
        let eps_working = crate::cps::adjust_epsilon(eps_target)?;
        Ok(Self {
            eps_target,
            eps_working,
        })
    }

    /// Uses the given spread directly for both roles (band checks then run at
    /// fourth power of the same value).
    pub fn from_working(eps_working: f64) -> Result<Self> {
        if !(eps_working > 0.0) {
            return Err(Error::Config(format!(
                "eps_working must be positive, got {eps_working}"
            )));
        }
        Ok(Self {
            eps_target: (1.0 + eps_working).powi(4) - 1.0,
            eps_working,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{build_sticky_tree, TreeGenConfig};

    #[test]
    fn max_norm_examples() {
        assert_eq!(max_norm(&[3.0, -4.0]).unwrap(), 4.0);
        assert_eq!(max_norm(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(max_norm(&[-5.0, 2.0]).unwrap(), 5.0);
        assert!(max_norm(&[]).is_err());
    }

    fn two_step_binomial() -> ScenarioTree {
        let cfg = TreeGenConfig::binomial_freeze(2, 1, vec![100.0], 1.1, 0.9, 0.2);
        build_sticky_tree(&cfg).unwrap()
    }

    #[test]
    fn validate_tree_accepts_valid_binomial() {
        let tree = two_step_binomial();
        assert!(validate_tree(&tree).is_empty());
    }

    #[test]
    fn validate_tree_flags_bad_probability_sum() {
        let mut tree = two_step_binomial();
        // Break one node's probabilities: (0.6, 0.5) sums to 1.1.
        let nodes = &mut tree.nodes;
        let id = tree.root;
        nodes[id].children.truncate(2);
        nodes[id].children[0].1 = 0.6;
        nodes[id].children[1].1 = 0.5;
        let report = validate_tree(&tree);
        assert_eq!(report.len(), 1);
        assert!(report[0].message.contains("1.1"));
    }

    #[test]
    fn validate_tree_flags_zero_price() {
        let mut tree = two_step_binomial();
        let leaf = tree.leaves[0];
        tree.nodes[leaf].price[0] = 0.0;
        let report = validate_tree(&tree);
        assert_eq!(report.len(), 1);
        assert!(report[0].message.contains("non-positive price"));
    }

    #[test]
    fn valid_tree_leaf_mass_is_one() {
        let tree = two_step_binomial();
        assert!(validate_tree(&tree).is_empty());
        let total: f64 = tree.scenario_probs().iter().sum();
        assert!((total - 1.0).abs() <= LEAF_MASS_TOL);
    }

    #[test]
    fn epsilon_params_roundtrip() {
        let e = EpsilonParams::from_target(0.1).unwrap();
        assert!(((1.0 + e.eps_working).powi(4) - 1.1).abs() <= 1e-12);
    }

    #[test]
    fn price_path_rejects_nonpositive_and_bad_grid() {
        assert!(PricePath::new(vec![0.0, 1.0], vec![vec![1.0], vec![0.0]]).is_err());
        assert!(PricePath::new(vec![0.5, 1.0], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(PricePath::new(vec![0.0, 0.0], vec![vec![1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn weighted_export_preserves_probabilities() {
        let tree = two_step_binomial();
        let ens = tree.to_weighted_ensemble().unwrap();
        assert_eq!(ens.len(), tree.num_scenarios());
        let total: f64 = ens.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[cfg(test)]
mod norm_properties {
    use super::max_norm;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn triangle_inequality(a in proptest::collection::vec(-1e6f64..1e6, 1..6),
                               b in proptest::collection::vec(-1e6f64..1e6, 1..6)) {
            let n = a.len().min(b.len());
            let (a, b) = (&a[..n], &b[..n]);
            let sum: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
            prop_assert!(max_norm(&sum).unwrap() <= max_norm(a).unwrap() + max_norm(b).unwrap() + 1e-9);
        }

        #[test]
        fn absolute_homogeneity(a in proptest::collection::vec(-1e6f64..1e6, 1..6),
                                c in -1e3f64..1e3) {
            let scaled: Vec<f64> = a.iter().map(|x| c * x).collect();
            let lhs = max_norm(&scaled).unwrap();
            let rhs = c.abs() * max_norm(&a).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs));
        }
    }
}
