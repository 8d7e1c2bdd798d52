//! Stickiness checks and estimators.
//!
//! On a finite tree with a minimum move size, stickiness reduces to: every
//! non-terminal node keeps a positive-probability child with unchanged price
//! vector. That freeze child makes the all-freeze continuation positive for
//! every radius, which is the discrete carrier of the conditional
//! small-deviation property. Tree checks here are exact (sums and products
//! of edge probabilities); ensembles get bundled Monte Carlo estimates with
//! binomial standard errors.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{max_norm_diff, PathEnsemble, RealEnsemble, ScenarioTree};
use crate::skeleton::SkeletonDecomposition;

/// Exact stickiness check: true iff every non-terminal node has a
/// positive-probability child with identical price vector. On failure the
/// first violating node (lowest id) is returned.
pub fn check_tree_sticky(tree: &ScenarioTree) -> (bool, Option<usize>) {
    for node in tree.nodes() {
        if node.children.is_empty() {
            continue;
        }
        let frozen = node.children.iter().any(|&(c, q)| {
            q > 0.0
                && tree
                    .node(c)
                    .price
                    .iter()
                    .zip(&node.price)
                    .all(|(a, b)| a == b)
        });
        if !frozen {
            return (false, Some(node.id));
        }
    }
    (true, None)
}

/// One cell of the stopped-radius stickiness check: a stopping node, its
/// radius, and the exact conditional probability of staying strictly inside
/// that radius for the rest of the horizon.
#[derive(Debug, Clone, Serialize)]
pub struct StrongCell {
    pub node_id: usize,
    pub stop_index: usize,
    pub eta: f64,
    pub probability: f64,
}

/// Report of the stopped-radius check; `failures` lists cells with zero
/// conditional probability.
#[derive(Debug, Clone, Serialize)]
pub struct StrongStickinessReport {
    pub cells: Vec<StrongCell>,
    pub failures: Vec<StrongCell>,
}

impl StrongStickinessReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Builds a stopping rule (one grid index per scenario) as the depth of the
/// first marked node along each scenario's path, capped at the horizon.
/// Marking nodes always yields a measurable rule.
pub fn stopping_rule_from_marks(
    tree: &ScenarioTree,
    marked: impl Fn(usize) -> bool,
) -> Vec<usize> {
    (0..tree.num_scenarios())
        .map(|s| {
            let path = tree.scenario_nodes(s);
            path.iter()
                .position(|&id| marked(id))
                .unwrap_or(tree.depth())
        })
        .collect()
}

/// Checks the stopped version of stickiness: for a measurable stopping rule
/// and a nonnegative radius attached to each stopping node, every cell with
/// positive radius must keep the future deviation strictly inside the radius
/// with positive conditional probability. Probabilities are computed exactly
/// by subtree enumeration.
///
/// `stopping` maps each scenario to a grid index; it must be constant on
/// history classes (a genuine stopping time), otherwise an input error is
/// returned. `radius` assigns the radius to each stopping node.
pub fn check_strong_stickiness(
    tree: &ScenarioTree,
    stopping: &[usize],
    radius: impl Fn(usize) -> f64,
) -> Result<StrongStickinessReport> {
    let n_scen = tree.num_scenarios();
    if stopping.len() != n_scen {
        return Err(Error::Config(format!(
            "stopping rule covers {} scenarios, tree has {n_scen}",
            stopping.len()
        )));
    }
    // Group scenarios by their stopping node and verify measurability: all
    // scenarios through that node must stop there.
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (s, &t) in stopping.iter().enumerate() {
        if t > tree.depth() {
            return Err(Error::Index(format!(
                "stopping index {t} beyond horizon for scenario {s}"
            )));
        }
        let node = tree.scenario_nodes(s)[t];
        groups.entry(node).or_default().push(s);
    }
    let mut subtree_leaves = vec![0usize; tree.nodes().len()];
    for &leaf in tree.leaves() {
        let mut cur = Some(leaf);
        while let Some(id) = cur {
            subtree_leaves[id] += 1;
            cur = tree.parent(id);
        }
    }
    for (&node, members) in &groups {
        if members.len() != subtree_leaves[node] {
            return Err(Error::Config(format!(
                "stopping rule is not measurable: node {node} carries {} of its {} scenarios",
                members.len(),
                subtree_leaves[node]
            )));
        }
    }

    let probs = tree.scenario_probs();
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for (&node, members) in &groups {
        let eta = radius(node);
        if !(eta >= 0.0) {
            return Err(Error::Config(format!(
                "radius rule yields {eta} at node {node}"
            )));
        }
        if eta == 0.0 {
            continue; // vacuous cell
        }
        let stop_index = tree.node(node).time_index;
        let anchor = &tree.node(node).price;
        let mut mass = 0.0;
        let mut stay = 0.0;
        for &s in members {
            let path = tree.scenario_nodes(s);
            let mut dev = 0.0f64;
            for &id in &path[stop_index..] {
                dev = dev.max(max_norm_diff(&tree.node(id).price, anchor)?);
            }
            mass += probs[s];
            if dev < eta {
                stay += probs[s];
            }
        }
        let cell = StrongCell {
            node_id: node,
            stop_index,
            eta,
            probability: stay / mass,
        };
        if !(cell.probability > 0.0) {
            failures.push(cell.clone());
        }
        cells.push(cell);
    }
    Ok(StrongStickinessReport { cells, failures })
}

/// Conditional probability of one deviation bucket at one skeleton node.
#[derive(Debug, Clone, Serialize)]
pub struct ClassCell {
    pub level: usize,
    pub node_index: usize,
    pub anchor_node: usize,
    pub class: usize,
    pub probability: f64,
}

/// Report of the bucket-probability check.
#[derive(Debug, Clone, Serialize)]
pub struct ClassProbReport {
    pub cells: Vec<ClassCell>,
    pub failures: Vec<ClassCell>,
}

impl ClassProbReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// For every skeleton node that can still move (positive support maximum),
/// computes the exact conditional probability of each deviation bucket
/// `1..=2d+1` and flags any that vanish. A node with zero support maximum is
/// outside the statement's scope and is skipped.
pub fn check_class_probabilities(skeleton: &SkeletonDecomposition) -> ClassProbReport {
    let buckets = 2 * skeleton.dim + 1;
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for (li, level) in skeleton.levels.iter().enumerate() {
        for (ni, node) in level.iter().enumerate() {
            if !(node.support_max > 0.0) {
                continue;
            }
            let mut mass = vec![0.0f64; buckets + 1];
            for m in &node.members {
                if let Some(c) = m.class {
                    mass[c] += skeleton.scenario_probs[m.scenario];
                }
            }
            for c in 1..=buckets {
                let cell = ClassCell {
                    level: li + 1,
                    node_index: ni,
                    anchor_node: node.anchor_node,
                    class: c,
                    probability: mass[c] / node.prob,
                };
                if !(cell.probability > 0.0) {
                    failures.push(cell.clone());
                }
                cells.push(cell);
            }
        }
    }
    ClassProbReport { cells, failures }
}

/// Exact conditional stickiness probabilities on a tree: for every node at
/// depth `t`, the probability that the price never deviates by `delta` or
/// more over the remaining horizon.
pub fn tree_stickiness_probs(
    tree: &ScenarioTree,
    t: usize,
    delta: f64,
) -> Result<Vec<(usize, f64)>> {
    if t >= tree.depth() {
        return Err(Error::Index(format!(
            "t = {t} must lie strictly before the horizon {}",
            tree.depth()
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::Config("delta must be positive".into()));
    }
    let probs = tree.scenario_probs();
    let mut mass: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for s in 0..tree.num_scenarios() {
        let path = tree.scenario_nodes(s);
        let node = path[t];
        let anchor = &tree.node(node).price;
        let mut dev = 0.0f64;
        for &id in &path[t..] {
            dev = dev.max(max_norm_diff(&tree.node(id).price, anchor)?);
        }
        let e = mass.entry(node).or_insert((0.0, 0.0));
        e.0 += probs[s];
        if dev < delta {
            e.1 += probs[s];
        }
    }
    Ok(mass
        .into_iter()
        .map(|(node, (total, stay))| (node, stay / total))
        .collect())
}

/// A uniform view over price and raw ensembles: grid times, per-path values,
/// per-path weights.
pub enum PathsView<'a> {
    Prices(&'a PathEnsemble),
    Reals(&'a RealEnsemble),
}

impl<'a> PathsView<'a> {
    pub fn len(&self) -> usize {
        match self {
            PathsView::Prices(e) => e.len(),
            PathsView::Reals(e) => e.paths.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn last_index(&self) -> usize {
        match self {
            PathsView::Prices(e) => e.last_index(),
            PathsView::Reals(e) => e.last_index(),
        }
    }

    fn value(&self, path: usize, t: usize) -> &[f64] {
        match self {
            PathsView::Prices(e) => e.paths()[path].at(t),
            PathsView::Reals(e) => &e.paths[path][t],
        }
    }

    fn weight(&self, path: usize) -> f64 {
        match self {
            PathsView::Prices(e) => e.weights()[path],
            PathsView::Reals(_) => 1.0,
        }
    }
}

/// How paths are grouped into conditioning cells.
#[derive(Debug, Clone, Copy)]
pub enum BundleRule {
    /// One bundle holding every path: appropriate when increments are
    /// independent of the history.
    Global,
    /// Group paths whose histories up to `t` agree exactly (tree exports).
    ExactHistory,
    /// Greedy clustering by sup-distance over `[0, t]` within the radius.
    Radius(f64),
}

/// One estimator cell.
#[derive(Debug, Clone, Serialize)]
pub struct StickinessCell {
    pub cell_id: usize,
    pub kind: String,
    /// Estimated (or exact, for exhaustive weighted exports) conditional
    /// probability; absent when the cell had no mass.
    pub probability: Option<f64>,
    pub stderr: f64,
    pub flag: String,
    pub members: usize,
}

/// Bundled estimate of the conditional small-deviation probability.
#[derive(Debug, Clone, Serialize)]
pub struct StickinessReport {
    pub t_index: usize,
    pub delta: f64,
    pub cells: Vec<StickinessCell>,
}

/// Estimates, per bundle, the probability that the path deviates from its
/// time-`t` position by less than `delta` over the remaining horizon.
/// Weighted paths contribute their weights; the standard error uses the
/// effective sample size.
pub fn estimate_stickiness(
    view: &PathsView,
    t: usize,
    delta: f64,
    rule: BundleRule,
) -> Result<StickinessReport> {
    if view.is_empty() {
        return Err(Error::Config("empty ensemble".into()));
    }
    let n_term = view.last_index();
    if t >= n_term {
        return Err(Error::Index(format!(
            "t = {t} must lie strictly before the terminal index {n_term}"
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::Config("delta must be positive".into()));
    }
    let n = view.len();
    // Assign each path to a bundle.
    let bundle_of: Vec<usize> = match rule {
        BundleRule::Global => vec![0; n],
        BundleRule::ExactHistory => {
            let mut keys: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
            let mut out = Vec::with_capacity(n);
            for p in 0..n {
                let mut key = Vec::with_capacity((t + 1) * view.value(p, 0).len());
                for u in 0..=t {
                    key.extend(view.value(p, u).iter().map(|v| v.to_bits()));
                }
                let next = keys.len();
                out.push(*keys.entry(key).or_insert(next));
            }
            out
        }
        BundleRule::Radius(r) => {
            if !(r >= 0.0) {
                return Err(Error::Config("bundle radius must be nonnegative".into()));
            }
            let mut reps: Vec<usize> = Vec::new();
            let mut out = Vec::with_capacity(n);
            for p in 0..n {
                let mut found = None;
                'reps: for (b, &rep) in reps.iter().enumerate() {
                    for u in 0..=t {
                        if max_norm_diff(view.value(p, u), view.value(rep, u))? > r {
                            continue 'reps;
                        }
                    }
                    found = Some(b);
                    break;
                }
                match found {
                    Some(b) => out.push(b),
                    None => {
                        reps.push(p);
                        out.push(reps.len() - 1);
                    }
                }
            }
            out
        }
    };
    let n_bundles = bundle_of.iter().copied().max().unwrap_or(0) + 1;
    let mut w_sum = vec![0.0f64; n_bundles];
    let mut w_sq = vec![0.0f64; n_bundles];
    let mut w_stay = vec![0.0f64; n_bundles];
    let mut count = vec![0usize; n_bundles];
    for p in 0..n {
        let b = bundle_of[p];
        let w = view.weight(p);
        let anchor = view.value(p, t).to_vec();
        let mut dev = 0.0f64;
        for u in t..=n_term {
            dev = dev.max(max_norm_diff(view.value(p, u), &anchor)?);
        }
        w_sum[b] += w;
        w_sq[b] += w * w;
        count[b] += 1;
        if dev < delta {
            w_stay[b] += w;
        }
    }
    let mut cells = Vec::with_capacity(n_bundles);
    for b in 0..n_bundles {
        if w_sum[b] > 0.0 {
            let p_hat = w_stay[b] / w_sum[b];
            let n_eff = w_sum[b] * w_sum[b] / w_sq[b];
            let stderr = (p_hat * (1.0 - p_hat) / n_eff).sqrt();
            cells.push(StickinessCell {
                cell_id: b,
                kind: "bundle".into(),
                probability: Some(p_hat),
                stderr,
                flag: "ok".into(),
                members: count[b],
            });
        } else {
            cells.push(StickinessCell {
                cell_id: b,
                kind: "bundle".into(),
                probability: None,
                stderr: 0.0,
                flag: "undetermined".into(),
                members: count[b],
            });
        }
    }
    Ok(StickinessReport {
        t_index: t,
        delta,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PricePath, TreeNode};
    use crate::simulate::{
        build_sticky_tree, gen_brownian_raw, SimConfig, TreeGenConfig,
    };
    use crate::skeleton::{build_skeleton, SkeletonOptions};

    #[test]
    fn sticky_check_examples() {
        let cfg = TreeGenConfig::binomial_freeze(2, 1, vec![1.0], 1.1, 0.9, 0.05);
        let tree = build_sticky_tree(&cfg).unwrap();
        assert_eq!(check_tree_sticky(&tree), (true, None));

        // Plain binomial without freeze fails at the root.
        let nodes = vec![
            TreeNode {
                id: 0,
                time_index: 0,
                price: vec![1.0],
                children: vec![(1, 0.5), (2, 0.5)],
            },
            TreeNode {
                id: 1,
                time_index: 1,
                price: vec![1.1],
                children: vec![],
            },
            TreeNode {
                id: 2,
                time_index: 1,
                price: vec![0.9],
                children: vec![],
            },
        ];
        let tree = crate::model::ScenarioTree::new(nodes, 0).unwrap();
        assert_eq!(check_tree_sticky(&tree), (false, Some(0)));

        // Single node: vacuously sticky.
        let cfg = TreeGenConfig::binomial_freeze(0, 1, vec![1.0], 1.1, 0.9, 0.05);
        let tree = build_sticky_tree(&cfg).unwrap();
        assert_eq!(check_tree_sticky(&tree), (true, None));
    }

    #[test]
    fn strong_stickiness_at_root_reduces_to_plain_stickiness() {
        let cfg = TreeGenConfig::binomial_freeze(3, 1, vec![1.0], 1.1, 0.9, 0.2);
        let tree = build_sticky_tree(&cfg).unwrap();
        let stopping = vec![0usize; tree.num_scenarios()];
        let report = check_strong_stickiness(&tree, &stopping, |_| 0.05).unwrap();
        assert!(report.passed());
        assert_eq!(report.cells.len(), 1);
        // The all-freeze continuation alone contributes 0.2^3.
        assert!(report.cells[0].probability >= 0.2f64.powi(3) - 1e-12);
    }

    #[test]
    fn strong_stickiness_zero_radius_is_vacuous() {
        let cfg = TreeGenConfig::binomial_freeze(2, 1, vec![1.0], 1.1, 0.9, 0.2);
        let tree = build_sticky_tree(&cfg).unwrap();
        let stopping = vec![0usize; tree.num_scenarios()];
        let report = check_strong_stickiness(&tree, &stopping, |_| 0.0).unwrap();
        assert!(report.passed());
        assert!(report.cells.is_empty());
    }

    #[test]
    fn strong_stickiness_rejects_non_measurable_rule() {
        let cfg = TreeGenConfig::binomial_freeze(2, 1, vec![1.0], 1.1, 0.9, 0.2);
        let tree = build_sticky_tree(&cfg).unwrap();
        // Stop scenario 0 at index 1 but its siblings through the same
        // depth-1 node at index 2: not a stopping time.
        let mut stopping = vec![2usize; tree.num_scenarios()];
        stopping[0] = 1;
        assert!(check_strong_stickiness(&tree, &stopping, |_| 0.1).is_err());
    }

    #[test]
    fn band_exit_stopping_with_bucket_radius_has_positive_cells() {
        // The stopped check at the first band exit with radius
        // delta / (2 (2d+1)) is exactly the freeze-from-the-midpoint event
        // the bucket construction relies on.
        let cfg = TreeGenConfig::ladder(4, 1, vec![1.0], 0.0012, 0.3);
        let tree = build_sticky_tree(&cfg).unwrap();
        let eps = 0.0122722;
        let sk = build_skeleton(&tree, eps, SkeletonOptions::default()).unwrap();
        let stopping: Vec<usize> = (0..tree.num_scenarios())
            .map(|s| sk.exit_times[s][1.min(sk.exit_times[s].len() - 1)])
            .collect();
        let root_radius = sk.levels[0][0].radius;
        let report =
            check_strong_stickiness(&tree, &stopping, |_| root_radius / (2.0 * 3.0)).unwrap();
        assert!(report.passed());
        assert!(!report.cells.is_empty());
    }

    #[test]
    fn class_probabilities_positive_on_ladder_tree() {
        let cfg = TreeGenConfig::ladder(4, 1, vec![1.0], 0.0012, 0.3);
        let tree = build_sticky_tree(&cfg).unwrap();
        let sk = build_skeleton(&tree, 0.0122722, SkeletonOptions::default()).unwrap();
        let report = check_class_probabilities(&sk);
        assert!(report.passed(), "{:?}", report.failures);
        assert!(!report.cells.is_empty());
    }

    #[test]
    fn class_probabilities_flag_freeze_only_at_root() {
        // Freeze exists only at the root; deeper nodes move by huge factors
        // every step. Deeper anchors then have no small-deviation
        // continuations at all, so bucket 1 (and others) vanish there.
        let mut nodes = vec![TreeNode {
            id: 0,
            time_index: 0,
            price: vec![1.0],
            children: Vec::new(),
        }];
        // Root: two moves + freeze.
        let mut frontier: Vec<usize> = Vec::new();
        for (f, q) in [(1.5, 0.4), (0.5, 0.4), (1.0, 0.2)] {
            let cid = nodes.len();
            nodes.push(TreeNode {
                id: cid,
                time_index: 1,
                price: vec![f],
                children: Vec::new(),
            });
            nodes[0].children.push((cid, q));
            frontier.push(cid);
        }
        // Depth 1 -> 2: moves only.
        for depth in 1..3 {
            let mut next = Vec::new();
            for &id in &frontier {
                let price = nodes[id].price[0];
                for (f, q) in [(1.5, 0.5), (0.5, 0.5)] {
                    let cid = nodes.len();
                    nodes.push(TreeNode {
                        id: cid,
                        time_index: depth + 1,
                        price: vec![price * f],
                        children: Vec::new(),
                    });
                    nodes[id].children.push((cid, q));
                    next.push(cid);
                }
            }
            frontier = next;
        }
        let tree = crate::model::ScenarioTree::new(nodes, 0).unwrap();
        let sk = build_skeleton(&tree, 0.05, SkeletonOptions::default()).unwrap();
        let report = check_class_probabilities(&sk);
        assert!(!report.passed());
    }

    #[test]
    fn estimate_is_one_for_huge_delta_and_constant_paths() {
        let cfg = SimConfig::new(16, 200, 1.0, 1, 5);
        let ens = gen_brownian_raw(&cfg).unwrap();
        let view = PathsView::Reals(&ens);
        let report = estimate_stickiness(&view, 0, 1e9, BundleRule::Global).unwrap();
        assert_eq!(report.cells[0].probability, Some(1.0));

        let times: Vec<f64> = (0..8).map(|t| t as f64).collect();
        let flat = PricePath::new(times.clone(), vec![vec![1.0]; 8]).unwrap();
        let ens = PathEnsemble::new(vec![flat; 10], 0).unwrap();
        let view = PathsView::Prices(&ens);
        let report = estimate_stickiness(&view, 2, 1e-6, BundleRule::Global).unwrap();
        assert_eq!(report.cells[0].probability, Some(1.0));
    }

    #[test]
    fn estimate_is_monotone_in_delta() {
        let cfg = SimConfig::new(64, 4000, 1.0, 1, 9);
        let ens = gen_brownian_raw(&cfg).unwrap();
        let view = PathsView::Reals(&ens);
        let mut last = 0.0;
        for delta in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let p = estimate_stickiness(&view, 0, delta, BundleRule::Global)
                .unwrap()
                .cells[0]
                .probability
                .unwrap();
            assert!(p >= last - 1e-15, "p({delta}) = {p} < {last}");
            last = p;
        }
    }

    #[test]
    fn exact_history_bundling_reproduces_tree_probabilities() {
        let cfg = TreeGenConfig::binomial_freeze(3, 1, vec![1.0], 1.15, 0.85, 0.25);
        let tree = build_sticky_tree(&cfg).unwrap();
        let ens = tree.to_weighted_ensemble().unwrap();
        let view = PathsView::Prices(&ens);
        let t = 1;
        let delta = 0.2;
        let exact = tree_stickiness_probs(&tree, t, delta).unwrap();
        let report = estimate_stickiness(&view, t, delta, BundleRule::ExactHistory).unwrap();
        // Bundles correspond to depth-t nodes; match them up by price value.
        assert_eq!(report.cells.len(), exact.len());
        let mut est: Vec<f64> = report
            .cells
            .iter()
            .map(|c| c.probability.unwrap())
            .collect();
        let mut exa: Vec<f64> = exact.iter().map(|(_, p)| *p).collect();
        est.sort_by(|a, b| a.partial_cmp(b).unwrap());
        exa.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (e, x) in est.iter().zip(&exa) {
            assert!((e - x).abs() <= 1e-12, "{e} vs {x}");
        }
    }
}
