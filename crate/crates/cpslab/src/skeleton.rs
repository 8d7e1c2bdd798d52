//! The band-exit skeleton: per-scenario stopping indices at which some
//! coordinate ratio leaves the open band `(1/(1+eps), 1+eps)`, the
//! conditional support maximum of future deviations, the perturbation radius,
//! right-open deviation buckets, and the compensated discrete process X built
//! from the increments.
//!
//! On a scenario tree the information state at a stopping index is exactly
//! the tree node occupied there, so skeleton nodes group the leaves below
//! each anchor node. On bare path ensembles the conditional support maximum
//! is not observable from a single path; `build_path_skeleton` substitutes a
//! caller-chosen plug-in rule.

use crate::error::{Error, Result};
use crate::model::{max_norm_diff, PathEnsemble, PricePath, ScenarioTree};
use std::collections::BTreeMap;

/// Options for skeleton construction.
#[derive(Debug, Clone, Copy)]
pub struct SkeletonOptions {
    /// When false, increments consist of the band-exit moves only; the
    /// bucket-indexed perturbation term is dropped. Used to demonstrate why
    /// the support condition then fails on monotone inputs.
    pub perturbation: bool,
}

impl Default for SkeletonOptions {
    fn default() -> Self {
        Self { perturbation: true }
    }
}

/// Per-scenario, per-level record of one skeleton membership.
#[derive(Debug, Clone)]
pub struct ScenarioRecord {
    pub scenario: usize,
    /// Stopping index anchoring this level.
    pub tau_prev: usize,
    /// Next stopping index (terminal index when the scenario never exits
    /// again).
    pub tau_next: usize,
    /// Sup over the remaining horizon of the max-norm deviation from the
    /// anchor price.
    pub max_dev: f64,
    /// Deviation bucket in `1..=2d+1`, when the scenario deviates less than
    /// the radius and the node can move at all.
    pub class: Option<usize>,
    /// Increment of the compensated process at this level.
    pub increment: Vec<f64>,
}

/// One skeleton node: the scenarios sharing history up to a common stopping
/// index, anchored at a tree node.
#[derive(Debug, Clone)]
pub struct SkeletonNode {
    pub level: usize,
    pub anchor_node: usize,
    pub anchor_time: usize,
    pub anchor_price: Vec<f64>,
    /// Unconditional probability mass of the node.
    pub prob: f64,
    /// Maximum of `max_dev` over members: the conditional support maximum of
    /// the future deviation.
    pub support_max: f64,
    /// Perturbation radius: `min(eps/(1+eps) * anchor_price_i, support_max)`.
    pub radius: f64,
    pub members: Vec<ScenarioRecord>,
}

/// The full decomposition over a scenario tree.
#[derive(Debug, Clone)]
pub struct SkeletonDecomposition {
    pub eps_working: f64,
    pub dim: usize,
    /// Terminal grid index N.
    pub terminal_index: usize,
    /// Levels 1..=K; `levels[n-1]` holds the level-n nodes in deterministic
    /// anchor order. K is the first level at which every scenario has
    /// reached the terminal index.
    pub levels: Vec<Vec<SkeletonNode>>,
    /// Per-scenario stopping chains `tau_0 = 0 <= tau_1 <= ... <= N`,
    /// padded with N through level K.
    pub exit_times: Vec<Vec<usize>>,
    /// Compensated process per scenario: `x[s][n]` for levels `0..=K`,
    /// starting at the root price.
    pub x: Vec<Vec<Vec<f64>>>,
    /// Increment per scenario and level: `increments[s][n-1]` is the level-n
    /// increment.
    pub increments: Vec<Vec<Vec<f64>>>,
    /// `node_of[n-1][s]`: index into `levels[n-1]` of the node containing
    /// scenario s.
    pub node_of: Vec<Vec<usize>>,
    /// Tree node ids visited by each scenario, indexed by grid time.
    pub scenario_paths: Vec<Vec<usize>>,
    pub scenario_probs: Vec<f64>,
    /// Largest one-step relative move factor on the tree (>= 1); stopping
    /// indices may overshoot a band edge by at most this factor.
    pub overshoot: f64,
    pub perturbation: bool,
}

impl SkeletonDecomposition {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn num_scenarios(&self) -> usize {
        self.scenario_probs.len()
    }

    /// Terminal value of the compensated process for a scenario.
    pub fn x_terminal(&self, scenario: usize) -> &[f64] {
        self.x[scenario].last().unwrap()
    }

    /// Stopping index `tau_n` for a scenario, padded with the terminal index.
    pub fn tau(&self, scenario: usize, n: usize) -> usize {
        let chain = &self.exit_times[scenario];
        chain[n.min(chain.len() - 1)]
    }
}

/// Sup over `u in [from_index, N]` of the max-norm deviation of the values
/// from their position at `from_index`; zero at the terminal index.
pub fn running_sup_deviation(path: &PricePath, from_index: usize) -> Result<f64> {
    if from_index > path.last_index() {
        return Err(Error::Index(format!(
            "from_index {from_index} beyond terminal index {}",
            path.last_index()
        )));
    }
    sup_deviation_values(path.values(), from_index)
}

fn sup_deviation_values(values: &[Vec<f64>], from: usize) -> Result<f64> {
    let anchor = &values[from];
    let mut m = 0.0f64;
    for v in &values[from..] {
        m = m.max(max_norm_diff(v, anchor)?);
    }
    Ok(m)
}

/// First grid index `> from` at which some coordinate ratio to the anchor
/// leaves the open band, or the terminal index when no exit occurs.
fn first_exit(values: &[Vec<f64>], from: usize, eps: f64) -> usize {
    let n = values.len() - 1;
    let lo = 1.0 / (1.0 + eps);
    let hi = 1.0 + eps;
    let anchor = &values[from];
    for t in from + 1..=n {
        let exits = values[t]
            .iter()
            .zip(anchor)
            .any(|(v, a)| !(v / a > lo && v / a < hi));
        if exits {
            return t;
        }
    }
    n
}

/// The chain of band-exit stopping indices of a value sequence:
/// `0 = tau_0 <= tau_1 <= ... <= tau_k = N`, where each entry is the first
/// index at which some coordinate ratio to the previous stopping value exits
/// the open band, capped at the terminal index. Grid monotonicity guarantees
/// termination.
pub fn exit_times_values(values: &[Vec<f64>], eps: f64) -> Vec<usize> {
    let n = values.len() - 1;
    let mut chain = vec![0usize];
    while *chain.last().unwrap() < n {
        let a = *chain.last().unwrap();
        chain.push(first_exit(values, a, eps));
    }
    chain
}

/// Stopping chain for a price path.
pub fn exit_times(path: &PricePath, eps: f64) -> Vec<usize> {
    exit_times_values(path.values(), eps)
}

/// Smallest stopping index strictly greater than `t`; the terminal index
/// when the chain offers nothing earlier. Errors when `t` is at or beyond
/// the terminal index.
pub fn rho_after(chain: &[usize], t: usize) -> Result<usize> {
    let n = *chain.last().ok_or_else(|| Error::Index("empty stopping chain".into()))?;
    if t >= n {
        return Err(Error::Index(format!(
            "rho is undefined at or beyond the terminal index ({t} >= {n})"
        )));
    }
    Ok(chain.iter().copied().find(|&tau| tau > t).unwrap_or(n))
}

/// Conditional support maximum at a tree node: the maximum over the leaves
/// below `anchor_node` of the running sup deviation from the anchor. On a
/// finite tree every continuation has positive probability, so the sup of
/// the conditional support is a max over scenarios.
pub fn support_max(tree: &ScenarioTree, anchor_node: usize) -> Result<f64> {
    let anchor = &tree.node(anchor_node).price;
    let mut stack = vec![anchor_node];
    let mut m = 0.0f64;
    let mut seen_leaf = false;
    while let Some(id) = stack.pop() {
        let node = tree.node(id);
        m = m.max(max_norm_diff(&node.price, anchor)?);
        if node.children.is_empty() {
            seen_leaf = true;
        }
        for &(c, _) in &node.children {
            stack.push(c);
        }
    }
    if !seen_leaf {
        return Err(Error::Internal("anchor node has no descendant leaves".into()));
    }
    Ok(m)
}

/// Perturbation radius `min_i(eps/(1+eps) * anchor_i, support_max)`; zero
/// exactly when the support maximum is zero.
pub fn compute_delta(anchor_price: &[f64], support_max: f64, eps: f64) -> Result<f64> {
    if anchor_price.is_empty() || anchor_price.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::Config(
            "anchor price must be strictly positive".into(),
        ));
    }
    if !(support_max >= 0.0) {
        return Err(Error::Config("support_max must be nonnegative".into()));
    }
    let frac = eps / (1.0 + eps);
    let mut delta = support_max;
    for p in anchor_price {
        delta = delta.min(frac * p);
    }
    Ok(delta)
}

/// Assigns a deviation to its right-open bucket `[ (i-1) r / (2d+1),
/// i r / (2d+1) )` for `i in 1..=2d+1`. Deviations at or above the radius,
/// and nodes that cannot move at all (`support_max = 0`), are unclassified.
/// A classified scenario must run to the horizon; anything else is an
/// internal inconsistency in the inputs.
pub fn classify_deviation(
    max_dev: f64,
    radius: f64,
    d: usize,
    reaches_horizon: bool,
    support_max: f64,
) -> Result<Option<usize>> {
    if !(max_dev >= 0.0) || !(radius >= 0.0) {
        return Err(Error::Config("negative deviation or radius".into()));
    }
    if !(support_max > 0.0) || max_dev >= radius {
        return Ok(None);
    }
    if !reaches_horizon {
        return Err(Error::Internal(format!(
            "deviation {max_dev} below radius {radius} on a scenario that exits before the horizon"
        )));
    }
    let buckets = 2 * d + 1;
    let width = radius / buckets as f64;
    let idx = (max_dev / width).floor() as usize + 1;
    Ok(Some(idx.min(buckets)))
}

/// Increment of the compensated process: the realized move for scenarios
/// that exit strictly before the horizon; otherwise the bucket-indexed
/// perturbation, `+radius e_i` on even buckets `2i`, `-radius e_i` on odd
/// buckets `2i+1`, zero on bucket 1 and unclassified scenarios.
pub fn increment_value(
    d: usize,
    exit_move: Option<&[f64]>,
    class: Option<usize>,
    radius: f64,
) -> Vec<f64> {
    if let Some(diff) = exit_move {
        return diff.to_vec();
    }
    let mut xi = vec![0.0; d];
    match class {
        None | Some(1) => {}
        Some(c) => {
            if c % 2 == 0 {
                xi[c / 2 - 1] = radius;
            } else {
                xi[(c - 1) / 2 - 1] = -radius;
            }
        }
    }
    xi
}

/// Builds the full decomposition of a scenario tree at the given working
/// spread: stopping chains, level-by-level anchor grouping, support maxima,
/// radii, buckets, increments, and the compensated process.
pub fn build_skeleton(
    tree: &ScenarioTree,
    eps_working: f64,
    options: SkeletonOptions,
) -> Result<SkeletonDecomposition> {
    if !(eps_working > 0.0) {
        return Err(Error::Config(format!(
            "eps_working must be positive, got {eps_working}"
        )));
    }
    let d = tree.dim();
    let n_term = tree.depth();
    let n_scen = tree.num_scenarios();
    let scenario_paths: Vec<Vec<usize>> =
        (0..n_scen).map(|s| tree.scenario_nodes(s)).collect();
    let scenario_probs = tree.scenario_probs();

    let values_of = |s: usize| -> Vec<Vec<f64>> {
        scenario_paths[s]
            .iter()
            .map(|&id| tree.node(id).price.clone())
            .collect()
    };

    let mut exit_chains: Vec<Vec<usize>> = Vec::with_capacity(n_scen);
    for s in 0..n_scen {
        exit_chains.push(exit_times_values(&values_of(s), eps_working));
    }
    let k_levels = exit_chains.iter().map(|c| c.len() - 1).max().unwrap_or(0);

    let tau = |s: usize, n: usize| -> usize {
        let c = &exit_chains[s];
        c[n.min(c.len() - 1)]
    };

    let root_price = tree.node(tree.root()).price.clone();
    let mut x: Vec<Vec<Vec<f64>>> = (0..n_scen).map(|_| vec![root_price.clone()]).collect();
    let mut increments: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_scen];
    let mut levels: Vec<Vec<SkeletonNode>> = Vec::with_capacity(k_levels);
    let mut node_of: Vec<Vec<usize>> = Vec::with_capacity(k_levels);

    for n in 1..=k_levels {
        // Group scenarios by the tree node occupied at tau_{n-1}; on a tree
        // that node determines the whole history, hence the information set.
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for s in 0..n_scen {
            groups.entry(scenario_paths[s][tau(s, n - 1)]).or_default().push(s);
        }
        let mut level_nodes = Vec::with_capacity(groups.len());
        let mut assignment = vec![usize::MAX; n_scen];
        for (anchor_node, members) in groups {
            let anchor_time = tree.node(anchor_node).time_index;
            let anchor_price = tree.node(anchor_node).price.clone();
            let mut prob = 0.0;
            let mut devs = Vec::with_capacity(members.len());
            for &s in &members {
                debug_assert_eq!(tau(s, n - 1), anchor_time);
                let vals = values_of(s);
                devs.push(sup_deviation_values(&vals, anchor_time)?);
                prob += scenario_probs[s];
            }
            let s_bar = devs.iter().fold(0.0f64, |m, v| m.max(*v));
            let radius = compute_delta(&anchor_price, s_bar, eps_working)?;
            let mut records = Vec::with_capacity(members.len());
            for (&s, &max_dev) in members.iter().zip(&devs) {
                let tau_next = tau(s, n);
                let reaches_horizon = tau_next == n_term;
                let class =
                    classify_deviation(max_dev, radius, d, reaches_horizon, s_bar)?;
                let exit_move: Option<Vec<f64>> = if tau_next < n_term {
                    let exit_price = &tree.node(scenario_paths[s][tau_next]).price;
                    Some(
                        exit_price
                            .iter()
                            .zip(&anchor_price)
                            .map(|(a, b)| a - b)
                            .collect(),
                    )
                } else {
                    None
                };
                let class_used = if options.perturbation { class } else { None };
                let incr = increment_value(d, exit_move.as_deref(), class_used, radius);
                let prev = x[s].last().unwrap().clone();
                let next: Vec<f64> = prev.iter().zip(&incr).map(|(a, b)| a + b).collect();
                x[s].push(next);
                increments[s].push(incr.clone());
                records.push(ScenarioRecord {
                    scenario: s,
                    tau_prev: anchor_time,
                    tau_next,
                    max_dev,
                    class,
                    increment: incr,
                });
            }
            // The compensated process before this level is measurable at
            // the anchor: identical across members.
            let x_prev = &x[records[0].scenario][n - 1];
            for r in &records {
                if max_norm_diff(&x[r.scenario][n - 1], x_prev)? > 1e-12 {
                    return Err(Error::Internal(format!(
                        "compensated process not constant on the level-{n} node anchored at {anchor_node}"
                    )));
                }
            }
            let idx = level_nodes.len();
            for r in &records {
                assignment[r.scenario] = idx;
            }
            level_nodes.push(SkeletonNode {
                level: n,
                anchor_node,
                anchor_time,
                anchor_price,
                prob,
                support_max: s_bar,
                radius,
                members: records,
            });
        }
        levels.push(level_nodes);
        node_of.push(assignment);
    }

    Ok(SkeletonDecomposition {
        eps_working,
        dim: d,
        terminal_index: n_term,
        levels,
        exit_times: exit_chains,
        x,
        increments,
        node_of,
        scenario_paths,
        scenario_probs,
        overshoot: tree.overshoot_factor(),
        perturbation: options.perturbation,
    })
}

/// Plug-in rule for the conditional support maximum on bare path ensembles.
#[derive(Debug, Clone, Copy)]
pub enum SupportMaxRule {
    /// The path's own future deviation: classification never fires and the
    /// skeleton consists of band-exit moves only.
    OwnPath,
    /// A caller-supplied constant.
    Fixed(f64),
    /// Maximum future deviation over the whole ensemble at the anchor time
    /// (suitable for processes with independent increments).
    Global,
    /// Maximum over paths within the given sup-distance of this path's
    /// history up to the anchor time.
    Radius(f64),
}

/// Per-level record of a single path's skeleton.
#[derive(Debug, Clone)]
pub struct PathSkeletonLevel {
    pub anchor_index: usize,
    pub anchor_price: Vec<f64>,
    pub support_max: f64,
    pub radius: f64,
    pub max_dev: f64,
    pub class: Option<usize>,
    pub increment: Vec<f64>,
}

/// Skeleton of a single path within an ensemble.
#[derive(Debug, Clone)]
pub struct PathSkeleton {
    pub exit_times: Vec<usize>,
    pub levels: Vec<PathSkeletonLevel>,
    /// Compensated process at levels `0..=K`.
    pub x: Vec<Vec<f64>>,
    /// Largest one-step relative move factor along this path.
    pub overshoot: f64,
}

fn path_overshoot(path: &PricePath) -> f64 {
    let mut g = 1.0f64;
    for t in 1..=path.last_index() {
        for (a, b) in path.at(t - 1).iter().zip(path.at(t)) {
            let r = b / a;
            g = g.max(r.max(1.0 / r));
        }
    }
    g
}

/// Builds per-path skeletons for an ensemble under the chosen support-max
/// plug-in rule.
pub fn build_path_skeletons(
    ensemble: &PathEnsemble,
    eps_working: f64,
    rule: SupportMaxRule,
) -> Result<Vec<PathSkeleton>> {
    if !(eps_working > 0.0) {
        return Err(Error::Config("eps_working must be positive".into()));
    }
    let d = ensemble.dim();
    let n_term = ensemble.last_index();
    // Global rule: cache the ensemble deviation maximum per anchor time on
    // demand.
    let mut global_cache: BTreeMap<usize, f64> = BTreeMap::new();
    let mut out = Vec::with_capacity(ensemble.len());
    for (j, path) in ensemble.paths().iter().enumerate() {
        let chain = exit_times(path, eps_working);
        let mut x = vec![path.at(0).to_vec()];
        let mut levels = Vec::with_capacity(chain.len() - 1);
        for n in 1..chain.len() {
            let anchor_index = chain[n - 1];
            let anchor_price = path.at(anchor_index).to_vec();
            let max_dev = running_sup_deviation(path, anchor_index)?;
            let s_bar = match rule {
                SupportMaxRule::OwnPath => max_dev,
                SupportMaxRule::Fixed(v) => v,
                SupportMaxRule::Global => *global_cache.entry(anchor_index).or_insert_with(|| {
                    ensemble
                        .paths()
                        .iter()
                        .map(|p| sup_deviation_values(p.values(), anchor_index).unwrap())
                        .fold(0.0f64, f64::max)
                }),
                SupportMaxRule::Radius(r) => {
                    let mut m = 0.0f64;
                    for other in ensemble.paths() {
                        let mut close = true;
                        for t in 0..=anchor_index {
                            if max_norm_diff(other.at(t), path.at(t))? > r {
                                close = false;
                                break;
                            }
                        }
                        if close {
                            m = m.max(sup_deviation_values(other.values(), anchor_index)?);
                        }
                    }
                    m
                }
            };
            let radius = compute_delta(&anchor_price, s_bar, eps_working)?;
            let tau_next = chain[n];
            let reaches_horizon = tau_next == n_term;
            let class = classify_deviation(max_dev, radius, d, reaches_horizon, s_bar)?;
            let exit_move: Option<Vec<f64>> = if tau_next < n_term {
                Some(
                    path.at(tau_next)
                        .iter()
                        .zip(&anchor_price)
                        .map(|(a, b)| a - b)
                        .collect(),
                )
            } else {
                None
            };
            let incr = increment_value(d, exit_move.as_deref(), class, radius);
            let next: Vec<f64> = x
                .last()
                .unwrap()
                .iter()
                .zip(&incr)
                .map(|(a, b)| a + b)
                .collect();
            x.push(next);
            levels.push(PathSkeletonLevel {
                anchor_index,
                anchor_price,
                support_max: s_bar,
                radius,
                max_dev,
                class,
                increment: incr,
            });
        }
        out.push(PathSkeleton {
            exit_times: chain,
            levels,
            x,
            overshoot: path_overshoot(path),
        });
        let _ = j;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PricePath;
    use crate::simulate::{build_sticky_tree, TreeGenConfig};

    fn path1(values: &[f64]) -> PricePath {
        let times: Vec<f64> = (0..values.len()).map(|t| t as f64).collect();
        PricePath::new(times, values.iter().map(|v| vec![*v]).collect()).unwrap()
    }

    #[test]
    fn sup_deviation_examples() {
        let p = path1(&[1.0, 1.0, 1.0]);
        assert_eq!(running_sup_deviation(&p, 0).unwrap(), 0.0);
        assert_eq!(running_sup_deviation(&p, 2).unwrap(), 0.0);
        let p = path1(&[1.0, 1.3, 0.8]);
        assert!((running_sup_deviation(&p, 0).unwrap() - 0.3).abs() < 1e-15);
        assert!(running_sup_deviation(&p, 3).is_err());
    }

    #[test]
    fn exit_times_examples() {
        // Band (0.5, 2) at eps = 1: the ratio 2.1 exits at index 2.
        let p = path1(&[1.0, 1.5, 2.1, 1.0]);
        let chain = exit_times(&p, 1.0);
        assert_eq!(chain[1], 2);
        // Constant path never exits.
        let p = path1(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(exit_times(&p, 1.0), vec![0, 3]);
        // Second coordinate exits alone at step 3.
        let times: Vec<f64> = (0..4).map(|t| t as f64).collect();
        let vals = vec![
            vec![1.0, 1.0],
            vec![1.01, 1.02],
            vec![1.02, 1.05],
            vec![1.03, 1.20],
        ];
        let p = PricePath::new(times, vals).unwrap();
        let chain = exit_times(&p, 0.1);
        assert_eq!(chain[1], 3);
    }

    #[test]
    fn rho_after_examples() {
        assert_eq!(rho_after(&[0, 3, 7, 9], 3).unwrap(), 7);
        assert_eq!(rho_after(&[0, 9], 0).unwrap(), 9);
        assert_eq!(rho_after(&[0, 2, 5, 9], 1).unwrap(), 2);
        assert!(rho_after(&[0, 9], 9).is_err());
    }

    #[test]
    fn delta_examples() {
        let d = compute_delta(&[100.0, 50.0], 2.0, 0.1).unwrap();
        assert!((d - 2.0).abs() < 1e-15);
        assert_eq!(compute_delta(&[10.0], 0.0, 0.5).unwrap(), 0.0);
        let d = compute_delta(&[10.0], 100.0, 1.0).unwrap();
        assert!((d - 5.0).abs() < 1e-15);
    }

    #[test]
    fn classify_examples() {
        // d = 1: three right-open buckets of width delta/3.
        assert_eq!(
            classify_deviation(0.5, 3.0, 1, true, 1.0).unwrap(),
            Some(1)
        );
        assert_eq!(
            classify_deviation(1.2, 3.0, 1, true, 1.0).unwrap(),
            Some(2)
        );
        assert_eq!(
            classify_deviation(2.9, 3.0, 1, true, 1.0).unwrap(),
            Some(3)
        );
        // Boundary deviations go to the upper bucket; the radius itself is
        // unclassified.
        assert_eq!(
            classify_deviation(1.0, 3.0, 1, true, 1.0).unwrap(),
            Some(2)
        );
        assert_eq!(classify_deviation(3.0, 3.0, 1, true, 1.0).unwrap(), None);
        // Zero support max is never classified.
        assert_eq!(classify_deviation(0.0, 0.0, 1, true, 0.0).unwrap(), None);
        // Classified but exiting early: inconsistent inputs.
        assert!(classify_deviation(0.5, 3.0, 1, false, 1.0).is_err());
    }

    #[test]
    fn increment_examples() {
        assert_eq!(
            increment_value(1, Some(&[1.1]), None, 0.0),
            vec![1.1]
        );
        assert_eq!(
            increment_value(2, None, Some(2), 0.5),
            vec![0.5, 0.0]
        );
        assert_eq!(
            increment_value(2, None, Some(5), 0.5),
            vec![0.0, -0.5]
        );
        assert_eq!(increment_value(2, None, Some(1), 0.5), vec![0.0, 0.0]);
        assert_eq!(increment_value(1, None, None, 0.5), vec![0.0]);
    }

    #[test]
    fn depth_zero_tree_has_no_levels() {
        let cfg = TreeGenConfig::binomial_freeze(0, 1, vec![1.0], 1.1, 0.9, 0.2);
        let tree = build_sticky_tree(&cfg).unwrap();
        let sk = build_skeleton(&tree, 0.05, SkeletonOptions::default()).unwrap();
        assert_eq!(sk.num_levels(), 0);
        assert_eq!(sk.x[0], vec![vec![1.0]]);
    }

    #[test]
    fn depth_two_exit_structure() {
        // Moves far outside the band exit at the first move; the freeze
        // branch carries the scenario to the horizon.
        let cfg = TreeGenConfig::binomial_freeze(2, 1, vec![1.0], 1.5, 0.5, 0.2);
        let tree = build_sticky_tree(&cfg).unwrap();
        let sk = build_skeleton(&tree, 0.05, SkeletonOptions::default()).unwrap();
        let root_level = &sk.levels[0];
        assert_eq!(root_level.len(), 1);
        for r in &root_level[0].members {
            let first_step = sk.scenario_paths[r.scenario][1];
            let moved = (tree.node(first_step).price[0] - 1.0).abs() > 1e-12;
            if moved {
                assert_eq!(r.tau_next, 1);
                assert!((r.increment[0] - (tree.node(first_step).price[0] - 1.0)).abs() < 1e-12);
            } else {
                // Frozen first step: the next exit is at the horizon index.
                assert_eq!(r.tau_next, 2);
            }
        }
    }

    #[test]
    fn absorption_and_band_bound_on_sticky_tree() {
        let cfg = TreeGenConfig::binomial_freeze(3, 1, vec![1.0], 1.03, 1.0 / 1.03, 0.25);
        let tree = build_sticky_tree(&cfg).unwrap();
        let eps = 0.0466351; // fourth root of 1.2
        let sk = build_skeleton(&tree, eps, SkeletonOptions::default()).unwrap();
        // Once an increment is zero it stays zero, and the last level is
        // fully absorbed.
        for s in 0..sk.num_scenarios() {
            let mut seen_zero = false;
            for inc in &sk.increments[s] {
                let zero = inc.iter().all(|v| *v == 0.0);
                if seen_zero {
                    assert!(zero);
                }
                seen_zero = seen_zero || zero;
            }
            assert_eq!(*sk.exit_times[s].last().unwrap(), 3);
        }
        // Consecutive stopping ratios stay inside the band widened by the
        // one-step overshoot factor.
        let lo = 1.0 / ((1.0 + eps) * sk.overshoot);
        let hi = (1.0 + eps) * sk.overshoot;
        for s in 0..sk.num_scenarios() {
            let chain = &sk.exit_times[s];
            for w in chain.windows(2) {
                let a = &tree.node(sk.scenario_paths[s][w[0]]).price;
                let b = &tree.node(sk.scenario_paths[s][w[1]]).price;
                for (x, y) in b.iter().zip(a) {
                    let r = x / y;
                    assert!(r >= lo - 1e-12 && r <= hi + 1e-12, "ratio {r}");
                }
            }
        }
        // Zero support max forces zero increments.
        for level in &sk.levels {
            for node in level {
                if node.support_max == 0.0 {
                    for m in &node.members {
                        assert!(m.increment.iter().all(|v| *v == 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn partition_of_horizon_scenarios_on_moving_nodes() {
        let cfg = TreeGenConfig::ladder(4, 1, vec![1.0], 0.001, 0.3);
        let tree = build_sticky_tree(&cfg).unwrap();
        let sk = build_skeleton(&tree, 0.0122722, SkeletonOptions::default()).unwrap();
        for level in &sk.levels {
            for node in level {
                if node.support_max > 0.0 {
                    for m in &node.members {
                        if m.tau_next == sk.terminal_index {
                            // Either bucketed below the radius or at/above it.
                            match m.class {
                                Some(c) => {
                                    assert!(m.max_dev < node.radius);
                                    assert!(c >= 1 && c <= 3);
                                }
                                None => assert!(m.max_dev >= node.radius),
                            }
                        } else {
                            assert_eq!(m.class, None);
                        }
                    }
                }
            }
        }
    }
}
