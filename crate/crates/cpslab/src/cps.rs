//! Shadow price construction and band verification.
//!
//! The terminal compensated value of each scenario is propagated backwards
//! through the tree under the reweighted measure, giving a price process
//! defined at every node. Three band checks connect it to the original
//! prices: the compensated process against prices at stopping indices
//! (second power of the working spread), prices at the next stopping index
//! against current prices (second power, widened by the recorded one-step
//! overshoot), and the shadow price against prices everywhere (fourth
//! power). Passing the fourth-power check at the working spread is exactly
//! the target-spread band, by the choice of the working spread.

use serde::Serialize;

use crate::emm::{
    assemble_measure, check_conditions, solve_all_nodes, verify_martingale, ConditionReport,
    MartingaleReport, MeasureQ,
};
use crate::error::{Error, Result};
use crate::model::{validate_tree, EpsilonParams, ScenarioTree, Violation};
use crate::skeleton::{build_skeleton, rho_after, SkeletonDecomposition, SkeletonOptions};

/// Slack applied to every band inequality: strict bounds are checked as
/// non-strict with this much room for float boundaries.
pub const BAND_SLACK: f64 = 1e-9;

/// Tolerance for the optional-sampling consistency of the shadow price at
/// stopping nodes.
pub const SAMPLING_TOL: f64 = 1e-9;

/// Tolerance for the backward-induction recomputation of the shadow price.
pub const RECOMPUTE_TOL: f64 = 1e-10;

/// Working spread for a target: the fourth root of `1 + target`, minus one,
/// so that four band powers at the working spread compose to one target
/// band. Errors on non-positive targets.
pub fn adjust_epsilon(eps_target: f64) -> Result<f64> {
    if !(eps_target > 0.0) {
        return Err(Error::Config(format!(
            "eps_target must be positive, got {eps_target}"
        )));
    }
    Ok((1.0 + eps_target).powf(0.25) - 1.0)
}

/// One band violation.
#[derive(Debug, Clone, Serialize)]
pub struct BandFailure {
    /// Where the ratio was taken: a tree node, or a scenario at a level or
    /// grid index.
    pub location: String,
    pub asset: usize,
    pub ratio: f64,
}

/// Result of one band check: observed ratio range, allowed range, failures.
#[derive(Debug, Clone, Serialize)]
pub struct BandCheck {
    pub bound_low: f64,
    pub bound_high: f64,
    pub worst_low: f64,
    pub worst_high: f64,
    pub failures: Vec<BandFailure>,
}

impl BandCheck {
    fn new(bound_low: f64, bound_high: f64) -> Self {
        Self {
            bound_low,
            bound_high,
            worst_low: f64::INFINITY,
            worst_high: 0.0,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, ratio: f64, asset: usize, location: impl Fn() -> String) {
        self.worst_low = self.worst_low.min(ratio);
        self.worst_high = self.worst_high.max(ratio);
        if ratio < self.bound_low - BAND_SLACK || ratio > self.bound_high + BAND_SLACK {
            self.failures.push(BandFailure {
                location: location(),
                asset,
                ratio,
            });
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Largest multiplicative deviation of an observed ratio from one.
    pub fn worst_factor(&self) -> f64 {
        let lo = if self.worst_low.is_finite() && self.worst_low > 0.0 {
            1.0 / self.worst_low
        } else {
            1.0
        };
        lo.max(self.worst_high).max(1.0)
    }
}

/// The assembled construction: shadow price per tree node plus every
/// diagnostic the verification produces.
#[derive(Debug, Clone)]
pub struct CpsResult {
    pub eps: EpsilonParams,
    /// Shadow price vector at each tree node, indexed by node id.
    pub shadow_price: Vec<Vec<f64>>,
    /// Compensated process against prices at its own stopping indices.
    pub band_compensated: BandCheck,
    /// Prices at the next stopping index against current prices.
    pub band_next_stop: BandCheck,
    /// Shadow price against prices at every tree node (fourth power).
    pub band_shadow: BandCheck,
    pub martingale: MartingaleReport,
    /// Residual of recomputing the shadow price from leaf masses directly.
    pub recompute_residual: f64,
    /// Max deviation of the shadow price at stopping nodes from the
    /// compensated process.
    pub sampling_residual: f64,
    /// Next stopping index after each grid time, per scenario.
    pub rho: Vec<Vec<usize>>,
    pub overshoot: f64,
    pub verdict: bool,
}

/// Why the pipeline stopped early.
#[derive(Debug)]
pub enum PipelineError {
    /// The input tree violates structural invariants.
    InvalidTree(Vec<Violation>),
    /// The exact condition checks failed: the input does not satisfy the
    /// hypotheses of the construction (e.g. a non-sticky tree). Carries the
    /// full report with separating certificates.
    Conditions(ConditionReport),
    /// Other errors (configuration, numerics, internal consistency).
    Other(Error),
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PipelineError::InvalidTree(v) => write!(f, "invalid tree: {} violations", v.len()),
            PipelineError::Conditions(r) => {
                write!(f, "condition checks failed at {} nodes", r.failures.len())
            }
            PipelineError::Other(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for PipelineError {}

impl From<Error> for PipelineError {
    fn from(e: Error) -> Self {
        PipelineError::Other(e)
    }
}

/// Pipeline switches.
#[derive(Debug, Clone, Copy)]
pub struct CpsOptions {
    /// Drop the bucket perturbation from the increments (demonstration of
    /// its necessity; the support condition then fails on monotone inputs).
    pub perturbation: bool,
    /// Apply the per-level density bound schedule when solving nodes.
    pub eta_bounding: bool,
}

impl Default for CpsOptions {
    fn default() -> Self {
        Self {
            perturbation: true,
            eta_bounding: false,
        }
    }
}

/// Expected value of the leaf values under leaf masses, backward through the
/// tree: node value = probability-weighted average of child values. Returns
/// one value vector per node.
pub fn backward_induct(
    tree: &ScenarioTree,
    leaf_mass: &[f64],
    leaf_values: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let d = tree.dim();
    let n_nodes = tree.nodes().len();
    let mut mass = vec![0.0f64; n_nodes];
    let mut value = vec![vec![0.0f64; d]; n_nodes];
    for (s, &leaf) in tree.leaves().iter().enumerate() {
        if !(leaf_mass[s] > 0.0) {
            return Err(Error::Internal(format!(
                "leaf mass must be positive, scenario {s} has {}",
                leaf_mass[s]
            )));
        }
        mass[leaf] = leaf_mass[s];
        value[leaf] = leaf_values[s].clone();
    }
    // Children always carry larger depth; sweep nodes by decreasing depth.
    let mut order: Vec<usize> = (0..n_nodes).collect();
    order.sort_by_key(|&id| std::cmp::Reverse(tree.node(id).time_index));
    for id in order {
        let node = tree.node(id);
        if node.children.is_empty() {
            continue;
        }
        let mut m = 0.0;
        let mut v = vec![0.0f64; d];
        for &(c, _) in &node.children {
            m += mass[c];
            for i in 0..d {
                v[i] += mass[c] * value[c][i];
            }
        }
        if !(m > 0.0) {
            return Err(Error::Internal(format!("node {id} has zero mass")));
        }
        for x in v.iter_mut() {
            *x /= m;
        }
        mass[id] = m;
        value[id] = v;
    }
    Ok(value)
}

/// Builds the shadow price: the conditional expectation, under the
/// reweighted measure, of the terminal compensated value, at every tree
/// node.
pub fn build_m(
    tree: &ScenarioTree,
    skeleton: &SkeletonDecomposition,
    measure: &MeasureQ,
) -> Result<Vec<Vec<f64>>> {
    let leaf_values: Vec<Vec<f64>> = (0..skeleton.num_scenarios())
        .map(|s| skeleton.x_terminal(s).to_vec())
        .collect();
    backward_induct(tree, &measure.q_prob, &leaf_values)
}

/// Recomputes the shadow price at each node directly from the reweighted
/// leaf masses below it and returns the worst deviation from the given
/// values.
pub fn recompute_residual(
    tree: &ScenarioTree,
    skeleton: &SkeletonDecomposition,
    measure: &MeasureQ,
    shadow: &[Vec<f64>],
) -> f64 {
    let n_nodes = tree.nodes().len();
    let d = tree.dim();
    let mut mass = vec![0.0f64; n_nodes];
    let mut acc = vec![vec![0.0f64; d]; n_nodes];
    for (s, &leaf) in tree.leaves().iter().enumerate() {
        // Accumulate along the scenario's path: every ancestor sees this
        // leaf's mass.
        let x = skeleton.x_terminal(s);
        let mut cur = Some(leaf);
        while let Some(id) = cur {
            mass[id] += measure.q_prob[s];
            for i in 0..d {
                acc[id][i] += measure.q_prob[s] * x[i];
            }
            cur = tree.parent(id);
        }
    }
    let mut worst = 0.0f64;
    for id in 0..n_nodes {
        if mass[id] > 0.0 {
            for i in 0..d {
                worst = worst.max((acc[id][i] / mass[id] - shadow[id][i]).abs());
            }
        }
    }
    worst
}

/// Runs the three band checks and the optional-sampling consistency check.
pub fn verify_band(
    tree: &ScenarioTree,
    skeleton: &SkeletonDecomposition,
    shadow: &[Vec<f64>],
    eps: &EpsilonParams,
) -> (BandCheck, BandCheck, BandCheck, f64, Vec<Vec<usize>>) {
    let ew = eps.eps_working;
    let one = 1.0 + ew;
    let d = skeleton.dim;
    let n_term = skeleton.terminal_index;

    // (a) compensated process over prices at its stopping indices.
    let mut band_a = BandCheck::new(one.powi(-2), one.powi(2));
    for s in 0..skeleton.num_scenarios() {
        for n in 0..=skeleton.num_levels() {
            let tau = skeleton.tau(s, n);
            let node = skeleton.scenario_paths[s][tau];
            let price = &tree.node(node).price;
            let x = &skeleton.x[s][n.min(skeleton.x[s].len() - 1)];
            for i in 0..d {
                band_a.record(x[i] / price[i], i, || format!("scenario {s} level {n}"));
            }
        }
    }

    // (b) prices at the next stopping index over current prices, widened by
    // the recorded one-step overshoot.
    let g = skeleton.overshoot;
    let mut band_b = BandCheck::new(one.powi(-2) / g, one.powi(2) * g);
    let mut rho = Vec::with_capacity(skeleton.num_scenarios());
    for s in 0..skeleton.num_scenarios() {
        let chain = &skeleton.exit_times[s];
        let mut rho_s = Vec::with_capacity(n_term);
        for t in 0..n_term {
            let r = rho_after(chain, t).expect("t < terminal index");
            rho_s.push(r);
            let now = &tree.node(skeleton.scenario_paths[s][t]).price;
            let next = &tree.node(skeleton.scenario_paths[s][r]).price;
            for i in 0..d {
                band_b.record(next[i] / now[i], i, || format!("scenario {s} t {t}"));
            }
        }
        rho.push(rho_s);
    }

    // (c) shadow price over prices at every tree node, fourth power.
    let mut band_c = BandCheck::new(one.powi(-4), one.powi(4));
    for node in tree.nodes() {
        for i in 0..d {
            band_c.record(shadow[node.id][i] / node.price[i], i, || {
                format!("node {}", node.id)
            });
        }
    }

    // Optional sampling: the shadow price at the node occupied at each
    // stopping index equals the compensated process there.
    let mut sampling = 0.0f64;
    for s in 0..skeleton.num_scenarios() {
        for n in 0..=skeleton.num_levels() {
            let tau = skeleton.tau(s, n);
            let node = skeleton.scenario_paths[s][tau];
            let x = &skeleton.x[s][n.min(skeleton.x[s].len() - 1)];
            for i in 0..d {
                sampling = sampling.max((shadow[node][i] - x[i]).abs());
            }
        }
    }

    (band_a, band_b, band_c, sampling, rho)
}

/// The full construction: working spread, skeleton, exact condition checks,
/// node solves, measure assembly, shadow price, band verification. Any stage
/// failure is returned as its diagnostic.
pub fn build_cps(
    tree: &ScenarioTree,
    eps_target: f64,
    options: CpsOptions,
) -> std::result::Result<CpsResult, PipelineError> {
    let violations = validate_tree(tree);
    if !violations.is_empty() {
        return Err(PipelineError::InvalidTree(violations));
    }
    let eps = EpsilonParams::from_target(eps_target).map_err(PipelineError::Other)?;
    let skeleton = build_skeleton(
        tree,
        eps.eps_working,
        SkeletonOptions {
            perturbation: options.perturbation,
        },
    )?;
    let report = check_conditions(&skeleton)?;
    if !report.is_empty() {
        return Err(PipelineError::Conditions(report));
    }
    let solved = solve_all_nodes(&skeleton, options.eta_bounding)?;
    let measure = assemble_measure(&skeleton, solved)?;
    let shadow = build_m(tree, &skeleton, &measure)?;
    let martingale = verify_martingale(&skeleton, &measure);
    let recompute = recompute_residual(tree, &skeleton, &measure, &shadow);
    let (band_a, band_b, band_c, sampling, rho) = verify_band(tree, &skeleton, &shadow, &eps);
    let mart_tol = crate::emm::verify_tolerance(tree.depth());
    let verdict = band_c.passed()
        && band_a.passed()
        && band_b.passed()
        && martingale.max_residual <= mart_tol
        && sampling <= SAMPLING_TOL
        && recompute <= RECOMPUTE_TOL;
    Ok(CpsResult {
        eps,
        shadow_price: shadow,
        band_compensated: band_a,
        band_next_stop: band_b,
        band_shadow: band_c,
        martingale,
        recompute_residual: recompute,
        sampling_residual: sampling,
        rho,
        overshoot: skeleton.overshoot,
        verdict,
    })
}

/// Convenience access to the skeleton and measure alongside the result, for
/// callers that need the intermediate artifacts (reports, verification).
pub struct CpsArtifacts {
    pub skeleton: SkeletonDecomposition,
    pub measure: MeasureQ,
    pub result: CpsResult,
}

/// Same pipeline as [`build_cps`] but returning the intermediates.
pub fn build_cps_artifacts(
    tree: &ScenarioTree,
    eps_target: f64,
    options: CpsOptions,
) -> std::result::Result<CpsArtifacts, PipelineError> {
    let violations = validate_tree(tree);
    if !violations.is_empty() {
        return Err(PipelineError::InvalidTree(violations));
    }
    let eps = EpsilonParams::from_target(eps_target).map_err(PipelineError::Other)?;
    let skeleton = build_skeleton(
        tree,
        eps.eps_working,
        SkeletonOptions {
            perturbation: options.perturbation,
        },
    )?;
    let report = check_conditions(&skeleton)?;
    if !report.is_empty() {
        return Err(PipelineError::Conditions(report));
    }
    let solved = solve_all_nodes(&skeleton, options.eta_bounding)?;
    let measure = assemble_measure(&skeleton, solved)?;
    let shadow = build_m(tree, &skeleton, &measure)?;
    let martingale = verify_martingale(&skeleton, &measure);
    let recompute = recompute_residual(tree, &skeleton, &measure, &shadow);
    let (band_a, band_b, band_c, sampling, rho) = verify_band(tree, &skeleton, &shadow, &eps);
    let mart_tol = crate::emm::verify_tolerance(tree.depth());
    let verdict = band_c.passed()
        && band_a.passed()
        && band_b.passed()
        && martingale.max_residual <= mart_tol
        && sampling <= SAMPLING_TOL
        && recompute <= RECOMPUTE_TOL;
    let result = CpsResult {
        eps,
        shadow_price: shadow,
        band_compensated: band_a,
        band_next_stop: band_b,
        band_shadow: band_c,
        martingale,
        recompute_residual: recompute,
        sampling_residual: sampling,
        rho,
        overshoot: skeleton.overshoot,
        verdict,
    };
    Ok(CpsArtifacts {
        skeleton,
        measure,
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TreeNode;
    use crate::simulate::{build_increasing_tree, build_sticky_tree, TreeGenConfig};

    #[test]
    fn adjust_epsilon_examples() {
        assert!((adjust_epsilon(15.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((adjust_epsilon(0.1).unwrap() - 0.0241137).abs() < 1e-6);
        assert!(adjust_epsilon(1e-9).unwrap() > 0.0);
        assert!(adjust_epsilon(0.0).is_err());
        assert!(adjust_epsilon(-0.1).is_err());
        // Continuity toward the identity: small targets give roughly a
        // quarter of the target.
        let e = adjust_epsilon(0.004).unwrap();
        assert!((e - 0.001).abs() < 1e-5);
    }

    #[test]
    fn backward_induction_depth_one_average() {
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
                price: vec![2.0],
                children: vec![],
            },
            TreeNode {
                id: 2,
                time_index: 1,
                price: vec![0.5],
                children: vec![],
            },
        ];
        let tree = crate::model::ScenarioTree::new(nodes, 0).unwrap();
        let m = backward_induct(&tree, &[0.5, 0.5], &[vec![2.0], vec![0.5]]).unwrap();
        assert!((m[0][0] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn constant_compensated_process_gives_constant_shadow_price() {
        // A very wide working band freezes the construction: the measure is
        // the original one and the shadow price sits at the root price.
        let cfg = TreeGenConfig::binomial_freeze(2, 1, vec![1.0], 1.001, 0.999, 0.2);
        let tree = build_sticky_tree(&cfg).unwrap();
        // eps_target = 15 -> eps_working = 1: band (1/2, 2), nothing exits.
        let art = build_cps_artifacts(&tree, 15.0, CpsOptions::default()).unwrap();
        for node in tree.nodes() {
            assert!((art.result.shadow_price[node.id][0] - 1.0).abs() < 1e-12);
        }
        assert!(art.result.verdict);
    }

    #[test]
    fn pipeline_passes_on_lattice_binomial_tree() {
        // Depth-4 sticky binomial with up = 1/down: stopping ratios live on
        // the power lattice of 1.03, safely inside the squared band for the
        // working spread of a 0.2 target.
        let cfg = TreeGenConfig::binomial_freeze(4, 1, vec![1.0], 1.03, 1.0 / 1.03, 0.25);
        let tree = build_sticky_tree(&cfg).unwrap();
        let art = build_cps_artifacts(&tree, 0.2, CpsOptions::default()).unwrap();
        let r = &art.result;
        assert!(r.verdict);
        assert!(r.band_shadow.passed());
        assert!(r.martingale.max_residual <= 1e-9);
        assert!(r.sampling_residual <= 1e-9);
        assert!((art.measure.expected_density - 1.0).abs() <= 1e-9);
        // Multi-level skeleton actually exercised.
        assert!(art.skeleton.num_levels() >= 2);
    }

    #[test]
    fn pipeline_passes_on_feasible_increasing_tree() {
        // Monotone prices with a shadow martingale: the up factor stays
        // below the working band edge so one-step deviations can fall into
        // the outer bucket and the support condition holds.
        let cfg = TreeGenConfig::increasing(6, 1, vec![1.0], 1.02, 0.3);
        let tree = build_increasing_tree(&cfg).unwrap();
        let art = build_cps_artifacts(&tree, 0.1, CpsOptions::default()).unwrap();
        assert!(art.result.verdict);
        // Every scenario's price path is nondecreasing under both measures
        // (the reweighting never creates or destroys scenarios).
        for s in 0..tree.num_scenarios() {
            let path = tree.scenario_nodes(s);
            for w in path.windows(2) {
                assert!(tree.node(w[1]).price[0] >= tree.node(w[0]).price[0] - 1e-15);
            }
            assert!(art.measure.q_prob[s] > 0.0);
        }
    }

    #[test]
    fn pipeline_rejects_monotone_tree_without_freeze() {
        let mut nodes = vec![TreeNode {
            id: 0,
            time_index: 0,
            price: vec![1.0],
            children: Vec::new(),
        }];
        let mut frontier = vec![0usize];
        for depth in 0..3 {
            let mut next = Vec::new();
            for &id in &frontier {
                let price = nodes[id].price[0];
                for (f, q) in [(1.05, 0.5), (1.02, 0.5)] {
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
        match build_cps(&tree, 0.1, CpsOptions::default()) {
            Err(PipelineError::Conditions(report)) => {
                assert!(!report.is_empty());
            }
            other => panic!("expected condition failure, got {:?}", other.is_ok()),
        }
    }

    #[test]
    fn verify_band_flags_doctored_shadow_price() {
        let cfg = TreeGenConfig::binomial_freeze(2, 1, vec![1.0], 1.03, 1.0 / 1.03, 0.25);
        let tree = build_sticky_tree(&cfg).unwrap();
        let art = build_cps_artifacts(&tree, 0.1, CpsOptions::default()).unwrap();
        let mut shadow = art.result.shadow_price.clone();
        let victim = tree.leaves()[0];
        shadow[victim][0] = 2.0 * tree.node(victim).price[0];
        let (_, _, band_c, _, _) = verify_band(&tree, &art.skeleton, &shadow, &art.result.eps);
        assert!(!band_c.passed());
        assert!(band_c
            .failures
            .iter()
            .any(|f| f.location == format!("node {victim}")));
    }

    #[test]
    fn shadow_price_matches_compensated_process_at_stopping_nodes() {
        let cfg = TreeGenConfig::binomial_freeze(3, 1, vec![1.0], 1.04, 1.0 / 1.04, 0.3);
        let tree = build_sticky_tree(&cfg).unwrap();
        let art = build_cps_artifacts(&tree, 0.2, CpsOptions::default()).unwrap();
        assert!(art.result.sampling_residual <= 1e-9);
        assert!(art.result.recompute_residual <= 1e-10);
    }
}
