//! Equivalent martingale measure construction on the skeleton.
//!
//! Each skeleton node carries the conditional one-step law of the increment
//! (its support atoms with original probabilities). Three conditions are
//! checked exactly:
//!
//! 1. zero lies in the relative interior of the convex hull of the support,
//! 2. the zero-increment events absorb (once frozen, forever frozen, and the
//!    final level is fully frozen),
//! 3. after any nonzero increment the next increment vanishes with positive
//!    conditional probability.
//!
//! When they hold, each node admits strictly positive reweighted atom
//! probabilities with zero first moment; the node density factors multiply
//! into an equivalent measure under which the compensated process is a
//! martingale.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lp::{max_min_barycentric, max_min_barycentric_boxed, MaxMin};
use crate::skeleton::{SkeletonDecomposition, SkeletonNode};

/// Feasibility threshold on the max-min barycentric weight; weights are
/// scale-free, so this is relative to point magnitudes by construction.
pub const RI_TOL: f64 = 1e-9;

/// Moment residual allowed at solve time, relaxed by a decade per tree level
/// beyond ten.
pub fn solve_tolerance(depth: usize) -> f64 {
    1e-10 * 10f64.powi(depth.saturating_sub(10) as i32)
}

/// Verification-time moment tolerance, one decade looser than solve time.
pub fn verify_tolerance(depth: usize) -> f64 {
    10.0 * solve_tolerance(depth)
}

/// The conditional one-step law of an increment at a skeleton node:
/// deduplicated atoms with strictly positive conditional probabilities.
#[derive(Debug, Clone)]
pub struct NodeSupport {
    pub atoms: Vec<(Vec<f64>, f64)>,
    /// Index of each member scenario's atom, parallel to the node's members.
    pub member_atom: Vec<usize>,
}

impl NodeSupport {
    /// Aggregates a skeleton node's member increments into merged atoms.
    /// Duplicate values (bitwise) share one atom, so the density factor is a
    /// function of the increment value and the node.
    pub fn from_node(node: &SkeletonNode, scenario_probs: &[f64]) -> Result<Self> {
        if node.members.is_empty() {
            return Err(Error::Internal("skeleton node with no members".into()));
        }
        let mut order: Vec<usize> = (0..node.members.len()).collect();
        order.sort_by(|&a, &b| {
            node.members[a]
                .increment
                .partial_cmp(&node.members[b].increment)
                .unwrap()
        });
        let mut atoms: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut member_atom = vec![usize::MAX; node.members.len()];
        for &m in &order {
            let xi = &node.members[m].increment;
            let p = scenario_probs[node.members[m].scenario] / node.prob;
            if !(p > 0.0) {
                return Err(Error::Internal(
                    "member scenario with non-positive conditional probability".into(),
                ));
            }
            match atoms.last_mut() {
                Some((last, mass)) if last == xi => {
                    *mass += p;
                    member_atom[m] = atoms.len() - 1;
                }
                _ => {
                    atoms.push((xi.clone(), p));
                    member_atom[m] = atoms.len() - 1;
                }
            }
        }
        let total: f64 = atoms.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Internal(format!(
                "conditional atom probabilities sum to {total}"
            )));
        }
        Ok(Self { atoms, member_atom })
    }
}

/// Certificate returned by [`ri_conv_contains_zero`]: strictly positive
/// barycentric weights when zero is inside, a separating functional on the
/// affine hull when it is not.
#[derive(Debug, Clone, Serialize)]
pub enum RiCertificate {
    Weights(Vec<f64>),
    Separator { direction: Vec<f64>, margin: f64 },
}

/// Decides whether zero lies in the relative interior of the convex hull of
/// a finite point set: true iff some strictly positive barycentric
/// combination of the points vanishes. Solved as a small dense linear
/// program maximizing the minimum weight.
pub fn ri_conv_contains_zero(points: &[Vec<f64>]) -> Result<(bool, RiCertificate)> {
    match max_min_barycentric(points)? {
        MaxMin::Optimal {
            weights,
            t_star,
            separator,
        } => {
            if t_star > RI_TOL {
                Ok((true, RiCertificate::Weights(weights)))
            } else {
                Ok((
                    false,
                    RiCertificate::Separator {
                        direction: separator,
                        margin: (-t_star).max(0.0),
                    },
                ))
            }
        }
        MaxMin::InfeasibleSystem { separator, margin } => Ok((
            false,
            RiCertificate::Separator {
                direction: separator,
                margin,
            },
        )),
    }
}

/// One failed condition, located on the skeleton.
#[derive(Debug, Clone, Serialize)]
pub enum ConditionFailure {
    /// Condition 1 at a node: zero escapes the relative interior of the
    /// increment support.
    Support {
        level: usize,
        node_index: usize,
        anchor_node: usize,
        direction: Vec<f64>,
        margin: f64,
    },
    /// Condition 2: a scenario's increment revived after vanishing, or the
    /// final level still moves.
    Absorption { scenario: usize, level: usize },
    /// Condition 3 at a node: the previous increment was nonzero but no
    /// zero-increment continuation exists.
    Revival {
        level: usize,
        node_index: usize,
        anchor_node: usize,
    },
}

/// Outcome of the exact condition checks; empty iff the measure construction
/// applies.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ConditionReport {
    pub failures: Vec<ConditionFailure>,
}

impl ConditionReport {
    pub fn is_empty(&self) -> bool {
        self.failures.is_empty()
    }
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|x| *x == 0.0)
}

/// Runs the three exact condition checks on a built skeleton.
pub fn check_conditions(skeleton: &SkeletonDecomposition) -> Result<ConditionReport> {
    let mut failures = Vec::new();
    // Condition 1 per node.
    for (li, level) in skeleton.levels.iter().enumerate() {
        for (ni, node) in level.iter().enumerate() {
            let support = NodeSupport::from_node(node, &skeleton.scenario_probs)?;
            let points: Vec<Vec<f64>> = support.atoms.iter().map(|(x, _)| x.clone()).collect();
            let (ok, cert) = ri_conv_contains_zero(&points)?;
            if !ok {
                if let RiCertificate::Separator { direction, margin } = cert {
                    failures.push(ConditionFailure::Support {
                        level: li + 1,
                        node_index: ni,
                        anchor_node: node.anchor_node,
                        direction,
                        margin,
                    });
                }
            }
        }
    }
    // Condition 2: zero increments absorb scenariowise and the last level is
    // fully absorbed.
    let k = skeleton.num_levels();
    for s in 0..skeleton.num_scenarios() {
        let mut frozen = false;
        for (n, inc) in skeleton.increments[s].iter().enumerate() {
            let zero = is_zero(inc);
            if frozen && !zero {
                failures.push(ConditionFailure::Absorption {
                    scenario: s,
                    level: n + 1,
                });
            }
            frozen = frozen || zero;
        }
        if k > 0 && skeleton.tau(s, k) != skeleton.terminal_index {
            failures.push(ConditionFailure::Absorption { scenario: s, level: k });
        }
    }
    // Condition 3 per node at levels >= 2.
    for (li, level) in skeleton.levels.iter().enumerate().skip(1) {
        for (ni, node) in level.iter().enumerate() {
            let prev = &skeleton.increments[node.members[0].scenario][li - 1];
            for m in &node.members {
                if skeleton.increments[m.scenario][li - 1] != *prev {
                    return Err(Error::Internal(format!(
                        "previous increment not constant on level-{} node {}",
                        li + 1,
                        ni
                    )));
                }
            }
            if !is_zero(prev) {
                let has_zero = node.members.iter().any(|m| is_zero(&m.increment));
                if !has_zero {
                    failures.push(ConditionFailure::Revival {
                        level: li + 1,
                        node_index: ni,
                        anchor_node: node.anchor_node,
                    });
                }
            }
        }
    }
    Ok(ConditionReport { failures })
}

/// One reweighted atom of a node measure.
#[derive(Debug, Clone, Serialize)]
pub struct MeasureAtom {
    pub xi: Vec<f64>,
    pub p: f64,
    pub q: f64,
    pub z: f64,
}

/// The reweighted one-step law at a skeleton node: strictly positive
/// probabilities with zero increment mean, plus per-atom density factors.
#[derive(Debug, Clone)]
pub struct NodeMeasure {
    pub atoms: Vec<MeasureAtom>,
    /// Atom index per member scenario of the owning skeleton node.
    pub member_atom: Vec<usize>,
    /// Density bound level in force, when bounding was requested.
    pub eta: Option<f64>,
    /// Set when the bounded solve was infeasible and the unbounded solution
    /// was used instead.
    pub eta_violated: bool,
    /// The max-min atom weight attained by the solve.
    pub min_weight: f64,
}

/// Solves one node: among all strictly positive reweightings with zero
/// increment mean, picks the one maximizing the minimum atom weight (a
/// deterministic pivoting rule breaks ties). With `eta`, additionally tries
/// to keep every density factor within `1 +- eta`, falling back to the
/// unbounded solution (flagged) when that box is infeasible.
pub fn solve_node_emm(support: &NodeSupport, eta: Option<f64>) -> Result<NodeMeasure> {
    solve_node_emm_at(support, eta, usize::MAX, 0)
}

fn solve_node_emm_at(
    support: &NodeSupport,
    eta: Option<f64>,
    node_id: usize,
    depth: usize,
) -> Result<NodeMeasure> {
    let points: Vec<Vec<f64>> = support.atoms.iter().map(|(x, _)| x.clone()).collect();
    let ps: Vec<f64> = support.atoms.iter().map(|(_, p)| *p).collect();

    let mut eta_violated = false;
    let solved = match eta {
        Some(bound) => {
            let lo: Vec<f64> = ps.iter().map(|p| p * (1.0 - bound)).collect();
            let hi: Vec<f64> = ps.iter().map(|p| p * (1.0 + bound)).collect();
            match max_min_barycentric_boxed(&points, &lo, &hi)? {
                Some(sol) => Some(sol),
                None => {
                    eta_violated = true;
                    None
                }
            }
        }
        None => None,
    };
    let solved = match solved {
        Some(s) => s,
        None => max_min_barycentric(&points)?,
    };

    let (weights, t_star) = match solved {
        MaxMin::Optimal {
            weights, t_star, ..
        } => (weights, t_star),
        MaxMin::InfeasibleSystem { separator, margin } => {
            return Err(Error::Infeasible {
                node_id,
                certificate: separator,
                margin,
            });
        }
    };
    if t_star <= RI_TOL {
        let separator = match max_min_barycentric(&points)? {
            MaxMin::Optimal { separator, .. } => separator,
            MaxMin::InfeasibleSystem { separator, .. } => separator,
        };
        return Err(Error::Infeasible {
            node_id,
            certificate: separator,
            margin: (-t_star).max(0.0),
        });
    }

    let tol = solve_tolerance(depth);
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::Internal(format!("node weights sum to {sum}")));
    }
    let d = points[0].len();
    let scale = points
        .iter()
        .flat_map(|x| x.iter())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..d {
        let m: f64 = weights
            .iter()
            .zip(&points)
            .map(|(q, x)| q * x[i])
            .sum();
        if m.abs() > tol * scale {
            return Err(Error::Internal(format!(
                "solved node keeps increment mean {m:.3e} in coordinate {i}"
            )));
        }
    }

    let atoms: Vec<MeasureAtom> = support
        .atoms
        .iter()
        .zip(&weights)
        .map(|((xi, p), q)| MeasureAtom {
            xi: xi.clone(),
            p: *p,
            q: *q,
            z: q / p,
        })
        .collect();
    Ok(NodeMeasure {
        atoms,
        member_atom: support.member_atom.clone(),
        eta,
        eta_violated,
        min_weight: t_star,
    })
}

/// Density bound schedule from the sequential construction: level n is
/// bounded by `2^-n`.
pub fn eta_schedule(level: usize) -> f64 {
    0.5f64.powi(level as i32)
}

/// Solves every skeleton node. `eta_bounding` switches on the per-level
/// density bound schedule.
pub fn solve_all_nodes(
    skeleton: &SkeletonDecomposition,
    eta_bounding: bool,
) -> Result<Vec<Vec<NodeMeasure>>> {
    let mut out = Vec::with_capacity(skeleton.num_levels());
    for (li, level) in skeleton.levels.iter().enumerate() {
        let mut measures = Vec::with_capacity(level.len());
        for node in level {
            let support = NodeSupport::from_node(node, &skeleton.scenario_probs)?;
            let eta = eta_bounding.then(|| eta_schedule(li + 1));
            measures.push(solve_node_emm_at(
                &support,
                eta,
                node.anchor_node,
                skeleton.terminal_index,
            )?);
        }
        out.push(measures);
    }
    Ok(out)
}

/// The assembled equivalent measure: per-scenario terminal density and
/// reweighted scenario probabilities.
#[derive(Debug, Clone)]
pub struct MeasureQ {
    pub node_measures: Vec<Vec<NodeMeasure>>,
    /// Terminal density per scenario: the product of its node factors.
    pub leaf_density: Vec<f64>,
    /// Reweighted scenario probabilities.
    pub q_prob: Vec<f64>,
    /// Mean of the terminal density under the original measure.
    pub expected_density: f64,
}

/// Multiplies each scenario's density factors across levels and checks that
/// the result is a genuine reweighting: strictly positive densities with
/// unit mean.
pub fn assemble_measure(
    skeleton: &SkeletonDecomposition,
    node_measures: Vec<Vec<NodeMeasure>>,
) -> Result<MeasureQ> {
    let n_scen = skeleton.num_scenarios();
    let mut leaf_density = vec![1.0f64; n_scen];
    for (li, (level, measures)) in skeleton
        .levels
        .iter()
        .zip(&node_measures)
        .enumerate()
    {
        let _ = li;
        for (node, nm) in level.iter().zip(measures) {
            for (mi, member) in node.members.iter().enumerate() {
                let z = nm.atoms[nm.member_atom[mi]].z;
                if !(z > 0.0) {
                    return Err(Error::Internal(format!(
                        "density factor {z} not positive for scenario {}",
                        member.scenario
                    )));
                }
                leaf_density[member.scenario] *= z;
            }
        }
    }
    let mut expected = 0.0;
    let mut q_prob = vec![0.0; n_scen];
    for s in 0..n_scen {
        if !(leaf_density[s] > 0.0) {
            return Err(Error::Internal(format!(
                "terminal density vanishes on scenario {s}"
            )));
        }
        q_prob[s] = skeleton.scenario_probs[s] * leaf_density[s];
        expected += q_prob[s];
    }
    if (expected - 1.0).abs() > 1e-9 {
        return Err(Error::Internal(format!(
            "terminal density has mean {expected} under the original measure"
        )));
    }
    Ok(MeasureQ {
        node_measures,
        leaf_density,
        q_prob,
        expected_density: expected,
    })
}

/// Residual report for the martingale property of the compensated process.
#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    /// Per level and node: the max-norm of the reweighted increment mean.
    pub node_residuals: Vec<Vec<f64>>,
    pub max_residual: f64,
    /// Second moment of the terminal compensated process under the new
    /// measure (always finite here; reported for completeness).
    pub x_terminal_l2: f64,
}

/// Measures how far each node's reweighted increment mean is from zero, plus
/// the terminal second moment.
pub fn verify_martingale(
    skeleton: &SkeletonDecomposition,
    measure: &MeasureQ,
) -> MartingaleReport {
    let mut node_residuals = Vec::with_capacity(skeleton.num_levels());
    let mut max_residual = 0.0f64;
    for measures in &measure.node_measures {
        let mut level_res = Vec::with_capacity(measures.len());
        for nm in measures {
            let d = nm.atoms[0].xi.len();
            let mut worst = 0.0f64;
            for i in 0..d {
                let m: f64 = nm.atoms.iter().map(|a| a.q * a.xi[i]).sum();
                worst = worst.max(m.abs());
            }
            level_res.push(worst);
            max_residual = max_residual.max(worst);
        }
        node_residuals.push(level_res);
    }
    let mut l2 = 0.0;
    for s in 0..skeleton.num_scenarios() {
        let x = skeleton.x_terminal(s);
        let sq: f64 = x.iter().map(|v| v * v).sum();
        l2 += measure.q_prob[s] * sq;
    }
    MartingaleReport {
        node_residuals,
        max_residual,
        x_terminal_l2: l2,
    }
}
