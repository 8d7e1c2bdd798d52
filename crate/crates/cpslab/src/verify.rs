//! Re-validation of stored artifacts: reads a result directory back and
//! replays every invariant against a fresh recomputation.

use std::path::Path;

use crate::cps::{build_cps_artifacts, CpsOptions};
use crate::error::{Error, Result};
use crate::io;
use crate::model::validate_tree;

/// One named check with its outcome.
#[derive(Debug, Clone)]
pub struct VerifyCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of re-validating an artifact directory.
#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub checks: Vec<VerifyCheck>,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&VerifyCheck> {
        self.checks.iter().find(|c| !c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(VerifyCheck {
            name: name.into(),
            passed,
            detail,
        });
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Reads `tree.json`, `cps_result.json` and, for passing runs,
/// `skeleton.json`, `measure.json` and `cps_nodes.csv` from `dir`, then
/// replays the construction and compares every stored quantity. Parse errors
/// are returned as errors (corrupted artifacts); semantic mismatches appear
/// as failed checks.
pub fn verify_artifact_dir(dir: &Path) -> Result<VerifyOutcome> {
    let mut out = VerifyOutcome { checks: Vec::new() };

    let tree_path = dir.join("tree.json");
    if !tree_path.exists() {
        return Err(Error::Config(format!(
            "missing artifact {}",
            tree_path.display()
        )));
    }
    let tree = io::read_tree_json(&tree_path)?;
    let violations = validate_tree(&tree);
    out.push(
        "tree_invariants",
        violations.is_empty(),
        format!("{} violations", violations.len()),
    );

    let summary = io::read_cps_summary(&dir.join("cps_result.json"))?;

    if summary.verdict != "pass" {
        // A recorded failure must reproduce.
        let reproduced = build_cps_artifacts(&tree, summary.eps_target, CpsOptions::default());
        out.push(
            "failure_reproduces",
            reproduced.is_err(),
            "stored verdict is fail; pipeline must fail again".into(),
        );
        return Ok(out);
    }

    let art = match build_cps_artifacts(&tree, summary.eps_target, CpsOptions::default()) {
        Ok(a) => a,
        Err(e) => {
            out.push(
                "pipeline_reproduces",
                false,
                format!("stored verdict is pass but the pipeline now fails: {e}"),
            );
            return Ok(out);
        }
    };
    out.push("pipeline_reproduces", true, String::new());
    out.push(
        "cps_verdict",
        art.result.verdict,
        format!("recomputed verdict {}", art.result.verdict),
    );

    // Skeleton dump against the recomputation.
    let sk_doc = io::read_skeleton_json(&dir.join("skeleton.json"))?;
    let fresh = io::SkeletonJson::from_decomposition(&art.skeleton);
    let mut sk_ok = sk_doc.levels.len() == fresh.levels.len()
        && close(sk_doc.eps_working, fresh.eps_working, 1e-15);
    let mut sk_detail = String::new();
    if sk_ok {
        'outer: for (la, lb) in sk_doc.levels.iter().zip(&fresh.levels) {
            if la.len() != lb.len() {
                sk_ok = false;
                sk_detail = "level width mismatch".into();
                break;
            }
            for (na, nb) in la.iter().zip(lb) {
                if na.node_id != nb.node_id
                    || !close(na.s_bar, nb.s_bar, 1e-12)
                    || !close(na.delta, nb.delta, 1e-12)
                    || na.members.len() != nb.members.len()
                {
                    sk_ok = false;
                    sk_detail = format!("node {} differs", na.node_id);
                    break 'outer;
                }
                for (ma, mb) in na.members.iter().zip(&nb.members) {
                    if ma.scenario_id != mb.scenario_id
                        || ma.tau_prev != mb.tau_prev
                        || ma.tau_next != mb.tau_next
                        || ma.c_class != mb.c_class
                        || !close(ma.s_star, mb.s_star, 1e-12)
                    {
                        sk_ok = false;
                        sk_detail =
                            format!("member {} of node {} differs", ma.scenario_id, na.node_id);
                        break 'outer;
                    }
                }
            }
        }
    } else {
        sk_detail = "shape or spread mismatch".into();
    }
    out.push("skeleton_consistency", sk_ok, sk_detail);

    // Measure dump invariants.
    let measure = io::read_measure_json(&dir.join("measure.json"))?;
    let mut equiv_ok = true;
    let mut norm_ok = true;
    let mut moment_ok = true;
    let mut density_ok = true;
    for node in &measure.nodes {
        let mut qsum = 0.0;
        let d = node.atoms.first().map(|a| a.xi.len()).unwrap_or(0);
        let mut moment = vec![0.0f64; d];
        for a in &node.atoms {
            if !(a.q > 0.0) || !(a.p > 0.0) {
                equiv_ok = false;
            }
            qsum += a.q;
            for i in 0..d {
                moment[i] += a.q * a.xi[i];
            }
            if a.p > 0.0 && !close(a.z, a.q / a.p, 1e-12) {
                density_ok = false;
            }
        }
        if (qsum - 1.0).abs() > 1e-10 {
            norm_ok = false;
        }
        let scale = node
            .atoms
            .iter()
            .flat_map(|a| a.xi.iter())
            .fold(1.0f64, |m, v| m.max(v.abs()));
        if moment.iter().any(|m| m.abs() > 1e-9 * scale) {
            moment_ok = false;
        }
    }
    out.push(
        "measure_equivalence",
        equiv_ok,
        "every atom keeps strictly positive probability".into(),
    );
    out.push("measure_normalization", norm_ok, String::new());
    out.push("measure_martingale", moment_ok, String::new());
    out.push("density_consistency", density_ok, String::new());

    let probs = tree.scenario_probs();
    let mut leaf_ok = measure.leaves.len() == tree.num_scenarios();
    let mut mean = 0.0;
    if leaf_ok {
        for leaf in &measure.leaves {
            let p = probs[leaf.scenario_id];
            if !(leaf.density > 0.0)
                || !((p > 0.0) == (leaf.q_prob > 0.0))
                || !close(leaf.q_prob, p * leaf.density, 1e-12)
            {
                leaf_ok = false;
            }
            mean += leaf.q_prob;
        }
    }
    out.push(
        "leaf_density",
        leaf_ok && (mean - 1.0).abs() <= 1e-9,
        format!("density mean {mean}"),
    );

    // Per-node table against the recomputed shadow price.
    let rows = io::read_cps_nodes_csv(&dir.join("cps_nodes.csv"))?;
    let mut rows_ok = rows.len() == tree.nodes().len() * tree.dim();
    if rows_ok {
        for r in &rows {
            let node = tree.node(r.node_id);
            let m = art.result.shadow_price[r.node_id][r.asset - 1];
            if !close(r.price, node.price[r.asset - 1], 1e-15)
                || !close(r.shadow, m, 1e-12)
                || !close(r.ratio, m / node.price[r.asset - 1], 1e-9)
            {
                rows_ok = false;
                break;
            }
        }
    }
    out.push("shadow_price_consistency", rows_ok, String::new());

    Ok(out)
}
