//! File formats: tree JSON, path ensemble CSV, skeleton / measure dumps,
//! construction summaries, and stickiness report CSV.
//!
//! Writers are deterministic: fixed field order, shortest-roundtrip float
//! formatting, one trailing newline. Rerunning a command overwrites its
//! outputs byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cps::{CpsResult, PipelineError};
use crate::emm::{ConditionFailure, MeasureQ};
use crate::error::{Error, Result};
use crate::model::{PathEnsemble, PricePath, ScenarioTree, TreeNode};
use crate::skeleton::SkeletonDecomposition;
use crate::stickiness::StickinessReport;

#[derive(Debug, Serialize, Deserialize)]
pub struct TreeChildJson {
    pub id: usize,
    pub prob: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TreeNodeJson {
    pub id: usize,
    pub time_index: usize,
    pub price: Vec<f64>,
    pub children: Vec<TreeChildJson>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TreeJson {
    pub nodes: Vec<TreeNodeJson>,
    pub root: usize,
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn parse_context(e: &serde_json::Error) -> String {
    format!("line {}, column {}", e.line(), e.column())
}

/// Writes a tree as JSON.
pub fn write_tree_json(tree: &ScenarioTree, path: &Path) -> Result<()> {
    let doc = TreeJson {
        nodes: tree
            .nodes()
            .iter()
            .map(|n| TreeNodeJson {
                id: n.id,
                time_index: n.time_index,
                price: n.price.clone(),
                children: n
                    .children
                    .iter()
                    .map(|&(id, prob)| TreeChildJson { id, prob })
                    .collect(),
            })
            .collect(),
        root: tree.root(),
    };
    fs::write(path, to_pretty_json(&doc))?;
    Ok(())
}

/// Reads a tree from JSON, checking structural integrity.
pub fn read_tree_json(path: &Path) -> Result<ScenarioTree> {
    let raw = fs::read_to_string(path)?;
    let doc: TreeJson = serde_json::from_str(&raw).map_err(|e| {
        Error::Parse(format!(
            "tree json {}: {e} ({})",
            path.display(),
            parse_context(&e)
        ))
    })?;
    let nodes: Vec<TreeNode> = doc
        .nodes
        .into_iter()
        .map(|n| TreeNode {
            id: n.id,
            time_index: n.time_index,
            price: n.price,
            children: n.children.into_iter().map(|c| (c.id, c.prob)).collect(),
        })
        .collect();
    ScenarioTree::new(nodes, doc.root)
}

/// Writes an ensemble as CSV with header `time,asset_1,...,asset_d,path_id`.
pub fn write_paths_csv(ensemble: &PathEnsemble, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = ensemble.dim();
    let mut header = vec!["time".to_string()];
    for i in 1..=d {
        header.push(format!("asset_{i}"));
    }
    header.push("path_id".into());
    w.write_record(&header).map_err(csv_err)?;
    for (pid, p) in ensemble.paths().iter().enumerate() {
        for (t, &time) in p.times().iter().enumerate() {
            let mut rec = vec![format!("{time}")];
            for v in p.at(t) {
                rec.push(format!("{v}"));
            }
            rec.push(format!("{pid}"));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

/// Reads an ensemble back from CSV.
pub fn read_paths_csv(path: &Path) -> Result<PathEnsemble> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.len() < 3 || &headers[0] != "time" || &headers[headers.len() - 1] != "path_id" {
        return Err(Error::Parse(format!(
            "paths csv {}: expected header time,asset_1,...,path_id",
            path.display()
        )));
    }
    let d = headers.len() - 2;
    let mut grids: Vec<(usize, Vec<f64>, Vec<Vec<f64>>)> = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| {
            Error::Parse(format!(
                "paths csv {} row {}: {e}",
                path.display(),
                row + 2
            ))
        })?;
        if rec.len() != d + 2 {
            return Err(Error::Parse(format!(
                "paths csv {} row {}: {} fields, expected {}",
                path.display(),
                row + 2,
                rec.len(),
                d + 2
            )));
        }
        let fl = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| {
                Error::Parse(format!(
                    "paths csv {} row {}: bad number {s:?}",
                    path.display(),
                    row + 2
                ))
            })
        };
        let time = fl(&rec[0])?;
        let values: Vec<f64> = rec
            .iter()
            .skip(1)
            .take(d)
            .map(fl)
            .collect::<Result<_>>()?;
        let pid: usize = rec[d + 1].parse().map_err(|_| {
            Error::Parse(format!(
                "paths csv {} row {}: bad path_id {:?}",
                path.display(),
                row + 2,
                &rec[d + 1]
            ))
        })?;
        if pid == grids.len() {
            grids.push((pid, Vec::new(), Vec::new()));
        }
        let entry = grids.get_mut(pid).ok_or_else(|| {
            Error::Parse(format!(
                "paths csv {} row {}: path_id {pid} out of order",
                path.display(),
                row + 2
            ))
        })?;
        entry.1.push(time);
        entry.2.push(values);
    }
    let mut paths = Vec::with_capacity(grids.len());
    for (_, times, values) in grids {
        paths.push(PricePath::new(times, values)?);
    }
    PathEnsemble::new(paths, 0)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SkeletonMemberJson {
    pub scenario_id: usize,
    pub tau_prev: usize,
    pub tau_next: usize,
    pub s_star: f64,
    pub c_class: Option<usize>,
    pub xi: Vec<f64>,
    pub x: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SkeletonNodeJson {
    pub node_id: usize,
    pub anchor_price: Vec<f64>,
    pub s_bar: f64,
    pub delta: f64,
    pub members: Vec<SkeletonMemberJson>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SkeletonJson {
    pub eps_working: f64,
    pub terminal_index: usize,
    pub overshoot: f64,
    pub levels: Vec<Vec<SkeletonNodeJson>>,
}

impl SkeletonJson {
    pub fn from_decomposition(sk: &SkeletonDecomposition) -> Self {
        SkeletonJson {
            eps_working: sk.eps_working,
            terminal_index: sk.terminal_index,
            overshoot: sk.overshoot,
            levels: sk
                .levels
                .iter()
                .enumerate()
                .map(|(li, level)| {
                    level
                        .iter()
                        .map(|node| SkeletonNodeJson {
                            node_id: node.anchor_node,
                            anchor_price: node.anchor_price.clone(),
                            s_bar: node.support_max,
                            delta: node.radius,
                            members: node
                                .members
                                .iter()
                                .map(|m| SkeletonMemberJson {
                                    scenario_id: m.scenario,
                                    tau_prev: m.tau_prev,
                                    tau_next: m.tau_next,
                                    s_star: m.max_dev,
                                    c_class: m.class,
                                    xi: m.increment.clone(),
                                    x: sk.x[m.scenario][li + 1].clone(),
                                })
                                .collect(),
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

pub fn write_skeleton_json(sk: &SkeletonDecomposition, path: &Path) -> Result<()> {
    fs::write(path, to_pretty_json(&SkeletonJson::from_decomposition(sk)))?;
    Ok(())
}

pub fn read_skeleton_json(path: &Path) -> Result<SkeletonJson> {
    let raw = fs::read_to_string(path)?;
    serde_json::from_str(&raw).map_err(|e| {
        Error::Parse(format!(
            "skeleton json {}: {e} ({})",
            path.display(),
            parse_context(&e)
        ))
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MeasureAtomJson {
    pub xi: Vec<f64>,
    pub p: f64,
    pub q: f64,
    pub z: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MeasureNodeJson {
    pub skeleton_node_id: usize,
    pub level: usize,
    pub atoms: Vec<MeasureAtomJson>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MeasureLeafJson {
    pub scenario_id: usize,
    #[serde(rename = "L")]
    pub density: f64,
    pub q_prob: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MeasureJson {
    pub nodes: Vec<MeasureNodeJson>,
    pub leaves: Vec<MeasureLeafJson>,
}

impl MeasureJson {
    pub fn from_measure(sk: &SkeletonDecomposition, measure: &MeasureQ) -> Self {
        let mut nodes = Vec::new();
        for (li, (level, measures)) in sk.levels.iter().zip(&measure.node_measures).enumerate() {
            for (node, nm) in level.iter().zip(measures) {
                nodes.push(MeasureNodeJson {
                    skeleton_node_id: node.anchor_node,
                    level: li + 1,
                    atoms: nm
                        .atoms
                        .iter()
                        .map(|a| MeasureAtomJson {
                            xi: a.xi.clone(),
                            p: a.p,
                            q: a.q,
                            z: a.z,
                        })
                        .collect(),
                });
            }
        }
        let leaves = (0..sk.num_scenarios())
            .map(|s| MeasureLeafJson {
                scenario_id: s,
                density: measure.leaf_density[s],
                q_prob: measure.q_prob[s],
            })
            .collect();
        MeasureJson { nodes, leaves }
    }
}

pub fn write_measure_json(
    sk: &SkeletonDecomposition,
    measure: &MeasureQ,
    path: &Path,
) -> Result<()> {
    fs::write(path, to_pretty_json(&MeasureJson::from_measure(sk, measure)))?;
    Ok(())
}

pub fn read_measure_json(path: &Path) -> Result<MeasureJson> {
    let raw = fs::read_to_string(path)?;
    serde_json::from_str(&raw).map_err(|e| {
        Error::Parse(format!(
            "measure json {}: {e} ({})",
            path.display(),
            parse_context(&e)
        ))
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SummaryFailureJson {
    pub check: String,
    pub location: String,
    pub detail: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CpsSummaryJson {
    pub verdict: String,
    pub eps_target: f64,
    pub eps_working: f64,
    pub worst_band_ratio: f64,
    pub max_martingale_residual: f64,
    pub sampling_residual: f64,
    pub recompute_residual: f64,
    pub overshoot: f64,
    pub expected_density: f64,
    pub failures: Vec<SummaryFailureJson>,
}

impl CpsSummaryJson {
    pub fn from_result(result: &CpsResult, expected_density: f64) -> Self {
        let mut failures = Vec::new();
        for (name, check) in [
            ("band_compensated", &result.band_compensated),
            ("band_next_stop", &result.band_next_stop),
            ("band_shadow", &result.band_shadow),
        ] {
            for f in &check.failures {
                failures.push(SummaryFailureJson {
                    check: name.into(),
                    location: f.location.clone(),
                    detail: format!("asset {} ratio {}", f.asset + 1, f.ratio),
                });
            }
        }
        CpsSummaryJson {
            verdict: if result.verdict { "pass" } else { "fail" }.into(),
            eps_target: result.eps.eps_target,
            eps_working: result.eps.eps_working,
            worst_band_ratio: result.band_shadow.worst_factor(),
            max_martingale_residual: result.martingale.max_residual,
            sampling_residual: result.sampling_residual,
            recompute_residual: result.recompute_residual,
            overshoot: result.overshoot,
            expected_density,
            failures,
        }
    }

    /// Summary for a pipeline that stopped before producing a price system.
    pub fn from_failure(eps_target: f64, err: &PipelineError) -> Self {
        let mut failures = Vec::new();
        match err {
            PipelineError::InvalidTree(violations) => {
                for v in violations {
                    failures.push(SummaryFailureJson {
                        check: "validate_tree".into(),
                        location: format!("node {}", v.node_id),
                        detail: v.message.clone(),
                    });
                }
            }
            PipelineError::Conditions(report) => {
                for f in &report.failures {
                    let (check, location, detail) = match f {
                        ConditionFailure::Support {
                            level,
                            anchor_node,
                            direction,
                            margin,
                            ..
                        } => (
                            "support_condition",
                            format!("level {level} anchor {anchor_node}"),
                            format!("separating direction {direction:?}, margin {margin:.3e}"),
                        ),
                        ConditionFailure::Absorption { scenario, level } => (
                            "absorption_condition",
                            format!("scenario {scenario} level {level}"),
                            "increment revived after vanishing".to_string(),
                        ),
                        ConditionFailure::Revival {
                            level, anchor_node, ..
                        } => (
                            "revival_condition",
                            format!("level {level} anchor {anchor_node}"),
                            "no zero-increment continuation after a move".to_string(),
                        ),
                    };
                    failures.push(SummaryFailureJson {
                        check: check.into(),
                        location,
                        detail,
                    });
                }
            }
            PipelineError::Other(e) => failures.push(SummaryFailureJson {
                check: "pipeline".into(),
                location: String::new(),
                detail: e.to_string(),
            }),
        }
        CpsSummaryJson {
            verdict: "fail".into(),
            eps_target,
            eps_working: adjusted_or_nan(eps_target),
            worst_band_ratio: f64::NAN,
            max_martingale_residual: f64::NAN,
            sampling_residual: f64::NAN,
            recompute_residual: f64::NAN,
            overshoot: f64::NAN,
            expected_density: f64::NAN,
            failures,
        }
    }
}

fn adjusted_or_nan(eps_target: f64) -> f64 {
    crate::cps::adjust_epsilon(eps_target).unwrap_or(f64::NAN)
}

pub fn write_cps_summary(summary: &CpsSummaryJson, path: &Path) -> Result<()> {
    // NaN is not valid JSON; map the absent diagnostics to null via Option.
    #[derive(Serialize)]
    struct Wire<'a> {
        verdict: &'a str,
        eps_target: f64,
        eps_working: Option<f64>,
        worst_band_ratio: Option<f64>,
        max_martingale_residual: Option<f64>,
        sampling_residual: Option<f64>,
        recompute_residual: Option<f64>,
        overshoot: Option<f64>,
        expected_density: Option<f64>,
        failures: &'a [SummaryFailureJson],
    }
    let opt = |v: f64| if v.is_finite() { Some(v) } else { None };
    let wire = Wire {
        verdict: &summary.verdict,
        eps_target: summary.eps_target,
        eps_working: opt(summary.eps_working),
        worst_band_ratio: opt(summary.worst_band_ratio),
        max_martingale_residual: opt(summary.max_martingale_residual),
        sampling_residual: opt(summary.sampling_residual),
        recompute_residual: opt(summary.recompute_residual),
        overshoot: opt(summary.overshoot),
        expected_density: opt(summary.expected_density),
        failures: &summary.failures,
    };
    fs::write(path, to_pretty_json(&wire))?;
    Ok(())
}

#[derive(Debug, Deserialize)]
pub struct CpsSummaryWire {
    pub verdict: String,
    pub eps_target: f64,
    pub eps_working: Option<f64>,
    pub worst_band_ratio: Option<f64>,
    pub max_martingale_residual: Option<f64>,
    pub sampling_residual: Option<f64>,
    pub recompute_residual: Option<f64>,
    pub overshoot: Option<f64>,
    pub expected_density: Option<f64>,
    pub failures: Vec<SummaryFailureJson>,
}

pub fn read_cps_summary(path: &Path) -> Result<CpsSummaryWire> {
    let raw = fs::read_to_string(path)?;
    serde_json::from_str(&raw).map_err(|e| {
        Error::Parse(format!(
            "cps summary {}: {e} ({})",
            path.display(),
            parse_context(&e)
        ))
    })
}

/// Per-node detail table: `node_id,time_index,asset,S,M,ratio`.
pub fn write_cps_nodes_csv(
    tree: &ScenarioTree,
    shadow: &[Vec<f64>],
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node_id", "time_index", "asset", "S", "M", "ratio"])
        .map_err(csv_err)?;
    for node in tree.nodes() {
        for i in 0..node.price.len() {
            let s = node.price[i];
            let m = shadow[node.id][i];
            w.write_record([
                format!("{}", node.id),
                format!("{}", node.time_index),
                format!("{}", i + 1),
                format!("{s}"),
                format!("{m}"),
                format!("{}", m / s),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub struct CpsNodeRow {
    pub node_id: usize,
    pub time_index: usize,
    pub asset: usize,
    pub price: f64,
    pub shadow: f64,
    pub ratio: f64,
}

pub fn read_cps_nodes_csv(path: &Path) -> Result<Vec<CpsNodeRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| {
            Error::Parse(format!(
                "cps nodes csv {} row {}: {e}",
                path.display(),
                row + 2
            ))
        })?;
        if rec.len() != 6 {
            return Err(Error::Parse(format!(
                "cps nodes csv {} row {}: {} fields, expected 6",
                path.display(),
                row + 2,
                rec.len()
            )));
        }
        let parse = |idx: usize| -> Result<f64> {
            rec[idx].parse::<f64>().map_err(|_| {
                Error::Parse(format!(
                    "cps nodes csv {} row {}, field {}: bad number {:?}",
                    path.display(),
                    row + 2,
                    idx + 1,
                    &rec[idx]
                ))
            })
        };
        out.push(CpsNodeRow {
            node_id: rec[0].parse().map_err(|_| {
                Error::Parse(format!(
                    "cps nodes csv {} row {}: bad node_id",
                    path.display(),
                    row + 2
                ))
            })?,
            time_index: rec[1].parse().map_err(|_| {
                Error::Parse(format!(
                    "cps nodes csv {} row {}: bad time_index",
                    path.display(),
                    row + 2
                ))
            })?,
            asset: rec[2].parse().map_err(|_| {
                Error::Parse(format!(
                    "cps nodes csv {} row {}: bad asset",
                    path.display(),
                    row + 2
                ))
            })?,
            price: parse(3)?,
            shadow: parse(4)?,
            ratio: parse(5)?,
        });
    }
    Ok(out)
}

/// Stickiness report CSV: `cell_id,kind,probability,stderr,flag`.
pub fn write_stickiness_csv(report: &StickinessReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell_id", "kind", "probability", "stderr", "flag"])
        .map_err(csv_err)?;
    for c in &report.cells {
        w.write_record([
            format!("{}", c.cell_id),
            c.kind.clone(),
            c.probability.map(|p| format!("{p}")).unwrap_or_default(),
            format!("{}", c.stderr),
            c.flag.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cps::{build_cps_artifacts, CpsOptions};
    use crate::simulate::{build_sticky_tree, gen_brownian, SimConfig, TreeGenConfig};

    #[test]
    fn tree_json_roundtrip() {
        let cfg = TreeGenConfig::binomial_freeze(2, 2, vec![1.0, 2.0], 1.1, 0.9, 0.2);
        let tree = build_sticky_tree(&cfg).unwrap();
        let dir = std::env::temp_dir().join("cpslab_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("tree.json");
        write_tree_json(&tree, &p).unwrap();
        let back = read_tree_json(&p).unwrap();
        assert_eq!(back.nodes().len(), tree.nodes().len());
        for (a, b) in back.nodes().iter().zip(tree.nodes()) {
            assert_eq!(a.price, b.price);
            assert_eq!(a.children, b.children);
        }
    }

    #[test]
    fn paths_csv_roundtrip_and_determinism() {
        let cfg = SimConfig::new(4, 3, 1.0, 2, 42).with_volatility(0.2);
        let ens = gen_brownian(&cfg).unwrap();
        let dir = std::env::temp_dir().join("cpslab_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("paths.csv");
        write_paths_csv(&ens, &p).unwrap();
        let bytes_a = std::fs::read(&p).unwrap();
        write_paths_csv(&ens, &p).unwrap();
        let bytes_b = std::fs::read(&p).unwrap();
        assert_eq!(bytes_a, bytes_b);
        let back = read_paths_csv(&p).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.paths().iter().zip(ens.paths()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn skeleton_measure_summary_write_read() {
        let cfg = TreeGenConfig::binomial_freeze(3, 1, vec![1.0], 1.03, 1.0 / 1.03, 0.25);
        let tree = build_sticky_tree(&cfg).unwrap();
        let art = build_cps_artifacts(&tree, 0.2, CpsOptions::default()).unwrap();
        let dir = std::env::temp_dir().join("cpslab_io_test");
        std::fs::create_dir_all(&dir).unwrap();

        let sp = dir.join("skeleton.json");
        write_skeleton_json(&art.skeleton, &sp).unwrap();
        let sk = read_skeleton_json(&sp).unwrap();
        assert_eq!(sk.levels.len(), art.skeleton.num_levels());

        let mp = dir.join("measure.json");
        write_measure_json(&art.skeleton, &art.measure, &mp).unwrap();
        let m = read_measure_json(&mp).unwrap();
        assert_eq!(m.leaves.len(), tree.num_scenarios());

        let cp = dir.join("cps_result.json");
        let summary = CpsSummaryJson::from_result(&art.result, art.measure.expected_density);
        write_cps_summary(&summary, &cp).unwrap();
        let back = read_cps_summary(&cp).unwrap();
        assert_eq!(back.verdict, "pass");

        let np = dir.join("cps_nodes.csv");
        write_cps_nodes_csv(&tree, &art.result.shadow_price, &np).unwrap();
        let rows = read_cps_nodes_csv(&np).unwrap();
        assert_eq!(rows.len(), tree.nodes().len());
    }
}
