//! Distance and degree analysis over topologies.
//!
//! The central quantity is the backpropagation distance BD(i, j): the length
//! of the shortest directed path from consumer i to producer j following
//! input edges. Compression nodes may appear inside paths (each one costs a
//! hop) but distances are only reported between the initial node and
//! feature layers.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};
use core::fmt;

use crate::topology::{
    loglog_hubs, loglog_topology_with, LogLogOptions, NodeId, NodeKind, ParamValue, Scheme,
    Topology, TopologyError,
};

#[derive(Clone, Copy, Debug)]
pub struct BdQuery {
    /// Consumer side (larger index).
    pub from: NodeId,
    /// Producer side (smaller index).
    pub to: NodeId,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum AnalysisError {
    BadQuery(String),
    /// No directed path exists; the built-in generators never produce this.
    Unreachable { from: NodeId, to: NodeId },
    WrongScheme { expected: Scheme, got: Scheme },
    Topology(TopologyError),
    /// Recorded hub metadata disagrees with recomputation.
    HubMismatch,
}

impl fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalysisError::BadQuery(msg) => write!(f, "bad query: {msg}"),
            AnalysisError::Unreachable { from, to } => {
                write!(f, "no path from {from} to {to}")
            }
            AnalysisError::WrongScheme { expected, got } => write!(
                f,
                "operation requires scheme {}, got {}",
                expected.name(),
                got.name()
            ),
            AnalysisError::Topology(e) => write!(f, "{e}"),
            AnalysisError::HubMismatch => write!(f, "recorded hub set disagrees with recomputation"),
        }
    }
}

impl core::error::Error for AnalysisError {}

impl From<TopologyError> for AnalysisError {
    fn from(e: TopologyError) -> Self {
        AnalysisError::Topology(e)
    }
}

const UNREACHED: u32 = u32::MAX;

/// Distances from `src` to every node reachable along input edges.
/// Entry `UNREACHED` marks unreachable nodes.
fn bfs_from(topo: &Topology, src: NodeId) -> Vec<u32> {
    let n = topo.num_nodes() as usize;
    let mut dist = vec![UNREACHED; n];
    dist[src.0 as usize] = 0;
    // Input edges always point to smaller ids, so a monotone worklist
    // scanned high-to-low visits nodes in BFS order without a queue.
    let mut frontier = vec![src];
    let mut next = Vec::new();
    let mut d = 0u32;
    while !frontier.is_empty() {
        d += 1;
        for &u in &frontier {
            for &p in topo.inputs_of(u) {
                let slot = &mut dist[p.0 as usize];
                if *slot == UNREACHED {
                    *slot = d;
                    next.push(p);
                }
            }
        }
        core::mem::swap(&mut frontier, &mut next);
        next.clear();
    }
    dist
}

/// Hop counts from `src` to every node along input edges; `None` marks
/// nodes `src` cannot reach backwards.
pub fn distances_from(topo: &Topology, src: NodeId) -> Vec<Option<u32>> {
    bfs_from(topo, src)
        .into_iter()
        .map(|d| if d == UNREACHED { None } else { Some(d) })
        .collect()
}

/// Shortest path length from `q.from` to `q.to` along input edges.
pub fn backprop_distance(topo: &Topology, q: BdQuery) -> Result<u32, AnalysisError> {
    let n = topo.num_nodes();
    if q.from.0 >= n || q.to.0 >= n {
        return Err(AnalysisError::BadQuery(format!(
            "node out of range (have {n} nodes)"
        )));
    }
    if q.from <= q.to {
        return Err(AnalysisError::BadQuery(String::from(
            "query must go from a later node to an earlier one",
        )));
    }
    let dist = bfs_from(topo, q.from);
    match dist[q.to.0 as usize] {
        UNREACHED => Err(AnalysisError::Unreachable {
            from: q.from,
            to: q.to,
        }),
        d => Ok(d),
    }
}

/// Exhaustive distance summary over ordered pairs of the initial node and
/// the feature layers (compression nodes contribute hops but are not
/// endpoints).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BdReport {
    pub mbd: u32,
    pub witness_pair: (NodeId, NodeId),
    pub distance_histogram: BTreeMap<u32, u64>,
    /// Mean BD as an exact ratio: sum of distances / number of pairs.
    pub distance_sum: u64,
    pub pair_count: u64,
}

impl BdReport {
    pub fn mean_bd(&self) -> f64 {
        self.distance_sum as f64 / self.pair_count as f64
    }
}

/// All-pairs BD by BFS from every endpoint node.
pub fn mbd(topo: &Topology) -> Result<BdReport, AnalysisError> {
    let endpoints = topo.feature_ids();
    let mut histogram: BTreeMap<u32, u64> = BTreeMap::new();
    let mut best = 0u32;
    let mut witness = (NodeId(0), NodeId(0));
    let mut sum = 0u64;
    let mut pairs = 0u64;
    for (idx, &i) in endpoints.iter().enumerate() {
        if idx == 0 {
            continue;
        }
        let dist = bfs_from(topo, i);
        for &j in &endpoints[..idx] {
            let d = dist[j.0 as usize];
            if d == UNREACHED {
                return Err(AnalysisError::Unreachable { from: i, to: j });
            }
            *histogram.entry(d).or_insert(0) += 1;
            sum += d as u64;
            pairs += 1;
            if d > best {
                best = d;
                witness = (i, j);
            }
        }
    }
    Ok(BdReport {
        mbd: best,
        witness_pair: witness,
        distance_histogram: histogram,
        distance_sum: sum,
        pair_count: pairs,
    })
}

/// In/out-degree summary. The mean is taken over feature layers (the
/// initial node has no inputs and compression nodes are bookkeeping, not
/// layers), while totals and maxima cover every node.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct DegreeStats {
    pub total_edges: u64,
    pub max_in_degree: u32,
    pub max_out_degree: u32,
    /// Mean in-degree numerator: summed input count of feature layers.
    pub feature_in_sum: u64,
    /// Mean in-degree denominator: number of feature layers.
    pub feature_count: u64,
}

impl DegreeStats {
    pub fn mean_in_degree(&self) -> f64 {
        self.feature_in_sum as f64 / self.feature_count as f64
    }
}

pub fn degree_stats(topo: &Topology) -> DegreeStats {
    let n = topo.num_nodes() as usize;
    let mut out_deg = vec![0u32; n];
    let mut total = 0u64;
    let mut max_in = 0u32;
    let mut feature_sum = 0u64;
    for node in topo.nodes() {
        let ins = topo.inputs_of(node.id);
        total += ins.len() as u64;
        max_in = max_in.max(ins.len() as u32);
        if node.kind == NodeKind::Feature {
            feature_sum += ins.len() as u64;
        }
        for &p in ins {
            out_deg[p.0 as usize] += 1;
        }
    }
    DegreeStats {
        total_edges: total,
        max_in_degree: max_in,
        max_out_degree: out_deg.iter().copied().max().unwrap_or(0),
        feature_in_sum: feature_sum,
        feature_count: topo.num_feature_layers() as u64,
    }
}

/// ⌈log2 x⌉ for x >= 1.
pub fn ceil_log2(x: u32) -> u32 {
    debug_assert!(x >= 1);
    if x <= 1 {
        0
    } else {
        32 - (x - 1).leading_zeros()
    }
}

/// log2(log2(L)) for L >= 3.
pub fn log2_log2(l: u32) -> f64 {
    libm::log2(libm::log2(l as f64))
}

/// Result of checking the logarithmic scheme's distance bound
/// BD(i, j) <= ⌈log2 |i−j|⌉ + n_block over every ordered pair.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Prop1Report {
    pub layers: u32,
    pub n_block: u32,
    pub pairs_checked: u64,
    pub violations: u64,
    pub worst_pair: Option<(NodeId, NodeId)>,
    /// Maximum of distance − bound over all pairs (<= 0 when passing).
    pub max_slack: i64,
    pub pass: bool,
}

/// Exhaustively verify the distance bound on a logarithmic-connectivity
/// topology. Transitions stay out of the graph; the n_block term in the
/// bound is the slack that absorbs them.
pub fn verify_prop1(topo: &Topology) -> Result<Prop1Report, AnalysisError> {
    if topo.scheme() != Scheme::LogDenseV1 {
        return Err(AnalysisError::WrongScheme {
            expected: Scheme::LogDenseV1,
            got: topo.scheme(),
        });
    }
    let n_block = topo.num_blocks();
    let endpoints = topo.feature_ids();
    let mut pairs = 0u64;
    let mut violations = 0u64;
    let mut worst: Option<(NodeId, NodeId)> = None;
    let mut max_slack = i64::MIN;
    for (idx, &i) in endpoints.iter().enumerate() {
        if idx == 0 {
            continue;
        }
        let dist = bfs_from(topo, i);
        for &j in &endpoints[..idx] {
            let d = dist[j.0 as usize];
            if d == UNREACHED {
                return Err(AnalysisError::Unreachable { from: i, to: j });
            }
            let bound = ceil_log2(i.0 - j.0) + n_block;
            let slack = d as i64 - bound as i64;
            pairs += 1;
            if slack > max_slack {
                max_slack = slack;
                worst = Some((i, j));
            }
            if slack > 0 {
                violations += 1;
            }
        }
    }
    Ok(Prop1Report {
        layers: topo.num_feature_layers(),
        n_block,
        pairs_checked: pairs,
        violations,
        worst_pair: worst,
        max_slack,
        pass: violations == 0,
    })
}

/// One row of the connection-budget sweep for the doubly-logarithmic
/// scheme (single block).
#[derive(Clone, PartialEq, Debug)]
pub struct Prop2Row {
    pub layers: u32,
    /// Total connections of the min_inputs=1 topology.
    pub edges: u64,
    /// Reference term 1.5·L·log2 log2 L.
    pub edge_reference: f64,
    /// edges − edge_reference.
    pub residual: f64,
    /// Acceptance bound: edges <= edge_reference + 3·L.
    pub edges_pass: bool,
    pub mbd: u32,
    /// ⌈log2 log2 L⌉ + n_block + 1 with n_block = 1.
    pub mbd_bound: u32,
    pub mbd_pass: bool,
    /// MBD with the per-level span edges removed.
    pub mbd_without_span: u32,
    /// 2 + 2·⌈log2 log2 L⌉ + n_block − 1 with n_block = 1.
    pub without_span_bound: u32,
    pub without_span_pass: bool,
}

impl Prop2Row {
    pub fn pass(&self) -> bool {
        self.edges_pass && self.mbd_pass && self.without_span_pass
    }
}

/// Sweep the doubly-logarithmic construction over the given layer counts,
/// measuring its connection count against 1.5·L·log2 log2 L and its MBD
/// against ⌈log2 log2 L⌉ + 2 (and, without span edges, 2 + 2⌈log2 log2 L⌉).
pub fn verify_prop2(l_values: &[u32]) -> Result<Vec<Prop2Row>, AnalysisError> {
    let mut rows = Vec::with_capacity(l_values.len());
    for &l in l_values {
        if l < 4 {
            return Err(AnalysisError::BadQuery(format!(
                "sweep needs L >= 4 so log2 log2 L is defined, got {l}"
            )));
        }
        let topo = loglog_topology_with(
            l,
            &[l],
            LogLogOptions {
                min_inputs: 1,
                span_edges: true,
            },
        )?;
        let lglg = log2_log2(l);
        let edges = topo.num_edges();
        let edge_reference = 1.5 * l as f64 * lglg;
        let report = mbd(&topo)?;
        let mbd_bound = libm::ceil(lglg) as u32 + 2;
        let without_span = loglog_topology_with(
            l,
            &[l],
            LogLogOptions {
                min_inputs: 1,
                span_edges: false,
            },
        )?;
        let report_ws = mbd(&without_span)?;
        let without_span_bound = 2 + 2 * libm::ceil(lglg) as u32;
        rows.push(Prop2Row {
            layers: l,
            edges,
            edge_reference,
            residual: edges as f64 - edge_reference,
            edges_pass: (edges as f64) <= edge_reference + 3.0 * l as f64,
            mbd: report.mbd,
            mbd_bound,
            mbd_pass: report.mbd <= mbd_bound,
            mbd_without_span: report_ws.mbd,
            without_span_bound,
            without_span_pass: report_ws.mbd <= without_span_bound,
        });
    }
    Ok(rows)
}

/// Hub layers of a doubly-logarithmic topology: the root recursion level's
/// key locations. Cross-checks the recorded metadata against recomputation.
pub fn hubs(topo: &Topology) -> Result<Vec<NodeId>, AnalysisError> {
    if topo.scheme() != Scheme::LogLog {
        return Err(AnalysisError::WrongScheme {
            expected: Scheme::LogLog,
            got: topo.scheme(),
        });
    }
    let recomputed = loglog_hubs(topo.num_feature_layers());
    match topo.scheme_params().get("hubs") {
        Some(ParamValue::IntList(recorded)) => {
            if recorded.len() == recomputed.len()
                && recorded
                    .iter()
                    .zip(&recomputed)
                    .all(|(&a, &b)| a == b as u64)
            {
                Ok(recomputed.into_iter().map(NodeId).collect())
            } else {
                Err(AnalysisError::HubMismatch)
            }
        }
        _ => Err(AnalysisError::HubMismatch),
    }
}

/// Mean in-degree of the doubly-logarithmic topology for a range of depths:
/// returns (L, edges, mean) rows for min_inputs of 1 and the requested
/// alternative. Used by the degree-curve verifier.
pub fn loglog_degree_sweep(
    l_from: u32,
    l_to: u32,
    alt_min_inputs: u32,
) -> Result<Vec<(u32, DegreeStats, DegreeStats)>, AnalysisError> {
    let mut rows = Vec::new();
    for l in l_from..=l_to {
        let base = loglog_topology_with(
            l,
            &[l],
            LogLogOptions {
                min_inputs: 1,
                span_edges: true,
            },
        )?;
        let alt = loglog_topology_with(
            l,
            &[l],
            LogLogOptions {
                min_inputs: alt_min_inputs,
                span_edges: true,
            },
        )?;
        rows.push((l, degree_stats(&base), degree_stats(&alt)));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{dense_topology, log_dense_v1};

    #[test]
    fn dense_distances_are_one() {
        let t = dense_topology(8, &[8]).unwrap();
        let r = mbd(&t).unwrap();
        assert_eq!(r.mbd, 1);
        assert_eq!(r.pair_count, 9 * 8 / 2);
    }

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(63), 6);
        assert_eq!(ceil_log2(64), 6);
        assert_eq!(ceil_log2(65), 7);
    }

    #[test]
    fn log_distance_shortcut() {
        // 17 reaches 1 via offset 16, then 0 by the chain edge.
        let t = log_dense_v1(64, &[64]).unwrap();
        let d = backprop_distance(
            &t,
            BdQuery {
                from: NodeId(17),
                to: NodeId(0),
            },
        )
        .unwrap();
        assert_eq!(d, 2);
    }
}
