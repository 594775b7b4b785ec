//! Connection-scheme generators.
//!
//! Every scheme is emitted as the same explicit structure: a [`Topology`]
//! whose nodes are the initial convolution (node 0), the feature layers
//! (1..=L), and, for block-compressed variants, one compression node per
//! finished block. Edges are stored as per-consumer input sets; an edge
//! `j ∈ inputs(i)` means layer `i` reads layer `j`'s output directly.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};
use core::fmt;

/// Index of a node in a topology. Node 0 is always the initial convolution.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum NodeKind {
    /// The stem convolution feeding the first feature layer.
    Initial,
    /// A growth-rate-emitting feature layer.
    Feature,
    /// A block-compression summary node (block-compressed scheme only).
    Compression,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub block: u32,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Scheme {
    Dense,
    LogDenseV1,
    LogDenseV2,
    LogLog,
    Nearest,
    EvenlySpaced,
    NearestHalfAndLog,
    FcLogDense,
    /// Hand-built topology (tests, file round-trips).
    Custom,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Dense => "dense",
            Scheme::LogDenseV1 => "logdense-v1",
            Scheme::LogDenseV2 => "logdense-v2",
            Scheme::LogLog => "loglog",
            Scheme::Nearest => "nearest",
            Scheme::EvenlySpaced => "evenly-spaced",
            Scheme::NearestHalfAndLog => "nearest-half-log",
            Scheme::FcLogDense => "fc-logdense",
            Scheme::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Scheme> {
        Some(match s {
            "dense" => Scheme::Dense,
            "logdense-v1" => Scheme::LogDenseV1,
            "logdense-v2" => Scheme::LogDenseV2,
            "loglog" => Scheme::LogLog,
            "nearest" => Scheme::Nearest,
            "evenly-spaced" => Scheme::EvenlySpaced,
            "nearest-half-log" => Scheme::NearestHalfAndLog,
            "fc-logdense" => Scheme::FcLogDense,
            "custom" => Scheme::Custom,
            _ => return None,
        })
    }
}

/// Per-layer input budget for the nearest / evenly-spaced schemes.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Budget {
    /// ⌊log2 i⌋ inputs (at least one).
    Log,
    /// ⌈i/2⌉ inputs.
    Half,
}

impl Budget {
    pub fn name(self) -> &'static str {
        match self {
            Budget::Log => "log",
            Budget::Half => "half",
        }
    }
}

/// Scheme-specific metadata recorded alongside the graph.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ParamValue {
    Int(u64),
    Text(String),
    IntList(Vec<u64>),
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Topology {
    scheme: Scheme,
    num_feature_layers: u32,
    block_sizes: Vec<u32>,
    scheme_params: BTreeMap<String, ParamValue>,
    nodes: Vec<Node>,
    /// Sorted, deduplicated producer lists keyed by consumer.
    inputs: BTreeMap<NodeId, Vec<NodeId>>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum TopologyError {
    /// L must be at least 1.
    EmptyLayers,
    /// Block sizes must be positive and sum to L.
    BlockMismatch { block_sum: u32, layers: u32 },
    /// Scheme needs more blocks than were given.
    TooFewBlocks { needed: u32, got: u32 },
    /// The encoder/decoder scheme needs an odd block count.
    EvenBlockCount { got: u32 },
    /// Anchor must be the last layer of the first block.
    AnchorMismatch { expected: u32, got: u32 },
    /// Structural invariant violated (hand-built topologies).
    Invalid(String),
}

impl fmt::Display for TopologyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyError::EmptyLayers => write!(f, "layer count must be at least 1"),
            TopologyError::BlockMismatch { block_sum, layers } => write!(
                f,
                "block sizes must be positive and sum to the layer count (sum {block_sum}, layers {layers})"
            ),
            TopologyError::TooFewBlocks { needed, got } => {
                write!(f, "scheme requires at least {needed} blocks, got {got}")
            }
            TopologyError::EvenBlockCount { got } => {
                write!(f, "encoder/decoder scheme requires an odd block count, got {got}")
            }
            TopologyError::AnchorMismatch { expected, got } => write!(
                f,
                "anchor must be the last layer of the first block ({expected}), got {got}"
            ),
            TopologyError::Invalid(msg) => write!(f, "invalid topology: {msg}"),
        }
    }
}

impl core::error::Error for TopologyError {}

impl Topology {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Number of feature layers L (excludes the initial node and any
    /// compression nodes).
    pub fn num_feature_layers(&self) -> u32 {
        self.num_feature_layers
    }

    pub fn block_sizes(&self) -> &[u32] {
        &self.block_sizes
    }

    pub fn num_blocks(&self) -> u32 {
        self.block_sizes.len() as u32
    }

    pub fn scheme_params(&self) -> &BTreeMap<String, ParamValue> {
        &self.scheme_params
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> u32 {
        self.nodes.len() as u32
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.0 as usize)
    }

    pub fn block_of(&self, id: NodeId) -> u32 {
        self.nodes[id.0 as usize].block
    }

    pub fn kind_of(&self, id: NodeId) -> NodeKind {
        self.nodes[id.0 as usize].kind
    }

    /// Producers of `id`, ascending. Empty for node 0.
    pub fn inputs_of(&self, id: NodeId) -> &[NodeId] {
        self.inputs.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn input_map(&self) -> &BTreeMap<NodeId, Vec<NodeId>> {
        &self.inputs
    }

    /// All edges as (consumer, producer) pairs, ascending by consumer.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.inputs
            .iter()
            .flat_map(|(c, ps)| ps.iter().map(move |p| (*c, *p)))
    }

    pub fn num_edges(&self) -> u64 {
        self.inputs.values().map(|v| v.len() as u64).sum()
    }

    /// Node ids of the initial node and the feature layers in layer order
    /// (compression nodes excluded). `feature_ids()[k]` is layer k.
    pub fn feature_ids(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.kind != NodeKind::Compression)
            .map(|n| n.id)
            .collect()
    }

    /// Build a topology from raw parts, checking the structural invariants:
    /// contiguous ids, exactly one initial node at 0, acyclic inputs
    /// (producer < consumer), non-empty inputs for non-initial nodes, and
    /// block indices non-decreasing in node id.
    pub fn from_parts(
        scheme: Scheme,
        num_feature_layers: u32,
        block_sizes: Vec<u32>,
        scheme_params: BTreeMap<String, ParamValue>,
        nodes: Vec<Node>,
        inputs: BTreeMap<NodeId, Vec<NodeId>>,
    ) -> Result<Topology, TopologyError> {
        let t = Topology {
            scheme,
            num_feature_layers,
            block_sizes,
            scheme_params,
            nodes,
            inputs,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<(), TopologyError> {
        let invalid = |msg: String| Err(TopologyError::Invalid(msg));
        if self.nodes.is_empty() {
            return invalid(String::from("no nodes"));
        }
        for (idx, n) in self.nodes.iter().enumerate() {
            if n.id.0 as usize != idx {
                return invalid(format!("node ids not contiguous at {}", n.id));
            }
        }
        if self.nodes[0].kind != NodeKind::Initial {
            return invalid(String::from("node 0 must be the initial node"));
        }
        if self.nodes[1..].iter().any(|n| n.kind == NodeKind::Initial) {
            return invalid(String::from("more than one initial node"));
        }
        let n_blocks = self.block_sizes.len() as u32;
        let mut prev_block = 0u32;
        for n in &self.nodes {
            if n.block >= n_blocks.max(1) {
                return invalid(format!("node {} has out-of-range block {}", n.id, n.block));
            }
            if n.block < prev_block {
                return invalid(format!("block index decreases at node {}", n.id));
            }
            prev_block = n.block;
        }
        let feature_count = self
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Feature)
            .count() as u32;
        if feature_count != self.num_feature_layers {
            return invalid(format!(
                "feature node count {} does not match L={}",
                feature_count, self.num_feature_layers
            ));
        }
        for n in &self.nodes {
            let ins = self.inputs_of(n.id);
            match n.kind {
                NodeKind::Initial => {
                    if !ins.is_empty() {
                        return invalid(String::from("initial node must have no inputs"));
                    }
                }
                _ => {
                    if ins.is_empty() {
                        return invalid(format!("node {} has no inputs", n.id));
                    }
                }
            }
            let mut prev: Option<NodeId> = None;
            for &p in ins {
                if p >= n.id {
                    return invalid(format!("edge {} -> {} is not acyclic", n.id, p));
                }
                if p.0 as usize >= self.nodes.len() {
                    return invalid(format!("edge {} -> {} leaves the node set", n.id, p));
                }
                if let Some(q) = prev {
                    if p <= q {
                        return invalid(format!("inputs of {} not sorted/deduplicated", n.id));
                    }
                }
                prev = Some(p);
            }
        }
        for id in self.inputs.keys() {
            if id.0 as usize >= self.nodes.len() {
                return invalid(format!("input map references unknown node {id}"));
            }
        }
        Ok(())
    }
}

fn check_blocks(l: u32, block_sizes: &[u32]) -> Result<(), TopologyError> {
    if l == 0 {
        return Err(TopologyError::EmptyLayers);
    }
    let sum: u32 = block_sizes.iter().sum();
    if block_sizes.is_empty() || block_sizes.contains(&0) || sum != l {
        return Err(TopologyError::BlockMismatch {
            block_sum: sum,
            layers: l,
        });
    }
    Ok(())
}

/// Block index of feature layer `i` (1-based) under `block_sizes`.
fn block_of_layer(i: u32, block_sizes: &[u32]) -> u32 {
    let mut acc = 0u32;
    for (b, &sz) in block_sizes.iter().enumerate() {
        acc += sz;
        if i <= acc {
            return b as u32;
        }
    }
    block_sizes.len() as u32 - 1
}

/// Assemble a plain (initial + feature nodes only) topology from per-layer
/// input sets. `per_layer[i-1]` holds the producers of layer i.
fn assemble_plain(
    scheme: Scheme,
    l: u32,
    block_sizes: Vec<u32>,
    scheme_params: BTreeMap<String, ParamValue>,
    per_layer: Vec<BTreeSet<u32>>,
) -> Topology {
    debug_assert_eq!(per_layer.len() as u32, l);
    let mut nodes = Vec::with_capacity(l as usize + 1);
    nodes.push(Node {
        id: NodeId(0),
        kind: NodeKind::Initial,
        block: 0,
    });
    let mut inputs = BTreeMap::new();
    for i in 1..=l {
        nodes.push(Node {
            id: NodeId(i),
            kind: NodeKind::Feature,
            block: block_of_layer(i, &block_sizes),
        });
        let ins: Vec<NodeId> = per_layer[i as usize - 1].iter().map(|&j| NodeId(j)).collect();
        inputs.insert(NodeId(i), ins);
    }
    let t = Topology {
        scheme,
        num_feature_layers: l,
        block_sizes,
        scheme_params,
        nodes,
        inputs,
    };
    debug_assert!(t.validate().is_ok());
    t
}

/// Offsets of the logarithmic input set of layer `i`: producers
/// `{i - 2^k : k = 0..=⌊log2 i⌋}`, ascending. All entries are >= 0 and
/// pairwise distinct, so the set has exactly ⌊log2 i⌋ + 1 members.
pub fn log_input_set(i: u32) -> Vec<u32> {
    debug_assert!(i >= 1);
    let mut v: Vec<u32> = (0..=i.ilog2()).map(|k| i - (1u32 << k)).collect();
    v.sort_unstable();
    v
}

/// Round-to-nearest with halves away from zero, for non-negative values.
fn round_half_up(x: f64) -> u32 {
    libm::floor(x + 0.5) as u32
}

/// Fully dense connectivity: layer i reads every earlier layer.
pub fn dense_topology(l: u32, block_sizes: &[u32]) -> Result<Topology, TopologyError> {
    check_blocks(l, block_sizes)?;
    let per_layer = (1..=l).map(|i| (0..i).collect()).collect();
    Ok(assemble_plain(
        Scheme::Dense,
        l,
        block_sizes.to_vec(),
        BTreeMap::new(),
        per_layer,
    ))
}

/// Logarithmic connectivity: layer i reads layers exponentially far behind
/// it (offsets 1, 2, 4, ...). Input indices are global across blocks; scale
/// matching across block boundaries is the cost model's concern.
pub fn log_dense_v1(l: u32, block_sizes: &[u32]) -> Result<Topology, TopologyError> {
    check_blocks(l, block_sizes)?;
    let per_layer = (1..=l)
        .map(|i| log_input_set(i).into_iter().collect())
        .collect();
    Ok(assemble_plain(
        Scheme::LogDenseV1,
        l,
        block_sizes.to_vec(),
        BTreeMap::new(),
        per_layer,
    ))
}

/// Compressed channel width for block-compressed topologies: ⌈g·log2 L⌉.
pub fn compressed_width(g: u32, l: u32) -> u32 {
    libm::ceil(g as f64 * libm::log2(l as f64)) as u32
}

/// Block-compressed logarithmic connectivity: each finished block is
/// squeezed into one compression node; feature layers read their
/// logarithmic input set restricted to their own block, plus node 0 and
/// every compression node produced so far.
pub fn log_dense_v2(l: u32, block_sizes: &[u32], g: u32) -> Result<Topology, TopologyError> {
    check_blocks(l, block_sizes)?;
    if block_sizes.len() < 2 {
        return Err(TopologyError::TooFewBlocks {
            needed: 2,
            got: block_sizes.len() as u32,
        });
    }
    let mut nodes = vec![Node {
        id: NodeId(0),
        kind: NodeKind::Initial,
        block: 0,
    }];
    let mut inputs: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    let mut next_id = 1u32;
    let mut layer = 0u32;
    // node id of each feature layer (layer 0 -> node 0)
    let mut node_of_layer = vec![NodeId(0)];
    let mut compression_nodes: Vec<NodeId> = Vec::new();
    for (b, &sz) in block_sizes.iter().enumerate() {
        let first_layer_of_block = layer + 1;
        for _ in 0..sz {
            layer += 1;
            let id = NodeId(next_id);
            next_id += 1;
            node_of_layer.push(id);
            nodes.push(Node {
                id,
                kind: NodeKind::Feature,
                block: b as u32,
            });
            let mut ins: BTreeSet<NodeId> = log_input_set(layer)
                .into_iter()
                .filter(|&j| j >= first_layer_of_block)
                .map(|j| node_of_layer[j as usize])
                .collect();
            ins.insert(NodeId(0));
            ins.extend(compression_nodes.iter().copied());
            inputs.insert(id, ins.into_iter().collect());
        }
        if b + 1 < block_sizes.len() {
            let id = NodeId(next_id);
            next_id += 1;
            nodes.push(Node {
                id,
                kind: NodeKind::Compression,
                block: b as u32,
            });
            let ins: Vec<NodeId> = (first_layer_of_block..=layer)
                .map(|j| node_of_layer[j as usize])
                .collect();
            inputs.insert(id, ins);
            compression_nodes.push(id);
        }
    }
    let mut params = BTreeMap::new();
    params.insert(String::from("g"), ParamValue::Int(g as u64));
    params.insert(
        String::from("compressed_width"),
        ParamValue::Int(compressed_width(g, l) as u64),
    );
    let t = Topology {
        scheme: Scheme::LogDenseV2,
        num_feature_layers: l,
        block_sizes: block_sizes.to_vec(),
        scheme_params: params,
        nodes,
        inputs,
    };
    debug_assert!(t.validate().is_ok());
    Ok(t)
}

/// Nearest-predecessor connectivity with a per-layer budget: layer i reads
/// its closest ⌊log2 i⌋ predecessors (at least one) or its closest ⌈i/2⌉.
pub fn nearest(l: u32, block_sizes: &[u32], budget: Budget) -> Result<Topology, TopologyError> {
    check_blocks(l, block_sizes)?;
    let per_layer = (1..=l)
        .map(|i| {
            let count = match budget {
                Budget::Log => i.ilog2().max(1),
                Budget::Half => i.div_ceil(2),
            };
            (i.saturating_sub(count)..i).collect()
        })
        .collect();
    let mut params = BTreeMap::new();
    params.insert(
        String::from("budget"),
        ParamValue::Text(String::from(budget.name())),
    );
    Ok(assemble_plain(
        Scheme::Nearest,
        l,
        block_sizes.to_vec(),
        params,
        per_layer,
    ))
}

/// Evenly-spaced connectivity: layer i reads ~⌊log2 i⌋ predecessors spread
/// uniformly over its history (spacing i/log2 i, indices rounded), or every
/// other predecessor under the half budget. Rounding collisions are
/// deduplicated, so the log-budget set may have fewer than ⌊log2 i⌋ members.
pub fn evenly_spaced(
    l: u32,
    block_sizes: &[u32],
    budget: Budget,
) -> Result<Topology, TopologyError> {
    check_blocks(l, block_sizes)?;
    let per_layer = (1..=l)
        .map(|i| match budget {
            Budget::Half => (0..i).rev().step_by(2).collect(),
            Budget::Log => {
                if i == 1 {
                    return BTreeSet::from([0u32]);
                }
                let delta = i as f64 / libm::log2(i as f64);
                let mut set = BTreeSet::new();
                let mut k = 0u32;
                while k as f64 * delta <= (i - 1) as f64 {
                    set.insert(round_half_up((i - 1) as f64 - k as f64 * delta));
                    k += 1;
                }
                set
            }
        })
        .collect();
    let mut params = BTreeMap::new();
    params.insert(
        String::from("budget"),
        ParamValue::Text(String::from(budget.name())),
    );
    Ok(assemble_plain(
        Scheme::EvenlySpaced,
        l,
        block_sizes.to_vec(),
        params,
        per_layer,
    ))
}

/// Half-dense connectivity with a logarithmic tail: layer i reads its
/// nearest ⌈i/2⌉ predecessors plus the halving chain ⌊i/4⌉, ⌊i/8⌉, ...
/// down to 0.
pub fn nearest_half_and_log(l: u32, block_sizes: &[u32]) -> Result<Topology, TopologyError> {
    check_blocks(l, block_sizes)?;
    let per_layer = (1..=l)
        .map(|i| {
            let mut set: BTreeSet<u32> = (i - i.div_ceil(2)..i).collect();
            let mut div = 4u64;
            loop {
                let r = round_half_up(i as f64 / div as f64);
                set.insert(r);
                if r == 0 {
                    break;
                }
                div *= 2;
            }
            set
        })
        .collect();
    Ok(assemble_plain(
        Scheme::NearestHalfAndLog,
        l,
        block_sizes.to_vec(),
        BTreeMap::new(),
        per_layer,
    ))
}

/// Edge accumulator for the doubly-logarithmic recursion:
/// (consumer, producer) pairs with consumer > producer.
pub type EdgeSet = BTreeSet<(u32, u32)>;

/// Key locations of one recursion level over [s, t]: s together with
/// every t − k·δ that stays >= s, where δ = ⌊√(t−s+1)⌋. Requires t−s >= 2.
fn key_locations(s: u32, t: u32) -> Vec<u32> {
    debug_assert!(t - s >= 2);
    let delta = ((t - s + 1) as u64).isqrt() as u32;
    let mut k: Vec<u32> = Vec::new();
    k.push(s);
    let mut x = t;
    loop {
        k.push(x);
        if x < s + delta {
            break;
        }
        x -= delta;
    }
    k.sort_unstable();
    k.dedup();
    k
}

/// One level of the doubly-logarithmic recursion over [s, t] without the
/// recursive descent: all-pairs edges among the key locations, and an edge
/// from each key location to every layer up to the next one. Exposed so the
/// per-call edge-count formula can be verified in isolation.
pub fn lglg_level(s: u32, t: u32, edges: &mut EdgeSet) {
    if t - s <= 1 {
        return;
    }
    let k = key_locations(s, t);
    for (i, &a) in k.iter().enumerate() {
        for &b in &k[i + 1..] {
            edges.insert((b, a));
        }
    }
    for w in k.windows(2) {
        for j in w[0] + 1..=w[1] {
            edges.insert((j, w[0]));
        }
    }
}

fn lglg_recurse(s: u32, t: u32, edges: &mut EdgeSet, with_span_edges: bool) {
    if t - s <= 1 {
        return;
    }
    let k = key_locations(s, t);
    for (i, &a) in k.iter().enumerate() {
        for &b in &k[i + 1..] {
            edges.insert((b, a));
        }
    }
    if with_span_edges {
        for w in k.windows(2) {
            for j in w[0] + 1..=w[1] {
                edges.insert((j, w[0]));
            }
        }
    }
    for w in k.windows(2) {
        lglg_recurse(w[0], w[1], edges, with_span_edges);
    }
}

/// Doubly-logarithmic recursive connection pattern over layers [s, t].
/// Exits when t−s <= 1; otherwise adds one level of edges (see
/// [`lglg_level`]) and recurses on each consecutive pair of key locations.
pub fn lglg_conn(s: u32, t: u32, edges: &mut EdgeSet) {
    lglg_recurse(s, t, edges, true);
}

/// Options for [`loglog_topology_with`]. `span_edges: false` drops the
/// per-level "key location feeds its whole segment" edges, leaving only the
/// all-pairs and recursive edges (used to measure how much those span
/// edges buy in distance).
#[derive(Clone, Copy, Debug)]
pub struct LogLogOptions {
    pub min_inputs: u32,
    pub span_edges: bool,
}

/// Doubly-logarithmic topology: chain edges i−1 → i, the recursive pattern
/// from [`lglg_conn`] over [0, L], then a per-layer top-up that walks each
/// layer's logarithmic input set nearest-to-farthest until the layer has
/// `min_inputs` inputs or no candidates remain. The root level's key
/// locations are recorded as the hub set (empty for L <= 2, where the
/// spacing degenerates to 1 and every node would be a hub).
pub fn loglog_topology(
    l: u32,
    block_sizes: &[u32],
    min_inputs: u32,
) -> Result<Topology, TopologyError> {
    loglog_topology_with(
        l,
        block_sizes,
        LogLogOptions {
            min_inputs,
            span_edges: true,
        },
    )
}

/// See [`loglog_topology`].
pub fn loglog_topology_with(
    l: u32,
    block_sizes: &[u32],
    opts: LogLogOptions,
) -> Result<Topology, TopologyError> {
    check_blocks(l, block_sizes)?;
    if opts.min_inputs == 0 {
        return Err(TopologyError::Invalid(String::from(
            "min_inputs must be at least 1",
        )));
    }
    let mut edges = EdgeSet::new();
    for i in 1..=l {
        edges.insert((i, i - 1));
    }
    lglg_recurse(0, l, &mut edges, opts.span_edges);
    let mut per_layer: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); l as usize];
    for (c, p) in edges {
        per_layer[c as usize - 1].insert(p);
    }
    for i in 1..=l {
        let set = &mut per_layer[i as usize - 1];
        if set.len() >= opts.min_inputs as usize {
            continue;
        }
        for j in log_input_set(i).into_iter().rev() {
            set.insert(j);
            if set.len() >= opts.min_inputs as usize {
                break;
            }
        }
    }
    let hubs: Vec<u64> = if l >= 3 {
        key_locations(0, l).into_iter().map(u64::from).collect()
    } else {
        Vec::new()
    };
    let mut params = BTreeMap::new();
    params.insert(String::from("hubs"), ParamValue::IntList(hubs));
    params.insert(
        String::from("min_inputs"),
        ParamValue::Int(opts.min_inputs as u64),
    );
    params.insert(
        String::from("span_edges"),
        ParamValue::Int(opts.span_edges as u64),
    );
    Ok(assemble_plain(
        Scheme::LogLog,
        l,
        block_sizes.to_vec(),
        params,
        per_layer,
    ))
}

/// Root-level key locations for a doubly-logarithmic topology of L layers
/// (the hub set). Empty for L <= 2.
pub fn loglog_hubs(l: u32) -> Vec<u32> {
    if l >= 3 {
        key_locations(0, l)
    } else {
        Vec::new()
    }
}

/// Resolution level of each block in an encoder/decoder stack of `n_blocks`
/// blocks (odd count): levels rise to ⌊n/2⌋ at the middle block and fall
/// back symmetrically.
pub fn fc_block_levels(n_blocks: u32) -> Vec<u32> {
    (0..n_blocks).map(|b| b.min(n_blocks - 1 - b)).collect()
}

/// Encoder/decoder topology with logarithmic inputs plus a single anchor:
/// the last layer of the first block feeds every later layer. Blocks after
/// the first ⌊n/2⌋ boundaries downsample; the rest upsample back.
pub fn fc_log_dense_topology(block_sizes: &[u32], anchor: u32) -> Result<Topology, TopologyError> {
    let l: u32 = block_sizes.iter().sum();
    check_blocks(l.max(1), block_sizes)?;
    if block_sizes.len() % 2 == 0 {
        return Err(TopologyError::EvenBlockCount {
            got: block_sizes.len() as u32,
        });
    }
    if anchor != block_sizes[0] {
        return Err(TopologyError::AnchorMismatch {
            expected: block_sizes[0],
            got: anchor,
        });
    }
    let per_layer = (1..=l)
        .map(|i| {
            let mut set: BTreeSet<u32> = log_input_set(i).into_iter().collect();
            if i > anchor {
                set.insert(anchor);
            }
            set
        })
        .collect();
    let mut params = BTreeMap::new();
    params.insert(String::from("anchor"), ParamValue::Int(anchor as u64));
    params.insert(
        String::from("levels"),
        ParamValue::IntList(
            fc_block_levels(block_sizes.len() as u32)
                .into_iter()
                .map(u64::from)
                .collect(),
        ),
    );
    Ok(assemble_plain(
        Scheme::FcLogDense,
        l,
        block_sizes.to_vec(),
        params,
        per_layer,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_input_set_examples() {
        assert_eq!(log_input_set(7), vec![3, 5, 6]);
        assert_eq!(log_input_set(1), vec![0]);
        assert_eq!(log_input_set(4), vec![0, 2, 3]);
    }

    #[test]
    fn key_locations_example() {
        // span [0,24]: spacing ⌊√25⌋ = 5
        assert_eq!(key_locations(0, 24), vec![0, 4, 9, 14, 19, 24]);
        assert_eq!(key_locations(0, 16), vec![0, 4, 8, 12, 16]);
        assert_eq!(key_locations(0, 2), vec![0, 1, 2]);
    }

    #[test]
    fn dense_edge_count() {
        let t = dense_topology(4, &[4]).unwrap();
        assert_eq!(t.num_edges(), 10);
    }

    #[test]
    fn degenerate_small_layers() {
        let t = nearest(1, &[1], Budget::Log).unwrap();
        assert_eq!(t.inputs_of(NodeId(1)), &[NodeId(0)]);
        let t = evenly_spaced(1, &[1], Budget::Log).unwrap();
        assert_eq!(t.inputs_of(NodeId(1)), &[NodeId(0)]);
    }
}
