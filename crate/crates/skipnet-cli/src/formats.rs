//! File formats: the topology JSON interchange format (stable field order,
//! byte-deterministic), a DOT export, and adjacency-matrix renderings (PGM
//! plain/binary and ASCII art).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};
use skipnet_core::topology::{Node, NodeId, NodeKind, ParamValue, Scheme, Topology};

fn kind_name(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::Initial => "initial",
        NodeKind::Feature => "feature",
        NodeKind::Compression => "compression",
    }
}

fn kind_parse(s: &str) -> Option<NodeKind> {
    Some(match s {
        "initial" => NodeKind::Initial,
        "feature" => NodeKind::Feature,
        "compression" => NodeKind::Compression,
        _ => return None,
    })
}

pub fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

fn join_u32<I: IntoIterator<Item = u32>>(items: I) -> String {
    let mut s = String::new();
    for (i, v) in items.into_iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{v}");
    }
    s
}

fn param_value_json(v: &ParamValue) -> String {
    match v {
        ParamValue::Int(n) => format!("{n}"),
        ParamValue::Text(t) => format!("\"{}\"", json_escape(t)),
        ParamValue::IntList(list) => {
            let mut s = String::from("[");
            for (i, n) in list.iter().enumerate() {
                if i > 0 {
                    s.push_str(", ");
                }
                let _ = write!(s, "{n}");
            }
            s.push(']');
            s
        }
    }
}

/// Serialize a topology with a stable field order and stable key order, so
/// identical topologies always produce identical bytes.
pub fn topology_to_json(t: &Topology) -> String {
    let mut s = String::new();
    s.push_str("{\n");
    let _ = writeln!(s, "  \"scheme\": \"{}\",", t.scheme().name());
    let _ = writeln!(s, "  \"L\": {},", t.num_feature_layers());
    let _ = writeln!(
        s,
        "  \"block_sizes\": [{}],",
        join_u32(t.block_sizes().iter().copied())
    );
    if t.scheme_params().is_empty() {
        s.push_str("  \"scheme_params\": {},\n");
    } else {
        s.push_str("  \"scheme_params\": {\n");
        let n = t.scheme_params().len();
        for (i, (k, v)) in t.scheme_params().iter().enumerate() {
            let comma = if i + 1 < n { "," } else { "" };
            let _ = writeln!(s, "    \"{}\": {}{}", json_escape(k), param_value_json(v), comma);
        }
        s.push_str("  },\n");
    }
    s.push_str("  \"nodes\": [\n");
    let n_nodes = t.nodes().len();
    for (i, node) in t.nodes().iter().enumerate() {
        let comma = if i + 1 < n_nodes { "," } else { "" };
        let _ = writeln!(
            s,
            "    {{\"id\": {}, \"kind\": \"{}\", \"block\": {}}}{}",
            node.id,
            kind_name(node.kind),
            node.block,
            comma
        );
    }
    s.push_str("  ],\n");
    s.push_str("  \"inputs\": {\n");
    let n_in = t.input_map().len();
    for (i, (id, producers)) in t.input_map().iter().enumerate() {
        let comma = if i + 1 < n_in { "," } else { "" };
        let _ = writeln!(
            s,
            "    \"{}\": [{}]{}",
            id,
            join_u32(producers.iter().map(|p| p.0)),
            comma
        );
    }
    s.push_str("  }\n");
    s.push_str("}\n");
    s
}

fn as_u64(v: &serde_json::Value, what: &str) -> Result<u64> {
    v.as_u64().with_context(|| format!("{what}: expected a non-negative integer"))
}

fn as_u32(v: &serde_json::Value, what: &str) -> Result<u32> {
    let n = as_u64(v, what)?;
    u32::try_from(n).with_context(|| format!("{what}: {n} out of range"))
}

/// Parse the JSON interchange format back into a validated topology.
pub fn topology_from_json(text: &str) -> Result<Topology> {
    let v: serde_json::Value =
        serde_json::from_str(text).context("topology file is not valid JSON")?;
    let obj = v.as_object().context("topology file: expected a JSON object")?;
    let scheme_name = obj
        .get("scheme")
        .and_then(|x| x.as_str())
        .context("topology file: missing string field \"scheme\"")?;
    let scheme = Scheme::parse(scheme_name)
        .ok_or_else(|| anyhow!("topology file: unknown scheme \"{scheme_name}\""))?;
    let layers = as_u32(
        obj.get("L").context("topology file: missing field \"L\"")?,
        "field \"L\"",
    )?;
    let block_sizes: Vec<u32> = obj
        .get("block_sizes")
        .and_then(|x| x.as_array())
        .context("topology file: missing array field \"block_sizes\"")?
        .iter()
        .map(|x| as_u32(x, "block size"))
        .collect::<Result<_>>()?;

    let mut scheme_params = BTreeMap::new();
    if let Some(params) = obj.get("scheme_params") {
        let map = params
            .as_object()
            .context("topology file: \"scheme_params\" must be an object")?;
        for (k, pv) in map {
            let value = match pv {
                serde_json::Value::String(t) => ParamValue::Text(t.clone()),
                serde_json::Value::Number(_) => ParamValue::Int(as_u64(pv, "scheme parameter")?),
                serde_json::Value::Array(items) => ParamValue::IntList(
                    items
                        .iter()
                        .map(|x| as_u64(x, "scheme parameter list entry"))
                        .collect::<Result<_>>()?,
                ),
                _ => bail!("topology file: scheme parameter \"{k}\" has an unsupported type"),
            };
            scheme_params.insert(k.clone(), value);
        }
    }

    let mut nodes = Vec::new();
    for entry in obj
        .get("nodes")
        .and_then(|x| x.as_array())
        .context("topology file: missing array field \"nodes\"")?
    {
        let node = entry
            .as_object()
            .context("topology file: node entries must be objects")?;
        let id = as_u32(node.get("id").context("node: missing \"id\"")?, "node id")?;
        let kind_str = node
            .get("kind")
            .and_then(|x| x.as_str())
            .context("node: missing string \"kind\"")?;
        let kind = kind_parse(kind_str)
            .ok_or_else(|| anyhow!("node {id}: unknown kind \"{kind_str}\""))?;
        let block = as_u32(
            node.get("block").context("node: missing \"block\"")?,
            "node block",
        )?;
        nodes.push(Node {
            id: NodeId(id),
            kind,
            block,
        });
    }

    let mut inputs: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    if let Some(map) = obj.get("inputs") {
        let map = map
            .as_object()
            .context("topology file: \"inputs\" must be an object")?;
        for (k, list) in map {
            let id: u32 = k
                .parse()
                .with_context(|| format!("inputs: key \"{k}\" is not a node id"))?;
            let producers: Vec<NodeId> = list
                .as_array()
                .with_context(|| format!("inputs of node {id} must be an array"))?
                .iter()
                .map(|x| as_u32(x, "producer id").map(NodeId))
                .collect::<Result<_>>()?;
            inputs.insert(NodeId(id), producers);
        }
    }

    Topology::from_parts(scheme, layers, block_sizes, scheme_params, nodes, inputs)
        .map_err(|e| anyhow!("topology file failed validation: {e}"))
}

/// GraphViz export: one node per layer, one directed edge per connection,
/// pointing from consumer to producer. Compression nodes are drawn as boxes.
pub fn topology_to_dot(t: &Topology) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "digraph \"{}-L{}\" {{", t.scheme().name(), t.num_feature_layers());
    s.push_str("  rankdir=LR;\n");
    s.push_str("  node [shape=circle, fontsize=10];\n");
    for node in t.nodes() {
        match node.kind {
            NodeKind::Compression => {
                let _ = writeln!(
                    s,
                    "  n{} [label=\"{}\", shape=box, style=filled, fillcolor=lightgray];",
                    node.id, node.id
                );
            }
            _ => {
                let _ = writeln!(s, "  n{} [label=\"{}\"];", node.id, node.id);
            }
        }
    }
    for (consumer, producers) in t.input_map() {
        for p in producers {
            let _ = writeln!(s, "  n{consumer} -> n{p};");
        }
    }
    s.push_str("}\n");
    s
}

/// Build the N x N adjacency raster: row = consumer, column = producer,
/// true where the consumer reads the producer. Row 0 (the initial node) and
/// the upper triangle stay empty.
fn adjacency(t: &Topology) -> (usize, Vec<bool>) {
    let n = t.num_nodes() as usize;
    let mut cells = vec![false; n * n];
    for (consumer, producers) in t.input_map() {
        for p in producers {
            cells[consumer.0 as usize * n + p.0 as usize] = true;
        }
    }
    (n, cells)
}

/// Plain-text PGM (P2): connections are black (0) on a white background.
pub fn render_pgm_plain(t: &Topology) -> String {
    let (n, cells) = adjacency(t);
    let mut s = String::new();
    s.push_str("P2\n");
    let _ = writeln!(s, "# {}-L{} adjacency: row consumes column", t.scheme().name(), t.num_feature_layers());
    let _ = writeln!(s, "{n} {n}");
    s.push_str("255\n");
    for row in 0..n {
        for col in 0..n {
            if col > 0 {
                s.push(' ');
            }
            s.push_str(if cells[row * n + col] { "0" } else { "255" });
        }
        s.push('\n');
    }
    s
}

/// Binary PGM (P5), same raster as [`render_pgm_plain`].
pub fn render_pgm_binary(t: &Topology) -> Vec<u8> {
    let (n, cells) = adjacency(t);
    let mut out = Vec::with_capacity(n * n + 32);
    out.extend_from_slice(format!("P5\n{n} {n}\n255\n").as_bytes());
    out.extend(cells.iter().map(|&black| if black { 0u8 } else { 255u8 }));
    out
}

/// ASCII-art adjacency matrix: `#` where the row consumes the column.
pub fn render_ascii(t: &Topology) -> String {
    let (n, cells) = adjacency(t);
    let mut s = String::with_capacity(n * (n + 1));
    for row in 0..n {
        for col in 0..n {
            s.push(if cells[row * n + col] { '#' } else { '.' });
        }
        s.push('\n');
    }
    s
}
