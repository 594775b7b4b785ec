//! Channel bookkeeping and FLOP/parameter accounting.
//!
//! A [`Topology`] plus a [`NetworkConfig`] is turned into a [`NetworkPlan`]:
//! an explicit schedule of parameterized ops (convs, pools, norms, heads)
//! with concrete channel counts and resolutions. Costing then reduces to
//! summing per-op formulas, and the desk-scale reference net allocates its
//! parameters from the very same schedule, so the two routes can be checked
//! against each other exactly.
//!
//! Conventions (also stamped into every [`CostReport`]):
//! - A standard convolution costs H·W·C_in·C_out·k² multiply-accumulates at
//!   its *output* resolution; a transposed convolution costs the same
//!   formula at its *input* resolution (each input pixel drives k²
//!   multiplies; counting at the output resolution would bill the
//!   structural zeros of the stride-2 zero-stuffing, overstating work 4×).
//! - Pooling, normalization, and global pooling cost H·W·C at their input
//!   resolution. Elementwise activations and bias adds are not billed.
//! - [`FlopConvention::MacX2`] doubles every per-op count (multiplies and
//!   adds tallied separately).

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};
use core::fmt;

use crate::topology::{
    compressed_width, fc_block_levels, fc_log_dense_topology, NodeId, NodeKind, ParamValue,
    Scheme, Topology, TopologyError,
};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FlopConvention {
    /// One multiply-accumulate = one FLOP.
    Mac,
    /// Multiplies and adds counted separately (2× MAC).
    MacX2,
}

impl FlopConvention {
    pub fn name(self) -> &'static str {
        match self {
            FlopConvention::Mac => "mac",
            FlopConvention::MacX2 => "mac-x2",
        }
    }

    fn factor(self) -> u64 {
        match self {
            FlopConvention::Mac => 1,
            FlopConvention::MacX2 => 2,
        }
    }
}

/// How features cross block boundaries.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CompressionKind {
    /// Single-block plans only: nothing ever changes scale.
    None,
    /// Every still-needed producer is rescaled independently
    /// (channel-preserving 1×1 conv + 2×2 average pool going down,
    /// transposed conv going up).
    IndependentTransition,
    /// Each finished block is squeezed to ⌈g·log2 L⌉ channels; older
    /// compressed features are re-transformed with channel-preserving 1×1
    /// convs at every later boundary.
    BlockCompression,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum HeadKind {
    /// Global average pool + linear classifier.
    Classification,
    /// 1×1 conv producing a per-pixel prediction map.
    PerPixel,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TransitionTiming {
    /// Rescale every producer at every boundary it survives past.
    Eager,
    /// Rescale a producer only while some later block still consumes it.
    Lazy,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct NetworkConfig {
    /// Growth rate: output channels per feature layer.
    pub g: u32,
    pub bottleneck: bool,
    /// Mid-channels of the bottleneck 1×1 conv; defaults to 4g.
    pub bottleneck_width: Option<u32>,
    pub block_sizes: Vec<u32>,
    pub compression: CompressionKind,
    /// Channel multiplier for hub layers (doubly-logarithmic scheme only).
    pub hub_multiplier: u32,
    pub input_resolution: (u32, u32),
    /// Stem output channels; defaults to 2g.
    pub initial_channels: Option<u32>,
    pub flop_convention: FlopConvention,
    pub num_classes: u32,
    pub head: HeadKind,
    /// Defaults to eager for classification plans and lazy for
    /// encoder/decoder plans.
    pub transition_timing: Option<TransitionTiming>,
    /// Kernel size of upsampling transposed convs.
    pub upsample_kernel: u32,
}

impl NetworkConfig {
    pub fn classification(g: u32, block_sizes: &[u32]) -> NetworkConfig {
        NetworkConfig {
            g,
            bottleneck: true,
            bottleneck_width: None,
            block_sizes: block_sizes.to_vec(),
            compression: if block_sizes.len() > 1 {
                CompressionKind::IndependentTransition
            } else {
                CompressionKind::None
            },
            hub_multiplier: 1,
            input_resolution: (32, 32),
            initial_channels: None,
            flop_convention: FlopConvention::Mac,
            num_classes: 10,
            head: HeadKind::Classification,
            transition_timing: None,
            upsample_kernel: 3,
        }
    }

    /// Encoder/decoder segmentation configuration with the standard
    /// 4-5-7-10-12-15-12-10-7-5-4 block stack (91 feature layers).
    pub fn fc(g: u32) -> NetworkConfig {
        NetworkConfig {
            g,
            bottleneck: false,
            bottleneck_width: None,
            block_sizes: vec![4, 5, 7, 10, 12, 15, 12, 10, 7, 5, 4],
            compression: CompressionKind::IndependentTransition,
            hub_multiplier: 1,
            input_resolution: (224, 224),
            initial_channels: None,
            flop_convention: FlopConvention::Mac,
            num_classes: 11,
            head: HeadKind::PerPixel,
            transition_timing: None,
            upsample_kernel: 3,
        }
    }

    pub fn bottleneck_channels(&self) -> u32 {
        self.bottleneck_width.unwrap_or(4 * self.g)
    }

    pub fn stem_channels(&self) -> u32 {
        self.initial_channels.unwrap_or(2 * self.g)
    }
}

/// A parameterized or cost-bearing primitive with concrete shapes.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PlanOp {
    Conv {
        k: u32,
        c_in: u32,
        c_out: u32,
        h: u32,
        w: u32,
        bias: bool,
    },
    /// Stride-2 upsampling conv; `h`/`w` are the input resolution and the
    /// output doubles them.
    TransposedConv {
        k: u32,
        c_in: u32,
        c_out: u32,
        h: u32,
        w: u32,
    },
    /// 2×2 average pool, stride 2; `h`/`w` are the input resolution.
    AvgPool2 { c: u32, h: u32, w: u32 },
    /// Learnable per-channel affine normalization.
    Norm { c: u32, h: u32, w: u32 },
    GlobalAvgPool { c: u32, h: u32, w: u32 },
    Linear { c_in: u32, c_out: u32, bias: bool },
}

impl PlanOp {
    pub fn params(&self) -> u64 {
        match *self {
            PlanOp::Conv {
                k,
                c_in,
                c_out,
                bias,
                ..
            } => c_in as u64 * c_out as u64 * (k as u64 * k as u64) + if bias { c_out as u64 } else { 0 },
            PlanOp::TransposedConv { k, c_in, c_out, .. } => {
                c_in as u64 * c_out as u64 * (k as u64 * k as u64)
            }
            PlanOp::AvgPool2 { .. } | PlanOp::GlobalAvgPool { .. } => 0,
            PlanOp::Norm { c, .. } => 2 * c as u64,
            PlanOp::Linear { c_in, c_out, bias } => {
                c_in as u64 * c_out as u64 + if bias { c_out as u64 } else { 0 }
            }
        }
    }

    /// Multiply-accumulate (or element-op) count under the MAC convention.
    pub fn macs(&self) -> u64 {
        match *self {
            PlanOp::Conv {
                k,
                c_in,
                c_out,
                h,
                w,
                ..
            }
            | PlanOp::TransposedConv {
                k,
                c_in,
                c_out,
                h,
                w,
            } => h as u64 * w as u64 * c_in as u64 * c_out as u64 * (k as u64 * k as u64),
            PlanOp::AvgPool2 { c, h, w }
            | PlanOp::Norm { c, h, w }
            | PlanOp::GlobalAvgPool { c, h, w } => h as u64 * w as u64 * c as u64,
            PlanOp::Linear { c_in, c_out, .. } => c_in as u64 * c_out as u64,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum UnitKind {
    Stem,
    Layer { node: NodeId },
    /// Independent rescale of one producer across one boundary.
    Transition { producer: NodeId, boundary: u32 },
    /// Block-compression conv (+pool) emitting the given compression node.
    Compression { node: NodeId },
    /// Channel-preserving re-transform of an already-compressed feature
    /// (node 0 or an earlier compression node) across one boundary.
    Retransform { entity: NodeId, boundary: u32 },
    Head { block: u32, is_final: bool },
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PlanUnit {
    pub kind: UnitKind,
    /// Block the unit's cost is attributed to (transitions bill the block
    /// they feed into).
    pub block: u32,
    pub ops: Vec<PlanOp>,
}

impl PlanUnit {
    pub fn params(&self) -> u64 {
        self.ops.iter().map(PlanOp::params).sum()
    }

    pub fn macs(&self) -> u64 {
        self.ops.iter().map(PlanOp::macs).sum()
    }

    pub fn label(&self) -> String {
        match &self.kind {
            UnitKind::Stem => String::from("stem"),
            UnitKind::Layer { node } => format!("layer {node}"),
            UnitKind::Transition { producer, boundary } => {
                format!("transition n{producer} b{boundary}")
            }
            UnitKind::Compression { node } => format!("compress n{node}"),
            UnitKind::Retransform { entity, boundary } => {
                format!("retransform n{entity} b{boundary}")
            }
            UnitKind::Head { block, is_final } => {
                if *is_final {
                    format!("head b{block} (final)")
                } else {
                    format!("head b{block}")
                }
            }
        }
    }
}

/// Ordered op schedule; the unit of costing and of reference-net
/// parameter allocation.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct OpSchedule {
    pub units: Vec<PlanUnit>,
    pub n_blocks: u32,
}

impl OpSchedule {
    pub fn params(&self) -> u64 {
        self.units.iter().map(PlanUnit::params).sum()
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct NetworkPlan {
    pub topology: Topology,
    pub config: NetworkConfig,
    pub schedule: OpSchedule,
    /// Output channels per node id.
    pub node_channels: Vec<u32>,
    /// Resolution level per node id (spatial size is input >> level).
    pub node_level: Vec<u32>,
    pub block_levels: Vec<u32>,
    /// Last feature node of each block.
    pub block_ends: Vec<NodeId>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum CostError {
    BlockMismatch,
    HubMultiplierNeedsLogLog,
    CompressionSchemeMismatch,
    MultiBlockNeedsCompression,
    ResolutionNotDivisible { h: u32, w: u32, max_level: u32 },
    BadConfig(String),
    Topology(TopologyError),
}

impl fmt::Display for CostError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostError::BlockMismatch => {
                write!(f, "config block sizes do not match the topology")
            }
            CostError::HubMultiplierNeedsLogLog => write!(
                f,
                "hub_multiplier > 1 requires the doubly-logarithmic scheme"
            ),
            CostError::CompressionSchemeMismatch => write!(
                f,
                "block compression requires a block-compressed topology (and vice versa)"
            ),
            CostError::MultiBlockNeedsCompression => write!(
                f,
                "multi-block plans need a compression scheme for scale changes"
            ),
            CostError::ResolutionNotDivisible { h, w, max_level } => write!(
                f,
                "input resolution {h}x{w} must be divisible by 2^{max_level}"
            ),
            CostError::BadConfig(msg) => write!(f, "bad config: {msg}"),
            CostError::Topology(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for CostError {}

impl From<TopologyError> for CostError {
    fn from(e: TopologyError) -> Self {
        CostError::Topology(e)
    }
}

fn hub_set(topo: &Topology) -> Vec<u32> {
    match topo.scheme_params().get("hubs") {
        Some(ParamValue::IntList(h)) => h.iter().map(|&x| x as u32).collect(),
        _ => Vec::new(),
    }
}

/// Concrete per-scale resolution, from the plan's input resolution.
fn res_at(cfg: &NetworkConfig, level: u32) -> (u32, u32) {
    (cfg.input_resolution.0 >> level, cfg.input_resolution.1 >> level)
}

/// Turn a topology and config into an explicit op schedule.
pub fn instantiate(topo: &Topology, cfg: &NetworkConfig) -> Result<NetworkPlan, CostError> {
    if topo.block_sizes() != cfg.block_sizes.as_slice() {
        return Err(CostError::BlockMismatch);
    }
    if cfg.g == 0 {
        return Err(CostError::BadConfig(String::from("growth rate must be >= 1")));
    }
    if cfg.hub_multiplier == 0 {
        return Err(CostError::BadConfig(String::from(
            "hub_multiplier must be >= 1",
        )));
    }
    if cfg.hub_multiplier > 1 && topo.scheme() != Scheme::LogLog {
        return Err(CostError::HubMultiplierNeedsLogLog);
    }
    let is_v2 = topo.scheme() == Scheme::LogDenseV2;
    if is_v2 != (cfg.compression == CompressionKind::BlockCompression) {
        return Err(CostError::CompressionSchemeMismatch);
    }
    let n_blocks = topo.num_blocks();
    if n_blocks > 1 && cfg.compression == CompressionKind::None {
        return Err(CostError::MultiBlockNeedsCompression);
    }
    let is_fc = topo.scheme() == Scheme::FcLogDense;
    if is_fc && is_v2 {
        return Err(CostError::CompressionSchemeMismatch);
    }
    if cfg.upsample_kernel < 2 {
        return Err(CostError::BadConfig(String::from(
            "upsample kernel must be >= 2",
        )));
    }

    let block_levels: Vec<u32> = if is_fc {
        fc_block_levels(n_blocks)
    } else {
        (0..n_blocks).collect()
    };
    let max_level = block_levels.iter().copied().max().unwrap_or(0);
    let (h0, w0) = cfg.input_resolution;
    let mask = (1u32 << max_level) - 1;
    if h0 == 0 || w0 == 0 || h0 & mask != 0 || w0 & mask != 0 || (h0 >> max_level) == 0 {
        return Err(CostError::ResolutionNotDivisible {
            h: h0,
            w: w0,
            max_level,
        });
    }

    let hubs = hub_set(topo);
    let n_nodes = topo.num_nodes() as usize;
    let mut node_channels = vec![0u32; n_nodes];
    let mut node_level = vec![0u32; n_nodes];
    let comp_width = if is_v2 {
        compressed_width(cfg.g, topo.num_feature_layers())
    } else {
        0
    };
    for node in topo.nodes() {
        node_channels[node.id.0 as usize] = match node.kind {
            NodeKind::Initial => cfg.stem_channels(),
            NodeKind::Feature => {
                if hubs.binary_search(&node.id.0).is_ok() {
                    cfg.g * cfg.hub_multiplier
                } else {
                    cfg.g
                }
            }
            NodeKind::Compression => comp_width,
        };
        // A compression node lives at the level of the block it feeds.
        node_level[node.id.0 as usize] = match node.kind {
            NodeKind::Compression => block_levels[node.block as usize + 1],
            _ => block_levels[node.block as usize],
        };
    }

    let timing = cfg.transition_timing.unwrap_or(if is_fc {
        TransitionTiming::Lazy
    } else {
        TransitionTiming::Eager
    });

    // Last block that consumes each node (for lazy transitions).
    let mut last_consumer_block = vec![None::<u32>; n_nodes];
    for node in topo.nodes() {
        let b = node.block;
        for &p in topo.inputs_of(node.id) {
            let slot = &mut last_consumer_block[p.0 as usize];
            *slot = Some(slot.map_or(b, |x: u32| x.max(b)));
        }
    }

    let mut units: Vec<PlanUnit> = Vec::new();
    units.push(PlanUnit {
        kind: UnitKind::Stem,
        block: 0,
        ops: vec![PlanOp::Conv {
            k: 3,
            c_in: 3,
            c_out: cfg.stem_channels(),
            h: h0,
            w: w0,
            bias: false,
        }],
    });

    let cin_of = |id: NodeId| -> u32 {
        topo.inputs_of(id)
            .iter()
            .map(|&p| node_channels[p.0 as usize])
            .sum()
    };

    let mut block_ends: Vec<NodeId> = Vec::new();
    let mut prev_block = 0u32;
    let mut last_feature = NodeId(0);
    for node in topo.nodes() {
        if node.kind == NodeKind::Feature && node.block > prev_block {
            // finished blocks prev_block..node.block
            for b in prev_block..node.block {
                block_ends.push(last_feature);
                emit_boundary_units(
                    topo,
                    cfg,
                    b,
                    &block_levels,
                    &node_channels,
                    &last_consumer_block,
                    timing,
                    is_v2,
                    &mut units,
                );
            }
            prev_block = node.block;
        }
        match node.kind {
            NodeKind::Initial | NodeKind::Compression => {}
            NodeKind::Feature => {
                last_feature = node.id;
                let level = node_level[node.id.0 as usize];
                let (h, w) = res_at(cfg, level);
                let cin = cin_of(node.id);
                let cout = node_channels[node.id.0 as usize];
                let mut ops = vec![PlanOp::Norm { c: cin, h, w }];
                if cfg.bottleneck {
                    let mid = cfg.bottleneck_channels();
                    ops.push(PlanOp::Conv {
                        k: 1,
                        c_in: cin,
                        c_out: mid,
                        h,
                        w,
                        bias: false,
                    });
                    ops.push(PlanOp::Norm { c: mid, h, w });
                    ops.push(PlanOp::Conv {
                        k: 3,
                        c_in: mid,
                        c_out: cout,
                        h,
                        w,
                        bias: false,
                    });
                } else {
                    ops.push(PlanOp::Conv {
                        k: 3,
                        c_in: cin,
                        c_out: cout,
                        h,
                        w,
                        bias: false,
                    });
                }
                units.push(PlanUnit {
                    kind: UnitKind::Layer { node: node.id },
                    block: node.block,
                    ops,
                });
            }
        }
    }
    block_ends.push(last_feature);

    // Aux prediction head at every block end; the final block's head is the
    // final prediction. Heads read the block end together with its inputs,
    // all already at the block's scale.
    for (b, &end) in block_ends.iter().enumerate() {
        let level = block_levels[b];
        let (h, w) = res_at(cfg, level);
        let cin = node_channels[end.0 as usize] + cin_of(end);
        let ops = match cfg.head {
            HeadKind::Classification => vec![
                PlanOp::GlobalAvgPool { c: cin, h, w },
                PlanOp::Linear {
                    c_in: cin,
                    c_out: cfg.num_classes,
                    bias: true,
                },
            ],
            HeadKind::PerPixel => vec![PlanOp::Conv {
                k: 1,
                c_in: cin,
                c_out: cfg.num_classes,
                h,
                w,
                bias: true,
            }],
        };
        units.push(PlanUnit {
            kind: UnitKind::Head {
                block: b as u32,
                is_final: b as u32 == n_blocks - 1,
            },
            block: b as u32,
            ops,
        });
    }

    Ok(NetworkPlan {
        topology: topo.clone(),
        config: cfg.clone(),
        schedule: OpSchedule { units, n_blocks },
        node_channels,
        node_level,
        block_levels,
        block_ends,
    })
}

/// Emit the scale-change units for boundary `b` (between blocks b and b+1).
#[allow(clippy::too_many_arguments)]
fn emit_boundary_units(
    topo: &Topology,
    cfg: &NetworkConfig,
    b: u32,
    block_levels: &[u32],
    node_channels: &[u32],
    last_consumer_block: &[Option<u32>],
    timing: TransitionTiming,
    is_v2: bool,
    units: &mut Vec<PlanUnit>,
) {
    let from_level = block_levels[b as usize];
    let to_level = block_levels[b as usize + 1];
    let (h, w) = res_at(cfg, from_level);
    let dest_block = b + 1;
    let rescale_ops = |c: u32| -> Vec<PlanOp> {
        if to_level > from_level {
            vec![
                PlanOp::Conv {
                    k: 1,
                    c_in: c,
                    c_out: c,
                    h,
                    w,
                    bias: false,
                },
                PlanOp::AvgPool2 { c, h, w },
            ]
        } else {
            vec![PlanOp::TransposedConv {
                k: cfg.upsample_kernel,
                c_in: c,
                c_out: c,
                h,
                w,
            }]
        }
    };
    if is_v2 {
        // Squeeze the finished block, then carry every older compressed
        // feature (node 0 and earlier compression nodes) across.
        let comp_node = topo
            .nodes()
            .iter()
            .find(|n| n.kind == NodeKind::Compression && n.block == b)
            .expect("compression node exists per non-final block");
        let block_ch: u32 = topo
            .inputs_of(comp_node.id)
            .iter()
            .map(|&p| node_channels[p.0 as usize])
            .sum();
        let cw = node_channels[comp_node.id.0 as usize];
        units.push(PlanUnit {
            kind: UnitKind::Compression { node: comp_node.id },
            block: dest_block,
            ops: vec![
                PlanOp::Conv {
                    k: 1,
                    c_in: block_ch,
                    c_out: cw,
                    h,
                    w,
                    bias: false,
                },
                PlanOp::AvgPool2 { c: cw, h, w },
            ],
        });
        let older: Vec<NodeId> = core::iter::once(NodeId(0))
            .chain(
                topo.nodes()
                    .iter()
                    .filter(|n| n.kind == NodeKind::Compression && n.block < b)
                    .map(|n| n.id),
            )
            .collect();
        for entity in older {
            let c = node_channels[entity.0 as usize];
            units.push(PlanUnit {
                kind: UnitKind::Retransform {
                    entity,
                    boundary: b,
                },
                block: dest_block,
                ops: vec![
                    PlanOp::Conv {
                        k: 1,
                        c_in: c,
                        c_out: c,
                        h,
                        w,
                        bias: false,
                    },
                    PlanOp::AvgPool2 { c, h, w },
                ],
            });
        }
    } else {
        for node in topo.nodes() {
            if node.block > b {
                break;
            }
            let needed = match timing {
                TransitionTiming::Eager => true,
                TransitionTiming::Lazy => {
                    last_consumer_block[node.id.0 as usize].is_some_and(|lb| lb > b)
                }
            };
            if !needed {
                continue;
            }
            units.push(PlanUnit {
                kind: UnitKind::Transition {
                    producer: node.id,
                    boundary: b,
                },
                block: dest_block,
                ops: rescale_ops(node_channels[node.id.0 as usize]),
            });
        }
    }
}

/// Build the encoder/decoder plan for the logarithmic-plus-anchor scheme
/// directly from a config (topology derived from its block sizes).
pub fn fc_plan(cfg: &NetworkConfig) -> Result<NetworkPlan, CostError> {
    if cfg.block_sizes.is_empty() || cfg.block_sizes.len() % 2 == 0 {
        return Err(CostError::Topology(TopologyError::EvenBlockCount {
            got: cfg.block_sizes.len() as u32,
        }));
    }
    let topo = fc_log_dense_topology(&cfg.block_sizes, cfg.block_sizes[0])?;
    instantiate(&topo, cfg)
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CostReport {
    /// (unit label, flops) in schedule order.
    pub unit_flops: Vec<(String, u64)>,
    pub per_block_flops: Vec<u64>,
    pub total_flops: u64,
    pub total_params: u64,
    pub convention: FlopConvention,
}

/// Cost a schedule under the given convention.
pub fn schedule_cost(schedule: &OpSchedule, convention: FlopConvention) -> CostReport {
    let factor = convention.factor();
    let mut unit_flops = Vec::with_capacity(schedule.units.len());
    let mut per_block = vec![0u64; schedule.n_blocks as usize];
    let mut total = 0u64;
    for unit in &schedule.units {
        let f = unit.macs() * factor;
        unit_flops.push((unit.label(), f));
        per_block[unit.block as usize] += f;
        total += f;
    }
    CostReport {
        unit_flops,
        per_block_flops: per_block,
        total_flops: total,
        total_params: schedule.params(),
        convention,
    }
}

/// FLOP/parameter report for a plan under its configured convention.
pub fn flops(plan: &NetworkPlan) -> CostReport {
    schedule_cost(&plan.schedule, plan.config.flop_convention)
}

/// Total learnable parameters of a plan.
pub fn params(plan: &NetworkPlan) -> u64 {
    plan.schedule.params()
}

/// Per-block share of total FLOPs; sums to 1.
pub fn block_cost_distribution(report: &CostReport) -> Vec<f64> {
    let total = report.total_flops as f64;
    report
        .per_block_flops
        .iter()
        .map(|&f| f as f64 / total)
        .collect()
}

/// Reference encoder/decoder densely-connected segmentation net
/// (the 103-layer variant: blocks 4-5-7-10-12-15-12-10-7-5-4, stem of 48
/// channels, per-block skip concatenation, transposed-conv upsampling of
/// each block's new features). Built for cost comparison only; internals
/// follow its published structure as closely as the cost model's op
/// vocabulary allows.
pub fn reference_fc_densenet(
    g: u32,
    input_resolution: (u32, u32),
    num_classes: u32,
) -> Result<OpSchedule, CostError> {
    let down = [4u32, 5, 7, 10, 12];
    let mid = 15u32;
    let up = [12u32, 10, 7, 5, 4];
    let first = 48u32;
    let (h0, w0) = input_resolution;
    if h0 == 0 || w0 == 0 || h0 % 32 != 0 || w0 % 32 != 0 {
        return Err(CostError::ResolutionNotDivisible {
            h: h0,
            w: w0,
            max_level: 5,
        });
    }
    let n_blocks = (down.len() + 1 + up.len()) as u32;
    let mut units: Vec<PlanUnit> = Vec::new();
    let mut next_node = 0u32;
    let mut fresh = || {
        next_node += 1;
        NodeId(next_node - 1)
    };

    let dense_block =
        |units: &mut Vec<PlanUnit>, fresh: &mut dyn FnMut() -> NodeId, block: u32, c_in: u32, n: u32, h: u32, w: u32| -> u32 {
            let mut c = c_in;
            for _ in 0..n {
                units.push(PlanUnit {
                    kind: UnitKind::Layer { node: fresh() },
                    block,
                    ops: vec![
                        PlanOp::Norm { c, h, w },
                        PlanOp::Conv {
                            k: 3,
                            c_in: c,
                            c_out: g,
                            h,
                            w,
                            bias: false,
                        },
                    ],
                });
                c += g;
            }
            c
        };

    units.push(PlanUnit {
        kind: UnitKind::Stem,
        block: 0,
        ops: vec![PlanOp::Conv {
            k: 3,
            c_in: 3,
            c_out: first,
            h: h0,
            w: w0,
            bias: false,
        }],
    });
    let (mut h, mut w) = (h0, w0);
    let mut c = first;
    let mut skips: Vec<u32> = Vec::new();
    for (b, &n) in down.iter().enumerate() {
        c = dense_block(&mut units, &mut fresh, b as u32, c, n, h, w);
        skips.push(c);
        units.push(PlanUnit {
            kind: UnitKind::Transition {
                producer: NodeId(u32::MAX),
                boundary: b as u32,
            },
            block: b as u32,
            ops: vec![
                PlanOp::Norm { c, h, w },
                PlanOp::Conv {
                    k: 1,
                    c_in: c,
                    c_out: c,
                    h,
                    w,
                    bias: false,
                },
                PlanOp::AvgPool2 { c, h, w },
            ],
        });
        h /= 2;
        w /= 2;
    }
    let mid_block = down.len() as u32;
    dense_block(&mut units, &mut fresh, mid_block, c, mid, h, w);
    let mut c_new = mid * g;
    for (i, &n) in up.iter().enumerate() {
        let block = mid_block + 1 + i as u32;
        units.push(PlanUnit {
            kind: UnitKind::Transition {
                producer: NodeId(u32::MAX),
                boundary: block - 1,
            },
            block,
            ops: vec![PlanOp::TransposedConv {
                k: 3,
                c_in: c_new,
                c_out: c_new,
                h,
                w,
            }],
        });
        h *= 2;
        w *= 2;
        let c_in = c_new + skips[skips.len() - 1 - i];
        dense_block(&mut units, &mut fresh, block, c_in, n, h, w);
        c_new = n * g;
        if i == up.len() - 1 {
            let c_final = c_in + n * g;
            units.push(PlanUnit {
                kind: UnitKind::Head {
                    block,
                    is_final: true,
                },
                block,
                ops: vec![PlanOp::Conv {
                    k: 1,
                    c_in: c_final,
                    c_out: num_classes,
                    h,
                    w,
                    bias: true,
                }],
            });
        }
    }
    Ok(OpSchedule { units, n_blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::dense_topology;

    #[test]
    fn op_cost_basics() {
        let conv = PlanOp::Conv {
            k: 1,
            c_in: 2,
            c_out: 3,
            h: 1,
            w: 1,
            bias: false,
        };
        assert_eq!(conv.macs(), 6);
        let conv3 = PlanOp::Conv {
            k: 3,
            c_in: 2,
            c_out: 3,
            h: 5,
            w: 5,
            bias: false,
        };
        assert_eq!(conv3.params(), 54);
    }

    #[test]
    fn dense_plan_bottleneck_ops() {
        let topo = dense_topology(4, &[4]).unwrap();
        let mut cfg = NetworkConfig::classification(4, &[4]);
        cfg.input_resolution = (8, 8);
        let plan = instantiate(&topo, &cfg).unwrap();
        for unit in &plan.schedule.units {
            if let UnitKind::Layer { .. } = unit.kind {
                assert_eq!(unit.ops.len(), 4); // norm, 1x1, norm, 3x3
            }
        }
    }
}
