//! Desk-scale differentiable reference network.
//!
//! Builds a tiny, fully deterministic f64 network directly from a
//! [`NetworkPlan`]'s op schedule, so its learnable-parameter count is the
//! cost model's parameter count by construction. Forward passes record a
//! tape; reverse-mode sweeps over the tape produce exact gradients that can
//! be validated against central finite differences.
//!
//! Deliberate simplifications (documented, not configurable):
//! - Normalization is the learnable per-channel affine only (no batch
//!   statistics), matching the cost model's 2-parameters-per-channel op.
//! - Layers are pre-activation: affine-norm, then the elementwise
//!   activation, then the conv. Transitions, compressions, the stem and
//!   heads apply no activation.
//! - Upsampling is the stride-2, kernel-3, padding-1, output-padding-1
//!   transposed conv (exactly doubles the resolution).
//! - Biases initialize to zero and draw nothing from the RNG stream.
//!
//! Scale guards keep everything exhaustive-testable: at most 64 feature
//! layers, growth at most 8, input resolution at most 8×8.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};
use core::fmt;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::cost::{instantiate, CostError, NetworkConfig, NetworkPlan, PlanOp, UnitKind};
use crate::topology::{NodeId, NodeKind, Topology};

/// Channel-major dense tensor (`c` planes of `h`×`w`).
#[derive(Clone, PartialEq, Debug)]
pub struct Tensor {
    pub c: u32,
    pub h: u32,
    pub w: u32,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: u32, h: u32, w: u32) -> Tensor {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; (c * h * w) as usize],
        }
    }

    pub fn from_fn(c: u32, h: u32, w: u32, mut f: impl FnMut(u32, u32, u32) -> f64) -> Tensor {
        let mut t = Tensor::zeros(c, h, w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let i = t.idx(ch, y, x);
                    t.data[i] = f(ch, y, x);
                }
            }
        }
        t
    }

    #[inline]
    pub fn idx(&self, ch: u32, y: u32, x: u32) -> usize {
        ((ch * self.h + y) * self.w + x) as usize
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn shape(&self) -> (u32, u32, u32) {
        (self.c, self.h, self.w)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Activation {
    /// Default: smooth everywhere, safe for finite-difference validation.
    Tanh,
    /// Kinked at zero; excluded from strict gradient-check gates.
    Relu,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Activation> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(x),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation *output*.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum MicroError {
    DeskLimit(String),
    ShapeMismatch(String),
    Cost(CostError),
    BadSpec(String),
}

impl fmt::Display for MicroError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MicroError::DeskLimit(m) => write!(f, "desk-scale limit exceeded: {m}"),
            MicroError::ShapeMismatch(m) => write!(f, "shape mismatch: {m}"),
            MicroError::Cost(e) => write!(f, "{e}"),
            MicroError::BadSpec(m) => write!(f, "bad spec: {m}"),
        }
    }
}

impl core::error::Error for MicroError {}

impl From<CostError> for MicroError {
    fn from(e: CostError) -> Self {
        MicroError::Cost(e)
    }
}

/// Recorded tape operation; ids index [`Trace::values`].
#[derive(Clone, Debug)]
enum TapeOp {
    Conv {
        in_id: usize,
        out_id: usize,
        w_off: usize,
        bias_off: Option<usize>,
        k: u32,
        c_in: u32,
        c_out: u32,
    },
    /// Channel-preserving stride-2 transposed conv, kernel 3.
    ConvT {
        in_id: usize,
        out_id: usize,
        w_off: usize,
        c: u32,
    },
    Pool2 {
        in_id: usize,
        out_id: usize,
    },
    Affine {
        in_id: usize,
        out_id: usize,
        off: usize,
        c: u32,
    },
    Act {
        in_id: usize,
        out_id: usize,
        kind: Activation,
    },
    Concat {
        in_ids: Vec<usize>,
        out_id: usize,
    },
    Gap {
        in_id: usize,
        out_id: usize,
    },
    Linear {
        in_id: usize,
        out_id: usize,
        w_off: usize,
        b_off: usize,
        c_in: u32,
        c_out: u32,
    },
}

/// Forward-pass record: every intermediate tensor plus the tape that
/// produced it.
#[derive(Clone, Debug)]
pub struct Trace {
    values: Vec<Tensor>,
    ops: Vec<TapeOp>,
    /// One output value id per block head, in block order; the last entry
    /// is the final prediction.
    head_ids: Vec<usize>,
}

impl Trace {
    pub fn head_outputs(&self) -> Vec<&Tensor> {
        self.head_ids.iter().map(|&i| &self.values[i]).collect()
    }

    pub fn final_output(&self) -> &Tensor {
        &self.values[*self.head_ids.last().expect("at least one head")]
    }
}

/// Per-head loss weights. The final head carries half the weight and the
/// auxiliary heads share the other half equally (all of it if there are no
/// auxiliary heads).
#[derive(Clone, PartialEq, Debug)]
pub struct LossSpec {
    pub weights: Vec<f64>,
}

impl LossSpec {
    pub fn deep_supervision(n_heads: u32) -> LossSpec {
        let n = n_heads.max(1) as usize;
        let mut weights = vec![0.0; n];
        if n == 1 {
            weights[0] = 1.0;
        } else {
            let aux = 0.5 / (n as f64 - 1.0);
            for w in weights.iter_mut().take(n - 1) {
                *w = aux;
            }
            weights[n - 1] = 0.5;
        }
        LossSpec { weights }
    }

    pub fn final_only(n_heads: u32) -> LossSpec {
        let n = n_heads.max(1) as usize;
        let mut weights = vec![0.0; n];
        weights[n - 1] = 1.0;
        LossSpec { weights }
    }
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    pub max_samples: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-4,
            tolerance: 1e-4,
            max_samples: 240,
        }
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub worst_param: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// Structural and numeric gradient reachability for one feature layer.
#[derive(Clone, PartialEq, Debug)]
pub struct ReachRow {
    pub node: NodeId,
    /// Backward hops from the final feature layer through the feature
    /// graph (compression nodes count as hops).
    pub hops: u32,
    /// Whether the layer's own weights receive a numerically nonzero
    /// gradient under a final-head-only loss.
    pub grad_nonzero: bool,
    pub grad_max_abs: f64,
}

const MAX_LAYERS: u32 = 64;
const MAX_GROWTH: u32 = 8;
const MAX_SPATIAL: u32 = 8;

#[derive(Clone, Debug)]
pub struct MicroNet {
    plan: NetworkPlan,
    activation: Activation,
    seed: u64,
    params: Vec<f64>,
    /// Parameter range per schedule unit (offset, len), aligned with
    /// `plan.schedule.units`.
    unit_param_ranges: Vec<(usize, usize)>,
}

fn unit_to_u01(x: u64) -> f64 {
    // 53 high bits -> [0, 1)
    (x >> 11) as f64 * (1.0 / 9007199254740992.0)
}

fn uniform(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    (unit_to_u01(rng.next_u64()) * 2.0 - 1.0) * bound
}

impl MicroNet {
    /// Build and deterministically initialize a network for the given
    /// topology and configuration.
    pub fn build(
        topo: &Topology,
        cfg: &NetworkConfig,
        activation: Activation,
        seed: u64,
    ) -> Result<MicroNet, MicroError> {
        if topo.num_feature_layers() > MAX_LAYERS {
            return Err(MicroError::DeskLimit(format!(
                "at most {MAX_LAYERS} feature layers (got {})",
                topo.num_feature_layers()
            )));
        }
        if cfg.g > MAX_GROWTH {
            return Err(MicroError::DeskLimit(format!(
                "growth rate at most {MAX_GROWTH} (got {})",
                cfg.g
            )));
        }
        let (h, w) = cfg.input_resolution;
        if h > MAX_SPATIAL || w > MAX_SPATIAL {
            return Err(MicroError::DeskLimit(format!(
                "input resolution at most {MAX_SPATIAL}x{MAX_SPATIAL} (got {h}x{w})"
            )));
        }
        if cfg.upsample_kernel != 3 {
            return Err(MicroError::DeskLimit(String::from(
                "only the kernel-3 transposed conv is implemented",
            )));
        }
        let plan = instantiate(topo, cfg)?;

        // Allocate and initialize parameters in schedule order.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: Vec<f64> = Vec::new();
        let mut unit_param_ranges = Vec::with_capacity(plan.schedule.units.len());
        for unit in &plan.schedule.units {
            let start = params.len();
            for op in &unit.ops {
                match *op {
                    PlanOp::Conv {
                        k,
                        c_in,
                        c_out,
                        bias,
                        ..
                    } => {
                        let fan_in = (c_in * k * k) as f64;
                        let bound = 1.0 / libm::sqrt(fan_in);
                        let n = (c_in * c_out * k * k) as usize;
                        params.extend((0..n).map(|_| uniform(&mut rng, bound)));
                        if bias {
                            params.extend(core::iter::repeat(0.0).take(c_out as usize));
                        }
                    }
                    PlanOp::TransposedConv { k, c_in, c_out, .. } => {
                        let fan_in = (c_in * k * k) as f64;
                        let bound = 1.0 / libm::sqrt(fan_in);
                        let n = (c_in * c_out * k * k) as usize;
                        params.extend((0..n).map(|_| uniform(&mut rng, bound)));
                    }
                    PlanOp::Norm { c, .. } => {
                        params.extend((0..c).map(|_| 1.0 + uniform(&mut rng, 0.5)));
                        params.extend((0..c).map(|_| uniform(&mut rng, 0.1)));
                    }
                    PlanOp::Linear { c_in, c_out, bias } => {
                        let bound = 1.0 / libm::sqrt(c_in as f64);
                        let n = (c_in * c_out) as usize;
                        params.extend((0..n).map(|_| uniform(&mut rng, bound)));
                        if bias {
                            params.extend(core::iter::repeat(0.0).take(c_out as usize));
                        }
                    }
                    PlanOp::AvgPool2 { .. } | PlanOp::GlobalAvgPool { .. } => {}
                }
            }
            unit_param_ranges.push((start, params.len() - start));
        }
        debug_assert_eq!(params.len() as u64, plan.schedule.params());

        Ok(MicroNet {
            plan,
            activation,
            seed,
            params,
            unit_param_ranges,
        })
    }

    pub fn plan(&self) -> &NetworkPlan {
        &self.plan
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn unit_param_range(&self, unit_index: usize) -> (usize, usize) {
        self.unit_param_ranges[unit_index]
    }

    /// Expected (channels, h, w) of each head's output, in block order.
    pub fn head_shapes(&self) -> Vec<(u32, u32, u32)> {
        let cfg = &self.plan.config;
        self.plan
            .schedule
            .units
            .iter()
            .filter_map(|u| match u.kind {
                UnitKind::Head { block, .. } => {
                    let level = self.plan.block_levels[block as usize];
                    let (h, w) = (
                        cfg.input_resolution.0 >> level,
                        cfg.input_resolution.1 >> level,
                    );
                    Some(match cfg.head {
                        crate::cost::HeadKind::Classification => (cfg.num_classes, 1, 1),
                        crate::cost::HeadKind::PerPixel => (cfg.num_classes, h, w),
                    })
                }
                _ => None,
            })
            .collect()
    }

    /// Run the network, recording a full tape.
    pub fn forward(&self, input: &Tensor) -> Result<Trace, MicroError> {
        let cfg = &self.plan.config;
        if input.shape() != (3, cfg.input_resolution.0, cfg.input_resolution.1) {
            return Err(MicroError::ShapeMismatch(format!(
                "input must be 3x{}x{}, got {}x{}x{}",
                cfg.input_resolution.0,
                cfg.input_resolution.1,
                input.c,
                input.h,
                input.w
            )));
        }
        let topo = &self.plan.topology;
        let mut values: Vec<Tensor> = vec![input.clone()];
        let mut ops: Vec<TapeOp> = Vec::new();
        let mut head_ids: Vec<usize> = Vec::new();
        // Latest value of each (node, block) pair: the version of a node's
        // feature map at that block's scale.
        let mut versions: alloc::collections::BTreeMap<(u32, u32), usize> =
            alloc::collections::BTreeMap::new();

        let mut exec = Executor {
            params: &self.params,
            values: &mut values,
            ops: &mut ops,
            activation: self.activation,
        };

        for (ui, unit) in self.plan.schedule.units.iter().enumerate() {
            let (p_off, _) = self.unit_param_ranges[ui];
            match unit.kind {
                UnitKind::Stem => {
                    let out = exec.run_ops(&unit.ops, 0, p_off, false);
                    versions.insert((0, 0), out);
                }
                UnitKind::Layer { node } => {
                    let b = unit.block;
                    let in_ids: Vec<usize> = topo
                        .inputs_of(node)
                        .iter()
                        .map(|p| versions[&(p.0, b)])
                        .collect();
                    let cat = exec.concat(&in_ids);
                    let out = exec.run_ops(&unit.ops, cat, p_off, true);
                    versions.insert((node.0, b), out);
                }
                UnitKind::Transition { producer, boundary } => {
                    let src = versions[&(producer.0, boundary)];
                    let out = exec.run_ops(&unit.ops, src, p_off, false);
                    versions.insert((producer.0, boundary + 1), out);
                }
                UnitKind::Compression { node } => {
                    let b = topo.node(node).expect("compression node exists").block;
                    let in_ids: Vec<usize> = topo
                        .inputs_of(node)
                        .iter()
                        .map(|p| versions[&(p.0, b)])
                        .collect();
                    let cat = exec.concat(&in_ids);
                    let out = exec.run_ops(&unit.ops, cat, p_off, false);
                    versions.insert((node.0, b + 1), out);
                }
                UnitKind::Retransform { entity, boundary } => {
                    let src = versions[&(entity.0, boundary)];
                    let out = exec.run_ops(&unit.ops, src, p_off, false);
                    versions.insert((entity.0, boundary + 1), out);
                }
                UnitKind::Head { block, .. } => {
                    let end = self.plan.block_ends[block as usize];
                    let mut in_ids: Vec<usize> = vec![versions[&(end.0, block)]];
                    in_ids.extend(
                        topo.inputs_of(end)
                            .iter()
                            .map(|p| versions[&(p.0, block)]),
                    );
                    let cat = exec.concat(&in_ids);
                    let out = exec.run_ops(&unit.ops, cat, p_off, false);
                    head_ids.push(out);
                }
            }
        }

        Ok(Trace {
            values,
            ops,
            head_ids,
        })
    }

    fn check_targets(&self, targets: &[Tensor], spec: &LossSpec) -> Result<(), MicroError> {
        let shapes = self.head_shapes();
        if targets.len() != shapes.len() || spec.weights.len() != shapes.len() {
            return Err(MicroError::ShapeMismatch(format!(
                "expected {} targets/weights, got {} targets and {} weights",
                shapes.len(),
                targets.len(),
                spec.weights.len()
            )));
        }
        for (t, &s) in targets.iter().zip(shapes.iter()) {
            if t.shape() != s {
                return Err(MicroError::ShapeMismatch(format!(
                    "target shape {:?} does not match head shape {:?}",
                    t.shape(),
                    s
                )));
            }
        }
        Ok(())
    }

    /// Weighted mean-squared-error loss over all heads.
    pub fn loss(
        &self,
        trace: &Trace,
        targets: &[Tensor],
        spec: &LossSpec,
    ) -> Result<f64, MicroError> {
        self.check_targets(targets, spec)?;
        let mut total = 0.0;
        for ((&hid, target), &weight) in trace
            .head_ids
            .iter()
            .zip(targets.iter())
            .zip(spec.weights.iter())
        {
            let pred = &trace.values[hid];
            let n = pred.numel() as f64;
            let mse: f64 = pred
                .data
                .iter()
                .zip(target.data.iter())
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / n;
            total += weight * mse;
        }
        Ok(total)
    }

    /// Full forward + reverse sweep; returns the loss and d loss / d params.
    pub fn backprop(
        &self,
        input: &Tensor,
        targets: &[Tensor],
        spec: &LossSpec,
    ) -> Result<(f64, Vec<f64>), MicroError> {
        let trace = self.forward(input)?;
        let loss = self.loss(&trace, targets, spec)?;
        let mut value_grads: Vec<Vec<f64>> =
            trace.values.iter().map(|v| vec![0.0; v.numel()]).collect();
        for ((&hid, target), &weight) in trace
            .head_ids
            .iter()
            .zip(targets.iter())
            .zip(spec.weights.iter())
        {
            let pred = &trace.values[hid];
            let n = pred.numel() as f64;
            let scale = 2.0 * weight / n;
            for (g, (p, t)) in value_grads[hid]
                .iter_mut()
                .zip(pred.data.iter().zip(target.data.iter()))
            {
                *g += scale * (p - t);
            }
        }
        let mut param_grads = vec![0.0; self.params.len()];
        backward_sweep(
            &trace,
            &self.params,
            &mut value_grads,
            &mut param_grads,
        );
        Ok((loss, param_grads))
    }

    /// Compare analytic gradients against central finite differences on a
    /// deterministic, evenly spread subset of parameters.
    pub fn grad_check(
        &self,
        input: &Tensor,
        targets: &[Tensor],
        spec: &LossSpec,
        opts: &GradCheckOptions,
    ) -> Result<GradCheckReport, MicroError> {
        let (_, analytic) = self.backprop(input, targets, spec)?;
        let n = self.params.len();
        let stride = (n / opts.max_samples.max(1)).max(1);
        let mut probe = self.clone();
        let mut max_rel = 0.0f64;
        let mut sum_rel = 0.0f64;
        let mut worst = 0usize;
        let mut checked = 0usize;
        let mut i = 0usize;
        while i < n {
            let orig = probe.params[i];
            probe.params[i] = orig + opts.epsilon;
            let up = probe.loss(&probe.forward(input)?, targets, spec)?;
            probe.params[i] = orig - opts.epsilon;
            let down = probe.loss(&probe.forward(input)?, targets, spec)?;
            probe.params[i] = orig;
            let fd = (up - down) / (2.0 * opts.epsilon);
            let a = analytic[i];
            let denom = a.abs().max(fd.abs());
            let rel = if denom > 1e-6 {
                (a - fd).abs() / denom
            } else {
                (a - fd).abs()
            };
            if rel > max_rel {
                max_rel = rel;
                worst = i;
            }
            sum_rel += rel;
            checked += 1;
            i += stride;
        }
        Ok(GradCheckReport {
            checked,
            max_rel_err: max_rel,
            mean_rel_err: if checked > 0 {
                sum_rel / checked as f64
            } else {
                0.0
            },
            worst_param: worst,
            tolerance: opts.tolerance,
            pass: max_rel < opts.tolerance,
        })
    }

    /// For every feature layer: backward hops from the final feature layer
    /// plus a numeric nonzero-gradient check under a final-head-only loss.
    pub fn gradient_reach(&self, input: &Tensor) -> Result<Vec<ReachRow>, MicroError> {
        let topo = &self.plan.topology;
        let last = *topo
            .feature_ids()
            .last()
            .expect("topology has at least one feature layer");
        let dists = crate::analysis::distances_from(topo, last);
        let shapes = self.head_shapes();
        let targets: Vec<Tensor> = shapes
            .iter()
            .map(|&(c, h, w)| Tensor::zeros(c, h, w))
            .collect();
        let spec = LossSpec::final_only(shapes.len() as u32);
        let (_, grads) = self.backprop(input, &targets, &spec)?;
        let mut rows = Vec::new();
        for (ui, unit) in self.plan.schedule.units.iter().enumerate() {
            if let UnitKind::Layer { node } = unit.kind {
                if topo.node(node).map(|n| n.kind) != Some(NodeKind::Feature) {
                    continue;
                }
                let (off, len) = self.unit_param_ranges[ui];
                let gmax = grads[off..off + len]
                    .iter()
                    .fold(0.0f64, |m, g| m.max(g.abs()));
                let hops = dists[node.0 as usize].unwrap_or(u32::MAX);
                rows.push(ReachRow {
                    node,
                    hops,
                    grad_nonzero: gmax > 0.0,
                    grad_max_abs: gmax,
                });
            }
        }
        Ok(rows)
    }

    /// Full-batch gradient descent on a fixed set of samples; returns the
    /// mean loss after each step (index 0 is the pre-training loss).
    pub fn train_toy(
        &mut self,
        samples: &[(Tensor, Vec<Tensor>)],
        spec: &LossSpec,
        lr: f64,
        steps: u32,
    ) -> Result<Vec<f64>, MicroError> {
        if samples.is_empty() {
            return Err(MicroError::BadSpec(String::from("need at least one sample")));
        }
        let mut losses = Vec::with_capacity(steps as usize + 1);
        for step in 0..=steps {
            let mut mean_loss = 0.0;
            let mut mean_grad = vec![0.0; self.params.len()];
            for (x, targets) in samples {
                let (l, g) = self.backprop(x, targets, spec)?;
                mean_loss += l;
                for (m, gi) in mean_grad.iter_mut().zip(g.iter()) {
                    *m += gi;
                }
            }
            let inv = 1.0 / samples.len() as f64;
            mean_loss *= inv;
            losses.push(mean_loss);
            if step == steps {
                break;
            }
            for (p, g) in self.params.iter_mut().zip(mean_grad.iter()) {
                *p -= lr * g * inv;
            }
        }
        Ok(losses)
    }
}

/// Executes plan ops forward while recording the tape.
struct Executor<'a> {
    params: &'a [f64],
    values: &'a mut Vec<Tensor>,
    ops: &'a mut Vec<TapeOp>,
    activation: Activation,
}

impl Executor<'_> {
    fn push(&mut self, t: Tensor) -> usize {
        self.values.push(t);
        self.values.len() - 1
    }

    fn concat(&mut self, in_ids: &[usize]) -> usize {
        if in_ids.len() == 1 {
            return in_ids[0];
        }
        let (h, w) = {
            let first = &self.values[in_ids[0]];
            (first.h, first.w)
        };
        let c: u32 = in_ids.iter().map(|&i| self.values[i].c).sum();
        let mut out = Tensor::zeros(c, h, w);
        let mut ch0 = 0u32;
        for &i in in_ids {
            let v = &self.values[i];
            debug_assert_eq!((v.h, v.w), (h, w), "concat resolution mismatch");
            let plane = (v.c * h * w) as usize;
            let dst = (ch0 * h * w) as usize;
            out.data[dst..dst + plane].copy_from_slice(&v.data);
            ch0 += v.c;
        }
        let out_id = self.push(out);
        self.ops.push(TapeOp::Concat {
            in_ids: in_ids.to_vec(),
            out_id,
        });
        out_id
    }

    /// Run a unit's op list starting from `in_id`; `p_off` is the unit's
    /// first parameter. If `activated`, each affine norm is followed by the
    /// elementwise activation (pre-activation layout).
    fn run_ops(&mut self, ops: &[PlanOp], in_id: usize, p_off: usize, activated: bool) -> usize {
        let mut cur = in_id;
        let mut off = p_off;
        for op in ops {
            match *op {
                PlanOp::Conv {
                    k, c_in, c_out, bias, ..
                } => {
                    let w_off = off;
                    off += (c_in * c_out * k * k) as usize;
                    let bias_off = if bias {
                        let b = off;
                        off += c_out as usize;
                        Some(b)
                    } else {
                        None
                    };
                    cur = self.conv(cur, w_off, bias_off, k, c_in, c_out);
                }
                PlanOp::TransposedConv { k, c_in, .. } => {
                    let w_off = off;
                    off += (c_in * c_in * k * k) as usize;
                    cur = self.conv_t(cur, w_off, c_in);
                }
                PlanOp::AvgPool2 { .. } => {
                    cur = self.pool2(cur);
                }
                PlanOp::Norm { c, .. } => {
                    let o = off;
                    off += 2 * c as usize;
                    cur = self.affine(cur, o, c);
                    if activated {
                        cur = self.act(cur);
                    }
                }
                PlanOp::GlobalAvgPool { .. } => {
                    cur = self.gap(cur);
                }
                PlanOp::Linear { c_in, c_out, bias } => {
                    let w_off = off;
                    off += (c_in * c_out) as usize;
                    let b_off = off;
                    if bias {
                        off += c_out as usize;
                    }
                    cur = self.linear(cur, w_off, b_off, c_in, c_out);
                }
            }
        }
        cur
    }

    fn conv(
        &mut self,
        in_id: usize,
        w_off: usize,
        bias_off: Option<usize>,
        k: u32,
        c_in: u32,
        c_out: u32,
    ) -> usize {
        let input = self.values[in_id].clone();
        debug_assert_eq!(input.c, c_in);
        let pad = k / 2;
        let mut out = Tensor::zeros(c_out, input.h, input.w);
        for oc in 0..c_out {
            let b = bias_off.map_or(0.0, |bo| self.params[bo + oc as usize]);
            for oy in 0..input.h {
                for ox in 0..input.w {
                    let mut acc = b;
                    for ic in 0..c_in {
                        for ky in 0..k {
                            let iy = oy as i64 + ky as i64 - pad as i64;
                            if iy < 0 || iy >= input.h as i64 {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = ox as i64 + kx as i64 - pad as i64;
                                if ix < 0 || ix >= input.w as i64 {
                                    continue;
                                }
                                let wi = w_off
                                    + (((oc * c_in + ic) * k + ky) * k + kx) as usize;
                                acc += self.params[wi]
                                    * input.data[input.idx(ic, iy as u32, ix as u32)];
                            }
                        }
                    }
                    let oi = out.idx(oc, oy, ox);
                    out.data[oi] = acc;
                }
            }
        }
        let out_id = self.push(out);
        self.ops.push(TapeOp::Conv {
            in_id,
            out_id,
            w_off,
            bias_off,
            k,
            c_in,
            c_out,
        });
        out_id
    }

    fn conv_t(&mut self, in_id: usize, w_off: usize, c: u32) -> usize {
        let input = self.values[in_id].clone();
        debug_assert_eq!(input.c, c);
        let (oh, ow) = (2 * input.h, 2 * input.w);
        let mut out = Tensor::zeros(c, oh, ow);
        // out[oy] += w[ky] * in[iy] wherever oy = 2*iy + ky - 1
        for ic in 0..c {
            for oc in 0..c {
                for iy in 0..input.h {
                    for ix in 0..input.w {
                        let v = input.data[input.idx(ic, iy, ix)];
                        for ky in 0..3u32 {
                            let oy = 2 * iy as i64 + ky as i64 - 1;
                            if oy < 0 || oy >= oh as i64 {
                                continue;
                            }
                            for kx in 0..3u32 {
                                let ox = 2 * ix as i64 + kx as i64 - 1;
                                if ox < 0 || ox >= ow as i64 {
                                    continue;
                                }
                                let wi = w_off + (((ic * c + oc) * 3 + ky) * 3 + kx) as usize;
                                let oi = out.idx(oc, oy as u32, ox as u32);
                                out.data[oi] += self.params[wi] * v;
                            }
                        }
                    }
                }
            }
        }
        let out_id = self.push(out);
        self.ops.push(TapeOp::ConvT {
            in_id,
            out_id,
            w_off,
            c,
        });
        out_id
    }

    fn pool2(&mut self, in_id: usize) -> usize {
        let input = self.values[in_id].clone();
        let (oh, ow) = (input.h / 2, input.w / 2);
        let mut out = Tensor::zeros(input.c, oh, ow);
        for ch in 0..input.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let s = input.data[input.idx(ch, 2 * oy, 2 * ox)]
                        + input.data[input.idx(ch, 2 * oy, 2 * ox + 1)]
                        + input.data[input.idx(ch, 2 * oy + 1, 2 * ox)]
                        + input.data[input.idx(ch, 2 * oy + 1, 2 * ox + 1)];
                    let oi = out.idx(ch, oy, ox);
                    out.data[oi] = 0.25 * s;
                }
            }
        }
        let out_id = self.push(out);
        self.ops.push(TapeOp::Pool2 { in_id, out_id });
        out_id
    }

    fn affine(&mut self, in_id: usize, off: usize, c: u32) -> usize {
        let input = self.values[in_id].clone();
        debug_assert_eq!(input.c, c);
        let mut out = input.clone();
        let plane = (input.h * input.w) as usize;
        for ch in 0..c as usize {
            let scale = self.params[off + ch];
            let shift = self.params[off + c as usize + ch];
            for v in &mut out.data[ch * plane..(ch + 1) * plane] {
                *v = *v * scale + shift;
            }
        }
        let out_id = self.push(out);
        self.ops.push(TapeOp::Affine {
            in_id,
            out_id,
            off,
            c,
        });
        out_id
    }

    fn act(&mut self, in_id: usize) -> usize {
        let input = self.values[in_id].clone();
        let mut out = input.clone();
        for v in &mut out.data {
            *v = self.activation.apply(*v);
        }
        let out_id = self.push(out);
        self.ops.push(TapeOp::Act {
            in_id,
            out_id,
            kind: self.activation,
        });
        out_id
    }

    fn gap(&mut self, in_id: usize) -> usize {
        let input = self.values[in_id].clone();
        let mut out = Tensor::zeros(input.c, 1, 1);
        let plane = (input.h * input.w) as usize;
        let inv = 1.0 / plane as f64;
        for ch in 0..input.c as usize {
            out.data[ch] = input.data[ch * plane..(ch + 1) * plane].iter().sum::<f64>() * inv;
        }
        let out_id = self.push(out);
        self.ops.push(TapeOp::Gap { in_id, out_id });
        out_id
    }

    fn linear(
        &mut self,
        in_id: usize,
        w_off: usize,
        b_off: usize,
        c_in: u32,
        c_out: u32,
    ) -> usize {
        let input = self.values[in_id].clone();
        debug_assert_eq!(input.numel(), c_in as usize);
        let mut out = Tensor::zeros(c_out, 1, 1);
        for o in 0..c_out as usize {
            let mut acc = self.params[b_off + o];
            for i in 0..c_in as usize {
                acc += self.params[w_off + o * c_in as usize + i] * input.data[i];
            }
            out.data[o] = acc;
        }
        let out_id = self.push(out);
        self.ops.push(TapeOp::Linear {
            in_id,
            out_id,
            w_off,
            b_off,
            c_in,
            c_out,
        });
        out_id
    }
}

/// Reverse sweep over the tape, accumulating value and parameter gradients.
fn backward_sweep(
    trace: &Trace,
    params: &[f64],
    value_grads: &mut [Vec<f64>],
    param_grads: &mut [f64],
) {
    for op in trace.ops.iter().rev() {
        match op {
            TapeOp::Conv {
                in_id,
                out_id,
                w_off,
                bias_off,
                k,
                c_in,
                c_out,
            } => {
                let input = &trace.values[*in_id];
                let out = &trace.values[*out_id];
                let pad = k / 2;
                // split borrows: out grad read, in grad write
                let (gout, gin) = grad_pair(value_grads, *out_id, *in_id);
                for oc in 0..*c_out {
                    for oy in 0..out.h {
                        for ox in 0..out.w {
                            let go = gout[out.idx(oc, oy, ox)];
                            if go == 0.0 {
                                continue;
                            }
                            if let Some(bo) = bias_off {
                                param_grads[bo + oc as usize] += go;
                            }
                            for ic in 0..*c_in {
                                for ky in 0..*k {
                                    let iy = oy as i64 + ky as i64 - pad as i64;
                                    if iy < 0 || iy >= input.h as i64 {
                                        continue;
                                    }
                                    for kx in 0..*k {
                                        let ix = ox as i64 + kx as i64 - pad as i64;
                                        if ix < 0 || ix >= input.w as i64 {
                                            continue;
                                        }
                                        let wi = w_off
                                            + (((oc * c_in + ic) * k + ky) * k + kx) as usize;
                                        let ii = input.idx(ic, iy as u32, ix as u32);
                                        param_grads[wi] += go * input.data[ii];
                                        gin[ii] += go * params[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            TapeOp::ConvT {
                in_id,
                out_id,
                w_off,
                c,
            } => {
                let input = &trace.values[*in_id];
                let out = &trace.values[*out_id];
                let (gout, gin) = grad_pair(value_grads, *out_id, *in_id);
                for ic in 0..*c {
                    for oc in 0..*c {
                        for iy in 0..input.h {
                            for ix in 0..input.w {
                                let ii = input.idx(ic, iy, ix);
                                let v = input.data[ii];
                                for ky in 0..3u32 {
                                    let oy = 2 * iy as i64 + ky as i64 - 1;
                                    if oy < 0 || oy >= out.h as i64 {
                                        continue;
                                    }
                                    for kx in 0..3u32 {
                                        let ox = 2 * ix as i64 + kx as i64 - 1;
                                        if ox < 0 || ox >= out.w as i64 {
                                            continue;
                                        }
                                        let wi =
                                            w_off + (((ic * c + oc) * 3 + ky) * 3 + kx) as usize;
                                        let oi = out.idx(oc, oy as u32, ox as u32);
                                        let go = gout[oi];
                                        param_grads[wi] += go * v;
                                        gin[ii] += go * params[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            TapeOp::Pool2 { in_id, out_id } => {
                let out = &trace.values[*out_id];
                let input = &trace.values[*in_id];
                let (gout, gin) = grad_pair(value_grads, *out_id, *in_id);
                for ch in 0..out.c {
                    for oy in 0..out.h {
                        for ox in 0..out.w {
                            let g = 0.25 * gout[out.idx(ch, oy, ox)];
                            gin[input.idx(ch, 2 * oy, 2 * ox)] += g;
                            gin[input.idx(ch, 2 * oy, 2 * ox + 1)] += g;
                            gin[input.idx(ch, 2 * oy + 1, 2 * ox)] += g;
                            gin[input.idx(ch, 2 * oy + 1, 2 * ox + 1)] += g;
                        }
                    }
                }
            }
            TapeOp::Affine {
                in_id,
                out_id,
                off,
                c,
            } => {
                let input = &trace.values[*in_id];
                let plane = (input.h * input.w) as usize;
                let (gout, gin) = grad_pair(value_grads, *out_id, *in_id);
                for ch in 0..*c as usize {
                    let scale = params[off + ch];
                    let mut gscale = 0.0;
                    let mut gshift = 0.0;
                    for p in 0..plane {
                        let g = gout[ch * plane + p];
                        gscale += g * input.data[ch * plane + p];
                        gshift += g;
                        gin[ch * plane + p] += g * scale;
                    }
                    param_grads[off + ch] += gscale;
                    param_grads[off + *c as usize + ch] += gshift;
                }
            }
            TapeOp::Act {
                in_id,
                out_id,
                kind,
            } => {
                let out = &trace.values[*out_id];
                let (gout, gin) = grad_pair(value_grads, *out_id, *in_id);
                for (i, g) in gout.iter().enumerate() {
                    gin[i] += g * kind.grad_from_output(out.data[i]);
                }
            }
            TapeOp::Concat { in_ids, out_id } => {
                let mut ch0 = 0usize;
                for &iid in in_ids {
                    let n = trace.values[iid].numel();
                    let (gout, gin) = grad_pair(value_grads, *out_id, iid);
                    for i in 0..n {
                        gin[i] += gout[ch0 + i];
                    }
                    ch0 += n;
                }
            }
            TapeOp::Gap { in_id, out_id } => {
                let input = &trace.values[*in_id];
                let plane = (input.h * input.w) as usize;
                let inv = 1.0 / plane as f64;
                let (gout, gin) = grad_pair(value_grads, *out_id, *in_id);
                for ch in 0..input.c as usize {
                    let g = gout[ch] * inv;
                    for p in 0..plane {
                        gin[ch * plane + p] += g;
                    }
                }
            }
            TapeOp::Linear {
                in_id,
                out_id,
                w_off,
                b_off,
                c_in,
                c_out,
            } => {
                let input = &trace.values[*in_id];
                let (gout, gin) = grad_pair(value_grads, *out_id, *in_id);
                for o in 0..*c_out as usize {
                    let go = gout[o];
                    param_grads[b_off + o] += go;
                    for i in 0..*c_in as usize {
                        param_grads[w_off + o * *c_in as usize + i] += go * input.data[i];
                        gin[i] += go * params[w_off + o * *c_in as usize + i];
                    }
                }
            }
        }
    }
}

/// Disjoint mutable access to one gradient buffer while reading another.
fn grad_pair(grads: &mut [Vec<f64>], read_id: usize, write_id: usize) -> (Vec<f64>, &mut Vec<f64>) {
    // The read side is cloned; buffers are desk-scale small and this keeps
    // the borrow structure trivial.
    let read = grads[read_id].clone();
    (read, &mut grads[write_id])
}
