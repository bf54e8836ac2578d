//! Pipeline assembly on the tape: the same per-frame computation the tracker
//! runs, expressed in ops so gradients flow through every equation — the
//! correlation/softmax attention, both layer-normalized controllers, the
//! cosine-addressed reads, the residual template, the subtraction, and the
//! final response — while memory writes between frames stay detached.

// Kernel index arithmetic reads clearer as explicit loops.
#![allow(clippy::needless_range_loop)]

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::backbone::{self, BackboneConfig, LayerSpec};
use crate::error::{Error, Result};
use crate::memory::{self, LstmState, MemoryBlock};
use crate::tensor::Tensor3;
use crate::tracker::CropGeometry;
use crate::train::tape::{NodeId, Tape};
use crate::train::{loss_labels, Snippet};
use crate::weights::{ModelConfig, ModelWeights, GATE_NAMES};

/// Leaf node per parameter tensor, in enumeration order, addressable by name.
pub struct ParamNodes {
    pub order: Vec<String>,
    pub by_name: BTreeMap<String, NodeId>,
}

pub fn insert_params(tape: &mut Tape, weights: &ModelWeights) -> ParamNodes {
    let mut order = Vec::new();
    let mut by_name = BTreeMap::new();
    weights.for_each_param(|name, _, data| {
        let id = tape.leaf(data.to_vec());
        order.push(String::from(name));
        by_name.insert(String::from(name), id);
    });
    ParamNodes { order, by_name }
}

impl ParamNodes {
    pub fn get(&self, name: &str) -> NodeId {
        *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }
}

/// `W x + b` with parameter nodes.
fn dense(tape: &mut Tape, w: NodeId, b: NodeId, x: NodeId, rows: usize, cols: usize) -> NodeId {
    let y = tape.matvec(w, x, rows, cols);
    tape.add(y, b)
}

/// Per-controller parameter nodes.
pub struct ControllerNodes {
    pub init_h: (NodeId, NodeId),
    pub init_c: (NodeId, NodeId),
    pub w_x: [NodeId; 4],
    pub w_h: [NodeId; 4],
    pub ln_gain: [NodeId; 4],
    pub ln_bias: [NodeId; 4],
    pub read_key: (NodeId, NodeId),
    pub write_gate: (NodeId, NodeId),
    pub residual_gate: (NodeId, NodeId),
    pub input_dim: usize,
    pub hidden: usize,
    pub channels: usize,
}

impl ControllerNodes {
    pub fn resolve(params: &ParamNodes, tag: &str, input_dim: usize, hidden: usize, channels: usize) -> Self {
        let g = |suffix: &str| params.get(&format!("{tag}.{suffix}"));
        Self {
            init_h: (g("init_h.w"), g("init_h.b")),
            init_c: (g("init_c.w"), g("init_c.b")),
            w_x: core::array::from_fn(|i| g(&format!("lstm.{}.w_x", GATE_NAMES[i]))),
            w_h: core::array::from_fn(|i| g(&format!("lstm.{}.w_h", GATE_NAMES[i]))),
            ln_gain: core::array::from_fn(|i| g(&format!("lstm.{}.ln_gain", GATE_NAMES[i]))),
            ln_bias: core::array::from_fn(|i| g(&format!("lstm.{}.ln_bias", GATE_NAMES[i]))),
            read_key: (g("read_key.w"), g("read_key.b")),
            write_gate: (g("write_gate.w"), g("write_gate.b")),
            residual_gate: (g("residual_gate.w"), g("residual_gate.b")),
            input_dim,
            hidden,
            channels,
        }
    }
}

/// Controller state init on the tape: pooled feature through tanh projections.
pub fn controller_init_nodes(
    tape: &mut Tape,
    ctrl: &ControllerNodes,
    feature: NodeId,
    positions: usize,
) -> (NodeId, NodeId) {
    // Global average per channel == avgpool with a full window; express it
    // as a weighted fiber sum with uniform weights to stay 1-D.
    let uniform = tape.leaf(vec![1.0 / positions as f64; positions]);
    let pooled = tape.weighted_fiber_sum(uniform, feature, positions, ctrl.channels);
    let h_lin = dense(
        tape,
        ctrl.init_h.0,
        ctrl.init_h.1,
        pooled,
        ctrl.hidden,
        ctrl.channels,
    );
    let h0 = tape.tanh(h_lin);
    let c_lin = dense(
        tape,
        ctrl.init_c.0,
        ctrl.init_c.1,
        pooled,
        ctrl.hidden,
        ctrl.channels,
    );
    let c0 = tape.tanh(c_lin);
    (h0, c0)
}

/// One layer-normalized LSTM step on the tape. `dropout_mask`, when present,
/// multiplies the input (inverted dropout).
pub fn lstm_step_nodes(
    tape: &mut Tape,
    ctrl: &ControllerNodes,
    input: NodeId,
    h: NodeId,
    c: NodeId,
    dropout_mask: Option<Vec<f64>>,
) -> (NodeId, NodeId) {
    let x = match dropout_mask {
        Some(m) => tape.dropout(input, m),
        None => input,
    };
    let mut gates = [0usize; 4];
    for g in 0..4 {
        let from_x = tape.matvec(ctrl.w_x[g], x, ctrl.hidden, ctrl.input_dim);
        let from_h = tape.matvec(ctrl.w_h[g], h, ctrl.hidden, ctrl.hidden);
        let pre = tape.add(from_x, from_h);
        gates[g] = tape.layer_norm(pre, ctrl.ln_gain[g], ctrl.ln_bias[g]);
    }
    let i = tape.sigmoid(gates[0]);
    let f = tape.sigmoid(gates[1]);
    let g = tape.tanh(gates[2]);
    let o = tape.sigmoid(gates[3]);
    let fc = tape.mul(f, c);
    let ig = tape.mul(i, g);
    let c_next = tape.add(fc, ig);
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc);
    (h_next, c_next)
}

pub struct AttentionNodes {
    pub scores: NodeId,
    pub pooled: NodeId,
    pub fiber: NodeId,
    pub tiled: NodeId,
    pub map_positions: usize,
}

/// Attention on the tape: correlate, softmax, pool, weighted-mean, tile.
pub fn attention_nodes(
    tape: &mut Tape,
    f: NodeId,
    n: usize,
    c: usize,
    m_last: NodeId,
    m: usize,
) -> AttentionNodes {
    let r = tape.xcorr(f, m_last, n, n, m, m, c);
    let scores = tape.softmax_vec(r);
    let pooled = tape.avgpool(f, n, n, c, m, 1);
    let a = n - m + 1;
    let positions = a * a;
    let fiber = tape.weighted_fiber_sum(scores, pooled, positions, c);
    let tiled = tape.tile(fiber, m * m);
    AttentionNodes {
        scores,
        pooled,
        fiber,
        tiled,
        map_positions: positions,
    }
}

pub struct ReadNodes {
    pub template: NodeId,
    pub weights: NodeId,
}

/// Cosine-addressed read against a detached memory block: slot keys and
/// contents are constants, the read key and weights differentiate.
pub fn read_nodes(tape: &mut Tape, ctrl: &ControllerNodes, h: NodeId, block: &MemoryBlock) -> ReadNodes {
    let key = dense(
        tape,
        ctrl.read_key.0,
        ctrl.read_key.1,
        h,
        ctrl.channels,
        ctrl.hidden,
    );
    let keys: Vec<Vec<f64>> = (0..block.slot_count())
        .map(|k| block.key(k).to_vec())
        .collect();
    let sims = tape.cosine_to_keys(key, keys);
    let weights = tape.softmax_vec(sims);
    let items: Vec<Vec<f64>> = (0..block.slot_count())
        .map(|k| block.slot(k).data().to_vec())
        .collect();
    let template = tape.weighted_const_sum(weights, items);
    ReadNodes { template, weights }
}

/// Residual template on the tape: `initial + sigmoid(Wh+b) (x)_c retrieved`.
pub fn residual_nodes(
    tape: &mut Tape,
    ctrl: &ControllerNodes,
    h: NodeId,
    initial: NodeId,
    retrieved: NodeId,
    positions: usize,
) -> NodeId {
    let lin = dense(
        tape,
        ctrl.residual_gate.0,
        ctrl.residual_gate.1,
        h,
        ctrl.channels,
        ctrl.hidden,
    );
    let gate = tape.sigmoid(lin);
    let gated = tape.channel_gate(gate, retrieved, positions, ctrl.channels);
    tape.add(initial, gated)
}

fn dropout_mask(len: usize, rate: f64, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect()
}

/// Training-time stochasticity; inference builds are exactly deterministic.
pub enum TrainMode<'a> {
    Inference,
    Dropout { rate: f64, rng: &'a mut ChaCha12Rng },
}

/// The assembled snippet graph.
pub struct SnippetGraph {
    pub loss: NodeId,
    pub params: ParamNodes,
}

/// The detached memory states a snippet build consumed: entry `t - 1` is the
/// block each frame `t` read from. Gradients stop at written memory, so the
/// finite-difference oracle must hold these fixed ("replay") while the
/// analytic build records them.
#[derive(Debug, Clone)]
pub struct MemoryTrace {
    pub fg: Vec<MemoryBlock>,
    pub bg: Vec<MemoryBlock>,
}

/// Build the forward pass over a ground-truth-driven snippet and return the
/// mean per-frame heat-map loss plus the memory trace.
///
/// Frame 0 initializes: the target feature seeds both the (detached) memory
/// contents and the controller states, exactly as the tracker's `init` does.
/// Every later frame crops the search region around the previous truth box,
/// runs attention + controllers + reads + subtraction, and scores the
/// response against the truth position. Writes happen between frames with
/// detached values (recorded into the trace), or are skipped entirely when
/// `frozen` replays a previous trace.
pub fn snippet_graph(
    tape: &mut Tape,
    weights: &ModelWeights,
    mc: &ModelConfig,
    snippet: &Snippet,
    crop_factor: f64,
    mut mode: TrainMode<'_>,
    frozen: Option<&MemoryTrace>,
) -> Result<(SnippetGraph, MemoryTrace)> {
    if snippet.frames.len() < 2 {
        return Err(Error::InvalidConfig(String::from(
            "snippets need at least 2 frames",
        )));
    }
    let bb = &mc.backbone;
    let params = insert_params(tape, weights);
    let fg = ControllerNodes::resolve(&params, "fg", mc.fg_input_dim(), mc.hidden, bb.channels);
    let bg = ControllerNodes::resolve(&params, "bg", mc.bg_input_dim(), mc.hidden, bb.channels);
    let (n, m, c) = (bb.roi_feat, bb.target_feat, bb.channels);
    let a = bb.map_side();

    // Frame 0: differentiable target and background features.
    let bbox0 = snippet.truth[0].bbox;
    let patch0 = backbone::crop_target(&snippet.frames[0], &bbox0, crop_factor, bb)?;
    let patch0_node = tape.leaf(patch0.data.data().to_vec());
    let (f0, f0_dims) =
        conv_stack_build(tape, bb, &params, patch0_node, bb.target_input, bb.target_input)?;
    debug_assert_eq!(f0_dims, (m, m, c));

    let (mut fg_h, mut fg_c) = controller_init_nodes(tape, &fg, f0, m * m);

    let bg0 = background_template_nodes(tape, bb, &params, &snippet.frames[0], &bbox0, crop_factor)?;
    let (mut bg_h, mut bg_c) = controller_init_nodes(tape, &bg, bg0, m * m);

    // Detached memory blocks seeded from the frame-0 values.
    let f0_tensor = Tensor3::from_raw(m, m, c, tape.value(f0).to_vec());
    let bg0_tensor = Tensor3::from_raw(m, m, c, tape.value(bg0).to_vec());
    let mut fg_mem = MemoryBlock::filled(mc.slots, f0_tensor);
    let mut bg_mem = MemoryBlock::filled(mc.slots, bg0_tensor);
    let mut trace = MemoryTrace {
        fg: Vec::new(),
        bg: Vec::new(),
    };

    let mut last_read = f0;
    let mut frame_losses = Vec::new();

    let cal_gain = params.get("calibration.log_gain");
    let cal_bias = params.get("calibration.bias");

    for t in 1..snippet.frames.len() {
        // Pin or record the detached memory this frame reads from.
        let (fg_now, bg_now) = match frozen {
            Some(f) => (f.fg[t - 1].clone(), f.bg[t - 1].clone()),
            None => (fg_mem.clone(), bg_mem.clone()),
        };
        trace.fg.push(fg_now.clone());
        trace.bg.push(bg_now.clone());

        let prev_box = snippet.truth[t - 1].bbox;
        let crop_side = 2.0 * backbone::target_crop_side(&prev_box, crop_factor);
        let roi = backbone::crop_square(
            &snippet.frames[t],
            (prev_box.cx, prev_box.cy),
            crop_side,
            bb.roi_input,
        );
        let roi_node = tape.leaf(roi.data.data().to_vec());
        let (f_t, _) = conv_stack_build(tape, bb, &params, roi_node, bb.roi_input, bb.roi_input)?;

        let att = attention_nodes(tape, f_t, n, c, last_read, m);

        let fg_mask = match &mut mode {
            TrainMode::Inference => None,
            TrainMode::Dropout { rate, rng } => Some(dropout_mask(mc.fg_input_dim(), *rate, rng)),
        };
        let (h1, c1) = lstm_step_nodes(tape, &fg, att.tiled, fg_h, fg_c, fg_mask);
        fg_h = h1;
        fg_c = c1;
        let fg_read = read_nodes(tape, &fg, fg_h, &fg_now);
        let m_tpl = residual_nodes(tape, &fg, fg_h, f0, fg_read.template, m * m);

        // Background controller input: the pooled attention feature averaged
        // over all positions.
        let uniform = tape.leaf(vec![1.0 / att.map_positions as f64; att.map_positions]);
        let bg_in = tape.weighted_fiber_sum(uniform, att.pooled, att.map_positions, c);
        let bg_mask = match &mut mode {
            TrainMode::Inference => None,
            TrainMode::Dropout { rate, rng } => Some(dropout_mask(mc.bg_input_dim(), *rate, rng)),
        };
        let (bh, bc) = lstm_step_nodes(tape, &bg, bg_in, bg_h, bg_c, bg_mask);
        bg_h = bh;
        bg_c = bc;
        let bg_read = read_nodes(tape, &bg, bg_h, &bg_now);

        let m_bar = tape.sub(m_tpl, bg_read.template);
        let response = tape.xcorr(f_t, m_bar, n, n, m, m, c);

        // Learned calibration before the loss; inference never sees it.
        let gain = tape.exp(cal_gain);
        let scaled = tape.scalar_mul_vec(gain, response);
        let calibrated = tape.scalar_add_vec(cal_bias, scaled);

        let geom = CropGeometry {
            crop_side,
            input_side: bb.roi_input,
            total_stride: bb.total_stride,
            center: (prev_box.cx, prev_box.cy),
        };
        let truth_cell = geom.frame_to_cell(a, (snippet.truth[t].bbox.cx, snippet.truth[t].bbox.cy));
        let (labels, cell_weights) = loss_labels(a, truth_cell, 1.0);
        frame_losses.push(tape.logistic_loss(calibrated, labels, cell_weights));

        // Detached writes, mirroring the tracker's update order. A frozen
        // build skips them: its reads come from the replayed trace.
        if frozen.is_none() {
            let write_feature = {
                let tbox = snippet.truth[t].bbox;
                let patch = backbone::crop_target(&snippet.frames[t], &tbox, crop_factor, bb)?;
                backbone::extract(&patch, bb, &weights.backbone)?
            };
            let fg_state = LstmState {
                h: tape.value(fg_h).to_vec(),
                c: tape.value(fg_c).to_vec(),
            };
            let fg_read_weights = tape.value(fg_read.weights).to_vec();
            memory::write(
                &mut fg_mem,
                &fg_state,
                &weights.fg.write_gate,
                &write_feature,
                &fg_read_weights,
            )?;
            let bg_feature = background_template_values(
                &snippet.frames[t],
                &snippet.truth[t].bbox,
                weights,
                mc,
                crop_factor,
            )?;
            let bg_state = LstmState {
                h: tape.value(bg_h).to_vec(),
                c: tape.value(bg_c).to_vec(),
            };
            let bg_read_weights = tape.value(bg_read.weights).to_vec();
            memory::write(
                &mut bg_mem,
                &bg_state,
                &weights.bg.write_gate,
                &bg_feature,
                &bg_read_weights,
            )?;
        }

        last_read = m_tpl;
    }

    let count = frame_losses.len();
    let total = tape.sum_scalars(frame_losses);
    let loss = tape.scale(total, 1.0 / count as f64);
    Ok((SnippetGraph { loss, params }, trace))
}

/// On-tape background template: masked search patch through the conv stack,
/// pooled to the template shape (fully differentiable in the conv weights).
fn background_template_nodes(
    tape: &mut Tape,
    bb: &BackboneConfig,
    params: &ParamNodes,
    frame: &crate::image::Image,
    bbox: &crate::tracker::BoundingBox,
    crop_factor: f64,
) -> Result<NodeId> {
    let roi = backbone::crop_roi(frame, bbox, crop_factor, bb)?;
    let crop_side = 2.0 * backbone::target_crop_side(bbox, crop_factor);
    let px = bb.roi_input as f64 / crop_side;
    let box_in_roi = crate::tracker::BoundingBox::new(
        bb.roi_input as f64 / 2.0,
        bb.roi_input as f64 / 2.0,
        bbox.width * px,
        bbox.height * px,
    );
    let masked = backbone::mask_background(&roi, &box_in_roi);
    let masked_node = tape.leaf(masked.data.data().to_vec());
    let (feat, dims) =
        conv_stack_build(tape, bb, params, masked_node, bb.roi_input, bb.roi_input)?;
    let (n, m) = (dims.0, bb.target_feat);
    if n == m {
        return Ok(feat);
    }
    let stride = n / m;
    let window = n - (m - 1) * stride;
    Ok(tape.avgpool(feat, n, n, dims.2, window, stride))
}

/// Value-level background template, identical to the tracker's construction.
fn background_template_values(
    frame: &crate::image::Image,
    bbox: &crate::tracker::BoundingBox,
    weights: &ModelWeights,
    mc: &ModelConfig,
    crop_factor: f64,
) -> Result<Tensor3> {
    let bb = &mc.backbone;
    let roi = backbone::crop_roi(frame, bbox, crop_factor, bb)?;
    let crop_side = 2.0 * backbone::target_crop_side(bbox, crop_factor);
    let px = bb.roi_input as f64 / crop_side;
    let box_in_roi = crate::tracker::BoundingBox::new(
        bb.roi_input as f64 / 2.0,
        bb.roi_input as f64 / 2.0,
        bbox.width * px,
        bbox.height * px,
    );
    let masked = backbone::mask_background(&roi, &box_in_roi);
    let feat = backbone::forward(&masked.data, bb, &weights.backbone)?;
    crate::tracker::pool_to_template(&feat, bb.target_feat)
}

/// Quadratic-loss composition over one read + residual mix + differentiable
/// write, exercising the write gate (which the snippet loss cannot reach:
/// written memory is detached across frames by contract).
pub fn memory_rw_graph(
    tape: &mut Tape,
    weights: &ModelWeights,
    mc: &ModelConfig,
    seed: u64,
) -> Result<SnippetGraph> {
    use rand::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let bb = &mc.backbone;
    let (m, c) = (bb.target_feat, bb.channels);
    let params = insert_params(tape, weights);
    let fg = ControllerNodes::resolve(&params, "fg", mc.fg_input_dim(), mc.hidden, bb.channels);

    let mut rand_vec = |len: usize| -> Vec<f64> {
        (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    };
    let slots: Vec<Tensor3> = (0..mc.slots)
        .map(|_| Tensor3::from_raw(m, m, c, rand_vec(m * m * c)))
        .collect();
    let block = MemoryBlock::from_slots(slots)?;

    let input = tape.leaf(rand_vec(mc.fg_input_dim()));
    let h0 = tape.leaf(rand_vec(mc.hidden));
    let c0 = tape.leaf(rand_vec(mc.hidden));
    let (h, _c) = lstm_step_nodes(tape, &fg, input, h0, c0, None);

    let read = read_nodes(tape, &fg, h, &block);
    let initial = tape.leaf(rand_vec(m * m * c));
    let residual = residual_nodes(tape, &fg, h, initial, read.template, m * m);

    // Differentiable within-frame write.
    let gate_lin = dense(tape, fg.write_gate.0, fg.write_gate.1, h, 3, mc.hidden);
    let gate = tape.softmax_vec(gate_lin);
    let g_read = tape.slice(gate, 1, 1);
    let g_lru = tape.slice(gate, 2, 1);
    let scaled_read = tape.scalar_mul_vec(g_read, read.weights);
    let lru = block.lru_slot();
    let mut onehot = vec![0.0; mc.slots];
    onehot[lru] = 1.0;
    let onehot_node = tape.leaf(onehot);
    let lru_part = tape.scalar_mul_vec(g_lru, onehot_node);
    let write_w = tape.add(scaled_read, lru_part);

    let feature = tape.leaf(rand_vec(m * m * c));
    let mut losses = vec![tape.sum_squares(read.template), tape.sum_squares(residual)];
    for k in 0..mc.slots {
        let wk = tape.slice(write_w, k, 1);
        let slot_node = tape.leaf(block.slot(k).data().to_vec());
        let delta = tape.sub(feature, slot_node);
        let scaled = tape.scalar_mul_vec(wk, delta);
        let written = tape.add(slot_node, scaled);
        losses.push(tape.sum_squares(written));
    }
    let total = tape.sum_scalars(losses);
    let loss = tape.scale(total, 1.0 / (mc.slots + 2) as f64);
    Ok(SnippetGraph { loss, params })
}

/// Run the configured conv stack on the tape. Pool layers other than average
/// pooling are rejected (the training presets are all-conv by design).
pub fn conv_stack_build(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    params: &ParamNodes,
    input: NodeId,
    in_h: usize,
    in_w: usize,
) -> Result<(NodeId, (usize, usize, usize))> {
    let mut x = input;
    let (mut h, mut w, mut c) = (in_h, in_w, 3usize);
    let mut conv_idx = 0usize;
    for spec in &cfg.layers {
        match *spec {
            LayerSpec::Conv {
                kh,
                kw,
                cin,
                cout,
                stride,
                relu,
            } => {
                debug_assert_eq!(cin, c);
                let kernel = params.get(&format!("backbone.conv{conv_idx}.kernel"));
                let bias = params.get(&format!("backbone.conv{conv_idx}.bias"));
                x = tape.conv(x, kernel, bias, h, w, c, kh, kw, cout, stride);
                if relu {
                    x = tape.relu(x);
                }
                h = (h - kh) / stride + 1;
                w = (w - kw) / stride + 1;
                c = cout;
                conv_idx += 1;
            }
            LayerSpec::AvgPool { window, stride } => {
                x = tape.avgpool(x, h, w, c, window, stride);
                h = (h - window) / stride + 1;
                w = (w - window) / stride + 1;
            }
            LayerSpec::MaxPool { .. } => {
                return Err(Error::InvalidConfig(String::from(
                    "max pooling is not differentiable on the training tape; use an all-conv preset",
                )))
            }
        }
    }
    Ok((x, (h, w, c)))
}
