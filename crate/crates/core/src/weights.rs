//! Model parameters: backbone convolutions, the two memory controllers, and
//! the response calibration used by the training loss.
//!
//! Every parameter tensor is reachable through [`ModelWeights::for_each_param`]
//! in a fixed order, which is what the checkpoint format, the optimizer, and
//! the gradient checks key on.

// Kernel index arithmetic reads clearer as explicit loops.
#![allow(clippy::needless_range_loop)]

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::backbone::{BackboneConfig, LayerSpec};
use crate::error::{Error, Result};
use crate::math;

/// Gate order inside [`LnLstm`] arrays: input, forget, cell, output.
pub const GATE_NAMES: [&str; 4] = ["i", "f", "g", "o"];

/// Dense affine map `y = W x + b`, `W` row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }

    pub fn seeded(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Self {
        let bound = 1.0 / math::sqrt(cols as f64);
        Self {
            rows,
            cols,
            w: uniform_vec(rows * cols, bound, rng),
            b: vec![0.0; rows],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut out = self.b.clone();
        for r in 0..self.rows {
            out[r] += math::dot(&self.w[r * self.cols..(r + 1) * self.cols], x);
        }
        out
    }
}

/// One convolution layer's parameters. Kernel layout is
/// `[out_channel][ky][kx][in_channel]`, so each `(out_channel, ky)` row is a
/// contiguous `kx * in_channels` span like the input rows it multiplies.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneWeights {
    pub convs: Vec<ConvWeights>,
}

impl BackboneWeights {
    pub fn zeros(config: &BackboneConfig) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut out = Self::seeded_with(config, &mut rng);
        for conv in out.convs.iter_mut() {
            conv.kernel.iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }

    pub fn seeded(config: &BackboneConfig, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Self::seeded_with(config, &mut rng)
    }

    pub fn seeded_with(config: &BackboneConfig, rng: &mut ChaCha12Rng) -> Self {
        let mut convs = Vec::new();
        for spec in &config.layers {
            if let LayerSpec::Conv {
                kh, kw, cin, cout, ..
            } = *spec
            {
                let bound = 1.0 / math::sqrt((kh * kw * cin) as f64);
                convs.push(ConvWeights {
                    kernel: uniform_vec(kh * kw * cin * cout, bound, rng),
                    bias: vec![0.0; cout],
                    kh,
                    kw,
                    cin,
                    cout,
                });
            }
        }
        Self { convs }
    }
}

/// LSTM with per-gate layer normalization on the pre-activations.
#[derive(Debug, Clone, PartialEq)]
pub struct LnLstm {
    pub input_dim: usize,
    pub hidden: usize,
    /// Input projections, one `hidden x input_dim` matrix per gate.
    pub w_x: [Vec<f64>; 4],
    /// Recurrent projections, one `hidden x hidden` matrix per gate.
    pub w_h: [Vec<f64>; 4],
    pub ln_gain: [Vec<f64>; 4],
    pub ln_bias: [Vec<f64>; 4],
}

impl LnLstm {
    pub fn seeded(input_dim: usize, hidden: usize, rng: &mut ChaCha12Rng) -> Self {
        let bx = 1.0 / math::sqrt(input_dim as f64);
        let bh = 1.0 / math::sqrt(hidden as f64);
        let w_x = core::array::from_fn(|_| uniform_vec(hidden * input_dim, bx, rng));
        let w_h = core::array::from_fn(|_| uniform_vec(hidden * hidden, bh, rng));
        let ln_gain = core::array::from_fn(|_| vec![1.0; hidden]);
        // Forget gate opens at 1 so early cells are not erased by a cold start.
        let ln_bias = core::array::from_fn(|g| vec![if g == 1 { 1.0 } else { 0.0 }; hidden]);
        Self {
            input_dim,
            hidden,
            w_x,
            w_h,
            ln_gain,
            ln_bias,
        }
    }
}

/// Everything one memory controller owns: state initialization, the LSTM,
/// and the read-key / write-gate / residual-gate projections.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerWeights {
    /// Hidden-state init from the pooled first-frame feature (`hidden x c`).
    pub init_h: Dense,
    /// Cell-state init, separate weights (`hidden x c`).
    pub init_c: Dense,
    pub lstm: LnLstm,
    /// Read key projection (`c x hidden`).
    pub read_key: Dense,
    /// Three-way write gate: skip / overwrite read slots / allocate LRU.
    pub write_gate: Dense,
    /// Per-channel residual mixing gate (`c x hidden`).
    pub residual_gate: Dense,
}

impl ControllerWeights {
    pub fn seeded(input_dim: usize, hidden: usize, channels: usize, rng: &mut ChaCha12Rng) -> Self {
        Self {
            init_h: Dense::seeded(hidden, channels, rng),
            init_c: Dense::seeded(hidden, channels, rng),
            lstm: LnLstm::seeded(input_dim, hidden, rng),
            read_key: Dense::seeded(channels, hidden, rng),
            write_gate: Dense::seeded(3, hidden, rng),
            residual_gate: Dense::seeded(channels, hidden, rng),
        }
    }
}

/// Learned affine map applied to the response before the training loss:
/// `h = exp(log_gain) * H + bias`. The exponential keeps the gain positive,
/// so the trained response ordering matches what inference sees.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseCalibration {
    pub log_gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Default for ResponseCalibration {
    fn default() -> Self {
        Self {
            log_gain: vec![0.0],
            bias: vec![0.0],
        }
    }
}

/// Model dimensions: backbone preset, controller width, memory slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub hidden: usize,
    pub slots: usize,
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            backbone: BackboneConfig::paper(),
            hidden: 512,
            slots: 8,
        }
    }

    pub fn toy() -> Self {
        Self {
            backbone: BackboneConfig::toy(),
            hidden: 16,
            slots: 8,
        }
    }

    /// Smallest assembly that exercises every code path; used by the
    /// finite-difference gradient checks (m=2, c=3, K=3, d=8).
    pub fn micro() -> Self {
        Self {
            backbone: BackboneConfig::micro(),
            hidden: 8,
            slots: 3,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "toy" => Ok(Self::toy()),
            "micro" => Ok(Self::micro()),
            other => Err(Error::InvalidConfig(format!("unknown preset `{other}`"))),
        }
    }

    pub fn preset_name(&self) -> &'static str {
        if self.backbone == BackboneConfig::paper() && self.hidden == 512 {
            "paper"
        } else if self.backbone == BackboneConfig::toy() && self.hidden == 16 {
            "toy"
        } else {
            "micro"
        }
    }

    /// Controller input width on the target path (`m * m * c`).
    pub fn fg_input_dim(&self) -> usize {
        let b = &self.backbone;
        b.target_feat * b.target_feat * b.channels
    }

    /// Controller input width on the background path (pooled to `c`).
    pub fn bg_input_dim(&self) -> usize {
        self.backbone.channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub backbone: BackboneWeights,
    pub fg: ControllerWeights,
    pub bg: ControllerWeights,
    pub calibration: ResponseCalibration,
}

impl ModelWeights {
    /// Fan-in scaled uniform initialization, fully determined by `seed`.
    pub fn seeded(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let backbone = BackboneWeights::seeded_with(&config.backbone, &mut rng);
        let c = config.backbone.channels;
        let fg = ControllerWeights::seeded(config.fg_input_dim(), config.hidden, c, &mut rng);
        let bg = ControllerWeights::seeded(config.bg_input_dim(), config.hidden, c, &mut rng);
        Self {
            backbone,
            fg,
            bg,
            calibration: ResponseCalibration::default(),
        }
    }

    /// Visit every parameter tensor as `(name, dims, data)` in a fixed order.
    pub fn for_each_param(&self, mut f: impl FnMut(&str, &[usize], &[f64])) {
        self.walk(|name, dims, data| f(name, dims, data));
    }

    /// Mutable variant; same order and names as [`Self::for_each_param`].
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&str, &mut Vec<f64>)) {
        // Backbone
        for (i, conv) in self.backbone.convs.iter_mut().enumerate() {
            f(&format!("backbone.conv{i}.kernel"), &mut conv.kernel);
            f(&format!("backbone.conv{i}.bias"), &mut conv.bias);
        }
        for (tag, ctrl) in [("fg", &mut self.fg), ("bg", &mut self.bg)] {
            f(&format!("{tag}.init_h.w"), &mut ctrl.init_h.w);
            f(&format!("{tag}.init_h.b"), &mut ctrl.init_h.b);
            f(&format!("{tag}.init_c.w"), &mut ctrl.init_c.w);
            f(&format!("{tag}.init_c.b"), &mut ctrl.init_c.b);
            for g in 0..4 {
                let gn = GATE_NAMES[g];
                f(&format!("{tag}.lstm.{gn}.w_x"), &mut ctrl.lstm.w_x[g]);
                f(&format!("{tag}.lstm.{gn}.w_h"), &mut ctrl.lstm.w_h[g]);
                f(&format!("{tag}.lstm.{gn}.ln_gain"), &mut ctrl.lstm.ln_gain[g]);
                f(&format!("{tag}.lstm.{gn}.ln_bias"), &mut ctrl.lstm.ln_bias[g]);
            }
            f(&format!("{tag}.read_key.w"), &mut ctrl.read_key.w);
            f(&format!("{tag}.read_key.b"), &mut ctrl.read_key.b);
            f(&format!("{tag}.write_gate.w"), &mut ctrl.write_gate.w);
            f(&format!("{tag}.write_gate.b"), &mut ctrl.write_gate.b);
            f(&format!("{tag}.residual_gate.w"), &mut ctrl.residual_gate.w);
            f(&format!("{tag}.residual_gate.b"), &mut ctrl.residual_gate.b);
        }
        f("calibration.log_gain", &mut self.calibration.log_gain);
        f("calibration.bias", &mut self.calibration.bias);
    }

    fn walk(&self, mut f: impl FnMut(&str, &[usize], &[f64])) {
        for (i, conv) in self.backbone.convs.iter().enumerate() {
            f(
                &format!("backbone.conv{i}.kernel"),
                &[conv.cout, conv.kh, conv.kw, conv.cin],
                &conv.kernel,
            );
            f(
                &format!("backbone.conv{i}.bias"),
                &[conv.bias.len()],
                &conv.bias,
            );
        }
        for (tag, ctrl) in [("fg", &self.fg), ("bg", &self.bg)] {
            let d = ctrl.lstm.hidden;
            let din = ctrl.lstm.input_dim;
            let c = ctrl.read_key.rows;
            f(
                &format!("{tag}.init_h.w"),
                &[d, ctrl.init_h.cols],
                &ctrl.init_h.w,
            );
            f(&format!("{tag}.init_h.b"), &[d], &ctrl.init_h.b);
            f(
                &format!("{tag}.init_c.w"),
                &[d, ctrl.init_c.cols],
                &ctrl.init_c.w,
            );
            f(&format!("{tag}.init_c.b"), &[d], &ctrl.init_c.b);
            for g in 0..4 {
                let gn = GATE_NAMES[g];
                f(&format!("{tag}.lstm.{gn}.w_x"), &[d, din], &ctrl.lstm.w_x[g]);
                f(&format!("{tag}.lstm.{gn}.w_h"), &[d, d], &ctrl.lstm.w_h[g]);
                f(&format!("{tag}.lstm.{gn}.ln_gain"), &[d], &ctrl.lstm.ln_gain[g]);
                f(&format!("{tag}.lstm.{gn}.ln_bias"), &[d], &ctrl.lstm.ln_bias[g]);
            }
            f(&format!("{tag}.read_key.w"), &[c, d], &ctrl.read_key.w);
            f(&format!("{tag}.read_key.b"), &[c], &ctrl.read_key.b);
            f(&format!("{tag}.write_gate.w"), &[3, d], &ctrl.write_gate.w);
            f(&format!("{tag}.write_gate.b"), &[3], &ctrl.write_gate.b);
            f(
                &format!("{tag}.residual_gate.w"),
                &[c, d],
                &ctrl.residual_gate.w,
            );
            f(&format!("{tag}.residual_gate.b"), &[c], &ctrl.residual_gate.b);
        }
        f("calibration.log_gain", &[1], &self.calibration.log_gain);
        f("calibration.bias", &[1], &self.calibration.bias);
    }

    /// Number of parameter tensors.
    pub fn param_tensor_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(|_, _, _| n += 1);
        n
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(|_, _, d| n += d.len());
        n
    }

    /// Rebuild weights from named tensors (checkpoint loading). Every
    /// parameter must be present with the exact length; extras are rejected.
    pub fn from_named(config: &ModelConfig, entries: &[(String, Vec<f64>)]) -> Result<Self> {
        let mut map: BTreeMap<&str, &Vec<f64>> = BTreeMap::new();
        for (name, data) in entries {
            if map.insert(name.as_str(), data).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate parameter `{name}` in checkpoint"
                )));
            }
        }
        let mut out = Self::seeded(config, 0);
        let mut err: Option<Error> = None;
        let mut used = 0usize;
        out.for_each_param_mut(|name, data| {
            if err.is_some() {
                return;
            }
            match map.get(name) {
                Some(src) if src.len() == data.len() => {
                    data.copy_from_slice(src);
                    used += 1;
                }
                Some(src) => {
                    err = Some(Error::LengthMismatch {
                        op: "checkpoint parameter",
                        left: src.len(),
                        right: data.len(),
                    });
                }
                None => {
                    err = Some(Error::InvalidConfig(format!(
                        "checkpoint is missing parameter `{name}`"
                    )));
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if used != map.len() {
            return Err(Error::InvalidConfig(format!(
                "checkpoint carries {} unknown parameter(s)",
                map.len() - used
            )));
        }
        Ok(out)
    }
}

fn uniform_vec(len: usize, bound: f64, rng: &mut ChaCha12Rng) -> Vec<f64> {
    (0..len)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_weights_are_reproducible() {
        let cfg = ModelConfig::micro();
        let a = ModelWeights::seeded(&cfg, 7);
        let b = ModelWeights::seeded(&cfg, 7);
        assert_eq!(a, b);
        let c = ModelWeights::seeded(&cfg, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn named_round_trip() {
        let cfg = ModelConfig::micro();
        let w = ModelWeights::seeded(&cfg, 3);
        let mut entries = Vec::new();
        w.for_each_param(|name, _, data| entries.push((String::from(name), data.to_vec())));
        let back = ModelWeights::from_named(&cfg, &entries).unwrap();
        assert_eq!(w, back);
    }

    #[test]
    fn missing_parameter_is_rejected() {
        let cfg = ModelConfig::micro();
        let w = ModelWeights::seeded(&cfg, 3);
        let mut entries = Vec::new();
        w.for_each_param(|name, _, data| entries.push((String::from(name), data.to_vec())));
        entries.pop();
        assert!(ModelWeights::from_named(&cfg, &entries).is_err());
    }

    #[test]
    fn mutable_and_shared_enumeration_agree() {
        let cfg = ModelConfig::micro();
        let mut w = ModelWeights::seeded(&cfg, 1);
        let mut names_shared = Vec::new();
        w.for_each_param(|n, _, _| names_shared.push(String::from(n)));
        let mut names_mut = Vec::new();
        w.for_each_param_mut(|n, _| names_mut.push(String::from(n)));
        assert_eq!(names_shared, names_mut);
    }
}
