//! Offline training at desk scale: snippet losses on the response map,
//! reverse-mode gradients through the whole per-frame pipeline (memory
//! writes detached across frames), Adam updates, and finite-difference
//! verification of every parameter group.

pub mod gradcheck;
pub mod graph;
pub mod tape;

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math;
use crate::synth::{self, FrameTruth, Scenario};
use crate::tensor::Matrix2;
use crate::weights::{ModelConfig, ModelWeights};

pub use graph::TrainMode;

/// The per-cell response loss; one kind exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    BalancedLogistic,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Adam learning rate.
    pub lr: f64,
    /// Learning-rate decay factor, applied every `decay_interval` iterations.
    pub decay: f64,
    pub decay_interval: usize,
    pub iterations: usize,
    /// Number of sequence snippets in the training set.
    pub snippets: usize,
    /// Frames per snippet (>= 2).
    pub snippet_len: usize,
    pub seed: u64,
    /// Input dropout rate, training mode only.
    pub dropout: f64,
    pub loss: LossKind,
}

impl TrainConfig {
    pub fn toy(iterations: usize, seed: u64) -> Self {
        Self {
            model: ModelConfig::toy(),
            lr: 1e-4,
            decay: 0.98,
            decay_interval: 500,
            iterations,
            snippets: 20,
            snippet_len: 4,
            seed,
            dropout: 0.2,
            loss: LossKind::BalancedLogistic,
        }
    }

    pub fn micro(iterations: usize, seed: u64) -> Self {
        Self {
            model: ModelConfig::micro(),
            snippets: 4,
            snippet_len: 3,
            ..Self::toy(iterations, seed)
        }
    }
}

/// A short ground-truth-annotated clip.
#[derive(Debug, Clone)]
pub struct Snippet {
    pub frames: Vec<Image>,
    pub truth: Vec<FrameTruth>,
}

impl Snippet {
    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        let (frames, truth) = synth::generate(scenario)?;
        Ok(Self { frames, truth })
    }
}

/// Label (+1/-1) and balanced weight per cell: positives within `radius`
/// cells of the truth position, each class carrying half the total mass.
/// The truth cell is clamped into the map.
pub(crate) fn loss_labels(side: usize, truth_cell: (f64, f64), radius: f64) -> (Vec<f64>, Vec<f64>) {
    let tr = truth_cell.0.clamp(0.0, side as f64 - 1.0);
    let tc = truth_cell.1.clamp(0.0, side as f64 - 1.0);
    let mut labels = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let d2 = (i as f64 - tr) * (i as f64 - tr) + (j as f64 - tc) * (j as f64 - tc);
            labels.push(if d2 <= radius * radius { 1.0 } else { -1.0 });
        }
    }
    let n_pos = labels.iter().filter(|l| **l > 0.0).count().max(1);
    let n_neg = labels.iter().filter(|l| **l < 0.0).count().max(1);
    let weights = labels
        .iter()
        .map(|l| {
            if *l > 0.0 {
                0.5 / n_pos as f64
            } else {
                0.5 / n_neg as f64
            }
        })
        .collect();
    (labels, weights)
}

/// Balanced per-cell logistic loss of a response map against a truth cell.
/// A map of zeros scores exactly `ln 2`; a map saturated to +inf on the
/// positive cells and -inf elsewhere scores 0.
pub fn heatmap_loss(h: &Matrix2, truth_cell: (f64, f64)) -> Result<f64> {
    if truth_cell.0 < 0.0
        || truth_cell.1 < 0.0
        || truth_cell.0 > h.rows() as f64 - 1.0
        || truth_cell.1 > h.cols() as f64 - 1.0
    {
        return Err(Error::InvalidConfig(alloc::format!(
            "truth cell {truth_cell:?} outside a {}x{} map",
            h.rows(),
            h.cols()
        )));
    }
    if h.rows() != h.cols() {
        return Err(Error::ShapeMismatch {
            op: "heatmap_loss",
            left: (h.rows(), h.cols(), 1),
            right: (h.rows(), h.rows(), 1),
        });
    }
    let (labels, weights) = loss_labels(h.rows(), truth_cell, 1.0);
    let mut loss = 0.0;
    for ((v, y), w) in h.data().iter().zip(&labels).zip(&weights) {
        loss += w * math::softplus(-y * v);
    }
    Ok(loss)
}

/// Gradients for every parameter tensor, in enumeration order.
pub struct Gradients {
    pub loss: f64,
    pub by_name: Vec<(String, Vec<f64>)>,
}

/// Reverse-mode gradients of the snippet loss, inference mode (no dropout).
/// Exactly deterministic. Errors with the offending parameter name if any
/// gradient goes non-finite.
pub fn backward(snippet: &Snippet, weights: &ModelWeights, mc: &ModelConfig) -> Result<Gradients> {
    backward_with_mode(snippet, weights, mc, TrainMode::Inference)
}

pub fn backward_with_mode(
    snippet: &Snippet,
    weights: &ModelWeights,
    mc: &ModelConfig,
    mode: TrainMode<'_>,
) -> Result<Gradients> {
    let mut tape = tape::Tape::new();
    let (g, _trace) = graph::snippet_graph(&mut tape, weights, mc, snippet, 1.32, mode, None)?;
    let loss = tape.value(g.loss)[0];
    let by_name = extract_gradients(&tape, &g)?;
    Ok(Gradients { loss, by_name })
}

fn extract_gradients(
    tape: &tape::Tape,
    g: &graph::SnippetGraph,
) -> Result<Vec<(String, Vec<f64>)>> {
    let grads = tape.backward(g.loss);
    let mut by_name = Vec::with_capacity(g.params.order.len());
    for name in &g.params.order {
        let id = g.params.by_name[name];
        let grad = grads[id].clone();
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: name.clone(),
            });
        }
        by_name.push((name.clone(), grad));
    }
    Ok(by_name)
}

/// Forward-only snippet loss (used by the finite-difference oracle). A
/// frozen memory trace pins the detached reads, matching the truncated
/// gradient contract; without one the writes run normally.
pub fn loss_only(
    snippet: &Snippet,
    weights: &ModelWeights,
    mc: &ModelConfig,
    frozen: Option<&graph::MemoryTrace>,
) -> Result<f64> {
    let mut tape = tape::Tape::new();
    let (g, _) =
        graph::snippet_graph(&mut tape, weights, mc, snippet, 1.32, TrainMode::Inference, frozen)?;
    Ok(tape.value(g.loss)[0])
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(weights: &ModelWeights) -> Self {
        let mut m = Vec::new();
        weights.for_each_param(|_, _, d| m.push(alloc::vec![0.0; d.len()]));
        let v = m.clone();
        Self { m, v, t: 0 }
    }

    fn step(&mut self, weights: &mut ModelWeights, grads: &[(String, Vec<f64>)], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - math::powf(Self::BETA1, self.t as f64);
        let bc2 = 1.0 - math::powf(Self::BETA2, self.t as f64);
        let mut idx = 0usize;
        weights.for_each_param_mut(|name, data| {
            let (gname, grad) = &grads[idx];
            debug_assert_eq!(name, gname);
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..data.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * grad[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                data[i] -= lr * mh / (math::sqrt(vh) + Self::EPS);
            }
            idx += 1;
        });
    }
}

/// The deterministic snippet set for a config: a rotation of linear-motion,
/// static, and distractor scenes sized for the preset.
pub fn training_snippets(cfg: &TrainConfig) -> Result<Vec<Snippet>> {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9));
    let side = match cfg.model.backbone.roi_input {
        0..=16 => 48,
        17..=48 => 64,
        _ => 160,
    };
    let mut out = Vec::with_capacity(cfg.snippets);
    for i in 0..cfg.snippets {
        let seed = cfg.seed.wrapping_add(1000 + i as u64);
        let scenario = match i % 3 {
            0 => {
                let vx = rng.random_range(-2.0..2.0);
                let vy = rng.random_range(-2.0..2.0);
                Scenario::linear(side, (vx, vy), seed)
            }
            1 => Scenario::static_scene(side, seed),
            _ => {
                let mut s = Scenario::linear(
                    side,
                    (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)),
                    seed,
                );
                s.distractors.push(crate::synth::Drifter {
                    start: (side as f64 * 0.25, side as f64 * 0.25),
                    velocity: (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                });
                s
            }
        };
        out.push(Snippet::from_scenario(&scenario.with_frames(cfg.snippet_len))?);
    }
    Ok(out)
}

/// Training outcome: final weights plus the per-iteration loss trace.
pub struct Fitted {
    pub weights: ModelWeights,
    pub trace: Vec<f64>,
}

/// Adam training over the snippet set. Deterministic given the seed. Aborts
/// with the trace if the loss exceeds 1e6.
pub fn fit(cfg: &TrainConfig) -> Result<Fitted> {
    if cfg.snippet_len < 2 {
        return Err(Error::InvalidConfig(String::from(
            "snippet length must be at least 2",
        )));
    }
    if cfg.lr < 0.0 {
        return Err(Error::InvalidConfig(String::from(
            "learning rate must be non-negative",
        )));
    }
    let snippets = training_snippets(cfg)?;
    let mut weights = ModelWeights::seeded(&cfg.model, cfg.seed);
    let mut adam = Adam::new(&weights);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x5EED_CAFE);
    let mut lr = cfg.lr;
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let idx = rng.random_range(0..snippets.len());
        let mut tape = tape::Tape::new();
        let mode = if cfg.dropout > 0.0 {
            TrainMode::Dropout {
                rate: cfg.dropout,
                rng: &mut rng,
            }
        } else {
            TrainMode::Inference
        };
        let (g, _) =
            graph::snippet_graph(&mut tape, &weights, &cfg.model, &snippets[idx], 1.32, mode, None)?;
        let loss = tape.value(g.loss)[0];
        // Divergence is decided on the loss before touching gradients; an
        // exploded forward pass would otherwise surface as a non-finite
        // gradient error instead.
        if !loss.is_finite() || loss > 1e6 {
            trace.push(loss);
            return Err(Error::TrainingDiverged {
                iteration: it,
                loss,
                trace,
            });
        }
        let by_name = extract_gradients(&tape, &g)?;
        adam.step(&mut weights, &by_name, lr);
        trace.push(loss);
        if (it + 1) % cfg.decay_interval == 0 {
            lr *= cfg.decay;
        }
    }
    Ok(Fitted { weights, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_map_loss_is_ln2() {
        let h = Matrix2::zeros(5, 5);
        let loss = heatmap_loss(&h, (2.0, 2.0)).unwrap();
        assert_abs_diff_eq!(loss, core::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn saturated_map_loss_tends_to_zero() {
        let (labels, _) = loss_labels(5, (2.0, 2.0), 1.0);
        let h = Matrix2::new(
            5,
            5,
            labels.iter().map(|y| y * 200.0).collect(),
        )
        .unwrap();
        let loss = heatmap_loss(&h, (2.0, 2.0)).unwrap();
        assert!(loss < 1e-12, "saturated loss {loss}");
    }

    #[test]
    fn moving_truth_changes_only_labels() {
        let (la, wa) = loss_labels(5, (1.0, 1.0), 1.0);
        let (lb, wb) = loss_labels(5, (3.0, 3.0), 1.0);
        assert_ne!(la, lb);
        // Same positive count here, so the weight multiset matches too.
        let mut wa_s = wa.clone();
        let mut wb_s = wb.clone();
        wa_s.sort_by(|a, b| a.total_cmp(b));
        wb_s.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(wa_s, wb_s);
    }

    #[test]
    fn truth_cell_outside_map_is_rejected() {
        let h = Matrix2::zeros(4, 4);
        assert!(heatmap_loss(&h, (5.0, 1.0)).is_err());
    }

    #[test]
    fn backward_loss_matches_forward_loss() {
        let cfg = TrainConfig::micro(1, 3);
        let snippets = training_snippets(&cfg).unwrap();
        let weights = ModelWeights::seeded(&cfg.model, 3);
        let g = backward(&snippets[0], &weights, &cfg.model).unwrap();
        let f = loss_only(&snippets[0], &weights, &cfg.model, None).unwrap();
        assert_abs_diff_eq!(g.loss, f, epsilon = 1e-12);
        assert_eq!(g.by_name.len(), weights.param_tensor_count());
    }

    #[test]
    fn fit_with_zero_lr_keeps_weights_and_trace_flat() {
        let mut cfg = TrainConfig::micro(5, 5);
        cfg.lr = 0.0;
        cfg.dropout = 0.0;
        cfg.snippets = 1;
        let fitted = fit(&cfg).unwrap();
        let initial = ModelWeights::seeded(&cfg.model, cfg.seed);
        assert_eq!(fitted.weights, initial);
        assert_eq!(fitted.trace.len(), 5);
        for l in &fitted.trace {
            assert_eq!(*l, fitted.trace[0], "trace must be flat with lr = 0");
        }
    }

    #[test]
    fn zero_weights_zero_gradients_for_linear_maps() {
        // With every parameter at zero the features, templates, and response
        // all vanish, so the loss is exactly ln 2 and every product-form
        // parameter (kernels and projection matrices) gets a zero gradient;
        // only bias-like parameters can see slope.
        let cfg = TrainConfig::micro(1, 3);
        let snippets = training_snippets(&cfg).unwrap();
        let mut weights = ModelWeights::seeded(&cfg.model, 3);
        weights.for_each_param_mut(|_, data| data.iter_mut().for_each(|v| *v = 0.0));
        let g = backward(&snippets[0], &weights, &cfg.model).unwrap();
        assert_abs_diff_eq!(g.loss, core::f64::consts::LN_2, epsilon = 1e-12);
        for (name, grad) in &g.by_name {
            let weighty = name.ends_with(".w")
                || name.ends_with("kernel")
                || name.ends_with("w_x")
                || name.ends_with("w_h");
            if weighty {
                assert!(
                    grad.iter().all(|v| v.abs() < 1e-12),
                    "{name} should have zero gradient by symmetry"
                );
            }
        }
        // Every gradient is finite at the stationary point (the balanced
        // class weights cancel even the bias slope at a zero response).
        assert!(g
            .by_name
            .iter()
            .all(|(_, grad)| grad.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn fit_aborts_on_divergence_with_trace() {
        let mut cfg = TrainConfig::micro(50, 5);
        cfg.lr = 1e8;
        cfg.dropout = 0.0;
        cfg.snippets = 1;
        match fit(&cfg) {
            Err(Error::TrainingDiverged {
                iteration,
                loss,
                trace,
            }) => {
                assert!(loss > 1e6);
                assert_eq!(trace.len(), iteration + 1);
            }
            other => panic!("expected divergence, got {:?}", other.map(|f| f.trace.len())),
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let cfg = TrainConfig::micro(5, 8);
        let a = fit(&cfg).unwrap();
        let b = fit(&cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn inference_is_pure_after_training() {
        use crate::tracker::{TrackerConfig, TrackerState};
        let cfg = TrainConfig::micro(2, 9);
        let scenario = crate::synth::Scenario::static_scene(48, 4);
        let (frames, truth) = crate::synth::generate(&scenario).unwrap();
        let weights = ModelWeights::seeded(&cfg.model, 1);
        let tc = TrackerConfig::default();
        let run = |w: &ModelWeights| {
            let mut st = TrackerState::init(&frames[0], truth[0].bbox, w, &cfg.model, &tc).unwrap();
            st.step(&frames[1], w, &cfg.model, &tc).unwrap()
        };
        let before = run(&weights);
        let _ = fit(&cfg).unwrap();
        let after = run(&weights);
        assert_eq!(before, after);
    }
}
