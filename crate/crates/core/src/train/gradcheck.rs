//! Central finite-difference verification of the analytic gradients.
//!
//! Two compositions together cover every parameter group non-vacuously:
//! the snippet loss reaches the backbone convolutions, both controllers'
//! LSTM and init projections, the read keys, the foreground residual gate,
//! and the response calibration; the read+write quadratic composition
//! reaches the write gate, which the snippet loss cannot (written memory is
//! detached across frames by contract).

use alloc::format;
use alloc::string::String;

use crate::error::{Error, Result};
use crate::train::{
    backward, graph, loss_only, tape::Tape, training_snippets, Snippet, TrainConfig, TrainMode,
};
use crate::weights::{ModelConfig, ModelWeights};

/// Worst relative error seen and where.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub worst: f64,
    pub worst_param: String,
    pub scalars_checked: usize,
}

/// Relative error with an absolute floor, so zero-against-zero comparisons
/// pass instead of dividing by nothing.
fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Seed-search for a fixture whose rectifier pre-activations all sit at
/// least `margin` from zero, keeping the central-difference probes off the
/// kink. Returns the snippet and the matching seeded weights.
pub fn clean_training_fixture(
    base: &TrainConfig,
    margin: f64,
    tries: u64,
) -> Result<(Snippet, ModelWeights)> {
    for k in 0..tries {
        let mut cfg = base.clone();
        cfg.seed = base.seed.wrapping_add(k);
        let snippets = training_snippets(&cfg)?;
        let weights = ModelWeights::seeded(&cfg.model, cfg.seed);
        let snippet = snippets[0].clone();
        let mut tape = Tape::new();
        graph::snippet_graph(
            &mut tape,
            &weights,
            &cfg.model,
            &snippet,
            1.32,
            TrainMode::Inference,
            None,
        )?;
        if tape.min_abs_relu_input() > margin {
            return Ok((snippet, weights));
        }
    }
    Err(Error::InvalidConfig(format!(
        "no rectifier-safe gradient-check fixture within {tries} seeds of {}",
        base.seed
    )))
}

/// Check every parameter scalar of the snippet loss against central
/// differences. `eps` is the probe step, `tol` the max relative error,
/// `floor` the absolute denominator floor.
///
/// The probes replay the base run's memory trace: written memory is
/// detached by contract, so the derivative under test holds those contents
/// fixed, and the oracle must too.
pub fn check_snippet_gradients(
    snippet: &Snippet,
    weights: &ModelWeights,
    mc: &ModelConfig,
    eps: f64,
    tol: f64,
    floor: f64,
) -> Result<CheckOutcome> {
    let analytic = backward(snippet, weights, mc)?;
    let mut base_tape = Tape::new();
    let (_, trace) = graph::snippet_graph(
        &mut base_tape,
        weights,
        mc,
        snippet,
        1.32,
        crate::train::TrainMode::Inference,
        None,
    )?;
    let mut worst = 0.0f64;
    let mut worst_param = String::new();
    let mut checked = 0usize;
    for (tensor_idx, (name, grad)) in analytic.by_name.iter().enumerate() {
        for i in 0..grad.len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut w = weights.clone();
                let mut idx = 0usize;
                w.for_each_param_mut(|_, data| {
                    if idx == tensor_idx {
                        data[i] += delta;
                    }
                    idx += 1;
                });
                loss_only(snippet, &w, mc, Some(&trace))
            };
            let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            let e = rel_err(grad[i], numeric, floor);
            checked += 1;
            if e > worst {
                worst = e;
                worst_param = format!("{name}[{i}]");
            }
            if e > tol {
                return Err(Error::NonFinite {
                    what: format!(
                        "gradient check failed at {name}[{i}]: analytic {} vs numeric {} (rel {e:.3e})",
                        grad[i], numeric
                    ),
                });
            }
        }
    }
    Ok(CheckOutcome {
        worst,
        worst_param,
        scalars_checked: checked,
    })
}

/// Same check for the read + residual + differentiable-write composition.
pub fn check_memory_gradients(
    weights: &ModelWeights,
    mc: &ModelConfig,
    seed: u64,
    eps: f64,
    tol: f64,
    floor: f64,
) -> Result<CheckOutcome> {
    let loss_of = |w: &ModelWeights| -> Result<f64> {
        let mut tape = Tape::new();
        let g = graph::memory_rw_graph(&mut tape, w, mc, seed)?;
        Ok(tape.value(g.loss)[0])
    };
    let mut tape = Tape::new();
    let g = graph::memory_rw_graph(&mut tape, weights, mc, seed)?;
    let grads = tape.backward(g.loss);

    let mut worst = 0.0f64;
    let mut worst_param = String::new();
    let mut checked = 0usize;
    for (tensor_idx, name) in g.params.order.iter().enumerate() {
        let id = g.params.by_name[name];
        let grad = &grads[id];
        for i in 0..grad.len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut w = weights.clone();
                let mut idx = 0usize;
                w.for_each_param_mut(|_, data| {
                    if idx == tensor_idx {
                        data[i] += delta;
                    }
                    idx += 1;
                });
                loss_of(&w)
            };
            let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            let e = rel_err(grad[i], numeric, floor);
            checked += 1;
            if e > worst {
                worst = e;
                worst_param = format!("{name}[{i}]");
            }
            if e > tol {
                return Err(Error::NonFinite {
                    what: format!(
                        "memory gradient check failed at {name}[{i}]: analytic {} vs numeric {} (rel {e:.3e})",
                        grad[i], numeric
                    ),
                });
            }
        }
    }
    Ok(CheckOutcome {
        worst,
        worst_param,
        scalars_checked: checked,
    })
}
