//! Command implementations behind the `dualtrack` subcommands.

#![allow(clippy::needless_range_loop)]

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use dualtrack_core::eval::{self, TrackRow};
use dualtrack_core::synth;
use dualtrack_core::tracker::{Ablation, BoundingBox, TrackerConfig};
use dualtrack_core::train::{self, gradcheck};
use dualtrack_core::{Error as CoreError, ModelConfig, ModelWeights};

use crate::{checkpoint, csvio, pngio, scenario, usage_error, UsageError};

fn usage(err: anyhow::Error) -> anyhow::Error {
    anyhow::Error::new(UsageError(format!("{err:#}")))
}

pub struct TrackOpts {
    pub seq: PathBuf,
    pub init: Option<String>,
    pub out: PathBuf,
    pub preset: Option<String>,
    pub weights: Option<PathBuf>,
    pub seed: u64,
    pub ablate: Option<String>,
    pub dump_heatmaps: Option<PathBuf>,
    pub dump_attention: Option<PathBuf>,
    pub dump_memory: Option<PathBuf>,
}

fn parse_init(text: &str) -> Result<BoundingBox> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 4 {
        return usage_error(format!("--init needs x,y,w,h, got `{text}`"));
    }
    let mut vals = [0.0f64; 4];
    for (i, p) in parts.iter().enumerate() {
        vals[i] = p
            .trim()
            .parse()
            .map_err(|_| UsageError(format!("bad --init number `{p}`")))?;
    }
    Ok(BoundingBox::from_ltwh(vals[0], vals[1], vals[2], vals[3]))
}

fn parse_ablation(text: Option<&str>) -> Result<Ablation> {
    match text {
        None => Ok(Ablation::None),
        Some("no-bg-memory") => Ok(Ablation::NoBgMemory),
        Some("no-attention") => Ok(Ablation::NoAttention),
        Some(other) => usage_error(format!(
            "--ablate accepts no-bg-memory or no-attention, got `{other}`"
        )),
    }
}

/// Resolve model config and weights from `--weights` / `--preset` / `--seed`.
fn resolve_weights(
    preset: Option<&str>,
    weights_path: Option<&Path>,
    seed: u64,
) -> Result<(ModelConfig, ModelWeights)> {
    match weights_path {
        Some(path) => {
            let (config, weights) = checkpoint::load(path).map_err(usage)?;
            if let Some(p) = preset {
                if p != config.preset_name() {
                    return usage_error(format!(
                        "--preset {p} conflicts with checkpoint preset {}",
                        config.preset_name()
                    ));
                }
            }
            Ok((config, weights))
        }
        None => {
            let config = ModelConfig::by_name(preset.unwrap_or("toy")).map_err(|e| usage(e.into()))?;
            let weights = ModelWeights::seeded(&config, seed);
            Ok((config, weights))
        }
    }
}

pub fn cmd_track(o: &TrackOpts) -> Result<()> {
    let frames = pngio::load_frames(&o.seq).map_err(usage)?;
    let init = match &o.init {
        Some(text) => parse_init(text)?,
        None => {
            let truth = pngio::load_truth(&o.seq.join("groundtruth.txt")).map_err(usage)?;
            truth
                .first()
                .ok_or_else(|| UsageError("empty ground-truth file".into()))?
                .bbox
        }
    };
    let (config, weights) = resolve_weights(o.preset.as_deref(), o.weights.as_deref(), o.seed)?;
    let tc = TrackerConfig {
        ablation: parse_ablation(o.ablate.as_deref())?,
        ..TrackerConfig::default()
    };
    for dir in [&o.dump_heatmaps, &o.dump_attention, &o.dump_memory]
        .into_iter()
        .flatten()
    {
        std::fs::create_dir_all(dir)?;
    }

    let started = Instant::now();
    let rows = eval::track_sequence_with(&frames, init, &weights, &config, &tc, |t, state, out| {
        if let Some(out) = out {
            if let Some(dir) = &o.dump_heatmaps {
                let _ = pngio::save_pgm(&dir.join(format!("heat_{t:06}.pgm")), &out.heat.upsampled);
            }
            if let Some(dir) = &o.dump_attention {
                let _ = pngio::save_pgm(&dir.join(format!("attention_{t:06}.pgm")), &out.attention);
            }
        }
        if let Some(dir) = &o.dump_memory {
            let _ = pngio::save_memory_snapshot(&dir.join(format!("fg_{t:06}.mem")), &state.fg_mem);
            let _ = pngio::save_memory_snapshot(&dir.join(format!("bg_{t:06}.mem")), &state.bg_mem);
        }
    })?;
    let elapsed = started.elapsed().as_secs_f64();
    csvio::write(&o.out, &rows)?;
    eprintln!(
        "tracked {} frames in {:.2}s ({:.1} fps)",
        rows.len(),
        elapsed,
        rows.len() as f64 / elapsed.max(1e-9)
    );
    Ok(())
}

pub fn cmd_synth(scenario_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut s = scenario::load_scenario(scenario_path).map_err(usage)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let (frames, truth) = synth::generate(&s).map_err(|e| usage(e.into()))?;
    pngio::write_sequence(out, &frames, &truth)?;
    eprintln!("wrote {} frames to {}", frames.len(), out.display());
    Ok(())
}

pub fn cmd_eval(results: &Path, truth: &Path, report: Option<&Path>) -> Result<()> {
    let rows = csvio::read(results).map_err(usage)?;
    let truth = pngio::load_truth(truth).map_err(usage)?;
    if rows.len() != truth.len() {
        return usage_error(format!(
            "results have {} rows but ground truth has {} lines",
            rows.len(),
            truth.len()
        ));
    }
    let result = eval::score(&rows, &truth, 0.0)?;
    let curve = eval::success_curve(&result)?;
    let mean_iou = result.ious.iter().sum::<f64>() / result.ious.len() as f64;
    let failures = eval::failure_count(&result, &truth, 0.0);
    let occluded = result.occluded.iter().filter(|o| **o).count();
    let text = format!(
        "frames: {}\nmean iou: {:.6}\nmean success auc: {:.6}\nfailures: {}\ntracker occluded frames: {}\n",
        result.ious.len(),
        mean_iou,
        curve.auc(),
        failures,
        occluded,
    );
    match report {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn cmd_train(config: &Path, out: &Path, trace: Option<&Path>) -> Result<()> {
    let (model, cfg) = scenario::load_train_config(config).map_err(usage)?;
    match train::fit(&cfg) {
        Ok(fitted) => {
            checkpoint::save(out, &model, &fitted.weights)?;
            if let Some(path) = trace {
                write_trace(path, &fitted.trace)?;
            }
            eprintln!(
                "trained {} iterations, loss {:.6} -> {:.6}",
                fitted.trace.len(),
                fitted.trace.first().copied().unwrap_or(f64::NAN),
                fitted.trace.last().copied().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Err(CoreError::TrainingDiverged {
            iteration,
            loss,
            trace: t,
        }) => {
            if let Some(path) = trace {
                write_trace(path, &t)?;
            }
            anyhow::bail!("training diverged at iteration {iteration} with loss {loss}");
        }
        Err(e) => Err(e.into()),
    }
}

fn write_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut text = String::from("iteration,loss\n");
    for (i, l) in trace.iter().enumerate() {
        text.push_str(&format!("{i},{}\n", csvio::format_sig(*l)));
    }
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Quick self-diagnostics: the kernel oracles, the memory invariants, the
/// gradient checks at micro scale, and a determinism double-run.
pub fn cmd_selftest() -> Result<()> {
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool| {
        println!("{} - {name}", if ok { "ok" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    {
        use dualtrack_core::tensor::*;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        let mut ok = true;
        for case in 0..20 {
            let c = rng.random_range(1..=3usize);
            let mh = rng.random_range(1..=3usize);
            let fh = rng.random_range(mh..=7usize);
            let make = |h: usize, w: usize, seed: u64| {
                let mut r = rand_chacha::ChaCha12Rng::seed_from_u64(seed + case);
                Tensor3::from_fn(h, w, c, |_, _, _| r.random::<f64>() * 2.0 - 1.0)
            };
            let f = make(fh, fh, 100);
            let m = make(mh, mh, 200);
            let fast = xcorr_valid(&f, &m).unwrap();
            for i in 0..fast.rows() {
                for j in 0..fast.cols() {
                    let mut acc = 0.0;
                    for s in 0..mh {
                        for t in 0..mh {
                            for k in 0..c {
                                acc += f.get(i + s, j + t, k) * m.get(s, t, k);
                            }
                        }
                    }
                    ok &= (acc - fast.get(i, j)).abs() < 1e-10;
                }
            }
        }
        check("correlation matches the five-loop oracle", ok);

        let m = Matrix2::from_fn(3, 3, |i, j| (i * 3 + j) as f64 / 4.0);
        let s = softmax2d(&m);
        let shifted = softmax2d(&Matrix2::from_fn(3, 3, |i, j| m.get(i, j) + 11.5));
        let mut ok = (s.sum() - 1.0).abs() < 1e-9;
        for (a, b) in s.data().iter().zip(shifted.data()) {
            ok &= (a - b).abs() < 1e-9;
        }
        check("softmax normalizes and is shift-invariant", ok);

        let t = Tensor3::from_fn(5, 5, 2, |i, j, k| (i + j + k) as f64);
        let ident = avgpool(&t, 1, 1).unwrap() == t;
        let global = avgpool(&t, 5, 1).unwrap();
        let mean = t.global_avg_per_channel();
        let ok = ident
            && (global.get(0, 0, 0) - mean[0]).abs() < 1e-12
            && (global.get(0, 0, 1) - mean[1]).abs() < 1e-12;
        check("average pooling identity and global mean", ok);
    }

    {
        use dualtrack_core::memory::MemoryBlock;
        use dualtrack_core::tensor::Tensor3;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(21);
        let template = Tensor3::from_fn(2, 2, 3, |_, _, _| rng.random::<f64>());
        let mut block = MemoryBlock::filled(3, template);
        let mut ok = true;
        for _round in 0..100 {
            let feature = Tensor3::from_fn(2, 2, 3, |_, _, _| rng.random::<f64>() * 2.0 - 1.0);
            let w: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let old: Vec<Tensor3> = (0..3).map(|k| block.slot(k).clone()).collect();
            block.apply_write(&w, &feature).unwrap();
            for k in 0..3 {
                for (idx, v) in block.slot(k).data().iter().enumerate() {
                    let lo = old[k].data()[idx].min(feature.data()[idx]) - 1e-12;
                    let hi = old[k].data()[idx].max(feature.data()[idx]) + 1e-12;
                    ok &= *v >= lo && *v <= hi;
                }
                ok &= block.key(k) == &block.slot(k).global_avg_per_channel()[..];
            }
        }
        check("memory writes are convex with coherent keys", ok);
    }

    {
        let case = synth::suppression_case(3);
        let fg_only =
            dualtrack_core::tensor::xcorr_valid(&case.search, &case.fg_template).unwrap();
        let m_bar =
            dualtrack_core::tracker::subtract_memories(&case.fg_template, &case.bg_template)
                .unwrap();
        let dual = dualtrack_core::tensor::xcorr_valid(&case.search, &m_bar).unwrap();
        check(
            "background subtraction flips the planted-distractor decision",
            fg_only.argmax() == case.distractor_offset && dual.argmax() == case.target_offset,
        );
    }

    {
        let cfg = train::TrainConfig::micro(1, 7);
        let fixture = gradcheck::clean_training_fixture(&cfg, 1e-3, 64);
        let ok = match fixture {
            Ok((snippet, weights)) => {
                gradcheck::check_snippet_gradients(&snippet, &weights, &cfg.model, 1e-5, 1e-4, 1e-6)
                    .is_ok()
                    && gradcheck::check_memory_gradients(&weights, &cfg.model, 5, 1e-5, 1e-4, 1e-6)
                        .is_ok()
            }
            Err(_) => false,
        };
        check("gradients match central finite differences", ok);
    }

    {
        let scenario = synth::Scenario::static_scene(64, 5);
        let (frames, truth) = synth::generate(&scenario).unwrap();
        let config = ModelConfig::toy();
        let weights = ModelWeights::seeded(&config, 1);
        let tc = TrackerConfig::default();
        let a = eval::track_sequence(&frames[..10], truth[0].bbox, &weights, &config, &tc).unwrap();
        let b = eval::track_sequence(&frames[..10], truth[0].bbox, &weights, &config, &tc).unwrap();
        check("tracking is deterministic", a == b);
    }

    if failures > 0 {
        anyhow::bail!("{failures} selftest check(s) failed");
    }
    println!("all selftest checks passed");
    Ok(())
}

/// Shared helper for tests: track a generated scenario end to end.
pub fn track_generated(
    scenario: &synth::Scenario,
    config: &ModelConfig,
    weights: &ModelWeights,
    tc: &TrackerConfig,
) -> Result<(Vec<TrackRow>, Vec<synth::FrameTruth>)> {
    let (frames, truth) = synth::generate(scenario)?;
    let rows = eval::track_sequence(&frames, truth[0].bbox, weights, config, tc)?;
    Ok((rows, truth))
}
