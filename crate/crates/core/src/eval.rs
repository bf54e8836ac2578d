//! Overlap metrics, success curves, failure counting, and the driver that
//! runs a tracker over a frame sequence.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::synth::FrameTruth;
use crate::tracker::{BoundingBox, StepOutput, TrackerConfig, TrackerState};
use crate::weights::{ModelConfig, ModelWeights};

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay, aw, ah) = a.to_ltwh();
    let (bx, by, bw, bh) = b.to_ltwh();
    let ix = (ax + aw).min(bx + bw) - ax.max(bx);
    let iy = (ay + ah).min(by + bh) - ay.max(by);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (aw * ah + bw * bh - inter)
}

/// One CSV row's worth of tracking output.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRow {
    pub bbox: BoundingBox,
    pub peak: f64,
    pub occluded: bool,
}

/// Per-sequence outcome: predictions, overlaps against truth, peak values,
/// the tracker's occlusion flags, and the wall-clock throughput the caller
/// measured (the core never reads a clock).
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceResult {
    pub boxes: Vec<BoundingBox>,
    pub ious: Vec<f64>,
    pub peaks: Vec<f64>,
    pub occluded: Vec<bool>,
    pub fps: f64,
}

/// Accuracy per overlap threshold, 0.00 to 1.00 in steps of 0.01.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessCurve {
    pub thresholds: Vec<f64>,
    pub accuracy: Vec<f64>,
}

impl SuccessCurve {
    /// Mean accuracy over the thresholds ("mean success AUC").
    pub fn auc(&self) -> f64 {
        self.accuracy.iter().sum::<f64>() / self.accuracy.len() as f64
    }
}

/// Fraction of frames at or above each threshold. Threshold 0 counts frames
/// with strictly positive overlap, so the curve answers "any overlap at all"
/// there while staying 1.0-capped and monotone non-increasing.
pub fn success_curve(result: &SequenceResult) -> Result<SuccessCurve> {
    if result.ious.is_empty() {
        return Err(Error::EmptyInput("success_curve"));
    }
    let n = result.ious.len() as f64;
    let mut thresholds = Vec::with_capacity(101);
    let mut accuracy = Vec::with_capacity(101);
    for k in 0..=100u32 {
        let thr = k as f64 / 100.0;
        let hits = result
            .ious
            .iter()
            .filter(|v| if k == 0 { **v > 0.0 } else { **v >= thr })
            .count();
        thresholds.push(thr);
        accuracy.push(hits as f64 / n);
    }
    Ok(SuccessCurve {
        thresholds,
        accuracy,
    })
}

/// Count tracking failures: frames where the overlap falls to
/// `reinit_overlap` while the truth is not occluded. After each failure the
/// next 5 frames are skipped, mirroring the convention of re-initializing
/// the tracker from truth 5 frames later.
pub fn failure_count(result: &SequenceResult, truth: &[FrameTruth], reinit_overlap: f64) -> usize {
    const REINIT_DELAY: usize = 5;
    let mut failures = 0;
    let mut skip_until = 0usize;
    for (t, (iou_t, tr)) in result.ious.iter().zip(truth).enumerate() {
        if t < skip_until || tr.occluded {
            continue;
        }
        if *iou_t <= reinit_overlap {
            failures += 1;
            skip_until = t + REINIT_DELAY;
        }
    }
    failures
}

/// Run the tracker over a sequence: frame 0 initializes, every later frame
/// steps. Returns one row per frame (frame 0 carries the init box, peak 0).
pub fn track_sequence(
    frames: &[Image],
    init: BoundingBox,
    weights: &ModelWeights,
    mc: &ModelConfig,
    tc: &TrackerConfig,
) -> Result<Vec<TrackRow>> {
    track_sequence_with(frames, init, weights, mc, tc, |_, _, _| {})
}

/// Same, with a per-frame observer for dumps (attention, heat maps, memory
/// snapshots). The observer sees the post-init state on frame 0 and the
/// post-step state plus the step output afterwards.
pub fn track_sequence_with(
    frames: &[Image],
    init: BoundingBox,
    weights: &ModelWeights,
    mc: &ModelConfig,
    tc: &TrackerConfig,
    mut on_frame: impl FnMut(usize, &TrackerState, Option<&StepOutput>),
) -> Result<Vec<TrackRow>> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("track_sequence"));
    }
    let mut state = TrackerState::init(&frames[0], init, weights, mc, tc)?;
    let mut rows = Vec::with_capacity(frames.len());
    rows.push(TrackRow {
        bbox: state.bbox(),
        peak: 0.0,
        occluded: false,
    });
    on_frame(0, &state, None);
    for (t, frame) in frames.iter().enumerate().skip(1) {
        let out = state.step(frame, weights, mc, tc)?;
        rows.push(TrackRow {
            bbox: out.bbox,
            peak: out.heat.peak_value,
            occluded: out.occluded,
        });
        on_frame(t, &state, Some(&out));
    }
    Ok(rows)
}

/// Join rows with truth into a scored result.
pub fn score(rows: &[TrackRow], truth: &[FrameTruth], fps: f64) -> Result<SequenceResult> {
    if rows.len() != truth.len() {
        return Err(Error::LengthMismatch {
            op: "score",
            left: rows.len(),
            right: truth.len(),
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("score"));
    }
    Ok(SequenceResult {
        boxes: rows.iter().map(|r| r.bbox).collect(),
        ious: rows
            .iter()
            .zip(truth)
            .map(|(r, t)| iou(&r.bbox, &t.bbox))
            .collect(),
        peaks: rows.iter().map(|r| r.peak).collect(),
        occluded: rows.iter().map(|r| r.occluded).collect(),
        fps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn result_from_ious(ious: Vec<f64>) -> SequenceResult {
        let n = ious.len();
        SequenceResult {
            boxes: alloc::vec![BoundingBox::new(0.0, 0.0, 1.0, 1.0); n],
            ious,
            peaks: alloc::vec![1.0; n],
            occluded: alloc::vec![false; n],
            fps: 0.0,
        }
    }

    fn truth_n(n: usize) -> Vec<FrameTruth> {
        alloc::vec![
            FrameTruth {
                bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0),
                occluded: false
            };
            n
        ]
    }

    #[test]
    fn iou_identical_and_disjoint() {
        let a = BoundingBox::new(5.0, 5.0, 4.0, 4.0);
        assert_abs_diff_eq!(iou(&a, &a), 1.0, epsilon = 1e-12);
        let b = BoundingBox::new(50.0, 50.0, 4.0, 4.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_offset_unit_squares() {
        let a = BoundingBox::from_ltwh(0.0, 0.0, 1.0, 1.0);
        let b = BoundingBox::from_ltwh(0.5, 0.0, 1.0, 1.0);
        assert_abs_diff_eq!(iou(&a, &b), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn iou_is_symmetric_and_scale_invariant() {
        let a = BoundingBox::from_ltwh(1.0, 2.0, 3.0, 4.0);
        let b = BoundingBox::from_ltwh(2.0, 3.0, 4.0, 2.0);
        assert_abs_diff_eq!(iou(&a, &b), iou(&b, &a), epsilon = 1e-15);
        let scale = 7.5;
        let sa = BoundingBox::from_ltwh(1.0 * scale, 2.0 * scale, 3.0 * scale, 4.0 * scale);
        let sb = BoundingBox::from_ltwh(2.0 * scale, 3.0 * scale, 4.0 * scale, 2.0 * scale);
        assert_abs_diff_eq!(iou(&sa, &sb), iou(&a, &b), epsilon = 1e-12);
    }

    #[test]
    fn success_curve_extremes() {
        let perfect = success_curve(&result_from_ious(alloc::vec![1.0; 10])).unwrap();
        assert!(perfect.accuracy.iter().all(|a| *a == 1.0));
        let zero = success_curve(&result_from_ious(alloc::vec![0.0; 10])).unwrap();
        assert!(zero.accuracy.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn success_curve_counting_and_monotonicity() {
        let curve = success_curve(&result_from_ious(alloc::vec![0.2, 0.6])).unwrap();
        assert_abs_diff_eq!(curve.accuracy[50], 0.5, epsilon = 1e-12);
        for w in curve.accuracy.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        assert_eq!(curve.thresholds.len(), 101);
    }

    #[test]
    fn success_curve_rejects_empty() {
        assert!(success_curve(&result_from_ious(Vec::new())).is_err());
    }

    #[test]
    fn failure_counting() {
        let truth = truth_n(20);
        // Perfect tracking.
        assert_eq!(
            failure_count(&result_from_ious(alloc::vec![1.0; 20]), &truth, 0.0),
            0
        );
        // Frozen off-target from frame 10: failures at 10 and (after the
        // 5-frame dead window) 15.
        let mut ious = alloc::vec![1.0; 20];
        for v in ious.iter_mut().skip(10) {
            *v = 0.0;
        }
        assert_eq!(failure_count(&result_from_ious(ious.clone()), &truth, 0.0), 2);
        // The same drop during truth-occluded frames is not counted.
        let mut occ_truth = truth_n(20);
        for t in occ_truth.iter_mut().skip(10) {
            t.occluded = true;
        }
        assert_eq!(failure_count(&result_from_ious(ious), &occ_truth, 0.0), 0);
    }
}
