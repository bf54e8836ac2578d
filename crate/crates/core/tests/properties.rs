//! Property tests for the kernel and metric invariants.

#![allow(clippy::needless_range_loop)]

use dualtrack_core::eval::{self, SequenceResult};
use dualtrack_core::memory::MemoryBlock;
use dualtrack_core::tensor::{avgpool, cosine_sim, softmax2d, xcorr_valid, Matrix2, Tensor3};
use dualtrack_core::tracker::{subtract_memories, BoundingBox};
use proptest::prelude::*;

fn tensor(h: usize, w: usize, c: usize) -> impl Strategy<Value = Tensor3> {
    prop::collection::vec(-10.0..10.0f64, h * w * c)
        .prop_map(move |data| Tensor3::new(h, w, c, data).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, usize, usize)> {
    // (fh, fw, mh, mw, c) with f at least as large as m
    (1usize..=4, 1usize..=4, 1usize..=3).prop_flat_map(|(mh, mw, c)| {
        (mh..=7usize, mw..=7usize)
            .prop_map(move |(fh, fw)| (fh, fw, mh, mw, c))
    })
}

proptest! {
    #[test]
    fn xcorr_matches_the_naive_definition(
        (fh, fw, mh, mw, c) in dims(),
        fdata in prop::collection::vec(-5.0..5.0f64, 7 * 7 * 3),
        mdata in prop::collection::vec(-5.0..5.0f64, 4 * 4 * 3),
    ) {
        let f = Tensor3::new(fh, fw, c, fdata[..fh * fw * c].to_vec()).unwrap();
        let m = Tensor3::new(mh, mw, c, mdata[..mh * mw * c].to_vec()).unwrap();
        let fast = xcorr_valid(&f, &m).unwrap();
        for i in 0..fast.rows() {
            for j in 0..fast.cols() {
                let mut acc = 0.0;
                for s in 0..mh {
                    for t in 0..mw {
                        for k in 0..c {
                            acc += f.get(i + s, j + t, k) * m.get(s, t, k);
                        }
                    }
                }
                prop_assert!((acc - fast.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn xcorr_argmax_invariant_under_positive_scaling(
        (fh, fw, mh, mw, c) in dims(),
        fdata in prop::collection::vec(-5.0..5.0f64, 7 * 7 * 3),
        mdata in prop::collection::vec(-5.0..5.0f64, 4 * 4 * 3),
        lambda in 0.01..50.0f64,
    ) {
        let f = Tensor3::new(fh, fw, c, fdata[..fh * fw * c].to_vec()).unwrap();
        let m = Tensor3::new(mh, mw, c, mdata[..mh * mw * c].to_vec()).unwrap();
        let base = xcorr_valid(&f, &m).unwrap().argmax();
        let scaled = xcorr_valid(&f.scale(lambda), &m).unwrap().argmax();
        prop_assert_eq!(base, scaled);
    }

    #[test]
    fn softmax_normalizes_and_ignores_shifts(
        rows in 1usize..=5,
        cols in 1usize..=5,
        data in prop::collection::vec(-30.0..30.0f64, 25),
        shift in -100.0..100.0f64,
    ) {
        let m = Matrix2::new(rows, cols, data[..rows * cols].to_vec()).unwrap();
        let s = softmax2d(&m);
        prop_assert!((s.sum() - 1.0).abs() < 1e-9);
        prop_assert!(s.data().iter().all(|v| *v > 0.0 && *v <= 1.0));
        let shifted = Matrix2::new(
            rows,
            cols,
            m.data().iter().map(|v| v + shift).collect(),
        ).unwrap();
        let s2 = softmax2d(&shifted);
        for (a, b) in s.data().iter().zip(s2.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn avgpool_full_window_is_global_mean(t in tensor(5, 5, 2)) {
        let pooled = avgpool(&t, 5, 1).unwrap();
        let mean = t.global_avg_per_channel();
        prop_assert!((pooled.get(0, 0, 0) - mean[0]).abs() < 1e-12);
        prop_assert!((pooled.get(0, 0, 1) - mean[1]).abs() < 1e-12);
    }

    #[test]
    fn cosine_similarity_is_bounded(
        u in prop::collection::vec(-10.0..10.0f64, 1..8),
        vseed in prop::collection::vec(-10.0..10.0f64, 8),
    ) {
        let v = &vseed[..u.len()];
        let s = cosine_sim(&u, v).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn iou_symmetric_bounded_scale_invariant(
        ax in -10.0..10.0f64, ay in -10.0..10.0f64,
        aw in 0.1..20.0f64, ah in 0.1..20.0f64,
        bx in -10.0..10.0f64, by in -10.0..10.0f64,
        bw in 0.1..20.0f64, bh in 0.1..20.0f64,
        scale in 0.1..10.0f64,
    ) {
        let a = BoundingBox::from_ltwh(ax, ay, aw, ah);
        let b = BoundingBox::from_ltwh(bx, by, bw, bh);
        let v = eval::iou(&a, &b);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        prop_assert!((v - eval::iou(&b, &a)).abs() < 1e-12);
        let sa = BoundingBox::from_ltwh(ax * scale, ay * scale, aw * scale, ah * scale);
        let sb = BoundingBox::from_ltwh(bx * scale, by * scale, bw * scale, bh * scale);
        prop_assert!((eval::iou(&sa, &sb) - v).abs() < 1e-9);
    }

    #[test]
    fn success_curve_is_monotone(ious in prop::collection::vec(0.0..=1.0f64, 1..60)) {
        let n = ious.len();
        let result = SequenceResult {
            boxes: vec![BoundingBox::new(0.0, 0.0, 1.0, 1.0); n],
            ious,
            peaks: vec![1.0; n],
            occluded: vec![false; n],
            fps: 0.0,
        };
        let curve = eval::success_curve(&result).unwrap();
        for w in curve.accuracy.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-15);
        }
        prop_assert!(curve.accuracy.iter().all(|a| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn writes_stay_convex_with_coherent_keys(
        slot_data in prop::collection::vec(-5.0..5.0f64, 3 * 2 * 2 * 3),
        feat_data in prop::collection::vec(-5.0..5.0f64, 2 * 2 * 3),
        weights in prop::collection::vec(0.0..=1.0f64, 3),
    ) {
        let slots: Vec<Tensor3> = slot_data
            .chunks_exact(12)
            .map(|c| Tensor3::new(2, 2, 3, c.to_vec()).unwrap())
            .collect();
        let mut block = MemoryBlock::from_slots(slots.clone()).unwrap();
        let feature = Tensor3::new(2, 2, 3, feat_data).unwrap();
        block.apply_write(&weights, &feature).unwrap();
        for k in 0..3 {
            for (idx, v) in block.slot(k).data().iter().enumerate() {
                let lo = slots[k].data()[idx].min(feature.data()[idx]) - 1e-12;
                let hi = slots[k].data()[idx].max(feature.data()[idx]) + 1e-12;
                prop_assert!(*v >= lo && *v <= hi);
            }
            prop_assert_eq!(block.key(k), &block.slot(k).global_avg_per_channel()[..]);
        }
    }

    #[test]
    fn memory_subtraction_identities(t in tensor(3, 3, 2)) {
        let zero = Tensor3::zeros(3, 3, 2);
        prop_assert_eq!(subtract_memories(&t, &zero).unwrap(), t.clone());
        let self_sub = subtract_memories(&t, &t).unwrap();
        prop_assert!(self_sub.data().iter().all(|v| *v == 0.0));
    }
}
