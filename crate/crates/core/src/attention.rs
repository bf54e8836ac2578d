//! Memory-augmented attention.
//!
//! The search feature `F` (n x n x c) is scored against the previous frame's
//! memory read `M` (m x m x c):
//!
//! ```text
//! r[i][j] = sum over (s, t) of F[i+s][j+t] . M[s][t]      (correlation)
//! A       = softmax(r)                                     (a x a, a = n-m+1)
//! F_avg   = avgpool(F, m, stride 1)                        (a x a x c)
//! ```
//!
//! The controller consumes a fixed m x m x c input, so the attended feature
//! is the attention-weighted mean over positions — a single c-fiber, since
//! the weights sum to one — tiled back to m x m x c. The raw per-position
//! product `A * F_avg` is kept alongside for inspection and dumps.

use alloc::vec;

use crate::error::{Error, Result};
use crate::tensor::{avgpool, softmax2d, xcorr_valid, Matrix2, Tensor3};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// Attention scores `A`, entries in `(0, 1]`, summing to 1.
    pub scores: Matrix2,
    /// `F_avg`: the search feature mean-pooled with the template window.
    pub pooled: Tensor3,
    /// Raw elementwise product: each `F_avg` fiber scaled by its score.
    pub weighted: Tensor3,
    /// Attention-weighted mean fiber tiled to the template shape; the
    /// controller input.
    pub attended: Tensor3,
}

/// Score `f` against the last memory read and pool it into the controller
/// input. Requires matching channels and `f` at least as large as `m_last`.
pub fn attend(f: &Tensor3, m_last: &Tensor3) -> Result<AttentionOutput> {
    if f.channels() != m_last.channels()
        || m_last.height() > f.height()
        || m_last.width() > f.width()
    {
        return Err(Error::ShapeMismatch {
            op: "attend",
            left: f.dims(),
            right: m_last.dims(),
        });
    }
    let scores = softmax2d(&xcorr_valid(f, m_last)?);
    finish(f, m_last.height(), m_last.width(), scores)
}

/// Ablation variant: uniform scores instead of correlation-driven ones.
/// Shapes (and therefore the rest of the pipeline) are unchanged.
pub fn attend_uniform(f: &Tensor3, m_h: usize, m_w: usize) -> Result<AttentionOutput> {
    if m_h > f.height() || m_w > f.width() {
        return Err(Error::ShapeMismatch {
            op: "attend_uniform",
            left: f.dims(),
            right: (m_h, m_w, f.channels()),
        });
    }
    let a_h = f.height() - m_h + 1;
    let a_w = f.width() - m_w + 1;
    let uniform = Matrix2::from_fn(a_h, a_w, |_, _| 1.0 / (a_h * a_w) as f64);
    finish(f, m_h, m_w, uniform)
}

fn finish(f: &Tensor3, m_h: usize, m_w: usize, scores: Matrix2) -> Result<AttentionOutput> {
    debug_assert_eq!(m_h, m_w, "templates are square");
    let pooled = avgpool(f, m_h, 1)?;
    let c = f.channels();
    let (a_h, a_w) = (scores.rows(), scores.cols());
    let mut weighted = Tensor3::zeros(a_h, a_w, c);
    let mut fiber = vec![0.0; c];
    for i in 0..a_h {
        for j in 0..a_w {
            let w = scores.get(i, j);
            let src = pooled.fiber(i, j);
            for k in 0..c {
                let v = w * src[k];
                weighted.set(i, j, k, v);
                fiber[k] += v;
            }
        }
    }
    let attended = Tensor3::from_fn(m_h, m_w, c, |_, _, k| fiber[k]);
    Ok(AttentionOutput {
        scores,
        pooled,
        weighted,
        attended,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn seeded(h: usize, w: usize, c: usize, seed: u64) -> Tensor3 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Tensor3::from_fn(h, w, c, |_, _, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn constant_feature_gives_uniform_attention() {
        let f = Tensor3::from_fn(6, 6, 2, |_, _, _| 0.7);
        let m = seeded(3, 3, 2, 1);
        let out = attend(&f, &m).unwrap();
        let a = out.scores.rows() * out.scores.cols();
        for v in out.scores.data() {
            assert_abs_diff_eq!(*v, 1.0 / a as f64, epsilon = 1e-12);
        }
        // All pooled fibers are identical, so the attended fiber equals them.
        for k in 0..2 {
            assert_abs_diff_eq!(out.attended.get(0, 0, k), 0.7, epsilon = 1e-12);
        }
    }

    #[test]
    fn paper_shape_map_is_17() {
        let f = Tensor3::zeros(22, 22, 8);
        let m = Tensor3::zeros(6, 6, 8);
        let out = attend(&f, &m).unwrap();
        assert_eq!((out.scores.rows(), out.scores.cols()), (17, 17));
        assert_eq!(out.pooled.dims(), (17, 17, 8));
        assert_eq!(out.attended.dims(), (6, 6, 8));
    }

    // Hand evaluation: f = [[1,2],[3,4]] (2x2x1), m = [1] (1x1x1).
    // r equals f, A = softmax(f), F_avg = f, and the attended scalar is the
    // softmax-weighted mean sum(A .* f) = sum(x e^x) / sum(e^x)
    // = 296.145604928.. / 84.791024883.. = 3.49265273458577.
    #[test]
    fn hand_weighted_mean() {
        let f = Tensor3::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = Tensor3::new(1, 1, 1, vec![1.0]).unwrap();
        let out = attend(&f, &m).unwrap();
        // Independent route: evaluate the definition directly.
        let exps: Vec<f64> = [1.0f64, 2.0, 3.0, 4.0].iter().map(|x| x.exp()).collect();
        let den: f64 = exps.iter().sum();
        let num: f64 = exps
            .iter()
            .zip([1.0, 2.0, 3.0, 4.0])
            .map(|(e, x)| e * x)
            .sum();
        let oracle = num / den;
        assert_abs_diff_eq!(out.attended.get(0, 0, 0), oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(oracle, 3.49265273458577, epsilon = 1e-11);
    }

    #[test]
    fn planted_template_recovered_at_offset() {
        let m = seeded(3, 3, 2, 9);
        let mut f = Tensor3::zeros(8, 8, 2);
        let (p, q) = (2usize, 4usize);
        for s in 0..3 {
            for t in 0..3 {
                for k in 0..2 {
                    f.set(p + s, q + t, k, m.get(s, t, k));
                }
            }
        }
        let out = attend(&f, &m).unwrap();
        assert_eq!(out.scores.argmax(), (p, q));
    }

    #[test]
    fn argmax_invariant_under_positive_scaling() {
        let f = seeded(7, 7, 3, 21);
        let m = seeded(3, 3, 3, 22);
        let base = crate::tensor::xcorr_valid(&f, &m).unwrap().argmax();
        for lambda in [0.25, 3.0, 17.5] {
            let scaled = crate::tensor::xcorr_valid(&f.scale(lambda), &m)
                .unwrap()
                .argmax();
            assert_eq!(scaled, base);
        }
    }

    #[test]
    fn attended_fiber_is_convex_combination() {
        let f = seeded(6, 6, 3, 33);
        let m = seeded(2, 2, 3, 34);
        let out = attend(&f, &m).unwrap();
        for k in 0..3 {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for i in 0..out.pooled.height() {
                for j in 0..out.pooled.width() {
                    lo = lo.min(out.pooled.get(i, j, k));
                    hi = hi.max(out.pooled.get(i, j, k));
                }
            }
            let v = out.attended.get(0, 0, k);
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn scores_sum_to_one() {
        let f = seeded(9, 9, 2, 40);
        let m = seeded(4, 4, 2, 41);
        let out = attend(&f, &m).unwrap();
        assert_abs_diff_eq!(out.scores.sum(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let f = Tensor3::zeros(6, 6, 2);
        let m = Tensor3::zeros(3, 3, 3);
        assert!(matches!(
            attend(&f, &m),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn uniform_variant_matches_shapes() {
        let f = seeded(6, 6, 2, 50);
        let out = attend_uniform(&f, 3, 3).unwrap();
        assert_eq!(out.attended.dims(), (3, 3, 2));
        let a = out.scores.rows() * out.scores.cols();
        for v in out.scores.data() {
            assert_abs_diff_eq!(*v, 1.0 / a as f64, epsilon = 1e-15);
        }
    }
}
