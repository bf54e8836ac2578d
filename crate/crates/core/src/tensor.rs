//! Minimal deterministic tensor kernels: valid cross-correlation, average
//! pooling, softmax, cosine similarity, and elementwise arithmetic.
//!
//! Storage is dense row-major `(row, col, channel)` in 64-bit floats. Every
//! operation is a pure function of its inputs; nothing here holds state.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Denominator guard in [`cosine_sim`]; defines the zero-vector case as 0.
pub const COSINE_EPS: f64 = 1e-8;

/// Dense `height x width x channels` feature volume, row-major `(h, w, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "tensor dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::LengthMismatch {
                op: "Tensor3::new",
                left: data.len(),
                right: height * width * channels,
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: alloc::format!("Tensor3 {height}x{width}x{channels}"),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Non-validating constructor for internal hot paths.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for k in 0..channels {
                    data.push(f(i, j, k));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }
    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.width + j) * self.channels + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.width + j) * self.channels + k] = v;
    }

    /// The `channels`-length fiber at spatial position `(i, j)`.
    #[inline]
    pub fn fiber(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.width + j) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Contiguous slice covering `len` fibers of row `i` starting at column `j`.
    #[inline]
    fn row_span(&self, i: usize, j: usize, len: usize) -> &[f64] {
        let start = (i * self.width + j) * self.channels;
        &self.data[start..start + len * self.channels]
    }

    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        self.zip_with(other, "Tensor3::add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        self.zip_with(other, "Tensor3::sub", |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Tensor3 {
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    fn zip_with(
        &self,
        other: &Tensor3,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor3> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.dims(),
                right: other.dims(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| f(*a, *b))
            .collect();
        Ok(Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        })
    }

    /// Per-channel mean over all spatial positions.
    pub fn global_avg_per_channel(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.channels];
        for pos in 0..self.height * self.width {
            let fiber = &self.data[pos * self.channels..(pos + 1) * self.channels];
            for (a, v) in acc.iter_mut().zip(fiber) {
                *a += v;
            }
        }
        let n = (self.height * self.width) as f64;
        for a in acc.iter_mut() {
            *a /= n;
        }
        acc
    }

    pub(crate) fn debug_check_finite(&self, what: &'static str) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "non-finite value produced by {what}"
        );
    }
}

/// Dense `rows x cols` matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                op: "Matrix2::new",
                left: data.len(),
                right: rows * cols,
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: alloc::format!("Matrix2 {rows}x{cols}"),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }
    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }
    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Position of the largest entry; first occurrence wins, so the result is
    /// deterministic even under exact ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (idx, v) in self.data.iter().enumerate() {
            if v.total_cmp(&self.data[best]) == core::cmp::Ordering::Greater {
                best = idx;
            }
        }
        (best / self.cols, best % self.cols)
    }

    /// Elementwise product; shapes must agree.
    pub fn hadamard(&self, other: &Matrix2) -> Result<Matrix2> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op: "Matrix2::hadamard",
                left: (self.rows, self.cols, 1),
                right: (other.rows, other.cols, 1),
            });
        }
        Ok(Matrix2 {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    /// Min-max normalization to `[0, 1]`. A constant map (spread below
    /// `1e-12`) normalizes to all zeros rather than dividing by zero.
    pub fn normalize_minmax(&self) -> Matrix2 {
        let min = self.min();
        let max = self.max();
        let spread = max - min;
        if spread <= 1e-12 {
            return Matrix2::zeros(self.rows, self.cols);
        }
        Matrix2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| (v - min) / spread).collect(),
        }
    }
}

use crate::math::dot;

/// Valid (no padding) cross-correlation of a feature volume with a template.
///
/// `out[i][j] = sum over (s, t, k) of f[i+s][j+t][k] * m[s][t][k]`, giving an
/// `(f.h - m.h + 1) x (f.w - m.w + 1)` map.
pub fn xcorr_valid(f: &Tensor3, m: &Tensor3) -> Result<Matrix2> {
    if f.channels() != m.channels() || m.height() > f.height() || m.width() > f.width() {
        return Err(Error::ShapeMismatch {
            op: "xcorr_valid",
            left: f.dims(),
            right: m.dims(),
        });
    }
    let out_h = f.height() - m.height() + 1;
    let out_w = f.width() - m.width() + 1;
    let mut out = Matrix2::zeros(out_h, out_w);
    for i in 0..out_h {
        for j in 0..out_w {
            let mut acc = 0.0;
            for s in 0..m.height() {
                // One contiguous dot per kernel row: the (w, c) layout makes
                // the m.width * channels span of both operands contiguous.
                acc += dot(
                    f.row_span(i + s, j, m.width()),
                    m.row_span(s, 0, m.width()),
                );
            }
            out.set(i, j, acc);
        }
    }
    out
        .data
        .iter()
        .all(|v| v.is_finite())
        .then_some(())
        .ok_or(Error::NonFinite {
            what: alloc::string::String::from("xcorr_valid output"),
        })?;
    Ok(out)
}

/// Per-channel average pooling with a square window.
///
/// Output spatial extent is `floor((dim - window) / stride) + 1` per axis.
pub fn avgpool(f: &Tensor3, window: usize, stride: usize) -> Result<Tensor3> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidConfig(alloc::format!(
            "avgpool window {window} / stride {stride} must be positive"
        )));
    }
    if window > f.height() || window > f.width() {
        return Err(Error::WindowTooLarge {
            window,
            height: f.height(),
            width: f.width(),
        });
    }
    let out_h = (f.height() - window) / stride + 1;
    let out_w = (f.width() - window) / stride + 1;
    let c = f.channels();
    let norm = 1.0 / (window * window) as f64;
    let mut out = Tensor3::zeros(out_h, out_w, c);
    for i in 0..out_h {
        for j in 0..out_w {
            let mut acc = vec![0.0; c];
            for s in 0..window {
                for t in 0..window {
                    let fiber = f.fiber(i * stride + s, j * stride + t);
                    for (a, v) in acc.iter_mut().zip(fiber) {
                        *a += v;
                    }
                }
            }
            for (k, a) in acc.iter().enumerate() {
                out.set(i, j, k, a * norm);
            }
        }
    }
    out.debug_check_finite("avgpool");
    Ok(out)
}

/// Softmax over all entries of a map.
///
/// The maximum is subtracted before exponentiation; this changes nothing
/// mathematically and keeps the exponentials bounded. Entries land in
/// `(0, 1]` and sum to 1.
pub fn softmax2d(r: &Matrix2) -> Matrix2 {
    let max = r.max();
    let mut out = Matrix2 {
        rows: r.rows,
        cols: r.cols,
        data: r.data.iter().map(|v| math::exp(v - max)).collect(),
    };
    let sum: f64 = out.data.iter().sum();
    for v in out.data.iter_mut() {
        *v /= sum;
    }
    out
}

/// Softmax over a vector, max-subtracted. Used for read weights and gates.
pub fn softmax_vec(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| math::exp(x - max)).collect();
    let sum: f64 = out.iter().sum();
    for x in out.iter_mut() {
        *x /= sum;
    }
    out
}

/// Cosine similarity `u.v / (|u| |v| + eps)` with `eps` = [`COSINE_EPS`].
///
/// The guard makes the similarity of a zero vector 0 instead of undefined.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch {
            op: "cosine_sim",
            left: u.len(),
            right: v.len(),
        });
    }
    let uu = dot(u, u);
    let vv = dot(v, v);
    Ok(dot(u, v) / (math::sqrt(uu) * math::sqrt(vv) + COSINE_EPS))
}

/// Catmull-Rom bicubic kernel.
fn cubic(t: f64) -> f64 {
    let a = -0.5;
    let t = math::abs(t);
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic upsampling of a map by an integer factor: an `a x a` map becomes
/// `a*factor x a*factor`. Sample centers are aligned so that output pixel `p`
/// reads source coordinate `(p + 0.5) / factor - 0.5`; borders clamp.
pub fn upsample_bicubic(m: &Matrix2, factor: usize) -> Matrix2 {
    assert!(factor >= 1, "upsample factor must be at least 1");
    let out_r = m.rows() * factor;
    let out_c = m.cols() * factor;
    let mut out = Matrix2::zeros(out_r, out_c);
    let src = |i: isize, j: isize| -> f64 {
        let i = i.clamp(0, m.rows() as isize - 1) as usize;
        let j = j.clamp(0, m.cols() as isize - 1) as usize;
        m.get(i, j)
    };
    for p in 0..out_r {
        let y = (p as f64 + 0.5) / factor as f64 - 0.5;
        let y0 = math::floor(y) as isize;
        let fy = y - y0 as f64;
        for q in 0..out_c {
            let x = (q as f64 + 0.5) / factor as f64 - 0.5;
            let x0 = math::floor(x) as isize;
            let fx = x - x0 as f64;
            let mut acc = 0.0;
            for dy in -1..=2_isize {
                let wy = cubic(fy - dy as f64);
                if wy == 0.0 {
                    continue;
                }
                for dx in -1..=2_isize {
                    let wx = cubic(fx - dx as f64);
                    if wx == 0.0 {
                        continue;
                    }
                    acc += wy * wx * src(y0 + dy, x0 + dx);
                }
            }
            out.set(p, q, acc);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Literal five-loop transcription of the correlation definition; the
    /// oracle the fast path is checked against.
    fn xcorr_naive(f: &Tensor3, m: &Tensor3) -> Matrix2 {
        let out_h = f.height() - m.height() + 1;
        let out_w = f.width() - m.width() + 1;
        let mut out = Matrix2::zeros(out_h, out_w);
        for i in 0..out_h {
            for j in 0..out_w {
                let mut acc = 0.0;
                for s in 0..m.height() {
                    for t in 0..m.width() {
                        for k in 0..m.channels() {
                            acc += f.get(i + s, j + t, k) * m.get(s, t, k);
                        }
                    }
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn seeded_tensor(h: usize, w: usize, c: usize, seed: u64) -> Tensor3 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        Tensor3::from_fn(h, w, c, |_, _, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn xcorr_paper_shape() {
        let f = Tensor3::zeros(22, 22, 4);
        let m = Tensor3::zeros(6, 6, 4);
        let out = xcorr_valid(&f, &m).unwrap();
        assert_eq!((out.rows(), out.cols()), (17, 17));
    }

    #[test]
    fn xcorr_zero_feature_is_zero() {
        let f = Tensor3::zeros(5, 5, 2);
        let m = seeded_tensor(3, 3, 2, 1);
        let out = xcorr_valid(&f, &m).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn xcorr_unit_kernel_scales() {
        let f = Tensor3::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = Tensor3::new(1, 1, 1, vec![5.0]).unwrap();
        let out = xcorr_valid(&f, &m).unwrap();
        assert_eq!(out.data(), &[5.0, 10.0, 15.0, 20.0]);
    }

    #[test]
    fn xcorr_matches_naive_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        for case in 0..100 {
            let mh = rng.random_range(1..=4usize);
            let mw = rng.random_range(1..=4usize);
            let c = rng.random_range(1..=3usize);
            let fh = rng.random_range(mh..=8usize);
            let fw = rng.random_range(mw..=8usize);
            let f = seeded_tensor(fh, fw, c, 1000 + case);
            let m = seeded_tensor(mh, mw, c, 2000 + case);
            let fast = xcorr_valid(&f, &m).unwrap();
            let slow = xcorr_naive(&f, &m);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn xcorr_shape_mismatch_reports_both_shapes() {
        let f = Tensor3::zeros(4, 4, 2);
        let m = Tensor3::zeros(2, 2, 3);
        match xcorr_valid(&f, &m) {
            Err(Error::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, (4, 4, 2));
                assert_eq!(right, (2, 2, 3));
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn avgpool_identity_window() {
        let f = seeded_tensor(4, 4, 3, 7);
        let out = avgpool(&f, 1, 1).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn avgpool_constant_stays_constant() {
        let f = Tensor3::from_fn(5, 5, 2, |_, _, _| 3.25);
        let out = avgpool(&f, 3, 2).unwrap();
        assert_eq!(out.dims(), (2, 2, 2));
        assert!(out.data().iter().all(|v| (*v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn avgpool_mean_example() {
        let f = Tensor3::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = avgpool(&f, 2, 1).unwrap();
        assert_eq!(out.dims(), (1, 1, 1));
        assert_abs_diff_eq!(out.get(0, 0, 0), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn avgpool_full_window_is_global_mean() {
        let f = seeded_tensor(6, 6, 2, 9);
        let out = avgpool(&f, 6, 1).unwrap();
        let mean = f.global_avg_per_channel();
        assert_abs_diff_eq!(out.get(0, 0, 0), mean[0], epsilon = 1e-12);
        assert_abs_diff_eq!(out.get(0, 0, 1), mean[1], epsilon = 1e-12);
    }

    #[test]
    fn avgpool_window_too_large() {
        let f = Tensor3::zeros(3, 3, 1);
        assert!(matches!(
            avgpool(&f, 4, 1),
            Err(Error::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn softmax_uniform_input() {
        let r = Matrix2::from_fn(3, 4, |_, _| 1.7);
        let out = softmax2d(&r);
        for v in out.data() {
            assert_abs_diff_eq!(*v, 1.0 / 12.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_hand_example() {
        let r = Matrix2::new(1, 2, vec![0.0, 3.0_f64.ln()]).unwrap();
        let out = softmax2d(&r);
        assert_abs_diff_eq!(out.get(0, 0), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(out.get(0, 1), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn softmax_normalizes() {
        let r = seeded_tensor(1, 30, 1, 5);
        let m = Matrix2::new(5, 6, r.data().to_vec()).unwrap();
        let out = softmax2d(&m);
        assert_abs_diff_eq!(out.sum(), 1.0, epsilon = 1e-9);
        assert!(out.data().iter().all(|v| *v > 0.0 && *v <= 1.0));
    }

    #[test]
    fn cosine_identical_vectors() {
        let u = [1.0, -2.0, 0.5];
        let s = cosine_sim(&u, &u).unwrap();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn cosine_orthogonal_vectors() {
        let u = [1.0, 0.0];
        let v = [0.0, 3.0];
        assert_abs_diff_eq!(cosine_sim(&u, &v).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn cosine_zero_vector_is_zero() {
        let u = [0.0, 0.0];
        let v = [1.0, 2.0];
        assert_eq!(cosine_sim(&u, &v).unwrap(), 0.0);
    }

    #[test]
    fn cosine_length_mismatch() {
        assert!(matches!(
            cosine_sim(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ops_are_deterministic() {
        let f = seeded_tensor(6, 6, 3, 11);
        let m = seeded_tensor(3, 3, 3, 12);
        let a = xcorr_valid(&f, &m).unwrap();
        let b = xcorr_valid(&f, &m).unwrap();
        assert_eq!(a.data(), b.data());
        let p = avgpool(&f, 2, 2).unwrap();
        let q = avgpool(&f, 2, 2).unwrap();
        assert_eq!(p.data(), q.data());
    }

    #[test]
    fn upsample_constant_map() {
        let m = Matrix2::from_fn(3, 3, |_, _| 2.0);
        let up = upsample_bicubic(&m, 4);
        assert_eq!((up.rows(), up.cols()), (12, 12));
        for v in up.data() {
            assert_abs_diff_eq!(*v, 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn upsample_peak_stays_near_cell() {
        let mut m = Matrix2::zeros(5, 5);
        m.set(2, 3, 1.0);
        let up = upsample_bicubic(&m, 16);
        let (pi, pj) = up.argmax();
        let ci = (pi as f64 + 0.5) / 16.0 - 0.5;
        let cj = (pj as f64 + 0.5) / 16.0 - 0.5;
        assert!((ci - 2.0).abs() < 0.5, "row peak at {ci}");
        assert!((cj - 3.0).abs() < 0.5, "col peak at {cj}");
    }

    #[test]
    fn normalize_minmax_degenerate_is_zero() {
        let m = Matrix2::from_fn(4, 4, |_, _| 5.0);
        let n = m.normalize_minmax();
        assert!(n.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tensor_rejects_non_finite() {
        assert!(matches!(
            Tensor3::new(1, 1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { .. })
        ));
    }
}
