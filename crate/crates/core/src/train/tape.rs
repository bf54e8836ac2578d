//! Eager tape for reverse-mode differentiation.
//!
//! Nodes hold flat `Vec<f64>` values; shapes live in the op records. Forward
//! values are computed on push, delegating to the same kernels inference
//! uses, so the trained forward pass and the tracking forward pass cannot
//! drift apart. `backward` walks the tape once in reverse and accumulates
//! gradients per node.
//!
//! Memory writes and box updates are deliberately not ops: written slots and
//! crops enter later frames as constants, which is exactly the cross-frame
//! truncation the training contract specifies.

// Kernel index arithmetic reads clearer as explicit loops.
#![allow(clippy::needless_range_loop)]

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::memory::layer_norm;
use crate::tensor::{self, Tensor3};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatVec {
        w: NodeId,
        x: NodeId,
        rows: usize,
        cols: usize,
    },
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    SoftmaxVec(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    Conv {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        h: usize,
        w: usize,
        cin: usize,
        kh: usize,
        kw: usize,
        cout: usize,
        stride: usize,
    },
    Xcorr {
        f: NodeId,
        t: NodeId,
        fh: usize,
        fw: usize,
        th: usize,
        tw: usize,
        c: usize,
    },
    AvgPool {
        x: NodeId,
        h: usize,
        w: usize,
        c: usize,
        window: usize,
        stride: usize,
    },
    WeightedFiberSum {
        weights: NodeId,
        tensor: NodeId,
        positions: usize,
        channels: usize,
    },
    Tile {
        x: NodeId,
        reps: usize,
    },
    ChannelGate {
        gate: NodeId,
        tensor: NodeId,
        positions: usize,
        channels: usize,
    },
    CosineToKeys {
        key: NodeId,
        keys: Vec<Vec<f64>>,
    },
    WeightedConstSum {
        weights: NodeId,
        items: Vec<Vec<f64>>,
    },
    ScalarMulVec {
        scalar: NodeId,
        tensor: NodeId,
    },
    ScalarAddVec {
        scalar: NodeId,
        tensor: NodeId,
    },
    Slice {
        x: NodeId,
        start: usize,
        len: usize,
    },
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
    },
    LogisticLoss {
        h: NodeId,
        labels: Vec<f64>,
        weights: Vec<f64>,
    },
    SumSquares(NodeId),
    SumScalars(Vec<NodeId>),
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Vec<f64>>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.values[id]
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        self.values.len() - 1
    }

    /// A node gradients flow into (parameters, or anything under test).
    pub fn leaf(&mut self, data: Vec<f64>) -> NodeId {
        self.push(Op::Leaf, data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.values[a].len(), self.values[b].len());
        let v = self.values[a]
            .iter()
            .zip(&self.values[b])
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.values[a].len(), self.values[b].len());
        let v = self.values[a]
            .iter()
            .zip(&self.values[b])
            .map(|(x, y)| x - y)
            .collect();
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.values[a].len(), self.values[b].len());
        let v = self.values[a]
            .iter()
            .zip(&self.values[b])
            .map(|(x, y)| x * y)
            .collect();
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.values[a].iter().map(|x| x * k).collect();
        self.push(Op::Scale(a, k), v)
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId, rows: usize, cols: usize) -> NodeId {
        assert_eq!(self.values[w].len(), rows * cols);
        assert_eq!(self.values[x].len(), cols);
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            out[r] = math::dot(&self.values[w][r * cols..(r + 1) * cols], &self.values[x]);
        }
        self.push(Op::MatVec { w, x, rows, cols }, out)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x].iter().map(|v| math::sigmoid(*v)).collect();
        self.push(Op::Sigmoid(x), v)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x].iter().map(|v| math::tanh(*v)).collect();
        self.push(Op::Tanh(x), v)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x].iter().map(|v| v.max(0.0)).collect();
        self.push(Op::Relu(x), v)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x].iter().map(|v| math::exp(*v)).collect();
        self.push(Op::Exp(x), v)
    }

    pub fn softmax_vec(&mut self, x: NodeId) -> NodeId {
        let v = tensor::softmax_vec(&self.values[x]);
        self.push(Op::SoftmaxVec(x), v)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let v = layer_norm(&self.values[x], &self.values[gain], &self.values[bias]);
        self.push(Op::LayerNorm { x, gain, bias }, v)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        h: usize,
        w: usize,
        cin: usize,
        kh: usize,
        kw: usize,
        cout: usize,
        stride: usize,
    ) -> NodeId {
        let t = Tensor3::from_raw(h, w, cin, self.values[input].clone());
        let out = crate::backbone::conv2d(
            &t,
            &self.values[kernel],
            &self.values[bias],
            kh,
            kw,
            cout,
            stride,
        )
        .expect("conv shapes checked by the builder");
        self.push(
            Op::Conv {
                input,
                kernel,
                bias,
                h,
                w,
                cin,
                kh,
                kw,
                cout,
                stride,
            },
            out.into_data(),
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn xcorr(
        &mut self,
        f: NodeId,
        t: NodeId,
        fh: usize,
        fw: usize,
        th: usize,
        tw: usize,
        c: usize,
    ) -> NodeId {
        let ft = Tensor3::from_raw(fh, fw, c, self.values[f].clone());
        let tt = Tensor3::from_raw(th, tw, c, self.values[t].clone());
        let out = tensor::xcorr_valid(&ft, &tt).expect("xcorr shapes checked by the builder");
        let data = {
            let mut v = Vec::with_capacity(out.rows() * out.cols());
            v.extend_from_slice(out.data());
            v
        };
        self.push(
            Op::Xcorr {
                f,
                t,
                fh,
                fw,
                th,
                tw,
                c,
            },
            data,
        )
    }

    pub fn avgpool(
        &mut self,
        x: NodeId,
        h: usize,
        w: usize,
        c: usize,
        window: usize,
        stride: usize,
    ) -> NodeId {
        let t = Tensor3::from_raw(h, w, c, self.values[x].clone());
        let out = tensor::avgpool(&t, window, stride).expect("pool shapes checked by the builder");
        self.push(
            Op::AvgPool {
                x,
                h,
                w,
                c,
                window,
                stride,
            },
            out.into_data(),
        )
    }

    pub fn weighted_fiber_sum(
        &mut self,
        weights: NodeId,
        tensor: NodeId,
        positions: usize,
        channels: usize,
    ) -> NodeId {
        assert_eq!(self.values[weights].len(), positions);
        assert_eq!(self.values[tensor].len(), positions * channels);
        let mut out = vec![0.0; channels];
        for p in 0..positions {
            let wp = self.values[weights][p];
            for k in 0..channels {
                out[k] += wp * self.values[tensor][p * channels + k];
            }
        }
        self.push(
            Op::WeightedFiberSum {
                weights,
                tensor,
                positions,
                channels,
            },
            out,
        )
    }

    pub fn tile(&mut self, x: NodeId, reps: usize) -> NodeId {
        let base = self.values[x].clone();
        let mut out = Vec::with_capacity(base.len() * reps);
        for _ in 0..reps {
            out.extend_from_slice(&base);
        }
        self.push(Op::Tile { x, reps }, out)
    }

    pub fn channel_gate(
        &mut self,
        gate: NodeId,
        tensor: NodeId,
        positions: usize,
        channels: usize,
    ) -> NodeId {
        assert_eq!(self.values[gate].len(), channels);
        assert_eq!(self.values[tensor].len(), positions * channels);
        let mut out = vec![0.0; positions * channels];
        for p in 0..positions {
            for k in 0..channels {
                out[p * channels + k] =
                    self.values[gate][k] * self.values[tensor][p * channels + k];
            }
        }
        self.push(
            Op::ChannelGate {
                gate,
                tensor,
                positions,
                channels,
            },
            out,
        )
    }

    /// Cosine similarity of `key` against fixed (detached) memory keys.
    pub fn cosine_to_keys(&mut self, key: NodeId, keys: Vec<Vec<f64>>) -> NodeId {
        let out = keys
            .iter()
            .map(|k| tensor::cosine_sim(&self.values[key], k).expect("equal key lengths"))
            .collect();
        self.push(Op::CosineToKeys { key, keys }, out)
    }

    /// Weighted sum of fixed (detached) slot contents.
    pub fn weighted_const_sum(&mut self, weights: NodeId, items: Vec<Vec<f64>>) -> NodeId {
        assert_eq!(self.values[weights].len(), items.len());
        let len = items[0].len();
        let mut out = vec![0.0; len];
        for (w, item) in self.values[weights].iter().zip(&items) {
            for (o, v) in out.iter_mut().zip(item) {
                *o += w * v;
            }
        }
        self.push(Op::WeightedConstSum { weights, items }, out)
    }

    /// Broadcast multiply by a length-1 node.
    pub fn scalar_mul_vec(&mut self, scalar: NodeId, tensor: NodeId) -> NodeId {
        assert_eq!(self.values[scalar].len(), 1);
        let s = self.values[scalar][0];
        let v = self.values[tensor].iter().map(|x| s * x).collect();
        self.push(Op::ScalarMulVec { scalar, tensor }, v)
    }

    /// Broadcast add of a length-1 node.
    pub fn scalar_add_vec(&mut self, scalar: NodeId, tensor: NodeId) -> NodeId {
        assert_eq!(self.values[scalar].len(), 1);
        let s = self.values[scalar][0];
        let v = self.values[tensor].iter().map(|x| s + x).collect();
        self.push(Op::ScalarAddVec { scalar, tensor }, v)
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.values[x][start..start + len].to_vec();
        self.push(Op::Slice { x, start, len }, v)
    }

    /// Inverted dropout with a fixed mask (entries 0 or `1/(1-rate)`).
    pub fn dropout(&mut self, x: NodeId, mask: Vec<f64>) -> NodeId {
        assert_eq!(self.values[x].len(), mask.len());
        let v = self.values[x]
            .iter()
            .zip(&mask)
            .map(|(a, m)| a * m)
            .collect();
        self.push(Op::Dropout { x, mask }, v)
    }

    /// Weighted per-cell logistic loss: `sum_i w_i * softplus(-y_i * h_i)`.
    pub fn logistic_loss(&mut self, h: NodeId, labels: Vec<f64>, weights: Vec<f64>) -> NodeId {
        assert_eq!(self.values[h].len(), labels.len());
        assert_eq!(labels.len(), weights.len());
        let mut loss = 0.0;
        for ((hv, y), w) in self.values[h].iter().zip(&labels).zip(&weights) {
            loss += w * math::softplus(-y * hv);
        }
        self.push(
            Op::LogisticLoss {
                h,
                labels,
                weights,
            },
            vec![loss],
        )
    }

    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let s = self.values[x].iter().map(|v| v * v).sum();
        self.push(Op::SumSquares(x), vec![s])
    }

    pub fn sum_scalars(&mut self, nodes: Vec<NodeId>) -> NodeId {
        let s = nodes.iter().map(|n| self.values[*n][0]).sum();
        self.push(Op::SumScalars(nodes), vec![s])
    }

    /// Smallest |x| feeding any rectifier on the tape. Finite-difference
    /// probes need this comfortably above the probe step, otherwise the
    /// central difference straddles the kink and stops matching the
    /// (one-sided) analytic derivative.
    pub fn min_abs_relu_input(&self) -> f64 {
        let mut min = f64::INFINITY;
        for op in &self.ops {
            if let Op::Relu(x) = op {
                for v in &self.values[*x] {
                    min = min.min(math::abs(*v));
                }
            }
        }
        min
    }

    /// Gradients of a scalar `loss` node with respect to every node.
    pub fn backward(&self, loss: NodeId) -> Vec<Vec<f64>> {
        assert_eq!(self.values[loss].len(), 1, "loss must be scalar");
        let mut grads: Vec<Vec<f64>> = self.values.iter().map(|v| vec![0.0; v.len()]).collect();
        grads[loss][0] = 1.0;
        for id in (0..self.ops.len()).rev() {
            if grads[id].iter().all(|g| *g == 0.0) {
                continue;
            }
            let g = grads[id].clone();
            match &self.ops[id] {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    axpy(&mut grads[*a], &g, 1.0);
                    axpy(&mut grads[*b], &g, 1.0);
                }
                Op::Sub(a, b) => {
                    axpy(&mut grads[*a], &g, 1.0);
                    axpy(&mut grads[*b], &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    for i in 0..g.len() {
                        grads[a][i] += g[i] * self.values[b][i];
                    }
                    for i in 0..g.len() {
                        grads[b][i] += g[i] * self.values[a][i];
                    }
                }
                Op::Scale(a, k) => axpy(&mut grads[*a], &g, *k),
                Op::MatVec { w, x, rows, cols } => {
                    let (w, x, rows, cols) = (*w, *x, *rows, *cols);
                    for r in 0..rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            grads[w][r * cols + c] += gr * self.values[x][c];
                        }
                    }
                    for c in 0..cols {
                        let mut acc = 0.0;
                        for r in 0..rows {
                            acc += g[r] * self.values[w][r * cols + c];
                        }
                        grads[x][c] += acc;
                    }
                }
                Op::Sigmoid(x) => {
                    for i in 0..g.len() {
                        let y = self.values[id][i];
                        grads[*x][i] += g[i] * y * (1.0 - y);
                    }
                }
                Op::Tanh(x) => {
                    for i in 0..g.len() {
                        let y = self.values[id][i];
                        grads[*x][i] += g[i] * (1.0 - y * y);
                    }
                }
                Op::Relu(x) => {
                    for i in 0..g.len() {
                        if self.values[*x][i] > 0.0 {
                            grads[*x][i] += g[i];
                        }
                    }
                }
                Op::Exp(x) => {
                    for i in 0..g.len() {
                        grads[*x][i] += g[i] * self.values[id][i];
                    }
                }
                Op::SoftmaxVec(x) => {
                    let y = &self.values[id];
                    let inner: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                    for i in 0..g.len() {
                        grads[*x][i] += y[i] * (g[i] - inner);
                    }
                }
                Op::LayerNorm { x, gain, bias } => {
                    let xv = &self.values[*x];
                    let n = xv.len() as f64;
                    let mean = xv.iter().sum::<f64>() / n;
                    let var = xv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let inv = 1.0 / math::sqrt(var + crate::memory::LN_EPS);
                    let xhat: Vec<f64> = xv.iter().map(|v| (v - mean) * inv).collect();
                    let q: Vec<f64> = g
                        .iter()
                        .zip(&self.values[*gain])
                        .map(|(gi, ga)| gi * ga)
                        .collect();
                    let mean_q = q.iter().sum::<f64>() / n;
                    let mean_qx = q.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                    for i in 0..xv.len() {
                        grads[*gain][i] += g[i] * xhat[i];
                        grads[*bias][i] += g[i];
                    }
                    for i in 0..xv.len() {
                        grads[*x][i] += inv * (q[i] - mean_q - xhat[i] * mean_qx);
                    }
                }
                Op::Conv {
                    input,
                    kernel,
                    bias,
                    h,
                    w,
                    cin,
                    kh,
                    kw,
                    cout,
                    stride,
                } => {
                    let (input, kernel, bias) = (*input, *kernel, *bias);
                    let (w_in, cin, kh, kw, cout, stride) = (*w, *cin, *kh, *kw, *cout, *stride);
                    let out_w = (w_in - kw) / stride + 1;
                    let out_h = g.len() / (out_w * cout);
                    debug_assert_eq!(out_h, (*h - kh) / stride + 1);
                    for i in 0..out_h {
                        for j in 0..out_w {
                            for oc in 0..cout {
                                let go = g[(i * out_w + j) * cout + oc];
                                if go == 0.0 {
                                    continue;
                                }
                                grads[bias][oc] += go;
                                for s in 0..kh {
                                    for t in 0..kw {
                                        let in_base =
                                            ((i * stride + s) * w_in + (j * stride + t)) * cin;
                                        let k_base = ((oc * kh + s) * kw + t) * cin;
                                        for ic in 0..cin {
                                            grads[kernel][k_base + ic] +=
                                                go * self.values[input][in_base + ic];
                                        }
                                        for ic in 0..cin {
                                            grads[input][in_base + ic] +=
                                                go * self.values[kernel][k_base + ic];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Xcorr {
                    f,
                    t,
                    fh,
                    fw,
                    th,
                    tw,
                    c,
                } => {
                    let (f, t) = (*f, *t);
                    let (fw, th, tw, c) = (*fw, *th, *tw, *c);
                    let out_w = fw - tw + 1;
                    let out_h = g.len() / out_w;
                    debug_assert_eq!(out_h, *fh - th + 1);
                    for i in 0..out_h {
                        for j in 0..out_w {
                            let go = g[i * out_w + j];
                            if go == 0.0 {
                                continue;
                            }
                            for s in 0..th {
                                for u in 0..tw {
                                    let f_base = ((i + s) * fw + (j + u)) * c;
                                    let t_base = (s * tw + u) * c;
                                    for k in 0..c {
                                        grads[t][t_base + k] += go * self.values[f][f_base + k];
                                    }
                                    for k in 0..c {
                                        grads[f][f_base + k] += go * self.values[t][t_base + k];
                                    }
                                }
                            }
                        }
                    }
                }
                Op::AvgPool {
                    x,
                    h,
                    w,
                    c,
                    window,
                    stride,
                } => {
                    let x = *x;
                    let (w_in, c, window, stride) = (*w, *c, *window, *stride);
                    let out_w = (w_in - window) / stride + 1;
                    let out_h = g.len() / (out_w * c);
                    debug_assert_eq!(out_h, (*h - window) / stride + 1);
                    let norm = 1.0 / (window * window) as f64;
                    for i in 0..out_h {
                        for j in 0..out_w {
                            for k in 0..c {
                                let go = g[(i * out_w + j) * c + k] * norm;
                                if go == 0.0 {
                                    continue;
                                }
                                for s in 0..window {
                                    for t in 0..window {
                                        grads[x]
                                            [((i * stride + s) * w_in + (j * stride + t)) * c + k] +=
                                            go;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::WeightedFiberSum {
                    weights,
                    tensor,
                    positions,
                    channels,
                } => {
                    let (weights, tensor) = (*weights, *tensor);
                    let (positions, channels) = (*positions, *channels);
                    for p in 0..positions {
                        let mut acc = 0.0;
                        for k in 0..channels {
                            acc += g[k] * self.values[tensor][p * channels + k];
                        }
                        grads[weights][p] += acc;
                    }
                    for p in 0..positions {
                        let wp = self.values[weights][p];
                        for k in 0..channels {
                            grads[tensor][p * channels + k] += wp * g[k];
                        }
                    }
                }
                Op::Tile { x, reps } => {
                    let len = self.values[*x].len();
                    for r in 0..*reps {
                        for k in 0..len {
                            grads[*x][k] += g[r * len + k];
                        }
                    }
                }
                Op::ChannelGate {
                    gate,
                    tensor,
                    positions,
                    channels,
                } => {
                    let (gate, tensor) = (*gate, *tensor);
                    let (positions, channels) = (*positions, *channels);
                    for k in 0..channels {
                        let mut acc = 0.0;
                        for p in 0..positions {
                            acc += g[p * channels + k] * self.values[tensor][p * channels + k];
                        }
                        grads[gate][k] += acc;
                    }
                    for p in 0..positions {
                        for k in 0..channels {
                            grads[tensor][p * channels + k] +=
                                self.values[gate][k] * g[p * channels + k];
                        }
                    }
                }
                Op::CosineToKeys { key, keys } => {
                    let u = &self.values[*key];
                    let nu = math::sqrt(math::dot(u, u));
                    for (k, keyk) in keys.iter().enumerate() {
                        let gk = g[k];
                        if gk == 0.0 {
                            continue;
                        }
                        let nv = math::sqrt(math::dot(keyk, keyk));
                        let denom = nu * nv + tensor::COSINE_EPS;
                        let d = math::dot(u, keyk);
                        for i in 0..u.len() {
                            let mut grad = keyk[i] / denom;
                            if nu > 1e-300 {
                                grad -= d * nv * u[i] / (nu * denom * denom);
                            }
                            grads[*key][i] += gk * grad;
                        }
                    }
                }
                Op::WeightedConstSum { weights, items } => {
                    for (k, item) in items.iter().enumerate() {
                        grads[*weights][k] += math::dot(&g, item);
                    }
                }
                Op::ScalarMulVec { scalar, tensor } => {
                    let s = self.values[*scalar][0];
                    grads[*scalar][0] += math::dot(&g, &self.values[*tensor]);
                    axpy(&mut grads[*tensor], &g, s);
                }
                Op::ScalarAddVec { scalar, tensor } => {
                    grads[*scalar][0] += g.iter().sum::<f64>();
                    axpy(&mut grads[*tensor], &g, 1.0);
                }
                Op::Slice { x, start, len } => {
                    for i in 0..*len {
                        grads[*x][start + i] += g[i];
                    }
                }
                Op::Dropout { x, mask } => {
                    for i in 0..g.len() {
                        grads[*x][i] += g[i] * mask[i];
                    }
                }
                Op::LogisticLoss {
                    h,
                    labels,
                    weights,
                } => {
                    let g0 = g[0];
                    for i in 0..labels.len() {
                        let y = labels[i];
                        let hv = self.values[*h][i];
                        grads[*h][i] += g0 * weights[i] * (-y) * math::sigmoid(-y * hv);
                    }
                }
                Op::SumSquares(x) => {
                    let g0 = g[0];
                    for i in 0..self.values[*x].len() {
                        grads[*x][i] += g0 * 2.0 * self.values[*x][i];
                    }
                }
                Op::SumScalars(nodes) => {
                    for n in nodes {
                        grads[*n][0] += g[0];
                    }
                }
            }
        }
        grads
    }
}

fn axpy(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn rand_vec(len: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
        (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    /// Central finite differences against the tape for a scalar loss built
    /// from leaf inputs.
    fn check(build: impl Fn(&mut Tape, &[NodeId]) -> NodeId, inputs: &[Vec<f64>], tol: f64) {
        let eps = 1e-6;
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
        let loss = build(&mut tape, &ids);
        let grads = tape.backward(loss);
        for (which, input) in inputs.iter().enumerate() {
            for i in 0..input.len() {
                let eval = |delta: f64| {
                    let mut t = Tape::new();
                    let ids: Vec<NodeId> = inputs
                        .iter()
                        .enumerate()
                        .map(|(w, v)| {
                            let mut v = v.clone();
                            if w == which {
                                v[i] += delta;
                            }
                            t.leaf(v)
                        })
                        .collect();
                    let l = build(&mut t, &ids);
                    t.value(l)[0]
                };
                let num = (eval(eps) - eval(-eps)) / (2.0 * eps);
                let ana = grads[ids[which]][i];
                let denom = ana.abs().max(num.abs()).max(1e-6);
                assert!(
                    (ana - num).abs() / denom < tol,
                    "input {which}[{i}]: analytic {ana} vs numeric {num}"
                );
            }
        }
    }

    #[test]
    fn grad_elementwise_and_matvec() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let a = rand_vec(6, &mut rng);
        let b = rand_vec(6, &mut rng);
        check(
            |t, ids| {
                let s = t.add(ids[0], ids[1]);
                let m = t.mul(s, ids[0]);
                let d = t.sub(m, ids[1]);
                let sc = t.scale(d, 0.7);
                t.sum_squares(sc)
            },
            &[a, b],
            1e-5,
        );
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let w = rand_vec(12, &mut rng);
        let x = rand_vec(4, &mut rng);
        check(
            |t, ids| {
                let y = t.matvec(ids[0], ids[1], 3, 4);
                t.sum_squares(y)
            },
            &[w, x],
            1e-5,
        );
    }

    #[test]
    fn grad_activations_softmax_layernorm() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x = rand_vec(7, &mut rng);
        check(
            |t, ids| {
                let s = t.sigmoid(ids[0]);
                let th = t.tanh(s);
                let e = t.exp(th);
                t.sum_squares(e)
            },
            core::slice::from_ref(&x),
            1e-5,
        );
        check(
            |t, ids| {
                let s = t.softmax_vec(ids[0]);
                t.sum_squares(s)
            },
            core::slice::from_ref(&x),
            1e-5,
        );
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let gain = rand_vec(7, &mut rng);
        let bias = rand_vec(7, &mut rng);
        check(
            |t, ids| {
                let n = t.layer_norm(ids[0], ids[1], ids[2]);
                t.sum_squares(n)
            },
            &[x, gain, bias],
            1e-4,
        );
    }

    #[test]
    fn grad_relu_off_kink() {
        // Keep inputs away from the kink so finite differences are clean.
        let x: Vec<f64> = alloc::vec![-0.9, -0.4, 0.3, 0.8, 1.5, -1.2];
        check(
            |t, ids| {
                let r = t.relu(ids[0]);
                t.sum_squares(r)
            },
            &[x],
            1e-5,
        );
    }

    #[test]
    fn grad_conv_xcorr_pool() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let input = rand_vec(5 * 5 * 2, &mut rng);
        let kernel = rand_vec(2 * 2 * 2 * 3, &mut rng);
        let bias = rand_vec(3, &mut rng);
        check(
            |t, ids| {
                let y = t.conv(ids[0], ids[1], ids[2], 5, 5, 2, 2, 2, 3, 2);
                t.sum_squares(y)
            },
            &[input, kernel, bias],
            1e-5,
        );
        let f = rand_vec(5 * 5 * 2, &mut rng);
        let m = rand_vec(2 * 2 * 2, &mut rng);
        check(
            |t, ids| {
                let y = t.xcorr(ids[0], ids[1], 5, 5, 2, 2, 2);
                t.sum_squares(y)
            },
            &[f, m],
            1e-5,
        );
        let x = rand_vec(6 * 6 * 2, &mut rng);
        check(
            |t, ids| {
                let y = t.avgpool(ids[0], 6, 6, 2, 3, 2);
                t.sum_squares(y)
            },
            &[x],
            1e-5,
        );
    }

    #[test]
    fn grad_attention_ops() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let w = rand_vec(9, &mut rng);
        let t3 = rand_vec(9 * 4, &mut rng);
        check(
            |t, ids| {
                let fiber = t.weighted_fiber_sum(ids[0], ids[1], 9, 4);
                let tiled = t.tile(fiber, 4);
                t.sum_squares(tiled)
            },
            &[w, t3],
            1e-5,
        );
        let gate = rand_vec(4, &mut rng);
        let tensor = rand_vec(6 * 4, &mut rng);
        check(
            |t, ids| {
                let y = t.channel_gate(ids[0], ids[1], 6, 4);
                t.sum_squares(y)
            },
            &[gate, tensor],
            1e-5,
        );
    }

    #[test]
    fn grad_memory_ops() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let key = rand_vec(5, &mut rng);
        let keys: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(5, &mut rng)).collect();
        let keys2 = keys.clone();
        check(
            move |t, ids| {
                let sims = t.cosine_to_keys(ids[0], keys2.clone());
                let w = t.softmax_vec(sims);
                t.sum_squares(w)
            },
            &[key],
            1e-4,
        );
        let _ = keys;
        let weights = rand_vec(3, &mut rng);
        let items: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(8, &mut rng)).collect();
        let items2 = items.clone();
        check(
            move |t, ids| {
                let y = t.weighted_const_sum(ids[0], items2.clone());
                t.sum_squares(y)
            },
            &[weights],
            1e-5,
        );
    }

    #[test]
    fn grad_scalar_broadcast_slice_dropout_loss() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let s = rand_vec(1, &mut rng);
        let v = rand_vec(6, &mut rng);
        check(
            |t, ids| {
                let m = t.scalar_mul_vec(ids[0], ids[1]);
                let a = t.scalar_add_vec(ids[0], m);
                let sl = t.slice(a, 1, 4);
                t.sum_squares(sl)
            },
            &[s, v.clone()],
            1e-5,
        );
        let mask: Vec<f64> = alloc::vec![1.25, 0.0, 1.25, 1.25, 0.0, 1.25];
        let mask2 = mask.clone();
        check(
            move |t, ids| {
                let d = t.dropout(ids[0], mask2.clone());
                t.sum_squares(d)
            },
            core::slice::from_ref(&v),
            1e-5,
        );
        let labels: Vec<f64> = alloc::vec![1.0, -1.0, -1.0, 1.0, -1.0, -1.0];
        let weights: Vec<f64> = alloc::vec![0.25, 0.1, 0.1, 0.25, 0.1, 0.2];
        let (l2, w2) = (labels.clone(), weights.clone());
        check(
            move |t, ids| t.logistic_loss(ids[0], l2.clone(), w2.clone()),
            &[v],
            1e-5,
        );
    }

    #[test]
    fn softmax_input_gradient_sums_to_zero() {
        // The softmax Jacobian annihilates constants, so any loss through a
        // softmax has input gradients summing to zero.
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let x = rand_vec(9, &mut rng);
        let mut tape = Tape::new();
        let xid = tape.leaf(x);
        let s = tape.softmax_vec(xid);
        let arbitrary = tape.sum_squares(s);
        let grads = tape.backward(arbitrary);
        let total: f64 = grads[xid].iter().sum();
        assert!(total.abs() < 1e-12, "softmax grad sum {total}");
    }
}
