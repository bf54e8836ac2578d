//! Patch sampling and the shared convolutional feature extractor.
//!
//! One weight set serves all three branches: the search (ROI) branch, the
//! target branch, and the background branch. The search crop is twice the
//! target crop side, mirroring the 255:127 relation of the `paper` preset,
//! and the target crop side is `crop_factor * sqrt(w * h)` of the box.
//! Out-of-frame samples read the frame's mean color.

// Kernel index arithmetic reads clearer as explicit loops.
#![allow(clippy::needless_range_loop)]

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math;
use crate::tensor::Tensor3;
use crate::tracker::BoundingBox;
use crate::weights::BackboneWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        relu: bool,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    AvgPool {
        window: usize,
        stride: usize,
    },
}

/// Layer stack plus the branch input sizes and the derived feature geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub layers: Vec<LayerSpec>,
    /// Side of the search/background branch input patch.
    pub roi_input: usize,
    /// Side of the target branch input patch.
    pub target_input: usize,
    /// Search feature side `n`.
    pub roi_feat: usize,
    /// Target feature side `m`.
    pub target_feat: usize,
    /// Feature channels `c`.
    pub channels: usize,
    /// Product of all layer strides; one feature cell spans this many input
    /// pixels.
    pub total_stride: usize,
}

impl BackboneConfig {
    /// Alex-like stack: 255 -> 22 on the search branch, 127 -> 6 on the
    /// target branch, 256 channels, total stride 8.
    pub fn paper() -> Self {
        use LayerSpec::*;
        Self::from_layers(
            alloc::vec![
                Conv { kh: 11, kw: 11, cin: 3, cout: 96, stride: 2, relu: true },
                MaxPool { window: 3, stride: 2 },
                Conv { kh: 5, kw: 5, cin: 96, cout: 256, stride: 1, relu: true },
                MaxPool { window: 3, stride: 2 },
                Conv { kh: 3, kw: 3, cin: 256, cout: 384, stride: 1, relu: true },
                Conv { kh: 3, kw: 3, cin: 384, cout: 384, stride: 1, relu: true },
                Conv { kh: 3, kw: 3, cin: 384, cout: 256, stride: 1, relu: false },
            ],
            255,
            127,
        )
        .expect("paper preset is well-formed")
    }

    /// Small stack that runs in milliseconds: 40 -> 10 search, 24 -> 4
    /// target, 16 channels, total stride 3. All layers are convolutions so
    /// the whole preset is smooth enough for gradient checking.
    pub fn toy() -> Self {
        use LayerSpec::*;
        Self::from_layers(
            alloc::vec![
                Conv { kh: 5, kw: 5, cin: 3, cout: 8, stride: 1, relu: true },
                Conv { kh: 3, kw: 3, cin: 8, cout: 16, stride: 3, relu: true },
                Conv { kh: 3, kw: 3, cin: 16, cout: 16, stride: 1, relu: false },
            ],
            40,
            24,
        )
        .expect("toy preset is well-formed")
    }

    /// Tiny stack for finite-difference checks: 7 -> 5 search, 4 -> 2
    /// target, 3 channels, stride 1.
    pub fn micro() -> Self {
        use LayerSpec::*;
        Self::from_layers(
            alloc::vec![
                Conv { kh: 2, kw: 2, cin: 3, cout: 4, stride: 1, relu: true },
                Conv { kh: 2, kw: 2, cin: 4, cout: 3, stride: 1, relu: false },
            ],
            7,
            4,
        )
        .expect("micro preset is well-formed")
    }

    pub fn from_layers(layers: Vec<LayerSpec>, roi_input: usize, target_input: usize) -> Result<Self> {
        let (roi_feat, channels) = walk(&layers, roi_input, 3)?;
        let (target_feat, tc) = walk(&layers, target_input, 3)?;
        if tc != channels {
            return Err(Error::InvalidConfig(format!(
                "branch channel counts diverge: {channels} vs {tc}"
            )));
        }
        if !(roi_feat > target_feat && target_feat >= 1) {
            return Err(Error::InvalidConfig(format!(
                "feature sides must satisfy n > m >= 1, got n={roi_feat}, m={target_feat}"
            )));
        }
        let total_stride = layers
            .iter()
            .map(|l| match l {
                LayerSpec::Conv { stride, .. }
                | LayerSpec::MaxPool { stride, .. }
                | LayerSpec::AvgPool { stride, .. } => *stride,
            })
            .product();
        Ok(Self {
            layers,
            roi_input,
            target_input,
            roi_feat,
            target_feat,
            channels,
            total_stride,
        })
    }

    /// Attention/heat map side `a = n - m + 1`.
    pub fn map_side(&self) -> usize {
        self.roi_feat - self.target_feat + 1
    }
}

fn walk(layers: &[LayerSpec], input: usize, input_c: usize) -> Result<(usize, usize)> {
    let mut side = input;
    let mut c = input_c;
    for (idx, layer) in layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv {
                kh,
                kw,
                cin,
                cout,
                stride,
                ..
            } => {
                if cin != c {
                    return Err(Error::InvalidConfig(format!(
                        "layer {idx} expects {cin} channels, gets {c}"
                    )));
                }
                if kh != kw {
                    return Err(Error::InvalidConfig(format!(
                        "layer {idx}: only square kernels supported"
                    )));
                }
                if kh > side || stride == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "layer {idx}: kernel {kh} over input {side} at stride {stride}"
                    )));
                }
                side = (side - kh) / stride + 1;
                c = cout;
            }
            LayerSpec::MaxPool { window, stride } | LayerSpec::AvgPool { window, stride } => {
                if window > side || stride == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "layer {idx}: pool window {window} over input {side}"
                    )));
                }
                side = (side - window) / stride + 1;
            }
        }
    }
    Ok((side, c))
}

/// An image crop resized to a branch input size; RGB values in `[0, 1]`.
/// Carries the source frame's mean color, which is what out-of-frame
/// samples were filled with and what background masking paints.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub data: Tensor3,
    pub fill: [f64; 3],
}

impl Patch {
    pub fn side(&self) -> usize {
        self.data.height()
    }
}

/// Target crop side in frame pixels: `crop_factor * sqrt(w * h)`.
pub fn target_crop_side(bbox: &BoundingBox, crop_factor: f64) -> f64 {
    crop_factor * math::sqrt(bbox.width * bbox.height)
}

/// Square crop of side `crop_side` centered on `center`, bilinearly resized
/// to `out_side`, mean-filled outside the frame.
pub fn crop_square(frame: &Image, center: (f64, f64), crop_side: f64, out_side: usize) -> Patch {
    let fill = frame.mean_color();
    let step = crop_side / out_side as f64;
    let x0 = center.0 - crop_side / 2.0;
    let y0 = center.1 - crop_side / 2.0;
    let mut data = Tensor3::zeros(out_side, out_side, 3);
    for i in 0..out_side {
        let y = y0 + (i as f64 + 0.5) * step - 0.5;
        for j in 0..out_side {
            let x = x0 + (j as f64 + 0.5) * step - 0.5;
            let rgb = frame.sample_bilinear(x, y, fill);
            for k in 0..3 {
                data.set(i, j, k, rgb[k]);
            }
        }
    }
    Patch { data, fill }
}

/// Search-region crop: side is twice the target crop side, resized to the
/// search branch input.
pub fn crop_roi(
    frame: &Image,
    bbox: &BoundingBox,
    crop_factor: f64,
    config: &BackboneConfig,
) -> Result<Patch> {
    check_box(bbox)?;
    let side = 2.0 * target_crop_side(bbox, crop_factor);
    Ok(crop_square(
        frame,
        (bbox.cx, bbox.cy),
        side,
        config.roi_input,
    ))
}

/// Target crop resized to the target branch input.
pub fn crop_target(
    frame: &Image,
    bbox: &BoundingBox,
    crop_factor: f64,
    config: &BackboneConfig,
) -> Result<Patch> {
    check_box(bbox)?;
    let side = target_crop_side(bbox, crop_factor);
    Ok(crop_square(
        frame,
        (bbox.cx, bbox.cy),
        side,
        config.target_input,
    ))
}

fn check_box(bbox: &BoundingBox) -> Result<()> {
    if !(bbox.width > 0.0 && bbox.height > 0.0) {
        return Err(Error::DegenerateBox {
            width: bbox.width,
            height: bbox.height,
        });
    }
    Ok(())
}

/// Background branch input: the search patch with the predicted box interior
/// painted with the frame mean color. `bbox` is in patch pixel coordinates.
pub fn mask_background(roi: &Patch, bbox: &BoundingBox) -> Patch {
    let side = roi.side() as f64;
    let x0 = (bbox.cx - bbox.width / 2.0).clamp(0.0, side);
    let x1 = (bbox.cx + bbox.width / 2.0).clamp(0.0, side);
    let y0 = (bbox.cy - bbox.height / 2.0).clamp(0.0, side);
    let y1 = (bbox.cy + bbox.height / 2.0).clamp(0.0, side);
    let mut out = roi.clone();
    for i in 0..roi.side() {
        let yc = i as f64 + 0.5;
        if yc < y0 || yc > y1 {
            continue;
        }
        for j in 0..roi.side() {
            let xc = j as f64 + 0.5;
            if xc < x0 || xc > x1 {
                continue;
            }
            for k in 0..3 {
                out.data.set(i, j, k, roi.fill[k]);
            }
        }
    }
    out
}

/// Deterministic forward pass through the shared stack. The patch side must
/// match one of the two configured branch inputs.
pub fn extract(patch: &Patch, config: &BackboneConfig, weights: &BackboneWeights) -> Result<Tensor3> {
    if patch.side() != config.roi_input && patch.side() != config.target_input {
        return Err(Error::UnknownInputSize {
            got: patch.side(),
            roi: config.roi_input,
            target: config.target_input,
        });
    }
    forward(&patch.data, config, weights)
}

/// Forward pass on a raw tensor (any spatial size the stack admits). The
/// training tape reuses the per-layer primitives below, so the two paths
/// cannot drift apart.
pub fn forward(input: &Tensor3, config: &BackboneConfig, weights: &BackboneWeights) -> Result<Tensor3> {
    let mut x = input.clone();
    let mut conv_idx = 0;
    for spec in &config.layers {
        x = match *spec {
            LayerSpec::Conv {
                kh,
                kw,
                cout,
                stride,
                relu,
                ..
            } => {
                let w = &weights.convs[conv_idx];
                conv_idx += 1;
                let mut y = conv2d(&x, &w.kernel, &w.bias, kh, kw, cout, stride)?;
                if relu {
                    relu_inplace(&mut y);
                }
                y
            }
            LayerSpec::MaxPool { window, stride } => maxpool(&x, window, stride)?,
            LayerSpec::AvgPool { window, stride } => crate::tensor::avgpool(&x, window, stride)?,
        };
    }
    x.debug_check_finite("backbone::forward");
    Ok(x)
}

/// Valid convolution, kernel layout `[cout][ky][kx][cin]`.
pub fn conv2d(
    input: &Tensor3,
    kernel: &[f64],
    bias: &[f64],
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
) -> Result<Tensor3> {
    let (h, w, cin) = input.dims();
    if kernel.len() != kh * kw * cin * cout || bias.len() != cout {
        return Err(Error::LengthMismatch {
            op: "conv2d kernel",
            left: kernel.len(),
            right: kh * kw * cin * cout,
        });
    }
    if kh > h || kw > w {
        return Err(Error::WindowTooLarge {
            window: kh,
            height: h,
            width: w,
        });
    }
    let out_h = (h - kh) / stride + 1;
    let out_w = (w - kw) / stride + 1;
    let mut out = Tensor3::zeros(out_h, out_w, cout);
    let row_len = kw * cin;
    let in_data = input.data();
    let out_data = out.data_mut();
    for i in 0..out_h {
        for j in 0..out_w {
            let base = (i * out_w + j) * cout;
            out_data[base..base + cout].copy_from_slice(bias);
            for s in 0..kh {
                let in_start = ((i * stride + s) * w + j * stride) * cin;
                let in_row = &in_data[in_start..in_start + row_len];
                for oc in 0..cout {
                    let k_start = ((oc * kh + s) * kw) * cin;
                    out_data[base + oc] += math::dot(in_row, &kernel[k_start..k_start + row_len]);
                }
            }
        }
    }
    Ok(out)
}

pub fn relu_inplace(t: &mut Tensor3) {
    for v in t.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Per-channel max pooling.
pub fn maxpool(input: &Tensor3, window: usize, stride: usize) -> Result<Tensor3> {
    let (h, w, c) = input.dims();
    if window > h || window > w {
        return Err(Error::WindowTooLarge {
            window,
            height: h,
            width: w,
        });
    }
    let out_h = (h - window) / stride + 1;
    let out_w = (w - window) / stride + 1;
    let mut out = Tensor3::zeros(out_h, out_w, c);
    for i in 0..out_h {
        for j in 0..out_w {
            for k in 0..c {
                let mut best = f64::NEG_INFINITY;
                for s in 0..window {
                    for t in 0..window {
                        best = best.max(input.get(i * stride + s, j * stride + t, k));
                    }
                }
                out.set(i, j, k, best);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::xcorr_valid;
    use crate::weights::ModelWeights;

    fn frame_with_block(w: usize, h: usize, bx: usize, by: usize, side: usize) -> Image {
        let mut img = Image::new(w, h);
        img.fill([30, 30, 30]);
        for y in by..by + side {
            for x in bx..bx + side {
                // Checker texture so correlation peaks are sharp.
                let on = (x / 2 + y / 2) % 2 == 0;
                img.set_pixel(x, y, if on { [220, 40, 40] } else { [90, 200, 60] });
            }
        }
        img
    }

    #[test]
    fn preset_shapes() {
        let p = BackboneConfig::paper();
        assert_eq!((p.roi_feat, p.target_feat, p.channels), (22, 6, 256));
        assert_eq!(p.total_stride, 8);
        assert_eq!(p.map_side(), 17);
        let t = BackboneConfig::toy();
        assert_eq!((t.roi_feat, t.target_feat, t.channels), (10, 4, 16));
        assert_eq!(t.total_stride, 3);
        let u = BackboneConfig::micro();
        assert_eq!((u.roi_feat, u.target_feat, u.channels), (5, 2, 3));
    }

    #[test]
    fn crop_sides() {
        let b = BoundingBox::new(50.0, 50.0, 100.0, 100.0);
        assert!((target_crop_side(&b, 1.32) - 132.0).abs() < 1e-12);
    }

    #[test]
    fn paper_crop_shapes() {
        let cfg = BackboneConfig::paper();
        let frame = frame_with_block(400, 400, 150, 150, 60);
        let b = BoundingBox::new(180.0, 180.0, 60.0, 60.0);
        let roi = crop_roi(&frame, &b, 1.32, &cfg).unwrap();
        assert_eq!(roi.data.dims(), (255, 255, 3));
        let tgt = crop_target(&frame, &b, 1.32, &cfg).unwrap();
        assert_eq!(tgt.data.dims(), (127, 127, 3));
    }

    #[test]
    fn toy_target_crop_shape() {
        let cfg = BackboneConfig::toy();
        let frame = frame_with_block(96, 96, 40, 40, 16);
        let b = BoundingBox::new(48.0, 48.0, 16.0, 16.0);
        let tgt = crop_target(&frame, &b, 1.32, &cfg).unwrap();
        assert_eq!(tgt.data.dims(), (24, 24, 3));
    }

    #[test]
    fn centered_crop_uses_no_fill() {
        let cfg = BackboneConfig::toy();
        let mut frame = Image::new(200, 200);
        frame.fill([100, 100, 100]);
        let b = BoundingBox::new(100.0, 100.0, 20.0, 20.0);
        let roi = crop_roi(&frame, &b, 1.32, &cfg).unwrap();
        for v in roi.data.data() {
            assert!((*v - 100.0 / 255.0).abs() < 1e-9);
        }
    }

    #[test]
    fn corner_crop_fills_with_mean() {
        let cfg = BackboneConfig::toy();
        let frame = frame_with_block(96, 96, 4, 4, 16);
        let mean = frame.mean_color();
        let b = BoundingBox::new(0.0, 0.0, 16.0, 16.0);
        let roi = crop_roi(&frame, &b, 1.32, &cfg).unwrap();
        // The top-left output pixel samples entirely outside the frame.
        for k in 0..3 {
            assert!((roi.data.get(0, 0, k) - mean[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_box_is_rejected() {
        let cfg = BackboneConfig::toy();
        let frame = Image::new(64, 64);
        let b = BoundingBox::new(32.0, 32.0, 0.0, 10.0);
        assert!(matches!(
            crop_roi(&frame, &b, 1.32, &cfg),
            Err(Error::DegenerateBox { .. })
        ));
    }

    #[test]
    fn mask_covers_whole_patch() {
        let cfg = BackboneConfig::toy();
        let frame = frame_with_block(96, 96, 30, 30, 30);
        let b = BoundingBox::new(45.0, 45.0, 30.0, 30.0);
        let roi = crop_roi(&frame, &b, 1.32, &cfg).unwrap();
        let full = BoundingBox::new(20.0, 20.0, 1000.0, 1000.0);
        let masked = mask_background(&roi, &full);
        for (pos, fiber) in masked.data.data().chunks_exact(3).enumerate() {
            let _ = pos;
            for k in 0..3 {
                assert_eq!(fiber[k], roi.fill[k]);
            }
        }
    }

    #[test]
    fn mask_outside_leaves_patch_unchanged() {
        let cfg = BackboneConfig::toy();
        let frame = frame_with_block(96, 96, 30, 30, 30);
        let b = BoundingBox::new(45.0, 45.0, 30.0, 30.0);
        let roi = crop_roi(&frame, &b, 1.32, &cfg).unwrap();
        let outside = BoundingBox::new(-100.0, -100.0, 10.0, 10.0);
        let masked = mask_background(&roi, &outside);
        assert_eq!(masked.data, roi.data);
    }

    #[test]
    fn mask_interior_is_mean() {
        let cfg = BackboneConfig::toy();
        let frame = frame_with_block(96, 96, 30, 30, 30);
        let b = BoundingBox::new(45.0, 45.0, 30.0, 30.0);
        let roi = crop_roi(&frame, &b, 1.32, &cfg).unwrap();
        let inner = BoundingBox::new(20.0, 20.0, 10.0, 10.0);
        let masked = mask_background(&roi, &inner);
        assert_eq!(masked.data.fiber(20, 20), &roi.fill[..]);
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let cfg = BackboneConfig::toy();
        let w = crate::weights::BackboneWeights::zeros(&cfg);
        let frame = frame_with_block(96, 96, 40, 40, 16);
        let b = BoundingBox::new(48.0, 48.0, 16.0, 16.0);
        let tgt = crop_target(&frame, &b, 1.32, &cfg).unwrap();
        let f = extract(&tgt, &cfg, &w).unwrap();
        assert_eq!(f.dims(), (4, 4, 16));
        assert!(f.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn toy_feature_shapes() {
        let cfg = BackboneConfig::toy();
        let w = crate::weights::BackboneWeights::seeded(&cfg, 5);
        let frame = frame_with_block(96, 96, 40, 40, 16);
        let b = BoundingBox::new(48.0, 48.0, 16.0, 16.0);
        let roi = crop_roi(&frame, &b, 1.32, &cfg).unwrap();
        let tgt = crop_target(&frame, &b, 1.32, &cfg).unwrap();
        let f = extract(&roi, &cfg, &w).unwrap();
        let t = extract(&tgt, &cfg, &w).unwrap();
        assert_eq!(f.dims(), (10, 10, 16));
        assert_eq!(t.dims(), (4, 4, 16));
        // Shape contract against the attention map side.
        assert_eq!(f.height() - t.height() + 1, cfg.map_side());
    }

    #[test]
    fn unknown_input_size_is_rejected() {
        let cfg = BackboneConfig::toy();
        let w = crate::weights::BackboneWeights::seeded(&cfg, 5);
        let patch = Patch {
            data: Tensor3::zeros(13, 13, 3),
            fill: [0.0; 3],
        };
        assert!(matches!(
            extract(&patch, &cfg, &w),
            Err(Error::UnknownInputSize { .. })
        ));
    }

    #[test]
    fn weight_sharing_across_branches() {
        let cfg = BackboneConfig::micro();
        let model = ModelWeights::seeded(&crate::weights::ModelConfig::micro(), 2);
        let roi_patch = Patch {
            data: Tensor3::from_fn(7, 7, 3, |i, j, k| ((i + 2 * j + k) % 5) as f64 / 5.0),
            fill: [0.0; 3],
        };
        let tgt_patch = Patch {
            data: Tensor3::from_fn(4, 4, 3, |i, j, k| ((i + j + k) % 3) as f64 / 3.0),
            fill: [0.0; 3],
        };
        let f1 = extract(&roi_patch, &cfg, &model.backbone).unwrap();
        let t1 = extract(&tgt_patch, &cfg, &model.backbone).unwrap();
        let mut perturbed = model.backbone.clone();
        perturbed.convs[0].kernel[0] += 0.5;
        let f2 = extract(&roi_patch, &cfg, &perturbed).unwrap();
        let t2 = extract(&tgt_patch, &cfg, &perturbed).unwrap();
        assert_ne!(f1.data(), f2.data());
        assert_ne!(t1.data(), t2.data());
    }

    #[test]
    fn translation_by_total_stride_shifts_argmax_one_cell() {
        let cfg = BackboneConfig::toy();
        let w = crate::weights::BackboneWeights::seeded(&cfg, 11);
        let stride = cfg.total_stride;
        // A textured pattern sampled at patch coordinates; the shifted patch
        // reads the same pattern displaced by one total stride.
        let pattern = |x: i64, y: i64, k: usize| -> f64 {
            let v = ((x * 13 + y * 7 + k as i64 * 3) % 11) as f64 / 11.0;
            let blob = if (8..16).contains(&x) && (8..16).contains(&y) {
                0.6
            } else {
                0.0
            };
            0.2 * v + blob
        };
        let make = |dx: i64| {
            Patch {
                data: Tensor3::from_fn(cfg.roi_input, cfg.roi_input, 3, |i, j, k| {
                    pattern(j as i64 - dx, i as i64, k)
                }),
                fill: [0.0; 3],
            }
        };
        let template = Patch {
            data: Tensor3::from_fn(cfg.target_input, cfg.target_input, 3, |i, j, k| {
                pattern(j as i64 + 6, i as i64 + 6, k)
            }),
            fill: [0.0; 3],
        };
        let f0 = extract(&make(0), &cfg, &w).unwrap();
        let f1 = extract(&make(stride as i64), &cfg, &w).unwrap();
        let t = extract(&template, &cfg, &w).unwrap();
        let m0 = xcorr_valid(&f0, &t).unwrap();
        let m1 = xcorr_valid(&f1, &t).unwrap();
        let p0 = m0.argmax();
        let p1 = m1.argmax();
        assert_eq!(p1.0, p0.0);
        assert_eq!(p1.1, p0.1 + 1);
    }
}
