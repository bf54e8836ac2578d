//! The per-frame tracking pipeline.
//!
//! Each step crops the search region around the current box, extracts
//! features, attends against the previous frame's foreground read, advances
//! both controllers, reads both memories, forms the suppressed template
//! `M_bar = M - M_back`, correlates it with the search feature, penalizes
//! large displacements with a cosine window, and localizes the peak on the
//! bicubically upsampled response. Scale is searched over three crop
//! candidates and exponentially smoothed. A hysteresis automaton on the
//! windowed peak value (against the running median of recent peaks) freezes
//! the box, the scale, and both memories during total occlusion.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::attention::{self, AttentionOutput};
use crate::backbone;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math;
use crate::memory::{self, LstmState, MemoryBlock};
use crate::tensor::{avgpool, upsample_bicubic, xcorr_valid, Matrix2, Tensor3};
use crate::weights::{ModelConfig, ModelWeights};

/// Axis-aligned box, center + size, real-valued frame pixels.
/// The aspect ratio is fixed at tracker initialization and never adapted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, width: f64, height: f64) -> Self {
        Self {
            cx,
            cy,
            width,
            height,
        }
    }

    /// From left-top corner + size (the ground-truth file convention).
    pub fn from_ltwh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self {
            cx: x + w / 2.0,
            cy: y + h / 2.0,
            width: w,
            height: h,
        }
    }

    pub fn to_ltwh(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.width / 2.0,
            self.cy - self.height / 2.0,
            self.width,
            self.height,
        )
    }

    pub fn aspect(&self) -> f64 {
        self.width / self.height
    }
}

/// Which part of the model to switch off for controlled comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    None,
    /// Background memory off: the heat map uses the foreground template only.
    NoBgMemory,
    /// Attention off: the controller input is the uniform mean over positions.
    NoAttention,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Exponent on the multiplicative cosine window.
    pub window_exponent: f64,
    /// Target crop side as a multiple of sqrt(box area).
    pub crop_factor: f64,
    /// Exponential smoothing factor for scale updates.
    pub scale_alpha: f64,
    /// Response upsampling factor.
    pub upsample: usize,
    /// Occlusion enter threshold: peak below `enter * median` freezes.
    pub occlusion_enter: f64,
    /// Occlusion exit threshold: peak at or above `exit * median` resumes.
    pub occlusion_exit: f64,
    /// Number of recent (non-occluded) peaks the median runs over.
    pub peak_history: usize,
    /// Crop-side multipliers searched per frame for scale estimation.
    pub scale_candidates: [f64; 3],
    /// Re-initialize memories and controllers from the first frame when
    /// recovering from occlusion, instead of resuming the frozen state.
    pub reinit_on_recovery: bool,
    pub ablation: Ablation,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            window_exponent: 0.27,
            crop_factor: 1.32,
            scale_alpha: 0.6,
            upsample: 16,
            occlusion_enter: 0.4,
            occlusion_exit: 0.6,
            peak_history: 10,
            scale_candidates: [0.964, 1.0, 1.0375],
            reinit_on_recovery: false,
            ablation: Ablation::None,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_exponent > 0.0
            && self.crop_factor > 0.0
            && self.scale_alpha >= 0.0
            && self.upsample >= 1
            && self.occlusion_enter > 0.0
            && self.peak_history >= 1
            && self.scale_candidates.iter().all(|c| *c > 0.0))
        {
            return Err(Error::InvalidConfig(alloc::format!(
                "tracker configuration values must be positive: {self:?}"
            )));
        }
        if self.occlusion_exit < self.occlusion_enter {
            return Err(Error::InvalidConfig(alloc::format!(
                "occlusion exit threshold {} below enter threshold {}",
                self.occlusion_exit,
                self.occlusion_enter
            )));
        }
        Ok(())
    }
}

/// Geometry linking a response cell to frame pixels: which crop the feature
/// came from, how it was resized, and where it was centered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropGeometry {
    pub crop_side: f64,
    pub input_side: usize,
    pub total_stride: usize,
    pub center: (f64, f64),
}

impl CropGeometry {
    /// Frame pixels per response cell.
    pub fn pixels_per_cell(&self) -> f64 {
        self.total_stride as f64 * self.crop_side / self.input_side as f64
    }

    /// Map fractional response-cell coordinates to frame pixels.
    pub fn cell_to_frame(&self, map_side: usize, cell: (f64, f64)) -> (f64, f64) {
        let mid = (map_side as f64 - 1.0) / 2.0;
        let ppc = self.pixels_per_cell();
        (
            self.center.0 + (cell.1 - mid) * ppc,
            self.center.1 + (cell.0 - mid) * ppc,
        )
    }

    /// Map a frame position to fractional response-cell coordinates
    /// (row, col); the inverse of [`Self::cell_to_frame`].
    pub fn frame_to_cell(&self, map_side: usize, pos: (f64, f64)) -> (f64, f64) {
        let mid = (map_side as f64 - 1.0) / 2.0;
        let ppc = self.pixels_per_cell();
        (
            mid + (pos.1 - self.center.1) / ppc,
            mid + (pos.0 - self.center.0) / ppc,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatMapResult {
    /// Raw correlation response.
    pub raw: Matrix2,
    /// Min-max normalized response times the powered cosine window.
    pub windowed: Matrix2,
    /// Bicubic upsampling of the windowed map.
    pub upsampled: Matrix2,
    /// Max of the windowed map; the occlusion detector's signal.
    pub peak_value: f64,
    /// Peak location in fractional response cells, from the upsampled map.
    pub peak_cell: (f64, f64),
    /// Peak location in frame pixels.
    pub peak_px: (f64, f64),
}

/// `M_bar = M - M_back`, elementwise.
pub fn subtract_memories(m_fg: &Tensor3, m_bg: &Tensor3) -> Result<Tensor3> {
    m_fg.sub(m_bg)
}

/// Exponential scale smoothing `s = (1 - alpha) * s_prev + alpha * s_new`.
pub fn update_scale(s_prev: f64, s_new: f64, alpha: f64) -> Result<f64> {
    if !(s_prev > 0.0 && s_new > 0.0) {
        return Err(Error::InvalidConfig(alloc::format!(
            "scales must be positive, got {s_prev} and {s_new}"
        )));
    }
    Ok((1.0 - alpha) * s_prev + alpha * s_new)
}

/// 1-D Hann window of length `n` (all ones for n = 1).
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return alloc::vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 * (1.0 - math::cos(2.0 * core::f64::consts::PI * i as f64 / (n - 1) as f64)))
        .collect()
}

/// Outer-product Hann window raised to `exponent`.
pub fn cosine_window(side: usize, exponent: f64) -> Matrix2 {
    let h = hann(side);
    Matrix2::from_fn(side, side, |i, j| math::powf(h[i] * h[j], exponent))
}

/// Argmax with ties resolved toward the map center, so a flat response
/// localizes at the previous position instead of the scan origin.
fn argmax_center_tiebreak(m: &Matrix2) -> (usize, usize) {
    let max = m.max();
    let (cr, cc) = ((m.rows() as f64 - 1.0) / 2.0, (m.cols() as f64 - 1.0) / 2.0);
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if m.get(i, j) == max {
                let d = (i as f64 - cr) * (i as f64 - cr) + (j as f64 - cc) * (j as f64 - cc);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
    }
    let (_, i, j) = best.expect("matrix is non-empty");
    (i, j)
}

/// Correlate, window, upsample, and map the peak back to frame pixels.
///
/// The window is centered on the map center, which is the previous box
/// position because the crop is centered there. The raw response is min-max
/// normalized before the multiplicative window, so a degenerate (constant)
/// response yields peak value 0 and, via the centered tie-break, a peak at
/// the previous position.
pub fn localize(
    f: &Tensor3,
    m_bar: &Tensor3,
    geom: &CropGeometry,
    cfg: &TrackerConfig,
) -> Result<HeatMapResult> {
    let raw = xcorr_valid(f, m_bar)?;
    debug_assert_eq!(raw.rows(), raw.cols(), "square maps expected");
    let side = raw.rows();
    let window = cosine_window(side, cfg.window_exponent);
    let windowed = raw.normalize_minmax().hadamard(&window)?;
    let upsampled = upsample_bicubic(&windowed, cfg.upsample);
    let peak_value = windowed.max();
    let (pi, pj) = argmax_center_tiebreak(&upsampled);
    let u = cfg.upsample as f64;
    let peak_cell = ((pi as f64 + 0.5) / u - 0.5, (pj as f64 + 0.5) / u - 0.5);
    let peak_px = geom.cell_to_frame(side, peak_cell);
    Ok(HeatMapResult {
        raw,
        windowed,
        upsampled,
        peak_value,
        peak_cell,
        peak_px,
    })
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
fn median(values: &[f64]) -> f64 {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Hysteresis automaton on the windowed peak value. With no history yet the
/// tracker is never considered occluded. Entering requires the peak to fall
/// below `enter * median`; leaving requires it to climb back to
/// `exit * median` (`exit >= enter`).
pub fn occlusion_decision(
    peak: f64,
    history: &[f64],
    currently_occluded: bool,
    cfg: &TrackerConfig,
) -> bool {
    if history.is_empty() {
        return false;
    }
    let med = median(history);
    if currently_occluded {
        peak < cfg.occlusion_exit * med
    } else {
        peak < cfg.occlusion_enter * med
    }
}

/// Pool an `n x n x c` background feature down to the `m x m x c` template
/// shape, with window and stride chosen to land exactly on `m`.
pub fn pool_to_template(feature: &Tensor3, m: usize) -> Result<Tensor3> {
    let n = feature.height();
    if n < m {
        return Err(Error::ShapeMismatch {
            op: "pool_to_template",
            left: feature.dims(),
            right: (m, m, feature.channels()),
        });
    }
    if n == m {
        return Ok(feature.clone());
    }
    let stride = n / m;
    let window = n - (m - 1) * stride;
    let pooled = avgpool(feature, window, stride)?;
    debug_assert_eq!(pooled.height(), m);
    Ok(pooled)
}

/// Everything a step returns besides the mutated state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub bbox: BoundingBox,
    pub heat: HeatMapResult,
    /// Attention scores for this frame (uniform under the no-attention
    /// ablation).
    pub attention: Matrix2,
    pub occluded: bool,
}

/// Full tracking state for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    center: (f64, f64),
    base_width: f64,
    base_height: f64,
    pub scale: f64,
    pub fg_mem: MemoryBlock,
    pub bg_mem: MemoryBlock,
    pub fg_lstm: LstmState,
    pub bg_lstm: LstmState,
    /// The template used by attention next frame: the residual-mixed
    /// foreground read of this frame (the first-frame feature initially).
    pub last_fg_read: Tensor3,
    /// First-frame target feature; the residual template's base and the
    /// recovery snapshot.
    pub initial_template: Tensor3,
    initial_bg_template: Tensor3,
    initial_fg_lstm: LstmState,
    initial_bg_lstm: LstmState,
    pub occluded: bool,
    pub frame_index: usize,
    peak_history: VecDeque<f64>,
    aspect: f64,
}

impl TrackerState {
    /// Extract the first-frame features, fill both memories with them, and
    /// initialize both controllers.
    pub fn init(
        frame: &Image,
        bbox: BoundingBox,
        weights: &ModelWeights,
        mc: &ModelConfig,
        tc: &TrackerConfig,
    ) -> Result<Self> {
        tc.validate()?;
        if !(bbox.width > 0.0 && bbox.height > 0.0) {
            return Err(Error::DegenerateBox {
                width: bbox.width,
                height: bbox.height,
            });
        }
        let bb = &mc.backbone;
        let target_patch = backbone::crop_target(frame, &bbox, tc.crop_factor, bb)?;
        let f0 = backbone::extract(&target_patch, bb, &weights.backbone)?;
        let bg0 = Self::background_template(frame, &bbox, weights, mc, tc)?;
        let fg_lstm = memory::controller_init(&f0, &weights.fg);
        let bg_lstm = memory::controller_init(&bg0, &weights.bg);
        Ok(Self {
            center: (bbox.cx, bbox.cy),
            base_width: bbox.width,
            base_height: bbox.height,
            scale: 1.0,
            fg_mem: MemoryBlock::filled(mc.slots, f0.clone()),
            bg_mem: MemoryBlock::filled(mc.slots, bg0.clone()),
            fg_lstm: fg_lstm.clone(),
            bg_lstm: bg_lstm.clone(),
            last_fg_read: f0.clone(),
            initial_template: f0,
            initial_bg_template: bg0,
            initial_fg_lstm: fg_lstm,
            initial_bg_lstm: bg_lstm,
            occluded: false,
            frame_index: 0,
            peak_history: VecDeque::new(),
            aspect: bbox.width / bbox.height,
        })
    }

    /// Current box: the initial size scaled by `scale`, aspect untouched.
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(
            self.center.0,
            self.center.1,
            self.base_width * self.scale,
            self.base_height * self.scale,
        )
    }

    pub fn aspect(&self) -> f64 {
        self.aspect
    }

    pub fn peak_history(&self) -> impl Iterator<Item = &f64> {
        self.peak_history.iter()
    }

    /// The masked-search background feature pooled to template shape.
    fn background_template(
        frame: &Image,
        bbox: &BoundingBox,
        weights: &ModelWeights,
        mc: &ModelConfig,
        tc: &TrackerConfig,
    ) -> Result<Tensor3> {
        let bb = &mc.backbone;
        let roi = backbone::crop_roi(frame, bbox, tc.crop_factor, bb)?;
        let crop_side = 2.0 * backbone::target_crop_side(bbox, tc.crop_factor);
        let px = bb.roi_input as f64 / crop_side;
        let box_in_roi = BoundingBox::new(
            bb.roi_input as f64 / 2.0,
            bb.roi_input as f64 / 2.0,
            bbox.width * px,
            bbox.height * px,
        );
        let masked = backbone::mask_background(&roi, &box_in_roi);
        let feat = backbone::forward(&masked.data, bb, &weights.backbone)?;
        pool_to_template(&feat, bb.target_feat)
    }

    /// Advance one frame.
    pub fn step(
        &mut self,
        frame: &Image,
        weights: &ModelWeights,
        mc: &ModelConfig,
        tc: &TrackerConfig,
    ) -> Result<StepOutput> {
        let bb = &mc.backbone;
        let bbox = self.bbox();
        let base_crop = 2.0 * backbone::target_crop_side(&bbox, tc.crop_factor);

        // Unit-scale pass drives attention, the controllers, and the reads.
        let roi = backbone::crop_square(frame, self.center, base_crop, bb.roi_input);
        let f = backbone::forward(&roi.data, bb, &weights.backbone)?;
        let att: AttentionOutput = match tc.ablation {
            Ablation::NoAttention => {
                attention::attend_uniform(&f, bb.target_feat, bb.target_feat)?
            }
            _ => attention::attend(&f, &self.last_fg_read)?,
        };
        let fg_next = memory::lstm_step(&self.fg_lstm, att.attended.data(), &weights.fg.lstm)?;
        let fg_read = self.fg_mem.read_shared(&fg_next, &weights.fg.read_key)?;
        let gate = memory::residual_gate(&fg_next, &weights.fg.residual_gate);
        let m_tpl = memory::residual_template(&self.initial_template, &fg_read.template, &gate)?;

        let (bg_next, bg_read) = if tc.ablation == Ablation::NoBgMemory {
            (self.bg_lstm.clone(), None)
        } else {
            let bg_in = att.pooled.global_avg_per_channel();
            let bg_next = memory::lstm_step(&self.bg_lstm, &bg_in, &weights.bg.lstm)?;
            let bg_read = self.bg_mem.read_shared(&bg_next, &weights.bg.read_key)?;
            (bg_next, Some(bg_read))
        };
        let m_bar = match &bg_read {
            Some(r) => subtract_memories(&m_tpl, &r.template)?,
            None => m_tpl.clone(),
        };

        // Scale search: same template, three crops. Candidates are tried
        // nearest-to-unity first so exact peak ties keep the current scale.
        let mut order: Vec<usize> = (0..tc.scale_candidates.len()).collect();
        order.sort_by(|a, b| {
            math::abs(tc.scale_candidates[*a] - 1.0)
                .total_cmp(&math::abs(tc.scale_candidates[*b] - 1.0))
        });
        let mut best: Option<(f64, HeatMapResult)> = None;
        for idx in order {
            let cand = tc.scale_candidates[idx];
            let crop_side = base_crop * cand;
            let geom = CropGeometry {
                crop_side,
                input_side: bb.roi_input,
                total_stride: bb.total_stride,
                center: self.center,
            };
            let heat = if (cand - 1.0).abs() < 1e-12 {
                localize(&f, &m_bar, &geom, tc)?
            } else {
                let patch = backbone::crop_square(frame, self.center, crop_side, bb.roi_input);
                let fc = backbone::forward(&patch.data, bb, &weights.backbone)?;
                localize(&fc, &m_bar, &geom, tc)?
            };
            let better = match &best {
                None => true,
                Some((_, b)) => heat.peak_value > b.peak_value,
            };
            if better {
                best = Some((cand, heat));
            }
        }
        let (scale_cand, heat) = best.expect("at least one scale candidate");

        let history: Vec<f64> = self.peak_history.iter().copied().collect();
        let now_occluded = occlusion_decision(heat.peak_value, &history, self.occluded, tc);

        let mut reinitialized = false;
        if now_occluded {
            // Frozen: box, scale, memories, and peak history stay put.
            self.occluded = true;
        } else {
            if self.occluded && tc.reinit_on_recovery {
                // Restart from the first-frame state: memories refilled
                // (then written with the re-appeared target below), and the
                // controllers resume from their initial states next frame.
                self.fg_mem = MemoryBlock::filled(mc.slots, self.initial_template.clone());
                self.bg_mem = MemoryBlock::filled(mc.slots, self.initial_bg_template.clone());
                reinitialized = true;
            }
            self.occluded = false;
            self.center = (
                heat.peak_px.0.clamp(0.0, frame.width() as f64),
                heat.peak_px.1.clamp(0.0, frame.height() as f64),
            );
            let s_new = self.scale * scale_cand;
            self.scale = update_scale(self.scale, s_new, tc.scale_alpha)?;

            // Reads now count as accesses; frozen frames leave stamps alone.
            self.fg_mem.touch(fg_read.argmax);
            if let Some(r) = &bg_read {
                self.bg_mem.touch(r.argmax);
            }

            let new_box = self.bbox();
            let target_patch = backbone::crop_target(frame, &new_box, tc.crop_factor, bb)?;
            let f_fore = backbone::extract(&target_patch, bb, &weights.backbone)?;
            memory::write(
                &mut self.fg_mem,
                &fg_next,
                &weights.fg.write_gate,
                &f_fore,
                &fg_read.weights,
            )?;
            if let Some(r) = &bg_read {
                let bg_tpl = Self::background_template(frame, &new_box, weights, mc, tc)?;
                memory::write(
                    &mut self.bg_mem,
                    &bg_next,
                    &weights.bg.write_gate,
                    &bg_tpl,
                    &r.weights,
                )?;
            }

            self.peak_history.push_back(heat.peak_value);
            while self.peak_history.len() > tc.peak_history {
                self.peak_history.pop_front();
            }
        }

        if reinitialized {
            self.fg_lstm = self.initial_fg_lstm.clone();
            self.bg_lstm = self.initial_bg_lstm.clone();
            self.last_fg_read = self.initial_template.clone();
        } else {
            self.fg_lstm = fg_next;
            self.bg_lstm = bg_next;
            self.last_fg_read = m_tpl;
        }
        self.frame_index += 1;

        Ok(StepOutput {
            bbox: self.bbox(),
            heat,
            attention: att.scores,
            occluded: now_occluded,
        })
    }
}
