//! Deterministic synthetic sequences with exact ground truth.
//!
//! Scenarios cover the difficulty taxonomy the tracker is stressed on:
//! occlusion (partial or total), pixel-identical distractors, motion blur,
//! appearance change via hue rotation, plus static and linear-motion
//! baselines. Same scenario (seed included) renders bit-identical frames.
//! Targets carry texture (checker or noise) so correlation peaks stay sharp;
//! flat fills make them plateau.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::image::{rotate_hue, Image};
use crate::tensor::Tensor3;
use crate::tracker::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ScenarioKind {
    Static,
    LinearMotion,
    Occlusion,
    Distractor,
    Blur,
    AppearanceChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum TargetShape {
    Rect,
    Circle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Texture {
    Flat,
    Checker,
    Noise,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TargetSpec {
    pub shape: TargetShape,
    /// Square side (or circle diameter) in pixels.
    pub size: usize,
    pub color: [u8; 3],
    pub texture: Texture,
    /// Center position on frame 0.
    pub start: (f64, f64),
    /// Pixels per frame.
    pub velocity: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OccluderSpec {
    /// First frame (inclusive) the occluder is drawn.
    pub enter: usize,
    /// Last frame (inclusive).
    pub exit: usize,
    /// Covers the whole frame when set; otherwise a moving square.
    pub full_frame: bool,
    pub size: usize,
    pub color: [u8; 3],
    pub start: (f64, f64),
    pub velocity: (f64, f64),
}

/// A second instance rendered pixel-identically to the target.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Drifter {
    pub start: (f64, f64),
    pub velocity: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    #[cfg_attr(feature = "serde", serde(default = "default_background"))]
    pub background: [u8; 3],
    /// Per-pixel background noise amplitude in `[0, 1]`.
    #[cfg_attr(feature = "serde", serde(default = "default_noise"))]
    pub noise: f64,
    pub target: TargetSpec,
    #[cfg_attr(feature = "serde", serde(default))]
    pub occluder: Option<OccluderSpec>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub distractors: Vec<Drifter>,
    /// Context plinth drawn under each distractor (slightly larger filled
    /// square). The shapes themselves stay pixel-identical to the target;
    /// only this surrounding context tells them apart.
    #[cfg_attr(feature = "serde", serde(default))]
    pub distractor_halo: Option<[u8; 3]>,
    /// Sub-frame renders averaged per frame; 1 disables motion blur.
    #[cfg_attr(feature = "serde", serde(default = "default_blur_samples"))]
    pub blur_samples: usize,
    /// Hue rotation per frame in degrees (appearance change).
    #[cfg_attr(feature = "serde", serde(default))]
    pub hue_step: f64,
}

#[allow(dead_code)]
fn default_background() -> [u8; 3] {
    [24, 28, 36]
}
#[allow(dead_code)]
fn default_noise() -> f64 {
    0.02
}
#[allow(dead_code)]
fn default_blur_samples() -> usize {
    1
}

/// Exact truth for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTruth {
    pub bbox: BoundingBox,
    pub occluded: bool,
}

impl Scenario {
    fn base(kind: ScenarioKind, side: usize, seed: u64) -> Self {
        Self {
            kind,
            frames: 50,
            width: side,
            height: side,
            seed,
            background: [24, 28, 36],
            noise: 0.02,
            target: TargetSpec {
                shape: TargetShape::Rect,
                size: 16,
                color: [210, 70, 60],
                texture: Texture::Checker,
                start: (side as f64 / 2.0, side as f64 / 2.0),
                velocity: (0.0, 0.0),
            },
            occluder: None,
            distractors: Vec::new(),
            distractor_halo: None,
            blur_samples: 1,
            hue_step: 0.0,
        }
    }

    pub fn static_scene(side: usize, seed: u64) -> Self {
        Self::base(ScenarioKind::Static, side, seed)
    }

    pub fn linear(side: usize, velocity: (f64, f64), seed: u64) -> Self {
        let mut s = Self::base(ScenarioKind::LinearMotion, side, seed);
        s.kind = ScenarioKind::LinearMotion;
        s.target.velocity = velocity;
        // Cap the frame count so the whole trajectory stays inside the
        // frame with a margin, then center it.
        let margin = s.target.size as f64 / 2.0 + 2.0;
        let span = side as f64 - 2.0 * margin;
        let vmax = crate::math::abs(velocity.0).max(crate::math::abs(velocity.1));
        if vmax > 0.0 {
            let fit = (span / vmax) as usize + 1;
            s.frames = s.frames.min(fit.max(2));
        }
        s.recenter();
        s
    }

    /// Change the frame count, keeping a moving trajectory centered.
    pub fn with_frames(mut self, frames: usize) -> Self {
        self.frames = frames;
        self.recenter();
        self
    }

    fn recenter(&mut self) {
        let travel = self.frames.saturating_sub(1) as f64;
        self.target.start = (
            self.width as f64 / 2.0 - self.target.velocity.0 * travel / 2.0,
            self.height as f64 / 2.0 - self.target.velocity.1 * travel / 2.0,
        );
    }

    /// Full-frame blackout over `[enter, exit]`, static target.
    pub fn occlusion_blackout(side: usize, enter: usize, exit: usize, seed: u64) -> Self {
        let mut s = Self::base(ScenarioKind::Occlusion, side, seed);
        s.occluder = Some(OccluderSpec {
            enter,
            exit,
            full_frame: true,
            size: side,
            color: [0, 0, 0],
            start: (side as f64 / 2.0, side as f64 / 2.0),
            velocity: (0.0, 0.0),
        });
        s
    }

    /// A pixel-identical distractor drifting past a slowly moving target,
    /// with the target briefly occluded mid-sequence. Only the distractor's
    /// surrounding plinth tells the two apart, which is exactly what the
    /// background memory can exploit and a foreground-only matcher cannot.
    pub fn distractor_occlusion(side: usize, seed: u64) -> Self {
        let mut s = Self::base(ScenarioKind::Distractor, side, seed);
        s.frames = 60;
        s.target.velocity = (0.4, 0.0);
        s.target.start = (side as f64 * 0.35, side as f64 * 0.5);
        // The distractor approaches from the right and passes near the
        // target around the occlusion window.
        s.distractors.push(Drifter {
            start: (side as f64 * 0.80, side as f64 * 0.38),
            velocity: (-0.55, 0.12),
        });
        s.distractor_halo = Some([185, 185, 70]);
        // Featureless occluder big enough to blank the whole search region,
        // so the freeze mechanism (not luck) carries every variant through.
        s.occluder = Some(OccluderSpec {
            enter: 24,
            exit: 32,
            full_frame: false,
            size: (s.target.size as f64 * 3.5) as usize,
            color: [70, 70, 78],
            start: (side as f64 * 0.35 + 0.4 * 24.0, side as f64 * 0.5),
            velocity: (0.4, 0.0),
        });
        s
    }

    pub fn blur(side: usize, velocity: (f64, f64), seed: u64) -> Self {
        let mut s = Self::linear(side, velocity, seed);
        s.kind = ScenarioKind::Blur;
        s.blur_samples = 4;
        s
    }

    pub fn appearance_change(side: usize, hue_step: f64, seed: u64) -> Self {
        let mut s = Self::base(ScenarioKind::AppearanceChange, side, seed);
        s.kind = ScenarioKind::AppearanceChange;
        s.hue_step = hue_step;
        s
    }
}

/// Per-instance texture tile, generated once per scenario so the target and
/// every distractor are pixel-identical.
struct TextureTile {
    size: usize,
    values: Vec<f64>,
}

impl TextureTile {
    fn new(scenario: &Scenario) -> Self {
        let size = scenario.target.size.max(1);
        let mut rng = ChaCha12Rng::seed_from_u64(scenario.seed ^ 0x7478_7572);
        let values = (0..size * size).map(|_| rng.random::<f64>()).collect();
        Self { size, values }
    }

    /// Local-coordinate modulation factor in `[0.5, 1.5]`-ish.
    fn factor(&self, texture: Texture, lx: usize, ly: usize) -> f64 {
        match texture {
            Texture::Flat => 1.0,
            Texture::Checker => {
                if (lx / 2 + ly / 2).is_multiple_of(2) {
                    1.35
                } else {
                    0.55
                }
            }
            Texture::Noise => 0.5 + self.values[(ly % self.size) * self.size + lx % self.size],
        }
    }
}

fn shade(color: [u8; 3], factor: f64) -> [u8; 3] {
    let mut out = [0u8; 3];
    for k in 0..3 {
        out[k] = ((color[k] as f64 * factor) as i64).clamp(0, 255) as u8;
    }
    out
}

fn draw_instance(
    img: &mut Image,
    spec: &TargetSpec,
    tile: &TextureTile,
    center: (f64, f64),
    color: [u8; 3],
) {
    let size = spec.size as i64;
    let x0 = crate::math::round(center.0 - spec.size as f64 / 2.0) as i64;
    let y0 = crate::math::round(center.1 - spec.size as f64 / 2.0) as i64;
    let r = spec.size as f64 / 2.0;
    for ly in 0..size {
        for lx in 0..size {
            let x = x0 + lx;
            let y = y0 + ly;
            if x < 0 || y < 0 || x >= img.width() as i64 || y >= img.height() as i64 {
                continue;
            }
            if spec.shape == TargetShape::Circle {
                let dx = lx as f64 + 0.5 - r;
                let dy = ly as f64 + 0.5 - r;
                if dx * dx + dy * dy > r * r {
                    continue;
                }
            }
            let f = tile.factor(spec.texture, lx as usize, ly as usize);
            img.set_pixel(x as usize, y as usize, shade(color, f));
        }
    }
}

fn render_once(scenario: &Scenario, tile: &TextureTile, t: usize, subshift: f64) -> Image {
    let mut img = Image::new(scenario.width, scenario.height);
    img.fill(scenario.background);
    if scenario.noise > 0.0 {
        let mut rng = ChaCha12Rng::seed_from_u64(
            scenario
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(t as u64),
        );
        let amp = scenario.noise;
        for y in 0..scenario.height {
            for x in 0..scenario.width {
                let px = img.pixel(x, y);
                let n = (rng.random::<f64>() - 0.5) * 2.0 * amp * 255.0;
                let mut out = [0u8; 3];
                for k in 0..3 {
                    out[k] = ((px[k] as f64 + n) as i64).clamp(0, 255) as u8;
                }
                img.set_pixel(x, y, out);
            }
        }
    }
    let color = if scenario.hue_step != 0.0 {
        rotate_hue(scenario.target.color, scenario.hue_step * t as f64)
    } else {
        scenario.target.color
    };
    let pos = |start: (f64, f64), vel: (f64, f64)| {
        (
            start.0 + vel.0 * (t as f64 - subshift),
            start.1 + vel.1 * (t as f64 - subshift),
        )
    };
    for d in &scenario.distractors {
        let p = pos(d.start, d.velocity);
        if let Some(halo) = scenario.distractor_halo {
            let pad = 4i64;
            let s = scenario.target.size as i64 + 2 * pad;
            img.fill_rect(
                crate::math::round(p.0 - s as f64 / 2.0) as i64,
                crate::math::round(p.1 - s as f64 / 2.0) as i64,
                s,
                s,
                halo,
            );
        }
        draw_instance(&mut img, &scenario.target, tile, p, color);
    }
    draw_instance(
        &mut img,
        &scenario.target,
        tile,
        pos(scenario.target.start, scenario.target.velocity),
        color,
    );
    if let Some(occ) = &scenario.occluder {
        if t >= occ.enter && t <= occ.exit {
            if occ.full_frame {
                img.fill(occ.color);
            } else {
                let c = pos(occ.start, occ.velocity);
                let s = occ.size as i64;
                img.fill_rect(
                    crate::math::round(c.0 - occ.size as f64 / 2.0) as i64,
                    crate::math::round(c.1 - occ.size as f64 / 2.0) as i64,
                    s,
                    s,
                    occ.color,
                );
            }
        }
    }
    img
}

/// Does the occluder fully cover the target box on frame `t`?
fn covers(occ: &OccluderSpec, target: &BoundingBox, t: usize) -> bool {
    if occ.full_frame {
        return true;
    }
    let cx = occ.start.0 + occ.velocity.0 * t as f64;
    let cy = occ.start.1 + occ.velocity.1 * t as f64;
    let half = occ.size as f64 / 2.0;
    let (tx0, ty0, tw, th) = target.to_ltwh();
    tx0 >= cx - half && ty0 >= cy - half && tx0 + tw <= cx + half && ty0 + th <= cy + half
}

/// Render the whole scenario. Pure in the scenario (seed included).
pub fn generate(scenario: &Scenario) -> Result<(Vec<Image>, Vec<FrameTruth>)> {
    if scenario.target.size >= scenario.width || scenario.target.size >= scenario.height {
        return Err(Error::InvalidScenario(format!(
            "target size {} does not fit a {}x{} frame",
            scenario.target.size, scenario.width, scenario.height
        )));
    }
    if scenario.frames == 0 {
        return Err(Error::InvalidScenario(String::from("no frames")));
    }
    if scenario.blur_samples == 0 {
        return Err(Error::InvalidScenario(String::from("blur_samples must be >= 1")));
    }
    let tile = TextureTile::new(scenario);
    let mut frames = Vec::with_capacity(scenario.frames);
    let mut truth = Vec::with_capacity(scenario.frames);
    for t in 0..scenario.frames {
        let img = if scenario.blur_samples == 1 {
            render_once(scenario, &tile, t, 0.0)
        } else {
            // Box filter along the velocity: average renders at trailing
            // sub-frame positions.
            let s = scenario.blur_samples;
            let mut acc = alloc::vec![0u32; scenario.width * scenario.height * 3];
            for k in 0..s {
                let sub = render_once(scenario, &tile, t, k as f64 / s as f64);
                for (a, v) in acc.iter_mut().zip(sub.data()) {
                    *a += *v as u32;
                }
            }
            let data: Vec<u8> = acc.iter().map(|a| (*a / s as u32) as u8).collect();
            Image::from_raw(scenario.width, scenario.height, data).unwrap()
        };
        let bbox = BoundingBox::new(
            scenario.target.start.0 + scenario.target.velocity.0 * t as f64,
            scenario.target.start.1 + scenario.target.velocity.1 * t as f64,
            scenario.target.size as f64,
            scenario.target.size as f64,
        );
        let occluded = scenario
            .occluder
            .as_ref()
            .map(|o| t >= o.enter && t <= o.exit && covers(o, &bbox, t))
            .unwrap_or(false);
        frames.push(img);
        truth.push(FrameTruth { bbox, occluded });
    }
    Ok((frames, truth))
}

/// Draw box borders over a frame copy; later entries win shared pixels.
pub fn render_overlay(frame: &Image, boxes: &[(BoundingBox, [u8; 3])]) -> Image {
    let mut out = frame.clone();
    for (bbox, color) in boxes {
        let (x, y, w, h) = bbox.to_ltwh();
        out.draw_rect_border(
            crate::math::round(x) as i64,
            crate::math::round(y) as i64,
            crate::math::round(w) as i64,
            crate::math::round(h) as i64,
            *color,
        );
    }
    out
}

/// One ground-truth line: `x,y,w,h` of the left-top box, `,occ` appended on
/// occluded frames.
pub fn format_truth_line(t: &FrameTruth) -> String {
    let (x, y, w, h) = t.bbox.to_ltwh();
    if t.occluded {
        format!("{x},{y},{w},{h},occ")
    } else {
        format!("{x},{y},{w},{h}")
    }
}

pub fn parse_truth_line(line: &str) -> Result<FrameTruth> {
    let parts: Vec<&str> = line.trim().split(',').collect();
    if parts.len() != 4 && parts.len() != 5 {
        return Err(Error::InvalidScenario(format!(
            "ground-truth line needs 4 fields (+ optional `occ`), got {}",
            parts.len()
        )));
    }
    let mut vals = [0.0f64; 4];
    for (i, p) in parts[..4].iter().enumerate() {
        vals[i] = p
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::InvalidScenario(format!("bad number `{p}` in ground truth")))?;
    }
    let occluded = match parts.get(4) {
        None => false,
        Some(tag) if tag.trim() == "occ" => true,
        Some(tag) => {
            return Err(Error::InvalidScenario(format!(
                "unknown ground-truth flag `{tag}`"
            )))
        }
    };
    Ok(FrameTruth {
        bbox: BoundingBox::from_ltwh(vals[0], vals[1], vals[2], vals[3]),
        occluded,
    })
}

/// Constructed-features fixture for the background-suppression check.
///
/// Channel 0 of the search volume carries the target pattern at
/// `target_offset` and a brighter copy at `distractor_offset`; channel 1
/// marks the distractor's context. The foreground template sees only
/// channel 0, so on its own it prefers the brighter distractor; the
/// background template holds the channel-1 context, and the subtraction
/// flips the decision to the target. All values are fixed by the seed.
pub struct SuppressionCase {
    pub search: Tensor3,
    pub fg_template: Tensor3,
    pub bg_template: Tensor3,
    pub target_offset: (usize, usize),
    pub distractor_offset: (usize, usize),
}

pub fn suppression_case(seed: u64) -> SuppressionCase {
    let m = 3usize;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let pattern: Vec<f64> = (0..m * m).map(|_| 0.5 + rng.random::<f64>()).collect();
    let target_offset = (2usize, 1usize);
    let distractor_offset = (2usize, 7usize);
    let mut search = Tensor3::zeros(12, 12, 2);
    for s in 0..m {
        for t in 0..m {
            let v = pattern[s * m + t];
            search.set(target_offset.0 + s, target_offset.1 + t, 0, v);
            // The distractor is slightly brighter, so the foreground-only
            // response strictly prefers it.
            search.set(distractor_offset.0 + s, distractor_offset.1 + t, 0, 1.05 * v);
            // Context marker only the distractor carries.
            search.set(distractor_offset.0 + s, distractor_offset.1 + t, 1, v);
        }
    }
    let fg_template = Tensor3::from_fn(m, m, 2, |s, t, k| if k == 0 { pattern[s * m + t] } else { 0.0 });
    let bg_template = Tensor3::from_fn(m, m, 2, |s, t, k| if k == 1 { pattern[s * m + t] } else { 0.0 });
    SuppressionCase {
        search,
        fg_template,
        bg_template,
        target_offset,
        distractor_offset,
    }
}
