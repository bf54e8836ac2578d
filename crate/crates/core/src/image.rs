//! In-memory RGB frames and the sampling primitives the branches need:
//! square crops with bilinear resampling, mean-color fill for out-of-frame
//! taps, and the drawing helpers used by the synthetic generator.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// 8-bit RGB frame, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Option<Self> {
        (data.len() == width * height * 3).then_some(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    pub fn fill(&mut self, rgb: [u8; 3]) {
        for px in self.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
    }

    /// Per-channel mean color in `[0, 1]`.
    pub fn mean_color(&self) -> [f64; 3] {
        let mut acc = [0.0f64; 3];
        for px in self.data.chunks_exact(3) {
            acc[0] += px[0] as f64;
            acc[1] += px[1] as f64;
            acc[2] += px[2] as f64;
        }
        let n = (self.width * self.height) as f64 * 255.0;
        [acc[0] / n, acc[1] / n, acc[2] / n]
    }

    /// Bilinear sample at real coordinates, `[0, 1]` range per channel.
    /// Any tap outside the frame reads `fill` instead.
    pub fn sample_bilinear(&self, x: f64, y: f64, fill: [f64; 3]) -> [f64; 3] {
        let x0 = math::floor(x);
        let y0 = math::floor(y);
        let fx = x - x0;
        let fy = y - y0;
        let tap = |xi: f64, yi: f64| -> [f64; 3] {
            if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
                fill
            } else {
                let p = self.pixel(xi as usize, yi as usize);
                [
                    p[0] as f64 / 255.0,
                    p[1] as f64 / 255.0,
                    p[2] as f64 / 255.0,
                ]
            }
        };
        let p00 = tap(x0, y0);
        let p10 = tap(x0 + 1.0, y0);
        let p01 = tap(x0, y0 + 1.0);
        let p11 = tap(x0 + 1.0, y0 + 1.0);
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = p00[k] * (1.0 - fx) + p10[k] * fx;
            let bot = p01[k] * (1.0 - fx) + p11[k] * fx;
            out[k] = top * (1.0 - fy) + bot * fy;
        }
        out
    }

    /// Draw a filled axis-aligned rectangle, clipped to the frame.
    pub fn fill_rect(&mut self, x0: i64, y0: i64, w: i64, h: i64, rgb: [u8; 3]) {
        let xs = x0.max(0);
        let ys = y0.max(0);
        let xe = (x0 + w).min(self.width as i64);
        let ye = (y0 + h).min(self.height as i64);
        for y in ys..ye {
            for x in xs..xe {
                self.set_pixel(x as usize, y as usize, rgb);
            }
        }
    }

    /// Draw a 1-pixel rectangle border, clipped to the frame.
    pub fn draw_rect_border(&mut self, x0: i64, y0: i64, w: i64, h: i64, rgb: [u8; 3]) {
        if w <= 0 || h <= 0 {
            return;
        }
        let clip_w = self.width as i64;
        let clip_h = self.height as i64;
        let mut put = |x: i64, y: i64| {
            if x >= 0 && y >= 0 && x < clip_w && y < clip_h {
                self.set_pixel(x as usize, y as usize, rgb);
            }
        };
        for x in x0..x0 + w {
            put(x, y0);
            put(x, y0 + h - 1);
        }
        for y in y0..y0 + h {
            put(x0, y);
            put(x0 + w - 1, y);
        }
    }
}

/// Rotate the hue of an RGB color by `degrees`, keeping value and saturation.
pub fn rotate_hue(rgb: [u8; 3], degrees: f64) -> [u8; 3] {
    let r = rgb[0] as f64 / 255.0;
    let g = rgb[1] as f64 / 255.0;
    let b = rgb[2] as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let mut h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / delta) % 6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    h = math::rem_euclid(h + degrees, 360.0);
    let s = if max == 0.0 { 0.0 } else { delta / max };
    let v = max;
    let c = v * s;
    let x = c * (1.0 - math::abs(math::rem_euclid(h / 60.0, 2.0) - 1.0));
    let m = v - c;
    let (rp, gp, bp) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [
        (math::round((rp + m) * 255.0) as i64).clamp(0, 255) as u8,
        (math::round((gp + m) * 255.0) as i64).clamp(0, 255) as u8,
        (math::round((bp + m) * 255.0) as i64).clamp(0, 255) as u8,
    ]
}
