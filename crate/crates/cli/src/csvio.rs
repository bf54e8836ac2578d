//! Results CSV: `frame,x,y,w,h,peak,occluded`, one row per frame, floats
//! printed with 9 significant digits, box as left-top + size. Parsing a
//! written file and writing it again reproduces the bytes exactly.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use dualtrack_core::eval::TrackRow;
use dualtrack_core::tracker::BoundingBox;

pub const HEADER: &str = "frame,x,y,w,h,peak,occluded";

/// Decimal formatting with 9 significant digits (no exponent notation).
pub fn format_sig(v: f64) -> String {
    if v == 0.0 {
        return "0.00000000".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (8 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

pub fn to_string(rows: &[TrackRow]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for (frame, row) in rows.iter().enumerate() {
        let (x, y, w, h) = row.bbox.to_ltwh();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            frame,
            format_sig(x),
            format_sig(y),
            format_sig(w),
            format_sig(h),
            format_sig(row.peak),
            u8::from(row.occluded),
        ));
    }
    out
}

pub fn write(path: &Path, rows: &[TrackRow]) -> Result<()> {
    fs::write(path, to_string(rows))
        .with_context(|| format!("cannot write results to {}", path.display()))
}

pub fn read(path: &Path) -> Result<Vec<TrackRow>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read results from {}", path.display()))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Vec<TrackRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        other => bail!("bad results header: {other:?}"),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            bail!("row {idx}: expected 7 fields, got {}", parts.len());
        }
        let frame: usize = parts[0].parse().context("bad frame index")?;
        if frame != idx {
            bail!("row {idx} carries frame index {frame}");
        }
        let mut nums = [0.0f64; 5];
        for (k, p) in parts[1..6].iter().enumerate() {
            nums[k] = p.parse().with_context(|| format!("bad number `{p}`"))?;
        }
        let occluded = match parts[6] {
            "0" => false,
            "1" => true,
            other => bail!("bad occluded flag `{other}`"),
        };
        rows.push(TrackRow {
            bbox: BoundingBox::from_ltwh(nums[0], nums[1], nums[2], nums[3]),
            peak: nums[4],
            occluded,
        });
    }
    Ok(rows)
}
