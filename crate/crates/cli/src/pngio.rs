//! Frame/sequence IO: PNG frames, ground-truth files, PGM map dumps, and
//! binary memory snapshots.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dualtrack_core::image::Image;
use dualtrack_core::memory::MemoryBlock;
use dualtrack_core::synth::FrameTruth;
use dualtrack_core::tensor::Matrix2;

pub fn save_png(path: &Path, img: &Image) -> Result<()> {
    let buf: image::RgbImage = image::ImageBuffer::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.data().to_vec(),
    )
    .context("frame buffer size mismatch")?;
    buf.save(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .with_context(|| format!("cannot read image {}", path.display()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Image::from_raw(w as usize, h as usize, img.into_raw()).context("decoded buffer mismatch")
}

/// Write a sequence directory: `000000.png`, `000001.png`, ... plus
/// `groundtruth.txt` with one `x,y,w,h[,occ]` line per frame.
pub fn write_sequence(dir: &Path, frames: &[Image], truth: &[FrameTruth]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, frame) in frames.iter().enumerate() {
        save_png(&dir.join(format!("{i:06}.png")), frame)?;
    }
    let mut text = String::new();
    for t in truth {
        text.push_str(&dualtrack_core::synth::format_truth_line(t));
        text.push('\n');
    }
    fs::write(dir.join("groundtruth.txt"), text)?;
    Ok(())
}

/// Load the PNG frames of a sequence directory in filename order.
pub fn load_frames(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot open sequence directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    if paths.is_empty() {
        bail!("no .png frames in {}", dir.display());
    }
    paths.sort();
    paths.iter().map(|p| load_png(p)).collect()
}

pub fn load_truth(path: &Path) -> Result<Vec<FrameTruth>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read ground truth {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| dualtrack_core::synth::parse_truth_line(l).map_err(anyhow::Error::from))
        .collect()
}

/// Binary PGM (P5) of a map, min-max normalized to 0..255.
pub fn save_pgm(path: &Path, map: &Matrix2) -> Result<()> {
    let norm = map.normalize_minmax();
    let mut out = Vec::new();
    write!(out, "P5\n{} {}\n255\n", map.cols(), map.rows())?;
    out.extend(norm.data().iter().map(|v| (v * 255.0).round() as u8));
    fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

const MEM_MAGIC: &[u8; 4] = b"DTMD";

/// Binary snapshot of one memory block: slots, keys, recency stamps.
pub fn save_memory_snapshot(path: &Path, block: &MemoryBlock) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MEM_MAGIC);
    out.extend_from_slice(&1u32.to_le_bytes());
    let k = block.slot_count();
    let dims = block.slot(0).dims();
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&(dims.0 as u32).to_le_bytes());
    out.extend_from_slice(&(dims.1 as u32).to_le_bytes());
    out.extend_from_slice(&(dims.2 as u32).to_le_bytes());
    for i in 0..k {
        for v in block.slot(i).data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for i in 0..k {
        for v in block.key(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for r in block.recency() {
        out.extend_from_slice(&r.to_le_bytes());
    }
    fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
