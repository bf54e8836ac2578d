//! Binary weight checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"DTCK"
//! version u32 (currently 1)
//! preset  u16 length + utf8 name ("paper" | "toy" | "micro")
//! count   u32 number of tensors
//! tensor  u16 name length + utf8 name
//!         u8  rank, then u32 per dimension
//!         f64 * product(dims)
//! ```
//!
//! Tensors are written in the model's parameter enumeration order and
//! validated by name and shape on load.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use dualtrack_core::{ModelConfig, ModelWeights};

const MAGIC: &[u8; 4] = b"DTCK";
const VERSION: u32 = 1;

pub fn save(path: &Path, config: &ModelConfig, weights: &ModelWeights) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let preset = config.preset_name().as_bytes();
    buf.extend_from_slice(&(preset.len() as u16).to_le_bytes());
    buf.extend_from_slice(preset);
    buf.extend_from_slice(&(weights.param_tensor_count() as u32).to_le_bytes());
    weights.for_each_param(|name, dims, data| {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(dims.len() as u8);
        for d in dims {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    });
    let mut f = fs::File::create(path)
        .with_context(|| format!("cannot create checkpoint {}", path.display()))?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ModelConfig, ModelWeights)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .with_context(|| format!("cannot open checkpoint {}", path.display()))?
        .read_to_end(&mut bytes)?;
    let mut cur = 0usize;
    let take = |cur: &mut usize, n: usize| -> Result<&[u8]> {
        if *cur + n > bytes.len() {
            bail!("checkpoint truncated at byte {cur}");
        }
        let s = &bytes[*cur..*cur + n];
        *cur += n;
        Ok(s)
    };
    if take(&mut cur, 4)? != MAGIC {
        bail!("not a checkpoint file (bad magic)");
    }
    let version = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap());
    if version != VERSION {
        bail!("unsupported checkpoint version {version}");
    }
    let name_len = u16::from_le_bytes(take(&mut cur, 2)?.try_into().unwrap()) as usize;
    let preset = std::str::from_utf8(take(&mut cur, name_len)?)
        .context("preset name is not utf8")?
        .to_string();
    let config = ModelConfig::by_name(&preset)?;
    let count = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let nl = u16::from_le_bytes(take(&mut cur, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut cur, nl)?)
            .context("tensor name is not utf8")?
            .to_string();
        let rank = take(&mut cur, 1)?[0] as usize;
        let mut scalars = 1usize;
        for _ in 0..rank {
            scalars *= u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
        }
        let raw = take(&mut cur, scalars * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, data));
    }
    if cur != bytes.len() {
        bail!("{} trailing bytes in checkpoint", bytes.len() - cur);
    }
    let weights = ModelWeights::from_named(&config, &entries)?;
    Ok((config, weights))
}
