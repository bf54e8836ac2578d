//! Scenario spec files (TOML) and train config files.

use std::path::Path;

use anyhow::{Context, Result};
use dualtrack_core::synth::Scenario;
use dualtrack_core::train::TrainConfig;
use dualtrack_core::ModelConfig;
use serde::Deserialize;

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read scenario file {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("bad scenario file {}", path.display()))
}

fn default_lr() -> f64 {
    1e-4
}
fn default_decay() -> f64 {
    0.98
}
fn default_decay_interval() -> usize {
    500
}
fn default_snippets() -> usize {
    20
}
fn default_snippet_len() -> usize {
    4
}
fn default_dropout() -> f64 {
    0.2
}

/// On-disk train configuration.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainFile {
    pub preset: String,
    pub iterations: usize,
    pub seed: u64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_decay_interval")]
    pub decay_interval: usize,
    #[serde(default = "default_snippets")]
    pub snippets: usize,
    #[serde(default = "default_snippet_len")]
    pub snippet_len: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

pub fn load_train_config(path: &Path) -> Result<(ModelConfig, TrainConfig)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read train config {}", path.display()))?;
    let file: TrainFile =
        toml::from_str(&text).with_context(|| format!("bad train config {}", path.display()))?;
    let model = ModelConfig::by_name(&file.preset)?;
    let cfg = TrainConfig {
        model: model.clone(),
        lr: file.lr,
        decay: file.decay,
        decay_interval: file.decay_interval,
        iterations: file.iterations,
        snippets: file.snippets,
        snippet_len: file.snippet_len,
        seed: file.seed,
        dropout: file.dropout,
        loss: Default::default(),
    };
    Ok((model, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_file_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        std::fs::write(
            &path,
            r#"
kind = "occlusion"
frames = 40
width = 64
height = 64
seed = 7

[target]
shape = "rect"
size = 16
color = [210, 70, 60]
texture = "checker"
start = [32.0, 32.0]
velocity = [0.0, 0.0]

[occluder]
enter = 20
exit = 30
full_frame = true
size = 64
color = [0, 0, 0]
start = [32.0, 32.0]
velocity = [0.0, 0.0]
"#,
        )
        .unwrap();
        let s = load_scenario(&path).unwrap();
        assert_eq!(s.frames, 40);
        assert!(s.occluder.as_ref().unwrap().full_frame);
        // Optional sections default away.
        assert!(s.distractors.is_empty());
        assert_eq!(s.blur_samples, 1);
    }

    #[test]
    fn train_file_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.toml");
        std::fs::write(&path, "preset = \"micro\"\niterations = 10\nseed = 7\n").unwrap();
        let (model, cfg) = load_train_config(&path).unwrap();
        assert_eq!(model.preset_name(), "micro");
        assert_eq!(cfg.iterations, 10);
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.dropout, 0.2);
    }
}
