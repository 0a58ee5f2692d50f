//! Everything a run needs, read from one JSON file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FcanError, Result};
use crate::network::{FusionWeights, NetworkConfig};
use crate::synth::{ClassSet, InputConfig, SceneConfig};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_per_class: usize,
    pub split_ratio: f64,
    pub seed: u64,
    pub classes: ClassSet,
    pub scene: SceneConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        // 75 videos per class: 200 for training and 100 for testing.
        DataConfig {
            n_per_class: 75,
            split_ratio: 2.0 / 3.0,
            seed: 0,
            classes: ClassSet::default(),
            scene: SceneConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub segments: usize,
    pub fusion: FusionWeights,
    /// Test videos whose attention maps `attn` exports.
    pub attention_videos: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            segments: 5,
            fusion: FusionWeights::default(),
            attention_videos: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            depths: vec![0, 1, 2, 3],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Desk,
    PaperScale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub precision: Precision,
    pub data: DataConfig,
    pub input: InputConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
            precision: Precision::default(),
            data: DataConfig::default(),
            input: InputConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses `path`; syntax and schema errors name the line and column.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| FcanError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            FcanError::Config(format!(
                "{}: line {}, column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.scene.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        if self.eval.segments == 0 {
            return Err(FcanError::Config("eval.segments must be >= 1".into()));
        }
        if self.network.num_classes != self.data.classes.len() {
            return Err(FcanError::Config(format!(
                "network.num_classes = {} but the data has {} classes",
                self.network.num_classes,
                self.data.classes.len()
            )));
        }
        let (f, h, w) = (self.data.scene.frames, self.data.scene.height, self.data.scene.width);
        let n = &self.network;
        if n.frames > f || n.height > h || n.width > w {
            return Err(FcanError::Config(format!(
                "network input {}x{}x{} is larger than the videos {f}x{h}x{w}",
                n.frames, n.height, n.width
            )));
        }
        Ok(())
    }

    /// `paper-scale` switches to the heavier dropout and 25 test segments.
    pub fn apply_preset(&mut self, preset: Preset) {
        match preset {
            Preset::Desk => {
                self.train.dropout_fc = TrainConfig::default().dropout_fc;
                self.eval.segments = EvalConfig::default().segments;
            }
            Preset::PaperScale => {
                self.train.dropout_fc = TrainConfig::PAPER_SCALE_DROPOUT;
                self.eval.segments = 25;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parse_error_names_line() {
        let err = RunConfig::parse("{\n  \"precision\": \"f16\"\n}", Path::new("x.json"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("x.json: line 2"), "{err}");
    }

    #[test]
    fn unknown_field_rejected() {
        let err = RunConfig::parse("{\"trian\": {}}", Path::new("c.json")).unwrap_err();
        assert!(err.to_string().contains("trian"));
    }
}
