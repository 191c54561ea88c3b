use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blob_detect::BlobParams;
use crate::doc_io::SynthConfig;
use crate::error::{Error, Result};
use crate::eval_metrics::DEFAULT_THETA;
use crate::feature_grid::{CellEmbedding, GridConfig};
use crate::line_extract::LineParams;
use crate::nn::{ArchConfig, TrainConfig};
use crate::pair_gen::PairConfig;

/// Everything one run needs, read from a single TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds corpus synthesis, pair sampling, weight init and shuffling.
    pub seed: u64,
    pub run_dir: PathBuf,
    /// Pages processed concurrently by segment/eval/sweep.
    pub jobs: usize,
    /// Patch side p.
    pub patch_size: usize,
    /// Central window w.
    pub central_window: usize,
    pub corpus: CorpusSection,
    pub synth: SynthConfig,
    pub pairs: PairSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub grid: GridSection,
    pub blobs: BlobParams,
    pub lines: LineParams,
    pub eval: EvalSection,
    pub segment: SegmentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            run_dir: PathBuf::from("runs/default"),
            jobs: 1,
            patch_size: 350,
            central_window: 20,
            corpus: CorpusSection::default(),
            synth: SynthConfig::default(),
            pairs: PairSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            grid: GridSection::default(),
            blobs: BlobParams::default(),
            lines: LineParams::default(),
            eval: EvalSection::default(),
            segment: SegmentSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// Synthetic training pages.
    pub pages: usize,
    /// Synthetic held-out pages for segmentation and evaluation.
    pub holdout_pages: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            pages: 30,
            holdout_pages: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairSection {
    pub gap: Option<usize>,
    pub jitter_max: Option<usize>,
    pub min_ink_ratio: f64,
    pub val_fraction: f64,
    pub max_attempts: usize,
}

impl Default for PairSection {
    fn default() -> Self {
        let d = PairConfig::default();
        PairSection {
            gap: d.gap,
            jitter_max: d.jitter_max,
            min_ink_ratio: d.min_ink_ratio,
            val_fraction: d.val_fraction,
            max_attempts: d.max_attempts,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    #[default]
    Alexnet,
    Compact,
    Tiny,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub arch: ArchKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub batch: usize,
    pub embedding: CellEmbedding,
}

impl Default for GridSection {
    fn default() -> Self {
        let d = GridConfig::default();
        GridSection {
            batch: d.batch,
            embedding: d.embedding,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Pixel IU needed for a line hit.
    pub theta: f64,
    /// Score only ink pixels when ground truth comes from polygons.
    pub foreground_only: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            theta: DEFAULT_THETA,
            foreground_only: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentSection {
    /// Keep the embedding grid tensor next to the other outputs.
    pub save_intermediate: bool,
}

impl Default for SegmentSection {
    fn default() -> Self {
        SegmentSection { save_intermediate: true }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.grid_config()?;
        self.arch().validate()?;
        self.train_config().validate()?;
        self.synth_config(0).validate()?;
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.theta) {
            return Err(Error::Config("eval.theta must lie in [0, 1]".into()));
        }
        if self.lines.k_neighbors == 0 {
            return Err(Error::Config("lines.k_neighbors must be at least 1".into()));
        }
        Ok(())
    }

    pub fn arch(&self) -> ArchConfig {
        match self.model.arch {
            ArchKind::Alexnet => ArchConfig::alexnet(self.patch_size),
            ArchKind::Compact => ArchConfig::compact(self.patch_size),
            ArchKind::Tiny => ArchConfig::tiny(),
        }
    }

    pub fn grid_config(&self) -> Result<GridConfig> {
        let cfg = GridConfig {
            patch_side: self.patch_size,
            window: self.central_window,
            batch: self.grid.batch,
            embedding: self.grid.embedding,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pair_config(&self) -> PairConfig {
        PairConfig {
            patch_side: self.patch_size,
            gap: self.pairs.gap,
            jitter_max: self.pairs.jitter_max,
            min_ink_ratio: self.pairs.min_ink_ratio,
            val_fraction: self.pairs.val_fraction,
            max_attempts: self.pairs.max_attempts,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Page `index` of the training corpus; held-out pages continue the sequence.
    pub fn synth_config(&self, index: usize) -> SynthConfig {
        SynthConfig {
            seed: self.seed.wrapping_mul(1_000_003).wrapping_add(index as u64),
            ..self.synth.clone()
        }
    }

    /// Defaults filled in and derived seeds written back.
    pub fn effective(&self) -> RunConfig {
        let mut out = self.clone();
        out.train.seed = self.seed;
        out.synth.seed = self.seed;
        out
    }

    pub fn checkpoint_path(&self, patch_size: usize) -> PathBuf {
        self.run_dir.join(format!("model_p{patch_size}.lwck"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!((cfg.patch_size, cfg.central_window), (350, 20));
        assert_eq!((cfg.train.learning_rate, cfg.train.batch_size, cfg.train.patience), (1e-5, 8, 7));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("seeed = 3").is_err());
        assert!(RunConfig::from_toml("[train]\nlr = 0.1").is_err());
        let cfg = RunConfig::from_toml("seed = 3\n[train]\nlearning_rate = 0.001").unwrap();
        assert_eq!(cfg.train_config().seed, 3);
        assert_eq!(cfg.train.learning_rate, 0.001);
    }

    #[test]
    fn invalid_geometry_rejected() {
        assert!(RunConfig::from_toml("central_window = 21").is_err());
        assert!(RunConfig::from_toml("jobs = 0").is_err());
    }

    #[test]
    fn desk_config_parses() {
        let cfg = RunConfig::from_toml(include_str!("../../../../configs/desk.toml")).unwrap();
        assert_eq!(cfg.arch().map_side().unwrap(), 4);
    }
}
