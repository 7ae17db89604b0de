//! Run configuration: one TOML file with a section per command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shellseg::augment::TtaConfig;
use shellseg::labelspace::{builtin, LabelSpace};
use shellseg::manifest::Split;
use shellseg::model::ModelConfig;
use shellseg::synth::{LabelVariant, SceneSpec};
use shellseg::training::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub finetune: FinetuneSection,
    pub eval: EvalSection,
    pub prelabel: PrelabelSection,
    pub stats: StatsSection,
    pub synth: SynthSection,
    pub render: RenderSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            data: DataSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            finetune: FinetuneSection::default(),
            eval: EvalSection::default(),
            prelabel: PrelabelSection::default(),
            stats: StatsSection::default(),
            synth: SynthSection::default(),
            render: RenderSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
    /// Label space the model is trained in: a built-in name or a class-list
    /// file. Defaults to the manifest's space.
    pub label_space: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub checkpoint: Option<PathBuf>,
    /// Peak learning rate of the pretraining run.
    pub baseline_max_lr: f64,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            baseline_max_lr: 0.006,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `data.manifest`.
    pub manifest: Option<PathBuf>,
    pub split: Split,
    pub voxel_size: f64,
    pub tta_enabled: bool,
    pub tta: TtaConfig,
    /// Single voxel subsample per scene instead of fragment voting.
    pub fast: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            manifest: None,
            split: Split::Test,
            voxel_size: 0.025,
            tta_enabled: true,
            tta: TtaConfig::default(),
            fast: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrelabelSection {
    pub checkpoint: Option<PathBuf>,
    pub scenes: Vec<PathBuf>,
    /// Label space to express predictions in, if not the model's own.
    pub translate_to: Option<String>,
    pub voxel_size: f64,
    pub tta_enabled: bool,
    pub tta: TtaConfig,
}

impl Default for PrelabelSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            scenes: Vec::new(),
            translate_to: None,
            voxel_size: 0.025,
            tta_enabled: true,
            tta: TtaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    /// Defaults to `data.manifest`.
    pub manifest: Option<PathBuf>,
    pub chart_width: u32,
    pub chart_height: u32,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self {
            manifest: None,
            chart_width: 800,
            chart_height: 600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_scenes: usize,
    pub split: [f64; 3],
    pub variant: LabelVariant,
    pub scene: SceneSpec,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            n_scenes: 36,
            split: [0.7, 0.15, 0.15],
            variant: LabelVariant::Target,
            scene: SceneSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LabelColoring {
    Rgb,
    Class,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    pub scene: Option<PathBuf>,
    pub width: u32,
    pub height: u32,
    pub labels: LabelColoring,
    /// Points farther than this from the scanner are dropped.
    pub max_range: f64,
}

impl Default for RenderSection {
    fn default() -> Self {
        Self {
            scene: None,
            width: 1024,
            height: 512,
            labels: LabelColoring::Rgb,
            max_range: 25.0,
        }
    }
}

fn absolutize(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Parses a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() {
            PathBuf::from(".")
        } else {
            base
        };
        let base = std::fs::canonicalize(&base).unwrap_or(base);
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let opts = [
            &mut self.out,
            &mut self.data.manifest,
            &mut self.finetune.checkpoint,
            &mut self.eval.checkpoint,
            &mut self.eval.manifest,
            &mut self.prelabel.checkpoint,
            &mut self.stats.manifest,
            &mut self.render.scene,
            &mut self.train.dump_path,
        ];
        for p in opts.into_iter().flatten() {
            absolutize(base, p);
        }
        for p in &mut self.prelabel.scenes {
            absolutize(base, p);
        }
        for name in [&mut self.data.label_space, &mut self.prelabel.translate_to]
            .into_iter()
            .flatten()
        {
            if builtin(name).is_none() {
                let mut p = PathBuf::from(&*name);
                absolutize(base, &mut p);
                *name = p.to_string_lossy().into_owned();
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration is always representable")
    }

    pub fn out_dir(&self) -> Result<PathBuf, CliError> {
        self.out
            .clone()
            .ok_or_else(|| CliError::Config("no output directory: set `out` or pass --out".into()))
    }
}

/// A built-in label space by name, or one read from a class-list file.
pub fn resolve_space(name: &str) -> Result<LabelSpace, CliError> {
    if let Some(s) = builtin(name) {
        return Ok(s);
    }
    let path = Path::new(name);
    if path.exists() {
        return Ok(LabelSpace::load(path)?);
    }
    Err(CliError::Config(format!("unknown label space `{name}`")))
}

pub fn require<'a, T>(value: &'a Option<T>, field: &str) -> Result<&'a T, CliError> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("missing required field `{field}`")))
}
