//! TOML experiment configuration.
//!
//! One file drives one experiment. Minimal example:
//!
//! ```toml
//! experiment = "synth_leakage"
//! seeds = [0, 1, 2]
//! epochs = 20
//!
//! [data.synthetic]
//! n_scenes = 8
//! frames_per_scene = 8
//! resolution = 64
//! frame_jitter_px = 4
//! ```
//!
//! Sections `[split]`, `[model]`, `[train]`, `[loss]` and `[eval]` override
//! defaults field by field; `[data.sintel]` with `root = "..."` selects a
//! rendered-layer dataset instead of the synthetic generator.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use iuq_core::data::{SintelDerivationConfig, SyntheticSceneConfig};
use iuq_core::nn::{Arch, ClampRange, ModelSpec};
use iuq_core::objectives::LossConfig;
use iuq_core::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ProtocolStudy,
    SplitGradient,
    Ablation,
    MainTable,
    Downstream,
    ChannelVerify,
    OodProbe,
    SynthLeakage,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ProtocolStudy => "protocol_study",
            ExperimentKind::SplitGradient => "split_gradient",
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::MainTable => "main_table",
            ExperimentKind::Downstream => "downstream",
            ExperimentKind::ChannelVerify => "channel_verify",
            ExperimentKind::OodProbe => "ood_probe",
            ExperimentKind::SynthLeakage => "synth_leakage",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub synthetic: Option<SyntheticSceneConfig>,
    pub sintel: Option<SintelSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SintelSection {
    pub root: PathBuf,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub derivation: Option<SintelDerivationConfig>,
}

fn default_resolution() -> usize {
    256
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub test_fraction: Option<f64>,
    pub test_scene_count: Option<usize>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub base_channels: Option<usize>,
    pub levels: Option<usize>,
    pub dropout_rate: Option<f32>,
    pub unc_hidden: Option<usize>,
    pub logvar_low: Option<f32>,
    pub logvar_high: Option<f32>,
}

impl ModelSection {
    pub fn apply(&self, arch: Arch) -> ModelSpec {
        let mut spec = ModelSpec::new(arch);
        if let Some(v) = self.base_channels {
            spec.base_channels = v;
        }
        if let Some(v) = self.levels {
            spec.levels = v;
        }
        if let Some(v) = self.dropout_rate {
            spec.dropout_rate = v;
        }
        if let Some(v) = self.unc_hidden {
            spec.unc_hidden = v;
        }
        spec.logvar_clamp = ClampRange {
            low: self.logvar_low.unwrap_or(spec.logvar_clamp.low),
            high: self.logvar_high.unwrap_or(spec.logvar_clamp.high),
        };
        spec
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub phase1_epochs: Option<usize>,
    pub phase2_epochs: Option<usize>,
    pub baseline_epochs: Option<usize>,
    pub protocol_study_epochs: Option<usize>,
    pub lr_main: Option<f64>,
    pub lr_uncertainty: Option<f64>,
    pub batch_size: Option<usize>,
    pub ensemble_members: Option<usize>,
    pub grad_clip: Option<f32>,
}

impl TrainSection {
    pub fn apply(&self) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        if let Some(v) = self.phase1_epochs {
            cfg.phase1_epochs = v;
        }
        if let Some(v) = self.phase2_epochs {
            cfg.phase2_epochs = v;
        }
        if let Some(v) = self.baseline_epochs {
            cfg.baseline_epochs = v;
        }
        if let Some(v) = self.protocol_study_epochs {
            cfg.protocol_study_epochs = v;
        }
        if let Some(v) = self.lr_main {
            cfg.lr_main = v;
        }
        if let Some(v) = self.lr_uncertainty {
            cfg.lr_uncertainty = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.ensemble_members {
            cfg.ensemble_members = v;
        }
        cfg.grad_clip = self.grad_clip.or(cfg.grad_clip);
        cfg
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub lambda_smooth: Option<f64>,
    pub lambda_nll: Option<f64>,
    pub n_weight: Option<f64>,
    pub nll_warmup_epochs: Option<usize>,
}

impl LossSection {
    pub fn apply(&self) -> LossConfig {
        let mut cfg = LossConfig::default();
        if let Some(v) = self.lambda_smooth {
            cfg.lambda_smooth = v;
        }
        if let Some(v) = self.lambda_nll {
            cfg.lambda_nll = v;
        }
        if let Some(v) = self.n_weight {
            cfg.n_weight = v;
        }
        if let Some(v) = self.nll_warmup_epochs {
            cfg.nll_warmup_epochs = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub subsample_size: Option<usize>,
    pub subsample_seed: Option<u64>,
    pub mc_passes: Option<usize>,
    pub keep_panels: Option<usize>,
    pub scatter_points: Option<usize>,
}

/// Top-level experiment file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Total training epochs per run; per-experiment default when absent.
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub archs: Option<Vec<String>>,
    #[serde(default)]
    pub jobs: Option<usize>,
    /// Directory of photos for the OOD probe; procedural fixtures when absent.
    #[serde(default)]
    pub photos_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            bail!("duplicate seeds in config");
        }
        if self.data.synthetic.is_some() && self.data.sintel.is_some() {
            bail!("configure either [data.synthetic] or [data.sintel], not both");
        }
        if let Some(archs) = &self.archs {
            for a in archs {
                a.parse::<Arch>()
                    .map_err(|e| anyhow::anyhow!(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn parsed_archs(&self) -> Option<Vec<Arch>> {
        self.archs
            .as_ref()
            .map(|v| v.iter().map(|a| a.parse().expect("validated")).collect())
    }

    /// Seeds from the config, or the per-experiment default count
    /// (3 for the protocol studies, 5 for the main/ablation tables).
    pub fn effective_seeds(&self) -> Vec<u64> {
        if !self.seeds.is_empty() {
            return self.seeds.clone();
        }
        let n = match self.experiment {
            ExperimentKind::MainTable | ExperimentKind::Ablation => 5,
            ExperimentKind::ProtocolStudy
            | ExperimentKind::SplitGradient
            | ExperimentKind::SynthLeakage => 3,
            _ => 1,
        };
        (0..n).collect()
    }
}
