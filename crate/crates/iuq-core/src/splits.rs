//! Train/test partition protocols of increasing strictness.
//!
//! * `random_frame` — uniform shuffle of frames; near-duplicate frames of
//!   one scene can land on both sides (the leaky protocol).
//! * `temporal` — per scene, the latest frames go to test; scene content is
//!   shared but the future is held out.
//! * `scene` — whole scenes held out; the strict protocol.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::types::{DatasetManifest, FrameRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    RandomFrame,
    Temporal,
    Scene,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::RandomFrame => "random_frame",
            SplitKind::Temporal => "temporal",
            SplitKind::Scene => "scene",
        }
    }
}

impl std::str::FromStr for SplitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "random_frame" | "random" => SplitKind::RandomFrame,
            "temporal" => SplitKind::Temporal,
            "scene" => SplitKind::Scene,
            other => return Err(Error::InvalidConfig(format!("unknown split kind '{other}'"))),
        })
    }
}

/// Which partition protocol to apply. Exactly one of `test_fraction`
/// (random/temporal) or `test_scene_count` (scene) must be set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub test_fraction: Option<f64>,
    pub test_scene_count: Option<usize>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn random_frame(test_fraction: f64, seed: u64) -> Self {
        Self {
            kind: SplitKind::RandomFrame,
            test_fraction: Some(test_fraction),
            test_scene_count: None,
            seed,
        }
    }

    pub fn temporal(test_fraction: f64, seed: u64) -> Self {
        Self {
            kind: SplitKind::Temporal,
            test_fraction: Some(test_fraction),
            test_scene_count: None,
            seed,
        }
    }

    pub fn scene(test_scene_count: usize, seed: u64) -> Self {
        Self {
            kind: SplitKind::Scene,
            test_fraction: None,
            test_scene_count: Some(test_scene_count),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SplitKind::RandomFrame | SplitKind::Temporal => {
                let f = self.test_fraction.ok_or_else(|| {
                    Error::InvalidConfig("test_fraction required for this split kind".into())
                })?;
                if self.test_scene_count.is_some() {
                    return Err(Error::InvalidConfig(
                        "test_scene_count must not be set for fraction splits".into(),
                    ));
                }
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "test_fraction must be in (0,1), got {f}"
                    )));
                }
            }
            SplitKind::Scene => {
                if self.test_fraction.is_some() {
                    return Err(Error::InvalidConfig(
                        "test_fraction must not be set for scene splits".into(),
                    ));
                }
                let n = self.test_scene_count.ok_or_else(|| {
                    Error::InvalidConfig("test_scene_count required for scene splits".into())
                })?;
                if n < 1 {
                    return Err(Error::InvalidConfig("test_scene_count must be >= 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// A disjoint, exhaustive partition of a manifest's frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitResult {
    pub kind: SplitKind,
    pub seed: u64,
    pub train: Vec<FrameRecord>,
    pub test: Vec<FrameRecord>,
}

impl SplitResult {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        crate::types::write_json(path, self)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        crate::types::read_json(path)
    }
}

/// Partitions the manifest according to the spec. Partition membership is
/// decided per protocol; both output lists preserve manifest order.
pub fn split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<SplitResult> {
    spec.validate()?;
    manifest.validate()?;
    let n = manifest.frames.len();
    let test_keys: BTreeSet<(String, u32)> = match spec.kind {
        SplitKind::RandomFrame => {
            let f = spec.test_fraction.unwrap();
            let n_test = (f * n as f64).ceil() as usize;
            if n_test == 0 || n_test >= n {
                return Err(Error::InvalidConfig(format!(
                    "random split would leave an empty partition ({n_test}/{n} test)"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut stream(spec.seed, "split-random", 0));
            order[n - n_test..]
                .iter()
                .map(|&i| manifest.frames[i].key())
                .collect()
        }
        SplitKind::Temporal => {
            let f = spec.test_fraction.unwrap();
            let mut by_scene: std::collections::BTreeMap<&str, Vec<u32>> = Default::default();
            for fr in &manifest.frames {
                by_scene.entry(&fr.scene_id).or_default().push(fr.frame_index);
            }
            let mut keys = BTreeSet::new();
            for (scene, mut idxs) in by_scene {
                if idxs.len() < 2 {
                    return Err(Error::InvalidConfig(format!(
                        "temporal split needs >= 2 frames per scene; '{scene}' has {}",
                        idxs.len()
                    )));
                }
                idxs.sort_unstable();
                // frames at or above the per-scene (1 - f) quantile of frame
                // indices go to test; boundary frames go to test
                let n_s = idxs.len();
                let k = ((f * n_s as f64).round() as usize).clamp(1, n_s - 1);
                let threshold = idxs[n_s - k];
                for &i in &idxs {
                    if i >= threshold {
                        keys.insert((scene.to_string(), i));
                    }
                }
            }
            keys
        }
        SplitKind::Scene => {
            let count = spec.test_scene_count.unwrap();
            let mut scenes = manifest.scene_ids();
            scenes.sort();
            if scenes.len() < 2 {
                return Err(Error::InvalidConfig("scene split needs >= 2 scenes".into()));
            }
            if count >= scenes.len() {
                return Err(Error::InvalidConfig(format!(
                    "test_scene_count {count} must be < scene count {}",
                    scenes.len()
                )));
            }
            scenes.shuffle(&mut stream(spec.seed, "split-scene", 0));
            let test_scenes: BTreeSet<String> = scenes.into_iter().take(count).collect();
            manifest
                .frames
                .iter()
                .filter(|fr| test_scenes.contains(&fr.scene_id))
                .map(|fr| fr.key())
                .collect()
        }
    };

    let (test, train): (Vec<_>, Vec<_>) = manifest
        .frames
        .iter()
        .cloned()
        .partition(|fr| test_keys.contains(&fr.key()));
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidConfig("split produced an empty partition".into()));
    }
    Ok(SplitResult {
        kind: spec.kind,
        seed: spec.seed,
        train,
        test,
    })
}

/// Leakage-relevant facts about a partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAudit {
    /// Number of scene ids present in both partitions.
    pub scene_overlap_count: usize,
    /// Whether any test frame has a train frame from the same scene.
    pub min_same_scene_pair: bool,
}

pub fn audit_split(result: &SplitResult) -> SplitAudit {
    let train_scenes: BTreeSet<&str> = result.train.iter().map(|f| f.scene_id.as_str()).collect();
    let test_scenes: BTreeSet<&str> = result.test.iter().map(|f| f.scene_id.as_str()).collect();
    let overlap = train_scenes.intersection(&test_scenes).count();
    SplitAudit {
        scene_overlap_count: overlap,
        min_same_scene_pair: overlap > 0,
    }
}
