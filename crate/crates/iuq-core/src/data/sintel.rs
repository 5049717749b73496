//! Intrinsic triple derivation from rendered layer sets (albedo / clean /
//! final), following the layout `<root>/albedo/<scene>/frame_%04d.png` with
//! matching `clean/` and `final/` trees.
//!
//! Reflectance is the albedo layer. Shading is `clean / (R + ε)`, normalized
//! to [0,1] by dividing by `shading_norm` and clamping. The non-Lambertian
//! residual is `max(0, final - clean)`. Because shading is normalized, the
//! additive composition `I = R∘S + N` holds only up to that normalization,
//! so derived triples are flagged as non-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::load_image_tensor;
use crate::error::{Error, Result};
use crate::types::{DatasetManifest, FrameRecord, ImageTensor, IntrinsicTriple};

/// How layers are resampled to the working resolution. Only antialiased
/// bilinear is supported; the variant is recorded in manifests so the
/// choice is reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResizeFilter {
    #[default]
    BilinearAntialiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SintelDerivationConfig {
    pub epsilon: f32,
    /// Divisor normalizing raw shading into [0,1]; 2.0 approximates the
    /// 99th percentile of raw shading values on the source data.
    pub shading_norm: f32,
    pub resolution: usize,
    pub resize_filter: ResizeFilter,
}

impl Default for SintelDerivationConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            shading_norm: 2.0,
            resolution: 256,
            resize_filter: ResizeFilter::BilinearAntialiased,
        }
    }
}

impl SintelDerivationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("epsilon must be > 0".into()));
        }
        if self.shading_norm <= 0.0 {
            return Err(Error::InvalidConfig("shading_norm must be > 0".into()));
        }
        Ok(())
    }
}

/// `S = clip(clean / (R + ε) / shading_norm, 0, 1)`, applied per channel.
pub fn derive_shading(
    clean: &ImageTensor,
    r: &ImageTensor,
    cfg: &SintelDerivationConfig,
) -> Result<ImageTensor> {
    if !clean.same_shape(r) {
        return Err(Error::ShapeMismatch {
            context: "derive_shading".into(),
            expected: clean.data().shape().to_vec(),
            got: r.data().shape().to_vec(),
        });
    }
    let eps = cfg.epsilon;
    let norm = cfg.shading_norm;
    let data = ndarray::Zip::from(clean.data())
        .and(r.data())
        .map_collect(|&c, &rv| (c / (rv + eps) / norm).clamp(0.0, 1.0));
    ImageTensor::new(data)
}

/// `N = max(0, final - clean)` elementwise.
pub fn derive_nonlambertian(final_: &ImageTensor, clean: &ImageTensor) -> Result<ImageTensor> {
    if !final_.same_shape(clean) {
        return Err(Error::ShapeMismatch {
            context: "derive_nonlambertian".into(),
            expected: final_.data().shape().to_vec(),
            got: clean.data().shape().to_vec(),
        });
    }
    let data = ndarray::Zip::from(final_.data())
        .and(clean.data())
        .map_collect(|&f, &c| (f - c).max(0.0));
    ImageTensor::new(data)
}

/// Loads and derives one frame from its three layer files. The layers must
/// share one native resolution; they are resized together afterwards.
pub fn load_sintel_frame(
    rec: &FrameRecord,
    cfg: &SintelDerivationConfig,
) -> Result<IntrinsicTriple> {
    cfg.validate()?;
    let path_of = |layer: &str, p: &Option<std::path::PathBuf>| -> Result<std::path::PathBuf> {
        p.clone().ok_or_else(|| Error::InvalidConfig(format!(
            "frame ({}, {}) has no {layer} path",
            rec.scene_id, rec.frame_index
        )))
    };
    let albedo_path = path_of("albedo", &rec.albedo)?;
    let clean_path = path_of("clean", &rec.clean)?;
    let final_path = path_of("final", &rec.final_)?;
    let native = |p: &std::path::Path| -> Result<(u32, u32)> {
        image::image_dimensions(p).map_err(|e| Error::Decode {
            path: p.to_path_buf(),
            message: e.to_string(),
        })
    };
    let dims = native(&albedo_path)?;
    for p in [&clean_path, &final_path] {
        let d = native(p)?;
        if d != dims {
            return Err(Error::ShapeMismatch {
                context: format!("layer resolutions differ for ({}, {})", rec.scene_id, rec.frame_index),
                expected: vec![dims.0 as usize, dims.1 as usize],
                got: vec![d.0 as usize, d.1 as usize],
            });
        }
    }
    let albedo = load_image_tensor(&albedo_path, cfg.resolution)?;
    let clean = load_image_tensor(&clean_path, cfg.resolution)?;
    let final_ = load_image_tensor(&final_path, cfg.resolution)?;

    let r = albedo.map(|v| v.clamp(0.0, 1.0));
    let s = derive_shading(&clean, &r, cfg)?;
    let n = derive_nonlambertian(&final_, &clean)?;
    Ok(IntrinsicTriple {
        r,
        s,
        n,
        i: final_,
        exact_composition: false,
    })
}

/// Builds a manifest by scanning a layer-set root for
/// `albedo/<scene>/frame_*.png` and pairing clean/final layers.
pub fn scan_sintel_root(root: &Path, name: &str, resolution: usize) -> Result<DatasetManifest> {
    let albedo_root = root.join("albedo");
    let read_dir = |p: &Path| -> Result<Vec<std::path::PathBuf>> {
        let mut entries: Vec<_> = std::fs::read_dir(p)
            .map_err(|source| Error::Io {
                path: p.to_path_buf(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        Ok(entries)
    };
    let mut frames = Vec::new();
    for scene_dir in read_dir(&albedo_root)? {
        if !scene_dir.is_dir() {
            continue;
        }
        let scene_id = scene_dir
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        for file in read_dir(&scene_dir)? {
            let Some(stem) = file.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let Some(idx) = stem
                .rsplit('_')
                .next()
                .and_then(|d| d.parse::<u32>().ok())
            else {
                continue;
            };
            let rel = file.strip_prefix(&albedo_root).expect("under albedo root");
            frames.push(FrameRecord {
                scene_id: scene_id.clone(),
                frame_index: idx,
                albedo: Some(file.clone()),
                clean: Some(root.join("clean").join(rel)),
                final_: Some(root.join("final").join(rel)),
            });
        }
    }
    let manifest = DatasetManifest {
        name: name.to_string(),
        resolution,
        frames,
    };
    manifest.validate()?;
    Ok(manifest)
}
