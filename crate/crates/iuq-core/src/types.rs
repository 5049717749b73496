//! Shared data model: image tensors, intrinsic triples, dataset manifests,
//! and per-run evaluation reports.
//!
//! All types are immutable value records after construction and safe to share
//! read-only across parallel workers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 3-channel (RGB) image stored as `(channel, height, width)` f32 in a
/// role-dependent physical range. Pixel values are floating point in [0,1]
/// for observed images; 8-bit inputs are converted by division by 255.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f32>,
}

impl ImageTensor {
    /// Wraps a `(3, h, w)` array. Fails on a wrong channel count.
    pub fn new(data: Array3<f32>) -> Result<Self> {
        if data.shape()[0] != 3 {
            return Err(Error::ShapeMismatch {
                context: "ImageTensor::new".into(),
                expected: vec![3],
                got: vec![data.shape()[0]],
            });
        }
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((3, height, width)),
        }
    }

    /// Constant-valued image, handy in tests and fixtures.
    pub fn splat(value: f32, height: usize, width: usize) -> Self {
        Self {
            data: Array3::from_elem((3, height, width), value),
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        Self {
            data: Array3::from_shape_fn((3, height, width), |(c, y, x)| f(c, y, x)),
        }
    }

    /// Replicates a single-channel map to all three RGB channels.
    pub fn from_gray(gray: &ndarray::Array2<f32>) -> Self {
        let (h, w) = gray.dim();
        Self::from_fn(h, w, |_, y, x| gray[[y, x]])
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f32> {
        &mut self.data
    }

    pub fn into_inner(self) -> Array3<f32> {
        self.data
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.data.dim() == other.data.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise product, the `∘` of the formation model.
    pub fn hadamard(&self, other: &Self) -> Self {
        Self {
            data: &self.data * &other.data,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            data: &self.data + &other.data,
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            data: self.data.mapv(&f),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f32 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max)
    }

    pub fn to_f64(&self) -> Array3<f64> {
        self.data.mapv(|v| v as f64)
    }
}

/// Aligned reflectance/shading/non-Lambertian components plus the observed
/// image for one frame. `I = R ∘ S + N` holds exactly (to 1e-6) only when
/// `exact_composition` is set, which the synthetic generator guarantees;
/// triples derived from rendered layers normalize shading and therefore do
/// not satisfy the additive identity.
#[derive(Debug, Clone)]
pub struct IntrinsicTriple {
    /// Reflectance (albedo) in [0,1].
    pub r: ImageTensor,
    /// Shading in [0,1] (normalized).
    pub s: ImageTensor,
    /// Non-Lambertian residual, elementwise >= 0.
    pub n: ImageTensor,
    /// Observed image.
    pub i: ImageTensor,
    /// Whether `i == r∘s + n` holds by construction.
    pub exact_composition: bool,
}

const COMPOSITION_TOL: f32 = 1e-6;

/// Checks every triple invariant and returns one description per violation.
/// Validation never fails; an empty list means the triple is well formed.
pub fn validate_triple(t: &IntrinsicTriple) -> Vec<String> {
    let mut violations = Vec::new();

    if !(t.r.same_shape(&t.s) && t.r.same_shape(&t.n) && t.r.same_shape(&t.i)) {
        violations.push("component shapes differ".to_string());
        return violations;
    }

    for (name, img) in [("R", &t.r), ("S", &t.s), ("N", &t.n), ("I", &t.i)] {
        if !img.is_finite() {
            violations.push(format!("{name} contains non-finite values"));
        }
    }

    for (name, img) in [("R", &t.r), ("S", &t.s)] {
        if let Some((c, y, x)) = first_out_of_range(img, 0.0, 1.0) {
            violations.push(format!("{name} outside [0,1] at ({y},{x}) channel {c}"));
        }
    }

    if let Some((c, y, x)) = first_below(&t.n, 0.0) {
        violations.push(format!("N negative at ({y},{x}) channel {c}"));
    }

    if t.exact_composition {
        let recomposed = t.r.hadamard(&t.s).add(&t.n);
        let err = t.i.max_abs_diff(&recomposed);
        if err > COMPOSITION_TOL {
            violations.push(format!("composition mismatch: max |I - (R∘S+N)| = {err:e}"));
        }
    }

    violations
}

fn first_out_of_range(img: &ImageTensor, lo: f32, hi: f32) -> Option<(usize, usize, usize)> {
    img.data()
        .indexed_iter()
        .find(|(_, &v)| !(lo..=hi).contains(&v))
        .map(|((c, y, x), _)| (c, y, x))
}

fn first_below(img: &ImageTensor, lo: f32) -> Option<(usize, usize, usize)> {
    img.data()
        .indexed_iter()
        .find(|&(_, &v)| v < lo)
        .map(|((c, y, x), _)| (c, y, x))
}

/// One frame of a dataset: where its layers live (or `None` for purely
/// in-memory synthetic frames). `(scene_id, frame_index)` is unique within
/// a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub scene_id: String,
    pub frame_index: u32,
    #[serde(default)]
    pub albedo: Option<PathBuf>,
    #[serde(default)]
    pub clean: Option<PathBuf>,
    #[serde(default, rename = "final")]
    pub final_: Option<PathBuf>,
}

impl FrameRecord {
    pub fn key(&self) -> (String, u32) {
        (self.scene_id.clone(), self.frame_index)
    }
}

/// Scene/frame inventory; the unit the split protocols partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub resolution: usize,
    pub frames: Vec<FrameRecord>,
}

impl DatasetManifest {
    /// Unique scene ids in first-appearance order.
    pub fn scene_ids(&self) -> Vec<String> {
        let mut seen = BTreeMap::new();
        let mut out = Vec::new();
        for f in &self.frames {
            if seen.insert(f.scene_id.clone(), ()).is_none() {
                out.push(f.scene_id.clone());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::InvalidConfig("manifest has no frames".into()));
        }
        let mut keys = std::collections::BTreeSet::new();
        for f in &self.frames {
            if !keys.insert((f.scene_id.clone(), f.frame_index)) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate frame ({}, {})",
                    f.scene_id, f.frame_index
                )));
            }
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let manifest: Self = read_json(path)?;
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Per-run metrics record consumed by the statistics suite, serialized as
/// one JSON object per run under `results/<run_id>.json`.
///
/// `timings` holds wall-clock measurements and is the only field allowed to
/// differ between reruns of an identical job; [`EvalReport::metrics_value`]
/// strips it for byte-level determinism comparisons.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub run_id: String,
    pub seed: u64,
    pub arch_name: String,
    pub split_name: String,
    pub r_psnr: f64,
    pub s_psnr: f64,
    pub recon_psnr: Option<f64>,
    pub uq_corr: Option<f64>,
    /// channel name -> (mean sigma, std sigma)
    pub sigma_means: BTreeMap<String, (f64, f64)>,
    /// Pearson r between sigma channels, order (tex, light, nl).
    pub channel_corr: Option<[[f64; 3]; 3]>,
    /// Rows (tex, light, nl) x columns (err R, err S, err N).
    pub cross_corr: Option<[[f64; 3]; 3]>,
    /// (keep_fraction, guided_mse, random_mse)
    pub filtering_curve: Vec<(f64, f64, f64)>,
    /// (sigma_epi_R, sigma_epi_S) scalar means from MC dropout or ensemble spread.
    pub epistemic: Option<(f64, f64)>,
    pub params_count: u64,
    /// (train seconds per epoch, inference milliseconds) — wall clock.
    pub timings: (f64, f64),
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let check_corr = |name: &str, v: f64| -> Result<()> {
            if !(-1.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} correlation {v} outside [-1,1]"
                )));
            }
            Ok(())
        };
        if let Some(v) = self.uq_corr {
            check_corr("uq_corr", v)?;
        }
        for m in [&self.channel_corr, &self.cross_corr].into_iter().flatten() {
            for row in m {
                for &v in row {
                    check_corr("matrix", v)?;
                }
            }
        }
        for v in [self.r_psnr, self.s_psnr] {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "EvalReport psnr".into(),
                    detail: format!("{v}"),
                });
            }
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// JSON value with wall-clock timing fields removed; two reruns of the
    /// same job must agree on this value byte for byte.
    pub fn metrics_value(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report is serializable");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timings");
        }
        v
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
