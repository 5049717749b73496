//! Procedural synthetic scenes with exact intrinsic ground truth.
//!
//! Each scene is a piecewise-constant Voronoi reflectance map, a smooth
//! shading field (linear gradient plus low-frequency sinusoids, optionally
//! cut by a hard shadow half-plane), and a handful of Gaussian specular
//! blobs forming the non-Lambertian residual.
//!
//! Frames of one scene are integer-pixel wrap-around translations of the
//! same reflectance content — the near-duplicate structure that makes
//! frame-level split leakage reproducible at desk scale — while the
//! lighting (shading direction/strength, shadow line, blob positions)
//! drifts smoothly along the frame index. The drift is what separates the
//! temporal protocol from the random one: a random split interpolates the
//! lighting trajectory, a temporal split must extrapolate past its end,
//! and a scene split sees entirely new content.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{save_image_tensor_png16, sintel::SintelDerivationConfig};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::types::{DatasetManifest, FrameRecord, ImageTensor, IntrinsicTriple};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneConfig {
    pub n_scenes: usize,
    pub frames_per_scene: usize,
    pub resolution: usize,
    /// Voronoi cell count of the reflectance map.
    pub reflectance_patches: usize,
    /// Upper bound on sinusoid frequency, in cycles per image.
    pub shading_frequency: f64,
    pub shadow_probability: f64,
    pub specular_blobs: usize,
    /// Max integer-pixel camera shift between frames of one scene.
    pub frame_jitter_px: usize,
    pub seed: u64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            n_scenes: 8,
            frames_per_scene: 8,
            resolution: 64,
            reflectance_patches: 24,
            shading_frequency: 2.0,
            shadow_probability: 0.5,
            specular_blobs: 3,
            frame_jitter_px: 4,
            seed: 0,
        }
    }
}

impl SyntheticSceneConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_scenes", self.n_scenes),
            ("frames_per_scene", self.frames_per_scene),
            ("resolution", self.resolution),
            ("reflectance_patches", self.reflectance_patches),
            ("specular_blobs", self.specular_blobs),
        ] {
            if v < 1 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.shadow_probability) {
            return Err(Error::InvalidConfig("shadow_probability must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// Generated frames with their ground-truth triples, keyed by
/// `(scene_id, frame_index)`.
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub triples: BTreeMap<(String, u32), IntrinsicTriple>,
}

impl SyntheticDataset {
    pub fn triple(&self, rec: &FrameRecord) -> Option<&IntrinsicTriple> {
        self.triples.get(&(rec.scene_id.clone(), rec.frame_index))
    }
}

fn scene_id(idx: usize) -> String {
    format!("scene_{idx:03}")
}

struct Wave {
    freq: f64,
    dir: f64,
    dir_drift: f64,
    phase: f64,
    phase_drift: f64,
    amp: f64,
}

struct ShadingParams {
    theta: f64,
    theta_drift: f64,
    grad_amp: f64,
    base: f64,
    base_drift: f64,
    waves: Vec<Wave>,
    /// (pivot y, pivot x, angle, angle drift)
    shadow: Option<(f64, f64, f64, f64)>,
}

struct Blob {
    cy: f64,
    cx: f64,
    drift_y: f64,
    drift_x: f64,
    sigma: f64,
    amp: f64,
}

struct SceneBase {
    r: ImageTensor,
    shading: ShadingParams,
    blobs: Vec<Blob>,
}

fn voronoi_reflectance(cfg: &SyntheticSceneConfig, scene: usize) -> ImageTensor {
    let res = cfg.resolution;
    let mut rng = stream(cfg.seed, "scene-reflectance", scene as u64);
    let mut sites = Vec::with_capacity(cfg.reflectance_patches);
    for _ in 0..cfg.reflectance_patches {
        let y = rng.gen_range(0.0..res as f64);
        let x = rng.gen_range(0.0..res as f64);
        let color = [
            rng.gen_range(0.05f32..0.95),
            rng.gen_range(0.05f32..0.95),
            rng.gen_range(0.05f32..0.95),
        ];
        sites.push((y, x, color));
    }
    ImageTensor::from_fn(res, res, |c, y, x| {
        let mut best = f64::INFINITY;
        let mut color = 0.0f32;
        for (sy, sx, col) in &sites {
            let d = (y as f64 - sy).powi(2) + (x as f64 - sx).powi(2);
            if d < best {
                best = d;
                color = col[c];
            }
        }
        color
    })
}

fn shading_params(cfg: &SyntheticSceneConfig, scene: usize) -> ShadingParams {
    let res = cfg.resolution as f64;
    let mut rng = stream(cfg.seed, "scene-shading", scene as u64);
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let grad_amp = rng.gen_range(0.15..0.35);
    let mut waves = Vec::new();
    for _ in 0..2 {
        waves.push(Wave {
            freq: rng.gen_range(0.5..cfg.shading_frequency.max(0.6)),
            dir: rng.gen_range(0.0..std::f64::consts::TAU),
            dir_drift: rng.gen_range(-0.9..0.9),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            phase_drift: rng.gen_range(-2.2..2.2),
            amp: rng.gen_range(0.05..0.15),
        });
    }
    let shadow = if rng.gen_bool(cfg.shadow_probability) {
        let py = rng.gen_range(0.0..res);
        let px = rng.gen_range(0.0..res);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        Some((py, px, angle, rng.gen_range(-1.1..1.1)))
    } else {
        None
    };
    ShadingParams {
        theta,
        // the light direction swings over the scene's timeline
        theta_drift: rng.gen_range(1.4..2.4) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
        grad_amp,
        base: 0.55,
        base_drift: rng.gen_range(-0.14..0.14),
        waves,
        shadow,
    }
}

/// Evaluates the shading field at temporal coordinate `t` in [0,1].
fn shading_field(p: &ShadingParams, t: f64, res: usize) -> ImageTensor {
    let theta = p.theta + t * p.theta_drift;
    let base = p.base + (t - 0.5) * p.base_drift;
    let mut field = Array2::<f32>::zeros((res, res));
    for y in 0..res {
        for x in 0..res {
            let u = x as f64 / res as f64 - 0.5;
            let v = y as f64 / res as f64 - 0.5;
            let mut s = base + p.grad_amp * 2.0 * (u * theta.cos() + v * theta.sin());
            for w in &p.waves {
                let dir = w.dir + t * w.dir_drift;
                let arg = (u * dir.cos() + v * dir.sin()) * w.freq * std::f64::consts::TAU;
                s += w.amp * (arg + w.phase + t * w.phase_drift).sin();
            }
            if let Some((py, px, angle0, drift)) = p.shadow {
                let a = angle0 + t * drift;
                if (x as f64 - px) * a.cos() + (y as f64 - py) * a.sin() > 0.0 {
                    s *= 0.45;
                }
            }
            field[[y, x]] = (s as f32).clamp(0.05, 1.0);
        }
    }
    ImageTensor::from_gray(&field)
}

fn blob_params(cfg: &SyntheticSceneConfig, scene: usize) -> Vec<Blob> {
    let res = cfg.resolution as f64;
    let mut rng = stream(cfg.seed, "scene-nonlambertian", scene as u64);
    (0..cfg.specular_blobs)
        .map(|_| {
            let dir = rng.gen_range(0.0..std::f64::consts::TAU);
            let speed = rng.gen_range(0.05..0.2) * res;
            Blob {
                cy: rng.gen_range(0.0..res),
                cx: rng.gen_range(0.0..res),
                drift_y: speed * dir.sin(),
                drift_x: speed * dir.cos(),
                sigma: rng.gen_range(res / 40.0..res / 12.0),
                amp: rng.gen_range(0.15..0.6),
            }
        })
        .collect()
}

fn blob_field(blobs: &[Blob], t: f64, res: usize) -> ImageTensor {
    let mut field = Array2::<f32>::zeros((res, res));
    for y in 0..res {
        for x in 0..res {
            let mut v = 0.0f64;
            for b in blobs {
                let cy = b.cy + t * b.drift_y;
                let cx = b.cx + t * b.drift_x;
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                v += b.amp * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
            }
            field[[y, x]] = v as f32;
        }
    }
    ImageTensor::from_gray(&field)
}

fn shift_wrap(img: &ImageTensor, dy: i64, dx: i64) -> ImageTensor {
    let (h, w) = (img.height() as i64, img.width() as i64);
    ImageTensor::from_fn(img.height(), img.width(), |c, y, x| {
        let sy = (y as i64 + dy).rem_euclid(h) as usize;
        let sx = (x as i64 + dx).rem_euclid(w) as usize;
        img.data()[[c, sy, sx]]
    })
}

fn compose_frame(base: &SceneBase, t: f64, res: usize, dy: i64, dx: i64) -> IntrinsicTriple {
    let r = shift_wrap(&base.r, dy, dx);
    let s = shift_wrap(&shading_field(&base.shading, t, res), dy, dx);
    let n_raw = shift_wrap(&blob_field(&base.blobs, t, res), dy, dx);
    let rs = r.hadamard(&s);
    // clip the composed image, then recompute N so the additive identity
    // holds exactly after clipping
    let i = ImageTensor::new(
        ndarray::Zip::from(rs.data())
            .and(n_raw.data())
            .map_collect(|&p, &n| (p + n).min(1.0)),
    )
    .expect("3 channels");
    let n = ImageTensor::new(
        ndarray::Zip::from(i.data())
            .and(rs.data())
            .map_collect(|&iv, &p| (iv - p).max(0.0)),
    )
    .expect("3 channels");
    IntrinsicTriple {
        r,
        s,
        n,
        i,
        exact_composition: true,
    }
}

/// Generates the full dataset deterministically from the config seed.
pub fn generate_synthetic_dataset(cfg: &SyntheticSceneConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut frames = Vec::new();
    let mut triples = BTreeMap::new();
    for scene in 0..cfg.n_scenes {
        let base = SceneBase {
            r: voronoi_reflectance(cfg, scene),
            shading: shading_params(cfg, scene),
            blobs: blob_params(cfg, scene),
        };
        let t_denom = (cfg.frames_per_scene - 1).max(1) as f64;
        for frame in 0..cfg.frames_per_scene {
            let mut rng = stream(
                cfg.seed,
                "frame-jitter",
                (scene * 1_000_000 + frame) as u64,
            );
            let j = cfg.frame_jitter_px as i64;
            let (dy, dx) = if j == 0 {
                (0, 0)
            } else {
                (rng.gen_range(-j..=j), rng.gen_range(-j..=j))
            };
            let t = frame as f64 / t_denom;
            let triple = compose_frame(&base, t, cfg.resolution, dy, dx);
            let sid = scene_id(scene);
            frames.push(FrameRecord {
                scene_id: sid.clone(),
                frame_index: frame as u32,
                albedo: None,
                clean: None,
                final_: None,
            });
            triples.insert((sid, frame as u32), triple);
        }
    }
    let manifest = DatasetManifest {
        name: format!("synthetic_seed{}", cfg.seed),
        resolution: cfg.resolution,
        frames,
    };
    manifest.validate()?;
    Ok(SyntheticDataset { manifest, triples })
}

/// Persists a synthetic dataset in the rendered-layer directory layout
/// (16-bit PNGs) plus `manifest.json`. The stored `clean` layer is `R∘S`,
/// so reloading with `shading_norm = 1` recovers the generated triple.
pub fn save_synthetic_dataset(ds: &SyntheticDataset, root: &Path) -> Result<DatasetManifest> {
    let mut manifest = ds.manifest.clone();
    for rec in &mut manifest.frames {
        let triple = ds
            .triples
            .get(&(rec.scene_id.clone(), rec.frame_index))
            .expect("manifest frames have triples");
        let rel = format!("{}/frame_{:04}.png", rec.scene_id, rec.frame_index);
        let albedo = root.join("albedo").join(&rel);
        let clean = root.join("clean").join(&rel);
        let final_ = root.join("final").join(&rel);
        save_image_tensor_png16(&triple.r, &albedo)?;
        save_image_tensor_png16(&triple.r.hadamard(&triple.s), &clean)?;
        save_image_tensor_png16(&triple.i, &final_)?;
        rec.albedo = Some(albedo);
        rec.clean = Some(clean);
        rec.final_ = Some(final_);
    }
    manifest.save_json(&root.join("manifest.json"))?;
    Ok(manifest)
}

/// Derivation config that reconstructs generator output from a persisted
/// synthetic dataset (no shading renormalization).
pub fn synthetic_reload_config(resolution: usize) -> SintelDerivationConfig {
    SintelDerivationConfig {
        shading_norm: 1.0,
        resolution,
        ..Default::default()
    }
}
