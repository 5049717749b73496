//! Aleatoric, epistemic (MC dropout) and ensemble uncertainty maps.

use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::nn::{Mode, Model, ModelOutputs};
use crate::objectives::total_logvar;
use crate::rng::subseed;
use crate::types::ImageTensor;

/// Per-pixel standard-deviation maps derived from the log-variance head.
#[derive(Debug, Clone)]
pub struct UncertaintyMaps {
    pub sigma_tex: Array2<f32>,
    pub sigma_light: Array2<f32>,
    pub sigma_nl: Array2<f32>,
    /// From log-sum-exp aggregation; dominates every channel map.
    pub sigma_total: Array2<f32>,
}

/// `σ_c = exp(logvar_c / 2)` per source channel plus the aggregated total.
pub fn aleatoric_maps(out: &ModelOutputs) -> Result<UncertaintyMaps> {
    let lv = out.logvar.as_ref().ok_or_else(|| {
        Error::Unsupported("model has no log-variance head; aleatoric maps unavailable".into())
    })?;
    let (_, h, w) = lv.dim();
    let channel = |c: usize| -> Array2<f32> {
        let mut m = Array2::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                m[[y, x]] = (lv[[c, y, x]] / 2.0).exp();
            }
        }
        m
    };
    let total64 = total_logvar(&lv.mapv(|v| v as f64));
    Ok(UncertaintyMaps {
        sigma_tex: channel(0),
        sigma_light: channel(1),
        sigma_nl: channel(2),
        sigma_total: total64.mapv(|v| (v / 2.0).exp() as f32),
    })
}

/// Result of `T` stochastic forward passes.
#[derive(Debug, Clone)]
pub struct McDropoutResult {
    pub mean_r: ImageTensor,
    pub mean_s: ImageTensor,
    pub mean_n: Option<ImageTensor>,
    /// Log-variance averaged across passes (when the model has the head).
    pub mean_logvar: Option<Array3<f32>>,
    /// Per-pixel epistemic std: population variance over passes, averaged
    /// over color channels, square-rooted.
    pub sigma_epi_r: Array2<f64>,
    pub sigma_epi_s: Array2<f64>,
}

/// MC dropout: `T` seeded stochastic passes, per Eq.-style population
/// variance (divide by T). Requires a dropout-capable model and `T >= 2`.
pub fn mc_dropout(model: &Model, input: &ImageTensor, passes: usize, seed: u64) -> Result<McDropoutResult> {
    if passes < 2 {
        return Err(Error::InvalidConfig(format!(
            "mc_dropout needs T >= 2, got {passes}"
        )));
    }
    if !model.arch().is_unet() {
        return Err(Error::Unsupported(
            "mc_dropout requires a dropout-capable encoder".into(),
        ));
    }
    let mut outs: Vec<ModelOutputs> = Vec::with_capacity(passes);
    for t in 0..passes {
        let pass_seed = subseed(seed, "mc", t as u64);
        outs.push(model.forward(input, Mode::Stochastic { seed: pass_seed })?);
    }
    let mean_image = |get: &dyn Fn(&ModelOutputs) -> &ImageTensor| -> ImageTensor {
        let (h, w) = (input.height(), input.width());
        let mut acc = Array3::<f64>::zeros((3, h, w));
        for o in &outs {
            acc += &get(o).to_f64();
        }
        acc /= passes as f64;
        ImageTensor::new(acc.mapv(|v| v as f32)).expect("3 channels")
    };
    let mean_r = mean_image(&|o| &o.r_hat);
    let mean_s = mean_image(&|o| &o.s_hat);
    let mean_n = outs[0]
        .n_hat
        .as_ref()
        .map(|_| mean_image(&|o| o.n_hat.as_ref().expect("all passes share heads")));
    let mean_logvar = outs[0].logvar.as_ref().map(|_| {
        let mut acc = outs[0].logvar.clone().unwrap().mapv(|v| v as f64);
        for o in &outs[1..] {
            acc += &o.logvar.as_ref().unwrap().mapv(|v| v as f64);
        }
        (acc / passes as f64).mapv(|v| v as f32)
    });
    let sigma_epi = |get: &dyn Fn(&ModelOutputs) -> &ImageTensor, mean: &ImageTensor| {
        epistemic_std(&outs.iter().map(|o| get(o).clone()).collect::<Vec<_>>(), mean)
    };
    let sigma_epi_r = sigma_epi(&|o| &o.r_hat, &mean_r);
    let sigma_epi_s = sigma_epi(&|o| &o.s_hat, &mean_s);
    Ok(McDropoutResult {
        mean_r,
        mean_s,
        mean_n,
        mean_logvar,
        sigma_epi_r,
        sigma_epi_s,
    })
}

/// Two-pass population variance over stored passes, channel-averaged.
fn epistemic_std(passes: &[ImageTensor], mean: &ImageTensor) -> Array2<f64> {
    let (h, w) = (mean.height(), mean.width());
    let mean64 = mean.to_f64();
    let mut var = Array3::<f64>::zeros((3, h, w));
    for p in passes {
        let d = &p.to_f64() - &mean64;
        var += &(&d * &d);
    }
    var /= passes.len() as f64;
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[[y, x]] = ((var[[0, y, x]] + var[[1, y, x]] + var[[2, y, x]]) / 3.0).sqrt();
        }
    }
    out
}

/// Mean prediction and member spread of a deep ensemble.
#[derive(Debug, Clone)]
pub struct EnsemblePrediction {
    pub mean_r: ImageTensor,
    pub mean_s: ImageTensor,
    pub mean_n: Option<ImageTensor>,
    /// Population std across members, per pixel per channel.
    pub std_r: Array3<f64>,
    pub std_s: Array3<f64>,
    /// Channel-averaged std maps (the scalar per-pixel uncertainty).
    pub std_r_map: Array2<f64>,
    pub std_s_map: Array2<f64>,
}

/// Elementwise mean and population std across member outputs. A single
/// member degenerates to its own prediction with zero spread.
pub fn ensemble_predict(members: &[Model], input: &ImageTensor) -> Result<EnsemblePrediction> {
    if members.is_empty() {
        return Err(Error::InvalidConfig("ensemble needs >= 1 member".into()));
    }
    let arch = members[0].arch();
    for m in members {
        if m.arch() != arch || m.spec != members[0].spec {
            return Err(Error::InvalidConfig(
                "ensemble members must share an identical model spec".into(),
            ));
        }
    }
    let outs: Vec<ModelOutputs> = members
        .iter()
        .map(|m| m.forward(input, Mode::Deterministic))
        .collect::<Result<_>>()?;
    let k = outs.len() as f64;
    let (h, w) = (input.height(), input.width());
    let stat = |get: &dyn Fn(&ModelOutputs) -> &ImageTensor| {
        let mut mean = Array3::<f64>::zeros((3, h, w));
        for o in &outs {
            mean += &get(o).to_f64();
        }
        mean /= k;
        let mut var = Array3::<f64>::zeros((3, h, w));
        for o in &outs {
            let d = &get(o).to_f64() - &mean;
            var += &(&d * &d);
        }
        var /= k;
        (mean, var.mapv(f64::sqrt))
    };
    let (mean_r64, std_r) = stat(&|o| &o.r_hat);
    let (mean_s64, std_s) = stat(&|o| &o.s_hat);
    let mean_n = outs[0].n_hat.as_ref().map(|_| {
        let mut acc = Array3::<f64>::zeros((3, h, w));
        for o in &outs {
            acc += &o.n_hat.as_ref().expect("shared heads").to_f64();
        }
        ImageTensor::new((acc / k).mapv(|v| v as f32)).expect("3 channels")
    });
    let chan_avg = |m: &Array3<f64>| -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                out[[y, x]] = (m[[0, y, x]] + m[[1, y, x]] + m[[2, y, x]]) / 3.0;
            }
        }
        out
    };
    Ok(EnsemblePrediction {
        mean_r: ImageTensor::new(mean_r64.mapv(|v| v as f32)).expect("3 channels"),
        mean_s: ImageTensor::new(mean_s64.mapv(|v| v as f32)).expect("3 channels"),
        mean_n,
        std_r_map: chan_avg(&std_r),
        std_s_map: chan_avg(&std_s),
        std_r,
        std_s,
    })
}

/// Normalizes a map by its 1st-99th percentiles into [0,1]; a constant map
/// renders as mid-gray.
pub fn percentile_normalize(map: &Array2<f32>) -> Array2<f32> {
    let mut vals: Vec<f32> = map.iter().cloned().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite map values"));
    let pick = |p: f64| vals[((vals.len() - 1) as f64 * p).round() as usize];
    let (lo, hi) = (pick(0.01), pick(0.99));
    if hi - lo <= f32::EPSILON {
        return Array2::from_elem(map.dim(), 0.5);
    }
    map.mapv(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
}

/// Writes a map as a 16-bit grayscale PNG after percentile normalization.
pub fn save_uncertainty_png16(map: &Array2<f32>, path: &Path) -> Result<()> {
    crate::data::ensure_parent(path)?;
    let norm = percentile_normalize(map);
    let (h, w) = norm.dim();
    let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        px.0[0] = (norm[[y as usize, x as usize]] * 65535.0).round() as u16;
    }
    buf.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: format!("png encode: {e}"),
    })
}

/// Reads a container written by [`save_maps_container`].
pub fn load_maps_container(path: &Path) -> Result<Vec<(String, Array2<f32>)>> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = || Error::Checkpoint(format!("malformed map container {}", path.display()));
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > bytes.len() {
            return Err(Error::Checkpoint("truncated map container".into()));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    if take(&mut off, 8)? != b"IUQARR1\0" {
        return Err(bad());
    }
    let count = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut off, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec()).map_err(|_| bad())?;
        let h = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let data: Vec<f32> = take(&mut off, h * w * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((
            name,
            Array2::from_shape_vec((h, w), data).map_err(|_| bad())?,
        ));
    }
    Ok(out)
}

/// Raw float maps in a small named-array container (for metrics tooling).
pub fn save_maps_container(maps: &[(&str, &Array2<f32>)], path: &Path) -> Result<()> {
    crate::data::ensure_parent(path)?;
    let mut bytes: Vec<u8> = Vec::new();
    bytes.extend_from_slice(b"IUQARR1\0");
    bytes.extend_from_slice(&(maps.len() as u32).to_le_bytes());
    for (name, map) in maps {
        let nb = name.as_bytes();
        bytes.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        bytes.extend_from_slice(nb);
        let (h, w) = map.dim();
        bytes.extend_from_slice(&(h as u32).to_le_bytes());
        bytes.extend_from_slice(&(w as u32).to_le_bytes());
        for v in map.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_model, Arch, ModelSpec};
    use approx::assert_abs_diff_eq;

    fn toy_model(arch: Arch, dropout: f32) -> Model {
        build_model(
            &ModelSpec {
                base_channels: 6,
                levels: 2,
                unc_hidden: 8,
                dropout_rate: dropout,
                ..ModelSpec::new(arch)
            },
            17,
        )
        .unwrap()
    }

    fn outputs_with_logvar(lv: f32) -> ModelOutputs {
        ModelOutputs {
            r_hat: ImageTensor::splat(0.5, 4, 4),
            s_hat: ImageTensor::splat(0.5, 4, 4),
            n_hat: None,
            logvar: Some(Array3::from_elem((3, 4, 4), lv)),
            i_hat: ImageTensor::splat(0.25, 4, 4),
        }
    }

    #[test]
    fn aleatoric_map_examples() {
        let maps = aleatoric_maps(&outputs_with_logvar(0.0)).unwrap();
        assert_abs_diff_eq!(maps.sigma_tex[[0, 0]], 1.0, epsilon = 1e-6);

        let maps = aleatoric_maps(&outputs_with_logvar(-10.0)).unwrap();
        // exp((-10 + ln 3) / 2)
        assert_abs_diff_eq!(maps.sigma_total[[0, 0]], 0.011_670_467, epsilon = 1e-6);

        // dominance over each channel on random log-variances
        use rand::Rng;
        let mut rng = crate::rng::stream(3, "alea", 0);
        for _ in 0..50 {
            let lv = Array3::from_shape_simple_fn((3, 3, 3), || rng.gen_range(-10.0f32..2.0));
            let mut out = outputs_with_logvar(0.0);
            out.logvar = Some(lv);
            let maps = aleatoric_maps(&out).unwrap();
            for y in 0..3 {
                for x in 0..3 {
                    let mx = maps.sigma_tex[[y, x]]
                        .max(maps.sigma_light[[y, x]])
                        .max(maps.sigma_nl[[y, x]]);
                    assert!(maps.sigma_total[[y, x]] >= mx - 1e-6);
                }
            }
        }
    }

    #[test]
    fn baseline_has_no_aleatoric_maps() {
        let out = ModelOutputs {
            logvar: None,
            ..outputs_with_logvar(0.0)
        };
        assert!(matches!(aleatoric_maps(&out), Err(Error::Unsupported(_))));
    }

    #[test]
    fn mc_dropout_variance_matches_stored_pass_oracle() {
        let model = toy_model(Arch::ProposedFull, 0.2);
        let img = ImageTensor::splat(0.4, 16, 16);
        let res = mc_dropout(&model, &img, 6, 99).unwrap();

        // replay the exact passes and brute-force the variance
        let passes: Vec<ImageTensor> = (0..6)
            .map(|t| {
                let seed = subseed(99, "mc", t as u64);
                model
                    .forward(&img, Mode::Stochastic { seed })
                    .unwrap()
                    .r_hat
            })
            .collect();
        let mean = {
            let mut acc = Array3::<f64>::zeros((3, 16, 16));
            for p in &passes {
                acc += &p.to_f64();
            }
            ImageTensor::new((acc / 6.0).mapv(|v| v as f32)).unwrap()
        };
        let oracle = epistemic_std(&passes, &mean);
        for (a, b) in res.sigma_epi_r.iter().zip(oracle.iter()) {
            assert_eq!(a, b);
        }
        assert!(res.sigma_epi_r.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn zero_dropout_rate_gives_zero_epistemic() {
        let model = toy_model(Arch::ProposedNoskip, 0.0);
        let img = ImageTensor::splat(0.3, 16, 16);
        let res = mc_dropout(&model, &img, 4, 3).unwrap();
        assert!(res.sigma_epi_r.iter().all(|&v| v == 0.0));
        assert!(res.sigma_epi_s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mc_dropout_needs_two_passes() {
        let model = toy_model(Arch::ProposedFull, 0.1);
        let img = ImageTensor::splat(0.3, 16, 16);
        assert!(mc_dropout(&model, &img, 1, 0).is_err());
    }

    #[test]
    fn ensemble_identical_members_have_zero_std() {
        let a = toy_model(Arch::Unet3Physics, 0.1);
        let b = toy_model(Arch::Unet3Physics, 0.1); // same seed -> same params
        let img = ImageTensor::splat(0.6, 16, 16);
        let pred = ensemble_predict(&[a, b], &img).unwrap();
        assert!(pred.std_r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_member_ensemble_degenerates_to_the_model() {
        let a = toy_model(Arch::Unet3Physics, 0.1);
        let img = ImageTensor::splat(0.6, 16, 16);
        let direct = a.forward(&img, Mode::Deterministic).unwrap();
        let pred = ensemble_predict(&std::slice::from_ref(&a), &img).unwrap();
        assert!(pred.mean_r.max_abs_diff(&direct.r_hat) < 1e-7);
        assert!(pred.std_r.iter().all(|&v| v == 0.0));
        assert!(pred.std_s_map.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ensemble_uniform_offset_std() {
        // two synthetic member outputs differing by +0.1 -> std 0.05
        let x0 = ImageTensor::splat(0.4, 4, 4).to_f64();
        let x1 = ImageTensor::splat(0.5, 4, 4).to_f64();
        let mean = (&x0 + &x1) / 2.0;
        let var = (&(&x0 - &mean) * &(&x0 - &mean) + &(&x1 - &mean) * &(&x1 - &mean)) / 2.0;
        let std = var.mapv(f64::sqrt);
        // f32 inputs carry their representation error into the f64 stats
        assert_abs_diff_eq!(std[[0, 0, 0]], 0.05, epsilon = 1e-7);
    }

    #[test]
    fn ensemble_mean_is_arithmetic_average() {
        let a = toy_model(Arch::Unet3Physics, 0.1);
        let b = build_model(
            &ModelSpec {
                base_channels: 6,
                levels: 2,
                unc_hidden: 8,
                ..ModelSpec::new(Arch::Unet3Physics)
            },
            18,
        )
        .unwrap();
        let img = ImageTensor::splat(0.6, 16, 16);
        let oa = a.forward(&img, Mode::Deterministic).unwrap();
        let ob = b.forward(&img, Mode::Deterministic).unwrap();
        let pred = ensemble_predict(&[a, b], &img).unwrap();
        let manual = (oa.r_hat.to_f64() + ob.r_hat.to_f64()) / 2.0;
        let diff = (&pred.mean_r.to_f64() - &manual)
            .iter()
            .map(|v| v.abs())
            .fold(0.0f64, f64::max);
        assert!(diff < 1e-7);
        assert!(pred.std_r.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn spec_mismatch_is_rejected() {
        let a = toy_model(Arch::Unet3Physics, 0.1);
        let b = toy_model(Arch::Unet2, 0.1);
        let img = ImageTensor::splat(0.6, 16, 16);
        assert!(ensemble_predict(&[a, b], &img).is_err());
    }

    #[test]
    fn map_container_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("maps.arr");
        let a = Array2::from_shape_fn((4, 6), |(y, x)| (y * 6 + x) as f32 * 0.1);
        let b = Array2::from_elem((2, 2), -3.5f32);
        save_maps_container(&[("sigma_tex", &a), ("sigma_total", &b)], &path).unwrap();
        let loaded = load_maps_container(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "sigma_tex");
        assert_eq!(loaded[0].1, a);
        assert_eq!(loaded[1].1, b);

        // 16-bit export with percentile normalization also works
        let png = dir.path().join("sigma.png");
        save_uncertainty_png16(&a, &png).unwrap();
        assert!(png.exists());
    }

    #[test]
    fn percentile_normalization_handles_constants() {
        let constant = Array2::from_elem((8, 8), 0.123f32);
        let norm = percentile_normalize(&constant);
        assert!(norm.iter().all(|&v| v == 0.5));

        let ramp = Array2::from_shape_fn((8, 8), |(y, x)| (y * 8 + x) as f32);
        let norm = percentile_normalize(&ramp);
        assert!(norm.iter().cloned().fold(0.0f32, f32::max) <= 1.0);
        assert!(norm.iter().cloned().fold(1.0f32, f32::min) >= 0.0);
    }
}
