//! Quantitative evaluation: PSNR, uncertainty-error correlation, channel
//! specialization matrices, sigma statistics, filtering curves, and the
//! out-of-distribution probe.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::index::sample as index_sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mode, Model};
use crate::rng::stream;
use crate::trainer::FrameSource;
use crate::types::ImageTensor;
use crate::uncertainty::{aleatoric_maps, ensemble_predict, mc_dropout, UncertaintyMaps};

/// PSNR cap applied at (and above) zero MSE.
pub const PSNR_CAP_DB: f64 = 100.0;

/// `10 log10(max² / MSE)`, capped at 100 dB.
pub fn psnr(pred: &ImageTensor, gt: &ImageTensor, max_val: f64) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch {
            context: "psnr".into(),
            expected: gt.data().shape().to_vec(),
            got: pred.data().shape().to_vec(),
        });
    }
    let mse = pred
        .data()
        .iter()
        .zip(gt.data().iter())
        .map(|(&a, &b)| {
            let d = (a - b) as f64;
            d * d
        })
        .sum::<f64>()
        / pred.data().len() as f64;
    Ok(psnr_from_mse(mse, max_val))
}

pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP_DB)
}

/// Two-pass Pearson correlation. Errors on fewer than two points or zero
/// variance in either input.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            context: "pearson".into(),
            expected: vec![x.len()],
            got: vec![y.len()],
        });
    }
    if x.len() < 2 {
        return Err(Error::Degenerate("pearson needs >= 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Degenerate("pearson on zero-variance input".into()));
    }
    Ok((cov / (vx.sqrt() * vy.sqrt())).clamp(-1.0, 1.0))
}

/// Flattened, aligned per-pixel arrays over an evaluation set, subsampled
/// without replacement to a fixed budget. Arrays that a model family cannot
/// produce (e.g. sigma channels for baselines) are empty.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PixelSample {
    pub sigma_tex: Vec<f64>,
    pub sigma_light: Vec<f64>,
    pub sigma_nl: Vec<f64>,
    pub sigma_total: Vec<f64>,
    /// Channel-mean absolute error per component.
    pub err_r: Vec<f64>,
    pub err_s: Vec<f64>,
    pub err_n: Vec<f64>,
    /// Channel-mean absolute reconstruction error |I - Î|.
    pub recon_abs: Vec<f64>,
    /// Channel-mean squared reconstruction error.
    pub recon_sq: Vec<f64>,
    pub subsample_size: usize,
    pub subsample_seed: u64,
}

impl PixelSample {
    pub fn len(&self) -> usize {
        self.recon_abs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recon_abs.is_empty()
    }

    fn check_aligned(&self) -> Result<()> {
        let n = self.recon_abs.len();
        for (name, v) in [
            ("sigma_tex", &self.sigma_tex),
            ("sigma_light", &self.sigma_light),
            ("sigma_nl", &self.sigma_nl),
            ("sigma_total", &self.sigma_total),
            ("err_r", &self.err_r),
            ("err_s", &self.err_s),
            ("err_n", &self.err_n),
            ("recon_sq", &self.recon_sq),
        ] {
            if !v.is_empty() && v.len() != n {
                return Err(Error::ShapeMismatch {
                    context: format!("PixelSample.{name}"),
                    expected: vec![n],
                    got: vec![v.len()],
                });
            }
        }
        Ok(())
    }

    /// Seeded subsample without replacement; identity when the sample
    /// already fits the budget. Indices are re-sorted so the result is
    /// order-deterministic.
    pub fn subsampled(self) -> Result<PixelSample> {
        self.check_aligned()?;
        let n = self.len();
        if n <= self.subsample_size {
            return Ok(self);
        }
        let mut idx: Vec<usize> =
            index_sample(&mut stream(self.subsample_seed, "subsample", 0), n, self.subsample_size)
                .into_vec();
        idx.sort_unstable();
        let gather = |v: &Vec<f64>| -> Vec<f64> {
            if v.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| v[i]).collect()
            }
        };
        Ok(PixelSample {
            sigma_tex: gather(&self.sigma_tex),
            sigma_light: gather(&self.sigma_light),
            sigma_nl: gather(&self.sigma_nl),
            sigma_total: gather(&self.sigma_total),
            err_r: gather(&self.err_r),
            err_s: gather(&self.err_s),
            err_n: gather(&self.err_n),
            recon_abs: gather(&self.recon_abs),
            recon_sq: gather(&self.recon_sq),
            subsample_size: self.subsample_size,
            subsample_seed: self.subsample_seed,
        })
    }
}

/// Pearson correlation between predicted sigma and absolute reconstruction
/// error over the sample.
pub fn uq_correlation(sample: &PixelSample) -> Result<f64> {
    if sample.sigma_total.is_empty() {
        return Err(Error::Unsupported("sample carries no sigma values".into()));
    }
    pearson(&sample.sigma_total, &sample.recon_abs)
}

/// (inter-channel sigma correlations, sigma x component-error correlations).
/// Rows are ordered (tex, light, nl); cross-correlation columns (R, S, N).
pub fn channel_matrices(sample: &PixelSample) -> Result<([[f64; 3]; 3], [[f64; 3]; 3])> {
    let sigmas = [&sample.sigma_tex, &sample.sigma_light, &sample.sigma_nl];
    let errs = [&sample.err_r, &sample.err_s, &sample.err_n];
    if sigmas.iter().any(|s| s.is_empty()) {
        return Err(Error::Unsupported("sample carries no sigma channels".into()));
    }
    if errs.iter().any(|e| e.is_empty()) {
        return Err(Error::Unsupported("sample carries no component errors".into()));
    }
    let mut inter = [[0.0; 3]; 3];
    let mut cross = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inter[i][j] = if i == j {
                1.0
            } else {
                pearson(sigmas[i], sigmas[j])?
            };
            cross[i][j] = pearson(sigmas[i], errs[j])?;
        }
    }
    Ok((inter, cross))
}

/// One row of the uncertainty-guided filtering study.
pub type FilteringRow = (f64, f64, f64);

/// For each keep fraction: mean squared reconstruction error over the
/// lowest-sigma pixels (ties broken by pixel index) vs. a same-size random
/// subset.
pub fn filtering_curve(
    sample: &PixelSample,
    keep_fractions: &[f64],
    seed: u64,
) -> Result<Vec<FilteringRow>> {
    if sample.sigma_total.is_empty() {
        return Err(Error::Unsupported("sample carries no sigma values".into()));
    }
    sample.check_aligned()?;
    let n = sample.len();
    if n == 0 {
        return Err(Error::Degenerate("empty sample".into()));
    }
    let mut by_sigma: Vec<usize> = (0..n).collect();
    by_sigma.sort_by(|&a, &b| {
        sample.sigma_total[a]
            .partial_cmp(&sample.sigma_total[b])
            .expect("finite sigma")
            .then(a.cmp(&b))
    });
    let mut rows = Vec::with_capacity(keep_fractions.len());
    for (fi, &keep) in keep_fractions.iter().enumerate() {
        let m = (keep * n as f64).round() as usize;
        if m == 0 {
            return Err(Error::Degenerate(format!("keep fraction {keep} keeps no pixels")));
        }
        let m = m.min(n);
        let guided: f64 =
            by_sigma[..m].iter().map(|&i| sample.recon_sq[i]).sum::<f64>() / m as f64;
        let random: f64 = if m == n {
            sample.recon_sq.iter().sum::<f64>() / n as f64
        } else {
            let idx = index_sample(&mut stream(seed, "filter-random", fi as u64), n, m);
            idx.iter().map(|i| sample.recon_sq[i]).sum::<f64>() / m as f64
        };
        rows.push((keep, guided, random));
    }
    Ok(rows)
}

/// Mean and population std of each sigma channel.
pub fn sigma_statistics(sample: &PixelSample) -> BTreeMap<String, (f64, f64)> {
    let mut out = BTreeMap::new();
    let stat = |v: &[f64]| -> Option<(f64, f64)> {
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Some((mean, var.sqrt()))
    };
    for (name, v) in [
        ("tex", &sample.sigma_tex),
        ("light", &sample.sigma_light),
        ("nl", &sample.sigma_nl),
        ("total", &sample.sigma_total),
    ] {
        if let Some(s) = stat(v) {
            out.insert(name.to_string(), s);
        }
    }
    out
}

/// Out-of-distribution probe: correlations of the non-Lambertian and
/// texture sigma channels with the predicted residual `N̂` on an arbitrary
/// photo. A missing specular response surfaces as a degenerate-input error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OodProbe {
    pub corr_nl: f64,
    pub corr_tex: f64,
}

pub fn ood_probe(model: &Model, photo: &ImageTensor) -> Result<OodProbe> {
    let out = model.forward(photo, Mode::Deterministic)?;
    let n_hat = out.n_hat.as_ref().ok_or_else(|| {
        Error::Unsupported("ood probe needs a non-Lambertian head".into())
    })?;
    let maps = aleatoric_maps(&out)?;
    let (h, w) = maps.sigma_nl.dim();
    let mut n_flat = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let d = n_hat.data();
            n_flat.push(((d[[0, y, x]] + d[[1, y, x]] + d[[2, y, x]]) / 3.0) as f64);
        }
    }
    let flat = |m: &Array2<f32>| -> Vec<f64> { m.iter().map(|&v| v as f64).collect() };
    let corr_nl = pearson(&flat(&maps.sigma_nl), &n_flat)
        .map_err(|_| Error::Degenerate("no specular signal: predicted N is constant".into()))?;
    let corr_tex = pearson(&flat(&maps.sigma_tex), &n_flat)
        .map_err(|_| Error::Degenerate("no specular signal: predicted N is constant".into()))?;
    Ok(OodProbe { corr_nl, corr_tex })
}

/// How a model family produces predictions at evaluation time.
pub enum Predictor<'a> {
    /// One deterministic forward pass.
    Single(&'a Model),
    /// Elementwise mean over members; spread is the uncertainty.
    Ensemble(&'a [Model]),
    /// Mean over stochastic passes; MC spread is the epistemic estimate.
    McDropout {
        model: &'a Model,
        passes: usize,
        seed: u64,
    },
}

pub struct PredictionBundle {
    pub r_hat: ImageTensor,
    pub s_hat: ImageTensor,
    pub n_hat: Option<ImageTensor>,
    pub i_hat: ImageTensor,
    pub sigma: Option<UncertaintyMaps>,
    /// Per-pixel scalar uncertainty used for UQ-Corr and filtering.
    pub uq_map: Option<Array2<f64>>,
    /// Per-pixel epistemic std maps (R, S).
    pub epi: Option<(Array2<f64>, Array2<f64>)>,
}

impl Predictor<'_> {
    pub fn arch_name(&self) -> String {
        match self {
            Predictor::Single(m) => m.arch().name().to_string(),
            Predictor::Ensemble(ms) => format!("deep_ens{}", ms.len()),
            Predictor::McDropout { model, passes, .. } => {
                format!("mc_dropout{}_{}", passes, model.arch().name())
            }
        }
    }

    pub fn params_count(&self) -> usize {
        match self {
            Predictor::Single(m) => m.count_parameters(),
            Predictor::Ensemble(ms) => ms.iter().map(|m| m.count_parameters()).sum(),
            Predictor::McDropout { model, .. } => model.count_parameters(),
        }
    }

    pub fn predict(&self, img: &ImageTensor) -> Result<PredictionBundle> {
        match self {
            Predictor::Single(model) => {
                let out = model.forward(img, Mode::Deterministic)?;
                let sigma = out.logvar.as_ref().map(|_| aleatoric_maps(&out)).transpose()?;
                let uq_map = sigma
                    .as_ref()
                    .map(|s| s.sigma_total.mapv(|v| v as f64));
                Ok(PredictionBundle {
                    r_hat: out.r_hat,
                    s_hat: out.s_hat,
                    n_hat: out.n_hat,
                    i_hat: out.i_hat,
                    sigma,
                    uq_map,
                    epi: None,
                })
            }
            Predictor::Ensemble(members) => {
                let pred = ensemble_predict(members, img)?;
                let uq = (&pred.std_r_map + &pred.std_s_map) / 2.0;
                let i_hat = match &pred.mean_n {
                    Some(n) => pred.mean_r.hadamard(&pred.mean_s).add(n),
                    None => pred.mean_r.hadamard(&pred.mean_s),
                };
                Ok(PredictionBundle {
                    r_hat: pred.mean_r,
                    s_hat: pred.mean_s,
                    n_hat: pred.mean_n,
                    i_hat,
                    sigma: None,
                    uq_map: Some(uq),
                    epi: Some((pred.std_r_map, pred.std_s_map)),
                })
            }
            Predictor::McDropout { model, passes, seed } => {
                let res = mc_dropout(model, img, *passes, *seed)?;
                let i_hat = match &res.mean_n {
                    Some(n) => res.mean_r.hadamard(&res.mean_s).add(n),
                    None => res.mean_r.hadamard(&res.mean_s),
                };
                let sigma = match &res.mean_logvar {
                    Some(lv) => {
                        let out = crate::nn::ModelOutputs {
                            r_hat: res.mean_r.clone(),
                            s_hat: res.mean_s.clone(),
                            n_hat: res.mean_n.clone(),
                            logvar: Some(lv.clone()),
                            i_hat: i_hat.clone(),
                        };
                        Some(aleatoric_maps(&out)?)
                    }
                    None => None,
                };
                let uq_map = sigma.as_ref().map(|s| s.sigma_total.mapv(|v| v as f64));
                Ok(PredictionBundle {
                    r_hat: res.mean_r,
                    s_hat: res.mean_s,
                    n_hat: res.mean_n,
                    i_hat,
                    sigma,
                    uq_map,
                    epi: Some((res.sigma_epi_r, res.sigma_epi_s)),
                })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub subsample_size: usize,
    pub subsample_seed: u64,
    pub keep_fractions: Vec<f64>,
    pub filter_seed: u64,
    /// Number of leading frames whose panels are kept for figures.
    pub keep_panels: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            subsample_size: 200_000,
            subsample_seed: 0,
            keep_fractions: vec![1.0, 0.75, 0.5, 0.25],
            filter_seed: 0,
            keep_panels: 3,
        }
    }
}

/// Panels of one evaluated frame kept around for qualitative figures.
pub struct FramePanels {
    pub input: ImageTensor,
    pub r_hat: ImageTensor,
    pub s_hat: ImageTensor,
    pub n_hat: Option<ImageTensor>,
    pub sigma_tex: Option<Array2<f32>>,
    pub sigma_nl: Option<Array2<f32>>,
}

/// Everything a run evaluation produces before being packed into an
/// [`crate::types::EvalReport`].
pub struct Evaluation {
    pub r_psnr: f64,
    pub s_psnr: f64,
    pub recon_psnr: Option<f64>,
    pub uq_corr: Option<f64>,
    pub sigma_means: BTreeMap<String, (f64, f64)>,
    pub channel_corr: Option<[[f64; 3]; 3]>,
    pub cross_corr: Option<[[f64; 3]; 3]>,
    pub filtering_curve: Vec<FilteringRow>,
    pub epistemic: Option<(f64, f64)>,
    pub infer_ms: f64,
    pub sample: PixelSample,
    pub panels: Vec<FramePanels>,
}

/// Evaluates a predictor over test frames: per-frame PSNRs (averaged), the
/// pixel sample and every uncertainty analysis the model family supports.
pub fn evaluate(
    predictor: &Predictor,
    frames: &dyn FrameSource,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    if frames.is_empty() {
        return Err(Error::InvalidConfig("empty evaluation set".into()));
    }
    let mut r_psnrs = Vec::new();
    let mut s_psnrs = Vec::new();
    let mut recon_psnrs = Vec::new();
    let mut sample = PixelSample {
        subsample_size: opts.subsample_size,
        subsample_seed: opts.subsample_seed,
        ..Default::default()
    };
    let mut epi_sums = (0.0f64, 0.0f64);
    let mut epi_count = 0usize;
    let mut panels = Vec::new();
    let started = std::time::Instant::now();

    for idx in 0..frames.len() {
        let triple = frames.get(idx)?;
        let pred = predictor.predict(&triple.i)?;
        r_psnrs.push(psnr(&pred.r_hat, &triple.r, 1.0)?);
        s_psnrs.push(psnr(&pred.s_hat, &triple.s, 1.0)?);
        if pred.n_hat.is_some() {
            recon_psnrs.push(psnr(&pred.i_hat, &triple.i, 1.0)?);
        }

        let (h, w) = (triple.i.height(), triple.i.width());
        let chan_mean_abs = |a: &ImageTensor, b: &ImageTensor, y: usize, x: usize| -> f64 {
            let (da, db) = (a.data(), b.data());
            let mut acc = 0.0f64;
            for c in 0..3 {
                acc += ((da[[c, y, x]] - db[[c, y, x]]) as f64).abs();
            }
            acc / 3.0
        };
        for y in 0..h {
            for x in 0..w {
                sample.err_r.push(chan_mean_abs(&pred.r_hat, &triple.r, y, x));
                sample.err_s.push(chan_mean_abs(&pred.s_hat, &triple.s, y, x));
                if let Some(n_hat) = &pred.n_hat {
                    sample.err_n.push(chan_mean_abs(n_hat, &triple.n, y, x));
                }
                let abs = chan_mean_abs(&pred.i_hat, &triple.i, y, x);
                sample.recon_abs.push(abs);
                let (di, dh) = (triple.i.data(), pred.i_hat.data());
                let mut sq = 0.0f64;
                for c in 0..3 {
                    let d = (dh[[c, y, x]] - di[[c, y, x]]) as f64;
                    sq += d * d;
                }
                sample.recon_sq.push(sq / 3.0);
                if let Some(s) = &pred.sigma {
                    sample.sigma_tex.push(s.sigma_tex[[y, x]] as f64);
                    sample.sigma_light.push(s.sigma_light[[y, x]] as f64);
                    sample.sigma_nl.push(s.sigma_nl[[y, x]] as f64);
                }
                if let Some(uq) = &pred.uq_map {
                    sample.sigma_total.push(uq[[y, x]]);
                }
            }
        }
        if let Some((er, es)) = &pred.epi {
            epi_sums.0 += er.iter().sum::<f64>() / er.len() as f64;
            epi_sums.1 += es.iter().sum::<f64>() / es.len() as f64;
            epi_count += 1;
        }
        if panels.len() < opts.keep_panels {
            panels.push(FramePanels {
                input: triple.i.clone(),
                r_hat: pred.r_hat.clone(),
                s_hat: pred.s_hat.clone(),
                n_hat: pred.n_hat.clone(),
                sigma_tex: pred.sigma.as_ref().map(|s| s.sigma_tex.clone()),
                sigma_nl: pred.sigma.as_ref().map(|s| s.sigma_nl.clone()),
            });
        }
    }
    let infer_ms = started.elapsed().as_secs_f64() * 1000.0 / frames.len() as f64;

    let sample = sample.subsampled()?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let uq_corr = if sample.sigma_total.is_empty() {
        None
    } else {
        Some(uq_correlation(&sample)?)
    };
    let (channel_corr, cross_corr) = if !sample.sigma_tex.is_empty() && !sample.err_n.is_empty() {
        let (a, b) = channel_matrices(&sample)?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    let filtering = if sample.sigma_total.is_empty() {
        Vec::new()
    } else {
        filtering_curve(&sample, &opts.keep_fractions, opts.filter_seed)?
    };
    Ok(Evaluation {
        r_psnr: mean(&r_psnrs),
        s_psnr: mean(&s_psnrs),
        recon_psnr: if recon_psnrs.is_empty() {
            None
        } else {
            Some(mean(&recon_psnrs))
        },
        uq_corr,
        sigma_means: sigma_statistics(&sample),
        channel_corr,
        cross_corr,
        filtering_curve: filtering,
        epistemic: if epi_count > 0 {
            Some((epi_sums.0 / epi_count as f64, epi_sums.1 / epi_count as f64))
        } else {
            None
        },
        infer_ms,
        sample,
        panels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn psnr_examples() {
        assert_abs_diff_eq!(psnr_from_mse(0.01, 1.0), 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(psnr_from_mse(0.001, 1.0), 30.0, epsilon = 1e-9);
        assert_eq!(psnr_from_mse(0.0, 1.0), 100.0);
        let a = ImageTensor::splat(0.5, 4, 4);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), 100.0);
    }

    #[test]
    fn psnr_is_monotone_in_mse() {
        let mut rng = crate::rng::stream(1, "psnr", 0);
        let mut pairs: Vec<f64> = (0..100).map(|_| rng.gen_range(1e-6..1.0)).collect();
        pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in pairs.windows(2) {
            if w[1] > w[0] {
                assert!(psnr_from_mse(w[1], 1.0) < psnr_from_mse(w[0], 1.0));
            }
        }
    }

    #[test]
    fn pearson_examples() {
        assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn independent_arrays_have_near_zero_correlation() {
        let mut rng = crate::rng::stream(2, "indep", 0);
        let n = 100_000;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let r = pearson(&x, &y).unwrap();
        // 3-sigma sampling bound ~ 3 / sqrt(n)
        assert!(r.abs() < 0.02, "r = {r}");
    }

    #[test]
    fn pearson_matches_brute_force_covariance_oracle() {
        let mut rng = crate::rng::stream(3, "oracle", 0);
        for _ in 0..20 {
            let n = 500;
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..n)
                .map(|i| 0.3 * x[i] + rng.gen_range(-1.0..1.0))
                .collect();
            let r = pearson(&x, &y).unwrap();
            // independent two-pass oracle written from the definition
            let nf = n as f64;
            let mx = x.iter().sum::<f64>() / nf;
            let my = y.iter().sum::<f64>() / nf;
            let cov = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - mx) * (b - my))
                .sum::<f64>()
                / nf;
            let sx = (x.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>() / nf).sqrt();
            let sy = (y.iter().map(|b| (b - my) * (b - my)).sum::<f64>() / nf).sqrt();
            assert_abs_diff_eq!(r, cov / (sx * sy), epsilon = 1e-10);
        }
    }

    #[test]
    fn uq_correlation_examples() {
        // sigma proportional to error -> exactly 1
        let err: Vec<f64> = (1..50).map(|i| i as f64 * 0.01).collect();
        let s = PixelSample {
            sigma_total: err.iter().map(|v| 3.0 * v).collect(),
            recon_abs: err.clone(),
            recon_sq: err.iter().map(|v| v * v).collect(),
            subsample_size: 100,
            subsample_seed: 0,
            ..Default::default()
        };
        assert!((uq_correlation(&s).unwrap() - 1.0).abs() < 1e-12);

        // constant sigma is a degenerate input
        let c = PixelSample {
            sigma_total: vec![0.5; 49],
            ..s
        };
        assert!(uq_correlation(&c).is_err());
    }

    fn sample_from(sigma: Vec<f64>, sq: Vec<f64>) -> PixelSample {
        let n = sigma.len();
        PixelSample {
            sigma_total: sigma,
            recon_abs: sq.iter().map(|v| v.sqrt()).collect(),
            recon_sq: sq,
            err_r: vec![0.0; n],
            err_s: vec![0.0; n],
            subsample_size: 1000,
            subsample_seed: 0,
            ..Default::default()
        }
    }

    #[test]
    fn filtering_curve_picks_smallest_sigma() {
        let s = sample_from(vec![1.0, 2.0, 3.0, 4.0], vec![0.1, 0.2, 0.3, 0.4]);
        let rows = filtering_curve(&s, &[0.5], 0).unwrap();
        assert_abs_diff_eq!(rows[0].1, 0.15, epsilon = 1e-12);

        let rows = filtering_curve(&s, &[1.0], 0).unwrap();
        assert_abs_diff_eq!(rows[0].1, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(rows[0].2, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn anti_correlated_sigma_hurts_filtering() {
        // sigma ranks exactly opposite to error: guided keeps the WORST pixels
        let s = sample_from(vec![4.0, 3.0, 2.0, 1.0], vec![0.1, 0.2, 0.3, 0.4]);
        let rows = filtering_curve(&s, &[0.5], 7).unwrap();
        let (_, guided, random) = rows[0];
        assert_abs_diff_eq!(guided, 0.35, epsilon = 1e-12);
        assert!(guided >= random - 1e-9, "guided {guided} random {random}");
    }

    #[test]
    fn guided_mse_nonincreasing_for_rank_correlated_samples() {
        let n = 1000;
        let sigma: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let sq: Vec<f64> = sigma.iter().map(|v| v * v).collect();
        let s = sample_from(sigma, sq);
        let rows = filtering_curve(&s, &[1.0, 0.75, 0.5, 0.25], 3).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-12);
        }
    }

    #[test]
    fn filtering_rejects_empty_keeps() {
        let s = sample_from(vec![1.0, 2.0], vec![0.1, 0.2]);
        assert!(filtering_curve(&s, &[0.05], 0).is_err());
    }

    #[test]
    fn sigma_statistics_examples() {
        let mut s = PixelSample::default();
        s.sigma_tex = vec![0.25; 10];
        s.sigma_light = vec![0.0, 2.0, 0.0, 2.0];
        let stats = sigma_statistics(&s);
        assert_eq!(stats["tex"], (0.25, 0.0));
        let (m, sd) = stats["light"];
        assert_abs_diff_eq!(m, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sd, 1.0, epsilon = 1e-12);
        assert!(!stats.contains_key("nl"));
    }

    #[test]
    fn channel_matrix_structure() {
        let n = 200;
        let mut rng = crate::rng::stream(4, "chan", 0);
        let nl: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s = PixelSample {
            sigma_tex: (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
            sigma_light: (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
            sigma_nl: nl.clone(),
            sigma_total: vec![0.0; n],
            err_r: (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
            err_s: (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
            // constructed so cross[nl][N] is exactly 1
            err_n: nl.clone(),
            recon_abs: vec![0.0; n],
            recon_sq: vec![0.0; n],
            subsample_size: n,
            subsample_seed: 0,
        };
        let (inter, cross) = channel_matrices(&s).unwrap();
        for i in 0..3 {
            assert_eq!(inter[i][i], 1.0);
            for j in 0..3 {
                assert_abs_diff_eq!(inter[i][j], inter[j][i], epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(cross[2][2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn subsampling_is_deterministic() {
        let n = 5000;
        let mut rng = crate::rng::stream(5, "sub", 0);
        let mk = || PixelSample {
            sigma_total: (0..n).map(|i| i as f64).collect(),
            recon_abs: (0..n).map(|i| i as f64).collect(),
            recon_sq: (0..n).map(|i| i as f64).collect(),
            err_r: (0..n).map(|i| i as f64).collect(),
            err_s: (0..n).map(|i| i as f64).collect(),
            subsample_size: 100,
            subsample_seed: 42,
            ..Default::default()
        };
        let _ = &mut rng;
        let a = mk().subsampled().unwrap();
        let b = mk().subsampled().unwrap();
        assert_eq!(a.sigma_total, b.sigma_total);
        assert_eq!(a.len(), 100);
    }
}
