//! Loss terms and their analytic gradients.
//!
//! Losses are computed in f64 (predictions are converted from the f32
//! network side) so finite-difference verification is meaningful. All
//! reductions are means over pixels x channels, keeping the loss weights
//! resolution-independent.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ModelOutputs, OutputGrads};
use crate::types::IntrinsicTriple;

/// Loss weights and schedule constants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LossConfig {
    pub lambda_smooth: f64,
    /// Base NLL weight; the effective weight is `alpha * lambda_nll` where
    /// alpha follows [`warmup_alpha`].
    pub lambda_nll: f64,
    pub n_weight: f64,
    pub nll_warmup_epochs: usize,
    pub phase1_epochs: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_smooth: 0.02,
            lambda_nll: 1.0,
            n_weight: 0.5,
            nll_warmup_epochs: 25,
            phase1_epochs: 55,
        }
    }
}

/// Per-term loss values for one batch or sample. `total` is the exact
/// weighted composition used for backprop.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon_r: f64,
    pub recon_s: f64,
    pub recon_n: f64,
    pub recon_i: f64,
    pub smooth: f64,
    pub nll: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(&mut self, cfg: &LossConfig, alpha: f64) {
        self.total = self.recon_r
            + self.recon_s
            + self.recon_n
            + self.recon_i
            + cfg.lambda_smooth * self.smooth
            + alpha * cfg.lambda_nll * self.nll;
    }

    pub fn add_scaled(&mut self, other: &LossBreakdown, w: f64) {
        self.recon_r += w * other.recon_r;
        self.recon_s += w * other.recon_s;
        self.recon_n += w * other.recon_n;
        self.recon_i += w * other.recon_i;
        self.smooth += w * other.smooth;
        self.nll += w * other.nll;
        self.total += w * other.total;
    }
}

fn mse(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    let n = a.len() as f64;
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// Reconstruction components: MSE on R, S, (weighted) N, and on the
/// composed image `R̂∘Ŝ+N̂` against the observed image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconParts {
    pub r: f64,
    pub s: f64,
    /// Already weighted by `n_weight`; zero when the model has no N head.
    pub n: f64,
    pub i: f64,
}

/// Pure f64 reconstruction loss. `i_hat` must be the composition consistent
/// with the prediction tensors passed here.
#[allow(clippy::too_many_arguments)]
pub fn recon_loss_f64(
    r_hat: &Array3<f64>,
    s_hat: &Array3<f64>,
    n_hat: Option<&Array3<f64>>,
    i_hat: &Array3<f64>,
    gt_r: &Array3<f64>,
    gt_s: &Array3<f64>,
    gt_n: &Array3<f64>,
    gt_i: &Array3<f64>,
    n_weight: f64,
) -> ReconParts {
    ReconParts {
        r: mse(r_hat, gt_r),
        s: mse(s_hat, gt_s),
        n: n_hat.map_or(0.0, |nh| n_weight * mse(nh, gt_n)),
        i: mse(i_hat, gt_i),
    }
}

/// Gradients of the reconstruction loss with respect to R̂, Ŝ, N̂,
/// including the chain through the composition `Î = R̂∘Ŝ (+ N̂)`.
#[allow(clippy::too_many_arguments)]
pub fn recon_loss_grads_f64(
    r_hat: &Array3<f64>,
    s_hat: &Array3<f64>,
    n_hat: Option<&Array3<f64>>,
    i_hat: &Array3<f64>,
    gt_r: &Array3<f64>,
    gt_s: &Array3<f64>,
    gt_n: &Array3<f64>,
    gt_i: &Array3<f64>,
    n_weight: f64,
) -> (ReconParts, Array3<f64>, Array3<f64>, Option<Array3<f64>>) {
    let parts = recon_loss_f64(r_hat, s_hat, n_hat, i_hat, gt_r, gt_s, gt_n, gt_i, n_weight);
    let m = r_hat.len() as f64;
    let d_i_hat = (i_hat - gt_i).mapv(|v| 2.0 * v / m);
    let mut d_r = (r_hat - gt_r).mapv(|v| 2.0 * v / m);
    d_r += &(&d_i_hat * s_hat);
    let mut d_s = (s_hat - gt_s).mapv(|v| 2.0 * v / m);
    d_s += &(&d_i_hat * r_hat);
    let d_n = n_hat.map(|nh| {
        let mut d = (nh - gt_n).mapv(|v| 2.0 * n_weight * v / m);
        d += &d_i_hat;
        d
    });
    (parts, d_r, d_s, d_n)
}

/// Shape-checked wrapper over the model outputs and a ground-truth triple.
pub fn recon_loss(
    out: &ModelOutputs,
    gt: &IntrinsicTriple,
    cfg: &LossConfig,
) -> Result<ReconParts> {
    if !out.r_hat.same_shape(&gt.r) {
        return Err(Error::ShapeMismatch {
            context: "recon_loss".into(),
            expected: gt.r.data().shape().to_vec(),
            got: out.r_hat.data().shape().to_vec(),
        });
    }
    Ok(recon_loss_f64(
        &out.r_hat.to_f64(),
        &out.s_hat.to_f64(),
        out.n_hat.as_ref().map(|n| n.to_f64()).as_ref(),
        &out.i_hat.to_f64(),
        &gt.r.to_f64(),
        &gt.s.to_f64(),
        &gt.n.to_f64(),
        &gt.i.to_f64(),
        cfg.n_weight,
    ))
}

/// Total-variation smoothness: mean of squared forward differences along x
/// plus mean of squared forward differences along y (boundary excluded).
pub fn smoothness_loss_f64(s: &Array3<f64>) -> f64 {
    smoothness_grads_f64(s).0
}

pub fn smoothness_grads_f64(s: &Array3<f64>) -> (f64, Array3<f64>) {
    let (c, h, w) = s.dim();
    let mut grad = Array3::<f64>::zeros((c, h, w));
    let mut loss_x = 0.0;
    let mut loss_y = 0.0;
    let nx = (c * h * w.saturating_sub(1)) as f64;
    let ny = (c * h.saturating_sub(1) * w) as f64;
    for ci in 0..c {
        if w > 1 {
            for y in 0..h {
                for x in 0..w - 1 {
                    let d = s[[ci, y, x + 1]] - s[[ci, y, x]];
                    loss_x += d * d;
                    grad[[ci, y, x + 1]] += 2.0 * d / nx;
                    grad[[ci, y, x]] -= 2.0 * d / nx;
                }
            }
        }
        if h > 1 {
            for y in 0..h - 1 {
                for x in 0..w {
                    let d = s[[ci, y + 1, x]] - s[[ci, y, x]];
                    loss_y += d * d;
                    grad[[ci, y + 1, x]] += 2.0 * d / ny;
                    grad[[ci, y, x]] -= 2.0 * d / ny;
                }
            }
        }
    }
    let mut loss = 0.0;
    if w > 1 {
        loss += loss_x / nx;
    }
    if h > 1 {
        loss += loss_y / ny;
    }
    (loss, grad)
}

/// Stable per-pixel log-sum-exp over the three log-variance channels.
/// The output dominates the per-pixel channel max and never exceeds
/// `max + ln 3`.
pub fn total_logvar(logvar: &Array3<f64>) -> Array2<f64> {
    total_logvar_with_softmax(logvar).0
}

/// Also returns the per-channel softmax, which is the Jacobian
/// `d total / d channel` needed for backprop.
pub fn total_logvar_with_softmax(logvar: &Array3<f64>) -> (Array2<f64>, Array3<f64>) {
    let (c, h, w) = logvar.dim();
    assert_eq!(c, 3, "log-variance tensor must have 3 channels");
    let mut total = Array2::<f64>::zeros((h, w));
    let mut softmax = Array3::<f64>::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let vals = [logvar[[0, y, x]], logvar[[1, y, x]], logvar[[2, y, x]]];
            let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps = [
                (vals[0] - m).exp(),
                (vals[1] - m).exp(),
                (vals[2] - m).exp(),
            ];
            let sum: f64 = exps.iter().sum();
            total[[y, x]] = m + sum.ln();
            for ci in 0..3 {
                softmax[[ci, y, x]] = exps[ci] / sum;
            }
        }
    }
    (total, softmax)
}

/// Heteroscedastic negative log-likelihood:
/// mean over pixels of `1/2 (log σ²_total + e²/σ²_total)` where `e²` is
/// the squared reconstruction error averaged over color channels.
pub fn nll_loss(i: &Array3<f64>, i_hat: &Array3<f64>, total_lv: &Array2<f64>) -> f64 {
    nll_grads(i, i_hat, total_lv).0
}

/// Returns (loss, d/d i_hat, d/d total_logvar). The gradient flows into the
/// reconstruction through the `e²/σ²` term as well.
pub fn nll_grads(
    i: &Array3<f64>,
    i_hat: &Array3<f64>,
    total_lv: &Array2<f64>,
) -> (f64, Array3<f64>, Array2<f64>) {
    let (c, h, w) = i.dim();
    assert_eq!((h, w), total_lv.dim(), "total_logvar extent");
    let cf = c as f64;
    let p = (h * w) as f64;
    let mut loss = 0.0;
    let mut d_i_hat = Array3::<f64>::zeros((c, h, w));
    let mut d_t = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let t = total_lv[[y, x]];
            let inv_var = (-t).exp();
            let mut e2 = 0.0;
            for ci in 0..c {
                let d = i_hat[[ci, y, x]] - i[[ci, y, x]];
                e2 += d * d;
            }
            e2 /= cf;
            loss += 0.5 * (t + e2 * inv_var);
            d_t[[y, x]] = 0.5 * (1.0 - e2 * inv_var) / p;
            for ci in 0..c {
                let d = i_hat[[ci, y, x]] - i[[ci, y, x]];
                d_i_hat[[ci, y, x]] = d * inv_var / (cf * p);
            }
        }
    }
    (loss / p, d_i_hat, d_t)
}

/// Linear warmup coefficient for the NLL term during phase 2.
pub fn warmup_alpha(epoch_in_phase2: usize, cfg: &LossConfig) -> f64 {
    if cfg.nll_warmup_epochs == 0 {
        return 1.0;
    }
    (epoch_in_phase2 as f64 / cfg.nll_warmup_epochs as f64).min(1.0)
}

/// Phase-dependent switches applied to the composite loss.
#[derive(Debug, Clone, Copy)]
pub struct LossSettings {
    /// Whether the NLL term participates (phase 2 of the proposed models).
    pub include_nll: bool,
    /// Warmup coefficient for the NLL term.
    pub alpha: f64,
}

/// Full training loss with gradients on every head output. The composition
/// chain `Î = R̂∘Ŝ + N̂` routes both the recon-I and NLL error signals into
/// the component heads; the log-variance gradient passes through the
/// log-sum-exp softmax.
pub fn loss_and_grads(
    out: &ModelOutputs,
    gt: &IntrinsicTriple,
    cfg: &LossConfig,
    settings: LossSettings,
) -> Result<(LossBreakdown, OutputGrads)> {
    if !out.r_hat.same_shape(&gt.r) {
        return Err(Error::ShapeMismatch {
            context: "loss_and_grads".into(),
            expected: gt.r.data().shape().to_vec(),
            got: out.r_hat.data().shape().to_vec(),
        });
    }
    let r_hat = out.r_hat.to_f64();
    let s_hat = out.s_hat.to_f64();
    let n_hat = out.n_hat.as_ref().map(|n| n.to_f64());
    let i_hat = out.i_hat.to_f64();
    let gt_i = gt.i.to_f64();

    let (parts, mut d_r, mut d_s, mut d_n) = recon_loss_grads_f64(
        &r_hat,
        &s_hat,
        n_hat.as_ref(),
        &i_hat,
        &gt.r.to_f64(),
        &gt.s.to_f64(),
        &gt.n.to_f64(),
        &gt_i,
        cfg.n_weight,
    );
    let (smooth, d_smooth) = smoothness_grads_f64(&s_hat);
    d_s += &d_smooth.mapv(|v| cfg.lambda_smooth * v);

    let mut breakdown = LossBreakdown {
        recon_r: parts.r,
        recon_s: parts.s,
        recon_n: parts.n,
        recon_i: parts.i,
        smooth,
        ..Default::default()
    };

    let mut d_logvar_f32 = None;
    let use_nll = settings.include_nll && out.logvar.is_some();
    let alpha = if use_nll { settings.alpha } else { 0.0 };
    if use_nll {
        let lv = out.logvar.as_ref().unwrap().mapv(|v| v as f64);
        let (total_lv, softmax) = total_logvar_with_softmax(&lv);
        let (nll, d_i_hat_nll, d_t) = nll_grads(&gt_i, &i_hat, &total_lv);
        breakdown.nll = nll;
        let w = alpha * cfg.lambda_nll;
        // chain through the composition into the component heads
        let d_i_hat_w = d_i_hat_nll.mapv(|v| w * v);
        d_r += &(&d_i_hat_w * &s_hat);
        d_s += &(&d_i_hat_w * &r_hat);
        if let Some(dn) = d_n.as_mut() {
            *dn += &d_i_hat_w;
        }
        // chain through log-sum-exp into the three channels
        let d_lv = &softmax
            * &d_t
                .broadcast(lv.dim())
                .expect("per-pixel total broadcasts over channels")
                .to_owned();
        d_logvar_f32 = Some(d_lv.mapv(|v| (w * v) as f32));
    }
    breakdown.compose(cfg, alpha);
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite {
            context: "loss_and_grads".into(),
            detail: format!("{breakdown:?}"),
        });
    }

    let grads = OutputGrads {
        d_r: d_r.mapv(|v| v as f32),
        d_s: d_s.mapv(|v| v as f32),
        d_n: d_n.map(|d| d.mapv(|v| v as f32)),
        d_logvar: d_logvar_f32,
    };
    Ok((breakdown, grads))
}
