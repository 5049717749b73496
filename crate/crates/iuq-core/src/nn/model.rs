//! Model architectures: the shared U-Net backbone with up to four output
//! heads, and the DirectCNN baseline.
//!
//! The backbone encoder has `levels` blocks of two 3x3 convs + ReLU, each
//! followed by 2x2 max-pooling; channel width starts at `base_channels` and
//! doubles per level. The decoder mirrors it with 2x2 stride-2 transposed
//! convolutions and concatenation skips. Reflectance and shading heads are
//! 1x1 conv + sigmoid, the non-Lambertian head is 1x1 conv + ReLU, and the
//! uncertainty head is a two-layer CNN (3x3 conv + ReLU, then 1x1 conv to 3
//! log-variance channels) reading the decoder features, concatenated with
//! the raw input image when the input skip is enabled.

use ndarray::{Array3, ArrayD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{
    concat_channels, dropout_mask, maxpool2, maxpool2_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, Conv2d, ConvTranspose2d, Grads, ParamGroup, ParamMeta, ParamRegistry,
};
use crate::rng::stream;
use crate::types::ImageTensor;

/// Architecture selector, ordered by increasing capability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    DirectCnn,
    Unet2,
    Unet3Physics,
    ProposedNoskip,
    ProposedFull,
}

impl Arch {
    pub fn has_n_head(self) -> bool {
        matches!(self, Arch::Unet3Physics | Arch::ProposedNoskip | Arch::ProposedFull)
    }

    pub fn has_unc_head(self) -> bool {
        matches!(self, Arch::ProposedNoskip | Arch::ProposedFull)
    }

    pub fn is_unet(self) -> bool {
        !matches!(self, Arch::DirectCnn)
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::DirectCnn => "direct_cnn",
            Arch::Unet2 => "unet2",
            Arch::Unet3Physics => "unet3_physics",
            Arch::ProposedNoskip => "proposed_noskip",
            Arch::ProposedFull => "proposed_full",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "direct_cnn" => Arch::DirectCnn,
            "unet2" => Arch::Unet2,
            "unet3_physics" => Arch::Unet3Physics,
            "proposed_noskip" => Arch::ProposedNoskip,
            "proposed_full" => Arch::ProposedFull,
            other => return Err(Error::InvalidConfig(format!("unknown arch '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampRange {
    pub low: f32,
    pub high: f32,
}

/// Architecture configuration.
///
/// `base_channels` defaults to 24: with the 4-level two-conv backbone this
/// places the 2-head UNet at ~1.21M parameters, matching the reference
/// budget for that model family. `unc_hidden` is the hidden width of the
/// uncertainty head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub base_channels: usize,
    pub levels: usize,
    pub dropout_rate: f32,
    pub logvar_clamp: ClampRange,
    pub unc_hidden: usize,
}

impl ModelSpec {
    pub fn new(arch: Arch) -> Self {
        Self {
            arch,
            base_channels: 24,
            levels: 4,
            dropout_rate: 0.1,
            logvar_clamp: ClampRange { low: -10.0, high: 2.0 },
            unc_hidden: 160,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 1 {
            return Err(Error::InvalidConfig("base_channels must be >= 1".into()));
        }
        if self.levels < 1 {
            return Err(Error::InvalidConfig("levels must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig("dropout_rate must be in [0,1)".into()));
        }
        if self.logvar_clamp.low >= self.logvar_clamp.high {
            return Err(Error::InvalidConfig("logvar clamp low must be < high".into()));
        }
        if self.unc_hidden < 1 {
            return Err(Error::InvalidConfig("unc_hidden must be >= 1".into()));
        }
        Ok(())
    }
}

/// Forward-pass randomness: deterministic disables dropout entirely,
/// stochastic draws seeded masks so any pass can be replayed exactly.
#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Deterministic,
    Stochastic { seed: u64 },
}

/// The four-head forward outputs. `logvar` channels are ordered
/// (tex, light, nl) and clamped to the spec range; `i_hat` is the composed
/// reconstruction `R̂∘Ŝ + N̂` (or `R̂∘Ŝ` without a non-Lambertian head).
#[derive(Debug, Clone)]
pub struct ModelOutputs {
    pub r_hat: ImageTensor,
    pub s_hat: ImageTensor,
    pub n_hat: Option<ImageTensor>,
    pub logvar: Option<Array3<f32>>,
    pub i_hat: ImageTensor,
}

/// Gradients of a scalar loss with respect to the head outputs.
pub struct OutputGrads {
    pub d_r: Array3<f32>,
    pub d_s: Array3<f32>,
    pub d_n: Option<Array3<f32>>,
    pub d_logvar: Option<Array3<f32>>,
}

struct EncBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

struct DecBlock {
    up: ConvTranspose2d,
    conv1: Conv2d,
    conv2: Conv2d,
}

struct UncHead {
    conv3: Conv2d,
    conv1: Conv2d,
    skip_input: bool,
}

enum Layers {
    Direct {
        convs: Vec<Conv2d>,
    },
    Unet {
        enc: Vec<EncBlock>,
        dec: Vec<DecBlock>,
        r_head: Conv2d,
        s_head: Conv2d,
        n_head: Option<Conv2d>,
        unc: Option<UncHead>,
    },
}

pub struct Model {
    pub spec: ModelSpec,
    layers: Layers,
    layout: Vec<ParamMeta>,
}

// DirectCNN internal widths. Five 3x3 layers ending in 6 channels (R,S),
// sized to land near the reference 89K parameter budget.
const DIRECT_WIDTHS: [usize; 4] = [36, 68, 68, 36];

/// Builds a model with seeded fan-in uniform initialization.
pub fn build_model(spec: &ModelSpec, init_seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut reg = ParamRegistry::new();
    let mut rng = stream(init_seed, "init", 0);
    let layers = match spec.arch {
        Arch::DirectCnn => {
            let mut convs = Vec::new();
            let widths: Vec<usize> = std::iter::once(3)
                .chain(DIRECT_WIDTHS)
                .chain(std::iter::once(6))
                .collect();
            for i in 0..widths.len() - 1 {
                convs.push(Conv2d::new(
                    &format!("conv{}", i + 1),
                    widths[i],
                    widths[i + 1],
                    3,
                    &mut reg,
                    &mut rng,
                ));
            }
            Layers::Direct { convs }
        }
        _ => {
            let c = spec.base_channels;
            let widths: Vec<usize> = (0..spec.levels).map(|l| c << l).collect();
            let mut enc = Vec::new();
            for (l, &wl) in widths.iter().enumerate() {
                let in_ch = if l == 0 { 3 } else { widths[l - 1] };
                enc.push(EncBlock {
                    conv1: Conv2d::new(&format!("enc{l}.conv1"), in_ch, wl, 3, &mut reg, &mut rng),
                    conv2: Conv2d::new(&format!("enc{l}.conv2"), wl, wl, 3, &mut reg, &mut rng),
                });
            }
            let mut dec = Vec::new();
            // executed deepest-first: level j upsamples to the resolution of
            // encoder block j's (pre-pool) features and concatenates them;
            // the running width entering step j is always widths[j]
            for j in (0..spec.levels).rev() {
                let cur = widths[j];
                let out = if j == 0 { widths[0] } else { widths[j - 1] };
                dec.push(DecBlock {
                    up: ConvTranspose2d::new(&format!("dec{j}.up"), cur, out, &mut reg, &mut rng),
                    conv1: Conv2d::new(
                        &format!("dec{j}.conv1"),
                        out + widths[j],
                        out,
                        3,
                        &mut reg,
                        &mut rng,
                    ),
                    conv2: Conv2d::new(&format!("dec{j}.conv2"), out, out, 3, &mut reg, &mut rng),
                });
            }
            let r_head = Conv2d::new("r_head", c, 3, 1, &mut reg, &mut rng);
            let s_head = Conv2d::new("s_head", c, 3, 1, &mut reg, &mut rng);
            let n_head = spec.arch.has_n_head().then(|| {
                let mut head = Conv2d::new("n_head", c, 3, 1, &mut reg, &mut rng);
                // keep the ReLU head live at init: a dead residual pathway
                // would never receive gradient
                head.b.fill(0.05);
                head
            });
            let unc = if spec.arch.has_unc_head() {
                reg.group = ParamGroup::Uncertainty;
                let skip_input = spec.arch == Arch::ProposedFull;
                let in_ch = if skip_input { c + 3 } else { c };
                let head = UncHead {
                    conv3: Conv2d::new("unc_head.conv3", in_ch, spec.unc_hidden, 3, &mut reg, &mut rng),
                    conv1: Conv2d::new("unc_head.conv1", spec.unc_hidden, 3, 1, &mut reg, &mut rng),
                    skip_input,
                };
                reg.group = ParamGroup::Main;
                Some(head)
            } else {
                None
            };
            Layers::Unet {
                enc,
                dec,
                r_head,
                s_head,
                n_head,
                unc,
            }
        }
    };
    Ok(Model {
        spec: *spec,
        layers,
        layout: reg.layout,
    })
}

struct ConvPairCache {
    x0: Array3<f32>,
    a1: Array3<f32>,
    a2: Array3<f32>,
}

struct EncCache {
    pair: ConvPairCache,
    mask: Option<Array3<f32>>,
    pool_idx: Vec<u32>,
    pre_pool_dim: (usize, usize, usize),
}

struct DecCache {
    x_in: Array3<f32>,
    concat: Array3<f32>,
    a1: Array3<f32>,
    a2: Array3<f32>,
}

struct UncCache {
    unc_in: Array3<f32>,
    hidden: Array3<f32>,
    lv_raw: Array3<f32>,
}

enum CacheKind {
    Direct {
        inputs: Vec<Array3<f32>>,
        acts: Vec<Array3<f32>>,
        out6: Array3<f32>,
    },
    Unet {
        enc: Vec<EncCache>,
        dec: Vec<DecCache>,
        features: Array3<f32>,
        unc: Option<UncCache>,
    },
}

/// Saved intermediates of one forward pass, consumed by [`Model::backward`].
pub struct Cache {
    kind: CacheKind,
    outputs: ModelOutputs,
}

impl Model {
    pub fn arch(&self) -> Arch {
        self.spec.arch
    }

    pub fn param_layout(&self) -> &[ParamMeta] {
        &self.layout
    }

    /// Exact trainable parameter count.
    pub fn count_parameters(&self) -> usize {
        self.layout.iter().map(|m| m.shape.iter().product::<usize>()).sum()
    }

    fn check_input(&self, x: &ImageTensor) -> Result<()> {
        let (h, w) = (x.height(), x.width());
        if self.spec.arch.is_unet() {
            let div = 1usize << self.spec.levels;
            if h % div != 0 || w % div != 0 {
                return Err(Error::ShapeMismatch {
                    context: format!("forward: input must be divisible by 2^levels={div}"),
                    expected: vec![div],
                    got: vec![h, w],
                });
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &ImageTensor, mode: Mode) -> Result<ModelOutputs> {
        Ok(self.forward_cached(x, mode)?.outputs)
    }

    pub fn forward_cached(&self, x: &ImageTensor, mode: Mode) -> Result<Cache> {
        self.check_input(x)?;
        match &self.layers {
            Layers::Direct { convs } => {
                let mut inputs = Vec::new();
                let mut acts = Vec::new();
                let mut cur = x.data().clone();
                for (i, conv) in convs.iter().enumerate() {
                    inputs.push(cur.clone());
                    let y = conv.forward(&cur);
                    if i + 1 < convs.len() {
                        let a = relu(&y);
                        acts.push(a.clone());
                        cur = a;
                    } else {
                        cur = y;
                    }
                }
                let out6 = sigmoid(&cur);
                let r = out6.slice(ndarray::s![0..3, .., ..]).to_owned();
                let s = out6.slice(ndarray::s![3..6, .., ..]).to_owned();
                let r_hat = ImageTensor::new(r)?;
                let s_hat = ImageTensor::new(s)?;
                let i_hat = r_hat.hadamard(&s_hat);
                let outputs = ModelOutputs {
                    r_hat,
                    s_hat,
                    n_hat: None,
                    logvar: None,
                    i_hat,
                };
                Ok(Cache {
                    kind: CacheKind::Direct { inputs, acts, out6 },
                    outputs,
                })
            }
            Layers::Unet {
                enc,
                dec,
                r_head,
                s_head,
                n_head,
                unc,
            } => {
                let mut cur = x.data().clone();
                let mut enc_caches = Vec::new();
                for (l, block) in enc.iter().enumerate() {
                    let x0 = cur;
                    let a1 = relu(&block.conv1.forward(&x0));
                    let a2 = relu(&block.conv2.forward(&a1));
                    // dropout on the encoder features; the dropped tensor is
                    // both the skip connection and the pooling input
                    let (dropped, mask) = match mode {
                        Mode::Stochastic { seed } if self.spec.dropout_rate > 0.0 => {
                            let mut rng = stream(seed, "enc-drop", l as u64);
                            let m = dropout_mask(a2.dim(), self.spec.dropout_rate, &mut rng);
                            (&a2 * &m, Some(m))
                        }
                        _ => (a2, None),
                    };
                    let pre_pool_dim = dropped.dim();
                    let (pooled, pool_idx) = maxpool2(&dropped);
                    enc_caches.push(EncCache {
                        pair: ConvPairCache { x0, a1, a2: dropped },
                        mask,
                        pool_idx,
                        pre_pool_dim,
                    });
                    cur = pooled;
                }
                let mut dec_caches = Vec::new();
                for (step, block) in dec.iter().enumerate() {
                    let j = self.spec.levels - 1 - step;
                    let x_in = cur;
                    let up_out = block.up.forward(&x_in);
                    let skip = &enc_caches[j].pair.a2;
                    let cat = concat_channels(&up_out, skip);
                    let a1 = relu(&block.conv1.forward(&cat));
                    let a2 = relu(&block.conv2.forward(&a1));
                    cur = a2.clone();
                    dec_caches.push(DecCache {
                        x_in,
                        concat: cat,
                        a1,
                        a2,
                    });
                }
                let features = cur;
                let r_hat = ImageTensor::new(sigmoid(&r_head.forward(&features)))?;
                let s_hat = ImageTensor::new(sigmoid(&s_head.forward(&features)))?;
                let n_hat = n_head
                    .as_ref()
                    .map(|head| ImageTensor::new(relu(&head.forward(&features))))
                    .transpose()?;
                let (logvar, unc_cache) = match unc {
                    Some(head) => {
                        let unc_in = if head.skip_input {
                            concat_channels(&features, x.data())
                        } else {
                            features.clone()
                        };
                        let hidden = relu(&head.conv3.forward(&unc_in));
                        let lv_raw = head.conv1.forward(&hidden);
                        let clamp = self.spec.logvar_clamp;
                        let lv = lv_raw.mapv(|v| v.clamp(clamp.low, clamp.high));
                        (
                            Some(lv),
                            Some(UncCache {
                                unc_in,
                                hidden,
                                lv_raw,
                            }),
                        )
                    }
                    None => (None, None),
                };
                let i_hat = match &n_hat {
                    Some(n) => r_hat.hadamard(&s_hat).add(n),
                    None => r_hat.hadamard(&s_hat),
                };
                let outputs = ModelOutputs {
                    r_hat,
                    s_hat,
                    n_hat,
                    logvar,
                    i_hat,
                };
                Ok(Cache {
                    kind: CacheKind::Unet {
                        enc: enc_caches,
                        dec: dec_caches,
                        features,
                        unc: unc_cache,
                    },
                    outputs,
                })
            }
        }
    }

    /// Backpropagates head-output gradients through the network,
    /// accumulating parameter gradients in registration order.
    pub fn backward(&self, cache: &Cache, grads_out: &OutputGrads) -> Grads {
        let mut grads = Grads::zeros(&self.layout);
        match (&self.layers, &cache.kind) {
            (Layers::Direct { convs }, CacheKind::Direct { inputs, acts, out6 }) => {
                let d6 = concat_channels(&grads_out.d_r, &grads_out.d_s);
                let mut d_cur = sigmoid_backward(out6, &d6);
                for i in (0..convs.len()).rev() {
                    if i + 1 < convs.len() {
                        d_cur = relu_backward(&acts[i], &d_cur);
                    }
                    d_cur = convs[i].backward(&inputs[i], &d_cur, &mut grads);
                }
            }
            (
                Layers::Unet {
                    enc,
                    dec,
                    r_head,
                    s_head,
                    n_head,
                    unc,
                },
                CacheKind::Unet {
                    enc: enc_caches,
                    dec: dec_caches,
                    features,
                    unc: unc_cache,
                },
            ) => {
                let out = &cache.outputs;
                // heads -> shared decoder features
                let d_rl = sigmoid_backward(out.r_hat.data(), &grads_out.d_r);
                let mut d_feat = r_head.backward(features, &d_rl, &mut grads);
                let d_sl = sigmoid_backward(out.s_hat.data(), &grads_out.d_s);
                d_feat += &s_head.backward(features, &d_sl, &mut grads);
                if let (Some(head), Some(d_n), Some(n)) =
                    (n_head.as_ref(), grads_out.d_n.as_ref(), out.n_hat.as_ref())
                {
                    let d_nl = relu_backward(n.data(), d_n);
                    d_feat += &head.backward(features, &d_nl, &mut grads);
                }
                if let (Some(head), Some(d_lv), Some(uc)) =
                    (unc.as_ref(), grads_out.d_logvar.as_ref(), unc_cache.as_ref())
                {
                    let clamp = self.spec.logvar_clamp;
                    let mut d_raw = d_lv.clone();
                    ndarray::Zip::from(&mut d_raw).and(&uc.lv_raw).for_each(|g, &raw| {
                        if raw <= clamp.low || raw >= clamp.high {
                            *g = 0.0;
                        }
                    });
                    let d_hidden = head.conv1.backward(&uc.hidden, &d_raw, &mut grads);
                    let d_pre = relu_backward(&uc.hidden, &d_hidden);
                    let d_in = head.conv3.backward(&uc.unc_in, &d_pre, &mut grads);
                    if head.skip_input {
                        let c = self.spec.base_channels;
                        d_feat += &d_in.slice(ndarray::s![0..c, .., ..]);
                        // gradient w.r.t. the raw input image is discarded
                    } else {
                        d_feat += &d_in;
                    }
                }
                // decoder, reverse execution order
                let mut d_cur = d_feat;
                let mut d_skips: Vec<Option<Array3<f32>>> = vec![None; self.spec.levels];
                for (step, (block, dc)) in dec.iter().zip(dec_caches).enumerate().rev() {
                    let j = self.spec.levels - 1 - step;
                    let d_pre2 = relu_backward(&dc.a2, &d_cur);
                    let d_a1 = block.conv2.backward(&dc.a1, &d_pre2, &mut grads);
                    let d_pre1 = relu_backward(&dc.a1, &d_a1);
                    let d_cat = block.conv1.backward(&dc.concat, &d_pre1, &mut grads);
                    let split = block.up.out_ch;
                    let d_up = d_cat.slice(ndarray::s![0..split, .., ..]).to_owned();
                    d_skips[j] = Some(d_cat.slice(ndarray::s![split.., .., ..]).to_owned());
                    d_cur = block.up.backward(&dc.x_in, &d_up, &mut grads);
                }
                // encoder, deepest block first
                for (l, (block, ec)) in enc.iter().zip(enc_caches).enumerate().rev() {
                    let mut d_dropped =
                        maxpool2_backward(&d_cur, &ec.pool_idx, ec.pre_pool_dim);
                    if let Some(ds) = &d_skips[l] {
                        d_dropped += ds;
                    }
                    let d_a2 = match &ec.mask {
                        Some(m) => &d_dropped * m,
                        None => d_dropped,
                    };
                    // pair.a2 holds the post-dropout activations; its zeros
                    // coincide with ReLU zeros so the mask is still exact
                    let d_pre2 = relu_backward(&ec.pair.a2, &d_a2);
                    let d_a1 = block.conv2.backward(&ec.pair.a1, &d_pre2, &mut grads);
                    let d_pre1 = relu_backward(&ec.pair.a1, &d_a1);
                    d_cur = block.conv1.backward(&ec.pair.x0, &d_pre1, &mut grads);
                }
            }
            _ => unreachable!("cache kind always matches layer kind"),
        }
        grads
    }

    /// Visits parameters immutably in registration order.
    pub fn for_each_param(&self, f: &mut dyn FnMut(usize, &ParamMeta, &ArrayD<f32>)) {
        let metas = &self.layout;
        let mut visit = |wid: usize, bid: usize, w: &ArrayD<f32>, b: &ArrayD<f32>| {
            f(wid, &metas[wid], w);
            f(bid, &metas[bid], b);
        };
        match &self.layers {
            Layers::Direct { convs } => {
                for c in convs {
                    visit(c.wid, c.bid, &c.w, &c.b);
                }
            }
            Layers::Unet {
                enc,
                dec,
                r_head,
                s_head,
                n_head,
                unc,
            } => {
                for b in enc {
                    visit(b.conv1.wid, b.conv1.bid, &b.conv1.w, &b.conv1.b);
                    visit(b.conv2.wid, b.conv2.bid, &b.conv2.w, &b.conv2.b);
                }
                for b in dec {
                    visit(b.up.wid, b.up.bid, &b.up.w, &b.up.b);
                    visit(b.conv1.wid, b.conv1.bid, &b.conv1.w, &b.conv1.b);
                    visit(b.conv2.wid, b.conv2.bid, &b.conv2.w, &b.conv2.b);
                }
                visit(r_head.wid, r_head.bid, &r_head.w, &r_head.b);
                visit(s_head.wid, s_head.bid, &s_head.w, &s_head.b);
                if let Some(h) = n_head {
                    visit(h.wid, h.bid, &h.w, &h.b);
                }
                if let Some(h) = unc {
                    visit(h.conv3.wid, h.conv3.bid, &h.conv3.w, &h.conv3.b);
                    visit(h.conv1.wid, h.conv1.bid, &h.conv1.w, &h.conv1.b);
                }
            }
        }
    }

    /// Visits parameters mutably in registration order.
    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(usize, &mut ArrayD<f32>)) {
        match &mut self.layers {
            Layers::Direct { convs } => {
                for c in convs {
                    f(c.wid, &mut c.w);
                    f(c.bid, &mut c.b);
                }
            }
            Layers::Unet {
                enc,
                dec,
                r_head,
                s_head,
                n_head,
                unc,
            } => {
                for b in enc {
                    f(b.conv1.wid, &mut b.conv1.w);
                    f(b.conv1.bid, &mut b.conv1.b);
                    f(b.conv2.wid, &mut b.conv2.w);
                    f(b.conv2.bid, &mut b.conv2.b);
                }
                for b in dec {
                    f(b.up.wid, &mut b.up.w);
                    f(b.up.bid, &mut b.up.b);
                    f(b.conv1.wid, &mut b.conv1.w);
                    f(b.conv1.bid, &mut b.conv1.b);
                    f(b.conv2.wid, &mut b.conv2.w);
                    f(b.conv2.bid, &mut b.conv2.b);
                }
                f(r_head.wid, &mut r_head.w);
                f(r_head.bid, &mut r_head.b);
                f(s_head.wid, &mut s_head.w);
                f(s_head.bid, &mut s_head.b);
                if let Some(h) = n_head {
                    f(h.wid, &mut h.w);
                    f(h.bid, &mut h.b);
                }
                if let Some(h) = unc {
                    f(h.conv3.wid, &mut h.conv3.w);
                    f(h.conv3.bid, &mut h.conv3.b);
                    f(h.conv1.wid, &mut h.conv1.w);
                    f(h.conv1.bid, &mut h.conv1.b);
                }
            }
        }
    }

    /// Snapshot of all parameter tensors in registration order.
    pub fn param_snapshot(&self) -> Vec<ArrayD<f32>> {
        let mut out: Vec<Option<ArrayD<f32>>> = vec![None; self.layout.len()];
        self.for_each_param(&mut |id, _, w| out[id] = Some(w.clone()));
        out.into_iter().map(|o| o.expect("all params visited")).collect()
    }

    /// Evaluates only the uncertainty head on given backbone features and
    /// raw input; used to probe the input skip connection.
    pub fn uncertainty_from_features(
        &self,
        features: &Array3<f32>,
        input: &Array3<f32>,
    ) -> Result<Array3<f32>> {
        match &self.layers {
            Layers::Unet { unc: Some(head), .. } => {
                let unc_in = if head.skip_input {
                    concat_channels(features, input)
                } else {
                    features.clone()
                };
                let hidden = relu(&head.conv3.forward(&unc_in));
                let clamp = self.spec.logvar_clamp;
                Ok(head
                    .conv1
                    .forward(&hidden)
                    .mapv(|v| v.clamp(clamp.low, clamp.high)))
            }
            _ => Err(Error::Unsupported(format!(
                "{} has no uncertainty head",
                self.spec.arch.name()
            ))),
        }
    }
}

impl Cache {
    pub fn outputs(&self) -> &ModelOutputs {
        &self.outputs
    }
}
