//! Convolutional building blocks with explicit forward/backward passes.
//!
//! All convolutions run as im2col + sgemm on f32. Layers own their
//! parameters as dynamic-dimension arrays so the optimizer, checkpointing
//! and parameter counting can treat everything uniformly; gradients are
//! accumulated into a flat [`Grads`] store indexed by registration order.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, ArrayD, Ix1, Ix4, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Which optimizer group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ParamGroup {
    Main,
    Uncertainty,
}

#[derive(Debug, Clone)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
}

/// Assigns parameter slots during model construction.
pub struct ParamRegistry {
    pub layout: Vec<ParamMeta>,
    pub group: ParamGroup,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self {
            layout: Vec::new(),
            group: ParamGroup::Main,
        }
    }

    fn register(&mut self, name: &str, shape: &[usize]) -> usize {
        self.layout.push(ParamMeta {
            name: name.to_string(),
            shape: shape.to_vec(),
            group: self.group,
        });
        self.layout.len() - 1
    }
}

impl Default for ParamRegistry {
    fn default() -> Self {
        Self::new()
    }
}

/// Flat gradient store parallel to a model's parameter layout.
pub struct Grads {
    pub slots: Vec<ArrayD<f32>>,
}

impl Grads {
    pub fn zeros(layout: &[ParamMeta]) -> Self {
        Self {
            slots: layout
                .iter()
                .map(|m| ArrayD::zeros(IxDyn(&m.shape)))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for s in &mut self.slots {
            s.mapv_inplace(|v| v * factor);
        }
    }
}

fn fan_in_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> ArrayD<f32> {
    let bound = 1.0 / (fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches length")
}

/// 2D convolution, stride 1. Supports the two kernel shapes the models use:
/// 3x3 with pad 1 and 1x1 with pad 0.
pub struct Conv2d {
    pub w: ArrayD<f32>,
    pub b: ArrayD<f32>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub wid: usize,
    pub bid: usize,
}

impl Conv2d {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        reg: &mut ParamRegistry,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kernel == 1 || kernel == 3, "unsupported kernel {kernel}");
        let wshape = [out_ch, in_ch, kernel, kernel];
        let fan_in = in_ch * kernel * kernel;
        let w = fan_in_uniform(rng, &wshape, fan_in);
        let b = fan_in_uniform(rng, &[out_ch], fan_in);
        let wid = reg.register(&format!("{name}.w"), &wshape);
        let bid = reg.register(&format!("{name}.b"), &[out_ch]);
        Self {
            w,
            b,
            in_ch,
            out_ch,
            kernel,
            wid,
            bid,
        }
    }

    fn w_mat(&self) -> Array2<f32> {
        let k2 = self.kernel * self.kernel;
        self.w
            .view()
            .into_shape_with_order((self.out_ch, self.in_ch * k2))
            .expect("contiguous weight")
            .to_owned()
    }

    pub fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        let (c, h, w) = x.dim();
        assert_eq!(c, self.in_ch, "conv input channels");
        let hw = h * w;
        let mut out = Array2::<f32>::zeros((self.out_ch, hw));
        if self.kernel == 1 {
            let x_mat = x
                .view()
                .into_shape_with_order((c, hw))
                .expect("contiguous input");
            general_mat_mul(1.0, &self.w_mat(), &x_mat, 0.0, &mut out);
        } else {
            let cols = im2col3(x);
            general_mat_mul(1.0, &self.w_mat(), &cols, 0.0, &mut out);
        }
        let bias = self.b.view().into_dimensionality::<Ix1>().unwrap();
        for (o, mut row) in out.outer_iter_mut().enumerate() {
            row += bias[o];
        }
        out.into_shape_with_order((self.out_ch, h, w)).unwrap()
    }

    /// Accumulates dW/db into `grads` and returns dL/dx.
    pub fn backward(&self, x: &Array3<f32>, gy: &Array3<f32>, grads: &mut Grads) -> Array3<f32> {
        let (c, h, w) = x.dim();
        let hw = h * w;
        let k2 = self.kernel * self.kernel;
        let gy_mat = gy
            .view()
            .into_shape_with_order((self.out_ch, hw))
            .expect("contiguous grad");

        // bias gradient
        {
            let gb = grads.slots[self.bid]
                .view_mut()
                .into_dimensionality::<Ix1>()
                .unwrap();
            let sums = gy_mat.sum_axis(ndarray::Axis(1));
            ndarray::Zip::from(gb).and(&sums).for_each(|g, &s| *g += s);
        }

        let mut gx = Array3::<f32>::zeros((c, h, w));
        if self.kernel == 1 {
            let x_mat = x.view().into_shape_with_order((c, hw)).unwrap();
            {
                let mut gw = grads.slots[self.wid]
                    .view_mut()
                    .into_shape_with_order((self.out_ch, c * k2))
                    .unwrap();
                general_mat_mul(1.0, &gy_mat, &x_mat.t(), 1.0, &mut gw);
            }
            let mut gx_mat = gx.view_mut().into_shape_with_order((c, hw)).unwrap();
            general_mat_mul(1.0, &self.w_mat().t(), &gy_mat, 0.0, &mut gx_mat);
        } else {
            let cols = im2col3(x);
            {
                let mut gw = grads.slots[self.wid]
                    .view_mut()
                    .into_shape_with_order((self.out_ch, c * k2))
                    .unwrap();
                general_mat_mul(1.0, &gy_mat, &cols.t(), 1.0, &mut gw);
            }
            let mut gcols = Array2::<f32>::zeros((c * k2, hw));
            general_mat_mul(1.0, &self.w_mat().t(), &gy_mat, 0.0, &mut gcols);
            col2im3(&gcols, &mut gx);
        }
        gx
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Lays out 3x3/pad-1 patches as a `(C*9, H*W)` matrix.
fn im2col3(x: &Array3<f32>) -> Array2<f32> {
    let (c, h, w) = x.dim();
    let hw = h * w;
    let xs = x.as_slice().expect("contiguous input");
    let mut cols = Array2::<f32>::zeros((c * 9, hw));
    let cs = cols.as_slice_mut().unwrap();
    for ci in 0..c {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = ci * 9 + ky * 3 + kx;
                let row_base = row * hw;
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    // valid destination x range for this kernel column
                    let x0 = 1usize.saturating_sub(kx);
                    let x1 = (w + 1 - kx).min(w);
                    if x0 >= x1 {
                        continue;
                    }
                    let src0 = ci * h * w + sy * w + (x0 + kx - 1);
                    let dst0 = row_base + y * w + x0;
                    let len = x1 - x0;
                    cs[dst0..dst0 + len].copy_from_slice(&xs[src0..src0 + len]);
                }
            }
        }
    }
    cols
}

/// Scatter-adds a column-gradient matrix back onto the image grid.
fn col2im3(cols: &Array2<f32>, gx: &mut Array3<f32>) {
    let (c, h, w) = gx.dim();
    let hw = h * w;
    let cs = cols.as_slice().expect("contiguous cols");
    let gs = gx.as_slice_mut().unwrap();
    for ci in 0..c {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = ci * 9 + ky * 3 + kx;
                let row_base = row * hw;
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let x0 = 1usize.saturating_sub(kx);
                    let x1 = (w + 1 - kx).min(w);
                    if x0 >= x1 {
                        continue;
                    }
                    let dst0 = ci * h * w + sy * w + (x0 + kx - 1);
                    let src0 = row_base + y * w + x0;
                    for i in 0..(x1 - x0) {
                        gs[dst0 + i] += cs[src0 + i];
                    }
                }
            }
        }
    }
}

/// 2x2 stride-2 transposed convolution (the decoder upsampler). Since the
/// stride equals the kernel size the output patches never overlap.
pub struct ConvTranspose2d {
    /// (in, out, 2, 2)
    pub w: ArrayD<f32>,
    pub b: ArrayD<f32>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub wid: usize,
    pub bid: usize,
}

impl ConvTranspose2d {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        reg: &mut ParamRegistry,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let wshape = [in_ch, out_ch, 2, 2];
        // fan_in per output element is in_ch (each output pixel sees one
        // input pixel through one kernel tap)
        let w = fan_in_uniform(rng, &wshape, in_ch);
        let b = fan_in_uniform(rng, &[out_ch], in_ch);
        let wid = reg.register(&format!("{name}.w"), &wshape);
        let bid = reg.register(&format!("{name}.b"), &[out_ch]);
        Self {
            w,
            b,
            in_ch,
            out_ch,
            wid,
            bid,
        }
    }

    /// Weight rearranged as `(out*4, in)` with rows ordered (o, ky, kx).
    fn w_mat(&self) -> Array2<f32> {
        let w4 = self.w.view().into_dimensionality::<Ix4>().unwrap();
        let mut m = Array2::<f32>::zeros((self.out_ch * 4, self.in_ch));
        for i in 0..self.in_ch {
            for o in 0..self.out_ch {
                for ky in 0..2 {
                    for kx in 0..2 {
                        m[[o * 4 + ky * 2 + kx, i]] = w4[[i, o, ky, kx]];
                    }
                }
            }
        }
        m
    }

    pub fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        let (c, h, w) = x.dim();
        assert_eq!(c, self.in_ch);
        let hw = h * w;
        let x_mat = x.view().into_shape_with_order((c, hw)).unwrap();
        let mut out_cols = Array2::<f32>::zeros((self.out_ch * 4, hw));
        general_mat_mul(1.0, &self.w_mat(), &x_mat, 0.0, &mut out_cols);
        let mut out = Array3::<f32>::zeros((self.out_ch, 2 * h, 2 * w));
        let bias = self.b.view().into_dimensionality::<Ix1>().unwrap();
        let oc = out_cols.as_slice().unwrap();
        let os = out.as_slice_mut().unwrap();
        let oh = 2 * h;
        let ow = 2 * w;
        for o in 0..self.out_ch {
            let bo = bias[o];
            for ky in 0..2 {
                for kx in 0..2 {
                    let row_base = (o * 4 + ky * 2 + kx) * hw;
                    for y in 0..h {
                        for x_ in 0..w {
                            os[o * oh * ow + (2 * y + ky) * ow + (2 * x_ + kx)] =
                                oc[row_base + y * w + x_] + bo;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(&self, x: &Array3<f32>, gy: &Array3<f32>, grads: &mut Grads) -> Array3<f32> {
        let (c, h, w) = x.dim();
        let hw = h * w;
        let oh = 2 * h;
        let ow = 2 * w;
        // gather output grads into (out*4, h*w)
        let mut gy_cols = Array2::<f32>::zeros((self.out_ch * 4, hw));
        {
            let gc = gy_cols.as_slice_mut().unwrap();
            let gys = gy.as_slice().expect("contiguous grad");
            for o in 0..self.out_ch {
                for ky in 0..2 {
                    for kx in 0..2 {
                        let row_base = (o * 4 + ky * 2 + kx) * hw;
                        for y in 0..h {
                            for x_ in 0..w {
                                gc[row_base + y * w + x_] =
                                    gys[o * oh * ow + (2 * y + ky) * ow + (2 * x_ + kx)];
                            }
                        }
                    }
                }
            }
        }
        // bias: sum over all output positions
        {
            let gb = grads.slots[self.bid]
                .view_mut()
                .into_dimensionality::<Ix1>()
                .unwrap();
            let mut sums = vec![0.0f32; self.out_ch];
            for (o, sum) in sums.iter_mut().enumerate() {
                for r in 0..4 {
                    *sum += gy_cols.row(o * 4 + r).sum();
                }
            }
            ndarray::Zip::from(gb)
                .and(&Array1::from(sums))
                .for_each(|g, &s| *g += s);
        }
        // weight: gw_mat = gy_cols . x_mat^T, un-permuted into (in, out, 2, 2)
        let x_mat = x.view().into_shape_with_order((c, hw)).unwrap();
        let mut gw_mat = Array2::<f32>::zeros((self.out_ch * 4, self.in_ch));
        general_mat_mul(1.0, &gy_cols, &x_mat.t(), 0.0, &mut gw_mat);
        {
            let mut gw = grads.slots[self.wid]
                .view_mut()
                .into_dimensionality::<Ix4>()
                .unwrap();
            for i in 0..self.in_ch {
                for o in 0..self.out_ch {
                    for ky in 0..2 {
                        for kx in 0..2 {
                            gw[[i, o, ky, kx]] += gw_mat[[o * 4 + ky * 2 + kx, i]];
                        }
                    }
                }
            }
        }
        // input: gx = W^T . gy_cols
        let mut gx = Array3::<f32>::zeros((c, h, w));
        {
            let mut gx_mat = gx.view_mut().into_shape_with_order((c, hw)).unwrap();
            general_mat_mul(1.0, &self.w_mat().t(), &gy_cols, 0.0, &mut gx_mat);
        }
        gx
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// 2x2 stride-2 max pooling; remembers argmax positions for the backward
/// scatter. Input height/width must be even.
pub fn maxpool2(x: &Array3<f32>) -> (Array3<f32>, Vec<u32>) {
    let (c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even extent");
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array3::<f32>::zeros((c, oh, ow));
    let mut idx = vec![0u32; c * oh * ow];
    let xs = x.as_slice().unwrap();
    let os = out.as_slice_mut().unwrap();
    for ci in 0..c {
        for y in 0..oh {
            for x_ in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_at = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let at = ci * h * w + (2 * y + dy) * w + (2 * x_ + dx);
                        if xs[at] > best {
                            best = xs[at];
                            best_at = at;
                        }
                    }
                }
                let o_at = ci * oh * ow + y * ow + x_;
                os[o_at] = best;
                idx[o_at] = best_at as u32;
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward(gy: &Array3<f32>, idx: &[u32], in_shape: (usize, usize, usize)) -> Array3<f32> {
    let mut gx = Array3::<f32>::zeros(in_shape);
    let gs = gx.as_slice_mut().unwrap();
    for (g, &at) in gy.iter().zip(idx.iter()) {
        gs[at as usize] += *g;
    }
    gx
}

pub fn relu(x: &Array3<f32>) -> Array3<f32> {
    x.mapv(|v| v.max(0.0))
}

/// d(relu)/dx from the post-activation values (positive iff pre-activation
/// was positive).
pub fn relu_backward(y: &Array3<f32>, gy: &Array3<f32>) -> Array3<f32> {
    let mut gx = gy.clone();
    ndarray::Zip::from(&mut gx).and(y).for_each(|g, &v| {
        if v <= 0.0 {
            *g = 0.0;
        }
    });
    gx
}

pub fn sigmoid(x: &Array3<f32>) -> Array3<f32> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn sigmoid_backward(y: &Array3<f32>, gy: &Array3<f32>) -> Array3<f32> {
    let mut gx = gy.clone();
    ndarray::Zip::from(&mut gx).and(y).for_each(|g, &v| {
        *g *= v * (1.0 - v);
    });
    gx
}

/// Inverted-dropout mask: entries are `1/(1-rate)` with probability
/// `1-rate`, else 0. Multiplying by the mask is both forward and backward.
pub fn dropout_mask(shape: (usize, usize, usize), rate: f32, rng: &mut ChaCha8Rng) -> Array3<f32> {
    debug_assert!((0.0..1.0).contains(&rate));
    if rate == 0.0 {
        return Array3::from_elem(shape, 1.0);
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Array3::from_shape_simple_fn(shape, || {
        if rng.gen::<f32>() < keep {
            scale
        } else {
            0.0
        }
    })
}

/// Channel-wise concatenation.
pub fn concat_channels(a: &Array3<f32>, b: &Array3<f32>) -> Array3<f32> {
    ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view()]).expect("same spatial extent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;
    use ndarray::Array4;

    /// Direct (nested-loop) 3x3 pad-1 convolution used as an oracle.
    fn conv3_direct(x: &Array3<f32>, w: &Array4<f32>, b: &Array1<f32>) -> Array3<f32> {
        let (c, h, wd) = x.dim();
        let o = w.dim().0;
        let mut out = Array3::<f32>::zeros((o, h, wd));
        for oc in 0..o {
            for y in 0..h {
                for x_ in 0..wd {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = x_ as isize + kx as isize - 1;
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < wd as isize {
                                    acc += x[[ic, sy as usize, sx as usize]] * w[[oc, ic, ky, kx]];
                                }
                            }
                        }
                    }
                    out[[oc, y, x_]] = acc;
                }
            }
        }
        out
    }

    fn rand_arr(shape: (usize, usize, usize), seed: u64) -> Array3<f32> {
        let mut rng = stream(seed, "test", 0);
        Array3::from_shape_simple_fn(shape, || rng.gen_range(-1.0f32..1.0))
    }

    #[test]
    fn conv3_matches_direct_oracle() {
        let mut reg = ParamRegistry::new();
        let mut rng = stream(1, "init", 0);
        let conv = Conv2d::new("c", 4, 5, 3, &mut reg, &mut rng);
        let x = rand_arr((4, 6, 7), 2);
        let got = conv.forward(&x);
        let want = conv3_direct(
            &x,
            &conv.w.view().into_dimensionality::<Ix4>().unwrap().to_owned(),
            &conv.b.view().into_dimensionality::<Ix1>().unwrap().to_owned(),
        );
        assert_abs_diff_eq!(
            got.iter().zip(want.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max),
            0.0,
            epsilon = 1e-5
        );
    }

    #[test]
    fn conv3_backward_matches_finite_differences() {
        let mut reg = ParamRegistry::new();
        let mut rng = stream(3, "init", 0);
        let mut conv = Conv2d::new("c", 2, 3, 3, &mut reg, &mut rng);
        let x = rand_arr((2, 5, 4), 4);
        let probe = rand_arr((3, 5, 4), 5);
        let loss = |y: &Array3<f32>| y.iter().zip(probe.iter()).map(|(a, b)| a * b).sum::<f32>();

        let y = conv.forward(&x);
        let mut grads = Grads::zeros(&reg.layout);
        let gx = conv.backward(&x, &probe, &mut grads);
        let base = loss(&y);
        let h = 1e-3f32;

        // input grads
        let mut xp = x.clone();
        xp[[1, 2, 3]] += h;
        let fd = (loss(&conv.forward(&xp)) - base) / h;
        assert_abs_diff_eq!(gx[[1, 2, 3]], fd, epsilon = 2e-2);

        // weight grads
        let orig = conv.w[[2, 1, 0, 2]];
        conv.w[[2, 1, 0, 2]] = orig + h;
        let fd = (loss(&conv.forward(&x)) - base) / h;
        conv.w[[2, 1, 0, 2]] = orig;
        assert_abs_diff_eq!(grads.slots[conv.wid][[2, 1, 0, 2]], fd, epsilon = 2e-2);

        // bias grads
        let orig = conv.b[[1]];
        conv.b[[1]] = orig + h;
        let fd = (loss(&conv.forward(&x)) - base) / h;
        conv.b[[1]] = orig;
        assert_abs_diff_eq!(grads.slots[conv.bid][[1]], fd, epsilon = 2e-2);
    }

    #[test]
    fn tconv_backward_matches_finite_differences() {
        let mut reg = ParamRegistry::new();
        let mut rng = stream(6, "init", 0);
        let mut up = ConvTranspose2d::new("u", 3, 2, &mut reg, &mut rng);
        let x = rand_arr((3, 4, 5), 7);
        let probe = rand_arr((2, 8, 10), 8);
        let loss = |y: &Array3<f32>| y.iter().zip(probe.iter()).map(|(a, b)| a * b).sum::<f32>();

        let y = up.forward(&x);
        assert_eq!(y.dim(), (2, 8, 10));
        let mut grads = Grads::zeros(&reg.layout);
        let gx = up.backward(&x, &probe, &mut grads);
        let base = loss(&y);
        let h = 1e-3f32;

        let mut xp = x.clone();
        xp[[2, 1, 4]] += h;
        let fd = (loss(&up.forward(&xp)) - base) / h;
        assert_abs_diff_eq!(gx[[2, 1, 4]], fd, epsilon = 2e-2);

        let orig = up.w[[1, 0, 1, 0]];
        up.w[[1, 0, 1, 0]] = orig + h;
        let fd = (loss(&up.forward(&x)) - base) / h;
        up.w[[1, 0, 1, 0]] = orig;
        assert_abs_diff_eq!(grads.slots[up.wid][[1, 0, 1, 0]], fd, epsilon = 2e-2);

        let orig = up.b[[0]];
        up.b[[0]] = orig + h;
        let fd = (loss(&up.forward(&x)) - base) / h;
        up.b[[0]] = orig;
        assert_abs_diff_eq!(grads.slots[up.bid][[0]], fd, epsilon = 2e-1);
    }

    #[test]
    fn maxpool_roundtrip() {
        let x = rand_arr((3, 6, 8), 9);
        let (y, idx) = maxpool2(&x);
        assert_eq!(y.dim(), (3, 3, 4));
        // every pooled value is the max of its window
        for c in 0..3 {
            for yy in 0..3 {
                for xx in 0..4 {
                    let m = (0..2)
                        .flat_map(|dy| (0..2).map(move |dx| (dy, dx)))
                        .map(|(dy, dx)| x[[c, 2 * yy + dy, 2 * xx + dx]])
                        .fold(f32::NEG_INFINITY, f32::max);
                    assert_eq!(y[[c, yy, xx]], m);
                }
            }
        }
        let gy = rand_arr((3, 3, 4), 10);
        let gx = maxpool2_backward(&gy, &idx, (3, 6, 8));
        assert_abs_diff_eq!(gx.sum(), gy.sum(), epsilon = 1e-4);
    }

    #[test]
    fn dropout_mask_scales_kept_units() {
        let mut rng = stream(11, "drop", 0);
        let m = dropout_mask((2, 8, 8), 0.25, &mut rng);
        for &v in m.iter() {
            assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-6);
        }
        let kept = m.iter().filter(|&&v| v > 0.0).count();
        assert!(kept > 64 && kept < 128, "kept {kept} of 128");
        let zero_rate = dropout_mask((1, 4, 4), 0.0, &mut rng);
        assert!(zero_rate.iter().all(|&v| v == 1.0));
    }
}
