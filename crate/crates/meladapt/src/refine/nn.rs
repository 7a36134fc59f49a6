//! Neural-network layers with hand-written forward and backward passes.
//!
//! Everything is generic over the float type: training and inference run in
//! `f32`, while gradient-check tests instantiate the same code in `f64` so
//! central finite differences resolve at 1e-5 relative tolerance.
//!
//! Activations are `(batch, channels, frames, mels)` arrays. Each layer owns
//! its parameters together with their gradient accumulators and caches
//! whatever its backward pass needs from the last forward call. Backward
//! passes *accumulate* into the gradient buffers, so callers zero them
//! between optimization steps.

use ndarray::{Array1, Array2, Array4, ArrayViewMutD, Axis, Dimension, Ix1, Ix2, Ix4, NdFloat};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::FEATURE_DIM;

/// Whether a forward pass uses batch statistics (training) or the stored
/// running statistics (inference/validation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A learnable tensor and its gradient accumulator.
#[derive(Debug, Clone)]
pub(crate) struct Param<T, D: Dimension> {
    pub value: ndarray::Array<T, D>,
    pub grad: ndarray::Array<T, D>,
}

impl<T: NdFloat, D: Dimension> Param<T, D> {
    pub fn new(value: ndarray::Array<T, D>) -> Self {
        let grad = ndarray::Array::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// One named tensor handed to a parameter visitor: its value, and its
/// gradient when the tensor is learnable (batch-norm running statistics are
/// visited with `grad: None` so the optimizer skips them while serialization
/// still sees them).
pub struct TensorMut<'a, T> {
    pub value: ArrayViewMutD<'a, T>,
    pub grad: Option<ArrayViewMutD<'a, T>>,
}

pub type TensorVisitor<'v, T> = dyn FnMut(String, TensorMut<'_, T>) + 'v;

fn visit_param<'a, T: NdFloat, D: Dimension>(
    name: String,
    p: &'a mut Param<T, D>,
    f: &mut TensorVisitor<'_, T>,
) {
    f(
        name,
        TensorMut { value: p.value.view_mut().into_dyn(), grad: Some(p.grad.view_mut().into_dyn()) },
    )
}

pub(crate) fn cast<T: NdFloat>(x: f64) -> T {
    T::from(x).expect("finite f64 converts to any float type")
}

/// Draws from N(0, std) into a fresh array.
fn normal_init<T: NdFloat, D: Dimension, R: Rng>(
    rng: &mut R,
    dim: D,
    std: f64,
) -> ndarray::Array<T, D> {
    let dist = Normal::new(0.0f64, std).expect("valid normal");
    ndarray::Array::from_shape_simple_fn(dim, || cast(dist.sample(rng)))
}

// ---------------------------------------------------------------------------
// 3x3 convolution (padding 1, stride 1)
// ---------------------------------------------------------------------------

/// 3x3 same-size convolution. Forward/backward run as GEMMs over an im2col
/// buffer, which keeps the hot loop inside the matrix-multiply kernel.
#[derive(Debug, Clone)]
pub(crate) struct Conv2d<T> {
    /// `(out_channels, in_channels, 3, 3)`.
    pub kernel: Param<T, Ix4>,
    pub bias: Param<T, Ix1>,
    cache: Option<Array4<T>>,
}

/// Gathers the 3x3 neighborhood of every position into a
/// `(in_channels * 9, height * width)` matrix (zero padding outside).
fn im2col_3x3<T: NdFloat>(x: &ndarray::ArrayView3<'_, T>) -> Array2<T> {
    let (c_in, h, w) = x.dim();
    let mut cols = Array2::zeros((c_in * 9, h * w));
    for i in 0..c_in {
        for kh in 0..3 {
            for kw in 0..3 {
                let row = i * 9 + kh * 3 + kw;
                for y in 0..h {
                    let sy = y as isize + kh as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kw as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        cols[[row, y * w + xx]] = x[[i, sy as usize, sx as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Transpose of [`im2col_3x3`]: scatters column gradients back onto the
/// (zero-padded) input positions.
fn col2im_3x3<T: NdFloat>(cols: &Array2<T>, c_in: usize, h: usize, w: usize) -> ndarray::Array3<T> {
    let mut x = ndarray::Array3::zeros((c_in, h, w));
    for i in 0..c_in {
        for kh in 0..3 {
            for kw in 0..3 {
                let row = i * 9 + kh * 3 + kw;
                for y in 0..h {
                    let sy = y as isize + kh as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kw as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        x[[i, sy as usize, sx as usize]] += cols[[row, y * w + xx]];
                    }
                }
            }
        }
    }
    x
}

impl<T: NdFloat> Conv2d<T> {
    /// Kaiming-normal kernel (std = sqrt(2 / fan_in)), zero bias.
    pub fn new<R: Rng>(rng: &mut R, in_channels: usize, out_channels: usize) -> Self {
        let std = (2.0 / (in_channels * 9) as f64).sqrt();
        Conv2d {
            kernel: Param::new(normal_init(rng, Ix4(out_channels, in_channels, 3, 3), std)),
            bias: Param::new(Array1::zeros(out_channels)),
            cache: None,
        }
    }

    /// All-zero kernel and bias: used for the output projection so a fresh
    /// network starts as the exact identity (global residual).
    pub fn zeroed(in_channels: usize, out_channels: usize) -> Self {
        Conv2d {
            kernel: Param::new(Array4::zeros((out_channels, in_channels, 3, 3))),
            bias: Param::new(Array1::zeros(out_channels)),
            cache: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.value.dim().0
    }

    pub fn forward(&mut self, x: &Array4<T>) -> Array4<T> {
        let (b, c_in, h, w) = x.dim();
        let c_out = self.out_channels();
        assert_eq!(c_in, self.kernel.value.dim().1, "conv input channel mismatch");
        let k2 = self
            .kernel
            .value
            .view()
            .into_shape_with_order((c_out, c_in * 9))
            .expect("kernel is contiguous");
        let mut out = Array4::zeros((b, c_out, h, w));
        for n in 0..b {
            let cols = im2col_3x3(&x.index_axis(Axis(0), n));
            let y = k2.dot(&cols); // (c_out, h*w)
            for o in 0..c_out {
                let bias = self.bias.value[o];
                for p in 0..h * w {
                    out[[n, o, p / w, p % w]] = y[[o, p]] + bias;
                }
            }
        }
        self.cache = Some(x.clone());
        out
    }

    pub fn backward(&mut self, gy: &Array4<T>) -> Array4<T> {
        let x = self.cache.take().expect("conv backward without forward");
        let (b, c_in, h, w) = x.dim();
        let c_out = self.out_channels();
        let k2 = self
            .kernel
            .value
            .view()
            .into_shape_with_order((c_out, c_in * 9))
            .expect("kernel is contiguous");
        let mut dx = Array4::zeros((b, c_in, h, w));
        let mut dk2 = Array2::<T>::zeros((c_out, c_in * 9));
        for n in 0..b {
            let cols = im2col_3x3(&x.index_axis(Axis(0), n));
            let mut gy2 = Array2::zeros((c_out, h * w));
            for o in 0..c_out {
                let mut db = T::zero();
                for p in 0..h * w {
                    let g = gy[[n, o, p / w, p % w]];
                    gy2[[o, p]] = g;
                    db += g;
                }
                self.bias.grad[o] += db;
            }
            dk2 = dk2 + gy2.dot(&cols.t());
            let dcols = k2.t().dot(&gy2);
            let dxn = col2im_3x3(&dcols, c_in, h, w);
            dx.index_axis_mut(Axis(0), n).assign(&dxn);
        }
        let dk4 = dk2.into_shape_with_order((c_out, c_in, 3, 3)).expect("kernel shape");
        self.kernel.grad += &dk4;
        dx
    }

    pub fn zero_grad(&mut self) {
        self.kernel.zero_grad();
        self.bias.zero_grad();
    }

    pub fn visit(&mut self, prefix: &str, f: &mut TensorVisitor<'_, T>) {
        visit_param(format!("{prefix}.kernel"), &mut self.kernel, f);
        visit_param(format!("{prefix}.bias"), &mut self.bias, f);
    }
}

// ---------------------------------------------------------------------------
// Batch normalization over (batch, frames, mels) per channel
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Array4<T>,
    inv_std: Array1<T>,
    mode: Mode,
}

#[derive(Debug, Clone)]
pub(crate) struct BatchNorm2d<T> {
    pub gamma: Param<T, Ix1>,
    pub beta: Param<T, Ix1>,
    /// Exponential moving averages used in eval mode; not learnable but part
    /// of the serialized weights.
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    momentum: T,
    eps: T,
    cache: Option<BnCache<T>>,
}

impl<T: NdFloat> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(Array1::ones(channels)),
            beta: Param::new(Array1::zeros(channels)),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: cast(0.1),
            eps: cast(1e-5),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Array4<T> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.gamma.value.len(), "batch-norm channel mismatch");
        let n = cast::<T>((b * h * w) as f64);
        let mut xhat = Array4::zeros((b, c, h, w));
        let mut inv_std = Array1::zeros(c);
        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = T::zero();
                    let mut sq = T::zero();
                    for bi in 0..b {
                        for y in 0..h {
                            for xx in 0..w {
                                let v = x[[bi, ch, y, xx]];
                                sum += v;
                                sq += v * v;
                            }
                        }
                    }
                    let mean = sum / n;
                    let var = sq / n - mean * mean;
                    // Running stats use the unbiased variance, matching the
                    // usual framework convention.
                    let unbiased = if b * h * w > 1 {
                        var * n / (n - T::one())
                    } else {
                        var
                    };
                    let m = self.momentum;
                    self.running_mean[ch] = (T::one() - m) * self.running_mean[ch] + m * mean;
                    self.running_var[ch] = (T::one() - m) * self.running_var[ch] + m * unbiased;
                    (mean, var)
                }
                Mode::Eval => (self.running_mean[ch], self.running_var[ch]),
            };
            let istd = T::one() / (var + self.eps).sqrt();
            inv_std[ch] = istd;
            for bi in 0..b {
                for y in 0..h {
                    for xx in 0..w {
                        xhat[[bi, ch, y, xx]] = (x[[bi, ch, y, xx]] - mean) * istd;
                    }
                }
            }
        }
        let mut out = xhat.clone();
        for ch in 0..c {
            let g = self.gamma.value[ch];
            let be = self.beta.value[ch];
            out.index_axis_mut(Axis(1), ch).mapv_inplace(|v| g * v + be);
        }
        self.cache = Some(BnCache { xhat, inv_std, mode });
        out
    }

    pub fn backward(&mut self, gy: &Array4<T>) -> Array4<T> {
        let BnCache { xhat, inv_std, mode } =
            self.cache.take().expect("batch-norm backward without forward");
        let (b, c, h, w) = gy.dim();
        let n = cast::<T>((b * h * w) as f64);
        let mut dx = Array4::zeros((b, c, h, w));
        for ch in 0..c {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for bi in 0..b {
                for y in 0..h {
                    for xx in 0..w {
                        let g = gy[[bi, ch, y, xx]];
                        sum_g += g;
                        sum_gx += g * xhat[[bi, ch, y, xx]];
                    }
                }
            }
            self.beta.grad[ch] += sum_g;
            self.gamma.grad[ch] += sum_gx;
            let gamma = self.gamma.value[ch];
            let istd = inv_std[ch];
            match mode {
                Mode::Train => {
                    // d/dx of ((x - mean) / std): couple through the batch
                    // statistics.
                    for bi in 0..b {
                        for y in 0..h {
                            for xx in 0..w {
                                let g = gy[[bi, ch, y, xx]];
                                let xh = xhat[[bi, ch, y, xx]];
                                dx[[bi, ch, y, xx]] =
                                    gamma * istd * (g - sum_g / n - xh * sum_gx / n);
                            }
                        }
                    }
                }
                Mode::Eval => {
                    // Running statistics are constants: the map is affine.
                    for bi in 0..b {
                        for y in 0..h {
                            for xx in 0..w {
                                dx[[bi, ch, y, xx]] = gy[[bi, ch, y, xx]] * gamma * istd;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn zero_grad(&mut self) {
        self.gamma.zero_grad();
        self.beta.zero_grad();
    }

    pub fn visit(&mut self, prefix: &str, trainable_only: bool, f: &mut TensorVisitor<'_, T>) {
        visit_param(format!("{prefix}.gamma"), &mut self.gamma, f);
        visit_param(format!("{prefix}.beta"), &mut self.beta, f);
        if !trainable_only {
            f(
                format!("{prefix}.running_mean"),
                TensorMut { value: self.running_mean.view_mut().into_dyn(), grad: None },
            );
            f(
                format!("{prefix}.running_var"),
                TensorMut { value: self.running_var.view_mut().into_dyn(), grad: None },
            );
        }
    }
}

// ---------------------------------------------------------------------------
// FiLM: adaptive linear layer conditioned on the config feature vector
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct FilmCache<T> {
    x: Array4<T>,
    cond: Array2<T>,
    weights: Vec<Array2<T>>,
    z: Array4<T>,
}

/// Channel-mixing linear layer whose weight matrix and bias are produced per
/// sample from the 8-dim config encoding by an affine hypernetwork
/// (`W = Hw . C + Cw`, `b = Hb . C + Cb`), followed by a PReLU with one
/// learned scalar slope. Initialized so the whole layer is the identity for
/// every conditioning vector.
#[derive(Debug, Clone)]
pub(crate) struct Film<T> {
    /// `(channels * channels, 8)` hypernetwork for the weight matrix.
    pub hw: Param<T, Ix2>,
    /// `(channels, channels)` constant term of the weight matrix.
    pub cw: Param<T, Ix2>,
    /// `(channels, 8)` hypernetwork for the bias.
    pub hb: Param<T, Ix2>,
    /// `(channels,)` constant term of the bias.
    pub cb: Param<T, Ix1>,
    /// Single-element PReLU slope.
    pub slope: Param<T, Ix1>,
    cache: Option<FilmCache<T>>,
}

impl<T: NdFloat> Film<T> {
    pub fn new(channels: usize) -> Self {
        Film {
            hw: Param::new(Array2::zeros((channels * channels, FEATURE_DIM))),
            cw: Param::new(Array2::eye(channels)),
            hb: Param::new(Array2::zeros((channels, FEATURE_DIM))),
            cb: Param::new(Array1::zeros(channels)),
            slope: Param::new(Array1::from_elem(1, cast(0.25))),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.cw.value.dim().0
    }

    /// The per-sample weight matrix `Hw . C + Cw`.
    fn weight_for(&self, cond: &ndarray::ArrayView1<'_, T>) -> Array2<T> {
        let c = self.channels();
        let flat = self.hw.value.dot(cond); // (c*c)
        let mut w = self.cw.value.clone();
        for o in 0..c {
            for i in 0..c {
                w[[o, i]] += flat[o * c + i];
            }
        }
        w
    }

    pub fn forward(&mut self, x: &Array4<T>, cond: &Array2<T>) -> Array4<T> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.channels(), "film channel mismatch");
        assert_eq!(cond.dim(), (b, FEATURE_DIM), "film conditioning shape mismatch");
        let mut z = Array4::zeros((b, c, h, w));
        let mut weights = Vec::with_capacity(b);
        for n in 0..b {
            let cn = cond.row(n);
            let wn = self.weight_for(&cn);
            let bn = self.hb.value.dot(&cn) + &self.cb.value;
            let xn = x
                .index_axis(Axis(0), n)
                .into_shape_with_order((c, h * w))
                .expect("activation is contiguous");
            let zn = wn.dot(&xn); // (c, h*w)
            for o in 0..c {
                for p in 0..h * w {
                    z[[n, o, p / w, p % w]] = zn[[o, p]] + bn[o];
                }
            }
            weights.push(wn);
        }
        let a = self.slope.value[0];
        let out = z.mapv(|v| if v > T::zero() { v } else { a * v });
        self.cache = Some(FilmCache { x: x.clone(), cond: cond.clone(), weights, z });
        out
    }

    pub fn backward(&mut self, gy: &Array4<T>) -> Array4<T> {
        let FilmCache { x, cond, weights, z } =
            self.cache.take().expect("film backward without forward");
        let (b, c, h, w) = x.dim();
        let a = self.slope.value[0];

        // PReLU backward: dz = gy where z > 0, a*gy otherwise; the slope
        // collects gy * z over the negative region.
        let mut gz = Array4::zeros((b, c, h, w));
        let mut da = T::zero();
        for (gzv, (&g, &zv)) in gz.iter_mut().zip(gy.iter().zip(z.iter())) {
            if zv > T::zero() {
                *gzv = g;
            } else {
                *gzv = a * g;
                da += g * zv;
            }
        }
        self.slope.grad[0] += da;

        let mut dx = Array4::zeros((b, c, h, w));
        for n in 0..b {
            let cn = cond.row(n);
            let gzn = gz
                .index_axis(Axis(0), n)
                .into_shape_with_order((c, h * w))
                .expect("gradient is contiguous");
            let xn = x
                .index_axis(Axis(0), n)
                .into_shape_with_order((c, h * w))
                .expect("activation is contiguous");
            let dwn = gzn.dot(&xn.t()); // (c, c)
            let dbn = gzn.sum_axis(Axis(1)); // (c)
            let dxn = weights[n].t().dot(&gzn); // (c, h*w)
            dx.index_axis_mut(Axis(0), n)
                .assign(&dxn.into_shape_with_order((c, h, w)).expect("shape"));

            // Push the per-sample weight/bias gradients through the affine
            // hypernetwork maps.
            self.cw.grad += &dwn;
            self.cb.grad += &dbn;
            for o in 0..c {
                for i in 0..c {
                    let d = dwn[[o, i]];
                    for k in 0..FEATURE_DIM {
                        self.hw.grad[[o * c + i, k]] += d * cn[k];
                    }
                }
                let d = dbn[o];
                for k in 0..FEATURE_DIM {
                    self.hb.grad[[o, k]] += d * cn[k];
                }
            }
        }
        dx
    }

    pub fn zero_grad(&mut self) {
        self.hw.zero_grad();
        self.cw.zero_grad();
        self.hb.zero_grad();
        self.cb.zero_grad();
        self.slope.zero_grad();
    }

    pub fn visit(&mut self, prefix: &str, f: &mut TensorVisitor<'_, T>) {
        visit_param(format!("{prefix}.hyper_weight"), &mut self.hw, f);
        visit_param(format!("{prefix}.const_weight"), &mut self.cw, f);
        visit_param(format!("{prefix}.hyper_bias"), &mut self.hb, f);
        visit_param(format!("{prefix}.const_bias"), &mut self.cb, f);
        visit_param(format!("{prefix}.prelu_slope"), &mut self.slope, f);
    }
}

// ---------------------------------------------------------------------------
// 2x2 max pooling (stride 2)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub(crate) struct MaxPool2x2 {
    /// Winner position (kh * 2 + kw) per output element, for gradient routing.
    cache: Option<ndarray::Array4<u8>>,
}

impl MaxPool2x2 {
    pub fn new() -> Self {
        MaxPool2x2 { cache: None }
    }

    pub fn forward<T: NdFloat>(&mut self, x: &Array4<T>) -> Array4<T> {
        let (b, c, h, w) = x.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even spatial dims, got {h}x{w}");
        let mut out = Array4::zeros((b, c, h / 2, w / 2));
        let mut codes = ndarray::Array4::<u8>::zeros((b, c, h / 2, w / 2));
        for n in 0..b {
            for ch in 0..c {
                for y in 0..h / 2 {
                    for xx in 0..w / 2 {
                        let mut best = x[[n, ch, 2 * y, 2 * xx]];
                        let mut code = 0u8;
                        for kh in 0..2 {
                            for kw in 0..2 {
                                let v = x[[n, ch, 2 * y + kh, 2 * xx + kw]];
                                // Strict comparison keeps the first (row-major)
                                // maximum on ties, deterministically.
                                if v > best {
                                    best = v;
                                    code = (kh * 2 + kw) as u8;
                                }
                            }
                        }
                        out[[n, ch, y, xx]] = best;
                        codes[[n, ch, y, xx]] = code;
                    }
                }
            }
        }
        self.cache = Some(codes);
        out
    }

    pub fn backward<T: NdFloat>(&mut self, gy: &Array4<T>) -> Array4<T> {
        let codes = self.cache.take().expect("max-pool backward without forward");
        let (b, c, hh, hw) = gy.dim();
        let mut dx = Array4::zeros((b, c, hh * 2, hw * 2));
        for n in 0..b {
            for ch in 0..c {
                for y in 0..hh {
                    for xx in 0..hw {
                        let code = codes[[n, ch, y, xx]] as usize;
                        dx[[n, ch, 2 * y + code / 2, 2 * xx + code % 2]] = gy[[n, ch, y, xx]];
                    }
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// 2x2 transposed convolution (stride 2): exact upsampling inverse of pooling
// geometry
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct ConvTranspose2x2<T> {
    /// `(in_channels, out_channels, 2, 2)`.
    pub kernel: Param<T, Ix4>,
    pub bias: Param<T, Ix1>,
    cache: Option<Array4<T>>,
}

impl<T: NdFloat> ConvTranspose2x2<T> {
    pub fn new<R: Rng>(rng: &mut R, in_channels: usize, out_channels: usize) -> Self {
        let std = (2.0 / (in_channels * 4) as f64).sqrt();
        ConvTranspose2x2 {
            kernel: Param::new(normal_init(rng, Ix4(in_channels, out_channels, 2, 2), std)),
            bias: Param::new(Array1::zeros(out_channels)),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<T>) -> Array4<T> {
        let (b, c_in, h, w) = x.dim();
        let (kc_in, c_out, _, _) = self.kernel.value.dim();
        assert_eq!(c_in, kc_in, "transposed-conv channel mismatch");
        let mut out = Array4::zeros((b, c_out, h * 2, w * 2));
        for n in 0..b {
            for o in 0..c_out {
                let bias = self.bias.value[o];
                out.index_axis_mut(Axis(0), n)
                    .index_axis_mut(Axis(0), o)
                    .mapv_inplace(|_| bias);
            }
            for i in 0..c_in {
                for o in 0..c_out {
                    for kh in 0..2 {
                        for kw in 0..2 {
                            let k = self.kernel.value[[i, o, kh, kw]];
                            for y in 0..h {
                                for xx in 0..w {
                                    out[[n, o, 2 * y + kh, 2 * xx + kw]] +=
                                        k * x[[n, i, y, xx]];
                                }
                            }
                        }
                    }
                }
            }
        }
        self.cache = Some(x.clone());
        out
    }

    pub fn backward(&mut self, gy: &Array4<T>) -> Array4<T> {
        let x = self.cache.take().expect("transposed-conv backward without forward");
        let (b, c_in, h, w) = x.dim();
        let (_, c_out, _, _) = self.kernel.value.dim();
        let mut dx = Array4::zeros((b, c_in, h, w));
        for n in 0..b {
            for o in 0..c_out {
                let mut db = T::zero();
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        db += gy[[n, o, y, xx]];
                    }
                }
                self.bias.grad[o] += db;
            }
            for i in 0..c_in {
                for o in 0..c_out {
                    for kh in 0..2 {
                        for kw in 0..2 {
                            let k = self.kernel.value[[i, o, kh, kw]];
                            let mut dk = T::zero();
                            for y in 0..h {
                                for xx in 0..w {
                                    let g = gy[[n, o, 2 * y + kh, 2 * xx + kw]];
                                    dk += g * x[[n, i, y, xx]];
                                    dx[[n, i, y, xx]] += g * k;
                                }
                            }
                            self.kernel.grad[[i, o, kh, kw]] += dk;
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn zero_grad(&mut self) {
        self.kernel.zero_grad();
        self.bias.zero_grad();
    }

    pub fn visit(&mut self, prefix: &str, f: &mut TensorVisitor<'_, T>) {
        visit_param(format!("{prefix}.kernel"), &mut self.kernel, f);
        visit_param(format!("{prefix}.bias"), &mut self.bias, f);
    }
}

// ---------------------------------------------------------------------------
// Adaptive ConvBlock: conv -> batch norm -> FiLM (with its PReLU)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct ConvBlock<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub film: Film<T>,
}

impl<T: NdFloat> ConvBlock<T> {
    pub fn new<R: Rng>(rng: &mut R, in_channels: usize, out_channels: usize) -> Self {
        ConvBlock {
            conv: Conv2d::new(rng, in_channels, out_channels),
            bn: BatchNorm2d::new(out_channels),
            film: Film::new(out_channels),
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, cond: &Array2<T>, mode: Mode) -> Array4<T> {
        let y = self.conv.forward(x);
        let y = self.bn.forward(&y, mode);
        self.film.forward(&y, cond)
    }

    pub fn backward(&mut self, gy: &Array4<T>) -> Array4<T> {
        let g = self.film.backward(gy);
        let g = self.bn.backward(&g);
        self.conv.backward(&g)
    }

    pub fn zero_grad(&mut self) {
        self.conv.zero_grad();
        self.bn.zero_grad();
        self.film.zero_grad();
    }

    pub fn visit(&mut self, prefix: &str, trainable_only: bool, f: &mut TensorVisitor<'_, T>) {
        self.conv.visit(&format!("{prefix}.conv"), f);
        self.bn.visit(&format!("{prefix}.bn"), trainable_only, f);
        self.film.visit(&format!("{prefix}.film"), f);
    }
}

// ---------------------------------------------------------------------------
// L1 loss
// ---------------------------------------------------------------------------

/// Mean absolute difference and its gradient with respect to `pred`, using
/// the subgradient convention sign(0) = 0.
pub fn l1_loss<T: NdFloat>(pred: &Array4<T>, target: &Array4<T>) -> (T, Array4<T>) {
    assert_eq!(pred.dim(), target.dim(), "l1 shape mismatch");
    let n = cast::<T>(pred.len() as f64);
    let mut total = T::zero();
    let mut grad = Array4::zeros(pred.dim());
    for ((gv, &p), &t) in grad.iter_mut().zip(pred.iter()).zip(target.iter()) {
        let d = p - t;
        total += d.abs();
        *gv = if d > T::zero() {
            T::one() / n
        } else if d < T::zero() {
            -T::one() / n
        } else {
            T::zero()
        };
    }
    (total / n, grad)
}

/// L1 averaged only over frames whose mask entry is 1: `mask` is
/// `(batch, frames)` and broadcasts over channels and mels. Padded frames
/// contribute nothing to the loss or the gradient.
pub fn masked_l1_loss<T: NdFloat>(
    pred: &Array4<T>,
    target: &Array4<T>,
    mask: &Array2<T>,
) -> (T, Array4<T>) {
    let (b, c, h, w) = pred.dim();
    assert_eq!(pred.dim(), target.dim(), "l1 shape mismatch");
    assert_eq!(mask.dim(), (b, h), "mask shape mismatch");
    let mut active = T::zero();
    for &m in mask.iter() {
        active += m;
    }
    let denom = active * cast::<T>((c * w) as f64);
    let mut grad = Array4::zeros(pred.dim());
    if denom == T::zero() {
        return (T::zero(), grad);
    }
    let mut total = T::zero();
    for n in 0..b {
        for ch in 0..c {
            for y in 0..h {
                let m = mask[[n, y]];
                if m == T::zero() {
                    continue;
                }
                for xx in 0..w {
                    let d = pred[[n, ch, y, xx]] - target[[n, ch, y, xx]];
                    total += d.abs() * m;
                    grad[[n, ch, y, xx]] = if d > T::zero() {
                        m / denom
                    } else if d < T::zero() {
                        -m / denom
                    } else {
                        T::zero()
                    };
                }
            }
        }
    }
    (total / denom, grad)
}
