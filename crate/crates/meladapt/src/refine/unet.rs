//! Config-conditioned U-Net over mel spectrograms.
//!
//! The network sees a converted mel (in the common base value space) as a
//! one-channel image `(batch, 1, frames, mels)` together with the target
//! config's feature encoding, and predicts a correction on top of a global
//! input→output residual. Every conv block is conditioned on the feature
//! vector through its FiLM layer, so one set of weights serves every target
//! configuration.
//!
//! Geometry: `levels` rounds of 2x2 max-pooling on the way down and 2x2
//! transposed convolutions on the way up, with additive skip connections at
//! every resolution. Inputs whose frame or mel count is not divisible by
//! `2^levels` are padded by edge replication and cropped back afterwards.

use ndarray::{s, Array2, Array4, NdFloat};
use rand::Rng;
use rand::SeedableRng;

use super::nn::{cast, Conv2d, ConvBlock, ConvTranspose2x2, MaxPool2x2, Mode, TensorVisitor};
use crate::config::{encode_config_features, MelConfig, FEATURE_DIM, NORMALIZING_BASE};
use crate::convert::approximate_convert;
use crate::dsp::{MelSpectrogram, ValueSpace};
use crate::error::{Error, Result};
use crate::normalize::{from_base, to_base};

/// Architecture metadata: enough to rebuild the parameter shapes, and stored
/// alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkShape {
    /// Mel-bin count the weights were trained for.
    pub n_mels: usize,
    /// Number of pooling levels (encoder/decoder block pairs).
    pub levels: usize,
    /// Channel count after the input projection.
    pub base_channels: usize,
}

impl NetworkShape {
    /// The shipped default: four levels, widths 32→64→128→256 at the
    /// deepest resolutions.
    pub const DEFAULT: NetworkShape = NetworkShape { n_mels: 80, levels: 4, base_channels: 32 };

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 8 {
            return Err(Error::InvalidArgument(format!(
                "network levels must be in 1..=8, got {}",
                self.levels
            )));
        }
        if self.base_channels == 0 || self.n_mels == 0 {
            return Err(Error::InvalidArgument(
                "network base_channels and n_mels must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Channel width at each resolution, index 0 = full resolution. The
    /// first level keeps the base width; each further level doubles it.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.levels + 1);
        w.push(self.base_channels);
        for d in 1..=self.levels {
            w.push(self.base_channels << (d - 1));
        }
        w
    }

    /// Spatial dims must be padded to a multiple of this before encoding.
    pub fn downsample_factor(&self) -> usize {
        1 << self.levels
    }
}

impl Default for NetworkShape {
    fn default() -> Self {
        NetworkShape::DEFAULT
    }
}

/// Pads frames/mels up to multiples of `mult` by replicating the last row
/// and column.
fn pad_to_multiple<T: NdFloat>(x: &Array4<T>, mult: usize) -> Array4<T> {
    let (b, c, h, w) = x.dim();
    let hp = h.div_ceil(mult) * mult;
    let wp = w.div_ceil(mult) * mult;
    if hp == h && wp == w {
        return x.clone();
    }
    let mut out = Array4::zeros((b, c, hp, wp));
    for n in 0..b {
        for ch in 0..c {
            for y in 0..hp {
                let sy = y.min(h - 1);
                for xx in 0..wp {
                    out[[n, ch, y, xx]] = x[[n, ch, sy, xx.min(w - 1)]];
                }
            }
        }
    }
    out
}

/// Adjoint of [`pad_to_multiple`]: folds gradient mass on replicated cells
/// back onto the edge cells they copied.
fn fold_padding<T: NdFloat>(g: &Array4<T>, h: usize, w: usize) -> Array4<T> {
    let (b, c, hp, wp) = g.dim();
    if hp == h && wp == w {
        return g.clone();
    }
    let mut out = Array4::zeros((b, c, h, w));
    for n in 0..b {
        for ch in 0..c {
            for y in 0..hp {
                let sy = y.min(h - 1);
                for xx in 0..wp {
                    out[[n, ch, sy, xx.min(w - 1)]] += g[[n, ch, y, xx]];
                }
            }
        }
    }
    out
}

/// The adaptor network. Generic over the float type: inference and training
/// use `f32`, gradient tests instantiate `f64`.
#[derive(Debug, Clone)]
pub struct RefineNet<T> {
    shape: NetworkShape,
    in_proj: Conv2d<T>,
    enc: Vec<ConvBlock<T>>,
    pools: Vec<MaxPool2x2>,
    ups: Vec<ConvTranspose2x2<T>>,
    dec: Vec<ConvBlock<T>>,
    out_proj: Conv2d<T>,
    /// Original (unpadded) spatial dims of the last forward pass.
    last_dims: Option<(usize, usize)>,
}

impl<T: NdFloat> RefineNet<T> {
    /// Fresh network. Convolutions get Kaiming-normal kernels from `rng`;
    /// FiLM layers start as the identity and the output projection starts at
    /// zero, so a new network is exactly the identity map (it learns a
    /// correction on top of the global residual).
    pub fn new<R: Rng>(shape: NetworkShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let widths = shape.widths();
        let l = shape.levels;
        let mut enc = Vec::with_capacity(l);
        let mut pools = Vec::with_capacity(l);
        let mut ups = Vec::with_capacity(l);
        let mut dec = Vec::with_capacity(l);
        let in_proj = Conv2d::new(rng, 1, widths[0]);
        for d in 1..=l {
            enc.push(ConvBlock::new(rng, widths[d - 1], widths[d]));
            pools.push(MaxPool2x2::new());
        }
        for d in 1..=l {
            ups.push(ConvTranspose2x2::new(rng, widths[d], widths[d - 1]));
        }
        for d in 1..=l {
            dec.push(ConvBlock::new(rng, widths[d - 1], widths[d - 1]));
        }
        let out_proj = Conv2d::zeroed(widths[0], 1);
        Ok(RefineNet { shape, in_proj, enc, pools, ups, dec, out_proj, last_dims: None })
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    /// Forward pass on a batch `(batch, 1, frames, mels)` with one
    /// conditioning row per sample. Output has the input's shape.
    pub fn forward(&mut self, x: &Array4<T>, cond: &Array2<T>, mode: Mode) -> Array4<T> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, 1, "network input must have one channel");
        assert_eq!(cond.dim(), (b, FEATURE_DIM), "conditioning shape mismatch");
        let l = self.shape.levels;

        let xp = pad_to_multiple(x, self.shape.downsample_factor());
        let mut feat = self.in_proj.forward(&xp);
        let mut skips: Vec<Array4<T>> = Vec::with_capacity(l);
        for d in 0..l {
            skips.push(feat.clone());
            let t = self.enc[d].forward(&feat, cond, mode);
            feat = self.pools[d].forward(&t);
        }
        for d in (0..l).rev() {
            let up = self.ups[d].forward(&feat);
            feat = self.dec[d].forward(&(up + &skips[d]), cond, mode);
        }
        let out = self.out_proj.forward(&feat) + &xp;
        self.last_dims = Some((h, w));
        out.slice(s![.., .., ..h, ..w]).to_owned()
    }

    /// Reverse-mode pass: accumulates parameter gradients for the last
    /// [`forward`](Self::forward) call and returns the gradient with respect
    /// to the input.
    pub fn backward(&mut self, gy: &Array4<T>) -> Result<Array4<T>> {
        let (h, w) = self.last_dims.take().ok_or_else(|| {
            Error::InvalidArgument("backward requires a preceding forward pass".into())
        })?;
        let (b, c, gh, gw) = gy.dim();
        assert_eq!((gh, gw), (h, w), "output gradient shape mismatch");
        let mult = self.shape.downsample_factor();
        let hp = h.div_ceil(mult) * mult;
        let wp = w.div_ceil(mult) * mult;
        let l = self.shape.levels;

        // Crop backward: zero-embed into the padded frame.
        let mut g = Array4::zeros((b, c, hp, wp));
        g.slice_mut(s![.., .., ..h, ..w]).assign(gy);

        // Global residual: the padded input receives the output gradient
        // directly, in addition to whatever flows back through the network.
        let mut g_input_padded = g.clone();

        g = self.out_proj.backward(&g);
        let mut g_skips: Vec<Option<Array4<T>>> = (0..l).map(|_| None).collect();
        for d in 0..l {
            let ga = self.dec[d].backward(&g);
            g = self.ups[d].backward(&ga);
            g_skips[d] = Some(ga);
        }
        for d in (0..l).rev() {
            let gt = self.pools[d].backward(&g);
            g = self.enc[d].backward(&gt);
            g += &g_skips[d].take().expect("skip gradient recorded");
        }
        g_input_padded += &self.in_proj.backward(&g);
        Ok(fold_padding(&g_input_padded, h, w))
    }

    pub fn zero_grad(&mut self) {
        self.in_proj.zero_grad();
        for b in &mut self.enc {
            b.zero_grad();
        }
        for u in &mut self.ups {
            u.zero_grad();
        }
        for b in &mut self.dec {
            b.zero_grad();
        }
        self.out_proj.zero_grad();
    }

    /// Visits every tensor in a fixed, documented order. With
    /// `trainable_only` the batch-norm running statistics are skipped
    /// (optimizers); without it the traversal covers everything that belongs
    /// in a weights file.
    pub fn for_each_tensor(&mut self, trainable_only: bool, f: &mut TensorVisitor<'_, T>) {
        self.in_proj.visit("in_proj", f);
        for (i, b) in self.enc.iter_mut().enumerate() {
            b.visit(&format!("enc{}", i + 1), trainable_only, f);
        }
        for (i, u) in self.ups.iter_mut().enumerate() {
            u.visit(&format!("up{}", i + 1), f);
        }
        for (i, b) in self.dec.iter_mut().enumerate() {
            b.visit(&format!("dec{}", i + 1), trainable_only, f);
        }
        self.out_proj.visit("out_proj", f);
    }

    /// Total number of trainable parameters.
    pub fn parameter_count(&mut self) -> usize {
        let mut n = 0;
        self.for_each_tensor(true, &mut |_, t| n += t.value.len());
        n
    }
}

impl<T: NdFloat> RefineNet<T> {
    /// Runs the network on a single base-space mel spectrogram, conditioned
    /// on the target config. The result stays in base space.
    pub fn forward_mel(
        &mut self,
        mel: &MelSpectrogram,
        cfg_tgt: &MelConfig,
        mode: Mode,
    ) -> Result<MelSpectrogram> {
        let base_space = ValueSpace::of(&NORMALIZING_BASE);
        if mel.space != base_space {
            return Err(Error::ValueSpaceMismatch {
                expected: base_space.describe(),
                found: mel.space.describe(),
            });
        }
        if mel.n_mels() != self.shape.n_mels {
            return Err(Error::MelCountMismatch { left: mel.n_mels(), right: self.shape.n_mels });
        }
        let (frames, mels) = (mel.frames(), mel.n_mels());
        let mut x = Array4::zeros((1, 1, frames, mels));
        for fr in 0..frames {
            for m in 0..mels {
                x[[0, 0, fr, m]] = cast::<T>(mel.values[[fr, m]]);
            }
        }
        let cond = condition_row::<T>(cfg_tgt);
        let y = self.forward(&x, &cond, mode);
        let mut values = mel.values.clone();
        for fr in 0..frames {
            for m in 0..mels {
                values[[fr, m]] = y[[0, 0, fr, m]].to_f64().expect("float converts");
            }
        }
        Ok(MelSpectrogram { values, space: mel.space, config: mel.config.clone() })
    }
}

/// The conditioning row for one target config: its feature encoding as a
/// `(1, FEATURE_DIM)` array.
pub(crate) fn condition_row<T: NdFloat>(cfg: &MelConfig) -> Array2<T> {
    let feats = encode_config_features(&cfg.split().0);
    Array2::from_shape_fn((1, FEATURE_DIM), |(_, k)| cast::<T>(feats.0[k]))
}

/// Full learned conversion: the analytic approximate conversion into
/// `cfg_tgt`, then the refinement network's correction. Input and output are
/// in their configs' own value spaces.
pub fn refine_convert(
    m_src: &MelSpectrogram,
    cfg_tgt: &MelConfig,
    net: &mut RefineNet<f32>,
    n_iter: usize,
) -> Result<MelSpectrogram> {
    let approx = approximate_convert(m_src, cfg_tgt, n_iter)?;
    let base = to_base(&approx)?;
    let refined = net.forward_mel(&base, cfg_tgt, Mode::Eval)?;
    from_base(&refined, &cfg_tgt.split().1)
}

/// Deterministic architecture scaffold used when loading weights: the values
/// are immediately overwritten, only the shapes matter.
pub(crate) fn scaffold<T: NdFloat>(shape: NetworkShape) -> Result<RefineNet<T>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    RefineNet::new(shape, &mut rng)
}
