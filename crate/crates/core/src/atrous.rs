//! Hole-algorithm convolution (dense filtering on a subsampled tap grid),
//! kernel zero-stuffing, receptive-field arithmetic over layer chains, and
//! bilinear upsampling of score maps.

use crate::error::{Error, Result};
use crate::tensor::{check_dims, Tensor3};

/// 2-D convolution kernel; weight `(ky, kx, ci, co)` lives at
/// `((ky * kw + kx) * channels_in + ci) * channels_out + co`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    kh: usize,
    kw: usize,
    channels_in: usize,
    channels_out: usize,
    weights: Vec<f32>,
}

impl Kernel2D {
    pub fn from_vec(
        kh: usize,
        kw: usize,
        channels_in: usize,
        channels_out: usize,
        weights: Vec<f32>,
    ) -> Result<Self> {
        if kh == 0 || kw == 0 || channels_in == 0 || channels_out == 0 {
            return Err(Error::ZeroDimension("kernel".into()));
        }
        if weights.len() != kh * kw * channels_in * channels_out {
            return Err(Error::ShapeMismatch(format!(
                "kernel weight count {} != {}x{}x{}x{}",
                weights.len(),
                kh,
                kw,
                channels_in,
                channels_out
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("kernel weights".into()));
        }
        Ok(Self {
            kh,
            kw,
            channels_in,
            channels_out,
            weights,
        })
    }

    pub fn kh(&self) -> usize {
        self.kh
    }

    pub fn kw(&self) -> usize {
        self.kw
    }

    pub fn channels_in(&self) -> usize {
        self.channels_in
    }

    pub fn channels_out(&self) -> usize {
        self.channels_out
    }

    #[inline]
    pub fn weight(&self, ky: usize, kx: usize, ci: usize, co: usize) -> f32 {
        self.weights[((ky * self.kw + kx) * self.channels_in + ci) * self.channels_out + co]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.weights
    }
}

/// One layer of a convolutional chain for receptive-field arithmetic:
/// square kernel, output subsampling stride, and tap dilation
/// (`input_stride`; 1 = dense).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub input_stride: usize,
}

impl LayerSpec {
    pub const fn new(kernel: usize, stride: usize, input_stride: usize) -> Self {
        Self {
            kernel,
            stride,
            input_stride,
        }
    }
}

/// Convolution with dilated taps (`input_stride`) and subsampled outputs
/// (`output_stride`).
///
/// `out(y, x, co) = sum over (ky, kx, ci) of
///  in(y * s_out + ky * s_in, x * s_out + kx * s_in, ci) * w(ky, kx, ci, co)`
/// with taps reading outside the input contributing zero. Output spatial
/// size is `ceil(input / output_stride)`.
///
/// Keeping the filter taps intact and striding the reads is equivalent to a
/// dense convolution with the kernel zero-stuffed by the same rate; see
/// [`zero_stuff_kernel`].
pub fn atrous_conv2d(
    input: &Tensor3,
    kernel: &Kernel2D,
    input_stride: usize,
    output_stride: usize,
) -> Result<Tensor3> {
    if input.channels() != kernel.channels_in() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, kernel expects {}",
            input.channels(),
            kernel.channels_in()
        )));
    }
    if input_stride == 0 || output_stride == 0 {
        return Err(Error::InvalidParam("strides must be >= 1".into()));
    }
    let (h, w) = (input.height(), input.width());
    let out_h = h.div_ceil(output_stride);
    let out_w = w.div_ceil(output_stride);
    let (ci_n, co_n) = (kernel.channels_in(), kernel.channels_out());
    let mut out = vec![0.0f32; check_dims(out_h, out_w, co_n)?];
    for oy in 0..out_h {
        for ox in 0..out_w {
            for co in 0..co_n {
                let mut acc = 0.0f32;
                for ky in 0..kernel.kh() {
                    let iy = oy * output_stride + ky * input_stride;
                    if iy >= h {
                        continue;
                    }
                    for kx in 0..kernel.kw() {
                        let ix = ox * output_stride + kx * input_stride;
                        if ix >= w {
                            continue;
                        }
                        for ci in 0..ci_n {
                            acc += input.get(iy, ix, ci) * kernel.weight(ky, kx, ci, co);
                        }
                    }
                }
                out[(oy * out_w + ox) * co_n + co] = acc;
            }
        }
    }
    Tensor3::from_vec(out_h, out_w, co_n, out)
}

/// Stretches a kernel to effective size `(k - 1) * rate + 1` per axis with
/// the original taps at multiples of `rate` and zeros elsewhere.
pub fn zero_stuff_kernel(kernel: &Kernel2D, rate: usize) -> Result<Kernel2D> {
    if rate == 0 {
        return Err(Error::InvalidParam("rate must be >= 1".into()));
    }
    if rate == 1 {
        return Ok(kernel.clone());
    }
    let kh = (kernel.kh() - 1) * rate + 1;
    let kw = (kernel.kw() - 1) * rate + 1;
    let (ci_n, co_n) = (kernel.channels_in(), kernel.channels_out());
    let mut weights = vec![0.0f32; kh * kw * ci_n * co_n];
    for ky in 0..kernel.kh() {
        for kx in 0..kernel.kw() {
            for ci in 0..ci_n {
                for co in 0..co_n {
                    let idx = (((ky * rate) * kw + kx * rate) * ci_n + ci) * co_n + co;
                    weights[idx] = kernel.weight(ky, kx, ci, co);
                }
            }
        }
    }
    Kernel2D::from_vec(kh, kw, ci_n, co_n, weights)
}

/// Folds a layer chain into `(receptive field, jump)` in input pixels,
/// starting from `(1, 1)`:
/// `rf += (kernel - 1) * input_stride * jump; jump *= stride`.
pub fn receptive_field(layers: &[LayerSpec]) -> Result<(u64, u64)> {
    let mut rf = 1u64;
    let mut jump = 1u64;
    for (i, layer) in layers.iter().enumerate() {
        if layer.kernel == 0 || layer.stride == 0 || layer.input_stride == 0 {
            return Err(Error::InvalidParam(format!(
                "layer {i} has a zero field; kernel, stride and input_stride must be >= 1"
            )));
        }
        rf += (layer.kernel as u64 - 1) * layer.input_stride as u64 * jump;
        jump *= layer.stride as u64;
    }
    Ok((rf, jump))
}

/// Named layer chains for the receptive-field calculator.
///
/// `Vgg16Conv` is the classic 16-layer stack (thirteen 3x3 convolutions,
/// five 2x2/s2 pools) run convolutionally with its first fully-connected
/// layer as a 7x7 convolution.
///
/// The `Fov*` variants describe the score layer of the hole-modified
/// network, where the last two pools keep resolution and the classifier
/// kernel is dilated. Their published field-of-view figures follow the
/// zero-padded classification-input convention: the five stride-2 pools fix
/// a 32-pixel grid and the field is the span of the (dilated) classifier
/// kernel on that grid, with the dilation expressed on the undecimated grid
/// (a quarter of the hole-modified network's input stride). The chains
/// below encode exactly that convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfPreset {
    /// Full conv stack + 7x7 classifier, applied convolutionally.
    Vgg16Conv,
    /// 7x7 classifier kernel, input stride 4.
    Vgg16Fov7x7S4,
    /// 4x4 classifier kernel, input stride 4.
    Vgg16Fov4x4S4,
    /// 4x4 classifier kernel, input stride 8.
    Vgg16Fov4x4S8,
    /// 3x3 classifier kernel, input stride 12.
    Vgg16Fov3x3S12,
}

impl RfPreset {
    pub const ALL: [RfPreset; 5] = [
        RfPreset::Vgg16Conv,
        RfPreset::Vgg16Fov7x7S4,
        RfPreset::Vgg16Fov4x4S4,
        RfPreset::Vgg16Fov4x4S8,
        RfPreset::Vgg16Fov3x3S12,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RfPreset::Vgg16Conv => "vgg16-conv",
            RfPreset::Vgg16Fov7x7S4 => "vgg16-fov-7x7-4",
            RfPreset::Vgg16Fov4x4S4 => "vgg16-fov-4x4-4",
            RfPreset::Vgg16Fov4x4S8 => "vgg16-fov-4x4-8",
            RfPreset::Vgg16Fov3x3S12 => "vgg16-fov-3x3-12",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|p| p.name() == name)
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let conv = LayerSpec::new(3, 1, 1);
        let pool = LayerSpec::new(2, 2, 1);
        match self {
            RfPreset::Vgg16Conv => vec![
                conv,
                conv,
                pool, // block 1
                conv,
                conv,
                pool, // block 2
                conv,
                conv,
                conv,
                pool, // block 3
                conv,
                conv,
                conv,
                pool, // block 4
                conv,
                conv,
                conv,
                pool,                    // block 5
                LayerSpec::new(7, 1, 1), // classifier as convolution
            ],
            RfPreset::Vgg16Fov7x7S4 => Self::footprint_chain(7, 1),
            RfPreset::Vgg16Fov4x4S4 => Self::footprint_chain(4, 1),
            RfPreset::Vgg16Fov4x4S8 => Self::footprint_chain(4, 2),
            RfPreset::Vgg16Fov3x3S12 => Self::footprint_chain(3, 3),
        }
    }

    /// Five stride-2 pools (the 32-pixel grid) and the classifier kernel at
    /// its dilation on the undecimated grid.
    fn footprint_chain(kernel: usize, dilation: usize) -> Vec<LayerSpec> {
        let pool = LayerSpec::new(2, 2, 1);
        vec![
            pool,
            pool,
            pool,
            pool,
            pool,
            LayerSpec::new(kernel, 1, dilation),
        ]
    }
}

/// Bilinear upsampling by an integer factor with half-pixel-center
/// alignment: output `(Y, X)` samples source coordinate
/// `((Y + 0.5) / factor - 0.5, (X + 0.5) / factor - 0.5)`, clamped at the
/// borders. Exact on constant fields.
pub fn bilinear_upsample(input: &Tensor3, factor: usize) -> Result<Tensor3> {
    if factor == 0 {
        return Err(Error::InvalidParam("upsample factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(input.clone());
    }
    let (h, w, c) = (input.height(), input.width(), input.channels());
    let oh = h.saturating_mul(factor);
    let ow = w.saturating_mul(factor);
    let mut out = vec![0.0f32; check_dims(oh, ow, c)?];

    // Per-axis interpolation tables; the grid is separable.
    let axis_table = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f32)> {
        (0..n_out)
            .map(|o| {
                let s = ((o as f32 + 0.5) / factor as f32 - 0.5).clamp(0.0, (n_in - 1) as f32);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f32)
            })
            .collect()
    };
    let ys = axis_table(oh, h);
    let xs = axis_table(ow, w);

    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let p00 = input.pixel(y0, x0);
            let p01 = input.pixel(y0, x1);
            let p10 = input.pixel(y1, x0);
            let p11 = input.pixel(y1, x1);
            let w00 = (1.0 - fy) * (1.0 - fx);
            let w01 = (1.0 - fy) * fx;
            let w10 = fy * (1.0 - fx);
            let w11 = fy * fx;
            for ch in 0..c {
                out[(oy * ow + ox) * c + ch] =
                    w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
            }
        }
    }
    Tensor3::from_vec(oh, ow, c, out)
}
