//! Dense containers shared by every stage of the pipeline: real-valued
//! `H x W x C` tensors (score maps, unaries, marginals), 8-bit RGB images
//! and 16-bit label maps, plus the softmax / argmax / negative-log
//! primitives that move between them.

use crate::error::{Error, Result};

/// Label value reserved for pixels excluded from evaluation.
pub const DEFAULT_VOID_LABEL: u16 = 255;

/// Floor applied to probabilities before taking logarithms.
pub const DEFAULT_PROB_FLOOR: f32 = 1e-8;

/// Hard cap on element counts accepted from files or constructors;
/// bounds what a hostile header can make the loaders allocate.
const MAX_ELEMENTS: usize = 1 << 28;

pub(crate) fn check_dims(height: usize, width: usize, channels: usize) -> Result<usize> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::ZeroDimension(format!("{height}x{width}x{channels}")));
    }
    height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .filter(|&n| n <= MAX_ELEMENTS)
        .ok_or_else(|| Error::DimensionOverflow(format!("{height}x{width}x{channels}")))
}

/// Row-major `H x W x C` tensor of 32-bit reals; element `(y, x, c)` lives at
/// `(y * W + x) * C + c`. All stored values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    /// Zero-filled tensor. Rejects zero or overflowing dimensions.
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        let len = check_dims(height, width, channels)?;
        Ok(Self {
            height,
            width,
            channels,
            data: vec![0.0; len],
        })
    }

    /// Wraps an existing buffer; the length must be exactly `H * W * C` and
    /// every value finite.
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let len = check_dims(height, width, channels)?;
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "tensor data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "tensor element {} is {}",
                pos, data[pos]
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    /// Channel slice of one pixel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// 8-bit RGB image, row-major triplets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    rgb: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        let len = check_dims(height, width, 3)?;
        Ok(Self {
            height,
            width,
            rgb: vec![0; len],
        })
    }

    pub fn from_vec(height: usize, width: usize, rgb: Vec<u8>) -> Result<Self> {
        let len = check_dims(height, width, 3)?;
        if rgb.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "image data length {} != {}x{}x3",
                rgb.len(),
                height,
                width
            )));
        }
        Ok(Self { height, width, rgb })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.rgb[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.rgb
    }
}

/// Per-pixel integer class assignments with a reserved void label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
    void_label: u16,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, void_label: u16) -> Result<Self> {
        let len = check_dims(height, width, 1)?;
        Ok(Self {
            height,
            width,
            labels: vec![0; len],
            void_label,
        })
    }

    pub fn from_labels(
        height: usize,
        width: usize,
        labels: Vec<u16>,
        void_label: u16,
    ) -> Result<Self> {
        let len = check_dims(height, width, 1)?;
        if labels.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "label data length {} != {}x{}",
                labels.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
            void_label,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn void_label(&self) -> u16 {
        self.void_label
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, label: u16) {
        self.labels[y * self.width + x] = label;
    }

    #[inline]
    pub fn is_void(&self, y: usize, x: usize) -> bool {
        self.get(y, x) == self.void_label
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.labels
    }

    pub fn contains_void(&self) -> bool {
        self.labels.contains(&self.void_label)
    }

    /// Checks that every non-void label is below `num_classes`.
    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        for (i, &l) in self.labels.iter().enumerate() {
            if l != self.void_label && (l as usize) >= num_classes {
                return Err(Error::LabelOutOfRange(format!(
                    "label {} at index {} with {} classes",
                    l, i, num_classes
                )));
            }
        }
        Ok(())
    }
}

/// A [`Tensor3`] whose channels form a probability simplex at every pixel
/// (non-negative, summing to one within 1e-5).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbField(Tensor3);

impl ProbField {
    const SUM_TOL: f32 = 1e-5;

    /// Validates the simplex invariant on every pixel.
    pub fn from_tensor(t: Tensor3) -> Result<Self> {
        for y in 0..t.height() {
            for x in 0..t.width() {
                let px = t.pixel(y, x);
                let mut sum = 0.0f32;
                for &v in px {
                    if v < 0.0 {
                        return Err(Error::InvalidParam(format!(
                            "probability {} < 0 at ({}, {})",
                            v, y, x
                        )));
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > Self::SUM_TOL {
                    return Err(Error::InvalidParam(format!(
                        "probabilities sum to {} at ({}, {})",
                        sum, y, x
                    )));
                }
            }
        }
        Ok(Self(t))
    }

    /// For internal producers that normalize by construction.
    pub(crate) fn from_tensor_unchecked(t: Tensor3) -> Self {
        debug_assert!(Self::from_tensor(t.clone()).is_ok());
        Self(t)
    }

    pub fn as_tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.0
    }

    /// Elementwise `ln(max(p, floor))`, the probability field on log scale.
    pub fn log_scores(&self, floor: f32) -> Result<Tensor3> {
        let neg = neg_log(self, floor)?;
        let data = neg.as_slice().iter().map(|v| -v).collect();
        Tensor3::from_vec(neg.height(), neg.width(), neg.channels(), data)
    }
}

impl std::ops::Deref for ProbField {
    type Target = Tensor3;

    fn deref(&self) -> &Tensor3 {
        &self.0
    }
}

/// Channel-wise softmax with per-pixel max subtraction.
pub fn softmax_channels(scores: &Tensor3) -> Result<ProbField> {
    if let Some(pos) = scores.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("softmax input element {}", pos)));
    }
    let mut out = scores.clone();
    let c = out.channels();
    for px in out.as_mut_slice().chunks_exact_mut(c) {
        let max = px.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in px.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in px.iter_mut() {
            *v /= sum;
        }
    }
    Ok(ProbField::from_tensor_unchecked(out))
}

/// Per-pixel argmax over channels; ties break to the lowest channel index.
pub fn argmax_channels(field: &Tensor3) -> LabelMap {
    argmax_channels_with_void(field, DEFAULT_VOID_LABEL)
}

/// As [`argmax_channels`] with an explicit void label for the output map.
pub fn argmax_channels_with_void(field: &Tensor3, void_label: u16) -> LabelMap {
    debug_assert!(field.channels() <= u16::MAX as usize);
    let c = field.channels();
    let labels = field
        .as_slice()
        .chunks_exact(c)
        .map(|px| {
            let mut best = 0usize;
            for (i, &v) in px.iter().enumerate().skip(1) {
                if v > px[best] {
                    best = i;
                }
            }
            best as u16
        })
        .collect();
    LabelMap::from_labels(field.height(), field.width(), labels, void_label)
        .expect("argmax output shape matches input")
}

/// Elementwise `-ln(max(p, floor))`; the floor keeps the output finite.
pub fn neg_log(p: &ProbField, floor: f32) -> Result<Tensor3> {
    if !floor.is_finite() || floor <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "probability floor must be positive, got {floor}"
        )));
    }
    let data = p.as_slice().iter().map(|&v| -v.max(floor).ln()).collect();
    Tensor3::from_vec(p.height(), p.width(), p.channels(), data)
}
