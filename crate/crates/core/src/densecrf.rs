//! Fully-connected CRF over pixels with two Gaussian pairwise kernels (a
//! joint position/color term and a pure position term) under a Potts label
//! compatibility. Mean-field inference runs the per-label message passing
//! as Gaussian filtering in feature space, either exactly or over the
//! permutohedral lattice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::{
    bilateral_features, gaussian_filter_exact, normalize_rows, spatial_features, FeatureMatrix,
    NormalizeMode, PermutohedralLattice, ValueMatrix,
};
use crate::tensor::{
    argmax_channels, neg_log, softmax_channels, Image, LabelMap, ProbField, Tensor3,
    DEFAULT_PROB_FLOOR,
};

/// The five pairwise-kernel hyperparameters: appearance weight `w1` with
/// position scale `sigma_alpha` and color scale `sigma_beta`, smoothness
/// weight `w2` with position scale `sigma_gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub w1: f32,
    pub w2: f32,
    pub sigma_alpha: f32,
    pub sigma_beta: f32,
    pub sigma_gamma: f32,
}

impl KernelParams {
    pub fn new(w1: f32, w2: f32, sigma_alpha: f32, sigma_beta: f32, sigma_gamma: f32) -> Self {
        Self {
            w1,
            w2,
            sigma_alpha,
            sigma_beta,
            sigma_gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_alpha", self.sigma_alpha),
            ("sigma_beta", self.sigma_beta),
            ("sigma_gamma", self.sigma_gamma),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParam(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("w1", self.w1), ("w2", self.w2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParam(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which filtering route carries the messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterBackend {
    /// O(n^2) Gaussian sums; for tiny instances and oracle checks.
    Exact,
    /// Permutohedral lattice approximation.
    Permutohedral,
}

/// Inference settings. Ten parallel update sweeps with symmetric filter
/// normalization over the lattice is the shipping configuration.
#[derive(Debug, Clone, Copy)]
pub struct InferenceConfig {
    pub iterations: usize,
    pub normalize_mode: NormalizeMode,
    pub backend: FilterBackend,
    pub record_trajectory: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            normalize_mode: NormalizeMode::Symmetric,
            backend: FilterBackend::Permutohedral,
            record_trajectory: false,
        }
    }
}

/// The unary cost field: `-log softmax(scores)` per pixel per label.
pub fn unary_from_scores(scores: &Tensor3) -> Result<Tensor3> {
    neg_log(&softmax_channels(scores)?, DEFAULT_PROB_FLOOR)
}

/// Exact CRF energy of a labeling: unary costs plus the Potts-weighted
/// pairwise kernels summed over ordered pixel pairs (each unordered pair
/// counted once, then doubled). O(n^2) with raw kernel values; intended for
/// tiny instances and tests.
pub fn energy(
    labeling: &LabelMap,
    unary: &Tensor3,
    image: &Image,
    params: &KernelParams,
) -> Result<f64> {
    params.validate()?;
    let (h, w) = (unary.height(), unary.width());
    if labeling.height() != h || labeling.width() != w || image.height() != h || image.width() != w
    {
        return Err(Error::ShapeMismatch(format!(
            "labels {}x{}, unary {}x{}, image {}x{}",
            labeling.height(),
            labeling.width(),
            h,
            w,
            image.height(),
            image.width()
        )));
    }
    let n = h * w;
    let labels = labeling.as_slice();
    let mut total = 0.0f64;
    for (i, &l) in labels.iter().enumerate() {
        if l == labeling.void_label() {
            return Err(Error::VoidLabel(format!("pixel {i} in energy labeling")));
        }
        if (l as usize) >= unary.channels() {
            return Err(Error::LabelOutOfRange(format!(
                "label {l} with {} unary channels",
                unary.channels()
            )));
        }
        total += unary.as_slice()[i * unary.channels() + l as usize] as f64;
    }

    let inv_2a = 0.5 / (params.sigma_alpha as f64 * params.sigma_alpha as f64);
    let inv_2b = 0.5 / (params.sigma_beta as f64 * params.sigma_beta as f64);
    let inv_2g = 0.5 / (params.sigma_gamma as f64 * params.sigma_gamma as f64);
    let mut pairwise = 0.0f64;
    for i in 0..n {
        let (yi, xi) = (i / w, i % w);
        let ci = image.pixel(yi, xi);
        for j in i + 1..n {
            if labels[i] == labels[j] {
                continue; // Potts: agreeing pairs cost nothing
            }
            let (yj, xj) = (j / w, j % w);
            let dp = (yi as f64 - yj as f64).powi(2) + (xi as f64 - xj as f64).powi(2);
            let cj = image.pixel(yj, xj);
            let dc: f64 = ci
                .iter()
                .zip(cj)
                .map(|(a, b)| (*a as f64 - b as f64).powi(2))
                .sum();
            let k1 = (-dp * inv_2a - dc * inv_2b).exp();
            let k2 = (-dp * inv_2g).exp();
            pairwise += params.w1 as f64 * k1 + params.w2 as f64 * k2;
        }
    }
    Ok(total + 2.0 * pairwise)
}

enum KernelFilter {
    Exact(FeatureMatrix),
    Lattice(PermutohedralLattice),
}

impl KernelFilter {
    fn raw(&self, values: &ValueMatrix) -> Result<ValueMatrix> {
        match self {
            KernelFilter::Exact(features) => gaussian_filter_exact(values, features),
            KernelFilter::Lattice(lattice) => lattice.filter(values, NormalizeMode::None),
        }
    }

    fn ones_norm(&self, n: usize) -> Result<Vec<f32>> {
        let ones = ValueMatrix::constant(n, 1, 1.0)?;
        Ok(self.raw(&ones)?.as_slice().to_vec())
    }
}

/// Message-passing state for one (image, params) pair. Feature matrices,
/// lattices, self weights and normalization fields are built once and
/// reused across iterations. A built value is immutable, so steps may run
/// concurrently.
pub struct MeanField {
    w1: f32,
    w2: f32,
    bilateral: KernelFilter,
    spatial: KernelFilter,
    /// Raw-scale self response per point (exp(0) = 1 for the exact path,
    /// the lattice self weight otherwise); subtracted from the raw filter
    /// output so messages exclude j == i.
    bilateral_self: Vec<f32>,
    spatial_self: Vec<f32>,
    bilateral_norm: Option<Vec<f32>>,
    spatial_norm: Option<Vec<f32>>,
    height: usize,
    width: usize,
}

impl MeanField {
    pub fn new(
        image: &Image,
        params: &KernelParams,
        mode: NormalizeMode,
        backend: FilterBackend,
    ) -> Result<Self> {
        params.validate()?;
        let bil = bilateral_features(image, params.sigma_alpha, params.sigma_beta)?;
        let sp = spatial_features(image.height(), image.width(), params.sigma_gamma)?;
        let (bilateral, spatial) = match backend {
            FilterBackend::Exact => (KernelFilter::Exact(bil), KernelFilter::Exact(sp)),
            FilterBackend::Permutohedral => (
                KernelFilter::Lattice(PermutohedralLattice::new(&bil)?),
                KernelFilter::Lattice(PermutohedralLattice::new(&sp)?),
            ),
        };
        let n = image.height() * image.width();
        let self_of = |f: &KernelFilter| match f {
            KernelFilter::Exact(_) => vec![1.0f32; n],
            KernelFilter::Lattice(l) => l.self_weights(),
        };
        let bilateral_self = self_of(&bilateral);
        let spatial_self = self_of(&spatial);
        let (bilateral_norm, spatial_norm) = match mode {
            NormalizeMode::None => (None, None),
            NormalizeMode::Symmetric => {
                (Some(bilateral.ones_norm(n)?), Some(spatial.ones_norm(n)?))
            }
        };
        Ok(Self {
            w1: params.w1,
            w2: params.w2,
            bilateral,
            spatial,
            bilateral_self,
            spatial_self,
            bilateral_norm,
            spatial_norm,
            height: image.height(),
            width: image.width(),
        })
    }

    fn check_shape(&self, t: &Tensor3) -> Result<()> {
        if t.height() != self.height || t.width() != self.width {
            return Err(Error::ShapeMismatch(format!(
                "field {}x{} vs image {}x{}",
                t.height(),
                t.width(),
                self.height,
                self.width
            )));
        }
        Ok(())
    }

    /// One simultaneous update of every pixel. Per kernel, the raw filter
    /// output has its own self term removed (so messages exclude j == i)
    /// and is then normalized per the configured mode:
    ///
    /// `m_i(l) = w1 * norm((K_bil (*) Q(l))_i - k_bil(i,i) * Q_i(l))
    ///         + w2 * norm((K_sp (*) Q(l))_i - k_sp(i,i) * Q_i(l))`
    ///
    /// then the Potts transform `pairwise_i(l) = M_i - m_i(l)` with
    /// `M_i = sum_l m_i(l)`, and finally
    /// `Q'_i(l) ∝ exp(-theta_i(l) - pairwise_i(l))` normalized per pixel.
    pub fn step(&self, q: &ProbField, unary: &Tensor3) -> Result<ProbField> {
        self.check_shape(q)?;
        self.check_shape(unary)?;
        if q.channels() != unary.channels() {
            return Err(Error::ShapeMismatch(format!(
                "{} marginal channels vs {} unary channels",
                q.channels(),
                unary.channels()
            )));
        }
        let n = self.height * self.width;
        let labels = q.channels();
        let qv = ValueMatrix::from_vec(n, labels, q.as_slice().to_vec())?;

        let q_data = q.as_slice();
        let mut bil = self.bilateral.raw(&qv)?.as_slice().to_vec();
        for (i, (row, &sw)) in bil
            .chunks_exact_mut(labels)
            .zip(&self.bilateral_self)
            .enumerate()
        {
            for (l, v) in row.iter_mut().enumerate() {
                *v -= sw * q_data[i * labels + l];
            }
        }
        if let Some(norm) = &self.bilateral_norm {
            normalize_rows(&mut bil, norm, labels);
        }
        let mut sp = self.spatial.raw(&qv)?.as_slice().to_vec();
        for (i, (row, &sw)) in sp
            .chunks_exact_mut(labels)
            .zip(&self.spatial_self)
            .enumerate()
        {
            for (l, v) in row.iter_mut().enumerate() {
                *v -= sw * q_data[i * labels + l];
            }
        }
        if let Some(norm) = &self.spatial_norm {
            normalize_rows(&mut sp, norm, labels);
        }

        let theta = unary.as_slice();
        let mut out = vec![0.0f32; n * labels];
        let mut messages = vec![0.0f32; labels];
        for i in 0..n {
            let base = i * labels;
            let mut msum = 0.0f32;
            for l in 0..labels {
                let m = self.w1 * bil[base + l] + self.w2 * sp[base + l];
                messages[l] = m;
                msum += m;
            }
            // exp(-theta - (msum - m)) normalized; max-subtracted for stability.
            let mut max_e = f32::NEG_INFINITY;
            for l in 0..labels {
                let e = -theta[base + l] - (msum - messages[l]);
                out[base + l] = e;
                max_e = max_e.max(e);
            }
            let mut sum = 0.0f32;
            for l in 0..labels {
                let v = (out[base + l] - max_e).exp();
                out[base + l] = v;
                sum += v;
            }
            for l in 0..labels {
                out[base + l] /= sum;
            }
        }
        let t = Tensor3::from_vec(self.height, self.width, labels, out)?;
        Ok(ProbField::from_tensor_unchecked(t))
    }
}

/// One-shot mean-field update; builds the filters for this call only.
pub fn mean_field_step(
    q: &ProbField,
    unary: &Tensor3,
    image: &Image,
    params: &KernelParams,
    mode: NormalizeMode,
    backend: FilterBackend,
) -> Result<ProbField> {
    MeanField::new(image, params, mode, backend)?.step(q, unary)
}

/// Result of [`inference`]: final marginals, their argmax labeling, and the
/// per-iteration marginals when requested.
pub struct InferenceOutput {
    pub q: ProbField,
    pub labels: LabelMap,
    pub trajectory: Option<Vec<ProbField>>,
}

/// Runs mean-field inference from `Q0 = softmax(scores)` for the configured
/// number of iterations and reads out the argmax labeling. Scores must
/// already be at image resolution (upsample first if needed).
pub fn inference(
    scores: &Tensor3,
    image: &Image,
    params: &KernelParams,
    config: &InferenceConfig,
) -> Result<InferenceOutput> {
    if scores.height() != image.height() || scores.width() != image.width() {
        return Err(Error::ShapeMismatch(format!(
            "scores {}x{} vs image {}x{}",
            scores.height(),
            scores.width(),
            image.height(),
            image.width()
        )));
    }
    let unary = unary_from_scores(scores)?;
    let mut q = softmax_channels(scores)?;
    let mut trajectory = config.record_trajectory.then(Vec::new);
    if config.iterations > 0 {
        let mf = MeanField::new(image, params, config.normalize_mode, config.backend)?;
        for _ in 0..config.iterations {
            q = mf.step(&q, &unary)?;
            if let Some(t) = trajectory.as_mut() {
                t.push(q.clone());
            }
        }
    }
    let labels = argmax_channels(&q);
    Ok(InferenceOutput {
        q,
        labels,
        trajectory,
    })
}
