//! High-dimensional Gaussian filtering, the computational engine behind
//! mean-field message passing.
//!
//! Two routes compute `out_i = sum_j exp(-||f_i - f_j||^2 / 2) * v_j`:
//! an exact O(n^2) pass used as an oracle and for tiny instances, and an
//! approximate permutohedral-lattice pass (splat, separable blur, slice)
//! for real images. Feature rows are pre-divided by their kernel sigmas,
//! so the filters themselves are sigma-free.

mod permutohedral;

pub use permutohedral::{permutohedral_filter, PermutohedralLattice};

use crate::error::{Error, Result};
use crate::tensor::Image;

/// Slice-side normalization of a filter output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeMode {
    /// Raw filter response.
    None,
    /// Divide by the filtered all-ones field, making kernel rows sum to one
    /// and preserving constant inputs exactly.
    Symmetric,
}

/// `n x d` matrix of filter positions, one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_points: usize,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn from_vec(n_points: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension("feature dimension".into()));
        }
        if values.len() != n_points * dim {
            return Err(Error::ShapeMismatch(format!(
                "feature data length {} != {}x{}",
                values.len(),
                n_points,
                dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(Self {
            n_points,
            dim,
            values,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }
}

/// `n x V` matrix of values being filtered (for the CRF, V = label count).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMatrix {
    n_points: usize,
    n_values: usize,
    values: Vec<f32>,
}

impl ValueMatrix {
    pub fn from_vec(n_points: usize, n_values: usize, values: Vec<f32>) -> Result<Self> {
        if n_values == 0 {
            return Err(Error::ZeroDimension("value dimension".into()));
        }
        if values.len() != n_points * n_values {
            return Err(Error::ShapeMismatch(format!(
                "value data length {} != {}x{}",
                values.len(),
                n_points,
                n_values
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("value matrix".into()));
        }
        Ok(Self {
            n_points,
            n_values,
            values,
        })
    }

    pub fn constant(n_points: usize, n_values: usize, value: f32) -> Result<Self> {
        Self::from_vec(n_points, n_values, vec![value; n_points * n_values])
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_values(&self) -> usize {
        self.n_values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n_values..(i + 1) * self.n_values]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }
}

/// Exact O(n^2) Gaussian filter, `out_i = sum_j exp(-||f_i-f_j||^2/2) v_j`.
/// The j == i self term is included (weight 1); excluding it is the CRF
/// layer's job. Accumulates in f64.
pub fn gaussian_filter_exact(
    values: &ValueMatrix,
    features: &FeatureMatrix,
) -> Result<ValueMatrix> {
    if values.n_points() != features.n_points() {
        return Err(Error::ShapeMismatch(format!(
            "{} value rows vs {} feature rows",
            values.n_points(),
            features.n_points()
        )));
    }
    let n = values.n_points();
    let v = values.n_values();
    let mut out = vec![0.0f32; n * v];
    let mut acc = vec![0.0f64; v];
    for i in 0..n {
        let fi = features.row(i);
        acc.iter_mut().for_each(|a| *a = 0.0);
        for j in 0..n {
            let fj = features.row(j);
            let mut d2 = 0.0f32;
            for (a, b) in fi.iter().zip(fj) {
                let d = a - b;
                d2 += d * d;
            }
            let weight = (-0.5 * d2 as f64).exp();
            for (a, &x) in acc.iter_mut().zip(values.row(j)) {
                *a += weight * x as f64;
            }
        }
        for (o, a) in out[i * v..(i + 1) * v].iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    }
    ValueMatrix::from_vec(n, v, out)
}

/// Joint position/color features `(x/sa, y/sa, R/sb, G/sb, B/sb)`, one row
/// per pixel in row-major pixel order.
pub fn bilateral_features(
    image: &Image,
    sigma_alpha: f32,
    sigma_beta: f32,
) -> Result<FeatureMatrix> {
    check_sigma(sigma_alpha, "sigma_alpha")?;
    check_sigma(sigma_beta, "sigma_beta")?;
    let (h, w) = (image.height(), image.width());
    let mut values = Vec::with_capacity(h * w * 5);
    for y in 0..h {
        for x in 0..w {
            let [r, g, b] = image.pixel(y, x);
            values.push(x as f32 / sigma_alpha);
            values.push(y as f32 / sigma_alpha);
            values.push(r as f32 / sigma_beta);
            values.push(g as f32 / sigma_beta);
            values.push(b as f32 / sigma_beta);
        }
    }
    FeatureMatrix::from_vec(h * w, 5, values)
}

/// Pure position features `(x/sg, y/sg)`.
pub fn spatial_features(height: usize, width: usize, sigma_gamma: f32) -> Result<FeatureMatrix> {
    check_sigma(sigma_gamma, "sigma_gamma")?;
    let mut values = Vec::with_capacity(height * width * 2);
    for y in 0..height {
        for x in 0..width {
            values.push(x as f32 / sigma_gamma);
            values.push(y as f32 / sigma_gamma);
        }
    }
    FeatureMatrix::from_vec(height * width, 2, values)
}

fn check_sigma(sigma: f32, name: &str) -> Result<()> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "{name} must be > 0, got {sigma}"
        )));
    }
    Ok(())
}

/// Divide each filtered row by the corresponding row of the filtered
/// all-ones field. Denominators are clamped away from zero.
pub(crate) fn normalize_rows(raw: &mut [f32], norm: &[f32], n_values: usize) {
    for (row, &den) in raw.chunks_exact_mut(n_values).zip(norm) {
        let inv = 1.0 / den.max(1e-20);
        for v in row {
            *v *= inv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Image;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn exact_single_point_is_identity() {
        let f = FeatureMatrix::from_vec(1, 3, vec![4.0, -2.0, 0.5]).unwrap();
        let v = ValueMatrix::from_vec(1, 2, vec![3.0, -1.0]).unwrap();
        let out = gaussian_filter_exact(&v, &f).unwrap();
        assert_eq!(out.row(0), &[3.0, -1.0]);
    }

    #[test]
    fn exact_identical_features_sum_values() {
        let f = FeatureMatrix::from_vec(2, 2, vec![1.0, 2.0, 1.0, 2.0]).unwrap();
        let v = ValueMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = gaussian_filter_exact(&v, &f).unwrap();
        assert_abs_diff_eq!(out.row(0)[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(out.row(0)[1], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(out.row(1)[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(out.row(1)[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn exact_cross_weight_closed_form() {
        // Two points at feature distance sqrt(2): cross weight e^-1.
        let f = FeatureMatrix::from_vec(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let v = ValueMatrix::from_vec(2, 1, vec![2.0, 5.0]).unwrap();
        let out = gaussian_filter_exact(&v, &f).unwrap();
        let e1 = (-1.0f32).exp();
        assert_abs_diff_eq!(out.row(0)[0], 2.0 + e1 * 5.0, epsilon = 1e-5);
        assert_abs_diff_eq!(out.row(1)[0], 5.0 + e1 * 2.0, epsilon = 1e-5);
    }

    #[test]
    fn exact_rejects_size_mismatch() {
        let f = FeatureMatrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let v = ValueMatrix::from_vec(3, 1, vec![0.0; 3]).unwrap();
        assert!(gaussian_filter_exact(&v, &f).is_err());
    }

    #[test]
    fn bilateral_single_pixel() {
        let mut img = Image::new(1, 1).unwrap();
        img.set_pixel(0, 0, [30, 60, 90]);
        let f = bilateral_features(&img, 2.0, 3.0).unwrap();
        assert_eq!(f.dim(), 5);
        assert_eq!(f.row(0), &[0.0, 0.0, 10.0, 20.0, 30.0]);
    }

    #[test]
    fn bilateral_adjacent_pixels_distance_one() {
        let mut img = Image::new(1, 2).unwrap();
        img.set_pixel(0, 0, [10, 10, 10]);
        img.set_pixel(0, 1, [10, 10, 10]);
        let f = bilateral_features(&img, 1.0, 5.0).unwrap();
        let d2: f32 = f
            .row(0)
            .iter()
            .zip(f.row(1))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert_abs_diff_eq!(d2.sqrt(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn bilateral_gradient_image_matches_hand_rows() {
        // 3x3 image whose channels encode a gradient; scalar oracle rows.
        let mut img = Image::new(3, 3).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                let v = (10 * (3 * y + x)) as u8;
                img.set_pixel(y, x, [v, v + 1, v + 2]);
            }
        }
        let (sa, sb) = (61.0f32, 6.0f32);
        let f = bilateral_features(&img, sa, sb).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                let [r, g, b] = img.pixel(y, x);
                let expect = [
                    x as f32 / sa,
                    y as f32 / sa,
                    r as f32 / sb,
                    g as f32 / sb,
                    b as f32 / sb,
                ];
                let row = f.row(y * 3 + x);
                for (a, e) in row.iter().zip(expect) {
                    assert_abs_diff_eq!(*a, e, epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn spatial_features_rows() {
        let f = spatial_features(2, 3, 2.0).unwrap();
        assert_eq!(f.dim(), 2);
        assert_eq!(f.row(0), &[0.0, 0.0]);
        assert_eq!(f.row(1), &[0.5, 0.0]);
        assert_eq!(f.row(5), &[1.0, 0.5]);
    }

    #[test]
    fn sigma_must_be_positive() {
        let img = Image::new(1, 1).unwrap();
        assert!(bilateral_features(&img, 0.0, 1.0).is_err());
        assert!(bilateral_features(&img, 1.0, -2.0).is_err());
        assert!(spatial_features(2, 2, 0.0).is_err());
    }

    fn lcg_vals(seed: u64, len: usize, scale: f32) -> Vec<f32> {
        let mut state = seed | 1;
        (0..len)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((state >> 33) as f32 / u32::MAX as f32 - 0.5) * 2.0 * scale
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        // The induced kernel matrix is symmetric: <filter(u), v> == <u, filter(v)>.
        #[test]
        fn exact_filter_kernel_symmetry(seed in any::<u64>()) {
            let n = 50;
            let f = FeatureMatrix::from_vec(n, 3, lcg_vals(seed, n * 3, 3.0)).unwrap();
            let u = ValueMatrix::from_vec(n, 1, lcg_vals(seed ^ 0xabcd, n, 1.0)).unwrap();
            let v = ValueMatrix::from_vec(n, 1, lcg_vals(seed ^ 0x1234, n, 1.0)).unwrap();
            let fu = gaussian_filter_exact(&u, &f).unwrap();
            let fv = gaussian_filter_exact(&v, &f).unwrap();
            let lhs: f64 = fu.as_slice().iter().zip(v.as_slice()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
            let rhs: f64 = u.as_slice().iter().zip(fv.as_slice()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-4 * (1.0 + lhs.abs()));
        }

        // Nonnegative values give nonnegative outputs.
        #[test]
        fn exact_filter_monotone_mass(seed in any::<u64>()) {
            let n = 40;
            let f = FeatureMatrix::from_vec(n, 2, lcg_vals(seed, n * 2, 4.0)).unwrap();
            let vals: Vec<f32> = lcg_vals(seed ^ 99, n, 1.0).into_iter().map(f32::abs).collect();
            let v = ValueMatrix::from_vec(n, 1, vals).unwrap();
            let out = gaussian_filter_exact(&v, &f).unwrap();
            prop_assert!(out.as_slice().iter().all(|&x| x >= 0.0));
        }

        // Permuting point order permutes the output identically.
        #[test]
        fn exact_filter_permutation_equivariance(seed in any::<u64>()) {
            let n = 23;
            let feats = lcg_vals(seed, n * 2, 3.0);
            let vals = lcg_vals(seed ^ 77, n * 2, 1.0);
            let f = FeatureMatrix::from_vec(n, 2, feats.clone()).unwrap();
            let v = ValueMatrix::from_vec(n, 2, vals.clone()).unwrap();
            let out = gaussian_filter_exact(&v, &f).unwrap();

            // Reverse order as the permutation.
            let fp: Vec<f32> = (0..n).rev().flat_map(|i| feats[i * 2..i * 2 + 2].to_vec()).collect();
            let vp: Vec<f32> = (0..n).rev().flat_map(|i| vals[i * 2..i * 2 + 2].to_vec()).collect();
            let out_p = gaussian_filter_exact(
                &ValueMatrix::from_vec(n, 2, vp).unwrap(),
                &FeatureMatrix::from_vec(n, 2, fp).unwrap(),
            ).unwrap();
            for i in 0..n {
                let a = out.row(i);
                let b = out_p.row(n - 1 - i);
                for (x, y) in a.iter().zip(b) {
                    prop_assert!((x - y).abs() <= 1e-5 * (1.0 + x.abs()));
                }
            }
        }
    }
}
