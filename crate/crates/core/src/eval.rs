//! Segmentation metrics: confusion-matrix accumulation with void handling,
//! per-class and mean intersection-over-union, pixel accuracy, and
//! boundary-band ("trimap") restricted variants of both.

use crate::error::{Error, Result};
use crate::tensor::LabelMap;

/// `num_classes x num_classes` pixel tallies; rows are ground truth, columns
/// are predictions. Void ground-truth pixels are never counted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::ZeroDimension("confusion matrix classes".into()));
        }
        Ok(Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Tallies one prediction/ground-truth pair, restricted to `mask` when
    /// given. Ground-truth void pixels are skipped entirely.
    pub fn accumulate(
        &mut self,
        pred: &LabelMap,
        gt: &LabelMap,
        mask: Option<&TrimapMask>,
    ) -> Result<()> {
        if pred.height() != gt.height() || pred.width() != gt.width() {
            return Err(Error::ShapeMismatch(format!(
                "pred {}x{} vs gt {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        if let Some(m) = mask {
            if m.height() != gt.height() || m.width() != gt.width() {
                return Err(Error::ShapeMismatch(format!(
                    "mask {}x{} vs gt {}x{}",
                    m.height(),
                    m.width(),
                    gt.height(),
                    gt.width()
                )));
            }
        }
        let n = self.num_classes;
        for (i, (&g, &p)) in gt.as_slice().iter().zip(pred.as_slice()).enumerate() {
            if g == gt.void_label() {
                continue;
            }
            if let Some(m) = mask {
                if !m.inside()[i] {
                    continue;
                }
            }
            let g = g as usize;
            if g >= n {
                return Err(Error::LabelOutOfRange(format!(
                    "ground-truth label {g} with {n} classes"
                )));
            }
            if p == pred.void_label() {
                return Err(Error::VoidLabel(format!(
                    "prediction is void at evaluated pixel {i}"
                )));
            }
            let p = p as usize;
            if p >= n {
                return Err(Error::LabelOutOfRange(format!(
                    "predicted label {p} with {n} classes"
                )));
            }
            self.counts[g * n + p] += 1;
        }
        Ok(())
    }

    /// Adds another matrix; per-image matrices may be built in parallel and
    /// merged, which by additivity gives the same result as one pass.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.num_classes != other.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "{} vs {} classes",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class IOU (`TP / (TP + FP + FN)`) and their mean. Classes that
    /// appear in neither ground truth nor prediction have an empty
    /// denominator and are excluded from the mean rather than counted as 0.
    pub fn mean_iou(&self) -> (Vec<Option<f64>>, Option<f64>) {
        let n = self.num_classes;
        let mut per_class = Vec::with_capacity(n);
        let mut sum = 0.0f64;
        let mut counted = 0usize;
        for c in 0..n {
            let tp = self.count(c, c);
            let fp: u64 = (0..n).filter(|&g| g != c).map(|g| self.count(g, c)).sum();
            let fn_: u64 = (0..n).filter(|&p| p != c).map(|p| self.count(c, p)).sum();
            let denom = tp + fp + fn_;
            if denom == 0 {
                per_class.push(None);
            } else {
                let iou = tp as f64 / denom as f64;
                per_class.push(Some(iou));
                sum += iou;
                counted += 1;
            }
        }
        let mean = (counted > 0).then(|| sum / counted as f64);
        (per_class, mean)
    }

    /// Trace over total; an empty matrix has no defined accuracy.
    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::UndefinedMetric(
                "pixel accuracy of an empty confusion matrix".into(),
            ));
        }
        let trace: u64 = (0..self.num_classes).map(|c| self.count(c, c)).sum();
        Ok(trace as f64 / total as f64)
    }
}

/// Boolean band around ground-truth boundaries (or void annotations).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrimapMask {
    height: usize,
    width: usize,
    inside: Vec<bool>,
    radius: usize,
}

impl TrimapMask {
    /// Mask covering the whole image; restricting metrics to it leaves them
    /// unchanged.
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            inside: vec![true; height * width],
            radius: usize::MAX,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    pub fn count_inside(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }
}

/// Capped multi-source Chebyshev distance transform (8-connected BFS).
/// Distances above `cap` are left at `u32::MAX`.
fn chebyshev_distance_capped(seeds: &[bool], height: usize, width: usize, cap: u32) -> Vec<u32> {
    let mut dist = vec![u32::MAX; height * width];
    let mut frontier: Vec<usize> = Vec::new();
    for (i, &s) in seeds.iter().enumerate() {
        if s {
            dist[i] = 0;
            frontier.push(i);
        }
    }
    let mut level = 0u32;
    let mut next: Vec<usize> = Vec::new();
    while !frontier.is_empty() && level < cap {
        level += 1;
        next.clear();
        for &i in &frontier {
            let (y, x) = (i / width, i % width);
            let y0 = y.saturating_sub(1);
            let y1 = (y + 1).min(height - 1);
            let x0 = x.saturating_sub(1);
            let x1 = (x + 1).min(width - 1);
            for ny in y0..=y1 {
                for nx in x0..=x1 {
                    let ni = ny * width + nx;
                    if dist[ni] == u32::MAX {
                        dist[ni] = level;
                        next.push(ni);
                    }
                }
            }
        }
        std::mem::swap(&mut frontier, &mut next);
    }
    dist
}

/// Per-pixel Chebyshev distance to the evaluation seeds, capped at `cap`.
///
/// When the map carries void pixels the seeds are the void set (the
/// annotated boundary band). Otherwise the distance at a pixel is measured
/// to the nearest pixel holding a *different* label, so a band of radius r
/// covers r pixels on each side of an inter-class boundary.
pub fn boundary_distances(gt: &LabelMap, cap: u32) -> Vec<u32> {
    let (h, w) = (gt.height(), gt.width());
    if gt.contains_void() {
        let seeds: Vec<bool> = gt
            .as_slice()
            .iter()
            .map(|&l| l == gt.void_label())
            .collect();
        return chebyshev_distance_capped(&seeds, h, w, cap);
    }
    let mut dist = vec![u32::MAX; h * w];
    let mut labels: Vec<u16> = gt.as_slice().to_vec();
    labels.sort_unstable();
    labels.dedup();
    for &c in &labels {
        let seeds: Vec<bool> = gt.as_slice().iter().map(|&l| l != c).collect();
        let d = chebyshev_distance_capped(&seeds, h, w, cap);
        for (i, &l) in gt.as_slice().iter().enumerate() {
            if l == c {
                dist[i] = d[i];
            }
        }
    }
    dist
}

/// Band of pixels within Chebyshev distance `radius` of the evaluation
/// seeds (see [`boundary_distances`]).
pub fn trimap_band(gt: &LabelMap, radius: usize) -> Result<TrimapMask> {
    if radius == 0 {
        return Err(Error::InvalidParam("trimap radius must be >= 1".into()));
    }
    let dist = boundary_distances(gt, radius as u32);
    Ok(TrimapMask {
        height: gt.height(),
        width: gt.width(),
        inside: dist.into_iter().map(|d| d <= radius as u32).collect(),
        radius,
    })
}

/// One row of a trimap sweep. Metrics are `None` when the band holds no
/// counted pixels at that radius.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimapRow {
    pub radius: usize,
    pub mean_iou: Option<f64>,
    pub pixel_accuracy: Option<f64>,
}

/// Band-restricted metrics for each radius, one confusion matrix per row.
pub fn trimap_curve(
    pred: &LabelMap,
    gt: &LabelMap,
    num_classes: usize,
    radii: &[usize],
) -> Result<Vec<TrimapRow>> {
    let mut rows = Vec::with_capacity(radii.len());
    for &radius in radii {
        let band = trimap_band(gt, radius)?;
        let mut cm = ConfusionMatrix::new(num_classes)?;
        cm.accumulate(pred, gt, Some(&band))?;
        let (_, mean_iou) = cm.mean_iou();
        rows.push(TrimapRow {
            radius,
            mean_iou,
            pixel_accuracy: cm.pixel_accuracy().ok(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn lm(h: usize, w: usize, labels: &[u16]) -> LabelMap {
        LabelMap::from_labels(h, w, labels.to_vec(), 255).unwrap()
    }

    /// Windowed scan: in-band iff some differently-labeled (or void) pixel
    /// lies within the Chebyshev window.
    fn band_oracle(gt: &LabelMap, radius: usize) -> Vec<bool> {
        let (h, w) = (gt.height(), gt.width());
        let has_void = gt.contains_void();
        let r = radius as isize;
        let mut out = vec![false; h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let me = gt.get(y as usize, x as usize);
                'scan: for dy in -r..=r {
                    for dx in -r..=r {
                        let (ny, nx) = (y + dy, x + dx);
                        if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                            continue;
                        }
                        let other = gt.get(ny as usize, nx as usize);
                        let hit = if has_void {
                            other == gt.void_label()
                        } else {
                            other != me
                        };
                        if hit {
                            out[(y * w as isize + x) as usize] = true;
                            break 'scan;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn perfect_prediction_is_diagonal() {
        let gt = lm(2, 2, &[0, 1, 1, 0]);
        let mut cm = ConfusionMatrix::new(2).unwrap();
        cm.accumulate(&gt, &gt, None).unwrap();
        assert_eq!(cm.count(0, 0), 2);
        assert_eq!(cm.count(1, 1), 2);
        assert_eq!(cm.count(0, 1) + cm.count(1, 0), 0);
        let (per_class, mean) = cm.mean_iou();
        assert_eq!(per_class, vec![Some(1.0), Some(1.0)]);
        assert_eq!(mean, Some(1.0));
        assert_abs_diff_eq!(cm.pixel_accuracy().unwrap(), 1.0);
    }

    #[test]
    fn all_void_ground_truth_counts_nothing() {
        let gt = lm(2, 2, &[255, 255, 255, 255]);
        let pred = lm(2, 2, &[0, 1, 0, 1]);
        let mut cm = ConfusionMatrix::new(2).unwrap();
        cm.accumulate(&pred, &gt, None).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(cm.pixel_accuracy().is_err());
    }

    #[test]
    fn hand_counted_three_by_three() {
        // gt: class 0 left column, class 1 elsewhere, one void center.
        let gt = lm(3, 3, &[0, 1, 1, 0, 255, 1, 0, 1, 1]);
        let pred = lm(3, 3, &[0, 1, 0, 1, 1, 1, 0, 1, 1]);
        let mut cm = ConfusionMatrix::new(2).unwrap();
        cm.accumulate(&pred, &gt, None).unwrap();
        // Hand tally over the 8 non-void pixels.
        assert_eq!(cm.count(0, 0), 2);
        assert_eq!(cm.count(0, 1), 1);
        assert_eq!(cm.count(1, 0), 1);
        assert_eq!(cm.count(1, 1), 4);
        let (per_class, mean) = cm.mean_iou();
        assert_abs_diff_eq!(per_class[0].unwrap(), 2.0 / 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(per_class[1].unwrap(), 4.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mean.unwrap(), (0.5 + 4.0 / 6.0) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn absent_class_excluded_from_mean() {
        let gt = lm(1, 2, &[0, 0]);
        let pred = lm(1, 2, &[0, 0]);
        let mut cm = ConfusionMatrix::new(3).unwrap();
        cm.accumulate(&pred, &gt, None).unwrap();
        let (per_class, mean) = cm.mean_iou();
        assert_eq!(per_class[1], None);
        assert_eq!(per_class[2], None);
        assert_eq!(mean, Some(1.0));
    }

    #[test]
    fn two_class_mixed_counts() {
        let mut cm = ConfusionMatrix::new(2).unwrap();
        // counts [[3,1],[1,3]] via constructed maps.
        let gt = lm(2, 4, &[0, 0, 0, 0, 1, 1, 1, 1]);
        let pred = lm(2, 4, &[0, 0, 0, 1, 1, 1, 1, 0]);
        cm.accumulate(&pred, &gt, None).unwrap();
        let (per_class, mean) = cm.mean_iou();
        assert_abs_diff_eq!(per_class[0].unwrap(), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(per_class[1].unwrap(), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(mean.unwrap(), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(cm.pixel_accuracy().unwrap(), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let gt = lm(1, 1, &[7]);
        let pred = lm(1, 1, &[0]);
        let mut cm = ConfusionMatrix::new(2).unwrap();
        assert!(matches!(
            cm.accumulate(&pred, &gt, None),
            Err(Error::LabelOutOfRange(_))
        ));
    }

    #[test]
    fn uniform_ground_truth_has_empty_band() {
        let gt = lm(4, 4, &[3; 16]);
        let band = trimap_band(&gt, 2).unwrap();
        assert_eq!(band.count_inside(), 0);
    }

    #[test]
    fn single_void_pixel_band_is_window() {
        let mut labels = vec![0u16; 49];
        labels[3 * 7 + 3] = 255;
        let gt = lm(7, 7, &labels);
        let band = trimap_band(&gt, 2).unwrap();
        // 5x5 Chebyshev window around the void pixel.
        assert_eq!(band.count_inside(), 25);
        for y in 0..7 {
            for x in 0..7 {
                let expect = (1..=5).contains(&y) && (1..=5).contains(&x);
                assert_eq!(band.inside()[y * 7 + x], expect, "({y},{x})");
            }
        }
    }

    #[test]
    fn vertical_boundary_band_width() {
        // Two regions split at column 5 of a 10-wide map; radius 3 puts
        // three columns on each side in the band.
        let mut labels = vec![0u16; 8 * 10];
        for y in 0..8 {
            for x in 5..10 {
                labels[y * 10 + x] = 1;
            }
        }
        let gt = lm(8, 10, &labels);
        let band = trimap_band(&gt, 3).unwrap();
        let oracle = band_oracle(&gt, 3);
        assert_eq!(band.inside(), &oracle[..]);
        for y in 0..8 {
            for x in 0..10 {
                let expect = (2..=7).contains(&x);
                assert_eq!(band.inside()[y * 10 + x], expect, "({y},{x})");
            }
        }
        assert_eq!(band.count_inside(), 6 * 8);
    }

    #[test]
    fn trimap_curve_perfect_and_undefined_rows() {
        let mut labels = vec![0u16; 8 * 8];
        for y in 0..8 {
            for x in 4..8 {
                labels[y * 8 + x] = 1;
            }
        }
        let gt = lm(8, 8, &labels);
        let rows = trimap_curve(&gt, &gt, 2, &[1, 2, 3]).unwrap();
        for row in &rows {
            assert_eq!(row.mean_iou, Some(1.0));
            assert_eq!(row.pixel_accuracy, Some(1.0));
        }
        // Uniform gt: every band is empty, rows flag both metrics undefined.
        let uniform = lm(4, 4, &[0; 16]);
        let rows = trimap_curve(&uniform, &uniform, 2, &[1, 5]).unwrap();
        for row in rows {
            assert_eq!(row.mean_iou, None);
            assert_eq!(row.pixel_accuracy, None);
        }
    }

    #[test]
    fn trimap_curve_matches_manual_accumulation() {
        // Constructed 8x8 case with an imperfect prediction.
        let mut gl = vec![0u16; 64];
        for y in 0..8 {
            for x in 0..8 {
                if x >= 4 {
                    gl[y * 8 + x] = 1;
                }
            }
        }
        let gt = lm(8, 8, &gl);
        let mut pl = gl.clone();
        // Prediction shifts the boundary right by one in the top half.
        for y in 0..4 {
            pl[y * 8 + 4] = 0;
        }
        let pred = lm(8, 8, &pl);
        let radii = [1usize, 2, 4];
        let rows = trimap_curve(&pred, &gt, 2, &radii).unwrap();
        for (row, &radius) in rows.iter().zip(&radii) {
            let band = band_oracle(&gt, radius);
            // Manual per-radius accumulation.
            let mut counts = [[0u64; 2]; 2];
            for i in 0..64 {
                if band[i] {
                    counts[gl[i] as usize][pl[i] as usize] += 1;
                }
            }
            let iou = |c: usize| {
                let tp = counts[c][c];
                let denom = tp + counts[c][1 - c] + counts[1 - c][c];
                tp as f64 / denom as f64
            };
            let expect_miou = (iou(0) + iou(1)) / 2.0;
            let total: u64 = counts.iter().flatten().sum();
            let expect_acc = (counts[0][0] + counts[1][1]) as f64 / total as f64;
            assert_abs_diff_eq!(row.mean_iou.unwrap(), expect_miou, epsilon = 1e-12);
            assert_abs_diff_eq!(row.pixel_accuracy.unwrap(), expect_acc, epsilon = 1e-12);
        }
    }

    #[test]
    fn full_mask_equals_unmasked() {
        let gt = lm(3, 4, &[0, 1, 2, 1, 255, 0, 1, 2, 2, 2, 1, 0]);
        let pred = lm(3, 4, &[0, 1, 1, 1, 0, 0, 1, 2, 2, 0, 1, 0]);
        let mut a = ConfusionMatrix::new(3).unwrap();
        a.accumulate(&pred, &gt, None).unwrap();
        let mut b = ConfusionMatrix::new(3).unwrap();
        b.accumulate(&pred, &gt, Some(&TrimapMask::full(3, 4)))
            .unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        // Accumulation is additive: sum of per-image matrices == one pass.
        #[test]
        fn accumulate_additivity(
            la in proptest::collection::vec(0u16..3, 12),
            lb in proptest::collection::vec(0u16..3, 12),
            pa in proptest::collection::vec(0u16..3, 12),
            pb in proptest::collection::vec(0u16..3, 12),
        ) {
            let (gta, gtb) = (lm(3, 4, &la), lm(3, 4, &lb));
            let (pra, prb) = (lm(3, 4, &pa), lm(3, 4, &pb));
            let mut joint = ConfusionMatrix::new(3).unwrap();
            joint.accumulate(&pra, &gta, None).unwrap();
            joint.accumulate(&prb, &gtb, None).unwrap();
            let mut ca = ConfusionMatrix::new(3).unwrap();
            ca.accumulate(&pra, &gta, None).unwrap();
            let mut cb = ConfusionMatrix::new(3).unwrap();
            cb.accumulate(&prb, &gtb, None).unwrap();
            ca.merge(&cb).unwrap();
            prop_assert_eq!(joint, ca);
        }

        // mean_iou is invariant under a simultaneous relabeling of pred and gt.
        #[test]
        fn mean_iou_relabel_invariance(
            gl in proptest::collection::vec(0u16..4, 16),
            pl in proptest::collection::vec(0u16..4, 16),
        ) {
            let perm = [2u16, 0, 3, 1];
            let mut cm = ConfusionMatrix::new(4).unwrap();
            cm.accumulate(&lm(4, 4, &pl), &lm(4, 4, &gl), None).unwrap();
            let glp: Vec<u16> = gl.iter().map(|&l| perm[l as usize]).collect();
            let plp: Vec<u16> = pl.iter().map(|&l| perm[l as usize]).collect();
            let mut cmp = ConfusionMatrix::new(4).unwrap();
            cmp.accumulate(&lm(4, 4, &plp), &lm(4, 4, &glp), None).unwrap();
            let (_, a) = cm.mean_iou();
            let (_, b) = cmp.mean_iou();
            match (a, b) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (None, None) => {}
                _ => prop_assert!(false, "one mean defined, the other not"),
            }
        }

        // Bands are monotone in radius and match the windowed-scan oracle.
        #[test]
        fn band_monotone_and_matches_oracle(
            labels in proptest::collection::vec(prop_oneof![Just(0u16), Just(1), Just(2), Just(255)], 48),
        ) {
            let gt = lm(6, 8, &labels);
            let mut prev: Option<Vec<bool>> = None;
            for radius in 1..=4usize {
                let band = trimap_band(&gt, radius).unwrap();
                prop_assert_eq!(band.inside(), &band_oracle(&gt, radius)[..]);
                if let Some(p) = prev {
                    for (small, big) in p.iter().zip(band.inside()) {
                        prop_assert!(!small || *big);
                    }
                }
                prev = Some(band.inside().to_vec());
            }
        }
    }
}
