//! Coarse-to-fine cross-validation of the CRF kernel parameters against
//! mean IOU on a held-out sample set. The first round sweeps the full
//! coarse grid; each later round re-grids around the incumbent with the
//! step halved per axis.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atrous::bilinear_upsample;
use crate::densecrf::{inference, InferenceConfig, KernelParams};
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::tensor::{Image, LabelMap, Tensor3};

/// Inclusive `start : step : stop` range over one search axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl AxisRange {
    pub fn new(start: f64, step: f64, stop: f64) -> Self {
        Self { start, stop, step }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !self.step.is_finite() || self.step <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "{name} step must be > 0, got {}",
                self.step
            )));
        }
        if !self.start.is_finite() || !self.stop.is_finite() || self.stop < self.start {
            return Err(Error::InvalidParam(format!(
                "{name} range [{}, {}] is empty",
                self.start, self.stop
            )));
        }
        Ok(())
    }

    fn count(&self) -> usize {
        ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1
    }

    fn values(&self) -> Vec<f64> {
        (0..self.count())
            .map(|k| self.start + k as f64 * self.step)
            .collect()
    }
}

/// Upper bound on candidates per round; catches runaway step sizes.
const MAX_GRID_CELLS: usize = 1_000_000;

/// Search configuration: three swept axes, two fixed parameters, and the
/// refinement schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    pub w1: AxisRange,
    pub sigma_alpha: AxisRange,
    pub sigma_beta: AxisRange,
    pub w2: f64,
    pub sigma_gamma: f64,
    pub refine_rounds: usize,
    pub subset_size: usize,
}

impl Default for SearchSpec {
    /// The standard coarse grid: `w1 in 5:1:10`, `sigma_alpha in 50:10:100`,
    /// `sigma_beta in 3:1:10`, with `w2 = 3` and `sigma_gamma = 3` fixed.
    fn default() -> Self {
        Self {
            w1: AxisRange::new(5.0, 1.0, 10.0),
            sigma_alpha: AxisRange::new(50.0, 10.0, 100.0),
            sigma_beta: AxisRange::new(3.0, 1.0, 10.0),
            w2: 3.0,
            sigma_gamma: 3.0,
            refine_rounds: 2,
            subset_size: usize::MAX,
        }
    }
}

impl SearchSpec {
    fn validate(&self) -> Result<()> {
        self.w1.validate("w1")?;
        self.sigma_alpha.validate("sigma_alpha")?;
        self.sigma_beta.validate("sigma_beta")?;
        if self.refine_rounds == 0 {
            return Err(Error::InvalidParam("refine_rounds must be >= 1".into()));
        }
        if self.subset_size == 0 {
            return Err(Error::InvalidParam("subset_size must be >= 1".into()));
        }
        let cells = self
            .w1
            .count()
            .saturating_mul(self.sigma_alpha.count())
            .saturating_mul(self.sigma_beta.count());
        if cells > MAX_GRID_CELLS {
            return Err(Error::InvalidParam(format!(
                "coarse grid has {cells} cells, limit {MAX_GRID_CELLS}"
            )));
        }
        Ok(())
    }
}

/// One tuning sample: a score tensor (any geometry that upsamples to the
/// image), its image, and ground truth at image resolution.
pub struct TuneSample {
    pub scores: Tensor3,
    pub image: Image,
    pub gt: LabelMap,
}

/// One evaluated candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub params: KernelParams,
    pub score: f64,
}

/// Search outcome; `best`'s score equals the maximum over the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: KernelParams,
    pub score: f64,
    pub trace: Vec<TraceEntry>,
}

/// Minimum sigma kept when a refinement range is clamped positive.
const SIGMA_FLOOR: f64 = 1e-6;

fn axis_around(best: f64, prev_step: f64, floor: f64) -> Vec<f64> {
    let step = prev_step / 2.0;
    // Candidates best + k*step for k in -2..=2; clamping the range to the
    // floor drops values rather than shifting them, so the incumbent always
    // stays on the grid.
    (-2i32..=2)
        .map(|k| best + k as f64 * step)
        .filter(|&v| v >= floor)
        .collect()
}

fn lex_less(a: &KernelParams, b: &KernelParams) -> bool {
    (a.w1, a.sigma_alpha, a.sigma_beta) < (b.w1, b.sigma_alpha, b.sigma_beta)
}

/// Mean IOU of CRF inference over the samples for one candidate.
fn evaluate(
    upsampled: &[Tensor3],
    samples: &[TuneSample],
    params: &KernelParams,
    config: &InferenceConfig,
    num_classes: usize,
) -> Result<f64> {
    let mut cm = ConfusionMatrix::new(num_classes)?;
    for (scores, sample) in upsampled.iter().zip(samples) {
        let out = inference(scores, &sample.image, params, config)?;
        cm.accumulate(&out.labels, &sample.gt, None)?;
    }
    let (_, mean) = cm.mean_iou();
    mean.ok_or_else(|| Error::UndefinedMetric("mean IOU over tuning subset".into()))
}

/// Full coarse-to-fine search. Candidates within a round are evaluated
/// independently (in parallel) but the trace is recorded in grid order,
/// and ties break to the lexicographically smallest `(w1, sigma_alpha,
/// sigma_beta)`.
pub fn grid_search(
    dataset: &[TuneSample],
    spec: &SearchSpec,
    config: &InferenceConfig,
    upsample_factor: usize,
) -> Result<TuneResult> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidParam("empty tuning dataset".into()));
    }
    let samples = &dataset[..spec.subset_size.min(dataset.len())];
    let num_classes = samples[0].scores.channels();
    let mut upsampled = Vec::with_capacity(samples.len());
    for s in samples {
        if s.scores.channels() != num_classes {
            return Err(Error::ShapeMismatch(format!(
                "sample has {} score channels, expected {}",
                s.scores.channels(),
                num_classes
            )));
        }
        let up = bilinear_upsample(&s.scores, upsample_factor)?;
        if up.height() != s.image.height() || up.width() != s.image.width() {
            return Err(Error::ShapeMismatch(format!(
                "upsampled scores {}x{} vs image {}x{}",
                up.height(),
                up.width(),
                s.image.height(),
                s.image.width()
            )));
        }
        upsampled.push(up);
    }

    let mut config = *config;
    config.record_trajectory = false;

    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut best: Option<TraceEntry> = None;
    let mut steps = (spec.w1.step, spec.sigma_alpha.step, spec.sigma_beta.step);

    for round in 0..spec.refine_rounds {
        let (w1s, sas, sbs) = if round == 0 {
            (
                spec.w1.values(),
                spec.sigma_alpha.values(),
                spec.sigma_beta.values(),
            )
        } else {
            let b = best.as_ref().expect("round 0 evaluated").params;
            let grids = (
                axis_around(b.w1 as f64, steps.0, 0.0),
                axis_around(b.sigma_alpha as f64, steps.1, SIGMA_FLOOR),
                axis_around(b.sigma_beta as f64, steps.2, SIGMA_FLOOR),
            );
            steps = (steps.0 / 2.0, steps.1 / 2.0, steps.2 / 2.0);
            grids
        };

        let mut grid: Vec<KernelParams> = Vec::with_capacity(w1s.len() * sas.len() * sbs.len());
        for &w1 in &w1s {
            for &sa in &sas {
                for &sb in &sbs {
                    grid.push(KernelParams::new(
                        w1 as f32,
                        spec.w2 as f32,
                        sa as f32,
                        sb as f32,
                        spec.sigma_gamma as f32,
                    ));
                }
            }
        }

        let scores: Vec<Result<f64>> = grid
            .par_iter()
            .map(|p| evaluate(&upsampled, samples, p, &config, num_classes))
            .collect();
        for (params, score) in grid.into_iter().zip(scores) {
            let entry = TraceEntry {
                params,
                score: score?,
            };
            let better = match &best {
                None => true,
                Some(b) => {
                    entry.score > b.score
                        || (entry.score == b.score && lex_less(&entry.params, &b.params))
                }
            };
            if better {
                best = Some(entry.clone());
            }
            trace.push(entry);
        }
    }

    let best = best.expect("at least one candidate evaluated");
    Ok(TuneResult {
        best: best.params,
        score: best.score,
        trace,
    })
}
