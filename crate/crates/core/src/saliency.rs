//! Gradient-based per-track importance, top-fraction selection and score
//! histograms.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HeadKind, MovTInput, MovTModel};
use crate::nn::{Mode, Real, Tensor};
use crate::trackio::PointTrackSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribution {
    /// L2 norm of the track's input gradient.
    #[default]
    Gradient,
    /// L2 norm of gradient × input.
    GradientTimesInput,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceScores {
    pub video_id: String,
    /// `raw / max(raw)`, or all zeros when every raw norm is zero.
    pub scores: Vec<f64>,
    pub raw: Vec<f64>,
}

impl ImportanceScores {
    pub fn from_raw(video_id: impl Into<String>, raw: Vec<f64>) -> Self {
        let max = raw.iter().copied().fold(0.0, f64::max);
        let scores = if max > 0.0 { raw.iter().map(|r| r / max).collect() } else { vec![0.0; raw.len()] };
        ImportanceScores {
            video_id: video_id.into(),
            scores,
            raw,
        }
    }
}

/// Gradient of the `label` logit with respect to unscaled velocity
/// `[N, T, 3]` and mean positions `[N, 2]`, in eval mode.
pub fn input_gradient<F: Real>(
    model: &MovTModel<F>,
    velocity: &Tensor<F>,
    means: &Tensor<F>,
    label: usize,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let classes = match model.config.head {
        HeadKind::Classification { classes } => classes,
        HeadKind::Regression { .. } => {
            return Err(Error::invalid("saliency needs a classification head"));
        }
    };
    if label >= classes {
        return Err(Error::invalid(format!("label {label} outside [0, {classes})")));
    }
    // private copy so concurrent callers never share gradient buffers
    let mut m = model.clone();
    let (_, trace) = m.forward_raw(velocity, means, &mut Mode::Eval)?;
    let mut g = Tensor::<F>::zeros(&[classes]);
    g.data_mut()[label] = F::one();
    let grad = m.backward(&trace, &g)?;
    Ok((grad.velocity, grad.means))
}

/// Per-track raw scores from input gradients: the L2 norm over each track's
/// `T×3` velocity entries and 2 mean coordinates.
pub fn raw_scores<F: Real>(
    velocity: &Tensor<F>,
    means: &Tensor<F>,
    grad_velocity: &Tensor<F>,
    grad_means: &Tensor<F>,
    attribution: Attribution,
) -> Vec<f64> {
    let n = means.shape()[0];
    let per = velocity.len() / n.max(1);
    let term = |g: F, x: F| match attribution {
        Attribution::Gradient => g.as_f64().powi(2),
        Attribution::GradientTimesInput => (g.as_f64() * x.as_f64()).powi(2),
    };
    (0..n)
        .map(|k| {
            let v = velocity.data()[k * per..(k + 1) * per]
                .iter()
                .zip(&grad_velocity.data()[k * per..(k + 1) * per])
                .map(|(&x, &g)| term(g, x));
            let m = means.data()[k * 2..k * 2 + 2]
                .iter()
                .zip(&grad_means.data()[k * 2..k * 2 + 2])
                .map(|(&x, &g)| term(g, x));
            v.chain(m).sum::<f64>().sqrt()
        })
        .collect()
}

pub fn track_importance<F: Real>(
    model: &MovTModel<F>,
    set: &PointTrackSet,
    label: usize,
    attribution: Attribution,
) -> Result<ImportanceScores> {
    let (vel, means) = MovTModel::<F>::input_tensors(&MovTInput::from_set(set))?;
    let (gv, gm) = input_gradient(model, &vel, &means, label)?;
    Ok(ImportanceScores::from_raw(
        set.video_id(),
        raw_scores(&vel, &means, &gv, &gm, attribution),
    ))
}

/// Indices of the `⌈fraction·N⌉` highest scores, highest first; ties go to
/// the lower index.
pub fn topk_tracks(scores: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} outside (0, 1]")));
    }
    let k = ((fraction * scores.len() as f64).ceil() as usize).min(scores.len());
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` edges spanning `[0, 1]`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Mean number of scores above 0.5 per video.
    pub mean_above_half: f64,
}

/// Bin of a score in `[0, 1]`: `[0, 1/b]`, then `(i/b, (i+1)/b]`.
pub fn bin_of(score: f64, bins: usize) -> usize {
    let x = (score.clamp(0.0, 1.0) * bins as f64).ceil() as usize;
    x.saturating_sub(1).min(bins - 1)
}

pub fn importance_histogram(sets: &[ImportanceScores], bins: usize) -> Result<Histogram> {
    if bins < 1 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let mut counts = vec![0u64; bins];
    let mut above = 0usize;
    for s in sets {
        for &v in &s.scores {
            counts[bin_of(v, bins)] += 1;
            if v > 0.5 {
                above += 1;
            }
        }
    }
    Ok(Histogram {
        edges: (0..=bins).map(|i| i as f64 / bins as f64).collect(),
        counts,
        mean_above_half: if sets.is_empty() { 0.0 } else { above as f64 / sets.len() as f64 },
    })
}

/// `video_id,track_index,score`
pub fn scores_csv(sets: &[ImportanceScores]) -> String {
    let mut s = String::from("video_id,track_index,score\n");
    for set in sets {
        for (i, v) in set.scores.iter().enumerate() {
            let _ = writeln!(s, "{},{i},{v}", set.video_id);
        }
    }
    s
}

/// `bin_low,bin_high,count`
pub fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::from("bin_low,bin_high,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        let _ = writeln!(s, "{},{},{c}", h.edges[i], h.edges[i + 1]);
    }
    s
}
