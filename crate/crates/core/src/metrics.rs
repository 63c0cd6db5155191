//! Instance-segmentation average precision and runtime profiling.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::cascade::ScoredInstance;
use crate::error::{Error, Result};
use crate::grid::GridShape;
use crate::synth::GtInstance;

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Predictions and ground truth of one image.
#[derive(Debug, Clone, Copy)]
pub struct ImageEval<'a> {
    pub predictions: &'a [ScoredInstance],
    pub ground_truth: &'a [GtInstance],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAp {
    pub class: usize,
    pub gt_count: usize,
    /// AP at each threshold, in threshold order.
    pub per_threshold: Vec<f64>,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApReport {
    pub thresholds: Vec<f64>,
    pub per_class: Vec<ClassAp>,
    /// Mean over classes that have ground truth; `None` when no class has.
    pub mean_ap: Option<f64>,
    /// Mean over classes of AP at the 0.5 threshold, if it was evaluated.
    pub ap50: Option<f64>,
    /// Mean over classes at each threshold.
    pub mean_per_threshold: Vec<f64>,
}

/// Area under the interpolated precision/recall curve of a ranked list of
/// true/false positives against `n_gt` ground-truth objects.
fn interpolated_ap(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(hits.len());
    for (i, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
    }
    // Make precision non-increasing from the right.
    for i in (0..points.len().saturating_sub(1)).rev() {
        points[i].1 = points[i].1.max(points[i + 1].1);
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in points {
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}

/// Cityscapes-style AP pooled over images. For every class and threshold
/// `t`, predictions are ranked by descending score and each is matched to
/// the unmatched same-class ground truth of its image with the highest IoU,
/// provided that IoU is strictly greater than `t`.
pub fn average_precision(images: &[ImageEval<'_>], thresholds: &[f64]) -> Result<ApReport> {
    // IoU of every same-class (prediction, gt) pair, per image.
    let mut ious: Vec<Vec<Vec<f64>>> = Vec::with_capacity(images.len());
    let mut classes: BTreeMap<usize, usize> = BTreeMap::new();
    for img in images {
        for g in img.ground_truth {
            *classes.entry(g.class).or_insert(0) += 1;
        }
        let table = img
            .predictions
            .iter()
            .map(|p| {
                img.ground_truth
                    .iter()
                    .map(|g| if g.class == p.class { p.mask.iou(&g.mask) } else { Ok(0.0) })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        ious.push(table);
    }

    let mut per_class = Vec::new();
    for (&class, &gt_count) in &classes {
        let mut ranked: Vec<(usize, usize, f64)> = Vec::new();
        for (i, img) in images.iter().enumerate() {
            for (j, p) in img.predictions.iter().enumerate() {
                if p.class == class {
                    ranked.push((i, j, p.score));
                }
            }
        }
        ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));

        let per_threshold: Vec<f64> = thresholds
            .iter()
            .map(|&t| {
                let mut matched: Vec<Vec<bool>> = images.iter().map(|img| vec![false; img.ground_truth.len()]).collect();
                let hits: Vec<bool> = ranked
                    .iter()
                    .map(|&(i, j, _)| {
                        let mut best: Option<(usize, f64)> = None;
                        for (k, g) in images[i].ground_truth.iter().enumerate() {
                            let iou = ious[i][j][k];
                            if g.class == class && !matched[i][k] && iou > t && best.is_none_or(|(_, b)| iou > b) {
                                best = Some((k, iou));
                            }
                        }
                        match best {
                            Some((k, _)) => {
                                matched[i][k] = true;
                                true
                            }
                            None => false,
                        }
                    })
                    .collect();
                interpolated_ap(&hits, gt_count)
            })
            .collect();
        let ap = mean(&per_threshold).unwrap_or(0.0);
        per_class.push(ClassAp {
            class,
            gt_count,
            per_threshold,
            ap,
        });
    }

    let mean_per_threshold: Vec<f64> = (0..thresholds.len())
        .map(|t| mean(&per_class.iter().map(|c| c.per_threshold[t]).collect::<Vec<_>>()).unwrap_or(0.0))
        .collect();
    let mean_ap = mean(&per_class.iter().map(|c| c.ap).collect::<Vec<_>>());
    let ap50 = thresholds
        .iter()
        .position(|&t| (t - 0.5).abs() < 1e-12)
        .filter(|_| !per_class.is_empty())
        .map(|i| mean_per_threshold[i]);
    Ok(ApReport {
        thresholds: thresholds.to_vec(),
        per_class,
        mean_ap,
        ap50,
        mean_per_threshold,
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn median(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Nearest-rank percentile, `q` in `[0, 1]`.
pub fn percentile(samples: &[f64], q: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    if s.is_empty() {
        return f64::NAN;
    }
    let rank = (q * s.len() as f64).ceil().max(1.0) as usize;
    s[rank.min(s.len()) - 1]
}

/// Ordinary least-squares line `y = intercept + slope·x` and its R².
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.len() < 2 {
        return Err(Error::invalid("a line fit needs at least two points"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("a line fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RuntimeRow {
    pub pixels: usize,
    pub seconds_median: f64,
    pub seconds_p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeProfile {
    pub rows: Vec<RuntimeRow>,
    /// Fit of ln(median seconds) against ln(pixels).
    pub fit: LinearFit,
}

impl RuntimeProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pixels,seconds_median,seconds_p95\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.6},{:.6}\n", r.pixels, r.seconds_median, r.seconds_p95));
        }
        out
    }
}

/// Times `run` on one input per size. `make` builds the input for a size
/// (untimed); `run` is called once per input untimed to warm up. The
/// `repeats` timed rounds then visit every size in turn, so drift in machine
/// load is spread over all sizes instead of landing on a few. Rows report
/// the input pixel count with the median and 95th percentile of the
/// timings; the fit is over log-log medians.
pub fn runtime_profile<T, E>(
    sizes: &[GridShape],
    repeats: usize,
    mut make: impl FnMut(GridShape) -> std::result::Result<T, E>,
    mut run: impl FnMut(&T) -> std::result::Result<(), E>,
) -> std::result::Result<RuntimeProfile, E>
where
    E: From<Error>,
{
    if repeats == 0 {
        return Err(Error::invalid("repeats must be positive").into());
    }
    let inputs = sizes.iter().map(|&s| make(s)).collect::<std::result::Result<Vec<_>, E>>()?;
    for input in &inputs {
        run(input)?;
    }
    let mut times = vec![Vec::with_capacity(repeats); sizes.len()];
    for _ in 0..repeats {
        for (input, t) in inputs.iter().zip(&mut times) {
            let start = Instant::now();
            run(input)?;
            t.push(start.elapsed().as_secs_f64());
        }
    }
    let rows: Vec<RuntimeRow> = sizes
        .iter()
        .zip(&times)
        .map(|(shape, t)| RuntimeRow {
            pixels: shape.len(),
            seconds_median: median(t),
            seconds_p95: percentile(t, 0.95),
        })
        .collect();
    let points: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.pixels as f64).ln(), r.seconds_median.max(1e-9).ln()))
        .collect();
    let fit = fit_line(&points)?;
    Ok(RuntimeProfile { rows, fit })
}
