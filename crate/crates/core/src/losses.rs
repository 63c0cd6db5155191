//! Reference implementations of the Gaussian embedding affinity and the
//! training losses defined on pyramid outputs.
//!
//! These are pure functions over dense maps. They are not used by the
//! partitioning path except for [`phi`]; they exist so that network outputs
//! and synthetic data can be checked against the same objective.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{AffinityMap, Direction, EmbeddingMap, GridShape, Label, LabelMap, SemanticMap};

/// `ln 2`: puts Φ = 0.5 at squared distance 1.
pub const DEFAULT_ALPHA: f64 = std::f64::consts::LN_2;
/// Probabilities entering a log are clipped to `[EPS, 1 - EPS]`.
pub const PROB_EPSILON: f64 = 1e-7;

/// Gaussian affinity `exp(-alpha * |a - b|²)`.
pub fn phi(a: &[f64], b: &[f64], alpha: f64) -> Result<f64> {
    check_dims(a, b)?;
    Ok((-alpha * squared_distance(a, b)).exp())
}

/// Gradient of [`phi`] with respect to `a` (the gradient for `b` is its
/// negation).
pub fn phi_grad(a: &[f64], b: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let value = phi(a, b, alpha)?;
    Ok(a.iter().zip(b).map(|(x, y)| -2.0 * alpha * value * (x - y)).collect())
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            what: "embedding vectors",
            expected: format!("dimension {}", a.len()),
            got: format!("dimension {}", b.len()),
        });
    }
    Ok(())
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn clip(p: f64) -> f64 {
    p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON)
}

/// Binary cross-entropy `-t ln p - (1 - t) ln(1 - p)` with clipped `p`.
pub fn bce(target: f64, p: f64) -> f64 {
    let p = clip(p);
    -target * p.ln() - (1.0 - target) * (1.0 - p).ln()
}

/// d BCE / dp, zero where the clip is active.
fn bce_derivative(target: f64, p: f64) -> f64 {
    if p <= PROB_EPSILON || p >= 1.0 - PROB_EPSILON {
        return 0.0;
    }
    -target / p + (1.0 - target) / (1.0 - p)
}

/// Ground truth for one pyramid level.
#[derive(Debug, Clone)]
pub struct GroundTruthScene {
    labels: LabelMap,
    instance_class: BTreeMap<u32, usize>,
    classes: usize,
    background_class: usize,
}

impl GroundTruthScene {
    /// `labels` holds instance ids and `BACKGROUND`; every instance id must
    /// have a class in `instance_class`.
    pub fn new(
        labels: LabelMap,
        instance_class: BTreeMap<u32, usize>,
        classes: usize,
        background_class: usize,
    ) -> Result<Self> {
        if background_class >= classes {
            return Err(Error::invalid(format!(
                "background class {background_class} out of range for {classes} classes"
            )));
        }
        for label in labels.labels() {
            if *label == Label::UNLABELED {
                return Err(Error::invalid("ground truth may not contain unlabeled pixels"));
            }
            if let Some(id) = label.instance_id() {
                match instance_class.get(&id) {
                    Some(&c) if c < classes => {}
                    Some(&c) => return Err(Error::invalid(format!("instance {id} has class {c} >= {classes}"))),
                    None => return Err(Error::invalid(format!("instance {id} has no class"))),
                }
            }
        }
        Ok(Self {
            labels,
            instance_class,
            classes,
            background_class,
        })
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    pub fn shape(&self) -> GridShape {
        self.labels.shape()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn instance_classes(&self) -> &BTreeMap<u32, usize> {
        &self.instance_class
    }

    /// Ground-truth class of a flat pixel index.
    pub fn class_at(&self, pixel: usize) -> usize {
        match self.labels.labels()[pixel].instance_id() {
            Some(id) => self.instance_class[&id],
            None => self.background_class,
        }
    }

    /// Neighbor affinity target: 1 when both pixels carry the same label
    /// (background pairs included), 0 across labels and off the border.
    pub fn affinity_target(&self, dir: Direction, y: usize, x: usize) -> f64 {
        match dir.step(self.shape(), y, x) {
            Some((ny, nx)) if self.labels.get(y, x) == self.labels.get(ny, nx) => 1.0,
            _ => 0.0,
        }
    }

    /// Pixels with at least one 4-neighbor of a different label.
    pub fn boundary_mask(&self) -> Vec<bool> {
        boundary_mask(&self.labels)
    }
}

/// Pixels with at least one in-grid 4-neighbor carrying a different label.
pub fn boundary_mask(labels: &LabelMap) -> Vec<bool> {
    let shape = labels.shape();
    let mut mask = vec![false; shape.len()];
    for y in 0..shape.height {
        for x in 0..shape.width {
            let l = labels.get(y, x);
            mask[shape.index(y, x)] = Direction::ALL.iter().any(|d| {
                d.step(shape, y, x)
                    .is_some_and(|(ny, nx)| labels.get(ny, nx) != l)
            });
        }
    }
    mask
}

/// Push (`L_gd`) and pull (`L_gs`) grouping losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupingLosses {
    pub push: f64,
    pub pull: f64,
    /// False when fewer than two instances exist (push normalizer is zero).
    pub push_defined: bool,
    /// False when there are no instances.
    pub pull_defined: bool,
}

struct InstanceMeans {
    ids: Vec<u32>,
    /// Per-instance member pixels.
    members: Vec<Vec<usize>>,
    means: Vec<Vec<f64>>,
}

fn instance_means(embeddings: &EmbeddingMap, gt: &GroundTruthScene) -> Result<InstanceMeans> {
    if embeddings.shape() != gt.shape() {
        return Err(Error::ShapeMismatch {
            what: "embeddings vs ground truth",
            expected: gt.shape().to_string(),
            got: embeddings.shape().to_string(),
        });
    }
    let ids: Vec<u32> = gt
        .labels
        .labels()
        .iter()
        .filter_map(|l| l.instance_id())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let slot: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let k = embeddings.dim();
    let mut members = vec![Vec::new(); ids.len()];
    let mut means = vec![vec![0.0; k]; ids.len()];
    for (p, label) in gt.labels.labels().iter().enumerate() {
        if let Some(id) = label.instance_id() {
            let s = slot[&id];
            members[s].push(p);
            for (d, m) in means[s].iter_mut().enumerate() {
                *m += embeddings.get(d, p) as f64;
            }
        }
    }
    for (mean, px) in means.iter_mut().zip(&members) {
        let n = px.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
    }
    Ok(InstanceMeans { ids, members, means })
}

/// Push loss over ordered pairs of distinct instance means, pull loss as the
/// mean over instances of the mean over member pixels.
pub fn grouping_losses(embeddings: &EmbeddingMap, gt: &GroundTruthScene, alpha: f64) -> Result<GroupingLosses> {
    let inst = instance_means(embeddings, gt)?;
    let n = inst.ids.len();
    let mut out = GroupingLosses {
        push: 0.0,
        pull: 0.0,
        push_defined: n >= 2,
        pull_defined: n >= 1,
    };
    if n >= 2 {
        let mut sum = 0.0;
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    sum += bce(0.0, phi(&inst.means[a], &inst.means[b], alpha)?);
                }
            }
        }
        out.push = sum / (n * n - n) as f64;
    }
    if n >= 1 {
        let mut sum = 0.0;
        for (mean, px) in inst.means.iter().zip(&inst.members) {
            let mut inner = 0.0;
            for &p in px {
                inner += bce(1.0, phi(mean, &embeddings.vector(p), alpha)?);
            }
            sum += inner / px.len() as f64;
        }
        out.pull = sum / n as f64;
    }
    Ok(out)
}

/// Analytic gradients of the push and pull losses with respect to every
/// embedding value, laid out like [`EmbeddingMap::values`] (`k × h × w`).
pub fn grouping_gradients(
    embeddings: &EmbeddingMap,
    gt: &GroundTruthScene,
    alpha: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let inst = instance_means(embeddings, gt)?;
    let n = inst.ids.len();
    let k = embeddings.dim();
    let npx = embeddings.shape().len();
    let mut push = vec![0.0; k * npx];
    let mut pull = vec![0.0; k * npx];

    if n >= 2 {
        let norm = (n * n - n) as f64;
        for a in 0..n {
            // d/dx_a of both ordered pairs (a,b) and (b,a).
            let mut g_mean = vec![0.0; k];
            for b in 0..n {
                if a == b {
                    continue;
                }
                let value = phi(&inst.means[a], &inst.means[b], alpha)?;
                let scale = 2.0 * bce_derivative(0.0, value) / norm;
                for (d, g) in g_mean.iter_mut().enumerate() {
                    *g += scale * -2.0 * alpha * value * (inst.means[a][d] - inst.means[b][d]);
                }
            }
            let members = &inst.members[a];
            let share = 1.0 / members.len() as f64;
            for &p in members {
                for d in 0..k {
                    push[d * npx + p] += g_mean[d] * share;
                }
            }
        }
    }

    if n >= 1 {
        for (mean, members) in inst.means.iter().zip(&inst.members) {
            let ns = members.len() as f64;
            let outer = 1.0 / (n as f64 * ns);
            // Accumulated gradient flowing through the mean.
            let mut via_mean = vec![0.0; k];
            let mut direct = Vec::with_capacity(members.len());
            for &p in members {
                let x = embeddings.vector(p);
                let value = phi(mean, &x, alpha)?;
                let dl = bce_derivative(1.0, value) * outer;
                let mut g = vec![0.0; k];
                for d in 0..k {
                    let dphi_dmean = -2.0 * alpha * value * (mean[d] - x[d]);
                    via_mean[d] += dl * dphi_dmean;
                    g[d] = -dl * dphi_dmean;
                }
                direct.push(g);
            }
            for (&p, g) in members.iter().zip(direct) {
                for d in 0..k {
                    pull[d * npx + p] += g[d] + via_mean[d] / ns;
                }
            }
        }
    }
    Ok((push, pull))
}

/// Semantic cross-entropy and boundary/solid affinity BCE losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticAffinityLosses {
    pub semantic: f64,
    pub boundary: f64,
    pub solid: f64,
    /// False when the level has no boundary pixels.
    pub boundary_defined: bool,
    /// False when the level has no non-boundary pixels.
    pub solid_defined: bool,
}

/// `weights` are per-pixel multipliers on the affinity terms; `None` means 1
/// everywhere. Predicted distributions are renormalized in `f64` before the
/// log so that `f32` storage error does not leak into the loss.
pub fn semantic_affinity_losses(
    semantic: &SemanticMap,
    affinity: &AffinityMap,
    gt: &GroundTruthScene,
    weights: Option<&[f64]>,
) -> Result<SemanticAffinityLosses> {
    let shape = gt.shape();
    for (what, other) in [("semantic map", semantic.shape()), ("affinity map", affinity.shape())] {
        if other != shape {
            return Err(Error::ShapeMismatch {
                what,
                expected: shape.to_string(),
                got: other.to_string(),
            });
        }
    }
    if semantic.classes() != gt.classes() {
        return Err(Error::invalid(format!(
            "semantic map has {} classes, ground truth {}",
            semantic.classes(),
            gt.classes()
        )));
    }
    if let Some(w) = weights {
        if w.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                what: "pixel weights",
                expected: shape.len().to_string(),
                got: w.len().to_string(),
            });
        }
        if let Some(bad) = w.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("pixel weight {bad} is not strictly positive")));
        }
    }

    let n = shape.len();
    let mut ce = 0.0;
    for p in 0..n {
        let total: f64 = (0..semantic.classes()).map(|c| semantic.prob(c, p) as f64).sum();
        let q = semantic.prob(gt.class_at(p), p) as f64 / total;
        ce -= clip(q).ln();
    }

    let boundary = gt.boundary_mask();
    let (mut sum_b, mut n_b, mut sum_s, mut n_s) = (0.0, 0usize, 0.0, 0usize);
    for y in 0..shape.height {
        for x in 0..shape.width {
            let p = shape.index(y, x);
            let w = weights.map_or(1.0, |w| w[p]);
            let term: f64 = Direction::ALL
                .iter()
                .map(|&d| bce(gt.affinity_target(d, y, x), affinity.get(d, y, x) as f64))
                .sum();
            if boundary[p] {
                sum_b += w * term;
                n_b += 1;
            } else {
                sum_s += w * term;
                n_s += 1;
            }
        }
    }
    Ok(SemanticAffinityLosses {
        semantic: ce / n as f64,
        boundary: if n_b > 0 { sum_b / n_b as f64 } else { 0.0 },
        solid: if n_s > 0 { sum_s / n_s as f64 } else { 0.0 },
        boundary_defined: n_b > 0,
        solid_defined: n_s > 0,
    })
}

/// All five losses of one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelLosses {
    pub semantic: f64,
    pub boundary: f64,
    pub solid: f64,
    pub push: f64,
    pub pull: f64,
}

impl LevelLosses {
    pub fn from_parts(sa: SemanticAffinityLosses, g: GroupingLosses) -> Self {
        Self {
            semantic: sa.semantic,
            boundary: sa.boundary,
            solid: sa.solid,
            push: g.push,
            pull: g.pull,
        }
    }
}

/// Loss weights of one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelWeights {
    pub semantic: f64,
    pub push: f64,
    pub pull: f64,
    pub boundary: f64,
    pub solid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Index 0 is level 1 (finest).
    pub levels: Vec<LevelWeights>,
}

impl LossWeights {
    pub fn uniform(n_levels: usize, value: f64) -> Self {
        Self {
            levels: vec![
                LevelWeights {
                    semantic: value,
                    push: value,
                    pull: value,
                    boundary: value,
                    solid: value,
                };
                n_levels
            ],
        }
    }

    /// Semantic weight 2, grouping weights 0.5, and affinity weights decaying
    /// towards the finest level: 0.25, 0.5, 1, 1, (1, …).
    pub fn default_schedule(n_levels: usize) -> Self {
        let affinity = |level: usize| match level {
            0 => 0.25,
            1 => 0.5,
            _ => 1.0,
        };
        Self {
            levels: (0..n_levels)
                .map(|i| LevelWeights {
                    semantic: 2.0,
                    push: 0.5,
                    pull: 0.5,
                    boundary: affinity(i),
                    solid: affinity(i),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.levels.iter().enumerate() {
            for v in [w.semantic, w.push, w.pull, w.boundary, w.solid] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid(format!("loss weight {v} at level {} is invalid", i + 1)));
                }
            }
        }
        Ok(())
    }
}

/// Weighted sum of every level's losses.
pub fn total_loss(losses: &[LevelLosses], weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    if losses.len() != weights.levels.len() {
        return Err(Error::invalid(format!(
            "{} levels of losses but {} levels of weights",
            losses.len(),
            weights.levels.len()
        )));
    }
    Ok(losses
        .iter()
        .zip(&weights.levels)
        .map(|(l, w)| {
            w.semantic * l.semantic + w.push * l.push + w.pull * l.pull + w.boundary * l.boundary + w.solid * l.solid
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(h: usize, w: usize) -> GridShape {
        GridShape::new(h, w).unwrap()
    }

    fn two_instance_gt() -> GroundTruthScene {
        // 2x3: instance 1 on the left two columns, instance 2 on the right.
        let labels = LabelMap::from_ids(shape(2, 3), &[1, 1, 2, 1, 1, 2]).unwrap();
        GroundTruthScene::new(labels, BTreeMap::from([(1, 1), (2, 1)]), 2, 0).unwrap()
    }

    #[test]
    fn phi_values() {
        assert_eq!(phi(&[0.3, -1.0], &[0.3, -1.0], DEFAULT_ALPHA).unwrap(), 1.0);
        assert!((phi(&[1.0, 0.0], &[0.0, 0.0], DEFAULT_ALPHA).unwrap() - 0.5).abs() < 1e-12);
        assert!((phi(&[1.0, 1.0], &[0.0, 0.0], DEFAULT_ALPHA).unwrap() - 0.25).abs() < 1e-12);
        assert!(phi(&[1.0], &[1.0, 2.0], DEFAULT_ALPHA).is_err());
    }

    #[test]
    fn pull_is_zero_when_pixels_equal_their_mean() {
        let gt = two_instance_gt();
        let emb = EmbeddingMap::new(gt.shape(), 1, vec![0.0, 0.0, 3.0, 0.0, 0.0, 3.0]).unwrap();
        let g = grouping_losses(&emb, &gt, DEFAULT_ALPHA).unwrap();
        assert!(g.pull < 1e-6);
        assert!(g.push_defined && g.pull_defined);
    }

    #[test]
    fn push_at_half_affinity_is_ln2() {
        let gt = two_instance_gt();
        let emb = EmbeddingMap::new(gt.shape(), 1, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let g = grouping_losses(&emb, &gt, DEFAULT_ALPHA).unwrap();
        assert!((g.push - 2f64.ln()).abs() < 1e-9, "{}", g.push);
    }

    #[test]
    fn single_instance_push_undefined() {
        let labels = LabelMap::from_ids(shape(1, 2), &[1, 1]).unwrap();
        let gt = GroundTruthScene::new(labels, BTreeMap::from([(1, 1)]), 2, 0).unwrap();
        let emb = EmbeddingMap::new(gt.shape(), 1, vec![0.0, 1.0]).unwrap();
        let g = grouping_losses(&emb, &gt, DEFAULT_ALPHA).unwrap();
        assert!(!g.push_defined);
        assert_eq!(g.push, 0.0);
        assert!(g.pull > 0.0);
    }

    #[test]
    fn no_instances_flags_both() {
        let labels = LabelMap::from_ids(shape(1, 2), &[0, 0]).unwrap();
        let gt = GroundTruthScene::new(labels, BTreeMap::new(), 2, 0).unwrap();
        let emb = EmbeddingMap::new(gt.shape(), 1, vec![0.0, 1.0]).unwrap();
        let g = grouping_losses(&emb, &gt, DEFAULT_ALPHA).unwrap();
        assert!(!g.push_defined && !g.pull_defined);
        assert_eq!((g.push, g.pull), (0.0, 0.0));
    }

    #[test]
    fn uniform_semantics_give_ln_c() {
        for c in [2usize, 3, 5, 19] {
            let s = shape(2, 2);
            let labels = LabelMap::from_ids(s, &[0, 1, 1, 0]).unwrap();
            let gt = GroundTruthScene::new(labels, BTreeMap::from([(1, c - 1)]), c, 0).unwrap();
            let sem = SemanticMap::new(s, c, vec![1.0 / c as f32; c * 4]).unwrap();
            let aff = AffinityMap::from_canonical(s, |_, _, _| 0.5);
            let l = semantic_affinity_losses(&sem, &aff, &gt, None).unwrap();
            assert!((l.semantic - (c as f64).ln()).abs() < 1e-9, "c={c}: {}", l.semantic);
        }
    }

    #[test]
    fn single_interior_pixel_affinity_term() {
        // Only the centre of a single-instance 3x3 grid carries weight.
        let s = shape(3, 3);
        let labels = LabelMap::from_ids(s, &[1; 9]).unwrap();
        let gt = GroundTruthScene::new(labels, BTreeMap::from([(1, 1)]), 2, 0).unwrap();
        let sem = SemanticMap::new(s, 2, [vec![0.0; 9], vec![1.0; 9]].concat()).unwrap();
        let aff = AffinityMap::from_canonical(s, |_, _, _| 0.5);
        let mut w = vec![1e-300; 9];
        w[4] = 1.0;
        let l = semantic_affinity_losses(&sem, &aff, &gt, Some(&w)).unwrap();
        assert!(!l.boundary_defined);
        // Sum over solid pixels divided by N_sld = 9.
        let expected = 4.0 * -(0.5f64.ln()) / 9.0;
        assert!((l.solid - expected).abs() < 1e-9, "{} vs {expected}", l.solid);
    }

    #[test]
    fn nonpositive_weights_rejected() {
        let gt = two_instance_gt();
        let s = gt.shape();
        let sem = SemanticMap::new(s, 2, [vec![0.0; 6], vec![1.0; 6]].concat()).unwrap();
        let aff = AffinityMap::from_canonical(s, |_, _, _| 0.5);
        assert!(semantic_affinity_losses(&sem, &aff, &gt, Some(&[1.0, 1.0, 0.0, 1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn boundary_mask_marks_label_transitions() {
        let labels = LabelMap::from_ids(shape(1, 4), &[0, 0, 1, 1]).unwrap();
        assert_eq!(boundary_mask(&labels), vec![false, true, true, false]);
    }

    #[test]
    fn total_loss_weighting() {
        let l = LevelLosses {
            semantic: 1.0,
            boundary: 2.0,
            solid: 3.0,
            push: 4.0,
            pull: 5.0,
        };
        assert_eq!(total_loss(&[l], &LossWeights::uniform(1, 0.0)).unwrap(), 0.0);
        assert_eq!(total_loss(&[l], &LossWeights::uniform(1, 1.0)).unwrap(), 15.0);
        assert!(total_loss(&[l, l], &LossWeights::uniform(1, 1.0)).is_err());
        let mut bad = LossWeights::uniform(1, 1.0);
        bad.levels[0].push = -1.0;
        assert!(total_loss(&[l], &bad).is_err());
    }

    #[test]
    fn unlabeled_ground_truth_rejected() {
        let labels = LabelMap::filled(shape(1, 1), Label::UNLABELED);
        assert!(GroundTruthScene::new(labels, BTreeMap::new(), 2, 0).is_err());
    }
}
