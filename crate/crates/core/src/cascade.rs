//! Coarse-to-fine partitioning across an affinity pyramid.
//!
//! The coarsest level is partitioned from scratch. Each finer level is seeded
//! with the previous result upsampled 2×, with pixels on label boundaries
//! reset to unlabeled so the finer affinities can place them. Every level runs
//! GAEC on the pixel graph followed by position-aware merging of the
//! resulting segments; with GAS enabled, level 1 is resolved by label
//! propagation instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaec::gaec;
use crate::gas::gas;
use crate::graph::{build_pixel_graph, SeedSplit};
use crate::grid::{
    AffinityMap, AffinityPyramid, ClassKind, EmbeddingMap, GridShape, Label, LabelMap, PyramidLevel, SemanticMap,
};
use crate::losses::DEFAULT_ALPHA;
use crate::mask::{upsampled_instance_masks, Mask};
use crate::position::{pa_gaec, CandidatePairs, PaConfig, PositionDamping, DEFAULT_BETA};
use crate::segment::BBox;

/// Linear scale between level 1 and the input image.
pub const RENDER_SCALE: usize = 4;

/// Which pixels take part in partitioning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundRule {
    /// The most likely class is an instance class.
    Argmax,
    /// The summed probability of instance classes exceeds the value.
    InstanceProbability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    pub threshold: f64,
    pub beta: f64,
    pub alpha: f64,
    pub gas: bool,
    pub pa_gaec: bool,
    pub seed: u64,
    /// Instances with fewer level-1 pixels are dropped.
    pub min_pixels: u64,
    pub background: BackgroundRule,
    pub candidate_pairs: CandidatePairs,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            beta: DEFAULT_BETA,
            alpha: DEFAULT_ALPHA,
            gas: false,
            pa_gaec: true,
            seed: 0,
            min_pixels: 16,
            background: BackgroundRule::Argmax,
            candidate_pairs: CandidatePairs::Pruned,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid(format!("threshold {} outside [0,1]", self.threshold)));
        }
        PositionDamping::new(self.beta)?;
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha {} must be positive", self.alpha)));
        }
        if let BackgroundRule::InstanceProbability(p) = self.background {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::invalid(format!("instance probability cutoff {p} outside [0,1)")));
            }
        }
        Ok(())
    }

    fn pa(&self) -> PaConfig {
        PaConfig {
            threshold: self.threshold,
            beta: self.beta,
            alpha: self.alpha,
            pairs: self.candidate_pairs,
        }
    }
}

/// One output instance in the segment table. Geometry is in level-1 pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: u32,
    pub class: usize,
    pub score: f64,
    pub bbox: BBox,
    pub pixel_count: u64,
}

/// Final instance at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredInstance {
    pub id: u32,
    pub class: usize,
    pub score: f64,
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Level-1 labels with canonical (raster-order) instance ids.
    pub labels: LabelMap,
    /// One record per instance id, in id order.
    pub segments: Vec<SegmentRecord>,
}

impl Partition {
    /// Input resolution implied by level 1.
    pub fn default_input_shape(&self) -> GridShape {
        let s = self.labels.shape();
        GridShape {
            height: s.height * RENDER_SCALE,
            width: s.width * RENDER_SCALE,
        }
    }

    pub fn instances(&self, input_shape: GridShape) -> Result<Vec<ScoredInstance>> {
        render_instances(&self.labels, &self.segments, input_shape, 0)
    }
}

/// Nearest-neighbor 2× upsampling followed by unlabeling every pixel that
/// has a 4-neighbor with a different label.
pub fn upsample_labels(labels: &LabelMap, target: GridShape) -> Result<LabelMap> {
    let source = labels.shape();
    if target.halved() != source {
        return Err(Error::ShapeMismatch {
            what: "upsampling target",
            expected: format!("a shape halving to {source}"),
            got: target.to_string(),
        });
    }
    let up: Vec<Label> = (0..target.len())
        .map(|p| {
            let (y, x) = (p / target.width, p % target.width);
            labels.get(y / 2, x / 2)
        })
        .collect();
    let w = target.width;
    let out = (0..target.len())
        .map(|p| {
            let (y, x) = (p / w, p % w);
            let l = up[p];
            let differs = (y > 0 && up[p - w] != l)
                || (y + 1 < target.height && up[p + w] != l)
                || (x > 0 && up[p - 1] != l)
                || (x + 1 < w && up[p + 1] != l);
            if differs {
                Label::UNLABELED
            } else {
                l
            }
        })
        .collect();
    LabelMap::new(target, out)
}

fn foreground(semantic: &SemanticMap, kinds: &[ClassKind], rule: BackgroundRule) -> Vec<bool> {
    let n = semantic.shape().len();
    match rule {
        BackgroundRule::Argmax => (0..n).map(|p| kinds[semantic.argmax(p)] == ClassKind::Instance).collect(),
        BackgroundRule::InstanceProbability(cutoff) => (0..n)
            .map(|p| {
                let total: f64 = (0..semantic.classes())
                    .filter(|&c| kinds[c] == ClassKind::Instance)
                    .map(|c| semantic.prob(c, p) as f64)
                    .sum();
                total > cutoff
            })
            .collect(),
    }
}

fn partition_level(level: &PyramidLevel, seeds: &LabelMap, cfg: &CascadeConfig) -> Result<LabelMap> {
    let mut graph = build_pixel_graph(
        &level.affinity,
        &level.semantic,
        &level.embedding,
        seeds,
        SeedSplit::Affinity(cfg.threshold),
    )?;
    gaec(&mut graph, cfg.threshold)?;
    let live: Vec<u32> = graph.live_vertices().collect();
    let groups = if cfg.pa_gaec {
        let segments: Vec<_> = live.iter().map(|&v| graph.segment(v)).collect();
        pa_gaec(&segments, &cfg.pa())?
    } else {
        (0..live.len()).collect()
    };
    let mut group_of = vec![0u32; graph.live_vertices().max().map_or(0, |v| v as usize + 1)];
    for (&v, &g) in live.iter().zip(&groups) {
        group_of[v as usize] = g as u32 + 1;
    }
    let labels = graph
        .pixel_owners()
        .into_iter()
        .map(|owner| owner.map_or(Label::BACKGROUND, |v| Label::instance(group_of[v as usize])))
        .collect();
    let mut out = LabelMap::new(seeds.shape(), labels)?;
    out.canonicalize();
    Ok(out)
}

/// Runs the cascade and returns the label map of every level, finest first.
/// Labels contain only background and instance ids. Only the pyramid's
/// structure is rechecked here; values are validated when it is built.
pub fn cascade_gaec(pyramid: &AffinityPyramid, cfg: &CascadeConfig) -> Result<Vec<LabelMap>> {
    cfg.validate()?;
    pyramid.validate_structure()?;
    let mut results: Vec<LabelMap> = Vec::with_capacity(pyramid.levels.len());
    for (i, level) in pyramid.levels.iter().enumerate().rev() {
        let shape = level.shape();
        let fg = foreground(&level.semantic, &pyramid.class_kinds, cfg.background);
        let upsampled = match results.last() {
            Some(prev) => Some(upsample_labels(prev, shape)?),
            None => None,
        };
        let seeds: Vec<Label> = (0..shape.len())
            .map(|p| {
                if !fg[p] {
                    return Label::BACKGROUND;
                }
                match &upsampled {
                    Some(up) if up.labels()[p].is_instance() => up.labels()[p],
                    _ => Label::UNLABELED,
                }
            })
            .collect();
        let seeds = LabelMap::new(shape, seeds)?;
        let labels = if i == 0 && cfg.gas {
            let mut l = gas(&seeds, &level.affinity, cfg.threshold, cfg.seed)?;
            l.canonicalize();
            l
        } else {
            partition_level(level, &seeds, cfg)?
        };
        results.push(labels);
    }
    results.reverse();
    Ok(results)
}

/// Full partition: validation of every pyramid invariant, the cascade,
/// per-instance statistics at level 1, removal of instances smaller than
/// `min_pixels` and canonical renumbering.
pub fn partition(pyramid: &AffinityPyramid, cfg: &CascadeConfig) -> Result<Partition> {
    pyramid.validate()?;
    partition_validated(pyramid, cfg)
}

fn partition_validated(pyramid: &AffinityPyramid, cfg: &CascadeConfig) -> Result<Partition> {
    let mut labels = cascade_gaec(pyramid, cfg)?.swap_remove(0);
    let level = &pyramid.levels[0];

    let stats = instance_stats(&labels, &level.semantic);
    let small: Vec<bool> = stats.iter().map(|s| s.count > 0 && s.count < cfg.min_pixels).collect();
    for l in labels.labels_mut() {
        if let Some(id) = l.instance_id() {
            if small[id as usize] {
                *l = Label::BACKGROUND;
            }
        }
    }
    labels.canonicalize();

    let stats = instance_stats(&labels, &level.semantic);
    let segments = stats
        .iter()
        .enumerate()
        .skip(1)
        .map(|(id, s)| {
            let (class, score) = best_instance_class(&s.semantic_sum, s.count, &pyramid.class_kinds);
            SegmentRecord {
                id: id as u32,
                class,
                score,
                bbox: s.bbox,
                pixel_count: s.count,
            }
        })
        .collect();
    Ok(Partition { labels, segments })
}

struct InstanceStats {
    count: u64,
    bbox: BBox,
    semantic_sum: Vec<f64>,
}

/// Statistics indexed by instance id (index 0 unused). Ids must be dense,
/// as produced by canonicalization.
fn instance_stats(labels: &LabelMap, semantic: &SemanticMap) -> Vec<InstanceStats> {
    let shape = labels.shape();
    let max_id = labels.labels().iter().filter_map(|l| l.instance_id()).max().unwrap_or(0) as usize;
    let mut stats: Vec<InstanceStats> = (0..=max_id)
        .map(|_| InstanceStats {
            count: 0,
            bbox: BBox::point(0, 0),
            semantic_sum: vec![0.0; semantic.classes()],
        })
        .collect();
    for (p, l) in labels.labels().iter().enumerate() {
        let Some(id) = l.instance_id() else { continue };
        let (y, x) = (p / shape.width, p % shape.width);
        let s = &mut stats[id as usize];
        s.bbox = if s.count == 0 { BBox::point(y, x) } else { s.bbox.hull(&BBox::point(y, x)) };
        s.count += 1;
        for (c, sum) in s.semantic_sum.iter_mut().enumerate() {
            *sum += semantic.prob(c, p) as f64;
        }
    }
    stats
}

/// Most likely instance class of a mean distribution and its probability;
/// ties go to the lower class.
fn best_instance_class(sum: &[f64], count: u64, kinds: &[ClassKind]) -> (usize, f64) {
    let mut best: Option<(usize, f64)> = None;
    for (c, &s) in sum.iter().enumerate() {
        if kinds[c] == ClassKind::Instance && best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    best.map_or((0, 0.0), |(c, s)| (c, s / count.max(1) as f64))
}

/// Upsamples each instance in `segments` to `input_shape` by nearest
/// neighbor, dropping instances with fewer than `min_pixels` level-1 pixels.
pub fn render_instances(
    labels: &LabelMap,
    segments: &[SegmentRecord],
    input_shape: GridShape,
    min_pixels: u64,
) -> Result<Vec<ScoredInstance>> {
    let mut masks = upsampled_instance_masks(labels, RENDER_SCALE, input_shape)?;
    segments
        .iter()
        .filter(|s| s.pixel_count >= min_pixels)
        .map(|s| {
            let mask = masks
                .remove(&s.id)
                .ok_or_else(|| Error::Logic(format!("segment {} has no pixels in the label map", s.id)))?;
            Ok(ScoredInstance {
                id: s.id,
                class: s.class,
                score: s.score,
                mask,
            })
        })
        .collect()
}

/// Borrowed dense tensors of one pyramid level, channel-major and row-major.
#[derive(Debug, Clone, Copy)]
pub struct LevelArrays<'a> {
    pub height: usize,
    pub width: usize,
    pub affinity: &'a [f32],
    pub semantic: &'a [f32],
    pub embedding: &'a [f32],
}

/// Array-level entry point: validates the tensors, partitions, and returns
/// level-1 labels as raw ids (0 = background, instances numbered in raster
/// order) with the segment table.
pub fn partition_arrays(
    levels: &[LevelArrays<'_>],
    class_kinds: &[ClassKind],
    cfg: &CascadeConfig,
) -> Result<(Vec<u32>, Vec<SegmentRecord>)> {
    let c = class_kinds.len();
    let levels = levels
        .iter()
        .map(|l| {
            let shape = GridShape::new(l.height, l.width)?;
            let n = shape.len();
            if l.semantic.len() != n * c {
                return Err(Error::ShapeMismatch {
                    what: "semantic array",
                    expected: format!("{} values", n * c),
                    got: format!("{} values", l.semantic.len()),
                });
            }
            if l.embedding.is_empty() || l.embedding.len() % n != 0 {
                return Err(Error::ShapeMismatch {
                    what: "embedding array",
                    expected: format!("a positive multiple of {n} values"),
                    got: format!("{} values", l.embedding.len()),
                });
            }
            Ok(PyramidLevel {
                affinity: AffinityMap::new(shape, l.affinity.to_vec())?,
                semantic: SemanticMap::new(shape, c, l.semantic.to_vec())?,
                embedding: EmbeddingMap::new(shape, l.embedding.len() / n, l.embedding.to_vec())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pyramid = AffinityPyramid::new(levels, class_kinds.to_vec())?;
    let result = partition_validated(&pyramid, cfg)?;
    Ok((result.labels.labels().iter().map(|l| l.raw()).collect(), result.segments))
}

#[cfg(test)]
mod tests {
    use super::*;

    const U: Label = Label::UNLABELED;

    fn shape(h: usize, w: usize) -> GridShape {
        GridShape::new(h, w).unwrap()
    }

    #[test]
    fn uniform_upsample_has_no_unlabeled() {
        let l = LabelMap::filled(shape(3, 3), Label::instance(4));
        let up = upsample_labels(&l, shape(6, 5)).unwrap();
        assert!(up.labels().iter().all(|&x| x == Label::instance(4)));
    }

    #[test]
    fn two_column_upsample() {
        let (a, b) = (Label::instance(1), Label::instance(2));
        let l = LabelMap::new(shape(2, 2), vec![a, b, a, b]).unwrap();
        let up = upsample_labels(&l, shape(4, 4)).unwrap();
        for y in 0..4 {
            assert_eq!([up.get(y, 0), up.get(y, 1), up.get(y, 2), up.get(y, 3)], [a, U, U, b]);
        }
    }

    #[test]
    fn blob_ring_becomes_unlabeled() {
        let mut l = LabelMap::filled(shape(4, 4), Label::BACKGROUND);
        for (y, x) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            l.set(y, x, Label::instance(1));
        }
        let up = upsample_labels(&l, shape(8, 8)).unwrap();
        // Blob occupies 2..6; its outer ring and the adjacent background ring
        // are unlabeled, leaving a 2x2 core.
        assert_eq!(up.count(Label::instance(1)), 4);
        assert_eq!(up.count(U), 12 + 16);
        assert_eq!(up.get(0, 0), Label::BACKGROUND);
        // Conservation: 4x the source instance pixels minus the unlabeled
        // ring pixels that came from the instance.
        assert_eq!(up.count(Label::instance(1)), 4 * 4 - 12);
    }

    #[test]
    fn wrong_ratio_rejected() {
        let l = LabelMap::filled(shape(2, 2), Label::BACKGROUND);
        assert!(upsample_labels(&l, shape(5, 4)).is_err());
        assert!(upsample_labels(&l, shape(4, 4)).is_ok());
        assert!(upsample_labels(&l, shape(3, 3)).is_ok());
    }

    #[test]
    fn best_class_skips_background() {
        let kinds = [ClassKind::Background, ClassKind::Instance, ClassKind::Instance];
        assert_eq!(best_instance_class(&[0.1, 0.9, 0.0], 1, &kinds), (1, 0.9));
        let (c, s) = best_instance_class(&[6.0, 3.0, 1.0], 10, &kinds);
        assert_eq!(c, 1);
        assert!((s - 0.3).abs() < 1e-12);
    }

    #[test]
    fn render_drops_small_segments() {
        let l = LabelMap::from_ids(shape(2, 2), &[1, 0, 0, 2]).unwrap();
        let rec = |id, n| SegmentRecord {
            id,
            class: 1,
            score: 1.0,
            bbox: BBox::point(0, 0),
            pixel_count: n,
        };
        let out = render_instances(&l, &[rec(1, 1), rec(2, 5)], shape(8, 8), 4).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, 2);
        assert_eq!(out[0].mask.area(), 16);
    }

    #[test]
    fn invalid_config() {
        let cfg = CascadeConfig { threshold: 2.0, ..CascadeConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = CascadeConfig { beta: -0.1, ..CascadeConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
