//! Synthetic scenes and the pyramids an ideal (optionally noisy) network
//! would produce for them.
//!
//! Instances are painted on the level-1 grid (a quarter of the input size)
//! so that every level is an exact majority-vote downsampling of the input
//! labels. Occluded instances are crossed by a bar-shaped instance painted
//! on top, which splits them into two disjoint parts.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cascade::RENDER_SCALE;
use crate::error::{Error, Result};
use crate::grid::{
    AffinityMap, AffinityPyramid, ClassKind, EmbeddingMap, GridShape, Label, LabelMap, PyramidLevel, SemanticMap,
};
use crate::losses::GroundTruthScene;
use crate::mask::{instance_masks, Mask};

/// Smallest instance side on the level-1 grid.
const MIN_SIDE: usize = 16;
/// Smallest side, across the bar, of an instance that gets occluded.
const MIN_OCCLUDED_SIDE: usize = 32;
const BAR_WIDTH: (usize, usize) = (6, 7);
/// Bars stick out of the occluded instance by this much on both ends.
const BAR_OVERHANG: usize = 2;
/// Free space kept around each instance's reserved box.
const MARGIN: usize = 4;
const PLACEMENT_ATTEMPTS: usize = 400;
/// Minimum squared distance between instance embedding centers.
const CENTER_SEPARATION: f64 = 4.0;
const CENTER_RANGE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Probability of replacing an affinity `a` by `1 - a`.
    pub flip_rate: f64,
    /// Standard deviation of additive Gaussian affinity noise.
    pub jitter: f64,
    /// Mass moved from the true class to the uniform distribution.
    pub semantic_smoothing: f64,
    /// Standard deviation of per-pixel embedding noise.
    pub embedding_sigma: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            flip_rate: 0.0,
            jitter: 0.0,
            semantic_smoothing: 0.0,
            embedding_sigma: 0.0,
        }
    }

    pub fn moderate() -> Self {
        Self {
            flip_rate: 0.0,
            jitter: 0.05,
            semantic_smoothing: 0.05,
            embedding_sigma: 0.05,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, p) in [("flip_rate", self.flip_rate), ("semantic_smoothing", self.semantic_smoothing)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} {p} outside [0,1]")));
            }
        }
        for (name, s) in [("jitter", self.jitter), ("embedding_sigma", self.embedding_sigma)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("{name} {s} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Polygon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Input resolution.
    pub height: usize,
    pub width: usize,
    pub levels: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub shape_kinds: Vec<ShapeKind>,
    pub occluder_probability: f64,
    /// Class count including the background class 0.
    pub classes: usize,
    pub embedding_dim: usize,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 512,
            width: 512,
            levels: 4,
            min_instances: 3,
            max_instances: 12,
            shape_kinds: vec![ShapeKind::Rectangle, ShapeKind::Ellipse, ShapeKind::Polygon],
            occluder_probability: 0.5,
            classes: 4,
            embedding_dim: 8,
            noise: NoiseSpec::none(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn input_shape(&self) -> Result<GridShape> {
        GridShape::new(self.height, self.width)
    }

    /// Shape of pyramid level 1.
    pub fn level_one_shape(&self) -> Result<GridShape> {
        let s = self.input_shape()?;
        Ok(GridShape {
            height: s.height.div_ceil(RENDER_SCALE),
            width: s.width.div_ceil(RENDER_SCALE),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let l1 = self.level_one_shape()?;
        if self.levels == 0 {
            return Err(Error::invalid("a pyramid needs at least one level"));
        }
        if self.min_instances > self.max_instances {
            return Err(Error::invalid(format!(
                "instance range {}..={} is empty",
                self.min_instances, self.max_instances
            )));
        }
        if self.shape_kinds.is_empty() {
            return Err(Error::invalid("no shape kinds"));
        }
        if !(0.0..=1.0).contains(&self.occluder_probability) {
            return Err(Error::invalid(format!(
                "occluder probability {} outside [0,1]",
                self.occluder_probability
            )));
        }
        if self.classes < 2 {
            return Err(Error::invalid("need a background class and at least one instance class"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let needed = MIN_SIDE + 2 * MARGIN;
        if self.min_instances > 0 && (l1.height < needed || l1.width < needed) {
            return Err(Error::invalid(format!(
                "input {}x{} is too small for instances of {MIN_SIDE} level-1 pixels",
                self.height, self.width
            )));
        }
        self.noise.validate()
    }
}

/// A generated scene with its ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    /// Input-resolution ground truth.
    pub ground_truth: GroundTruthScene,
    pub pyramid: AffinityPyramid,
    /// Ground-truth labels per level, finest first.
    pub level_labels: Vec<LabelMap>,
}

/// Ground-truth instance at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub id: u32,
    pub class: usize,
    pub mask: Mask,
}

impl Scene {
    pub fn input_shape(&self) -> GridShape {
        self.ground_truth.shape()
    }

    pub fn instance_classes(&self) -> &BTreeMap<u32, usize> {
        self.ground_truth.instance_classes()
    }

    pub fn gt_instances(&self) -> Vec<GtInstance> {
        let classes = self.instance_classes();
        instance_masks(self.ground_truth.labels())
            .into_iter()
            .map(|(id, mask)| GtInstance {
                id,
                class: classes[&id],
                mask,
            })
            .collect()
    }

    /// Ground truth restricted to one pyramid level (1 = finest).
    pub fn level_ground_truth(&self, level: usize) -> Result<GroundTruthScene> {
        let labels = self
            .level_labels
            .get(level.wrapping_sub(1))
            .ok_or_else(|| Error::invalid(format!("no level {level}")))?;
        GroundTruthScene::new(
            labels.clone(),
            self.instance_classes().clone(),
            self.ground_truth.classes(),
            0,
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    y0: usize,
    x0: usize,
    h: usize,
    w: usize,
}

impl Rect {
    fn overlaps(&self, o: &Rect) -> bool {
        self.y0 < o.y0 + o.h && o.y0 < self.y0 + self.h && self.x0 < o.x0 + o.w && o.x0 < self.x0 + self.w
    }
}

enum Region {
    Rectangle,
    Ellipse,
    /// Convex polygon with vertices in box-relative coordinates.
    Polygon(Vec<(f64, f64)>),
}

fn inside(region: &Region, b: &Rect, y: usize, x: usize) -> bool {
    let (py, px) = (y as f64 + 0.5 - b.y0 as f64, x as f64 + 0.5 - b.x0 as f64);
    match region {
        Region::Rectangle => true,
        Region::Ellipse => {
            let (ry, rx) = (b.h as f64 / 2.0, b.w as f64 / 2.0);
            let (dy, dx) = ((py - ry) / ry, (px - rx) / rx);
            dy * dy + dx * dx <= 1.0
        }
        Region::Polygon(vs) => (0..vs.len()).all(|i| {
            let (ay, ax) = vs[i];
            let (by, bx) = vs[(i + 1) % vs.len()];
            (bx - ax) * (py - ay) - (by - ay) * (px - ax) <= 0.0
        }),
    }
}

fn polygon(rng: &mut ChaCha8Rng, b: &Rect) -> Vec<(f64, f64)> {
    let k = rng.random_range(5..=8);
    let step = std::f64::consts::TAU / k as f64;
    let (ry, rx) = (b.h as f64 / 2.0, b.w as f64 / 2.0);
    (0..k)
        .map(|i| {
            let t = step * (i as f64 + rng.random_range(-0.3..0.3));
            (ry - ry * t.sin(), rx + rx * t.cos())
        })
        .collect()
}

/// Paints the level-1 ground truth. Returns labels and the class of every
/// instance id.
fn paint(spec: &SceneSpec, shape: GridShape, rng: &mut ChaCha8Rng) -> Result<(LabelMap, BTreeMap<u32, usize>)> {
    let mut labels = LabelMap::filled(shape, Label::BACKGROUND);
    let mut classes = BTreeMap::new();
    let mut reserved: Vec<Rect> = Vec::new();
    let target = rng.random_range(spec.min_instances..=spec.max_instances);
    let max_side = (shape.height.min(shape.width) / 3).max(MIN_SIDE);
    let mut next_id = 1u32;

    let mut placed = 0;
    let mut attempts = 0;
    while placed < target && attempts < PLACEMENT_ATTEMPTS * target.max(1) {
        attempts += 1;
        // An occluded instance and its bar count as two instances.
        let occluded = placed + 2 <= target && rng.random::<f64>() < spec.occluder_probability;
        let kind = if occluded {
            // Polygons can split into parts whose centers are far apart
            // vertically; occluded instances use axis-symmetric shapes.
            [ShapeKind::Rectangle, ShapeKind::Ellipse][rng.random_range(0..2)]
        } else {
            spec.shape_kinds[rng.random_range(0..spec.shape_kinds.len())]
        };
        let vertical_bar = rng.random::<bool>();
        let shrink = attempts > PLACEMENT_ATTEMPTS / 2;
        let hi = if shrink { MIN_OCCLUDED_SIDE } else { max_side.max(MIN_OCCLUDED_SIDE) };
        let side = |rng: &mut ChaCha8Rng, lo: usize| rng.random_range(lo..=hi.max(lo));
        let (mut h, mut w) = (side(rng, MIN_SIDE), side(rng, MIN_SIDE));
        if occluded {
            if vertical_bar {
                w = w.max(MIN_OCCLUDED_SIDE);
            } else {
                h = h.max(MIN_OCCLUDED_SIDE);
            }
        }
        let pad = MARGIN + if occluded { BAR_OVERHANG } else { 0 };
        if h + 2 * pad > shape.height || w + 2 * pad > shape.width {
            continue;
        }
        let y0 = rng.random_range(pad..=shape.height - h - pad);
        let x0 = rng.random_range(pad..=shape.width - w - pad);
        let b = Rect { y0, x0, h, w };
        let keep_out = Rect {
            y0: y0 - pad,
            x0: x0 - pad,
            h: h + 2 * pad,
            w: w + 2 * pad,
        };
        if reserved.iter().any(|r| r.overlaps(&keep_out)) {
            continue;
        }
        reserved.push(keep_out);

        let region = match kind {
            ShapeKind::Rectangle => Region::Rectangle,
            ShapeKind::Ellipse => Region::Ellipse,
            ShapeKind::Polygon => Region::Polygon(polygon(rng, &b)),
        };
        let id = next_id;
        next_id += 1;
        classes.insert(id, rng.random_range(1..spec.classes));
        for y in b.y0..b.y0 + b.h {
            for x in b.x0..b.x0 + b.w {
                if inside(&region, &b, y, x) {
                    labels.set(y, x, Label::instance(id));
                }
            }
        }

        if occluded {
            let bar_id = next_id;
            next_id += 1;
            classes.insert(bar_id, rng.random_range(1..spec.classes));
            let width = rng.random_range(BAR_WIDTH.0..=BAR_WIDTH.1);
            let across = if vertical_bar { w } else { h };
            let centered = (across - width) / 2;
            let offset = centered + rng.random_range(0..=2) - 1;
            let bar = if vertical_bar {
                Rect {
                    y0: y0 - BAR_OVERHANG,
                    x0: x0 + offset,
                    h: h + 2 * BAR_OVERHANG,
                    w: width,
                }
            } else {
                Rect {
                    y0: y0 + offset,
                    x0: x0 - BAR_OVERHANG,
                    h: width,
                    w: w + 2 * BAR_OVERHANG,
                }
            };
            for y in bar.y0..bar.y0 + bar.h {
                for x in bar.x0..bar.x0 + bar.w {
                    labels.set(y, x, Label::instance(bar_id));
                }
            }
            placed += 1;
        }
        placed += 1;
    }
    if placed < spec.min_instances {
        return Err(Error::invalid(format!(
            "could only place {placed} of at least {} instances on a {shape} grid",
            spec.min_instances
        )));
    }
    Ok((labels, classes))
}

/// Nearest-neighbor upsampling by an integer factor, cropped to `target`.
pub fn upsample_nearest(labels: &LabelMap, factor: usize, target: GridShape) -> LabelMap {
    let out = (0..target.len())
        .map(|p| labels.get(p / target.width / factor, p % target.width / factor))
        .collect();
    LabelMap::new(target, out).expect("length matches target")
}

/// 2× downsampling where each coarse pixel takes the most frequent label
/// among its (up to four) children; ties go to the smallest label.
pub fn majority_downsample(labels: &LabelMap) -> LabelMap {
    let fine = labels.shape();
    let coarse = fine.halved();
    let mut out = Vec::with_capacity(coarse.len());
    let mut votes: Vec<(Label, u8)> = Vec::with_capacity(4);
    for y in 0..coarse.height {
        for x in 0..coarse.width {
            votes.clear();
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let (fy, fx) = (2 * y + dy, 2 * x + dx);
                if fy < fine.height && fx < fine.width {
                    let l = labels.get(fy, fx);
                    match votes.iter_mut().find(|(v, _)| *v == l) {
                        Some(entry) => entry.1 += 1,
                        None => votes.push((l, 1)),
                    }
                }
            }
            let best = votes
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .expect("every coarse pixel has a child");
            out.push(best.0);
        }
    }
    LabelMap::new(coarse, out).expect("length matches coarse shape")
}

fn embedding_centers(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while centers.len() < count {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::invalid(format!(
                "cannot separate {count} embedding centers in {dim} dimensions"
            )));
        }
        let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-CENTER_RANGE..CENTER_RANGE)).collect();
        let far = centers
            .iter()
            .all(|o| o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() >= CENTER_SEPARATION);
        if far {
            centers.push(c);
        }
    }
    Ok(centers)
}

fn normal(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("sigma validated"))
}

fn level_tensors(
    labels: &LabelMap,
    classes: &BTreeMap<u32, usize>,
    centers: &BTreeMap<u32, Vec<f64>>,
    spec: &SceneSpec,
    rng: &mut ChaCha8Rng,
) -> Result<PyramidLevel> {
    let shape = labels.shape();
    let n = shape.len();
    let noise = &spec.noise;
    let jitter = normal(noise.jitter);
    let affinity = AffinityMap::from_canonical(shape, |y, x, dir| {
        let (ny, nx) = dir.step(shape, y, x).expect("canonical edges stay inside");
        let mut a = if labels.get(y, x) == labels.get(ny, nx) { 1.0 } else { 0.0 };
        if noise.flip_rate > 0.0 && rng.random::<f64>() < noise.flip_rate {
            a = 1.0 - a;
        }
        if let Some(d) = &jitter {
            a += d.sample(rng);
        }
        a.clamp(0.0, 1.0) as f32
    });

    let c = spec.classes;
    let eps = noise.semantic_smoothing;
    let mut semantic = vec![(eps / c as f64) as f32; c * n];
    for (p, l) in labels.labels().iter().enumerate() {
        let class = l.instance_id().map_or(0, |id| classes[&id]);
        semantic[class * n + p] = (1.0 - eps + eps / c as f64) as f32;
    }

    let k = spec.embedding_dim;
    let emb_noise = normal(noise.embedding_sigma);
    let mut embedding = vec![0.0f32; k * n];
    for (p, l) in labels.labels().iter().enumerate() {
        let center = l.instance_id().map(|id| &centers[&id]);
        for ch in 0..k {
            let mut v = center.map_or(0.0, |c| c[ch]);
            if let Some(d) = &emb_noise {
                v += d.sample(rng);
            }
            embedding[ch * n + p] = v as f32;
        }
    }

    Ok(PyramidLevel {
        affinity,
        semantic: SemanticMap::new(shape, c, semantic)?,
        embedding: EmbeddingMap::new(shape, k, embedding)?,
    })
}

pub fn class_kinds(classes: usize) -> Vec<ClassKind> {
    (0..classes)
        .map(|c| if c == 0 { ClassKind::Background } else { ClassKind::Instance })
        .collect()
}

/// Generates a scene. The output depends only on `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let input = spec.input_shape()?;
    let l1_shape = spec.level_one_shape()?;
    let (painted, classes) = paint(spec, l1_shape, &mut rng)?;

    let full = upsample_nearest(&painted, RENDER_SCALE, input);
    let mut level_labels = vec![majority_downsample(&majority_downsample(&full))];
    for _ in 1..spec.levels {
        let next = majority_downsample(level_labels.last().expect("non-empty"));
        level_labels.push(next);
    }

    let center_list = embedding_centers(&mut rng, classes.len(), spec.embedding_dim)?;
    let centers: BTreeMap<u32, Vec<f64>> = classes.keys().copied().zip(center_list).collect();
    let levels = level_labels
        .iter()
        .map(|l| level_tensors(l, &classes, &centers, spec, &mut rng))
        .collect::<Result<Vec<_>>>()?;

    let pyramid = AffinityPyramid::new(levels, class_kinds(spec.classes))?;
    let ground_truth = GroundTruthScene::new(full, classes, spec.classes, 0)?;
    Ok(Scene {
        ground_truth,
        pyramid,
        level_labels,
    })
}

/// Number of 4-connected components of every instance id.
pub fn component_counts(labels: &LabelMap) -> BTreeMap<u32, usize> {
    let shape = labels.shape();
    let mut seen = vec![false; shape.len()];
    let mut counts = BTreeMap::new();
    let mut stack = Vec::new();
    for start in 0..shape.len() {
        let Some(id) = labels.labels()[start].instance_id() else { continue };
        if seen[start] {
            continue;
        }
        *counts.entry(id).or_insert(0) += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (y, x) = (p / shape.width, p % shape.width);
            for dir in crate::grid::Direction::ALL {
                if let Some((ny, nx)) = dir.step(shape, y, x) {
                    let q = shape.index(ny, nx);
                    if !seen[q] && labels.labels()[q] == labels.labels()[p] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Direction;
    use crate::losses::boundary_mask;

    fn spec(seed: u64) -> SceneSpec {
        SceneSpec {
            height: 512,
            width: 512,
            seed,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let s = SceneSpec {
            noise: NoiseSpec::moderate(),
            ..spec(3)
        };
        let a = generate_scene(&s).unwrap();
        let b = generate_scene(&s).unwrap();
        assert_eq!(a.pyramid, b.pyramid);
        assert_eq!(a.ground_truth.labels(), b.ground_truth.labels());
        let c = generate_scene(&SceneSpec { seed: 4, ..s }).unwrap();
        assert_ne!(a.pyramid, c.pyramid);
    }

    #[test]
    fn full_occlusion_splits_an_instance() {
        for seed in 0..10 {
            let s = SceneSpec {
                occluder_probability: 1.0,
                ..spec(seed)
            };
            let scene = generate_scene(&s).unwrap();
            let counts = component_counts(scene.ground_truth.labels());
            assert!(counts.values().any(|&c| c >= 2), "seed {seed}: {counts:?}");
        }
    }

    #[test]
    fn instance_counts_within_range() {
        for seed in 0..10 {
            let scene = generate_scene(&SceneSpec { occluder_probability: 0.0, ..spec(seed) }).unwrap();
            let n = scene.instance_classes().len();
            assert!((3..=12).contains(&n), "seed {seed}: {n}");
        }
    }

    #[test]
    fn levels_are_majority_consistent() {
        let scene = generate_scene(&spec(1)).unwrap();
        assert_eq!(scene.pyramid.levels.len(), 4);
        for pair in scene.level_labels.windows(2) {
            let (fine, coarse) = (&pair[0], &pair[1]);
            assert_eq!(fine.shape().halved(), coarse.shape());
            for y in 0..coarse.shape().height {
                for x in 0..coarse.shape().width {
                    let l = coarse.get(y, x);
                    let mut children = Vec::new();
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        if 2 * y + dy < fine.shape().height && 2 * x + dx < fine.shape().width {
                            children.push(fine.get(2 * y + dy, 2 * x + dx));
                        }
                    }
                    assert!(children.contains(&l));
                }
            }
        }
        // Level 1 reproduces the input labels at quarter resolution.
        let full = scene.ground_truth.labels();
        assert_eq!(&upsample_nearest(&scene.level_labels[0], 4, full.shape()), full);
    }

    #[test]
    fn polygons_cover_their_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = Rect { y0: 10, x0: 20, h: 30, w: 24 };
        for _ in 0..20 {
            let region = Region::Polygon(polygon(&mut rng, &b));
            assert!(inside(&region, &b, 25, 32));
            assert!(!inside(&region, &b, 10, 20));
        }
    }

    #[test]
    fn majority_ties_go_to_smallest_label() {
        let s = GridShape::new(2, 2).unwrap();
        let l = LabelMap::from_ids(s, &[3, 2, 2, 3]).unwrap();
        assert_eq!(majority_downsample(&l).get(0, 0), Label::instance(2));
        let l = LabelMap::from_ids(s, &[0, 2, 2, 0]).unwrap();
        assert_eq!(majority_downsample(&l).get(0, 0), Label::BACKGROUND);
    }

    #[test]
    fn ideal_tensors_match_ground_truth() {
        let scene = generate_scene(&spec(2)).unwrap();
        for (i, level) in scene.pyramid.levels.iter().enumerate() {
            let gt = scene.level_ground_truth(i + 1).unwrap();
            let shape = level.shape();
            for y in 0..shape.height {
                for x in 0..shape.width {
                    for dir in Direction::ALL {
                        assert_eq!(level.affinity.get(dir, y, x) as f64, gt.affinity_target(dir, y, x));
                    }
                    let p = shape.index(y, x);
                    assert_eq!(level.semantic.argmax(p), gt.class_at(p));
                }
            }
        }
    }

    #[test]
    fn noisy_affinities_stay_symmetric() {
        let s = SceneSpec {
            noise: NoiseSpec {
                flip_rate: 0.1,
                jitter: 0.2,
                semantic_smoothing: 0.3,
                embedding_sigma: 0.5,
            },
            ..spec(5)
        };
        let scene = generate_scene(&s).unwrap();
        scene.pyramid.validate().unwrap();
    }

    #[test]
    fn embedding_centers_are_separated() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cs = embedding_centers(&mut rng, 30, 8).unwrap();
        for i in 0..cs.len() {
            for j in 0..i {
                let d: f64 = cs[i].iter().zip(&cs[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                assert!(d >= CENTER_SEPARATION);
            }
        }
    }

    #[test]
    fn boundary_mask_matches_independent_scan() {
        let scene = generate_scene(&spec(6)).unwrap();
        let labels = &scene.level_labels[0];
        let shape = labels.shape();
        let mask = boundary_mask(labels);
        for y in 0..shape.height {
            for x in 0..shape.width {
                let l = labels.get(y, x);
                let mut differs = false;
                if y > 0 && labels.get(y - 1, x) != l {
                    differs = true;
                }
                if y + 1 < shape.height && labels.get(y + 1, x) != l {
                    differs = true;
                }
                if x > 0 && labels.get(y, x - 1) != l {
                    differs = true;
                }
                if x + 1 < shape.width && labels.get(y, x + 1) != l {
                    differs = true;
                }
                assert_eq!(mask[shape.index(y, x)], differs);
            }
        }
    }

    #[test]
    fn impossible_specs_rejected() {
        assert!(generate_scene(&SceneSpec { height: 32, width: 32, ..SceneSpec::default() }).is_err());
        assert!(generate_scene(&SceneSpec { occluder_probability: 1.5, ..SceneSpec::default() }).is_err());
        assert!(generate_scene(&SceneSpec { min_instances: 5, max_instances: 2, ..SceneSpec::default() }).is_err());
        let mut noisy = SceneSpec::default();
        noisy.noise.jitter = -1.0;
        assert!(generate_scene(&noisy).is_err());
    }
}
