//! Dense per-level tensors and label maps.
//!
//! All tensors are stored channel-major and row-major (`channel × h × w`) as
//! `f32`, which is also their on-disk layout. Level 1 of a pyramid is the
//! finest; it is stored at index 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the affinity symmetry check on loaded tensors.
pub const SYMMETRY_TOLERANCE: f32 = 1e-6;
/// Tolerance on per-pixel semantic distributions summing to one.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "grid shape must be positive, got {height}x{width}"
            )));
        }
        Ok(Self { height, width })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize) -> usize {
        y * self.width + x
    }

    /// Shape of the next coarser pyramid level (half size, rounding up).
    pub fn halved(&self) -> GridShape {
        GridShape {
            height: self.height.div_ceil(2),
            width: self.width.div_ceil(2),
        }
    }

    fn check_same(&self, other: &GridShape, what: &'static str) -> Result<()> {
        if self != other {
            return Err(Error::ShapeMismatch {
                what,
                expected: self.to_string(),
                got: other.to_string(),
            });
        }
        Ok(())
    }
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// Affinity channel, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
    ];

    /// Neighbor coordinate in this direction, if inside the grid.
    #[inline]
    pub fn step(self, shape: GridShape, y: usize, x: usize) -> Option<(usize, usize)> {
        match self {
            Direction::Up => y.checked_sub(1).map(|y| (y, x)),
            Direction::Down => (y + 1 < shape.height).then_some((y + 1, x)),
            Direction::Left => x.checked_sub(1).map(|x| (y, x)),
            Direction::Right => (x + 1 < shape.width).then_some((y, x + 1)),
        }
    }
}

/// 4-neighbor affinities, channels `(up, down, left, right)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMap {
    shape: GridShape,
    values: Vec<f32>,
}

impl AffinityMap {
    pub fn new(shape: GridShape, values: Vec<f32>) -> Result<Self> {
        if values.len() != 4 * shape.len() {
            return Err(Error::ShapeMismatch {
                what: "affinity values",
                expected: format!("{} values", 4 * shape.len()),
                got: format!("{} values", values.len()),
            });
        }
        Ok(Self { shape, values })
    }

    /// Builds a symmetric map from the canonical half: `f(y, x, dir)` is only
    /// queried for `Down` and `Right` edges that stay inside the grid, and its
    /// value is mirrored onto the opposite channel of the neighbor.
    pub fn from_canonical(shape: GridShape, mut f: impl FnMut(usize, usize, Direction) -> f32) -> Self {
        let mut map = Self {
            shape,
            values: vec![0.0; 4 * shape.len()],
        };
        for y in 0..shape.height {
            for x in 0..shape.width {
                if y + 1 < shape.height {
                    let a = f(y, x, Direction::Down);
                    map.set(Direction::Down, y, x, a);
                    map.set(Direction::Up, y + 1, x, a);
                }
                if x + 1 < shape.width {
                    let a = f(y, x, Direction::Right);
                    map.set(Direction::Right, y, x, a);
                    map.set(Direction::Left, y, x + 1, a);
                }
            }
        }
        map
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, dir: Direction, y: usize, x: usize) -> f32 {
        self.values[dir as usize * self.shape.len() + self.shape.index(y, x)]
    }

    #[inline]
    pub fn set(&mut self, dir: Direction, y: usize, x: usize, value: f32) {
        let n = self.shape.len();
        let i = self.shape.index(y, x);
        self.values[dir as usize * n + i] = value;
    }

    /// Replaces each pair of mirrored affinities by their average and zeroes
    /// the channels pointing off the image border.
    pub fn symmetrize(&mut self) {
        let GridShape { height, width } = self.shape;
        for y in 0..height {
            for x in 0..width {
                if y + 1 < height {
                    let a = (self.get(Direction::Down, y, x) + self.get(Direction::Up, y + 1, x)) / 2.0;
                    self.set(Direction::Down, y, x, a);
                    self.set(Direction::Up, y + 1, x, a);
                } else {
                    self.set(Direction::Down, y, x, 0.0);
                }
                if x + 1 < width {
                    let a = (self.get(Direction::Right, y, x) + self.get(Direction::Left, y, x + 1)) / 2.0;
                    self.set(Direction::Right, y, x, a);
                    self.set(Direction::Left, y, x + 1, a);
                } else {
                    self.set(Direction::Right, y, x, 0.0);
                }
            }
            self.set(Direction::Left, y, 0, 0.0);
        }
        for x in 0..width {
            self.set(Direction::Up, 0, x, 0.0);
        }
    }

    pub fn validate(&self, level: usize) -> Result<()> {
        let fail = |detail: String| Error::Invariant {
            level,
            tensor: "affinity",
            detail,
        };
        if let Some(i) = self.values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(fail(format!("value {} at flat index {i} outside [0,1]", self.values[i])));
        }
        let GridShape { height, width } = self.shape;
        for y in 0..height {
            for x in 0..width {
                for dir in Direction::ALL {
                    let a = self.get(dir, y, x);
                    match dir.step(self.shape, y, x) {
                        None if a != 0.0 => {
                            return Err(fail(format!("border channel {dir:?} at ({y},{x}) is {a}, expected 0")));
                        }
                        Some((ny, nx)) => {
                            let back = self.get(opposite(dir), ny, nx);
                            if (a - back).abs() > SYMMETRY_TOLERANCE {
                                return Err(fail(format!(
                                    "asymmetric edge {dir:?} at ({y},{x}): {a} vs {back}"
                                )));
                            }
                        }
                        None => {}
                    }
                }
            }
        }
        Ok(())
    }
}

fn opposite(dir: Direction) -> Direction {
    match dir {
        Direction::Up => Direction::Down,
        Direction::Down => Direction::Up,
        Direction::Left => Direction::Right,
        Direction::Right => Direction::Left,
    }
}

/// Per-pixel class distributions, `c × h × w`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    shape: GridShape,
    classes: usize,
    values: Vec<f32>,
}

impl SemanticMap {
    pub fn new(shape: GridShape, classes: usize, values: Vec<f32>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::invalid("semantic map needs at least one class"));
        }
        if values.len() != classes * shape.len() {
            return Err(Error::ShapeMismatch {
                what: "semantic values",
                expected: format!("{} values", classes * shape.len()),
                got: format!("{} values", values.len()),
            });
        }
        Ok(Self { shape, classes, values })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn prob(&self, class: usize, pixel: usize) -> f32 {
        self.values[class * self.shape.len() + pixel]
    }

    /// Most probable class at a flat pixel index; ties go to the lower class.
    pub fn argmax(&self, pixel: usize) -> usize {
        let mut best = 0;
        let mut best_p = self.prob(0, pixel);
        for c in 1..self.classes {
            let p = self.prob(c, pixel);
            if p > best_p {
                best = c;
                best_p = p;
            }
        }
        best
    }

    pub fn validate(&self, level: usize) -> Result<()> {
        let n = self.shape.len();
        for i in 0..n {
            let mut sum = 0.0f64;
            for c in 0..self.classes {
                let p = self.prob(c, i);
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::Invariant {
                        level,
                        tensor: "semantic",
                        detail: format!("invalid probability {p} at pixel {i}, class {c}"),
                    });
                }
                sum += p as f64;
            }
            if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
                return Err(Error::Invariant {
                    level,
                    tensor: "semantic",
                    detail: format!("distribution at pixel {i} sums to {sum}"),
                });
            }
        }
        Ok(())
    }
}

/// Per-pixel grouping embeddings, `k × h × w`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMap {
    shape: GridShape,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingMap {
    pub fn new(shape: GridShape, dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if values.len() != dim * shape.len() {
            return Err(Error::ShapeMismatch {
                what: "embedding values",
                expected: format!("{} values", dim * shape.len()),
                got: format!("{} values", values.len()),
            });
        }
        Ok(Self { shape, dim, values })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, channel: usize, pixel: usize) -> f32 {
        self.values[channel * self.shape.len() + pixel]
    }

    /// Embedding vector of one pixel.
    pub fn vector(&self, pixel: usize) -> Vec<f64> {
        (0..self.dim).map(|k| self.get(k, pixel) as f64).collect()
    }

    pub fn validate(&self, level: usize) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant {
                level,
                tensor: "embedding",
                detail: format!("non-finite value at flat index {i}"),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Background,
    Instance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub affinity: AffinityMap,
    pub semantic: SemanticMap,
    pub embedding: EmbeddingMap,
}

impl PyramidLevel {
    pub fn shape(&self) -> GridShape {
        self.affinity.shape()
    }
}

/// Multi-resolution network output. `levels[0]` is level 1 (finest).
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityPyramid {
    pub levels: Vec<PyramidLevel>,
    pub class_kinds: Vec<ClassKind>,
}

impl AffinityPyramid {
    /// Builds and fully validates a pyramid.
    pub fn new(levels: Vec<PyramidLevel>, class_kinds: Vec<ClassKind>) -> Result<Self> {
        let pyramid = Self { levels, class_kinds };
        pyramid.validate()?;
        Ok(pyramid)
    }

    pub fn classes(&self) -> usize {
        self.class_kinds.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.levels.first().map_or(0, |l| l.embedding.dim())
    }

    pub fn is_instance_class(&self, class: usize) -> bool {
        self.class_kinds[class] == ClassKind::Instance
    }

    /// Full validation: structure plus every value-level invariant.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        for (i, level) in self.levels.iter().enumerate() {
            level.affinity.validate(i + 1)?;
            level.semantic.validate(i + 1)?;
            level.embedding.validate(i + 1)?;
        }
        Ok(())
    }

    /// Level count, shapes, halving and channel counts only. Values were
    /// checked when the pyramid was built or read.
    pub fn validate_structure(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::invalid("pyramid has no levels"));
        }
        if self.class_kinds.is_empty() {
            return Err(Error::invalid("pyramid declares no classes"));
        }
        let k = self.levels[0].embedding.dim();
        for (i, level) in self.levels.iter().enumerate() {
            let number = i + 1;
            let shape = level.shape();
            shape.check_same(&level.semantic.shape(), "semantic map vs affinity map")?;
            shape.check_same(&level.embedding.shape(), "embedding map vs affinity map")?;
            if level.semantic.classes() != self.classes() {
                return Err(Error::Invariant {
                    level: number,
                    tensor: "semantic",
                    detail: format!(
                        "{} classes, pyramid declares {}",
                        level.semantic.classes(),
                        self.classes()
                    ),
                });
            }
            if level.embedding.dim() != k {
                return Err(Error::Invariant {
                    level: number,
                    tensor: "embedding",
                    detail: format!("dimension {} differs from level 1 ({k})", level.embedding.dim()),
                });
            }
            if i > 0 {
                let expected = self.levels[i - 1].shape().halved();
                if shape != expected {
                    return Err(Error::Invariant {
                        level: number,
                        tensor: "shape",
                        detail: format!("expected {expected} (half of level {i}), got {shape}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Pixel label: background, unlabeled, or an instance id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(u32);

impl Label {
    pub const BACKGROUND: Label = Label(0);
    pub const UNLABELED: Label = Label(u32::MAX);

    /// Instance label; ids start at 1.
    pub fn instance(id: u32) -> Label {
        assert!(id != 0 && id != u32::MAX, "instance id {id} is reserved");
        Label(id)
    }

    #[inline]
    pub fn raw(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn instance_id(self) -> Option<u32> {
        self.is_instance().then_some(self.0)
    }

    #[inline]
    pub fn is_instance(self) -> bool {
        self != Self::BACKGROUND && self != Self::UNLABELED
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    shape: GridShape,
    labels: Vec<Label>,
}

impl LabelMap {
    pub fn filled(shape: GridShape, label: Label) -> Self {
        Self {
            shape,
            labels: vec![label; shape.len()],
        }
    }

    pub fn new(shape: GridShape, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                what: "label map",
                expected: format!("{} labels", shape.len()),
                got: format!("{} labels", labels.len()),
            });
        }
        Ok(Self { shape, labels })
    }

    /// Builds a map from raw ids where 0 is background.
    pub fn from_ids(shape: GridShape, ids: &[u32]) -> Result<Self> {
        let labels = ids
            .iter()
            .map(|&id| if id == 0 { Label::BACKGROUND } else { Label::instance(id) })
            .collect();
        Self::new(shape, labels)
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [Label] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> Label {
        self.labels[self.shape.index(y, x)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, label: Label) {
        let i = self.shape.index(y, x);
        self.labels[i] = label;
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Renumbers instance ids 1, 2, … in raster order of each id's first pixel.
    pub fn canonicalize(&mut self) {
        let mut remap = rustc_hash::FxHashMap::default();
        let mut next = 1u32;
        for label in &mut self.labels {
            if label.is_instance() {
                let id = *remap.entry(label.0).or_insert_with(|| {
                    next += 1;
                    next - 1
                });
                *label = Label(id);
            }
        }
    }

    /// Number of distinct instance ids.
    pub fn instance_count(&self) -> usize {
        let mut ids: Vec<u32> = self.labels.iter().filter_map(|l| l.instance_id()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}
