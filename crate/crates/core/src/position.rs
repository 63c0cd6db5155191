//! Position-aware greedy merging of segments.
//!
//! Segments produced by pixel-level contraction are merged over a (pruned)
//! complete graph whose edge score is `A_s · A_g · d`: semantic agreement,
//! embedding agreement and a geometric damping factor that decays as the
//! bounding-box centers move apart relative to the segment extents.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::dsu::DisjointSet;
use crate::error::{Error, Result};
use crate::gaec::canonical_partition;
use crate::losses::{phi, DEFAULT_ALPHA};
use crate::segment::Segment;

pub const DEFAULT_BETA: f64 = 0.5;
/// Candidate pairs with damping below this are never scored.
pub const MIN_CANDIDATE_DAMPING: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionDamping {
    pub beta: f64,
}

impl Default for PositionDamping {
    fn default() -> Self {
        Self { beta: DEFAULT_BETA }
    }
}

impl PositionDamping {
    pub fn new(beta: f64) -> Result<Self> {
        if beta.is_nan() || beta < 0.0 {
            return Err(Error::invalid(format!("damping exponent {beta} must be >= 0")));
        }
        Ok(Self { beta })
    }
}

/// Extent and center of a segment, in level pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub height: f64,
    pub width: f64,
    pub center_y: f64,
    pub center_x: f64,
}

impl Geometry {
    pub fn of(segment: &Segment) -> Self {
        let (center_y, center_x) = segment.bbox.center();
        Self {
            height: segment.bbox.height(),
            width: segment.bbox.width(),
            center_y,
            center_x,
        }
    }
}

/// `min(1, 0.5 · extent / offset)`, with a zero offset treated as no damping.
fn axis_factor(extent: f64, offset: f64) -> f64 {
    if offset == 0.0 {
        1.0
    } else {
        (0.5 * extent / offset).min(1.0)
    }
}

pub fn damping_geometry(u: &Geometry, v: &Geometry, beta: f64) -> f64 {
    let vertical = axis_factor(u.height.max(v.height), (u.center_y - v.center_y).abs());
    let horizontal = axis_factor(u.width.max(v.width), (u.center_x - v.center_x).abs());
    vertical.powf(beta) * horizontal.powf(beta)
}

/// Geometric damping factor between two segments, in `(0, 1]` for finite
/// `beta`.
pub fn damping(u: &Segment, v: &Segment, beta: f64) -> f64 {
    damping_geometry(&Geometry::of(u), &Geometry::of(v), beta)
}

/// Jensen–Shannon divergence with base-2 logarithms, in `[0, 1]`.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).log2();
        }
    }
    total.clamp(0.0, 1.0)
}

/// `(A_s, A_g)`: one minus the JS divergence of the mean class
/// distributions, and Φ of the mean embeddings.
pub fn segment_affinity(u: &Segment, v: &Segment, alpha: f64) -> Result<(f64, f64)> {
    let semantic = 1.0 - jensen_shannon(&u.mean_distribution()?, &v.mean_distribution()?);
    let grouping = phi(&u.mean_embedding()?, &v.mean_embedding()?, alpha)?;
    Ok((semantic, grouping))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidatePairs {
    /// Only same-class pairs with damping ≥ [`MIN_CANDIDATE_DAMPING`].
    Pruned,
    /// Every pair of live segments.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaConfig {
    pub threshold: f64,
    pub beta: f64,
    pub alpha: f64,
    pub pairs: CandidatePairs,
}

impl Default for PaConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            beta: DEFAULT_BETA,
            alpha: DEFAULT_ALPHA,
            pairs: CandidatePairs::Pruned,
        }
    }
}

struct Node {
    segment: Segment,
    distribution: Vec<f64>,
    embedding: Vec<f64>,
    geometry: Geometry,
    class: usize,
    version: u32,
    alive: bool,
}

impl Node {
    fn new(segment: Segment) -> Result<Self> {
        let distribution = segment.mean_distribution()?;
        let embedding = segment.mean_embedding()?;
        Ok(Self {
            geometry: Geometry::of(&segment),
            class: segment.dominant_class(),
            segment,
            distribution,
            embedding,
            version: 0,
            alive: true,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    u: u32,
    v: u32,
    ver_u: u32,
    ver_v: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| (other.u, other.v).cmp(&(self.u, self.v)))
            .then_with(|| (self.ver_u, self.ver_v).cmp(&(other.ver_u, other.ver_v)))
    }
}

fn pair_score(a: &Node, b: &Node, cfg: &PaConfig) -> Result<Option<f64>> {
    let d = damping_geometry(&a.geometry, &b.geometry, cfg.beta);
    if cfg.pairs == CandidatePairs::Pruned && (a.class != b.class || d < MIN_CANDIDATE_DAMPING) {
        return Ok(None);
    }
    let semantic = 1.0 - jensen_shannon(&a.distribution, &b.distribution);
    let grouping = phi(&a.embedding, &b.embedding, cfg.alpha)?;
    Ok(Some(semantic * grouping * d))
}

/// Greedily merges segments while the best damped score exceeds the
/// threshold. After each merge, scores involving the merged segment are
/// recomputed from its pooled statistics and new bounding box.
///
/// Returns a group index per input segment, numbered by first occurrence.
pub fn pa_gaec(segments: &[Segment], cfg: &PaConfig) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(Error::invalid(format!("threshold {} outside [0,1]", cfg.threshold)));
    }
    PositionDamping::new(cfg.beta)?;
    let mut nodes = segments
        .iter()
        .cloned()
        .map(Node::new)
        .collect::<Result<Vec<_>>>()?;
    let n = nodes.len();
    let mut groups = DisjointSet::new(n);
    let mut queue = BinaryHeap::new();
    for u in 0..n {
        for v in u + 1..n {
            if let Some(score) = pair_score(&nodes[u], &nodes[v], cfg)? {
                queue.push(Candidate {
                    score,
                    u: u as u32,
                    v: v as u32,
                    ver_u: 0,
                    ver_v: 0,
                });
            }
        }
    }

    while let Some(top) = queue.pop() {
        let (u, v) = (top.u as usize, top.v as usize);
        let current = nodes[u].alive
            && nodes[v].alive
            && nodes[u].version == top.ver_u
            && nodes[v].version == top.ver_v;
        if !current {
            continue;
        }
        if top.score <= cfg.threshold {
            break;
        }
        nodes[v].alive = false;
        let mut merged = nodes[u].segment.clone();
        merged.merge(&nodes[v].segment);
        let version = nodes[u].version + 1;
        nodes[u] = Node {
            version,
            ..Node::new(merged)?
        };
        groups.attach(v as u32, u as u32);

        for t in 0..n {
            if t == u || !nodes[t].alive {
                continue;
            }
            let (a, b) = if t < u { (t, u) } else { (u, t) };
            if let Some(score) = pair_score(&nodes[a], &nodes[b], cfg)? {
                queue.push(Candidate {
                    score,
                    u: a as u32,
                    v: b as u32,
                    ver_u: nodes[a].version,
                    ver_v: nodes[b].version,
                });
            }
        }
    }

    let roots: Vec<u32> = (0..n as u32).map(|i| groups.find(i)).collect();
    Ok(canonical_partition(&roots))
}
