//! Contraction graph: live segments, symmetric weighted adjacency and a
//! max-priority queue over edge affinities with versioned lazy deletion.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rustc_hash::FxHashMap;

use crate::dsu::DisjointSet;
use crate::error::{Error, Result};
use crate::grid::{AffinityMap, Direction, EmbeddingMap, GridShape, Label, LabelMap, SemanticMap};
use crate::segment::{BBox, Segment};

pub type VertexId = u32;

const NO_VERTEX: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
struct EdgeState {
    affinity: f64,
    version: u64,
}

/// Queue entry; ordered by affinity, then by the lowest `(u, v)` key.
#[derive(Debug, Clone, Copy)]
struct QueueEntry {
    affinity: f64,
    u: VertexId,
    v: VertexId,
    version: u64,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueEntry {}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.affinity
            .total_cmp(&other.affinity)
            .then_with(|| (other.u, other.v).cmp(&(self.u, self.v)))
            .then_with(|| self.version.cmp(&other.version))
    }
}

/// How pre-grouped seed pixels are split into vertices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeedSplit {
    /// 4-connected components of each seed label.
    Grid,
    /// 4-connected components of each seed label using only grid edges whose
    /// affinity exceeds the given threshold. Seed pixels the current level's
    /// affinities disagree with are detached from their group.
    Affinity(f64),
}

/// Column-oriented storage of per-vertex segment statistics.
#[derive(Debug, Clone)]
struct SegmentStore {
    classes: usize,
    dim: usize,
    count: Vec<u64>,
    bbox: Vec<BBox>,
    sem: Vec<f64>,
    emb: Vec<f64>,
}

impl SegmentStore {
    fn with_len(n: usize, classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            count: vec![0; n],
            bbox: vec![BBox::point(0, 0); n],
            sem: vec![0.0; n * classes],
            emb: vec![0.0; n * dim],
        }
    }

    fn merge_into(&mut self, dst: usize, src: usize) {
        self.count[dst] += self.count[src];
        self.bbox[dst] = self.bbox[dst].hull(&self.bbox[src]);
        let c = self.classes;
        for i in 0..c {
            self.sem[dst * c + i] += self.sem[src * c + i];
        }
        let k = self.dim;
        for i in 0..k {
            self.emb[dst * k + i] += self.emb[src * k + i];
        }
    }

    fn get(&self, id: usize) -> Segment {
        let (c, k) = (self.classes, self.dim);
        Segment {
            pixel_count: self.count[id],
            bbox: self.bbox[id],
            semantic_sum: self.sem[id * c..(id + 1) * c].to_vec(),
            embedding_sum: self.emb[id * k..(id + 1) * k].to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContractionGraph {
    segments: SegmentStore,
    alive: Vec<bool>,
    live_count: usize,
    adjacency: Vec<FxHashMap<VertexId, EdgeState>>,
    queue: BinaryHeap<QueueEntry>,
    next_version: u64,
    merged_into: DisjointSet,
    /// Initial vertex of each pixel (`NO_VERTEX` for excluded pixels).
    pixel_vertex: Vec<u32>,
    shape: Option<GridShape>,
}

impl ContractionGraph {
    fn empty(n: usize, classes: usize, dim: usize) -> Self {
        Self {
            segments: SegmentStore::with_len(n, classes, dim),
            alive: vec![true; n],
            live_count: n,
            adjacency: vec![FxHashMap::default(); n],
            queue: BinaryHeap::new(),
            next_version: 0,
            merged_into: DisjointSet::new(n),
            pixel_vertex: Vec::new(),
            shape: None,
        }
    }

    /// Abstract graph on `n` unit vertices (no pixel geometry). Parallel edges
    /// are averaged.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut graph = Self::empty(n, 0, 0);
        graph.segments.count.fill(1);
        let mut sums: FxHashMap<(u32, u32), (f64, u32)> = FxHashMap::default();
        for &(u, v, a) in edges {
            if u >= n || v >= n {
                return Err(Error::invalid(format!("edge ({u},{v}) references a vertex outside 0..{n}")));
            }
            if u == v {
                return Err(Error::invalid(format!("self-loop on vertex {u}")));
            }
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::invalid(format!("affinity {a} on edge ({u},{v}) outside [0,1]")));
            }
            let key = (u.min(v) as u32, u.max(v) as u32);
            let entry = sums.entry(key).or_insert((0.0, 0));
            entry.0 += a;
            entry.1 += 1;
        }
        graph.insert_edges(sums);
        Ok(graph)
    }

    fn insert_edges(&mut self, sums: FxHashMap<(u32, u32), (f64, u32)>) {
        let mut pairs: Vec<_> = sums.into_iter().collect();
        pairs.sort_unstable_by_key(|&(key, _)| key);
        for ((u, v), (sum, n)) in pairs {
            self.set_edge(u, v, sum / n as f64);
        }
    }

    fn set_edge(&mut self, u: VertexId, v: VertexId, affinity: f64) {
        let version = self.next_version;
        self.next_version += 1;
        let state = EdgeState { affinity, version };
        self.adjacency[u as usize].insert(v, state);
        self.adjacency[v as usize].insert(u, state);
        let (a, b) = if u < v { (u, v) } else { (v, u) };
        self.queue.push(QueueEntry {
            affinity,
            u: a,
            v: b,
            version,
        });
    }

    pub fn shape(&self) -> Option<GridShape> {
        self.shape
    }

    /// Number of live vertices.
    pub fn vertex_count(&self) -> usize {
        self.live_count
    }

    pub fn edge_count(&self) -> usize {
        self.live_vertices().map(|u| self.adjacency[u as usize].len()).sum::<usize>() / 2
    }

    pub fn is_live(&self, v: VertexId) -> bool {
        self.alive.get(v as usize).copied().unwrap_or(false)
    }

    pub fn live_vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.alive
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i as VertexId))
    }

    pub fn affinity(&self, u: VertexId, v: VertexId) -> Option<f64> {
        self.adjacency.get(u as usize)?.get(&v).map(|e| e.affinity)
    }

    /// Neighbors of `u` with their affinities, sorted by neighbor id.
    pub fn neighbors(&self, u: VertexId) -> Vec<(VertexId, f64)> {
        let mut out: Vec<_> = self.adjacency[u as usize]
            .iter()
            .map(|(&v, e)| (v, e.affinity))
            .collect();
        out.sort_unstable_by_key(|&(v, _)| v);
        out
    }

    /// All live edges as `(u, v, affinity)` with `u < v`, sorted by key.
    pub fn edges(&self) -> Vec<(VertexId, VertexId, f64)> {
        let mut out = Vec::new();
        for u in self.live_vertices() {
            for (&v, e) in &self.adjacency[u as usize] {
                if u < v {
                    out.push((u, v, e.affinity));
                }
            }
        }
        out.sort_unstable_by_key(|&(u, v, _)| (u, v));
        out
    }

    pub fn segment(&self, v: VertexId) -> Segment {
        self.segments.get(v as usize)
    }

    /// Live vertex that original vertex `v` has been merged into.
    pub fn representative(&self, v: VertexId) -> VertexId {
        self.merged_into.find_const(v)
    }

    /// Highest-priority valid edge `(affinity, u, v)`, discarding stale
    /// queue entries on the way.
    pub fn top(&mut self) -> Option<(f64, VertexId, VertexId)> {
        while let Some(entry) = self.queue.peek() {
            if self.is_current(entry) {
                return Some((entry.affinity, entry.u, entry.v));
            }
            self.queue.pop();
        }
        None
    }

    fn is_current(&self, entry: &QueueEntry) -> bool {
        self.is_live(entry.u)
            && self.is_live(entry.v)
            && self.adjacency[entry.u as usize]
                .get(&entry.v)
                .is_some_and(|e| e.version == entry.version)
    }

    /// Merges the endpoints of edge `(u, v)` and returns the surviving id.
    ///
    /// Edges to common neighbors get the average of the two old affinities;
    /// all other edges keep theirs.
    pub fn contract(&mut self, u: VertexId, v: VertexId) -> Result<VertexId> {
        if !self.is_live(u) || !self.is_live(v) || self.affinity(u, v).is_none() {
            return Err(Error::Logic(format!("contract: no live edge ({u},{v})")));
        }
        // The endpoint with more neighbors survives so the rewiring cost is
        // bounded by the smaller adjacency.
        let (du, dv) = (self.adjacency[u as usize].len(), self.adjacency[v as usize].len());
        let (keep, gone) = if du > dv || (du == dv && u < v) { (u, v) } else { (v, u) };

        self.adjacency[keep as usize].remove(&gone);
        let moved = std::mem::take(&mut self.adjacency[gone as usize]);
        let mut moved: Vec<_> = moved.into_iter().filter(|&(t, _)| t != keep).collect();
        moved.sort_unstable_by_key(|&(t, _)| t);
        for (t, edge) in moved {
            self.adjacency[t as usize].remove(&gone);
            let affinity = match self.adjacency[keep as usize].get(&t) {
                Some(existing) => (existing.affinity + edge.affinity) / 2.0,
                None => edge.affinity,
            };
            self.set_edge(keep, t, affinity);
        }

        self.segments.merge_into(keep as usize, gone as usize);
        self.alive[gone as usize] = false;
        self.live_count -= 1;
        self.merged_into.attach(gone, keep);
        Ok(keep)
    }

    /// Labels of the grid pixels after contraction: each live vertex becomes
    /// one instance, numbered in raster order; excluded pixels are background.
    pub fn pixel_labels(&self) -> Option<LabelMap> {
        let shape = self.shape?;
        let mut labels = Vec::with_capacity(shape.len());
        let mut id_of = vec![0u32; self.alive.len()];
        let mut next = 1;
        for &v in &self.pixel_vertex {
            if v == NO_VERTEX {
                labels.push(Label::BACKGROUND);
                continue;
            }
            let root = self.merged_into.find_const(v) as usize;
            if id_of[root] == 0 {
                id_of[root] = next;
                next += 1;
            }
            labels.push(Label::instance(id_of[root]));
        }
        LabelMap::new(shape, labels).ok()
    }

    /// Live vertex owning each pixel, or `None` for excluded pixels.
    pub fn pixel_owners(&self) -> Vec<Option<VertexId>> {
        self.pixel_vertex
            .iter()
            .map(|&v| (v != NO_VERTEX).then(|| self.merged_into.find_const(v)))
            .collect()
    }

    /// Checks adjacency symmetry and the absence of self-loops.
    pub fn check_consistency(&self) -> Result<()> {
        for u in self.live_vertices() {
            for (&v, e) in &self.adjacency[u as usize] {
                if u == v {
                    return Err(Error::Logic(format!("self-loop on {u}")));
                }
                if !self.is_live(v) {
                    return Err(Error::Logic(format!("edge ({u},{v}) points to a dead vertex")));
                }
                match self.adjacency[v as usize].get(&u) {
                    Some(back) if back == e => {}
                    _ => return Err(Error::Logic(format!("asymmetric edge ({u},{v})"))),
                }
            }
        }
        Ok(())
    }
}

/// Builds the pixel-level graph for one pyramid level.
///
/// Every `UNLABELED` pixel becomes its own vertex; pixels carrying an instance
/// label are grouped into one vertex per connected component of that label
/// (see [`SeedSplit`]); `BACKGROUND` pixels are excluded. Edges connect
/// 4-adjacent vertices; where several grid edges cross between the same two
/// vertices their affinities are averaged.
pub fn build_pixel_graph(
    affinity: &AffinityMap,
    semantic: &SemanticMap,
    embedding: &EmbeddingMap,
    seeds: &LabelMap,
    split: SeedSplit,
) -> Result<ContractionGraph> {
    let shape = affinity.shape();
    for (what, other) in [
        ("semantic map", semantic.shape()),
        ("embedding map", embedding.shape()),
        ("seed labels", seeds.shape()),
    ] {
        if other != shape {
            return Err(Error::ShapeMismatch {
                what,
                expected: shape.to_string(),
                got: other.to_string(),
            });
        }
    }
    let n = shape.len();
    let labels = seeds.labels();
    let (h, w) = (shape.height, shape.width);

    let joins = |p: usize, q: usize, dir: Direction| -> bool {
        let (lp, lq) = (labels[p], labels[q]);
        if !lp.is_instance() || lp != lq {
            return false;
        }
        match split {
            SeedSplit::Grid => true,
            SeedSplit::Affinity(t) => affinity.get(dir, p / w, p % w) as f64 > t,
        }
    };
    let mut groups = DisjointSet::new(n);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w && joins(p, p + 1, Direction::Right) {
                groups.union(p as u32, (p + 1) as u32);
            }
            if y + 1 < h && joins(p, p + w, Direction::Down) {
                groups.union(p as u32, (p + w) as u32);
            }
        }
    }

    let mut pixel_vertex = vec![NO_VERTEX; n];
    let mut root_vertex = vec![NO_VERTEX; n];
    let mut count = 0u32;
    for p in 0..n {
        let label = labels[p];
        if label == Label::BACKGROUND {
            continue;
        }
        let v = if label == Label::UNLABELED {
            count += 1;
            count - 1
        } else {
            let root = groups.find(p as u32) as usize;
            if root_vertex[root] == NO_VERTEX {
                root_vertex[root] = count;
                count += 1;
            }
            root_vertex[root]
        };
        pixel_vertex[p] = v;
    }

    let (classes, dim) = (semantic.classes(), embedding.dim());
    let mut graph = ContractionGraph::empty(count as usize, classes, dim);
    let mut seen = vec![false; count as usize];
    for (p, &v) in pixel_vertex.iter().enumerate() {
        if v == NO_VERTEX {
            continue;
        }
        let vi = v as usize;
        let (y, x) = (p / w, p % w);
        let store = &mut graph.segments;
        store.count[vi] += 1;
        store.bbox[vi] = if seen[vi] {
            store.bbox[vi].hull(&BBox::point(y, x))
        } else {
            BBox::point(y, x)
        };
        seen[vi] = true;
        for c in 0..classes {
            store.sem[vi * classes + c] += semantic.prob(c, p) as f64;
        }
        for k in 0..dim {
            store.emb[vi * dim + k] += embedding.get(k, p) as f64;
        }
    }

    let mut sums: FxHashMap<(u32, u32), (f64, u32)> = FxHashMap::default();
    let mut add = |a: u32, b: u32, value: f32| {
        let entry = sums.entry((a.min(b), a.max(b))).or_insert((0.0, 0));
        entry.0 += value as f64;
        entry.1 += 1;
    };
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let vp = pixel_vertex[p];
            if vp == NO_VERTEX {
                continue;
            }
            if x + 1 < w {
                let vq = pixel_vertex[p + 1];
                if vq != NO_VERTEX && vq != vp {
                    add(vp, vq, affinity.get(Direction::Right, y, x));
                }
            }
            if y + 1 < h {
                let vq = pixel_vertex[p + w];
                if vq != NO_VERTEX && vq != vp {
                    add(vp, vq, affinity.get(Direction::Down, y, x));
                }
            }
        }
    }
    graph.insert_edges(sums);
    graph.pixel_vertex = pixel_vertex;
    graph.shape = Some(shape);
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;
    use proptest::prelude::*;

    fn uniform_level(h: usize, w: usize, a: f32) -> (AffinityMap, SemanticMap, EmbeddingMap) {
        let s = GridShape::new(h, w).unwrap();
        (
            AffinityMap::from_canonical(s, |_, _, _| a),
            SemanticMap::new(s, 2, [vec![0.0; s.len()], vec![1.0; s.len()]].concat()).unwrap(),
            EmbeddingMap::new(s, 1, (0..s.len()).map(|i| i as f32).collect()).unwrap(),
        )
    }

    #[test]
    fn all_unlabeled_2x2() {
        let (a, s, e) = uniform_level(2, 2, 0.9);
        let seeds = LabelMap::filled(a.shape(), Label::UNLABELED);
        let g = build_pixel_graph(&a, &s, &e, &seeds, SeedSplit::Grid).unwrap();
        assert_eq!(g.vertex_count(), 4);
        let edges = g.edges();
        assert_eq!(edges.len(), 4);
        assert!(edges.iter().all(|&(_, _, w)| (w - 0.9).abs() < 1e-6));
        g.check_consistency().unwrap();
    }

    #[test]
    fn all_background_is_empty() {
        let (a, s, e) = uniform_level(2, 2, 0.9);
        let seeds = LabelMap::filled(a.shape(), Label::BACKGROUND);
        let g = build_pixel_graph(&a, &s, &e, &seeds, SeedSplit::Grid).unwrap();
        assert_eq!(g.vertex_count(), 0);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn seeded_block_becomes_one_vertex() {
        // 4x4, left 4x2 block seeded A, right half unlabeled. Crossing edges
        // (column 1 -> column 2) get distinct affinities per row.
        let shape = GridShape::new(4, 4).unwrap();
        let a = AffinityMap::from_canonical(shape, |y, x, d| {
            if d == Direction::Right && x == 1 { 0.1 + 0.2 * y as f32 } else { 0.8 }
        });
        let (_, s, e) = uniform_level(4, 4, 0.0);
        let mut seeds = LabelMap::filled(shape, Label::UNLABELED);
        for y in 0..4 {
            for x in 0..2 {
                seeds.set(y, x, Label::instance(1));
            }
        }
        let g = build_pixel_graph(&a, &s, &e, &seeds, SeedSplit::Grid).unwrap();
        assert_eq!(g.vertex_count(), 9);
        let seg = g.segment(0);
        assert_eq!(seg.pixel_count, 8);
        assert_eq!(seg.bbox, BBox { y_min: 0, x_min: 0, y_max: 3, x_max: 1 });
        // Vertex 0 is A; its neighbors are the four column-2 pixels.
        let nbrs = g.neighbors(0);
        assert_eq!(nbrs.len(), 4);
        let owners = g.pixel_owners();
        for y in 0..4 {
            let v = owners[y * 4 + 2].unwrap();
            let got = g.affinity(0, v).unwrap();
            assert!((got - (0.1 + 0.2 * y as f64)).abs() < 1e-6, "row {y}: {got}");
        }
    }

    #[test]
    fn multiple_crossing_edges_are_averaged() {
        // Two seeded 2x1 columns side by side: two crossing edges.
        let shape = GridShape::new(2, 2).unwrap();
        let a = AffinityMap::from_canonical(shape, |y, _, d| match d {
            Direction::Right => [0.2, 0.6][y],
            _ => 0.9,
        });
        let (_, s, e) = uniform_level(2, 2, 0.0);
        let seeds = LabelMap::from_ids(shape, &[1, 2, 1, 2]).unwrap();
        let g = build_pixel_graph(&a, &s, &e, &seeds, SeedSplit::Grid).unwrap();
        assert_eq!(g.vertex_count(), 2);
        assert!((g.affinity(0, 1).unwrap() - 0.4).abs() < 1e-6);
    }

    #[test]
    fn disconnected_seed_label_splits() {
        let shape = GridShape::new(1, 3).unwrap();
        let (a, s, e) = uniform_level(1, 3, 0.9);
        let seeds = LabelMap::from_ids(shape, &[1, 0, 1]).unwrap();
        let g = build_pixel_graph(&a, &s, &e, &seeds, SeedSplit::Grid).unwrap();
        assert_eq!(g.vertex_count(), 2);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn affinity_split_detaches_weak_seed_pixels() {
        let shape = GridShape::new(1, 3).unwrap();
        let a = AffinityMap::from_canonical(shape, |_, x, _| if x == 1 { 0.1 } else { 0.9 });
        let (_, s, e) = uniform_level(1, 3, 0.0);
        let seeds = LabelMap::from_ids(shape, &[1, 1, 1]).unwrap();
        let grid = build_pixel_graph(&a, &s, &e, &seeds, SeedSplit::Grid).unwrap();
        assert_eq!(grid.vertex_count(), 1);
        let gated = build_pixel_graph(&a, &s, &e, &seeds, SeedSplit::Affinity(0.5)).unwrap();
        assert_eq!(gated.vertex_count(), 2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (a, s, e) = uniform_level(2, 2, 0.9);
        let seeds = LabelMap::filled(GridShape::new(2, 3).unwrap(), Label::UNLABELED);
        let err = build_pixel_graph(&a, &s, &e, &seeds, SeedSplit::Grid).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn contract_averages_common_neighbors() {
        // u=0, v=1, t=2 common, s=3 only adjacent to u.
        let mut g = ContractionGraph::from_edges(
            4,
            &[(0, 1, 0.9), (0, 2, 0.8), (1, 2, 0.2), (0, 3, 0.3)],
        )
        .unwrap();
        let m = g.contract(0, 1).unwrap();
        assert!((g.affinity(m, 2).unwrap() - 0.5).abs() < 1e-12);
        assert!((g.affinity(m, 3).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(g.segment(m).pixel_count, 2);
        assert_eq!(g.vertex_count(), 3);
        g.check_consistency().unwrap();
    }

    #[test]
    fn contract_missing_edge_is_logic_error() {
        let mut g = ContractionGraph::from_edges(3, &[(0, 1, 0.9)]).unwrap();
        assert!(matches!(g.contract(0, 2), Err(Error::Logic(_))));
    }

    #[test]
    fn ties_pick_lowest_key() {
        let mut g = ContractionGraph::from_edges(4, &[(2, 3, 0.7), (0, 1, 0.7), (1, 2, 0.7)]).unwrap();
        let (_, u, v) = g.top().unwrap();
        assert_eq!((u, v), (0, 1));
    }

    #[test]
    fn from_edges_rejects_unknown_vertex() {
        assert!(ContractionGraph::from_edges(2, &[(0, 5, 0.5)]).is_err());
        assert!(ContractionGraph::from_edges(2, &[(1, 1, 0.5)]).is_err());
    }

    fn random_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>, Vec<usize>)> {
        (3usize..30).prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec((0..n, 0..n, 0.0f64..=1.0), 1..200),
                prop::collection::vec(any::<usize>(), 0..40),
            )
        })
    }

    proptest! {
        #[test]
        fn contraction_preserves_invariants((n, raw, picks) in random_graph()) {
            let edges: Vec<_> = raw.into_iter().filter(|&(u, v, _)| u != v).collect();
            let mut g = ContractionGraph::from_edges(n, &edges).unwrap();
            for pick in picks {
                let all = g.edges();
                if all.is_empty() {
                    break;
                }
                // Queue top must equal the exhaustive maximum.
                let best = all.iter().map(|e| e.2).fold(f64::MIN, f64::max);
                let (top, _, _) = g.top().unwrap();
                prop_assert_eq!(top, best);
                let (u, v, _) = all[pick % all.len()];
                g.contract(u, v).unwrap();
                g.check_consistency().unwrap();
                let total: u64 = g.live_vertices().map(|v| g.segment(v).pixel_count).sum();
                prop_assert_eq!(total, n as u64);
            }
        }
    }
}
