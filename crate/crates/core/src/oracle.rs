//! Exact minimum-cost multicut on small graphs by enumerating every set
//! partition as a restricted growth string.

use crate::error::{Error, Result};
use crate::gaec::{gaec_partition, logit_cost, multicut_cost};

/// `(u, v, weight)`.
pub type WeightedEdge = (usize, usize, f64);

/// Largest vertex count accepted by [`exact_multicut`] by default.
pub const DEFAULT_CAP: usize = 12;

/// Iterator over the set partitions of `0..n` as restricted growth strings
/// `a` with `a[0] = 0` and `a[i] ≤ 1 + max(a[..i])`, in lexicographic order.
#[derive(Debug, Clone)]
pub struct SetPartitions {
    current: Vec<usize>,
    /// `prefix_max[i] = max(current[..=i])`.
    prefix_max: Vec<usize>,
    started: bool,
    done: bool,
}

impl SetPartitions {
    pub fn new(n: usize) -> Self {
        Self {
            current: vec![0; n],
            prefix_max: vec![0; n],
            started: false,
            done: false,
        }
    }

    /// Advances to the next string in place; returns false when exhausted.
    pub fn advance(&mut self) -> bool {
        if self.done {
            return false;
        }
        if !self.started {
            self.started = true;
            return true;
        }
        let n = self.current.len();
        let mut i = n;
        while i > 1 {
            i -= 1;
            if self.current[i] <= self.prefix_max[i - 1] {
                self.current[i] += 1;
                self.prefix_max[i] = self.prefix_max[i - 1].max(self.current[i]);
                for j in i + 1..n {
                    self.current[j] = 0;
                    self.prefix_max[j] = self.prefix_max[i];
                }
                return true;
            }
        }
        self.done = true;
        false
    }

    pub fn current(&self) -> &[usize] {
        &self.current
    }
}

impl Iterator for SetPartitions {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        self.advance().then(|| self.current.clone())
    }
}

/// Number of set partitions of `n` elements, by enumeration.
pub fn count_partitions(n: usize) -> u64 {
    let mut it = SetPartitions::new(n);
    let mut count = 0;
    while it.advance() {
        count += 1;
    }
    count
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticutSolution {
    /// Cluster index per vertex, as a restricted growth string.
    pub partition: Vec<usize>,
    pub cost: f64,
}

/// Minimum of `Σ cost` over cut edges across all partitions of `0..n`.
/// Ties keep the lexicographically smallest partition.
pub fn exact_multicut(n: usize, edges: &[(usize, usize, f64)], cap: usize) -> Result<MulticutSolution> {
    if n > cap {
        return Err(Error::CapExceeded { n, cap });
    }
    if let Some(&(u, v, _)) = edges.iter().find(|&&(u, v, _)| u >= n || v >= n) {
        return Err(Error::invalid(format!("edge ({u},{v}) references a vertex outside 0..{n}")));
    }
    let mut it = SetPartitions::new(n);
    let mut best: Option<MulticutSolution> = None;
    while it.advance() {
        let p = it.current();
        let cost: f64 = edges.iter().filter(|&&(u, v, _)| p[u] != p[v]).map(|e| e.2).sum();
        if best.as_ref().is_none_or(|b| cost < b.cost) {
            best = Some(MulticutSolution {
                partition: p.to_vec(),
                cost,
            });
        }
    }
    Ok(best.expect("at least one partition exists"))
}

/// A small graph with affinities in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    pub vertices: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl AffinityGraph {
    /// Edges with logit costs.
    pub fn costs(&self) -> Vec<(usize, usize, f64)> {
        self.edges.iter().map(|&(u, v, a)| (u, v, logit_cost(a))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapRecord {
    pub vertices: usize,
    pub greedy_cost: f64,
    pub optimal_cost: f64,
}

impl GapRecord {
    pub fn gap(&self) -> f64 {
        self.greedy_cost - self.optimal_cost
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub records: Vec<GapRecord>,
}

impl GapReport {
    /// Fraction of instances whose gap is within `tolerance`.
    pub fn optimal_fraction(&self, tolerance: f64) -> f64 {
        if self.records.is_empty() {
            return 1.0;
        }
        let hits = self.records.iter().filter(|r| r.gap().abs() <= tolerance).count();
        hits as f64 / self.records.len() as f64
    }

    pub fn mean_gap(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(GapRecord::gap).sum::<f64>() / self.records.len() as f64
    }

    pub fn max_gap(&self) -> f64 {
        self.records.iter().map(GapRecord::gap).fold(0.0, f64::max)
    }

    pub fn min_gap(&self) -> f64 {
        self.records.iter().map(GapRecord::gap).fold(f64::INFINITY, f64::min)
    }
}

/// Runs GAEC and the exact solver on every instance, scoring both
/// partitions with logit costs.
pub fn greedy_gap_report(instances: &[AffinityGraph], threshold: f64, cap: usize) -> Result<GapReport> {
    let records = instances
        .iter()
        .map(|g| {
            let costs = g.costs();
            let greedy = gaec_partition(g.vertices, &g.edges, threshold)?;
            let optimal = exact_multicut(g.vertices, &costs, cap)?;
            Ok(GapRecord {
                vertices: g.vertices,
                greedy_cost: multicut_cost(&greedy, &costs)?,
                optimal_cost: optimal.cost,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GapReport { records })
}

/// Parses an edge list of `u v cost` lines. Blank lines and lines starting
/// with `#` are skipped; the vertex count is one more than the largest id.
pub fn parse_edge_list(text: &str) -> Result<(usize, Vec<WeightedEdge>)> {
    let mut edges = Vec::new();
    let mut n = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::invalid(format!("line {}: expected `u v cost`, got {line:?}", lineno + 1));
        let [u, v, c] = fields[..] else {
            return Err(bad());
        };
        let u: usize = u.parse().map_err(|_| bad())?;
        let v: usize = v.parse().map_err(|_| bad())?;
        let c: f64 = c.parse().map_err(|_| bad())?;
        if !c.is_finite() {
            return Err(bad());
        }
        n = n.max(u + 1).max(v + 1);
        edges.push((u, v, c));
    }
    Ok((n, edges))
}
