//! Greedy edge contraction and the multicut objective it approximates.

use crate::error::{Error, Result};
use crate::graph::{ContractionGraph, VertexId};

/// Affinities are clamped to this distance from 0 and 1 before taking the
/// logit, bounding costs to about ±13.8.
pub const LOGIT_EPSILON: f64 = 1e-6;

/// One contraction performed by [`gaec_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contraction {
    pub affinity: f64,
    pub u: VertexId,
    pub v: VertexId,
    pub merged: VertexId,
}

/// Repeatedly contracts the highest-affinity edge while it is strictly above
/// `threshold`. Returns the number of contractions.
pub fn gaec(graph: &mut ContractionGraph, threshold: f64) -> Result<usize> {
    gaec_with(graph, threshold, |_, _| {})
}

/// [`gaec`] with a hook called after every contraction.
pub fn gaec_with(
    graph: &mut ContractionGraph,
    threshold: f64,
    mut on_contract: impl FnMut(&ContractionGraph, Contraction),
) -> Result<usize> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("threshold {threshold} outside [0,1]")));
    }
    let mut steps = 0;
    while let Some((affinity, u, v)) = graph.top() {
        if affinity <= threshold {
            break;
        }
        let merged = graph.contract(u, v)?;
        steps += 1;
        on_contract(graph, Contraction { affinity, u, v, merged });
    }
    Ok(steps)
}

/// Runs GAEC on an abstract graph and returns a vertex → cluster labelling
/// (clusters numbered by first vertex).
pub fn gaec_partition(n: usize, edges: &[(usize, usize, f64)], threshold: f64) -> Result<Vec<usize>> {
    let mut graph = ContractionGraph::from_edges(n, edges)?;
    gaec(&mut graph, threshold)?;
    let roots: Vec<_> = (0..n as VertexId).map(|v| graph.representative(v)).collect();
    Ok(canonical_partition(&roots))
}

/// Relabels arbitrary cluster ids to 0, 1, … in order of first appearance.
pub fn canonical_partition<T: Copy + Eq + std::hash::Hash>(labels: &[T]) -> Vec<usize> {
    let mut ids = rustc_hash::FxHashMap::default();
    labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(*l).or_insert(next)
        })
        .collect()
}

/// Cost of cutting an edge with affinity `a`: `ln(a / (1 - a))`, so that
/// affinity 0.5 maps to cost 0 and attractive edges have positive cost.
pub fn logit_cost(affinity: f64) -> f64 {
    let a = affinity.clamp(LOGIT_EPSILON, 1.0 - LOGIT_EPSILON);
    (a / (1.0 - a)).ln()
}

/// Sum of `cost` over edges whose endpoints lie in different clusters.
pub fn multicut_cost(partition: &[usize], edges: &[(usize, usize, f64)]) -> Result<f64> {
    let mut total = 0.0;
    for &(u, v, cost) in edges {
        let (Some(pu), Some(pv)) = (partition.get(u), partition.get(v)) else {
            return Err(Error::invalid(format!(
                "edge ({u},{v}) references a vertex outside the {}-vertex partition",
                partition.len()
            )));
        };
        if pu != pv {
            total += cost;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clusters(n: usize, edges: &[(usize, usize, f64)], t: f64) -> Vec<usize> {
        gaec_partition(n, edges, t).unwrap()
    }

    #[test]
    fn path_merges_fully_when_affinity_survives_averaging() {
        // a-b 0.9, b-c 0.8: after merging {a,b}, edge to c keeps 0.8.
        assert_eq!(clusters(3, &[(0, 1, 0.9), (1, 2, 0.8)], 0.5), vec![0, 0, 0]);
    }

    #[test]
    fn path_stops_at_weak_edge() {
        assert_eq!(clusters(3, &[(0, 1, 0.9), (1, 2, 0.1)], 0.5), vec![0, 0, 1]);
    }

    #[test]
    fn all_edges_below_threshold_is_noop() {
        let mut g = ContractionGraph::from_edges(3, &[(0, 1, 0.5), (1, 2, 0.2)]).unwrap();
        assert_eq!(gaec(&mut g, 0.5).unwrap(), 0);
        assert_eq!(g.vertex_count(), 3);
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(clusters(2, &[(0, 1, 0.5)], 0.5), vec![0, 1]);
    }

    #[test]
    fn averaging_can_block_a_merge() {
        // Triangle: 0-1 0.9, 0-2 0.7, 1-2 0.2. After {0,1}: avg(0.7, 0.2) = 0.45.
        assert_eq!(clusters(3, &[(0, 1, 0.9), (0, 2, 0.7), (1, 2, 0.2)], 0.5), vec![0, 0, 1]);
    }

    #[test]
    fn invalid_threshold() {
        let mut g = ContractionGraph::from_edges(2, &[(0, 1, 0.9)]).unwrap();
        assert!(gaec(&mut g, 1.5).is_err());
    }

    #[test]
    fn multicut_cost_examples() {
        let tri = [(0, 1, 1.0), (1, 2, 1.0), (0, 2, -1.0)];
        // All five partitions of three vertices.
        assert_eq!(multicut_cost(&[0, 0, 0], &tri).unwrap(), 0.0);
        assert_eq!(multicut_cost(&[0, 1, 1], &tri).unwrap(), 0.0);
        assert_eq!(multicut_cost(&[0, 1, 0], &tri).unwrap(), 2.0);
        assert_eq!(multicut_cost(&[0, 0, 1], &tri).unwrap(), 0.0);
        assert_eq!(multicut_cost(&[0, 1, 2], &tri).unwrap(), 1.0);
        assert_eq!(multicut_cost(&[0, 1], &[(0, 1, -0.7)]).unwrap(), -0.7);
        assert!(multicut_cost(&[0, 1], &[(0, 3, 1.0)]).is_err());
    }

    #[test]
    fn logit_cost_is_centered_and_clipped() {
        assert_eq!(logit_cost(0.5), 0.0);
        assert!(logit_cost(0.9) > 0.0);
        assert!((logit_cost(1.0) - 13.8155).abs() < 1e-3);
        assert!((logit_cost(0.0) + 13.8155).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn greedy_invariants(
            raw in prop::collection::vec((0usize..20, 0usize..20, 0.0f64..=1.0), 1..120),
            threshold in 0.0f64..1.0,
        ) {
            let edges: Vec<_> = raw.into_iter().filter(|&(u, v, _)| u != v).collect();
            let mut g = ContractionGraph::from_edges(20, &edges).unwrap();
            let mut prev_edges = g.edges();
            let mut violations = 0;
            let steps = gaec_with(&mut g, threshold, |g, step| {
                // The contracted edge dominated every edge alive before it.
                if prev_edges.iter().any(|e| e.2 > step.affinity) {
                    violations += 1;
                }
                prev_edges = g.edges();
            }).unwrap();
            prop_assert_eq!(violations, 0);
            prop_assert!(steps <= 19);
            prop_assert!(g.edges().iter().all(|e| e.2 <= threshold));
        }
    }
}
