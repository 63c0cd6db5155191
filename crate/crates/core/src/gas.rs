//! Greedy association: label propagation from labeled pixels into
//! unlabeled ones along strong affinities.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{AffinityMap, Direction, Label, LabelMap};

/// Resolves every `UNLABELED` pixel of `labels`.
///
/// Each sweep visits the unlabeled pixels in a freshly shuffled order. A
/// pixel adopts the label of its highest-affinity instance-labeled neighbor
/// when that affinity exceeds `threshold`; labels assigned earlier in the
/// same sweep are visible. Sweeps repeat until nothing changes, and pixels
/// still unlabeled then become background. Labeled pixels are never touched.
pub fn gas(labels: &LabelMap, affinity: &AffinityMap, threshold: f64, seed: u64) -> Result<LabelMap> {
    let shape = labels.shape();
    if affinity.shape() != shape {
        return Err(Error::ShapeMismatch {
            what: "affinity map",
            expected: shape.to_string(),
            got: affinity.shape().to_string(),
        });
    }
    let w = shape.width;
    let mut out = labels.clone();
    let mut pending: Vec<usize> = (0..shape.len())
        .filter(|&p| labels.labels()[p] == Label::UNLABELED)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    loop {
        pending.shuffle(&mut rng);
        let before = pending.len();
        pending.retain(|&p| {
            let (y, x) = (p / w, p % w);
            let mut best: Option<(f32, Label)> = None;
            for dir in Direction::ALL {
                let Some((ny, nx)) = dir.step(shape, y, x) else {
                    continue;
                };
                let label = out.get(ny, nx);
                if !label.is_instance() {
                    continue;
                }
                let a = affinity.get(dir, y, x);
                if best.is_none_or(|(b, _)| a > b) {
                    best = Some((a, label));
                }
            }
            match best {
                Some((a, label)) if a as f64 > threshold => {
                    out.set(y, x, label);
                    false
                }
                _ => true,
            }
        });
        if pending.len() == before || pending.is_empty() {
            break;
        }
    }
    for p in pending {
        out.set(p / w, p % w, Label::BACKGROUND);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;
    use proptest::prelude::*;

    const U: u32 = u32::MAX;

    fn labels(h: usize, w: usize, raw: &[u32]) -> LabelMap {
        let shape = GridShape::new(h, w).unwrap();
        let ls = raw
            .iter()
            .map(|&r| match r {
                U => Label::UNLABELED,
                0 => Label::BACKGROUND,
                id => Label::instance(id),
            })
            .collect();
        LabelMap::new(shape, ls).unwrap()
    }

    #[test]
    fn surrounded_pixel_adopts_label() {
        let l = labels(3, 3, &[1, 1, 1, 1, U, 1, 1, 1, 1]);
        let a = AffinityMap::from_canonical(l.shape(), |_, _, _| 0.9);
        let out = gas(&l, &a, 0.5, 0).unwrap();
        assert_eq!(out.get(1, 1), Label::instance(1));
    }

    #[test]
    fn strongest_neighbor_wins() {
        // A | ? | B with affinities 0.6 to A and 0.8 to B.
        let l = labels(1, 3, &[1, U, 2]);
        let a = AffinityMap::from_canonical(l.shape(), |_, x, _| if x == 0 { 0.6 } else { 0.8 });
        let out = gas(&l, &a, 0.5, 7).unwrap();
        assert_eq!(out.get(0, 1), Label::instance(2));
    }

    #[test]
    fn weak_pixels_become_background() {
        let l = labels(1, 3, &[1, U, 2]);
        let a = AffinityMap::from_canonical(l.shape(), |_, _, _| 0.5);
        let out = gas(&l, &a, 0.5, 0).unwrap();
        assert_eq!(out.get(0, 1), Label::BACKGROUND);
    }

    #[test]
    fn background_neighbors_are_not_sources() {
        let l = labels(1, 2, &[0, U]);
        let a = AffinityMap::from_canonical(l.shape(), |_, _, _| 1.0);
        assert_eq!(gas(&l, &a, 0.5, 0).unwrap().get(0, 1), Label::BACKGROUND);
    }

    #[test]
    fn shape_mismatch() {
        let l = labels(1, 2, &[1, U]);
        let a = AffinityMap::from_canonical(GridShape::new(2, 2).unwrap(), |_, _, _| 1.0);
        assert!(matches!(gas(&l, &a, 0.5, 0), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn propagates_along_path_for_any_seed() {
        // Snake-shaped corridor of strong edges from a single source.
        let raw: Vec<u32> = (0..25).map(|i| if i == 0 { 3 } else { U }).collect();
        let l = labels(5, 5, &raw);
        let a = AffinityMap::from_canonical(l.shape(), |_, _, _| 0.7);
        for seed in 0..10 {
            let out = gas(&l, &a, 0.5, seed).unwrap();
            assert!(out.labels().iter().all(|&x| x == Label::instance(3)));
        }
    }

    proptest! {
        #[test]
        fn labeled_pixels_are_kept_and_nothing_stays_unlabeled(
            raw in prop::collection::vec(prop_oneof![Just(U), Just(0u32), 1u32..4], 36),
            aff in prop::collection::vec(0.0f32..=1.0, 72),
            seed in any::<u64>(),
        ) {
            let l = labels(6, 6, &raw);
            let mut it = aff.into_iter();
            let a = AffinityMap::from_canonical(l.shape(), |_, _, _| it.next().unwrap_or(0.0));
            let out = gas(&l, &a, 0.5, seed).unwrap();
            for (before, after) in l.labels().iter().zip(out.labels()) {
                prop_assert!(*after != Label::UNLABELED);
                if *before != Label::UNLABELED {
                    prop_assert_eq!(before, after);
                }
            }
        }
    }
}
