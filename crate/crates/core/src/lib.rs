//! Proposal-free instance segmentation from multi-resolution affinity
//! pyramids: greedy additive edge contraction, a position-aware segment
//! merge, and the supporting losses, oracle, synthetic data and metrics.

pub mod cascade;
mod dsu;
pub mod error;
pub mod gaec;
pub mod gas;
pub mod graph;
pub mod grid;
pub mod io;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod oracle;
pub mod position;
pub mod segment;
pub mod synth;

pub use cascade::{
    cascade_gaec, partition, partition_arrays, BackgroundRule, CascadeConfig, LevelArrays, Partition, ScoredInstance,
    SegmentRecord,
};
pub use error::{Error, Result};
pub use gaec::{gaec, gaec_partition};
pub use gas::gas;
pub use grid::{
    AffinityMap, AffinityPyramid, ClassKind, Direction, EmbeddingMap, GridShape, Label, LabelMap, PyramidLevel,
    SemanticMap,
};
pub use losses::{grouping_losses, phi, semantic_affinity_losses, GroundTruthScene};
pub use mask::Mask;
pub use oracle::exact_multicut;
pub use position::{pa_gaec, PaConfig};
pub use segment::{BBox, Segment};
pub use synth::{generate_scene, NoiseSpec, Scene, SceneSpec};
