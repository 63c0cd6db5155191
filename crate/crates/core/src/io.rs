//! On-disk formats.
//!
//! A pyramid container is a directory holding `manifest.json` and one raw
//! little-endian `f32` blob per tensor and level (`level1_affinity.f32`, …),
//! each laid out `channel × h × w`. Partition results are written as a JSON
//! segment table with run-length masks plus a 16-bit PGM label image.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cascade::{Partition, ScoredInstance, SegmentRecord};
use crate::error::{Error, Result};
use crate::grid::{
    AffinityMap, AffinityPyramid, ClassKind, EmbeddingMap, GridShape, Label, LabelMap, PyramidLevel, SemanticMap,
};
use crate::mask::{upsampled_instance_masks, Mask};
use crate::segment::BBox;
use crate::synth::GtInstance;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SEGMENTS_FILE: &str = "segments.json";
pub const LABELS_FILE: &str = "labels.pgm";
pub const GT_FILE: &str = "gt.json";
pub const PYRAMID_DIR: &str = "pyramid";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelDims {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub n_levels: usize,
    pub levels: Vec<LevelDims>,
    pub class_kinds: Vec<ClassKind>,
    pub endianness: String,
    pub dtype: String,
    /// Resolution of the image the pyramid was computed from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<GridShape>,
}

impl Manifest {
    fn check(&self, path: &Path) -> Result<()> {
        let fail = |detail: String| Error::Container {
            path: path.to_path_buf(),
            detail,
        };
        if self.format_version != FORMAT_VERSION {
            return Err(fail(format!(
                "unsupported format_version {}, expected {FORMAT_VERSION}",
                self.format_version
            )));
        }
        if self.endianness != "little" {
            return Err(fail(format!("unsupported endianness {:?}", self.endianness)));
        }
        if self.dtype != "f32" {
            return Err(fail(format!("unsupported dtype {:?}", self.dtype)));
        }
        if self.n_levels != self.levels.len() || self.n_levels == 0 {
            return Err(fail(format!(
                "n_levels is {} but {} levels are described",
                self.n_levels,
                self.levels.len()
            )));
        }
        for (i, d) in self.levels.iter().enumerate() {
            let level = i + 1;
            if d.h == 0 || d.w == 0 || d.k == 0 {
                return Err(Error::Invariant {
                    level,
                    tensor: "shape",
                    detail: format!("dimensions h={} w={} k={} must be positive", d.h, d.w, d.k),
                });
            }
            if d.c != self.class_kinds.len() {
                return Err(Error::Invariant {
                    level,
                    tensor: "semantic",
                    detail: format!("c={} but {} class kinds are declared", d.c, self.class_kinds.len()),
                });
            }
            if i > 0 {
                let prev = &self.levels[i - 1];
                if d.h != prev.h.div_ceil(2) || d.w != prev.w.div_ceil(2) {
                    return Err(Error::Invariant {
                        level,
                        tensor: "shape",
                        detail: format!(
                            "{}x{} is not half of level {} ({}x{})",
                            d.h, d.w, i, prev.h, prev.w
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

fn blob_name(level: usize, tensor: &str) -> String {
    format!("level{level}_{tensor}.f32")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<()> {
    let mut bytes = if pretty {
        serde_json::to_vec_pretty(value)
    } else {
        serde_json::to_vec(value)
    }
    .map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = read_json(&path)?;
    manifest.check(&path)?;
    Ok(manifest)
}

fn read_blob(dir: &Path, level: usize, tensor: &'static str, count: usize) -> Result<Vec<f32>> {
    let path = dir.join(blob_name(level, tensor));
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != 4 * count {
        return Err(Error::Container {
            path,
            detail: format!("expected {} bytes ({count} f32 values), found {}", 4 * count, bytes.len()),
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Invariant {
            level,
            tensor,
            detail: format!("non-finite value {} at flat index {i}", values[i]),
        });
    }
    Ok(values)
}

/// Reads and fully validates a pyramid container.
pub fn read_pyramid(dir: &Path) -> Result<AffinityPyramid> {
    let manifest = read_manifest(dir)?;
    let levels = manifest
        .levels
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let level = i + 1;
            let shape = GridShape::new(d.h, d.w)?;
            let n = shape.len();
            Ok(PyramidLevel {
                affinity: AffinityMap::new(shape, read_blob(dir, level, "affinity", 4 * n)?)?,
                semantic: SemanticMap::new(shape, d.c, read_blob(dir, level, "semantic", d.c * n)?)?,
                embedding: EmbeddingMap::new(shape, d.k, read_blob(dir, level, "embedding", d.k * n)?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AffinityPyramid::new(levels, manifest.class_kinds)
}

fn write_blob(dir: &Path, level: usize, tensor: &str, values: &[f32]) -> Result<()> {
    let path = dir.join(blob_name(level, tensor));
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

/// Writes `pyramid` into `dir`, creating it if needed.
pub fn write_pyramid(pyramid: &AffinityPyramid, dir: &Path, input_shape: Option<GridShape>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        n_levels: pyramid.levels.len(),
        levels: pyramid
            .levels
            .iter()
            .map(|l| LevelDims {
                h: l.shape().height,
                w: l.shape().width,
                c: l.semantic.classes(),
                k: l.embedding.dim(),
            })
            .collect(),
        class_kinds: pyramid.class_kinds.clone(),
        endianness: "little".into(),
        dtype: "f32".into(),
        input_shape,
    };
    for (i, level) in pyramid.levels.iter().enumerate() {
        write_blob(dir, i + 1, "affinity", level.affinity.values())?;
        write_blob(dir, i + 1, "semantic", level.semantic.values())?;
        write_blob(dir, i + 1, "embedding", level.embedding.values())?;
    }
    write_json(&dir.join(MANIFEST_FILE), &manifest, true)
}

/// Run-length mask: alternating run lengths in raster order, starting with
/// background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub id: u32,
    pub class: usize,
    pub score: f64,
    /// Level-1 bounding box.
    pub bbox: BBox,
    /// Level-1 pixel count.
    pub pixel_count: u64,
    /// Mask at input resolution.
    pub mask: RleMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTable {
    pub level_shape: GridShape,
    pub input_shape: GridShape,
    pub segments: Vec<SegmentEntry>,
}

impl SegmentTable {
    pub fn from_partition(partition: &Partition, input_shape: GridShape) -> Result<Self> {
        let masks = upsampled_instance_masks(&partition.labels, crate::cascade::RENDER_SCALE, input_shape)?;
        let segments = partition
            .segments
            .iter()
            .map(|s: &SegmentRecord| SegmentEntry {
                id: s.id,
                class: s.class,
                score: s.score,
                bbox: s.bbox,
                pixel_count: s.pixel_count,
                mask: RleMask {
                    counts: masks.get(&s.id).map_or_else(|| Mask::empty(input_shape).to_counts(), Mask::to_counts),
                },
            })
            .collect();
        Ok(Self {
            level_shape: partition.labels.shape(),
            input_shape,
            segments,
        })
    }

    pub fn instances(&self) -> Result<Vec<ScoredInstance>> {
        self.segments
            .iter()
            .map(|s| {
                Ok(ScoredInstance {
                    id: s.id,
                    class: s.class,
                    score: s.score,
                    mask: Mask::from_counts(self.input_shape, &s.mask.counts)?,
                })
            })
            .collect()
    }
}

pub fn write_segment_table(path: &Path, table: &SegmentTable) -> Result<()> {
    write_json(path, table, false)
}

pub fn read_segment_table(path: &Path) -> Result<SegmentTable> {
    read_json(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtEntry {
    pub id: u32,
    pub class: usize,
    pub mask: RleMask,
}

/// Ground-truth instances of one image at input resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtTable {
    pub input_shape: GridShape,
    pub classes: usize,
    pub instances: Vec<GtEntry>,
}

impl GtTable {
    pub fn new(input_shape: GridShape, classes: usize, instances: &[GtInstance]) -> Self {
        Self {
            input_shape,
            classes,
            instances: instances
                .iter()
                .map(|g| GtEntry {
                    id: g.id,
                    class: g.class,
                    mask: RleMask {
                        counts: g.mask.to_counts(),
                    },
                })
                .collect(),
        }
    }

    pub fn instances(&self) -> Result<Vec<GtInstance>> {
        self.instances
            .iter()
            .map(|g| {
                Ok(GtInstance {
                    id: g.id,
                    class: g.class,
                    mask: Mask::from_counts(self.input_shape, &g.mask.counts)?,
                })
            })
            .collect()
    }
}

pub fn write_gt_table(path: &Path, table: &GtTable) -> Result<()> {
    write_json(path, table, false)
}

pub fn read_gt_table(path: &Path) -> Result<GtTable> {
    read_json(path)
}

/// Writes instance ids as a binary 16-bit PGM (background 0).
pub fn write_pgm(path: &Path, labels: &LabelMap) -> Result<()> {
    let shape = labels.shape();
    let mut bytes = format!("P5\n{} {}\n65535\n", shape.width, shape.height).into_bytes();
    for l in labels.labels() {
        let raw = match l.instance_id() {
            Some(id) => u16::try_from(id)
                .map_err(|_| Error::invalid(format!("instance id {id} does not fit a 16-bit label image")))?,
            None if *l == Label::UNLABELED => return Err(Error::invalid("label image contains unlabeled pixels")),
            None => 0,
        };
        bytes.extend_from_slice(&raw.to_be_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<LabelMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: &str| Error::Container {
        path: PathBuf::from(path),
        detail: detail.to_string(),
    };
    // Header: magic, width, height, maxval, each followed by one whitespace.
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err(bad("expected a binary 16-bit PGM (P5, maxval 65535)"));
    }
    let width: usize = fields[1].parse().map_err(|_| bad("bad PGM width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("bad PGM height"))?;
    let shape = GridShape::new(height, width)?;
    let data = bytes.get(pos..).unwrap_or_default();
    if data.len() != 2 * shape.len() {
        return Err(bad(&format!("expected {} data bytes, found {}", 2 * shape.len(), data.len())));
    }
    let ids: Vec<u32> = data.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as u32).collect();
    LabelMap::from_ids(shape, &ids)
}

/// Writes `segments.json` and `labels.pgm` for a partition into `dir`.
pub fn write_partition(dir: &Path, partition: &Partition, input_shape: GridShape) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_segment_table(&dir.join(SEGMENTS_FILE), &SegmentTable::from_partition(partition, input_shape)?)?;
    write_pgm(&dir.join(LABELS_FILE), &partition.labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, NoiseSpec, SceneSpec};

    fn scene_pyramid() -> AffinityPyramid {
        let spec = SceneSpec {
            height: 256,
            width: 320,
            levels: 3,
            min_instances: 1,
            max_instances: 4,
            noise: NoiseSpec::moderate(),
            seed: 11,
            ..SceneSpec::default()
        };
        generate_scene(&spec).unwrap().pyramid
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let pyr = scene_pyramid();
        let shape = Some(GridShape::new(256, 320).unwrap());
        write_pyramid(&pyr, dir.path(), shape).unwrap();
        let back = read_pyramid(dir.path()).unwrap();
        assert_eq!(back, pyr);
        assert_eq!(read_manifest(dir.path()).unwrap().input_shape, shape);

        let again = tempfile::tempdir().unwrap();
        write_pyramid(&back, again.path(), shape).unwrap();
        for name in ["manifest.json", "level1_affinity.f32", "level3_embedding.f32"] {
            assert_eq!(
                fs::read(dir.path().join(name)).unwrap(),
                fs::read(again.path().join(name)).unwrap()
            );
        }
    }

    #[test]
    fn truncated_blob_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write_pyramid(&scene_pyramid(), dir.path(), None).unwrap();
        let blob = dir.path().join("level2_semantic.f32");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 3]).unwrap();
        let err = read_pyramid(dir.path()).unwrap_err();
        assert!(err.to_string().contains("level2_semantic.f32"), "{err}");
    }

    #[test]
    fn bad_halving_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_pyramid(&scene_pyramid(), dir.path(), None).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut m: Manifest = read_json(&path).unwrap();
        m.levels[1].h += 1;
        write_json(&path, &m, true).unwrap();
        let err = read_pyramid(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Invariant { level: 2, tensor: "shape", .. }), "{err}");
    }

    #[test]
    fn bad_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_pyramid(&scene_pyramid(), dir.path(), None).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut m: Manifest = read_json(&path).unwrap();
        m.format_version = 2;
        write_json(&path, &m, true).unwrap();
        assert!(matches!(read_pyramid(dir.path()), Err(Error::Container { .. })));
    }

    #[test]
    fn nan_is_reported_with_level_and_tensor() {
        let dir = tempfile::tempdir().unwrap();
        write_pyramid(&scene_pyramid(), dir.path(), None).unwrap();
        let blob = dir.path().join("level1_embedding.f32");
        let mut bytes = fs::read(&blob).unwrap();
        bytes[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&blob, bytes).unwrap();
        let err = read_pyramid(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Invariant { level: 1, tensor: "embedding", .. }), "{err}");
    }

    #[test]
    fn asymmetric_affinity_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_pyramid(&scene_pyramid(), dir.path(), None).unwrap();
        let blob = dir.path().join("level1_affinity.f32");
        let mut bytes = fs::read(&blob).unwrap();
        // Down channel (index 1) of pixel (0, 0).
        let n = 64 * 80;
        bytes[4 * n..4 * n + 4].copy_from_slice(&0.123f32.to_le_bytes());
        fs::write(&blob, bytes).unwrap();
        let err = read_pyramid(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Invariant { level: 1, tensor: "affinity", .. }), "{err}");
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.pgm");
        let labels = LabelMap::from_ids(GridShape::new(2, 3).unwrap(), &[0, 1, 300, 2, 0, 65535]).unwrap();
        write_pgm(&path, &labels).unwrap();
        assert!(fs::read(&path).unwrap().starts_with(b"P5\n3 2\n65535\n"));
        assert_eq!(read_pgm(&path).unwrap(), labels);
        let big = LabelMap::from_ids(GridShape::new(1, 1).unwrap(), &[70000]).unwrap();
        assert!(write_pgm(&path, &big).is_err());
    }

    #[test]
    fn gt_table_round_trip() {
        let spec = SceneSpec {
            height: 256,
            width: 256,
            min_instances: 1,
            max_instances: 4,
            seed: 2,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        let gts = scene.gt_instances();
        let table = GtTable::new(scene.input_shape(), 4, &gts);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(GT_FILE);
        write_gt_table(&path, &table).unwrap();
        assert_eq!(read_gt_table(&path).unwrap().instances().unwrap(), gts);
    }
}
