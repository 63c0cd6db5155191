//! Run-length encoded binary masks over a raster grid.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::{GridShape, LabelMap};

/// A binary mask stored as sorted, disjoint, non-adjacent runs
/// `(start, length)` of raster indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    shape: GridShape,
    runs: Vec<(u32, u32)>,
}

impl Mask {
    pub fn empty(shape: GridShape) -> Self {
        Self { shape, runs: Vec::new() }
    }

    pub fn from_dense(shape: GridShape, pixels: &[bool]) -> Result<Self> {
        if pixels.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                what: "dense mask",
                expected: format!("{} pixels", shape.len()),
                got: format!("{} pixels", pixels.len()),
            });
        }
        let mut mask = Self::empty(shape);
        for (i, &on) in pixels.iter().enumerate() {
            if on {
                mask.push_run(i, 1);
            }
        }
        Ok(mask)
    }

    /// Decodes alternating run lengths, starting with a run of zeros.
    pub fn from_counts(shape: GridShape, counts: &[u32]) -> Result<Self> {
        let mut mask = Self::empty(shape);
        let mut pos = 0usize;
        for (i, &c) in counts.iter().enumerate() {
            if i % 2 == 1 && c > 0 {
                mask.push_run(pos, c as usize);
            }
            pos += c as usize;
        }
        if pos != shape.len() {
            return Err(Error::invalid(format!(
                "run lengths cover {pos} pixels, mask is {shape} ({} pixels)",
                shape.len()
            )));
        }
        Ok(mask)
    }

    /// Alternating run lengths starting with zeros; sums to the pixel count.
    pub fn to_counts(&self) -> Vec<u32> {
        let mut counts = Vec::with_capacity(2 * self.runs.len() + 1);
        let mut pos = 0u32;
        for &(start, len) in &self.runs {
            counts.push(start - pos);
            counts.push(len);
            pos = start + len;
        }
        counts.push(self.shape.len() as u32 - pos);
        counts
    }

    /// Appends a run; runs must be pushed in raster order.
    pub(crate) fn push_run(&mut self, start: usize, len: usize) {
        let (start, len) = (start as u32, len as u32);
        match self.runs.last_mut() {
            Some(last) if last.0 + last.1 == start => last.1 += len,
            _ => self.runs.push((start, len)),
        }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn runs(&self) -> &[(u32, u32)] {
        &self.runs
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().map(|&(_, l)| l as u64).sum()
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        let i = self.shape.index(y, x) as u32;
        let k = self.runs.partition_point(|&(s, _)| s <= i);
        k > 0 && i < self.runs[k - 1].0 + self.runs[k - 1].1
    }

    pub fn to_dense(&self) -> Vec<bool> {
        let mut out = vec![false; self.shape.len()];
        for &(s, l) in &self.runs {
            out[s as usize..(s + l) as usize].fill(true);
        }
        out
    }

    pub fn intersection(&self, other: &Mask) -> u64 {
        let (mut i, mut j, mut total) = (0, 0, 0u64);
        while i < self.runs.len() && j < other.runs.len() {
            let (a0, al) = self.runs[i];
            let (b0, bl) = other.runs[j];
            let (a1, b1) = (a0 + al, b0 + bl);
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if hi > lo {
                total += (hi - lo) as u64;
            }
            if a1 <= b1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        total
    }

    pub fn iou(&self, other: &Mask) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                what: "mask",
                expected: self.shape.to_string(),
                got: other.shape.to_string(),
            });
        }
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
    }
}

/// One mask per instance id of `labels`.
pub fn instance_masks(labels: &LabelMap) -> BTreeMap<u32, Mask> {
    upsampled_instance_masks(labels, 1, labels.shape()).expect("identity scale")
}

/// One mask per instance id after nearest-neighbor upsampling of `labels` by
/// `factor`, cropped to `target`. The target must round up to the label grid
/// when divided by `factor`.
pub fn upsampled_instance_masks(labels: &LabelMap, factor: usize, target: GridShape) -> Result<BTreeMap<u32, Mask>> {
    let source = labels.shape();
    if factor == 0 || target.height.div_ceil(factor) != source.height || target.width.div_ceil(factor) != source.width {
        return Err(Error::ShapeMismatch {
            what: "render target",
            expected: format!("a shape that is {factor}x {source} up to rounding"),
            got: target.to_string(),
        });
    }
    let mut masks: BTreeMap<u32, Mask> = BTreeMap::new();
    let mut row_runs = Vec::new();
    for y in 0..source.height {
        row_runs.clear();
        let mut x = 0;
        while x < source.width {
            let label = labels.get(y, x);
            let start = x;
            while x < source.width && labels.get(y, x) == label {
                x += 1;
            }
            if let Some(id) = label.instance_id() {
                row_runs.push((id, start * factor, (x * factor).min(target.width)));
            }
        }
        for ty in y * factor..((y + 1) * factor).min(target.height) {
            for &(id, x0, x1) in &row_runs {
                masks
                    .entry(id)
                    .or_insert_with(|| Mask::empty(target))
                    .push_run(ty * target.width + x0, x1 - x0);
            }
        }
    }
    Ok(masks)
}
