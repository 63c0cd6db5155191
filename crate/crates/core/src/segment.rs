//! Segment statistics carried by contracted vertices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive bounding box in level coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub y_min: u32,
    pub x_min: u32,
    pub y_max: u32,
    pub x_max: u32,
}

impl BBox {
    pub fn point(y: usize, x: usize) -> Self {
        Self {
            y_min: y as u32,
            x_min: x as u32,
            y_max: y as u32,
            x_max: x as u32,
        }
    }

    pub fn hull(&self, other: &BBox) -> BBox {
        BBox {
            y_min: self.y_min.min(other.y_min),
            x_min: self.x_min.min(other.x_min),
            y_max: self.y_max.max(other.y_max),
            x_max: self.x_max.max(other.x_max),
        }
    }

    pub fn height(&self) -> f64 {
        (self.y_max - self.y_min + 1) as f64
    }

    pub fn width(&self) -> f64 {
        (self.x_max - self.x_min + 1) as f64
    }

    /// `(center_y, center_x)` of the box.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.y_min as f64 + self.y_max as f64) / 2.0,
            (self.x_min as f64 + self.x_max as f64) / 2.0,
        )
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y_min as usize..=self.y_max as usize).contains(&y)
            && (self.x_min as usize..=self.x_max as usize).contains(&x)
    }
}

/// Additive statistics of a group of pixels. Geometry is the bounding box,
/// so merging two segments is O(c + k).
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub pixel_count: u64,
    pub bbox: BBox,
    pub semantic_sum: Vec<f64>,
    pub embedding_sum: Vec<f64>,
}

impl Segment {
    pub fn merge(&mut self, other: &Segment) {
        self.pixel_count += other.pixel_count;
        self.bbox = self.bbox.hull(&other.bbox);
        for (a, b) in self.semantic_sum.iter_mut().zip(&other.semantic_sum) {
            *a += b;
        }
        for (a, b) in self.embedding_sum.iter_mut().zip(&other.embedding_sum) {
            *a += b;
        }
    }

    pub fn mean_distribution(&self) -> Result<Vec<f64>> {
        self.check_nonempty()?;
        let n = self.pixel_count as f64;
        Ok(self.semantic_sum.iter().map(|s| s / n).collect())
    }

    pub fn mean_embedding(&self) -> Result<Vec<f64>> {
        self.check_nonempty()?;
        let n = self.pixel_count as f64;
        Ok(self.embedding_sum.iter().map(|s| s / n).collect())
    }

    /// Argmax of the mean distribution; ties go to the lower class.
    pub fn dominant_class(&self) -> usize {
        let mut best = 0;
        for (c, &s) in self.semantic_sum.iter().enumerate() {
            if s > self.semantic_sum[best] {
                best = c;
            }
        }
        best
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.pixel_count == 0 {
            return Err(Error::Logic("segment with zero pixels".into()));
        }
        Ok(())
    }
}
