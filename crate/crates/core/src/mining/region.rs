use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in normalized image coordinates, `0 ≤ x0 < x1 ≤ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub const FULL: Rect = Rect {
        x0: 0.0,
        y0: 0.0,
        x1: 1.0,
        y1: 1.0,
    };

    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let ok = [x0, y0, x1, y1].iter().all(|v| v.is_finite())
            && 0.0 <= x0
            && x0 < x1
            && x1 <= 1.0
            && 0.0 <= y0
            && y0 < y1
            && y1 <= 1.0;
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "rectangle ({x0}, {y0}, {x1}, {y1}) must satisfy 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    /// Pixel-space rectangle `[x0, x1) × [y0, y1)` converted to normalized coordinates.
    pub fn from_pixels(x0: usize, y0: usize, x1: usize, y1: usize, width: usize, height: usize) -> Result<Self> {
        Self::new(
            x0 as f64 / width as f64,
            y0 as f64 / height as f64,
            x1 as f64 / width as f64,
            y1 as f64 / height as f64,
        )
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.x0 <= x && x <= self.x1 && self.y0 <= y && y <= self.y1
    }

    pub fn contains(&self, other: &Rect) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && other.x1 <= self.x1 && other.y1 <= self.y1
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        w * h
    }

    /// True when the two rectangles share positive area.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.intersection_area(other) > 0.0
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection_area(other);
        inter / (self.area() + other.area() - inter)
    }
}

impl TryFrom<[f64; 4]> for Rect {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Rect::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.x0, r.y0, r.x1, r.y1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartRole {
    /// Discriminates vehicle models.
    PartM,
    /// Discriminates vehicle identities within a model.
    PartI,
}

/// A mined part rectangle with the seeds that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartRegion {
    pub rect: Rect,
    pub role: PartRole,
    pub provenance: Vec<u64>,
}
