use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HogConfig {
    pub cell_px: usize,
    /// Cells per side of a normalization block.
    pub block_cells: usize,
    pub bins: usize,
    /// Orientation range 360° when true, 180° otherwise.
    pub signed: bool,
    pub epsilon: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            cell_px: 8,
            block_cells: 2,
            bins: 9,
            signed: false,
            epsilon: 1e-6,
        }
    }
}

impl HogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cell_px == 0 || self.block_cells == 0 {
            return Err(Error::InvalidConfig("cell_px and block_cells must be >= 1".into()));
        }
        if self.bins < 2 {
            return Err(Error::InvalidConfig("bins must be >= 2".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// Dense field of block-normalized cell histograms, `cells_y × cells_x × bins`.
///
/// Each cell's histogram is the average of its L2-Hys normalized copies over
/// every block that contains it, so the field keeps one histogram per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct HogField {
    pub cells_x: usize,
    pub cells_y: usize,
    pub bins: usize,
    pub data: Vec<f32>,
}

impl HogField {
    #[inline]
    pub fn cell(&self, cx: usize, cy: usize) -> &[f32] {
        let i = (cy * self.cells_x + cx) * self.bins;
        &self.data[i..i + self.bins]
    }

    /// Whole-image descriptor.
    pub fn descriptor(&self) -> &[f32] {
        &self.data
    }
}

/// Centered-difference gradients on the channel-mean image, border replicated.
pub(crate) fn gradients(gray: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        let yu = y.saturating_sub(1);
        let yd = (y + 1).min(h - 1);
        for x in 0..w {
            let xl = x.saturating_sub(1);
            let xr = (x + 1).min(w - 1);
            gx[y * w + x] = gray[y * w + xr] - gray[y * w + xl];
            gy[y * w + x] = gray[yd * w + x] - gray[yu * w + x];
        }
    }
    (gx, gy)
}

#[inline]
fn orientation_bin(gx: f64, gy: f64, bins: usize, signed: bool) -> usize {
    let range = if signed { 360.0 } else { 180.0 };
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 360.0;
    }
    if !signed && angle >= 180.0 {
        angle -= 180.0;
    }
    ((angle / (range / bins as f64)) as usize).min(bins - 1)
}

pub fn hog(image: &Image, cfg: &HogConfig) -> Result<HogField> {
    cfg.validate()?;
    let (w, h) = (image.width(), image.height());
    if w % cfg.cell_px != 0 || h % cfg.cell_px != 0 {
        return Err(Error::Shape(format!(
            "image {w}x{h} is not divisible into {}-px cells",
            cfg.cell_px
        )));
    }
    let (cells_x, cells_y) = (w / cfg.cell_px, h / cfg.cell_px);
    if cells_x < cfg.block_cells || cells_y < cfg.block_cells {
        return Err(Error::Shape(format!(
            "image {w}x{h} has fewer cells than one {}-cell block",
            cfg.block_cells
        )));
    }
    let bins = cfg.bins;
    let gray = image.gray();
    let (gx, gy) = gradients(&gray, w, h);

    let mut hist = vec![0.0f64; cells_x * cells_y * bins];
    for y in 0..h {
        let cy = y / cfg.cell_px;
        for x in 0..w {
            let i = y * w + x;
            let mag = gx[i].hypot(gy[i]);
            if mag == 0.0 {
                continue;
            }
            let cx = x / cfg.cell_px;
            let b = orientation_bin(gx[i], gy[i], bins, cfg.signed);
            hist[(cy * cells_x + cx) * bins + b] += mag;
        }
    }

    let bc = cfg.block_cells;
    let eps2 = cfg.epsilon * cfg.epsilon;
    let mut acc = vec![0.0f64; hist.len()];
    let mut counts = vec![0u32; cells_x * cells_y];
    let mut block = vec![0.0f64; bc * bc * bins];
    for by in 0..=cells_y - bc {
        for bx in 0..=cells_x - bc {
            for j in 0..bc {
                for i in 0..bc {
                    let src = ((by + j) * cells_x + bx + i) * bins;
                    let dst = (j * bc + i) * bins;
                    block[dst..dst + bins].copy_from_slice(&hist[src..src + bins]);
                }
            }
            l2_hys(&mut block, eps2);
            for j in 0..bc {
                for i in 0..bc {
                    let cell = (by + j) * cells_x + bx + i;
                    counts[cell] += 1;
                    let src = (j * bc + i) * bins;
                    for b in 0..bins {
                        acc[cell * bins + b] += block[src + b];
                    }
                }
            }
        }
    }
    let data = acc
        .chunks_exact(bins)
        .zip(&counts)
        .flat_map(|(cell, &n)| cell.iter().map(move |v| (v / n as f64) as f32))
        .collect();
    Ok(HogField {
        cells_x,
        cells_y,
        bins,
        data,
    })
}

fn l2_hys(v: &mut [f64], eps2: f64) {
    let norm = (v.iter().map(|x| x * x).sum::<f64>() + eps2).sqrt();
    for x in v.iter_mut() {
        *x = (*x / norm).min(0.2);
    }
    let norm = (v.iter().map(|x| x * x).sum::<f64>() + eps2).sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_all_zero() {
        let img = Image::filled(32, 32, [0.4, 0.4, 0.4]);
        let f = hog(&img, &HogConfig::default()).unwrap();
        assert_eq!(f.data.len(), 4 * 4 * 9);
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indivisible_size_rejected() {
        let img = Image::new(30, 32);
        assert!(matches!(hog(&img, &HogConfig::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn bins_cover_range() {
        assert_eq!(orientation_bin(1.0, 0.0, 9, false), 0);
        assert_eq!(orientation_bin(-1.0, 0.0, 9, false), 0);
        assert_eq!(orientation_bin(0.0, 1.0, 9, false), 4);
        assert_eq!(orientation_bin(0.0, -1.0, 9, true), 6);
        assert_eq!(orientation_bin(1.0, -1e-12, 9, false), 8);
    }

    #[test]
    fn entries_in_unit_interval() {
        let mut img = Image::new(32, 32);
        for y in 0..32 {
            for x in 0..32 {
                let v = ((x * 7 + y * 13) % 11) as f32 / 10.0;
                img.set(x, y, [v, 1.0 - v, 0.5]);
            }
        }
        for bc in 1..=3 {
            let cfg = HogConfig {
                block_cells: bc,
                ..Default::default()
            };
            let f = hog(&img, &cfg).unwrap();
            assert!(f.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
