use super::{Rect, ScoreMap};
use crate::image::Image;

/// Score map as a grayscale image, `cell` pixels per grid position, scaled to the
/// map's maximum. Saturated positions are tinted red.
pub fn render_heatmap(map: &ScoreMap, cell: usize) -> Image {
    let max = map
        .scores
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let mut img = Image::new(map.positions_x * cell, map.positions_y * cell);
    for gy in 0..map.positions_y {
        for gx in 0..map.positions_x {
            let i = gy * map.positions_x + gx;
            let v = if max > 0.0 { (map.scores[i] / max) as f32 } else { 0.0 };
            let rgb = if map.saturated[i] { [v, v * 0.4, v * 0.4] } else { [v; 3] };
            for y in gy * cell..(gy + 1) * cell {
                for x in gx * cell..(gx + 1) * cell {
                    img.set(x, y, rgb);
                }
            }
        }
    }
    img
}

/// Draws 1-px rectangle outlines over a copy of `image`.
pub fn overlay_regions(image: &Image, regions: &[(Rect, [f32; 3])]) -> Image {
    let mut out = image.clone();
    let (w, h) = (image.width(), image.height());
    for (r, color) in regions {
        let x0 = ((r.x0 * w as f64) as usize).min(w - 1);
        let x1 = ((r.x1 * w as f64).ceil() as usize).clamp(1, w) - 1;
        let y0 = ((r.y0 * h as f64) as usize).min(h - 1);
        let y1 = ((r.y1 * h as f64).ceil() as usize).clamp(1, h) - 1;
        for x in x0..=x1 {
            out.set(x, y0, *color);
            out.set(x, y1, *color);
        }
        for y in y0..=y1 {
            out.set(x0, y, *color);
            out.set(x1, y, *color);
        }
    }
    out
}
