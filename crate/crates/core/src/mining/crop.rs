use crate::image::Image;
use crate::mining::Rect;

/// Bilinear crop of `region` resampled to `out_px × out_px`.
///
/// Output pixel centres are spread uniformly over the region, so a full-frame
/// region is a plain resize.
pub fn crop_part(image: &Image, region: &Rect, out_px: usize) -> Image {
    let (w, h) = (image.width() as f64, image.height() as f64);
    let (x0, y0) = (region.x0 * w, region.y0 * h);
    let sx = region.width() * w / out_px as f64;
    let sy = region.height() * h / out_px as f64;
    let mut out = Image::new(out_px, out_px);
    for v in 0..out_px {
        let y = y0 + (v as f64 + 0.5) * sy - 0.5;
        for u in 0..out_px {
            let x = x0 + (u as f64 + 0.5) * sx - 0.5;
            out.set(u, v, image.sample_bilinear(x, y));
        }
    }
    out
}
