use crate::error::{Error, Result};
use crate::grid::{Image, LabelMask};

/// Source coordinate of target index `i` under half-pixel-centre alignment.
fn source_coord(i: usize, src: usize, dst: usize) -> f64 {
    let s = (i as f64 + 0.5) * src as f64 / dst as f64 - 0.5;
    s.clamp(0.0, (src - 1) as f64)
}

/// Bilinear resampling to `height x width` with half-pixel centres and
/// edge clamping. Intended for downsampling; upsampling also works.
pub fn downsample_bilinear(image: &Image, height: usize, width: usize) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("target size must be positive"));
    }
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut out = Vec::with_capacity(height * width * c);
    for y in 0..height {
        let sy = source_coord(y, h, height);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for x in 0..width {
            let sx = source_coord(x, w, width);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let top = image.get(y0, x0, ch) * (1.0 - fx) + image.get(y0, x1, ch) * fx;
                let bottom = image.get(y1, x0, ch) * (1.0 - fx) + image.get(y1, x1, ch) * fx;
                out.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
            }
        }
    }
    Image::new(height, width, c, out)
}

/// Nearest-neighbour resampling of a label mask with the same pixel alignment
/// as [`downsample_bilinear`].
pub fn downsample_labels(mask: &LabelMask, height: usize, width: usize) -> Result<LabelMask> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("target size must be positive"));
    }
    let (h, w) = (mask.height(), mask.width());
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let sy = source_coord(y, h, height).round() as usize;
        for x in 0..width {
            let sx = source_coord(x, w, width).round() as usize;
            out.push(mask.get(sy, sx));
        }
    }
    LabelMask::new(height, width, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard_to_single_pixel() {
        let img = Image::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = downsample_bilinear(&img, 1, 1).unwrap();
        assert_eq!(out.values(), &[0.5]);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Image::filled(7, 9, 3, 0.25).unwrap();
        let out = downsample_bilinear(&img, 3, 4).unwrap();
        assert!(out.values().iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn halving_averages_two_by_two_blocks() {
        // half-pixel centres put each target sample exactly between four sources
        let vals: Vec<f64> = (0..16).map(|i| i as f64 / 15.0).collect();
        let img = Image::new(4, 4, 1, vals.clone()).unwrap();
        let out = downsample_bilinear(&img, 2, 2).unwrap();
        for (y, x) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let block = [
                vals[(2 * y) * 4 + 2 * x],
                vals[(2 * y) * 4 + 2 * x + 1],
                vals[(2 * y + 1) * 4 + 2 * x],
                vals[(2 * y + 1) * 4 + 2 * x + 1],
            ];
            let mean = block.iter().sum::<f64>() / 4.0;
            assert!((out.get(y, x, 0) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_size_is_identity() {
        let vals: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let img = Image::new(3, 4, 1, vals).unwrap();
        let out = downsample_bilinear(&img, 3, 4).unwrap();
        for (a, b) in out.values().iter().zip(img.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn labels_keep_class_set() {
        let mask = LabelMask::new(2, 4, vec![0, 0, 1, 1, 0, 0, 1, 1]).unwrap();
        let out = downsample_labels(&mask, 1, 2).unwrap();
        assert_eq!(out.labels(), &[0, 1]);
    }
}
