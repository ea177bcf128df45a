use crate::grid::LabelMask;

/// Radius of the disk used to thicken object boundaries.
pub const CONTOUR_DILATION_RADIUS: usize = 3;

/// Boundary labels for a binary object mask: pixels where the Sobel gradient of
/// the `{0, 1}` mask is non-zero (replicate padding), dilated with a Euclidean
/// disk of radius 3. Any non-zero, labeled pixel counts as foreground.
pub fn extract_contours(mask: &LabelMask) -> LabelMask {
    let edges = sobel_edges(mask);
    dilate_disk(&edges, mask.height(), mask.width(), CONTOUR_DILATION_RADIUS)
}

fn foreground(mask: &LabelMask) -> Vec<f64> {
    mask.labels()
        .iter()
        .map(|&l| if l != 0 && l != crate::grid::UNLABELED { 1.0 } else { 0.0 })
        .collect()
}

/// Pixels with non-zero Sobel gradient magnitude.
pub fn sobel_edges(mask: &LabelMask) -> Vec<bool> {
    let (h, w) = (mask.height(), mask.width());
    let f = foreground(mask);
    let at = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        f[r * w + c]
    };
    let mut out = vec![false; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
            let gy = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
            out[r as usize * w + c as usize] = gx * gx + gy * gy > 0.0;
        }
    }
    out
}

fn dilate_disk(src: &[bool], h: usize, w: usize, radius: usize) -> LabelMask {
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| dy * dy + dx * dx <= r * r)
        .collect();
    let mut out = LabelMask::filled(h, w, 0);
    for y in 0..h {
        for x in 0..w {
            if !src[y * w + x] {
                continue;
            }
            for (dy, dx) in &offsets {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                    out.set(ny as usize, nx as usize, 1);
                }
            }
        }
    }
    out
}
