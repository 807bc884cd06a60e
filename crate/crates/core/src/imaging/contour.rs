use super::ImageRecord;

/// Mirror index into `[0, n)` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i.clamp(0, n - 1) as usize
}

/// 3×3 Sobel gradient magnitude with reflect padding, unnormalized.
pub fn sobel_magnitude(img: &ImageRecord) -> Vec<f64> {
    let (w, h) = (img.width, img.height);
    let px = |r: isize, c: isize| img.at(reflect(r, h), reflect(c, w));
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = (px(r - 1, c + 1) + 2.0 * px(r, c + 1) + px(r + 1, c + 1))
                - (px(r - 1, c - 1) + 2.0 * px(r, c - 1) + px(r + 1, c - 1));
            let gy = (px(r + 1, c - 1) + 2.0 * px(r + 1, c) + px(r + 1, c + 1))
                - (px(r - 1, c - 1) + 2.0 * px(r - 1, c) + px(r - 1, c + 1));
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// `blend · edges/max(edges) + (1 − blend) · img`. A flat image has no edges,
/// so only the `(1 − blend)` term remains.
pub fn extract_contours(img: &ImageRecord, blend: f64) -> ImageRecord {
    let blend = blend.clamp(0.0, 1.0);
    let mut out = img.clone();
    if blend == 0.0 {
        return out;
    }
    let mag = sobel_magnitude(img);
    let max = mag.iter().copied().fold(0.0, f64::max);
    let inv = if max > 0.0 { 1.0 / max } else { 0.0 };
    for (o, (&m, &p)) in out.pixels.iter_mut().zip(mag.iter().zip(&img.pixels)) {
        *o = (blend * m * inv + (1.0 - blend) * p).clamp(0.0, 1.0);
    }
    out
}
