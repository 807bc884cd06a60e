use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ImageRecord;
use crate::error::{Error, Result};

/// Intensity differences are measured on a 0–100 lightness scale so that the
/// usual compactness values (≈10) keep their customary balance against the
/// spatial term.
pub const INTENSITY_SCALE: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlicParams {
    pub n_segments: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams {
            n_segments: 300,
            compactness: 10.0,
            iterations: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    /// `(row, col)` in pixel units.
    pub centroid: (f64, f64),
    pub mean_intensity: f64,
    pub std_intensity: f64,
    pub area: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub width: usize,
    pub height: usize,
    pub n_segments: usize,
    /// Row-major label per pixel, dense in `[0, n_segments)`.
    pub labels: Vec<usize>,
    pub segments: Vec<SegmentStats>,
}

#[derive(Clone, Copy, Debug)]
struct Center {
    row: f64,
    col: f64,
    value: f64,
}

/// Grid with `nx · ny ≤ n` cells whose aspect follows the image.
fn grid_shape(n: usize, width: usize, height: usize) -> (usize, usize) {
    let ny = ((n as f64 * height as f64 / width as f64).sqrt().round() as usize)
        .clamp(1, n.min(height));
    let nx = (n / ny).clamp(1, width);
    (nx, ny)
}

fn gradient_at(img: &ImageRecord, r: usize, c: usize) -> f64 {
    let (w, h) = (img.width, img.height);
    let left = img.at(r, c.saturating_sub(1));
    let right = img.at(r, (c + 1).min(w - 1));
    let up = img.at(r.saturating_sub(1), c);
    let down = img.at((r + 1).min(h - 1), c);
    (right - left).powi(2) + (down - up).powi(2)
}

fn seed_centers(img: &ImageRecord, n: usize) -> Vec<Center> {
    let (w, h) = (img.width, img.height);
    let (nx, ny) = grid_shape(n, w, h);
    let sx = w as f64 / nx as f64;
    let sy = h as f64 / ny as f64;
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let r0 = (((j as f64 + 0.5) * sy - 0.5).round().max(0.0) as usize).min(h - 1);
            let c0 = (((i as f64 + 0.5) * sx - 0.5).round().max(0.0) as usize).min(w - 1);
            let (mut br, mut bc) = (r0, c0);
            let mut best = gradient_at(img, r0, c0);
            for r in r0.saturating_sub(1)..=(r0 + 1).min(h - 1) {
                for c in c0.saturating_sub(1)..=(c0 + 1).min(w - 1) {
                    let g = gradient_at(img, r, c);
                    if g < best {
                        best = g;
                        br = r;
                        bc = c;
                    }
                }
            }
            centers.push(Center {
                row: br as f64,
                col: bc as f64,
                value: img.at(br, bc),
            });
        }
    }
    centers
}

#[inline]
fn dist2(img_v: f64, r: usize, c: usize, ctr: &Center, spatial_w: f64) -> f64 {
    let di = (img_v - ctr.value) * INTENSITY_SCALE;
    let dr = r as f64 - ctr.row;
    let dc = c as f64 - ctr.col;
    di * di + spatial_w * (dr * dr + dc * dc)
}

/// SLIC superpixels over intensity and position, followed by a connectivity
/// pass and dense relabeling.
pub fn slic_segment(img: &ImageRecord, params: &SlicParams) -> Result<SegmentationResult> {
    let (w, h) = (img.width, img.height);
    let n = params.n_segments;
    if n == 0 || n > w * h {
        return Err(Error::Argument(format!(
            "cannot request {n} segments from {} pixels",
            w * h
        )));
    }
    let step = ((w * h) as f64 / n as f64).sqrt();
    let spatial_w = (params.compactness / step).powi(2);
    let mut centers = seed_centers(img, n);
    let mut labels = vec![usize::MAX; w * h];
    let mut dist = vec![f64::INFINITY; w * h];

    for _ in 0..params.iterations {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (k, ctr) in centers.iter().enumerate() {
            let r0 = (ctr.row - step).floor().max(0.0) as usize;
            let r1 = ((ctr.row + step).ceil() as usize).min(h - 1);
            let c0 = (ctr.col - step).floor().max(0.0) as usize;
            let c1 = ((ctr.col + step).ceil() as usize).min(w - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let idx = r * w + c;
                    let d = dist2(img.pixels[idx], r, c, ctr, spatial_w);
                    if d < dist[idx] {
                        dist[idx] = d;
                        labels[idx] = k;
                    }
                }
            }
        }
        let mut acc = vec![(0.0, 0.0, 0.0, 0usize); centers.len()];
        for r in 0..h {
            for c in 0..w {
                let idx = r * w + c;
                let l = labels[idx];
                if l == usize::MAX {
                    continue;
                }
                let a = &mut acc[l];
                a.0 += r as f64;
                a.1 += c as f64;
                a.2 += img.pixels[idx];
                a.3 += 1;
            }
        }
        for (ctr, a) in centers.iter_mut().zip(&acc) {
            if a.3 > 0 {
                let inv = 1.0 / a.3 as f64;
                *ctr = Center {
                    row: a.0 * inv,
                    col: a.1 * inv,
                    value: a.2 * inv,
                };
            }
        }
    }

    // Pixels no window reached fall back to the globally nearest center.
    for r in 0..h {
        for c in 0..w {
            let idx = r * w + c;
            if labels[idx] != usize::MAX {
                continue;
            }
            let mut best = (f64::INFINITY, 0);
            for (k, ctr) in centers.iter().enumerate() {
                let d = dist2(img.pixels[idx], r, c, ctr, spatial_w);
                if d < best.0 {
                    best = (d, k);
                }
            }
            labels[idx] = best.1;
        }
    }

    enforce_connectivity(&mut labels, w, h);
    let n_segments = relabel_dense(&mut labels);
    let segments = segment_stats(img, &labels, n_segments);
    Ok(SegmentationResult {
        width: w,
        height: h,
        n_segments,
        labels,
        segments,
    })
}

struct Components {
    id: Vec<usize>,
    label: Vec<usize>,
    pixels: Vec<Vec<usize>>,
}

fn neighbors4(idx: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (idx / w, idx % w);
    let up = (r > 0).then(|| idx - w);
    let down = (r + 1 < h).then(|| idx + w);
    let left = (c > 0).then(|| idx - 1);
    let right = (c + 1 < w).then(|| idx + 1);
    [up, down, left, right].into_iter().flatten()
}

/// 4-connected components of equal labels, numbered in scan order.
fn components(labels: &[usize], w: usize, h: usize) -> Components {
    let mut id = vec![usize::MAX; labels.len()];
    let mut label = Vec::new();
    let mut pixels: Vec<Vec<usize>> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..labels.len() {
        if id[start] != usize::MAX {
            continue;
        }
        let cid = label.len();
        let l = labels[start];
        label.push(l);
        let mut members = Vec::new();
        id[start] = cid;
        stack.push(start);
        while let Some(p) = stack.pop() {
            members.push(p);
            for q in neighbors4(p, w, h) {
                if id[q] == usize::MAX && labels[q] == l {
                    id[q] = cid;
                    stack.push(q);
                }
            }
        }
        members.sort_unstable();
        pixels.push(members);
    }
    Components { id, label, pixels }
}

/// Keeps the largest component of every label and merges each remaining
/// component into the neighboring label sharing the longest border (ties go
/// to the lower label).
fn enforce_connectivity(labels: &mut [usize], w: usize, h: usize) {
    loop {
        let comps = components(labels, w, h);
        let mut keep: BTreeMap<usize, usize> = BTreeMap::new();
        for (cid, &l) in comps.label.iter().enumerate() {
            let size = comps.pixels[cid].len();
            match keep.get(&l) {
                Some(&best) if comps.pixels[best].len() >= size => {}
                _ => {
                    keep.insert(l, cid);
                }
            }
        }
        let orphans: Vec<usize> = (0..comps.label.len())
            .filter(|cid| keep[&comps.label[*cid]] != *cid)
            .collect();
        if orphans.is_empty() {
            break;
        }
        debug_assert!(comps.id.iter().all(|&c| c != usize::MAX));
        for cid in orphans {
            let own = labels[comps.pixels[cid][0]];
            let mut border: BTreeMap<usize, usize> = BTreeMap::new();
            for &p in &comps.pixels[cid] {
                for q in neighbors4(p, w, h) {
                    let lq = labels[q];
                    if lq != own {
                        *border.entry(lq).or_default() += 1;
                    }
                }
            }
            // BTreeMap iterates labels ascending, so strict `>` keeps the lower label on ties.
            let mut target = None;
            let mut best = 0;
            for (&l, &count) in &border {
                if count > best {
                    best = count;
                    target = Some(l);
                }
            }
            if let Some(t) = target {
                for &p in &comps.pixels[cid] {
                    labels[p] = t;
                }
            }
        }
    }
}

/// Maps used labels onto `0..k` in ascending order of the old label.
fn relabel_dense(labels: &mut [usize]) -> usize {
    let mut used: Vec<usize> = labels.to_vec();
    used.sort_unstable();
    used.dedup();
    let map: BTreeMap<usize, usize> = used.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    for l in labels.iter_mut() {
        *l = map[l];
    }
    used.len()
}

/// Moments are accumulated relative to each segment's first pixel so a flat
/// segment yields its exact value and zero deviation.
fn segment_stats(img: &ImageRecord, labels: &[usize], n: usize) -> Vec<SegmentStats> {
    let w = img.width;
    let mut origin = vec![f64::NAN; n];
    let mut sums = vec![(0.0, 0.0, 0.0, 0.0, 0usize); n];
    for (idx, &l) in labels.iter().enumerate() {
        if sums[l].4 == 0 {
            origin[l] = img.pixels[idx];
        }
        let d = img.pixels[idx] - origin[l];
        let s = &mut sums[l];
        s.0 += (idx / w) as f64;
        s.1 += (idx % w) as f64;
        s.2 += d;
        s.3 += d * d;
        s.4 += 1;
    }
    sums.iter()
        .zip(origin)
        .map(|(s, o)| {
            let a = s.4 as f64;
            let mean_d = s.2 / a;
            SegmentStats {
                centroid: (s.0 / a, s.1 / a),
                mean_intensity: (o + mean_d).clamp(0.0, 1.0),
                std_intensity: (s.3 / a - mean_d * mean_d).max(0.0).sqrt(),
                area: s.4,
            }
        })
        .collect()
}

impl SegmentationResult {
    /// Checks partition, density and 4-connectivity; returns a description of
    /// the first violation found.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let (w, h) = (self.width, self.height);
        if self.labels.len() != w * h {
            return Err("label count differs from pixel count".into());
        }
        let mut seen = vec![false; self.n_segments];
        for &l in &self.labels {
            if l >= self.n_segments {
                return Err(format!("label {l} out of range"));
            }
            seen[l] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err("gap in label range".into());
        }
        let comps = components(&self.labels, w, h);
        if comps.label.len() != self.n_segments {
            return Err(format!(
                "{} components for {} segments",
                comps.label.len(),
                self.n_segments
            ));
        }
        let total: usize = self.segments.iter().map(|s| s.area).sum();
        if total != w * h {
            return Err("areas do not sum to the pixel count".into());
        }
        for s in &self.segments {
            let (r, c) = s.centroid;
            if !(0.0..=(h - 1) as f64).contains(&r) || !(0.0..=(w - 1) as f64).contains(&c) {
                return Err(format!("centroid {:?} outside the image", s.centroid));
            }
        }
        Ok(())
    }
}
