mod support;

use std::collections::{BTreeSet, VecDeque};

use proptest::prelude::*;
use support::golden;
use xmatch::dataset::{synth_face, synth_pair};
use xmatch::graph::{graph_from_image, write_graph_store, GraphParams};
use xmatch::imaging::{slic_segment, ImageRecord, Modality, SegmentationResult, SlicParams};
use xmatch::numcore::Rng;

fn params(n_segments: usize) -> SlicParams {
    SlicParams {
        n_segments,
        compactness: 10.0,
        iterations: 10,
    }
}

/// Each label forms one 4-connected region.
fn connected(seg: &SegmentationResult) -> bool {
    let (w, h) = (seg.width, seg.height);
    let mut seen = vec![false; w * h];
    let mut regions = 0;
    for start in 0..w * h {
        if seen[start] {
            continue;
        }
        regions += 1;
        let label = seg.labels[start];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p / w, p % w);
            let mut push = |q: usize| {
                if !seen[q] && seg.labels[q] == label {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if r > 0 {
                push(p - w);
            }
            if r + 1 < h {
                push(p + w);
            }
            if c > 0 {
                push(p - 1);
            }
            if c + 1 < w {
                push(p + 1);
            }
        }
    }
    regions == seg.n_segments
}

fn check_partition(seg: &SegmentationResult, img: &ImageRecord) {
    assert_eq!(seg.labels.len(), img.width * img.height);
    assert_eq!(seg.segments.iter().map(|s| s.area).sum::<usize>(), img.width * img.height);
    let used: BTreeSet<usize> = seg.labels.iter().copied().collect();
    assert_eq!(used, (0..seg.n_segments).collect());
    assert!(connected(seg));
    // Per-segment statistics agree with the labels.
    for (l, s) in seg.segments.iter().enumerate() {
        let px: Vec<usize> = (0..seg.labels.len()).filter(|&p| seg.labels[p] == l).collect();
        assert_eq!(px.len(), s.area);
        let mean = px.iter().map(|&p| img.pixels[p]).sum::<f64>() / px.len() as f64;
        assert!((mean - s.mean_intensity).abs() < 1e-12);
        let row = px.iter().map(|&p| (p / img.width) as f64).sum::<f64>() / px.len() as f64;
        let col = px.iter().map(|&p| (p % img.width) as f64).sum::<f64>() / px.len() as f64;
        assert!((row - s.centroid.0).abs() < 1e-9 && (col - s.centroid.1).abs() < 1e-9);
    }
}

#[test]
fn constant_image_grid() {
    let img = ImageRecord::constant(30, 30, 0.4);
    let seg = slic_segment(&img, &params(9)).unwrap();
    check_partition(&seg, &img);
    assert!((7..=9).contains(&seg.n_segments), "{} segments", seg.n_segments);
    for s in &seg.segments {
        assert!((50..=150).contains(&s.area), "area {}", s.area);
    }
    golden("slic_constant_30x30.json", &serde_json::to_string(&seg.labels).unwrap());
}

#[test]
fn single_segment_centroid() {
    let img = ImageRecord::constant(10, 10, 0.7);
    let seg = slic_segment(&img, &params(1)).unwrap();
    assert_eq!(seg.n_segments, 1);
    assert_eq!(seg.segments[0].area, 100);
    assert_eq!(seg.segments[0].centroid, (4.5, 4.5));
}

#[test]
fn boundary_follows_an_intensity_step() {
    let img = ImageRecord::from_fn(20, 20, |_, c| if c < 10 { 0.0 } else { 1.0 });
    let seg = slic_segment(&img, &params(2)).unwrap();
    check_partition(&seg, &img);
    assert_eq!(seg.n_segments, 2);
    // Every row switches label once, within a column of the step.
    for r in 0..20 {
        let row = &seg.labels[r * 20..(r + 1) * 20];
        let switches: Vec<usize> = (1..20).filter(|&c| row[c] != row[c - 1]).collect();
        assert_eq!(switches.len(), 1, "row {r}: {row:?}");
        assert!((9..=11).contains(&switches[0]), "row {r} switches at {}", switches[0]);
    }
}

#[test]
fn default_graph_on_a_synthetic_face() {
    let mut rng = Rng::seed(600);
    let face = synth_face(200, &mut rng).with_labels(Modality::Face, "s0");
    let g = graph_from_image(&face, &GraphParams::default()).unwrap();
    let n = g.n_nodes();
    assert!(n <= 300 && n > 6, "{n} nodes");
    let deg = g.degrees();
    assert!(deg.iter().all(|&d| d >= 6 && d < n));
    assert!(g.node_features.as_slice().iter().all(|x| (0.0..=1.0).contains(x)));
    g.validate().unwrap();

    let again = graph_from_image(&face, &GraphParams::default()).unwrap();
    assert_eq!(g, again);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.jsonl");
    write_graph_store(&[g], &path).unwrap();
    golden("graph_synthetic_face.jsonl", &std::fs::read_to_string(&path).unwrap());
}

#[test]
fn paired_modality_graph_is_valid() {
    let mut rng = Rng::seed(601);
    let face = synth_face(120, &mut rng);
    let skull = synth_pair(&face, &mut rng).with_labels(Modality::Skull, "s0");
    let p = GraphParams { k: 6, contour_blend: 0.5, ..GraphParams::default() };
    let g = graph_from_image(&skull, &p).unwrap();
    g.validate().unwrap();
    assert_eq!(g.modality, Modality::Skull);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn segmentation_partitions_any_image(
        seed in any::<u64>(),
        w in 4usize..40,
        h in 4usize..40,
        n in 1usize..30,
    ) {
        let mut rng = Rng::seed(seed);
        let px: Vec<f64> = (0..w * h).map(|_| rng.uniform(0.0, 1.0)).collect();
        let img = ImageRecord::from_fn(w, h, |r, c| px[r * w + c]);
        let n = n.min(w * h / 4).max(1);
        let seg = slic_segment(&img, &params(n)).unwrap();
        check_partition(&seg, &img);
        prop_assert!(seg.n_segments <= n);
    }

    #[test]
    fn degree_bounds_hold(seed in any::<u64>(), k in 1usize..10) {
        let mut rng = Rng::seed(seed);
        let face = synth_face(48, &mut rng);
        let p = GraphParams { slic: params(40), k, contour_blend: 0.0 };
        let g = graph_from_image(&face, &p).unwrap();
        let n = g.n_nodes();
        for d in g.degrees() {
            prop_assert!(d >= k.min(n - 1) && d <= n - 1);
        }
    }
}
