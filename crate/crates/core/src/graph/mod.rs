//! Superpixel graphs: node features, KNN adjacency and the JSON-lines store.

mod knn;
mod store;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{extract_contours, slic_segment, ImageRecord, Modality, SegmentationResult, SlicParams};
use crate::numcore::Matrix;

pub use knn::{knn_graph, KnnEdges};
pub use store::{read_graph_store, write_graph_store};

/// Width of the initial node feature vector.
pub const NODE_FEATURES: usize = 5;

/// A superpixel graph for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalGraph {
    pub graph_id: String,
    pub subject_id: String,
    pub modality: Modality,
    /// `n × 5`: `[col/W, row/H, mean, std, area/(W·H)]` per node.
    pub node_features: Matrix,
    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
    /// Centroid distance over the image diagonal, one per edge.
    pub edge_dist: Vec<f64>,
}

impl ModalGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_features.rows()
    }

    /// Relabels nodes so that new node `i` is old node `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> ModalGraph {
        let n = self.n_nodes();
        assert_eq!(order.len(), n);
        let mut new_of_old = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            new_of_old[old] = new;
        }
        let mut pairs: Vec<((usize, usize), f64)> = self
            .edges
            .iter()
            .zip(&self.edge_dist)
            .map(|(&(a, b), &d)| {
                let (x, y) = (new_of_old[a], new_of_old[b]);
                ((x.min(y), x.max(y)), d)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        ModalGraph {
            graph_id: self.graph_id.clone(),
            subject_id: self.subject_id.clone(),
            modality: self.modality,
            node_features: self.node_features.select_rows(order),
            edges: pairs.iter().map(|p| p.0).collect(),
            edge_dist: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// Node degrees from the undirected edge list.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes()];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if self.edges.len() != self.edge_dist.len() {
            return Err(Error::Argument("edge_dist length differs from edges".into()));
        }
        for w in self.edges.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Argument("edges not strictly sorted".into()));
            }
        }
        for &(a, b) in &self.edges {
            if a >= b || b >= n {
                return Err(Error::Argument(format!("bad edge ({a}, {b}) for {n} nodes")));
            }
        }
        Ok(())
    }
}

/// Parameters for turning an image into a graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub slic: SlicParams,
    pub k: usize,
    /// Sobel blend applied before segmentation; 0 disables it.
    pub contour_blend: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            slic: SlicParams::default(),
            k: 6,
            contour_blend: 0.0,
        }
    }
}

/// Per-node `[col/W, row/H, mean, std, area/(W·H)]`.
pub fn build_node_features(seg: &SegmentationResult, img: &ImageRecord) -> Result<Matrix> {
    if seg.width != img.width || seg.height != img.height {
        return Err(Error::Argument(format!(
            "segmentation is {}x{} but image is {}x{}",
            seg.width, seg.height, img.width, img.height
        )));
    }
    let (w, h) = (img.width as f64, img.height as f64);
    let total = w * h;
    let mut m = Matrix::zeros(seg.n_segments, NODE_FEATURES);
    for (i, s) in seg.segments.iter().enumerate() {
        let row = m.row_mut(i);
        row[0] = s.centroid.1 / w;
        row[1] = s.centroid.0 / h;
        row[2] = s.mean_intensity;
        row[3] = s.std_intensity;
        row[4] = s.area as f64 / total;
    }
    Ok(m)
}

/// Contours (optional) → SLIC → node features → KNN edges.
pub fn graph_from_image(img: &ImageRecord, params: &GraphParams) -> Result<ModalGraph> {
    let prepared;
    let source = if params.contour_blend > 0.0 {
        prepared = extract_contours(img, params.contour_blend);
        &prepared
    } else {
        img
    };
    let seg = slic_segment(source, &params.slic)?;
    let node_features = build_node_features(&seg, source)?;
    let centroids: Vec<(f64, f64)> = seg.segments.iter().map(|s| (s.centroid.1, s.centroid.0)).collect();
    let diag = ((img.width * img.width + img.height * img.height) as f64).sqrt();
    let knn = knn_graph(&centroids, params.k, diag);
    Ok(ModalGraph {
        graph_id: String::new(),
        subject_id: img.subject_id.clone(),
        modality: img.modality,
        node_features,
        edges: knn.edges,
        edge_dist: knn.edge_dist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_segment_features() {
        let img = ImageRecord::constant(10, 10, 0.3);
        let seg = slic_segment(
            &img,
            &SlicParams {
                n_segments: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let f = build_node_features(&seg, &img).unwrap();
        assert_eq!(f.row(0), &[0.45, 0.45, 0.3, 0.0, 1.0]);
    }

    #[test]
    fn half_tone_ideal_partition() {
        let img = ImageRecord::from_fn(20, 20, |_, c| if c < 10 { 0.0 } else { 1.0 });
        let labels: Vec<usize> = (0..400).map(|i| usize::from(i % 20 >= 10)).collect();
        let stats = (0..2)
            .map(|l| crate::imaging::SegmentStats {
                centroid: (9.5, if l == 0 { 4.5 } else { 14.5 }),
                mean_intensity: l as f64,
                std_intensity: 0.0,
                area: 200,
            })
            .collect();
        let seg = SegmentationResult {
            width: 20,
            height: 20,
            n_segments: 2,
            labels,
            segments: stats,
        };
        let f = build_node_features(&seg, &img).unwrap();
        assert_eq!((f.get(0, 2), f.get(1, 2)), (0.0, 1.0));
        assert_eq!((f.get(0, 4), f.get(1, 4)), (0.5, 0.5));
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let img = ImageRecord::constant(10, 10, 0.3);
        let seg = slic_segment(&img, &SlicParams { n_segments: 4, ..Default::default() }).unwrap();
        let other = ImageRecord::constant(10, 9, 0.3);
        assert!(matches!(build_node_features(&seg, &other), Err(Error::Argument(_))));
    }

    #[test]
    fn single_node_graph() {
        let img = ImageRecord::constant(10, 10, 0.5);
        let g = graph_from_image(
            &img,
            &GraphParams {
                slic: SlicParams { n_segments: 1, ..Default::default() },
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(g.n_nodes(), 1);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn permutation_keeps_structure() {
        let img = ImageRecord::from_fn(30, 30, |r, c| ((r / 10 + c / 10) % 2) as f64);
        let g = graph_from_image(
            &img,
            &GraphParams {
                slic: SlicParams { n_segments: 9, ..Default::default() },
                k: 2,
                contour_blend: 0.0,
            },
        )
        .unwrap();
        let n = g.n_nodes();
        let order: Vec<usize> = (0..n).rev().collect();
        let p = g.permuted(&order);
        p.validate().unwrap();
        assert_eq!(p.edges.len(), g.edges.len());
        let mut d1 = g.degrees();
        let mut d2 = p.degrees();
        d1.sort();
        d2.sort();
        assert_eq!(d1, d2);
    }
}
