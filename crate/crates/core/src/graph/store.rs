//! One graph per line:
//! `{graph_id, subject_id, modality, n_nodes, d0, node_features, edges, edge_dist}`.
//! Floats are written with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::ModalGraph;
use crate::error::{Error, Result};
use crate::imaging::Modality;
use crate::numcore::Matrix;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphLine {
    graph_id: String,
    subject_id: String,
    modality: Modality,
    n_nodes: usize,
    d0: usize,
    node_features: Vec<Vec<f64>>,
    edges: Vec<(usize, usize)>,
    edge_dist: Vec<f64>,
}

/// `{:.16e}` keeps 17 significant digits, enough for an exact round trip.
pub(crate) fn push_f64(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String");
}

fn push_str(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("strings always serialize"));
}

fn encode_line(g: &ModalGraph) -> String {
    let mut s = String::with_capacity(64 + g.node_features.len() * 24);
    s.push_str("{\"graph_id\":");
    push_str(&mut s, &g.graph_id);
    s.push_str(",\"subject_id\":");
    push_str(&mut s, &g.subject_id);
    s.push_str(",\"modality\":");
    push_str(&mut s, g.modality.as_str());
    write!(
        s,
        ",\"n_nodes\":{},\"d0\":{},\"node_features\":[",
        g.n_nodes(),
        g.node_features.cols()
    )
    .unwrap();
    for i in 0..g.n_nodes() {
        if i > 0 {
            s.push(',');
        }
        s.push('[');
        for (j, &v) in g.node_features.row(i).iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            push_f64(&mut s, v);
        }
        s.push(']');
    }
    s.push_str("],\"edges\":[");
    for (e, &(a, b)) in g.edges.iter().enumerate() {
        if e > 0 {
            s.push(',');
        }
        write!(s, "[{},{}]", a.min(b), a.max(b)).unwrap();
    }
    s.push_str("],\"edge_dist\":[");
    for (e, &d) in g.edge_dist.iter().enumerate() {
        if e > 0 {
            s.push(',');
        }
        push_f64(&mut s, d);
    }
    s.push_str("]}");
    s
}

pub fn write_graph_store(graphs: &[ModalGraph], path: &Path) -> Result<()> {
    let mut buf = String::new();
    for g in graphs {
        buf.push_str(&encode_line(g));
        buf.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

fn decode_line(line: &str) -> std::result::Result<ModalGraph, String> {
    let raw: GraphLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if raw.node_features.len() != raw.n_nodes {
        return Err(format!(
            "n_nodes = {} but {} feature rows",
            raw.n_nodes,
            raw.node_features.len()
        ));
    }
    if raw.node_features.iter().any(|r| r.len() != raw.d0) {
        return Err(format!("feature row width differs from d0 = {}", raw.d0));
    }
    let mut data = Vec::with_capacity(raw.n_nodes * raw.d0);
    for r in &raw.node_features {
        data.extend_from_slice(r);
    }
    let node_features = Matrix::from_vec(raw.n_nodes, raw.d0, data).map_err(|e| e.to_string())?;
    let g = ModalGraph {
        graph_id: raw.graph_id,
        subject_id: raw.subject_id,
        modality: raw.modality,
        node_features,
        edges: raw.edges,
        edge_dist: raw.edge_dist,
    };
    g.validate().map_err(|e| e.to_string())?;
    Ok(g)
}

pub fn read_graph_store(path: &Path) -> Result<Vec<ModalGraph>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let g = decode_line(line).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        })?;
        out.push(g);
    }
    Ok(out)
}
