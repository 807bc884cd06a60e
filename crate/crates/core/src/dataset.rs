//! Dataset manifests and the synthetic paired-modality generator.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{sobel_magnitude, ImageRecord, Modality};
use crate::numcore::Rng;
use crate::training::{Split, SplitAssignment};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub subject_id: String,
    pub modality: Modality,
    pub view: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl ManifestRow {
    /// `subject:modality:view`.
    pub fn graph_id(&self) -> String {
        format!("{}:{}:{}", self.subject_id, self.modality, self.view)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    /// Reads `subject_id,modality,view,path[,split]`; relative paths are
    /// resolved against the manifest's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
        let expected = ["subject_id", "modality", "view", "path"];
        let ok = headers.len() >= 4
            && headers.iter().take(4).eq(expected.iter().copied())
            && (headers.len() == 4 || (headers.len() == 5 && &headers[4] == "split"));
        if !ok {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("header must be subject_id,modality,view,path[,split], got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<ManifestRow>().enumerate() {
            let mut row = rec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: e.to_string(),
            })?;
            if row.path.is_relative() {
                row.path = base.join(&row.path);
            }
            rows.push(row);
        }
        let m = DatasetManifest { rows };
        m.validate()?;
        Ok(m)
    }

    /// Writes paths relative to `path`'s directory when possible.
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let with_split = self.rows.iter().any(|r| r.split.is_some());
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec!["subject_id", "modality", "view", "path"];
        if with_split {
            header.push("split");
        }
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for r in &self.rows {
            let p = r.path.strip_prefix(base).unwrap_or(&r.path);
            let mut rec = vec![
                r.subject_id.clone(),
                r.modality.to_string(),
                r.view.clone(),
                p.to_string_lossy().into_owned(),
            ];
            if with_split {
                rec.push(r.split.map(|s| s.to_string()).unwrap_or_default());
            }
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Every subject needs a face row and a non-face row.
    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeMap<&str, (bool, bool)> = BTreeMap::new();
        for r in &self.rows {
            let e = seen.entry(&r.subject_id).or_default();
            if r.modality == Modality::Face {
                e.0 = true;
            } else {
                e.1 = true;
            }
        }
        for (s, (face, other)) in seen {
            if !face || !other {
                return Err(Error::Argument(format!(
                    "subject `{s}` needs at least one face and one non-face image"
                )));
            }
        }
        Ok(())
    }

    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.rows.iter().map(|r| r.subject_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    /// Split column, if every row carries one; a subject must not span splits.
    pub fn declared_splits(&self) -> Result<Option<SplitAssignment>> {
        if self.rows.iter().any(|r| r.split.is_none()) {
            return Ok(None);
        }
        let mut out = SplitAssignment::new();
        for r in &self.rows {
            let s = r.split.expect("checked above");
            if let Some(prev) = out.insert(r.subject_id.clone(), s) {
                if prev != s {
                    return Err(Error::Argument(format!(
                        "subject `{}` appears in both {prev} and {s}",
                        r.subject_id
                    )));
                }
            }
        }
        Ok(Some(out))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}

/// Writes `subject_id,split`.
pub fn write_splits(split: &SplitAssignment, path: &Path) -> Result<()> {
    let mut s = String::from("subject_id,split\n");
    for (k, v) in split {
        s.push_str(&format!("{k},{v}\n"));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_splits(path: &Path) -> Result<SplitAssignment> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = SplitAssignment::new();
    for (i, rec) in rdr.deserialize::<(String, Split)>().enumerate() {
        let (s, split) = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg: e.to_string(),
        })?;
        out.insert(s, split);
    }
    Ok(out)
}

/// Standard deviation of the noise added to the second modality.
pub const SYNTH_NOISE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Blob {
    row: f64,
    col: f64,
    sigma: f64,
    amp: f64,
}

fn blob_field(blobs: &[Blob], size: usize) -> ImageRecord {
    let img = ImageRecord::from_fn(size, size, |r, c| {
        blobs
            .iter()
            .map(|b| {
                let d2 = (r as f64 - b.row).powi(2) + (c as f64 - b.col).powi(2);
                b.amp * (-d2 / (2.0 * b.sigma * b.sigma)).exp()
            })
            .sum()
    });
    let max = img.pixels.iter().copied().fold(0.0, f64::max);
    let mut out = img;
    if max > 0.0 {
        out.pixels.iter_mut().for_each(|p| *p /= max);
    }
    out
}

/// A subject's face: a normalized sum of 4–8 Gaussian blobs.
pub fn synth_face(size: usize, rng: &mut Rng) -> ImageRecord {
    let s = size as f64;
    let n = rng.int_inclusive(4, 8);
    let blobs: Vec<Blob> = (0..n)
        .map(|_| Blob {
            row: rng.uniform(0.15, 0.85) * s,
            col: rng.uniform(0.15, 0.85) * s,
            sigma: rng.uniform(0.06, 0.18) * s,
            amp: rng.uniform(0.4, 1.0),
        })
        .collect();
    blob_field(&blobs, size)
}

/// The paired modality: inverted, max-normalized gradient magnitude of the
/// face plus Gaussian noise, clamped to `[0, 1]`.
pub fn synth_pair(face: &ImageRecord, rng: &mut Rng) -> ImageRecord {
    let edges = sobel_magnitude(face);
    let max = edges.iter().copied().fold(0.0, f64::max);
    let pixels = edges
        .iter()
        .map(|&e| {
            let e = if max > 0.0 { e / max } else { 0.0 };
            (1.0 - e + SYNTH_NOISE * rng.normal()).clamp(0.0, 1.0)
        })
        .collect();
    ImageRecord {
        pixels,
        ..face.clone()
    }
}

/// Writes `n_subjects` face/skull PNG pairs and `manifest.csv` into `out_dir`.
pub fn synth_dataset(out_dir: &Path, n_subjects: usize, seed: u64, size: usize) -> Result<DatasetManifest> {
    if n_subjects < 3 {
        return Err(Error::Argument(format!(
            "need at least 3 subjects, got {n_subjects}"
        )));
    }
    if size < 8 {
        return Err(Error::Argument(format!("image size {size} is too small")));
    }
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let width = n_subjects.to_string().len().max(3);
    let mut rows = Vec::with_capacity(2 * n_subjects);
    for i in 0..n_subjects {
        let sid = format!("subj{i:0width$}");
        let mut rng = Rng::derive(seed, i as u64);
        let face = synth_face(size, &mut rng).with_labels(Modality::Face, &sid);
        let skull = synth_pair(&face, &mut rng).with_labels(Modality::Skull, &sid);
        for img in [&face, &skull] {
            let path = img_dir.join(format!("{sid}_{}.png", img.modality));
            img.save_png(&path)?;
            rows.push(ManifestRow {
                subject_id: sid.clone(),
                modality: img.modality,
                view: "0".into(),
                path,
                split: None,
            });
        }
    }
    let manifest = DatasetManifest { rows };
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn dataset_is_deterministic_and_complete() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = synth_dataset(a.path(), 5, 7, 32).unwrap();
        synth_dataset(b.path(), 5, 7, 32).unwrap();
        assert_eq!(ma.rows.len(), 10);
        assert_eq!(ma.subjects().len(), 5);
        for r in &ma.rows {
            let rel = r.path.strip_prefix(a.path()).unwrap();
            assert_eq!(fs::read(&r.path).unwrap(), fs::read(b.path().join(rel)).unwrap());
        }
        let back = DatasetManifest::read(&a.path().join("manifest.csv")).unwrap();
        assert_eq!(back, ma);
        assert!(synth_dataset(a.path(), 2, 7, 32).is_err());
    }

    #[test]
    fn own_pairs_correlate_more_than_mismatched() {
        let n = 40;
        let pairs: Vec<(ImageRecord, ImageRecord)> = (0..n)
            .map(|i| {
                let mut rng = Rng::derive(11, i);
                let f = synth_face(48, &mut rng);
                let s = synth_pair(&f, &mut rng);
                (f, s)
            })
            .collect();
        let mut own = 0.0;
        let mut other = 0.0;
        for i in 0..n as usize {
            own += correlation(&pairs[i].0.pixels, &pairs[i].1.pixels).abs();
            other += correlation(&pairs[i].0.pixels, &pairs[(i + 1) % n as usize].1.pixels).abs();
        }
        assert!(own / n as f64 > other / n as f64);
    }

    #[test]
    fn manifest_requires_both_modalities() {
        let m = DatasetManifest {
            rows: vec![ManifestRow {
                subject_id: "x".into(),
                modality: Modality::Face,
                view: "0".into(),
                path: "a.png".into(),
                split: None,
            }],
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn declared_splits_must_be_consistent() {
        let row = |s: &str, m, split| ManifestRow {
            subject_id: s.into(),
            modality: m,
            view: "0".into(),
            path: "p.png".into(),
            split: Some(split),
        };
        let ok = DatasetManifest {
            rows: vec![row("a", Modality::Face, Split::Train), row("a", Modality::Skull, Split::Train)],
        };
        assert_eq!(ok.declared_splits().unwrap().unwrap()["a"], Split::Train);
        let bad = DatasetManifest {
            rows: vec![row("a", Modality::Face, Split::Train), row("a", Modality::Skull, Split::Test)],
        };
        assert!(bad.declared_splits().is_err());
    }
}
