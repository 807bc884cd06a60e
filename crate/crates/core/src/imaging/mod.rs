//! Grayscale image records, contour blending and SLIC superpixels.

mod contour;
mod slic;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::imageops::{self, FilterType};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use contour::{extract_contours, sobel_magnitude};
pub use slic::{slic_segment, SegmentStats, SegmentationResult, SlicParams};

/// Image domain of a record or graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Face,
    Skull,
    Sketch,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Face => "face",
            Modality::Skull => "skull",
            Modality::Sketch => "sketch",
        }
    }

    pub fn is_query(self) -> bool {
        self != Modality::Face
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "face" => Ok(Modality::Face),
            "skull" => Ok(Modality::Skull),
            "sketch" => Ok(Modality::Sketch),
            other => Err(Error::Argument(format!("unknown modality `{other}`"))),
        }
    }
}

/// Grayscale raster with intensities in `[0, 1]`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub pixels: Vec<f64>,
    pub width: usize,
    pub height: usize,
    pub modality: Modality,
    pub subject_id: String,
    pub view: Option<String>,
}

impl ImageRecord {
    /// Checks the size and range invariants.
    pub fn new(
        pixels: Vec<f64>,
        width: usize,
        height: usize,
        modality: Modality,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        if width * height != pixels.len() || width == 0 || height == 0 {
            return Err(Error::Argument(format!(
                "{} pixels do not fill a {width}x{height} grid",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Argument(format!("intensity {bad} outside [0,1]")));
        }
        Ok(ImageRecord {
            pixels,
            width,
            height,
            modality,
            subject_id: subject_id.into(),
            view: None,
        })
    }

    /// Constant-intensity image; handy for tests and fixtures.
    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        ImageRecord {
            pixels: vec![value; width * height],
            width,
            height,
            modality: Modality::Face,
            subject_id: String::new(),
            view: None,
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        ImageRecord {
            pixels,
            width,
            height,
            modality: Modality::Face,
            subject_id: String::new(),
            view: None,
        }
    }

    pub fn with_labels(mut self, modality: Modality, subject_id: impl Into<String>) -> Self {
        self.modality = modality;
        self.subject_id = subject_id.into();
        self
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Quantizes to an 8-bit grayscale buffer.
    pub fn to_luma8(&self) -> image::GrayImage {
        let raw = self
            .pixels
            .iter()
            .map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_luma8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Decode {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })
    }
}

/// Decodes a PNG/JPEG, converts to luma, bilinearly resizes to
/// `target_size = (width, height)` and scales to `[0, 1]`.
pub fn load_image(path: &Path, target_size: (usize, usize)) -> Result<ImageRecord> {
    let (tw, th) = target_size;
    if tw == 0 || th == 0 {
        return Err(Error::Argument(format!(
            "target size {tw}x{th} has a zero dimension"
        )));
    }
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let gray = img.to_luma32f();
    let resized = if gray.width() as usize == tw && gray.height() as usize == th {
        gray
    } else {
        imageops::resize(&gray, tw as u32, th as u32, FilterType::Triangle)
    };
    let pixels = resized
        .pixels()
        .map(|p| (p.0[0] as f64).clamp(0.0, 1.0))
        .collect();
    Ok(ImageRecord {
        pixels,
        width: tw,
        height: th,
        modality: Modality::Face,
        subject_id: String::new(),
        view: None,
    })
}
