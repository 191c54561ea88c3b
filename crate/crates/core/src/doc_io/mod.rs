//! Page rasters, ink masks, label maps and their on-disk formats.

mod binarize;
pub mod page_xml;
mod raster;
pub mod synth;

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::grid;

pub use binarize::{binarize, otsu_split, otsu_threshold, BinarizeStatus};
pub use page_xml::{parse_page_xml, parse_page_xml_str, write_page_xml, LineGroundTruth};
pub use raster::{rasterize_ground_truth, Rasterized};
pub use synth::{generate_synthetic_page, SynthConfig, SynthPage};

/// Rec.601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Background intensity (white paper).
pub const BACKGROUND: f32 = 1.0;

/// Grayscale page raster, intensities in [0,1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentImage {
    pub id: String,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl DocumentImage {
    pub fn new(id: impl Into<String>, height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("document image must have positive dimensions"));
        }
        if pixels.len() != height * width {
            return Err(Error::invalid(format!(
                "pixel buffer has {} values, expected {}x{}",
                pixels.len(),
                height,
                width
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {v} outside [0,1]")));
        }
        Ok(DocumentImage {
            id: id.into(),
            height,
            width,
            pixels,
        })
    }

    /// Uniform page of the given intensity.
    pub fn filled(id: impl Into<String>, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(id, height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn rotate90_ccw(&self) -> DocumentImage {
        let (pixels, height, width) = grid::rot90_ccw(&self.pixels, self.height, self.width);
        DocumentImage {
            id: self.id.clone(),
            height,
            width,
            pixels,
        }
    }

    pub fn rotate90_cw(&self) -> DocumentImage {
        let (pixels, height, width) = grid::rot90_cw(&self.pixels, self.height, self.width);
        DocumentImage {
            id: self.id.clone(),
            height,
            width,
            pixels,
        }
    }

    /// Copy a `side`x`side` window with top-left corner at (`row`, `col`).
    /// Positions outside the page read as background.
    pub fn crop_square(&self, row: isize, col: isize, side: usize) -> Vec<f32> {
        let mut out = vec![BACKGROUND; side * side];
        for r in 0..side {
            let sr = row + r as isize;
            if sr < 0 || sr >= self.height as isize {
                continue;
            }
            let sr = sr as usize;
            let c_lo = (-col).max(0) as usize;
            let c_hi = ((self.width as isize - col).min(side as isize)).max(0) as usize;
            if c_lo >= c_hi {
                continue;
            }
            let src = sr * self.width + (col + c_lo as isize) as usize;
            out[r * side + c_lo..r * side + c_hi].copy_from_slice(&self.pixels[src..src + (c_hi - c_lo)]);
        }
        out
    }
}

/// Foreground (ink) mask, `true` = ink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    height: usize,
    width: usize,
    mask: Vec<bool>,
}

impl BinaryImage {
    pub fn new(height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != height * width {
            return Err(Error::invalid("mask length does not match dimensions"));
        }
        Ok(BinaryImage { height, width, mask })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        BinaryImage {
            height,
            width,
            mask: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.mask[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Integer label raster, 0 = background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::invalid("label buffer length does not match dimensions"));
        }
        Ok(LabelMap { height, width, labels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        LabelMap {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: u32) {
        self.labels[row * self.width + col] = v;
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Sorted distinct nonzero labels.
    pub fn distinct(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn rotate90_ccw(&self) -> LabelMap {
        let (labels, height, width) = grid::rot90_ccw(&self.labels, self.height, self.width);
        LabelMap { height, width, labels }
    }

    pub fn rotate90_cw(&self) -> LabelMap {
        let (labels, height, width) = grid::rot90_cw(&self.labels, self.height, self.width);
        LabelMap { height, width, labels }
    }
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Decode a PNG/JPEG/TIFF page into grayscale intensities in [0,1].
pub fn load_document(path: impl AsRef<Path>) -> Result<DocumentImage> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::EmptyImage(path.to_path_buf()));
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(from_dynamic(id, &img))
}

pub fn from_dynamic(id: String, img: &DynamicImage) -> DocumentImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f32> = if img.color().has_color() {
        img.to_rgb16()
            .pixels()
            .map(|p| {
                let l = LUMA_WEIGHTS[0] * p[0] as f32 + LUMA_WEIGHTS[1] * p[1] as f32 + LUMA_WEIGHTS[2] * p[2] as f32;
                (l / 65535.0).clamp(0.0, 1.0)
            })
            .collect()
    } else {
        img.to_luma16().pixels().map(|p| p[0] as f32 / 65535.0).collect()
    };
    DocumentImage {
        id,
        height: h,
        width: w,
        pixels,
    }
}

pub fn save_document_png(doc: &DocumentImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: Vec<u8> = doc.pixels.iter().map(|&v| (v * 255.0).round() as u8).collect();
    let img = GrayImage::from_raw(doc.width as u32, doc.height as u32, buf).expect("buffer size");
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn save_mask_png(mask: &BinaryImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: Vec<u8> = mask.mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(mask.width as u32, mask.height as u32, buf).expect("buffer size");
    img.save(path).map_err(|e| image_err(path, e))
}

/// Write a label map as a 16-bit grayscale PNG.
pub fn save_label_png(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(labels.labels.len());
    for &l in &labels.labels {
        let v = u16::try_from(l).map_err(|_| Error::invalid(format!("label {l} exceeds 16-bit range")))?;
        buf.push(v);
    }
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(labels.width as u32, labels.height as u32, buf).expect("buffer size");
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn load_label_png(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let luma = img.to_luma16();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let labels = luma.pixels().map(|p| p[0] as u32).collect();
    LabelMap::new(h, w, labels)
}
