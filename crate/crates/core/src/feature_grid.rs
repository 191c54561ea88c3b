//! Sliding-window page embedding.
//!
//! A `p x p` window slides with stride `w`; its embedding is attributed to the
//! central `w x w` cell. The page is padded right/bottom to a multiple of `w`
//! and then by `(p - w) / 2` on every side so every cell has a full window.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blob_detect::{pca_vectors, Pca};
use crate::doc_io::{DocumentImage, BACKGROUND};
use crate::error::{Error, Result};
use crate::nn::{BranchOutput, ModelState, Real, EMBED_DIM};
use crate::pair_gen::Patch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Window (patch) side p.
    pub patch_side: usize,
    /// Central window side w, also the stride.
    pub window: usize,
    /// Windows embedded per batch; no effect on results.
    pub batch: usize,
    pub embedding: CellEmbedding,
}

/// How a window's last conv map becomes the cell vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellEmbedding {
    /// Mean over the central position(s) of the map: one for odd sides, 2x2 for even.
    #[default]
    Center,
    /// Global average over the whole map, the branch embedding itself.
    Mean,
}

impl CellEmbedding {
    pub fn apply<T: Real>(self, out: &BranchOutput<T>, dst: &mut [f32]) {
        match self {
            CellEmbedding::Mean => {
                for (d, v) in dst.iter_mut().zip(&out.embedding) {
                    *d = v.to_f32().unwrap();
                }
            }
            CellEmbedding::Center => {
                let m = out.side;
                let area = m * m;
                let mid: &[usize] = if m % 2 == 1 { &[m / 2] } else { &[m / 2 - 1, m / 2] };
                let n = (mid.len() * mid.len()) as f64;
                for (ch, d) in dst.iter_mut().enumerate() {
                    let mut acc = 0f64;
                    for &r in mid {
                        for &c in mid {
                            acc += out.conv_map[ch * area + r * m + c].to_f64().unwrap();
                        }
                    }
                    *d = (acc / n) as f32;
                }
            }
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            patch_side: 350,
            window: 20,
            batch: 64,
            embedding: CellEmbedding::Center,
        }
    }
}

impl GridConfig {
    pub fn new(patch_side: usize, window: usize) -> Result<Self> {
        let cfg = GridConfig {
            patch_side,
            window,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.patch_side <= self.window || (self.patch_side - self.window) % 2 != 0 {
            return Err(Error::Config(format!(
                "grid: need 1 <= w < p with p - w even (p = {}, w = {})",
                self.patch_side, self.window
            )));
        }
        Ok(())
    }

    pub fn border(&self) -> usize {
        (self.patch_side - self.window) / 2
    }
}

/// Geometry of the two padding steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadRecord {
    pub orig_height: usize,
    pub orig_width: usize,
    /// Size after right/bottom padding to a multiple of w.
    pub step1_height: usize,
    pub step1_width: usize,
    /// Padding added on all four sides in step 2.
    pub border: usize,
}

impl PadRecord {
    pub fn new(height: usize, width: usize, cfg: &GridConfig) -> Self {
        PadRecord {
            orig_height: height,
            orig_width: width,
            step1_height: height.div_ceil(cfg.window) * cfg.window,
            step1_width: width.div_ceil(cfg.window) * cfg.window,
            border: cfg.border(),
        }
    }

    pub fn padded_dims(&self) -> (usize, usize) {
        (self.step1_height + 2 * self.border, self.step1_width + 2 * self.border)
    }

    pub fn to_padded(&self, row: usize, col: usize) -> (usize, usize) {
        (row + self.border, col + self.border)
    }

    /// Original coordinate for a padded one, `None` if it lies in padding.
    pub fn to_original(&self, row: usize, col: usize) -> Option<(usize, usize)> {
        let r = row.checked_sub(self.border)?;
        let c = col.checked_sub(self.border)?;
        (r < self.orig_height && c < self.orig_width).then_some((r, c))
    }

    pub fn grid_dims(&self, window: usize) -> (usize, usize) {
        (self.step1_height / window, self.step1_width / window)
    }
}

/// Materialize both padding steps with background intensity.
pub fn pad_document(doc: &DocumentImage, cfg: &GridConfig) -> Result<(DocumentImage, PadRecord)> {
    cfg.validate()?;
    let rec = PadRecord::new(doc.height(), doc.width(), cfg);
    let (ph, pw) = rec.padded_dims();
    let mut px = vec![BACKGROUND; ph * pw];
    for r in 0..doc.height() {
        let (pr, pc) = rec.to_padded(r, 0);
        px[pr * pw + pc..pr * pw + pc + doc.width()].copy_from_slice(&doc.pixels()[r * doc.width()..(r + 1) * doc.width()]);
    }
    Ok((DocumentImage::new(doc.id.clone(), ph, pw, px)?, rec))
}

/// `rows x cols x 512` cell embeddings, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingGrid {
    pub page_id: String,
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub cfg: GridConfig,
    pub values: Vec<f32>,
}

impl EmbeddingGrid {
    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.cols + col) * self.dim;
        &self.values[i..i + self.dim]
    }

    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Binary tensor file: "LWGR" | u32 version | u32 rows, cols, dim, p, w, mode |
    /// u16 id length | id | f32 values row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.values.len() * 4);
        out.extend_from_slice(b"LWGR");
        let mode = match self.cfg.embedding {
            CellEmbedding::Center => 0u32,
            CellEmbedding::Mean => 1,
        };
        for v in [1u32, self.rows as u32, self.cols as u32, self.dim as u32, self.cfg.patch_side as u32, self.cfg.window as u32, mode] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.page_id.len() as u16).to_le_bytes());
        out.extend_from_slice(self.page_id.as_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Other(format!("grid file: {m}"));
        if buf.len() < 34 || &buf[..4] != b"LWGR" {
            return Err(bad("bad header"));
        }
        let u = |i: usize| u32::from_le_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        if u(0) != 1 {
            return Err(bad("unsupported version"));
        }
        let (rows, cols, dim, p, w) = (u(1), u(2), u(3), u(4), u(5));
        let embedding = match u(6) {
            0 => CellEmbedding::Center,
            1 => CellEmbedding::Mean,
            _ => return Err(bad("unknown embedding mode")),
        };
        let id_len = u16::from_le_bytes(buf[32..34].try_into().unwrap()) as usize;
        let start = 34 + id_len;
        if buf.len() != start + rows * cols * dim * 4 {
            return Err(bad("length does not match header"));
        }
        let page_id = String::from_utf8(buf[34..start].to_vec()).map_err(|_| bad("page id not UTF-8"))?;
        let values = buf[start..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(EmbeddingGrid {
            page_id,
            rows,
            cols,
            dim,
            cfg: GridConfig {
                patch_side: p,
                window: w,
                embedding,
                ..GridConfig::default()
            },
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

/// Window of the padded page whose central `w x w` cell is grid cell (i, j),
/// read directly from the unpadded page.
fn window_pixels(doc: &DocumentImage, cfg: &GridConfig, i: usize, j: usize) -> Vec<f32> {
    let b = cfg.border() as isize;
    doc.crop_square(
        (i * cfg.window) as isize - b,
        (j * cfg.window) as isize - b,
        cfg.patch_side,
    )
}

/// Embed every grid cell of a page with one network branch.
pub fn extract_grid<T: Real>(model: &ModelState<T>, doc: &DocumentImage, cfg: &GridConfig) -> Result<EmbeddingGrid> {
    cfg.validate()?;
    if model.input_side() != cfg.patch_side {
        return Err(Error::Config(format!(
            "model input side {} differs from grid patch side {}",
            model.input_side(),
            cfg.patch_side
        )));
    }
    let rec = PadRecord::new(doc.height(), doc.width(), cfg);
    let (rows, cols) = rec.grid_dims(cfg.window);
    let mut values = vec![0f32; rows * cols * EMBED_DIM];
    let cells: Vec<(usize, usize)> = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).collect();
    for batch in cells.chunks(cfg.batch.max(1)) {
        for &(i, j) in batch {
            let window = window_pixels(doc, cfg, i, j);
            let out = model.branch_pixels(&window);
            cfg.embedding.apply(&out, &mut values[(i * cols + j) * EMBED_DIM..(i * cols + j + 1) * EMBED_DIM]);
        }
    }
    Ok(EmbeddingGrid {
        page_id: doc.id.clone(),
        rows,
        cols,
        dim: EMBED_DIM,
        cfg: *cfg,
        values,
    })
}

/// Top-3 PCA rendering of a patch's last conv map.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub side: usize,
    /// `side * side` RGB triples in [0,1], row-major.
    pub rgb: Vec<[f32; 3]>,
    /// Variance of each projected channel before normalization.
    pub variances: [f64; 3],
    pub degenerate: bool,
}

pub fn saliency_map<T: Real>(model: &ModelState<T>, patch: &Patch) -> Result<SaliencyMap> {
    let out = model.branch_forward(patch)?;
    let area = out.side * out.side;
    // channel-major map -> one 512-vector per spatial position
    let mut vectors = vec![0f64; area * EMBED_DIM];
    for ch in 0..EMBED_DIM {
        for pos in 0..area {
            vectors[pos * EMBED_DIM + ch] = out.conv_map[ch * area + pos].to_f64().unwrap();
        }
    }
    let pca: Pca = pca_vectors(&vectors, area, EMBED_DIM);
    let rgb = crate::blob_detect::normalize_channels(&pca);
    Ok(SaliencyMap {
        side: out.side,
        rgb,
        variances: pca.variances,
        degenerate: pca.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchConfig;

    #[test]
    fn padding_arithmetic() {
        let cfg = GridConfig::new(350, 20).unwrap();
        let doc = DocumentImage::filled("p", 400, 400, 1.0).unwrap();
        let (padded, rec) = pad_document(&doc, &cfg).unwrap();
        assert_eq!((rec.step1_height, rec.step1_width), (400, 400));
        assert_eq!(padded.dims(), (730, 730));
        assert_eq!(rec.border, 165);
        assert_eq!(PadRecord::new(401, 400, &cfg).step1_height, 420);
    }

    #[test]
    fn pad_record_roundtrip() {
        let cfg = GridConfig::new(30, 10).unwrap();
        let rec = PadRecord::new(23, 17, &cfg);
        for r in 0..23 {
            for c in 0..17 {
                let (pr, pc) = rec.to_padded(r, c);
                assert_eq!(rec.to_original(pr, pc), Some((r, c)));
            }
        }
        assert_eq!(rec.to_original(0, 0), None);
    }

    #[test]
    fn padded_pixels_match_original() {
        let cfg = GridConfig::new(12, 4).unwrap();
        let px: Vec<f32> = (0..35).map(|i| i as f32 / 35.0).collect();
        let doc = DocumentImage::new("d", 5, 7, px).unwrap();
        let (padded, rec) = pad_document(&doc, &cfg).unwrap();
        for r in 0..padded.height() {
            for c in 0..padded.width() {
                let want = rec.to_original(r, c).map_or(1.0, |(or, oc)| doc.get(or, oc));
                assert_eq!(padded.get(r, c), want);
            }
        }
    }

    #[test]
    fn invalid_grid_config() {
        assert!(GridConfig::new(350, 21).is_err());
        assert!(GridConfig::new(20, 20).is_err());
        assert!(GridConfig::new(350, 0).is_err());
    }

    #[test]
    fn window_centered_on_cell() {
        let cfg = GridConfig::new(12, 4).unwrap();
        let (padded, _) = pad_document(&DocumentImage::new("d", 9, 9, (0..81).map(|i| i as f32 / 81.0).collect()).unwrap(), &cfg).unwrap();
        let doc = DocumentImage::new("d", 9, 9, (0..81).map(|i| i as f32 / 81.0).collect()).unwrap();
        // window for cell (i,j) is padded[i*w.., j*w..]
        for (i, j) in [(0, 0), (1, 2), (2, 2)] {
            let direct = window_pixels(&doc, &cfg, i, j);
            let via_pad = padded.crop_square((i * 4) as isize, (j * 4) as isize, 12);
            assert_eq!(direct, via_pad);
        }
    }

    fn small_model() -> ModelState {
        ModelState::init(&ArchConfig::compact(24), 3).unwrap()
    }

    #[test]
    fn grid_dimensions_and_blank_page() {
        let model = small_model();
        let cfg = GridConfig::new(24, 8).unwrap();
        let doc = DocumentImage::filled("b", 40, 33, 1.0).unwrap();
        let grid = extract_grid(&model, &doc, &cfg).unwrap();
        assert_eq!((grid.rows, grid.cols, grid.dim), (5, 5, 512));
        assert_eq!(grid.num_cells() * 64, 40 * 40);
        let first = grid.cell(0, 0).to_vec();
        for i in 0..grid.rows {
            for j in 0..grid.cols {
                assert_eq!(grid.cell(i, j), &first[..]);
            }
        }
        assert!(grid.values.iter().all(|v| v.is_finite()));
        let bytes = grid.to_bytes();
        assert_eq!(EmbeddingGrid::from_bytes(&bytes).unwrap().values, grid.values);
    }

    #[test]
    fn edits_stay_local() {
        let model = small_model();
        let cfg = GridConfig::new(24, 8).unwrap();
        let mut px: Vec<f32> = (0..64 * 96).map(|i| if (i / 96) % 10 < 3 { 0.1 } else { 1.0 }).collect();
        let a = DocumentImage::new("a", 64, 96, px.clone()).unwrap();
        for r in 0..64 {
            for c in 88..96 {
                px[r * 96 + c] = 0.5;
            }
        }
        let b = DocumentImage::new("b", 64, 96, px).unwrap();
        let ga = extract_grid(&model, &a, &cfg).unwrap();
        let gb = extract_grid(&model, &b, &cfg).unwrap();
        // window reach is w/2 + border = 12 px; cells with col*8+20 < 88 are untouched
        for i in 0..ga.rows {
            for j in 0..8 {
                assert_eq!(ga.cell(i, j), gb.cell(i, j), "cell ({i},{j})");
            }
        }
        assert_ne!(ga.cell(0, 11), gb.cell(0, 11));
    }

    #[test]
    fn model_grid_mismatch() {
        let model = small_model();
        let doc = DocumentImage::filled("b", 40, 40, 1.0).unwrap();
        assert!(extract_grid(&model, &doc, &GridConfig::new(32, 8).unwrap()).is_err());
    }

    #[test]
    fn saliency_shape_and_order() {
        let model = small_model();
        let px: Vec<f32> = (0..24 * 24).map(|i| if (i / 24) % 6 < 2 { 0.0 } else { 1.0 }).collect();
        let patch = Patch::new(px, 24, (0, 0), "s").unwrap();
        let s = saliency_map(&model, &patch).unwrap();
        assert_eq!(s.side, model.map_side());
        assert_eq!(s.rgb.len(), s.side * s.side);
        assert!(s.variances[0] >= s.variances[1] && s.variances[1] >= s.variances[2]);
        assert!(s.rgb.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }
}
