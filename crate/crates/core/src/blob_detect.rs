//! PCA pseudo-RGB rendering of an embedding grid and its thresholding into
//! labeled blob lines at page resolution.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::doc_io::{otsu_split, BinaryImage, LabelMap};
use crate::error::{Error, Result};
use crate::feature_grid::{EmbeddingGrid, GridConfig};
use crate::grid::label_components_8;
use crate::nn::matmul;

/// Components whose scores are kept beyond the three rendered ones.
pub const LEADING_COMPONENTS: usize = 8;

/// Principal components of `n` row vectors of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit vectors ordered by explained variance; zero where degenerate.
    pub components: [Vec<f64>; 3],
    /// Per-vector projections onto the components.
    pub scores: Vec<[f64; 3]>,
    /// Eigenvalues of the kept components (population covariance).
    pub variances: [f64; 3],
    /// Trace of the covariance, i.e. the total variance.
    pub total_variance: f64,
    pub channel_degenerate: [bool; 3],
    pub degenerate: bool,
    /// Scores on the first [`LEADING_COMPONENTS`] components, row-major;
    /// zero for degenerate components.
    pub leading_scores: Vec<f64>,
}

/// Exact PCA by eigendecomposition of the `d x d` covariance.
pub fn pca_vectors(vectors: &[f64], n: usize, d: usize) -> Pca {
    assert_eq!(vectors.len(), n * d);
    let mut mean = vec![0f64; d];
    for row in vectors.chunks_exact(d.max(1)) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let inv_n = if n > 0 { 1.0 / n as f64 } else { 0.0 };
    mean.iter_mut().for_each(|m| *m *= inv_n);
    let mut centered = vectors.to_vec();
    for row in centered.chunks_exact_mut(d.max(1)) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = vec![0f64; d * d];
    if n > 0 {
        matmul(&centered, true, &centered, false, &mut cov, d, n, d, 0.0);
    }
    cov.iter_mut().for_each(|c| *c *= inv_n);
    let total_variance: f64 = (0..d).map(|i| cov[i * d + i]).sum();

    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cov));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let tol = (1e-12 * total_variance).max(1e-14);

    let mut leading: Vec<Vec<f64>> = Vec::with_capacity(LEADING_COMPONENTS);
    let mut lambdas = Vec::with_capacity(LEADING_COMPONENTS);
    for k in 0..LEADING_COMPONENTS {
        let mut v = vec![0f64; d];
        let mut lambda = 0.0;
        if let Some(&idx) = order.get(k) {
            if eig.eigenvalues[idx] > tol {
                lambda = eig.eigenvalues[idx];
                let col = eig.eigenvectors.column(idx);
                let norm = col.norm();
                v = col.iter().map(|x| x / norm).collect();
                let lead = v
                    .iter()
                    .enumerate()
                    .fold(0usize, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
                if v[lead] < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
        }
        leading.push(v);
        lambdas.push(lambda);
    }
    let variances: [f64; 3] = std::array::from_fn(|k| lambdas[k]);
    let channel_degenerate: [bool; 3] = std::array::from_fn(|k| lambdas[k] == 0.0);
    let mut leading_scores = vec![0f64; n * LEADING_COMPONENTS];
    if n > 0 && d > 0 {
        let basis: Vec<f64> = leading.iter().flatten().copied().collect();
        matmul(&centered, false, &basis, true, &mut leading_scores, n, d, LEADING_COMPONENTS, 0.0);
    }
    let scores = leading_scores
        .chunks_exact(LEADING_COMPONENTS)
        .map(|s| [s[0], s[1], s[2]])
        .collect();
    let components: [Vec<f64>; 3] = std::array::from_fn(|k| leading[k].clone());
    Pca {
        mean,
        components,
        scores,
        variances,
        total_variance,
        channel_degenerate,
        degenerate: channel_degenerate.iter().any(|&x| x),
        leading_scores,
    }
}

/// Min-max normalize each score channel to [0,1]; degenerate channels are 0.5.
pub fn normalize_channels(pca: &Pca) -> Vec<[f32; 3]> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for s in &pca.scores {
        for k in 0..3 {
            lo[k] = lo[k].min(s[k]);
            hi[k] = hi[k].max(s[k]);
        }
    }
    let flat: [bool; 3] = std::array::from_fn(|k| pca.channel_degenerate[k] || !(hi[k] - lo[k] > 1e-12));
    pca.scores
        .iter()
        .map(|s| {
            std::array::from_fn(|k| {
                if flat[k] {
                    0.5
                } else {
                    (((s[k] - lo[k]) / (hi[k] - lo[k])) as f32).clamp(0.0, 1.0)
                }
            })
        })
        .collect()
}

fn normalize_leading(pca: &Pca) -> Vec<f32> {
    let k = LEADING_COMPONENTS;
    let mut out = vec![0.5f32; pca.leading_scores.len()];
    for c in 0..k {
        let col = pca.leading_scores.iter().skip(c).step_by(k);
        let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if c < 3 && pca.channel_degenerate[c] || !(hi - lo > 1e-12) {
            continue;
        }
        for (o, &v) in out.iter_mut().skip(c).step_by(k).zip(pca.leading_scores.iter().skip(c).step_by(k)) {
            *o = (((v - lo) / (hi - lo)) as f32).clamp(0.0, 1.0);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub page_id: String,
    pub rows: usize,
    pub cols: usize,
    pub cfg: GridConfig,
    pub pca: Pca,
}

impl PcaProjection {
    pub fn degenerate(&self) -> bool {
        self.pca.degenerate
    }
}

pub fn pca_project(grid: &EmbeddingGrid) -> Result<PcaProjection> {
    let n = grid.num_cells();
    if n < 3 {
        return Err(Error::invalid(format!("PCA needs at least 3 grid cells, got {n}")));
    }
    let vectors: Vec<f64> = grid.values.iter().map(|&v| v as f64).collect();
    let pca = pca_vectors(&vectors, n, grid.dim);
    if pca.degenerate {
        log::warn!("page {}: embedding grid has rank < 3", grid.page_id);
    }
    Ok(PcaProjection {
        page_id: grid.page_id.clone(),
        rows: grid.rows,
        cols: grid.cols,
        cfg: grid.cfg,
        pca,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoRgbImage {
    pub page_id: String,
    pub rows: usize,
    pub cols: usize,
    pub cfg: GridConfig,
    pub pixels: Vec<[f32; 3]>,
    /// Min-max normalized scores on the leading components, `feature_dims`
    /// per cell; the first three equal `pixels`. Empty when unknown.
    pub features: Vec<f32>,
    pub feature_dims: usize,
}

impl PseudoRgbImage {
    pub fn get(&self, row: usize, col: usize) -> [f32; 3] {
        self.pixels[row * self.cols + col]
    }

    /// Write as 8-bit RGB, each cell upscaled to `scale x scale` pixels.
    pub fn save_png(&self, scale: usize, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let s = scale.max(1);
        let img = image::RgbImage::from_fn((self.cols * s) as u32, (self.rows * s) as u32, |x, y| {
            let px = self.get(y as usize / s, x as usize / s);
            image::Rgb(px.map(|v| (v * 255.0).round() as u8))
        });
        img.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

pub fn to_pseudo_rgb(proj: &PcaProjection) -> PseudoRgbImage {
    PseudoRgbImage {
        page_id: proj.page_id.clone(),
        rows: proj.rows,
        cols: proj.cols,
        cfg: proj.cfg,
        pixels: normalize_channels(&proj.pca),
        features: normalize_leading(&proj.pca),
        feature_dims: LEADING_COMPONENTS,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobParams {
    /// Grid components smaller than this many cells are dropped.
    pub min_blob_cells: usize,
    pub channel: ChannelChoice,
    /// `fit` only: cut at the Otsu threshold plus this many standard
    /// deviations of the fitted score.
    pub threshold_offset: f64,
    /// `fit` only: leading principal components the ink fraction is fitted on.
    pub fit_components: usize,
    /// Gaps shorter than this many cells along the text direction are filled.
    /// Unset means one patch width, `ceil(p / w)`; 0 disables.
    pub close_cells: Option<usize>,
    /// Runs of blob cells shorter than this along the text direction are
    /// dropped after closing, cutting thin bridges between lines. Unset means
    /// `ceil(p / 2w)`; 0 disables.
    pub open_cells: Option<usize>,
}

impl Default for BlobParams {
    fn default() -> Self {
        BlobParams {
            min_blob_cells: 4,
            channel: ChannelChoice::Fit,
            threshold_offset: 0.5,
            fit_components: 6,
            close_cells: None,
            open_cells: None,
        }
    }
}

impl BlobParams {
    /// Bare Otsu split of one channel choice, no offset and no closing.
    pub fn plain(channel: ChannelChoice) -> Self {
        BlobParams {
            channel,
            threshold_offset: 0.0,
            fit_components: 3,
            close_cells: Some(0),
            open_cells: Some(0),
            ..Default::default()
        }
    }
}

/// Pseudo-RGB channel that is thresholded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelChoice {
    /// Least-squares affine combination of the leading principal components
    /// that best predicts the per-cell ink fraction.
    #[default]
    Fit,
    /// The channel whose inkier Otsu side has the highest ink density.
    Auto,
    Pc1,
    Pc2,
    Pc3,
}

/// The inkier Otsu side of one channel and its mean ink fraction per cell.
struct Candidate {
    selected: Vec<bool>,
    density: f64,
    /// The scalar field that was split.
    field: Vec<f32>,
}

fn split_candidate(prgb: &PseudoRgbImage, channel: usize, ink_frac: &[f64]) -> Option<Candidate> {
    let values: Vec<f32> = prgb.pixels.iter().map(|p| p[channel]).collect();
    let (low, _) = otsu_split(&values)?;
    let mean_ink = |side: bool| {
        let (sum, n) = low
            .iter()
            .zip(ink_frac)
            .filter(|(&l, _)| l == side)
            .fold((0.0, 0usize), |(s, n), (_, &f)| (s + f, n + 1));
        if n == 0 { 0.0 } else { sum / n as f64 }
    };
    let (lo_ink, hi_ink) = (mean_ink(true), mean_ink(false));
    if lo_ink >= hi_ink {
        Some(Candidate {
            selected: low,
            density: lo_ink,
            field: values,
        })
    } else {
        Some(Candidate {
            selected: low.iter().map(|&l| !l).collect(),
            density: hi_ink,
            field: values,
        })
    }
}

fn fit_candidate(prgb: &PseudoRgbImage, ink_frac: &[f64], params: &BlobParams) -> Option<Candidate> {
    let n = prgb.pixels.len();
    let (k, feature): (usize, Box<dyn Fn(usize, usize) -> f64>) = if prgb.feature_dims >= params.fit_components.max(1) {
        let dims = prgb.feature_dims;
        (params.fit_components.max(1), Box::new(move |i, c| prgb.features[i * dims + c] as f64))
    } else {
        (3, Box::new(|i, c| prgb.pixels[i][c] as f64))
    };
    let mut ata = DMatrix::<f64>::zeros(k + 1, k + 1);
    let mut atb = nalgebra::DVector::<f64>::zeros(k + 1);
    let mut x = nalgebra::DVector::<f64>::zeros(k + 1);
    for (i, &y) in ink_frac.iter().enumerate().take(n) {
        for c in 0..k {
            x[c] = feature(i, c);
        }
        x[k] = 1.0;
        ata.ger(1.0, &x, &x, 1.0);
        atb.axpy(y, &x, 1.0);
    }
    let coef = ata.svd(true, true).solve(&atb, 1e-12).ok()?;
    let fitted: Vec<f32> = (0..n).map(|i| (0..k).map(|c| coef[c] * feature(i, c)).sum::<f64>() as f32).collect();
    let offset = params.threshold_offset;
    let (low, t) = otsu_split(&fitted)?;
    let selected: Vec<bool> = if offset == 0.0 {
        low.iter().map(|&l| !l).collect()
    } else {
        let n = fitted.len() as f64;
        let mean = fitted.iter().map(|&v| v as f64).sum::<f64>() / n;
        let sd = (fitted.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
        let cut = t as f64 + offset * sd;
        fitted.iter().map(|&v| v as f64 > cut).collect()
    };
    let n = selected.iter().filter(|&&s| s).count().max(1);
    let density = selected.iter().zip(ink_frac).filter(|(&s, _)| s).map(|(_, f)| f).sum::<f64>() / n as f64;
    Some(Candidate {
        selected,
        density,
        field: fitted,
    })
}

/// Clear runs of selected cells shorter than `len` along rows or columns.
fn drop_short_runs(mask: &mut [bool], rows: usize, cols: usize, len: usize, horizontal: bool) {
    let (lines, span) = if horizontal { (rows, cols) } else { (cols, rows) };
    let idx = |l: usize, k: usize| if horizontal { l * cols + k } else { k * cols + l };
    for l in 0..lines {
        let mut k = 0;
        while k < span {
            if !mask[idx(l, k)] {
                k += 1;
                continue;
            }
            let start = k;
            while k < span && mask[idx(l, k)] {
                k += 1;
            }
            if k - start < len {
                for j in start..k {
                    mask[idx(l, j)] = false;
                }
            }
        }
    }
}

/// True when `field` varies more across rows than across columns, i.e. the
/// text runs horizontally.
fn runs_horizontally(field: &[f32], rows: usize, cols: usize) -> bool {
    let (mut jxx, mut jyy) = (0.0f64, 0.0f64);
    for r in 0..rows {
        for c in 0..cols {
            let v = |r: usize, c: usize| field[r * cols + c] as f64;
            if c + 1 < cols {
                jxx += (v(r, c + 1) - v(r, c)).powi(2);
            }
            if r + 1 < rows {
                jyy += (v(r + 1, c) - v(r, c)).powi(2);
            }
        }
    }
    jyy >= jxx
}

/// Fill runs of unselected cells shorter than `len` that have selected cells
/// on both ends, along rows or along columns.
fn close_gaps(mask: &mut [bool], rows: usize, cols: usize, len: usize, horizontal: bool) {
    let (lines, span) = if horizontal { (rows, cols) } else { (cols, rows) };
    let idx = |l: usize, k: usize| if horizontal { l * cols + k } else { k * cols + l };
    for l in 0..lines {
        let mut last: Option<usize> = None;
        for k in 0..span {
            if !mask[idx(l, k)] {
                continue;
            }
            if let Some(prev) = last {
                if k - prev > 1 && k - prev - 1 < len {
                    for j in prev + 1..k {
                        mask[idx(l, j)] = true;
                    }
                }
            }
            last = Some(k);
        }
    }
}

/// Labeled blob lines at page resolution. Label ids are 1..=count.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobLineMap {
    pub mask: BinaryImage,
    pub labels: LabelMap,
    pub count: u32,
    /// Surviving blob cells at grid resolution.
    pub grid_mask: Vec<bool>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pixels: Vec<Vec<(usize, usize)>>,
}

impl BlobLineMap {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }

    /// All pixels of blob line `id`, row-major.
    pub fn blob_line_pixels(&self, id: u32) -> Result<&[(usize, usize)]> {
        if id == 0 || id > self.count {
            return Err(Error::invalid(format!("blob id {id} outside 1..={}", self.count)));
        }
        Ok(&self.pixels[id as usize - 1])
    }

    /// Build from a full-resolution mask.
    pub fn from_mask(mask: BinaryImage, grid_mask: Vec<bool>, grid_rows: usize, grid_cols: usize) -> Self {
        let (h, w) = mask.dims();
        let (labels, count) = label_components_8(mask.mask(), h, w);
        let mut pixels = vec![Vec::new(); count as usize];
        for (i, &l) in labels.iter().enumerate() {
            if l > 0 {
                pixels[l as usize - 1].push((i / w, i % w));
            }
        }
        BlobLineMap {
            mask,
            labels: LabelMap::new(h, w, labels).expect("dims"),
            count,
            grid_mask,
            grid_rows,
            grid_cols,
            pixels,
        }
    }
}

/// Mean ink fraction per grid cell; padding counts as background.
fn cell_ink(ink: &BinaryImage, rows: usize, cols: usize, w: usize) -> Vec<f64> {
    let mut counts = vec![0usize; rows * cols];
    for r in 0..ink.height() {
        for c in 0..ink.width() {
            if ink.get(r, c) {
                counts[(r / w) * cols + c / w] += 1;
            }
        }
    }
    counts.iter().map(|&n| n as f64 / (w * w) as f64).collect()
}

/// Threshold a pseudo-RGB channel into blob lines: Otsu split, ink-overlap vote,
/// speckle removal, nearest-neighbor upscale by `w`, crop, 8-connected labels.
pub fn threshold_blob_lines(prgb: &PseudoRgbImage, ink: &BinaryImage, params: &BlobParams) -> Result<BlobLineMap> {
    let cfg = prgb.cfg;
    let w = cfg.window;
    let (h_d, w_d) = ink.dims();
    let (rows, cols) = (prgb.rows, prgb.cols);
    if h_d.div_ceil(w) != rows || w_d.div_ceil(w) != cols {
        return Err(Error::invalid(format!(
            "ink {h_d}x{w_d} does not match a {rows}x{cols} grid at window {w}"
        )));
    }
    let empty = |grid_mask: Vec<bool>| {
        BlobLineMap::from_mask(BinaryImage::empty(h_d, w_d), grid_mask, rows, cols)
    };
    let ink_frac = cell_ink(ink, rows, cols, w);
    let channels: &[usize] = match params.channel {
        ChannelChoice::Fit => &[],
        ChannelChoice::Auto => &[0, 1, 2],
        ChannelChoice::Pc1 => &[0],
        ChannelChoice::Pc2 => &[1],
        ChannelChoice::Pc3 => &[2],
    };
    // blob lines strike through text but not the gaps between lines, so the
    // densest inky side wins; earlier channels take ties
    let fit = (params.channel == ChannelChoice::Fit)
        .then(|| fit_candidate(prgb, &ink_frac, params))
        .flatten();
    let best = channels
        .iter()
        .filter_map(|&k| split_candidate(prgb, k, &ink_frac))
        .chain(fit)
        .fold(None::<Candidate>, |best, c| match best {
            Some(b) if b.density >= c.density => Some(b),
            _ => Some(c),
        });
    let Some(best) = best else {
        log::warn!("page {}: uniform pseudo-RGB, no blob lines", prgb.page_id);
        return Ok(empty(vec![false; rows * cols]));
    };
    let mut grid_mask = best.selected;
    let close = params.close_cells.unwrap_or(cfg.patch_side.div_ceil(w));
    let open = params.open_cells.unwrap_or(cfg.patch_side.div_ceil(2 * w));
    if close > 1 || open > 1 {
        let horizontal = runs_horizontally(&best.field, rows, cols);
        if close > 1 {
            close_gaps(&mut grid_mask, rows, cols, close, horizontal);
        }
        if open > 1 {
            drop_short_runs(&mut grid_mask, rows, cols, open, horizontal);
        }
    }

    let (cell_labels, n) = label_components_8(&grid_mask, rows, cols);
    let mut area = vec![0usize; n as usize + 1];
    for &l in &cell_labels {
        area[l as usize] += 1;
    }
    for (m, &l) in grid_mask.iter_mut().zip(&cell_labels) {
        if l > 0 && area[l as usize] < params.min_blob_cells {
            *m = false;
        }
    }
    if !grid_mask.iter().any(|&m| m) {
        log::warn!("page {}: no blob line survives thresholding", prgb.page_id);
        return Ok(empty(grid_mask));
    }

    let full: Vec<bool> = (0..h_d * w_d)
        .map(|i| grid_mask[(i / w_d / w) * cols + (i % w_d) / w])
        .collect();
    Ok(BlobLineMap::from_mask(
        BinaryImage::new(h_d, w_d, full)?,
        grid_mask,
        rows,
        cols,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vectors(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * d).map(|_| rng.gen::<f64>()).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn identical_vectors_degenerate() {
        let v: Vec<f64> = (0..5).flat_map(|_| (0..16).map(|i| i as f64)).collect();
        let pca = pca_vectors(&v, 5, 16);
        assert!(pca.degenerate);
        assert!(pca.scores.iter().flatten().all(|&s| s == 0.0));
        assert_eq!(pca.variances, [0.0; 3]);
        assert!(normalize_channels(&pca).iter().all(|p| *p == [0.5; 3]));
    }

    #[test]
    fn rank_one_line() {
        let dir: Vec<f64> = (0..32).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let v: Vec<f64> = (0..10).flat_map(|t| dir.iter().map(move |d| 1.0 + t as f64 * d)).collect();
        let pca = pca_vectors(&v, 10, 32);
        assert!(pca.variances[0] > 0.0);
        assert_abs_diff_eq!(pca.variances[0], pca.total_variance, epsilon = 1e-9);
        assert_eq!(pca.channel_degenerate, [false, true, true]);
        assert!(pca.scores.iter().all(|s| s[1] == 0.0 && s[2] == 0.0));
    }

    #[test]
    fn reconstruction_error_is_dropped_variance() {
        let (n, d) = (36, 512);
        let v = random_vectors(n, d, 11);
        let pca = pca_vectors(&v, n, d);
        assert!(!pca.degenerate);
        let mut err = 0.0;
        for (i, row) in v.chunks_exact(d).enumerate() {
            for j in 0..d {
                let rec = pca.mean[j] + (0..3).map(|k| pca.scores[i][k] * pca.components[k][j]).sum::<f64>();
                err += (row[j] - rec).powi(2);
            }
        }
        err /= n as f64;
        let dropped = pca.total_variance - pca.variances.iter().sum::<f64>();
        assert_abs_diff_eq!(err, dropped, epsilon = 1e-8);
    }

    #[test]
    fn orthonormal_ordered_signed() {
        let v = random_vectors(40, 24, 5);
        let pca = pca_vectors(&v, 40, 24);
        for a in 0..3 {
            assert_abs_diff_eq!(dot(&pca.components[a], &pca.components[a]), 1.0, epsilon = 1e-6);
            for b in a + 1..3 {
                assert_abs_diff_eq!(dot(&pca.components[a], &pca.components[b]), 0.0, epsilon = 1e-6);
            }
            let c = &pca.components[a];
            let lead = c.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(lead > 0.0);
            let var: f64 = pca.scores.iter().map(|s| s[a] * s[a]).sum::<f64>() / 40.0;
            assert_abs_diff_eq!(var, pca.variances[a], epsilon = 1e-9);
        }
        assert!(pca.variances[0] >= pca.variances[1] && pca.variances[1] >= pca.variances[2]);
        // the mean vector projects to zero
        for k in 0..3 {
            let centered: Vec<f64> = pca.mean.iter().zip(&pca.mean).map(|(a, b)| a - b).collect();
            assert_eq!(dot(&centered, &pca.components[k]), 0.0);
        }
    }

    #[test]
    fn normalization_contract() {
        let v = random_vectors(30, 8, 9);
        let pca = pca_vectors(&v, 30, 8);
        let rgb = normalize_channels(&pca);
        for k in 0..3 {
            let lo = rgb.iter().map(|p| p[k]).fold(f32::INFINITY, f32::min);
            let hi = rgb.iter().map(|p| p[k]).fold(f32::NEG_INFINITY, f32::max);
            assert_eq!((lo, hi), (0.0, 1.0));
        }
    }

    #[test]
    fn equal_vectors_equal_colors() {
        let mut v = random_vectors(20, 8, 2);
        let first: Vec<f64> = v[..8].to_vec();
        v[8 * 7..8 * 8].copy_from_slice(&first);
        let rgb = normalize_channels(&pca_vectors(&v, 20, 8));
        assert_eq!(rgb[0], rgb[7]);
    }

    fn grid_cfg(w: usize) -> GridConfig {
        GridConfig::new(w + 2, w).unwrap()
    }

    fn prgb_from(values: Vec<f32>, rows: usize, cols: usize, w: usize) -> PseudoRgbImage {
        PseudoRgbImage {
            page_id: "t".into(),
            rows,
            cols,
            cfg: grid_cfg(w),
            pixels: values.into_iter().map(|v| [v, 0.5, 0.5]).collect(),
            features: vec![],
            feature_dims: 0,
        }
    }

    /// Rows alternate dark bands of 2 cells and light bands of 3 cells; ink sits
    /// under the dark bands.
    fn banded(bands: usize, cols: usize, w: usize, h_extra: usize) -> (PseudoRgbImage, BinaryImage) {
        let rows = bands * 5;
        let dark = |r: usize| r % 5 < 2;
        let values = (0..rows * cols).map(|i| if dark(i / cols) { 0.1 } else { 0.9 }).collect();
        let (h, wd) = ((rows - 1) * w + h_extra, cols * w - 1);
        let mask = (0..h * wd).map(|i| dark(i / wd / w) && (i % wd) % 3 == 0).collect();
        (prgb_from(values, rows, cols, w), BinaryImage::new(h, wd, mask).unwrap())
    }

    #[test]
    fn one_blob_per_band() {
        for bands in 1..5 {
            let (prgb, ink) = banded(bands, 6, 4, 3);
            let map = threshold_blob_lines(&prgb, &ink, &BlobParams::plain(ChannelChoice::Auto)).unwrap();
            assert_eq!(map.count as usize, bands);
            assert_eq!(map.dims(), ink.dims());
        }
    }

    #[test]
    fn polarity_follows_ink() {
        // same bands, but dark value on the high side of PC1
        let (mut prgb, ink) = banded(3, 6, 4, 4);
        prgb.pixels.iter_mut().for_each(|p| p[0] = 1.0 - p[0]);
        let map = threshold_blob_lines(&prgb, &ink, &BlobParams::plain(ChannelChoice::Auto)).unwrap();
        assert_eq!(map.count, 3);
        assert!(map.labels.get(0, 0) > 0);
    }

    #[test]
    fn auto_prefers_line_channel() {
        // channel 0 splits text block from margin, channel 1 splits lines from gaps
        let (mut prgb, ink) = banded(3, 8, 4, 4);
        let cols = prgb.cols;
        for (i, p) in prgb.pixels.iter_mut().enumerate() {
            let line = p[0] < 0.5;
            *p = [if i % cols < 6 { 0.9 } else { 0.1 }, if line { 0.2 } else { 0.7 }, 0.5];
        }
        let auto = threshold_blob_lines(&prgb, &ink, &BlobParams::plain(ChannelChoice::Auto)).unwrap();
        assert_eq!(auto.count, 3);
        let pc1 = BlobParams::plain(ChannelChoice::Pc1);
        assert_eq!(threshold_blob_lines(&prgb, &ink, &pc1).unwrap().count, 1);
        let fit = BlobParams::plain(ChannelChoice::Fit);
        assert_eq!(threshold_blob_lines(&prgb, &ink, &fit).unwrap().count, 3);
    }

    #[test]
    fn fit_mixes_channels() {
        // line phase split over two channels, neither alone separates lines from gaps
        let (rows, cols, w) = (15, 6, 4);
        let phase = |r: usize| (r % 5) as f32 * std::f32::consts::TAU / 5.0;
        let pixels = (0..rows * cols)
            .map(|i| {
                let t = phase(i / cols);
                [0.5 + 0.5 * t.cos(), 0.5 + 0.5 * t.sin(), 0.5]
            })
            .collect();
        let prgb = PseudoRgbImage {
            page_id: "t".into(),
            rows,
            cols,
            cfg: grid_cfg(w),
            pixels,
            features: vec![],
            feature_dims: 0,
        };
        let (h, wd) = (rows * w, cols * w);
        // ink peaks at phase 0.6 of the period
        let mask = (0..h * wd).map(|i| matches!((i / wd / w) % 5, 1 | 2) && i % 2 == 0).collect();
        let ink = BinaryImage::new(h, wd, mask).unwrap();
        let map = threshold_blob_lines(&prgb, &ink, &BlobParams::plain(ChannelChoice::Fit)).unwrap();
        assert_eq!(map.count, 3);
        for r in 0..rows {
            let expect = matches!(r % 5, 1 | 2);
            assert!(map.grid_mask[r * cols..(r + 1) * cols].iter().all(|&m| m == expect), "row {r}");
        }
    }

    #[test]
    fn closing_joins_along_text_only() {
        let (rows, cols) = (7, 12);
        let mut mask = vec![false; rows * cols];
        for &r in &[1usize, 5] {
            for c in (0..4).chain(7..12) {
                mask[r * cols + c] = true;
            }
        }
        let mut closed = mask.clone();
        close_gaps(&mut closed, rows, cols, 4, true);
        for r in 0..rows {
            for c in 0..cols {
                assert_eq!(closed[r * cols + c], r == 1 || r == 5, "({r},{c})");
            }
        }
        let mut short = mask.clone();
        close_gaps(&mut short, rows, cols, 3, true);
        assert_eq!(short, mask);
        let mut vertical = mask.clone();
        close_gaps(&mut vertical, rows, cols, 4, false);
        assert!((2..5).all(|r| vertical[r * cols]));
        assert!(!vertical[2 * cols + 5]);
    }

    #[test]
    fn opening_cuts_bridges() {
        let (rows, cols) = (5, 10);
        let mut mask = vec![false; rows * cols];
        for &r in &[0usize, 4] {
            for c in 0..cols {
                mask[r * cols + c] = true;
            }
        }
        // vertical bridge between the two rows, plus a short stub
        for r in 1..4 {
            mask[r * cols + 5] = true;
        }
        mask[2 * cols + 1] = true;
        mask[2 * cols + 2] = true;
        let mut opened = mask.clone();
        drop_short_runs(&mut opened, rows, cols, 3, true);
        for r in 0..rows {
            for c in 0..cols {
                assert_eq!(opened[r * cols + c], r == 0 || r == 4, "({r},{c})");
            }
        }
        let (_, n) = label_components_8(&opened, rows, cols);
        assert_eq!(n, 2);
    }

    #[test]
    fn orientation_from_field() {
        let (rows, cols) = (6, 8);
        let bands: Vec<f32> = (0..rows * cols).map(|i| ((i / cols) % 3) as f32).collect();
        assert!(runs_horizontally(&bands, rows, cols));
        let columns: Vec<f32> = (0..rows * cols).map(|i| ((i % cols) % 3) as f32).collect();
        assert!(!runs_horizontally(&columns, rows, cols));
    }

    #[test]
    fn default_closing_rejoins_broken_line() {
        // first band cut by a 2-cell gap; p = 14, w = 4 closes gaps under 4 cells
        let (bands, cols, w) = (2, 10, 4);
        let (mut prgb, ink) = banded(bands, cols, w, 3);
        prgb.cfg = GridConfig::new(w + 10, w).unwrap();
        for r in 0..2 {
            for c in 4..6 {
                prgb.pixels[r * cols + c] = [0.9, 0.5, 0.5];
            }
        }
        let plain = threshold_blob_lines(&prgb, &ink, &BlobParams::plain(ChannelChoice::Auto)).unwrap();
        assert_eq!(plain.count, 3);
        let closed = BlobParams {
            channel: ChannelChoice::Auto,
            ..Default::default()
        };
        assert_eq!(threshold_blob_lines(&prgb, &ink, &closed).unwrap().count, 2);
    }

    #[test]
    fn uniform_is_empty() {
        let prgb = prgb_from(vec![0.5; 12], 3, 4, 5);
        let ink = BinaryImage::empty(15, 20);
        let map = threshold_blob_lines(&prgb, &ink, &BlobParams::plain(ChannelChoice::Auto)).unwrap();
        assert!(map.is_empty());
        assert!(map.blob_line_pixels(1).is_err());
    }

    #[test]
    fn speckle_removed() {
        let mut values = vec![0.9f32; 8 * 8];
        for c in 0..8 {
            values[2 * 8 + c] = 0.1;
        }
        values[6 * 8 + 6] = 0.1;
        let prgb = prgb_from(values, 8, 8, 2);
        let mask = (0..256).map(|i| matches!(i / 16 / 2, 2 | 6)).collect();
        let ink = BinaryImage::new(16, 16, mask).unwrap();
        let map = threshold_blob_lines(&prgb, &ink, &BlobParams::plain(ChannelChoice::Auto)).unwrap();
        assert_eq!(map.count, 1);
        assert_eq!(map.blob_line_pixels(1).unwrap().len(), 16 * 2);
    }

    #[test]
    fn dims_mismatch_rejected() {
        let prgb = prgb_from(vec![0.5; 12], 3, 4, 5);
        assert!(threshold_blob_lines(&prgb, &BinaryImage::empty(30, 20), &BlobParams::plain(ChannelChoice::Auto)).is_err());
    }

    #[test]
    fn small_blob_pixels() {
        let mask = BinaryImage::new(3, 3, vec![true, true, false, false, true, false, false, false, false]).unwrap();
        let map = BlobLineMap::from_mask(mask, vec![], 0, 0);
        assert_eq!(map.blob_line_pixels(1).unwrap(), &[(0, 0), (0, 1), (1, 1)]);
    }

    proptest! {
        #[test]
        fn threshold_partition_and_idempotence(
            cells in proptest::collection::vec(0u8..4, 48),
            dark_side in any::<bool>(),
        ) {
            // ink lies under one PC1 side, as it does on real pages
            let ink_bits: Vec<bool> = cells.iter().map(|&c| (c < 2) == dark_side).collect();
            let (rows, cols, w) = (6, 8, 3);
            let values: Vec<f32> = cells.iter().map(|&c| c as f32 / 3.0).collect();
            let prgb = prgb_from(values, rows, cols, w);
            let (h, wd) = (rows * w - 1, cols * w - 2);
            let mask = (0..h * wd).map(|i| ink_bits[(i / wd / w) * cols + (i % wd) / w]).collect();
            let ink = BinaryImage::new(h, wd, mask).unwrap();
            let map = threshold_blob_lines(&prgb, &ink, &BlobParams::plain(ChannelChoice::Auto)).unwrap();
            prop_assert_eq!(map.dims(), (h, wd));

            let mut seen = 0;
            for id in 1..=map.count {
                let px = map.blob_line_pixels(id).unwrap();
                prop_assert!(!px.is_empty());
                for &(r, c) in px {
                    prop_assert_eq!(map.labels.get(r, c), id);
                }
                seen += px.len();
            }
            prop_assert_eq!(seen, map.mask.count());
            for (m, l) in map.mask.mask().iter().zip(map.labels.labels()) {
                prop_assert_eq!(*m, *l > 0);
            }

            if !map.is_empty() && map.grid_mask.iter().any(|m| !m) {
                let again_vals = map.grid_mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
                let again = threshold_blob_lines(&prgb_from(again_vals, rows, cols, w), &ink, &BlobParams::plain(ChannelChoice::Auto)).unwrap();
                prop_assert_eq!(&again.mask, &map.mask);
            }
        }
    }
}
