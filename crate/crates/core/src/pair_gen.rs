//! Self-supervised patch pairs.
//!
//! A first patch is drawn where the page has ink; the second comes from one of
//! the eight neighbouring positions, separated by a gap plus random jitter so
//! that stroke continuations across the border cannot give the answer away.
//! Neighbours are "similar". Rotating the second patch by 90 degrees makes a
//! "different" pair. Either way the second patch then gets one random
//! augmentation out of identity, 180-degree rotation and horizontal flip.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::doc_io::{binarize, BinaryImage, DocumentImage};
use crate::error::{Error, Result};
use crate::grid;

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: Vec<f32>,
    pub side: usize,
    /// (row, col) of the top-left corner in the source page.
    pub origin: (usize, usize),
    pub source_id: String,
}

impl Patch {
    pub fn new(pixels: Vec<f32>, side: usize, origin: (usize, usize), source_id: impl Into<String>) -> Result<Self> {
        if pixels.len() != side * side || side == 0 {
            return Err(Error::invalid(format!(
                "patch buffer has {} values, expected {side}x{side}",
                pixels.len()
            )));
        }
        Ok(Patch {
            pixels,
            side,
            origin,
            source_id: source_id.into(),
        })
    }

    pub fn from_page(doc: &DocumentImage, row: usize, col: usize, side: usize) -> Patch {
        Patch {
            pixels: doc.crop_square(row as isize, col as isize, side),
            side,
            origin: (row, col),
            source_id: doc.id.clone(),
        }
    }

    fn transformed(&self, f: impl Fn(&[f32], usize) -> Vec<f32>) -> Patch {
        Patch {
            pixels: f(&self.pixels, self.side),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairLabel {
    Different = 0,
    Similar = 1,
}

impl PairLabel {
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaseRotation {
    Identity,
    /// 90 degrees counter-clockwise.
    Rot90,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Augmentation {
    Identity,
    Rot180,
    /// Mirror across the vertical axis.
    HFlip,
}

impl Augmentation {
    pub const ALL: [Augmentation; 3] = [Augmentation::Identity, Augmentation::Rot180, Augmentation::HFlip];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub base: BaseRotation,
    pub augmentation: Augmentation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub a: Patch,
    pub b: Patch,
    pub label: PairLabel,
    pub transform: TransformRecord,
}

impl PatchPair {
    /// Untransformed similar pair.
    pub fn similar(a: Patch, b: Patch) -> PatchPair {
        PatchPair {
            a,
            b,
            label: PairLabel::Similar,
            transform: TransformRecord {
                base: BaseRotation::Identity,
                augmentation: Augmentation::Identity,
            },
        }
    }
}

/// Neighbour direction as (row sign, col sign).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl Direction {
    pub const ALL: [Direction; 8] = [
        Direction::N,
        Direction::NE,
        Direction::E,
        Direction::SE,
        Direction::S,
        Direction::SW,
        Direction::W,
        Direction::NW,
    ];

    pub fn signs(self) -> (i64, i64) {
        match self {
            Direction::N => (-1, 0),
            Direction::NE => (-1, 1),
            Direction::E => (0, 1),
            Direction::SE => (1, 1),
            Direction::S => (1, 0),
            Direction::SW => (1, -1),
            Direction::W => (0, -1),
            Direction::NW => (-1, -1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    pub patch_side: usize,
    /// Gap between neighbours; defaults to round(p/8).
    pub gap: Option<usize>,
    /// Maximum jitter; defaults to round(p/16).
    pub jitter_max: Option<usize>,
    pub min_ink_ratio: f64,
    pub val_fraction: f64,
    pub max_attempts: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            patch_side: 350,
            gap: None,
            jitter_max: None,
            min_ink_ratio: 0.01,
            val_fraction: 0.1,
            max_attempts: 1000,
        }
    }
}

impl PairConfig {
    pub fn for_patch(patch_side: usize) -> Self {
        PairConfig {
            patch_side,
            ..Default::default()
        }
    }

    pub fn gap(&self) -> usize {
        self.gap.unwrap_or((self.patch_side as f64 / 8.0).round() as usize)
    }

    pub fn jitter_max(&self) -> usize {
        self.jitter_max.unwrap_or((self.patch_side as f64 / 16.0).round() as usize)
    }

    fn reach(&self) -> usize {
        self.patch_side + self.gap() + self.jitter_max()
    }
}

/// Pair count for a document set: `floor(h_a * w_a / p^2) * n_d`.
pub fn count_pairs(h_a: f64, w_a: f64, p: usize, n_d: usize) -> Result<usize> {
    if !(h_a > 0.0 && w_a > 0.0) || p == 0 || n_d == 0 {
        return Err(Error::invalid("count_pairs: all inputs must be positive"));
    }
    if p as f64 > h_a.min(w_a) {
        return Err(Error::invalid(format!(
            "patch side {p} exceeds average page size {h_a}x{w_a}"
        )));
    }
    Ok((h_a * w_a / (p * p) as f64).floor() as usize * n_d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairBudget {
    pub h_a: f64,
    pub w_a: f64,
    pub p: usize,
    pub n_d: usize,
    pub n_p: usize,
}

/// Summed-area table over an ink mask for O(1) window ink counts.
struct InkIntegral {
    w: usize,
    table: Vec<u32>,
}

impl InkIntegral {
    fn new(ink: &BinaryImage) -> Self {
        let (h, w) = ink.dims();
        let mut table = vec![0u32; (h + 1) * (w + 1)];
        for r in 0..h {
            let mut row = 0u32;
            for c in 0..w {
                row += ink.get(r, c) as u32;
                table[(r + 1) * (w + 1) + c + 1] = table[r * (w + 1) + c + 1] + row;
            }
        }
        InkIntegral { w, table }
    }

    fn count(&self, r: usize, c: usize, side: usize) -> u32 {
        let s = self.w + 1;
        let (r1, c1) = (r + side, c + side);
        self.table[r1 * s + c1] + self.table[r * s + c] - self.table[r * s + c1] - self.table[r1 * s + c]
    }
}

/// Reusable per-page sampling state.
pub struct PageSampler<'a> {
    doc: &'a DocumentImage,
    integral: InkIntegral,
    cfg: PairConfig,
}

impl<'a> PageSampler<'a> {
    pub fn new(doc: &'a DocumentImage, ink: &BinaryImage, cfg: &PairConfig) -> Result<Self> {
        if ink.dims() != doc.dims() {
            return Err(Error::invalid("ink mask dimensions differ from page"));
        }
        if cfg.patch_side == 0 {
            return Err(Error::Config("patch side must be positive".into()));
        }
        Ok(PageSampler {
            doc,
            integral: InkIntegral::new(ink),
            cfg: cfg.clone(),
        })
    }

    /// Directions whose neighbour fits on the page for every jitter draw.
    pub fn fitting_directions(&self, origin: (usize, usize)) -> Vec<Direction> {
        Direction::ALL
            .into_iter()
            .filter(|&d| self.fits(origin, d))
            .collect()
    }

    fn fits(&self, (r, c): (usize, usize), d: Direction) -> bool {
        let p = self.cfg.patch_side as i64;
        let reach = self.cfg.reach() as i64;
        let j = self.cfg.jitter_max() as i64;
        let (dr, dc) = d.signs();
        let axis_ok = |pos: i64, sign: i64, dim: i64| match sign {
            1 => pos + reach + p <= dim,
            -1 => pos - reach >= 0,
            _ => pos - j >= 0 && pos + j + p <= dim,
        };
        axis_ok(r as i64, dr, self.doc.height() as i64) && axis_ok(c as i64, dc, self.doc.width() as i64)
    }

    pub fn ink_ratio(&self, r: usize, c: usize) -> f64 {
        let p = self.cfg.patch_side;
        self.integral.count(r, c, p) as f64 / (p * p) as f64
    }

    /// Rejection-sample a first patch with enough ink and room for a neighbour.
    pub fn sample_first(&self, rng: &mut impl Rng) -> Result<Patch> {
        let p = self.cfg.patch_side;
        let (h, w) = self.doc.dims();
        if h < p || w < p {
            return Err(Error::PageTooSparse {
                min_ink_ratio: self.cfg.min_ink_ratio,
                attempts: 0,
            });
        }
        for _ in 0..self.cfg.max_attempts {
            let r = rng.gen_range(0..=h - p);
            let c = rng.gen_range(0..=w - p);
            if self.ink_ratio(r, c) >= self.cfg.min_ink_ratio && Direction::ALL.iter().any(|&d| self.fits((r, c), d)) {
                return Ok(Patch::from_page(self.doc, r, c, p));
            }
        }
        Err(Error::PageTooSparse {
            min_ink_ratio: self.cfg.min_ink_ratio,
            attempts: self.cfg.max_attempts,
        })
    }

    /// Neighbour in a uniformly chosen fitting direction.
    pub fn sample_neighbor(&self, first: &Patch, rng: &mut impl Rng) -> Result<(Patch, Direction)> {
        let dirs = self.fitting_directions(first.origin);
        let &d = dirs.choose(rng).ok_or(Error::NoNeighborFits)?;
        Ok((self.neighbor_in(first, d, rng)?, d))
    }

    pub fn neighbor_in(&self, first: &Patch, d: Direction, rng: &mut impl Rng) -> Result<Patch> {
        if !self.fits(first.origin, d) {
            return Err(Error::NoNeighborFits);
        }
        let p = self.cfg.patch_side as i64;
        let gap = self.cfg.gap() as i64;
        let j = self.cfg.jitter_max() as i64;
        let mut offset = |sign: i64| -> i64 {
            if sign == 0 {
                rng.gen_range(-j..=j)
            } else {
                sign * (p + gap + rng.gen_range(0..=j))
            }
        };
        let (dr, dc) = d.signs();
        let row = first.origin.0 as i64 + offset(dr);
        let col = first.origin.1 as i64 + offset(dc);
        Ok(Patch::from_page(self.doc, row as usize, col as usize, self.cfg.patch_side))
    }
}

pub fn sample_first_patch(doc: &DocumentImage, ink: &BinaryImage, cfg: &PairConfig, rng: &mut impl Rng) -> Result<Patch> {
    PageSampler::new(doc, ink, cfg)?.sample_first(rng)
}

pub fn sample_neighbor_patch(
    doc: &DocumentImage,
    ink: &BinaryImage,
    first: &Patch,
    cfg: &PairConfig,
    rng: &mut impl Rng,
) -> Result<(Patch, Direction)> {
    PageSampler::new(doc, ink, cfg)?.sample_neighbor(first, rng)
}

/// Label and transform the second patch. The augmentation is drawn uniformly.
pub fn make_pair(a: Patch, b: Patch, want_similar: bool, rng: &mut impl Rng) -> Result<PatchPair> {
    let aug = Augmentation::ALL[rng.gen_range(0..3)];
    make_pair_with(a, b, want_similar, aug)
}

pub fn make_pair_with(a: Patch, b: Patch, want_similar: bool, augmentation: Augmentation) -> Result<PatchPair> {
    if a.side != b.side {
        return Err(Error::invalid(format!("patch sides differ: {} vs {}", a.side, b.side)));
    }
    let (b, base, label) = if want_similar {
        (b, BaseRotation::Identity, PairLabel::Similar)
    } else {
        (
            b.transformed(|px, s| grid::rot90_ccw(px, s, s).0),
            BaseRotation::Rot90,
            PairLabel::Different,
        )
    };
    let b = match augmentation {
        Augmentation::Identity => b,
        Augmentation::Rot180 => b.transformed(|px, _| grid::rot180(px)),
        Augmentation::HFlip => b.transformed(|px, s| grid::hflip(px, s, s)),
    };
    Ok(PatchPair {
        a,
        b,
        label,
        transform: TransformRecord { base, augmentation },
    })
}

/// Everything needed to rebuild one pair from its page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub page: usize,
    pub a_origin: (usize, usize),
    pub b_origin: (usize, usize),
    pub direction: Direction,
    pub label: PairLabel,
    pub transform: TransformRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

/// Pair specs over a page set, materialized to pixels on demand.
#[derive(Debug, Clone)]
pub struct PairDataset {
    pages: Arc<Vec<DocumentImage>>,
    pub specs: Vec<PairSpec>,
    pub budget: PairBudget,
    patch_side: usize,
    /// Split per page index; `None` for pages that could not be sampled.
    pub page_split: Vec<Option<Split>>,
}

/// Derive a per-page seed from the master seed (splitmix64 finalizer).
pub fn page_seed(master: u64, page: usize) -> u64 {
    let mut z = master ^ (page as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn build_pair_dataset(docs: &[DocumentImage], cfg: &PairConfig, seed: u64) -> Result<PairDataset> {
    let p = cfg.patch_side;
    let inks: Vec<BinaryImage> = docs.iter().map(|d| binarize(d).0).collect();

    // a page is usable if a first patch and a neighbour can be drawn
    let mut usable = Vec::new();
    for (i, (doc, ink)) in docs.iter().zip(&inks).enumerate() {
        let sampler = PageSampler::new(doc, ink, cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(page_seed(seed, i));
        match sampler.sample_first(&mut rng) {
            Ok(_) => usable.push(i),
            Err(e) => log::warn!("page {} unusable for pairs: {e}", doc.id),
        }
    }
    if usable.is_empty() {
        return Err(Error::invalid("no usable pages for pair generation"));
    }
    let n_d = usable.len();
    let h_a = usable.iter().map(|&i| docs[i].height() as f64).sum::<f64>() / n_d as f64;
    let w_a = usable.iter().map(|&i| docs[i].width() as f64).sum::<f64>() / n_d as f64;
    let n_p = count_pairs(h_a, w_a, p, n_d)?;
    let per_page = n_p / n_d;

    let mut page_split = vec![None; docs.len()];
    let n_val = if n_d >= 2 && cfg.val_fraction > 0.0 {
        ((cfg.val_fraction * n_d as f64).round() as usize).clamp(1, n_d - 1)
    } else {
        0
    };
    let mut order = usable.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for (k, &i) in order.iter().enumerate() {
        page_split[i] = Some(if k < n_val { Split::Validation } else { Split::Train });
    }

    let mut specs = Vec::with_capacity(n_p);
    for &i in &usable {
        let sampler = PageSampler::new(&docs[i], &inks[i], cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(page_seed(seed, i));
        for _ in 0..per_page {
            let want_similar = specs.len() % 2 == 0;
            let a = sampler.sample_first(&mut rng)?;
            let (b, direction) = sampler.sample_neighbor(&a, &mut rng)?;
            let aug = Augmentation::ALL[rng.gen_range(0..3)];
            specs.push(PairSpec {
                page: i,
                a_origin: a.origin,
                b_origin: b.origin,
                direction,
                label: if want_similar { PairLabel::Similar } else { PairLabel::Different },
                transform: TransformRecord {
                    base: if want_similar { BaseRotation::Identity } else { BaseRotation::Rot90 },
                    augmentation: aug,
                },
            });
        }
    }
    Ok(PairDataset {
        pages: Arc::new(docs.to_vec()),
        specs,
        budget: PairBudget { h_a, w_a, p, n_d, n_p },
        patch_side: p,
        page_split,
    })
}

impl PairDataset {
    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn pages(&self) -> &[DocumentImage] {
        &self.pages
    }

    pub fn pair(&self, i: usize) -> PatchPair {
        let s = &self.specs[i];
        let doc = &self.pages[s.page];
        let a = Patch::from_page(doc, s.a_origin.0, s.a_origin.1, self.patch_side);
        let b = Patch::from_page(doc, s.b_origin.0, s.b_origin.1, self.patch_side);
        make_pair_with(a, b, s.label == PairLabel::Similar, s.transform.augmentation).expect("same side")
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.specs.len())
            .filter(|&i| self.page_split[self.specs[i].page] == Some(split))
            .collect()
    }

    /// Pair tiles (`pair_XXXXXX_a.png`, `_b.png`) plus `manifest.csv`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = dir.join("manifest.csv");
        let file = std::fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let mut w = csv::Writer::from_writer(file);
        let csv_err = |e: csv::Error| Error::Other(format!("writing manifest: {e}"));
        w.write_record([
            "pair_id", "page_id", "split", "a_row", "a_col", "b_row", "b_col", "direction", "base_rotation",
            "augmentation", "label",
        ])
        .map_err(csv_err)?;
        for i in 0..self.len() {
            let s = &self.specs[i];
            let pair = self.pair(i);
            for (tile, suffix) in [(&pair.a, "a"), (&pair.b, "b")] {
                let doc = DocumentImage::new(format!("{i}"), tile.side, tile.side, tile.pixels.clone())?;
                crate::doc_io::save_document_png(&doc, dir.join(format!("pair_{i:06}_{suffix}.png")))?;
            }
            let split = match self.page_split[s.page] {
                Some(Split::Validation) => "val",
                _ => "train",
            };
            w.write_record([
                i.to_string(),
                self.pages[s.page].id.clone(),
                split.to_string(),
                s.a_origin.0.to_string(),
                s.a_origin.1.to_string(),
                s.b_origin.0.to_string(),
                s.b_origin.1.to_string(),
                format!("{:?}", s.direction),
                format!("{:?}", s.transform.base),
                format!("{:?}", s.transform.augmentation),
                (s.label as u8).to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&manifest, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc_io::{generate_synthetic_page, SynthConfig};

    fn ink_page(h: usize, w: usize) -> (DocumentImage, BinaryImage) {
        let doc = DocumentImage::filled("ink", h, w, 0.0).unwrap();
        let ink = BinaryImage::new(h, w, vec![true; h * w]).unwrap();
        (doc, ink)
    }

    #[test]
    fn count_pairs_examples() {
        assert_eq!(count_pairs(1400.0, 1050.0, 350, 10).unwrap(), 120);
        assert_eq!(count_pairs(350.0, 350.0, 350, 1).unwrap(), 1);
        assert_eq!(count_pairs(700.0, 690.0, 350, 3).unwrap(), 9);
        assert!(count_pairs(300.0, 1000.0, 350, 1).is_err());
    }

    #[test]
    fn default_gap_and_jitter() {
        let cfg = PairConfig::default();
        assert_eq!((cfg.gap(), cfg.jitter_max()), (44, 22));
    }

    #[test]
    fn all_ink_first_draw_accepted() {
        let (doc, ink) = ink_page(1200, 1200);
        let cfg = PairConfig::default();
        let s = PageSampler::new(&doc, &ink, &cfg).unwrap();
        for seed in 0..50 {
            let mut r1 = ChaCha8Rng::seed_from_u64(seed);
            let mut r2 = ChaCha8Rng::seed_from_u64(seed);
            let p = s.sample_first(&mut r1).unwrap();
            // the first draw of an identical stream is the accepted origin
            let (row, col) = (r2.gen_range(0..=850usize), r2.gen_range(0..=850usize));
            assert_eq!(p.origin, (row, col));
        }
    }

    #[test]
    fn blank_page_too_sparse() {
        let doc = DocumentImage::filled("w", 800, 800, 1.0).unwrap();
        let ink = BinaryImage::empty(800, 800);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_first_patch(&doc, &ink, &PairConfig::default(), &mut rng),
            Err(Error::PageTooSparse { .. })
        ));
    }

    #[test]
    fn accepted_patches_meet_ink_ratio() {
        let page = generate_synthetic_page(&SynthConfig::default()).unwrap();
        let cfg = PairConfig {
            min_ink_ratio: 0.05,
            ..PairConfig::for_patch(64)
        };
        let s = PageSampler::new(&page.image, &page.ink, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let p = s.sample_first(&mut rng).unwrap();
            let ink = p.pixels.iter().filter(|&&v| v < 1.0).count() as f64 / (64.0 * 64.0);
            assert!(ink >= 0.05);
        }
    }

    #[test]
    fn east_neighbor_offsets() {
        let (doc, ink) = ink_page(1500, 1500);
        let cfg = PairConfig::default();
        let s = PageSampler::new(&doc, &ink, &cfg).unwrap();
        let first = Patch::from_page(&doc, 575, 575, 350);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let b = s.neighbor_in(&first, Direction::E, &mut rng).unwrap();
            let dc = b.origin.1 as i64 - 575;
            let dr = b.origin.0 as i64 - 575;
            assert!((394..=416).contains(&dc), "{dc}");
            assert!(dr.abs() <= 22);
        }
    }

    #[test]
    fn zero_jitter_south_is_exact() {
        let (doc, ink) = ink_page(800, 800);
        let cfg = PairConfig {
            gap: Some(0),
            jitter_max: Some(0),
            ..PairConfig::default()
        };
        let s = PageSampler::new(&doc, &ink, &cfg).unwrap();
        let first = Patch::from_page(&doc, 10, 100, 350);
        let b = s.neighbor_in(&first, Direction::S, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(b.origin, (360, 100));
    }

    #[test]
    fn neighbors_cover_all_directions_without_overlap() {
        let (doc, ink) = ink_page(1600, 1600);
        let cfg = PairConfig::default();
        let s = PageSampler::new(&doc, &ink, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..10_000 {
            let a = s.sample_first(&mut rng).unwrap();
            let (b, d) = s.sample_neighbor(&a, &mut rng).unwrap();
            seen.insert(d);
            let dr = (a.origin.0 as i64 - b.origin.0 as i64).abs();
            let dc = (a.origin.1 as i64 - b.origin.1 as i64).abs();
            assert!(dr.max(dc) >= 350 + 44, "{dr} {dc}");
        }
        assert_eq!(seen.len(), 8);
    }

    fn numbered(side: usize) -> Patch {
        Patch::new((0..side * side).map(|i| i as f32 / (side * side) as f32).collect(), side, (0, 0), "n").unwrap()
    }

    #[test]
    fn make_pair_rules() {
        let a = numbered(4);
        let b = numbered(4);
        let sim = make_pair_with(a.clone(), b.clone(), true, Augmentation::Identity).unwrap();
        assert_eq!(sim.b.pixels, b.pixels);
        assert_eq!(sim.label, PairLabel::Similar);

        let diff = make_pair_with(a.clone(), b.clone(), false, Augmentation::Identity).unwrap();
        assert_eq!(diff.label, PairLabel::Different);
        let s = 4;
        for r in 0..s {
            for c in 0..s {
                // counter-clockwise: out[r][c] = in[c][s-1-r]
                assert_eq!(diff.b.pixels[r * s + c], b.pixels[c * s + (s - 1 - r)]);
            }
        }

        let d180 = make_pair_with(a, b.clone(), false, Augmentation::Rot180).unwrap();
        for r in 0..s {
            for c in 0..s {
                // 270 ccw == 90 cw: out[r][c] = in[s-1-c][r]
                assert_eq!(d180.b.pixels[r * s + c], b.pixels[(s - 1 - c) * s + r]);
            }
        }
        assert!(make_pair_with(numbered(4), numbered(5), true, Augmentation::Identity).is_err());
    }

    #[test]
    fn label_matches_transform_and_augmentation_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 3];
        for i in 0..10_000 {
            let pair = make_pair(numbered(3), numbered(3), i % 2 == 0, &mut rng).unwrap();
            assert_eq!(pair.label == PairLabel::Different, pair.transform.base == BaseRotation::Rot90);
            counts[pair.transform.augmentation as usize] += 1;
        }
        // 3 sigma of a binomial(10000, 1/3)
        let sigma = (10_000.0f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((c as f64 - 10_000.0 / 3.0).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    /// Dark page with one white pixel, so Otsu marks nearly everything as ink.
    fn dark_page(h: usize, w: usize) -> DocumentImage {
        let mut px = vec![0.0; h * w];
        px[0] = 1.0;
        DocumentImage::new("dark", h, w, px).unwrap()
    }

    #[test]
    fn single_page_budget() {
        let doc = dark_page(700, 700);
        let cfg = PairConfig {
            gap: Some(0),
            jitter_max: Some(0),
            ..PairConfig::default()
        };
        let ds = build_pair_dataset(&[doc], &cfg, 1).unwrap();
        assert_eq!(ds.budget.n_p, 4);
        assert_eq!(ds.len(), 4);
        let sim = ds.specs.iter().filter(|s| s.label == PairLabel::Similar).count();
        assert_eq!(sim, 2);
    }

    #[test]
    fn dataset_deterministic_balanced_and_page_split() {
        let pages: Vec<DocumentImage> = (0..100)
            .map(|seed| {
                generate_synthetic_page(&SynthConfig {
                    seed,
                    height: 256,
                    width: 256,
                    ..Default::default()
                })
                .unwrap()
                .image
            })
            .collect();
        let cfg = PairConfig::for_patch(48);
        let a = build_pair_dataset(&pages, &cfg, 5).unwrap();
        let b = build_pair_dataset(&pages, &cfg, 5).unwrap();
        assert_eq!(a.specs, b.specs);
        assert_eq!(a.len(), a.budget.n_p);
        let sim = a.specs.iter().filter(|s| s.label == PairLabel::Similar).count() as i64;
        assert!((2 * sim - a.len() as i64).abs() <= 1);
        let train = a.split_indices(Split::Train);
        let val = a.split_indices(Split::Validation);
        assert_eq!(train.len() + val.len(), a.len());
        let train_pages: std::collections::HashSet<_> = train.iter().map(|&i| a.specs[i].page).collect();
        assert!(val.iter().all(|&i| !train_pages.contains(&a.specs[i].page)));
        assert!(!val.is_empty());
        let pair = a.pair(0);
        assert_eq!(pair.a.source_id, pair.b.source_id);
    }

    #[test]
    fn manifest_written() {
        let doc = dark_page(140, 140);
        let cfg = PairConfig {
            gap: Some(0),
            jitter_max: Some(0),
            ..PairConfig::for_patch(32)
        };
        let ds = build_pair_dataset(&[doc], &cfg, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write_to_dir(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
        assert_eq!(text.lines().count(), ds.len() + 1);
        assert!(dir.path().join("pair_000000_b.png").exists());
    }
}
