//! Deterministic synthetic "printed" pages: rows of pseudo-glyphs along skewed
//! baselines, with per-pixel line labels and PAGE-style bounding polygons.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BinaryImage, DocumentImage, LabelMap, LineGroundTruth, BACKGROUND};
use crate::error::{Error, Result};

/// Clearance between ink and the line's polygon, px.
const POLY_MARGIN: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Blank border on every side, px.
    pub margin: usize,
    /// Inclusive range of lines to attempt.
    pub line_count: [usize; 2],
    /// Inclusive range of glyph body (x-height), px.
    pub line_height: [usize; 2],
    /// Inclusive range of blank space between consecutive line polygons, px.
    pub line_spacing: [usize; 2],
    /// Probability of each optional glyph stroke, in (0, 1].
    pub ink_density: f64,
    /// Inclusive per-line skew range, degrees.
    pub skew_deg: [f64; 2],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 384,
            width: 384,
            margin: 10,
            line_count: [6, 12],
            line_height: [10, 14],
            line_spacing: [12, 18],
            ink_density: 0.8,
            skew_deg: [-2.0, 2.0],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.line_count[0] > self.line_count[1]
            || self.line_height[0] > self.line_height[1]
            || self.line_spacing[0] > self.line_spacing[1]
            || self.skew_deg[0] > self.skew_deg[1]
        {
            return bad("empty range");
        }
        if self.skew_deg[0] < -5.0 || self.skew_deg[1] > 5.0 {
            return bad("skew range must lie within [-5, 5] degrees");
        }
        if self.line_height[0] < 4 {
            return bad("line height must be at least 4 px");
        }
        if self.line_spacing[0] < 6 {
            return bad("line spacing must be at least 6 px");
        }
        if !(self.ink_density > 0.0 && self.ink_density <= 1.0) {
            return bad("ink density must be in (0, 1]");
        }
        if self.margin < 3 || 2 * self.margin + 8 >= self.width || 2 * self.margin + 8 >= self.height {
            return bad("margin must be >= 3 and leave room for text");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthPage {
    pub image: DocumentImage,
    /// Line label per ink pixel, 0 elsewhere.
    pub labels: LabelMap,
    pub lines: Vec<LineGroundTruth>,
    /// Exactly the pixels the renderer inked.
    pub ink: BinaryImage,
    pub requested_lines: usize,
}

struct Canvas {
    h: usize,
    w: usize,
    pixels: Vec<f32>,
    labels: Vec<u32>,
}

impl Canvas {
    fn ink(&mut self, r: i64, c: i64, value: f32, label: u32) {
        if r < 0 || c < 0 || r as usize >= self.h || c as usize >= self.w {
            return;
        }
        let i = r as usize * self.w + c as usize;
        self.pixels[i] = value;
        self.labels[i] = label;
    }
}

#[derive(Clone, Copy)]
enum GlyphKind {
    Body,
    Ascender,
    Descender,
}

pub fn generate_synthetic_page(cfg: &SynthConfig) -> Result<SynthPage> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (h, w) = (cfg.height, cfg.width);
    let mut canvas = Canvas {
        h,
        w,
        pixels: vec![BACKGROUND; h * w],
        labels: vec![0; h * w],
    };
    let requested = rng.gen_range(cfg.line_count[0]..=cfg.line_count[1]);
    let x_lo = cfg.margin as i64;
    let x_hi = (w - cfg.margin) as i64;
    let mut cursor = cfg.margin as f64;
    let mut lines = Vec::new();

    for _ in 0..requested {
        let xh = rng.gen_range(cfg.line_height[0]..=cfg.line_height[1]) as i64;
        let asc = (xh as f64 * 0.5).round() as i64;
        let desc = (xh as f64 * 0.4).round() as i64;
        let slope = rng.gen_range(cfg.skew_deg[0]..=cfg.skew_deg[1]).to_radians().tan();
        let spacing = rng.gen_range(cfg.line_spacing[0]..=cfg.line_spacing[1]) as f64;
        let x_start = x_lo + rng.gen_range(0..=xh / 2);
        let span = (x_hi - x_start) as f64;
        let frac = if rng.gen_bool(0.2) {
            rng.gen_range(0.4..0.8)
        } else {
            rng.gen_range(0.9..=1.0)
        };
        let limit = x_start + (span * frac) as i64;

        // lay out glyphs before knowing the vertical position
        let mut glyphs = Vec::new();
        let mut x = x_start;
        'words: loop {
            let n = rng.gen_range(2..=7);
            for _ in 0..n {
                let gw = rng.gen_range((xh * 2 / 5).max(2)..=(xh * 9 / 10).max(3));
                if x + gw > limit {
                    break 'words;
                }
                let kind = match rng.gen_range(0..20) {
                    0..=11 => GlyphKind::Body,
                    12..=16 => GlyphKind::Ascender,
                    _ => GlyphKind::Descender,
                };
                let strokes = [
                    rng.gen_bool(cfg.ink_density * 0.8),
                    rng.gen_bool(cfg.ink_density * 0.8),
                    rng.gen_bool(cfg.ink_density * 0.6),
                ];
                let value = rng.gen_range(0.0f32..0.2);
                glyphs.push((x, gw, kind, strokes, value));
                x += gw + rng.gen_range(1..=2);
            }
            x += rng.gen_range((xh * 3 / 5).max(2)..=xh.max(3));
        }
        let Some(&(last_x, last_w, ..)) = glyphs.last() else {
            break;
        };
        let x_end = last_x + last_w;
        let drift = slope * (x_end - x_start) as f64;
        let baseline = (cursor + POLY_MARGIN + (xh + asc) as f64 - drift.min(0.0)).ceil();
        let poly_bottom = (baseline + desc as f64 + drift.max(0.0)).ceil() + POLY_MARGIN;
        if poly_bottom > (h - cfg.margin) as f64 {
            break;
        }

        let label = lines.len() as u32 + 1;
        let thick = ((xh as f64 * 0.15).round() as i64).max(1);
        let body_top = baseline as i64 - xh;
        for &(gx, gw, kind, strokes, value) in &glyphs {
            let (stem_top, stem_bot) = match kind {
                GlyphKind::Body => (body_top, baseline as i64),
                GlyphKind::Ascender => (body_top - asc, baseline as i64),
                GlyphKind::Descender => (body_top, baseline as i64 + desc),
            };
            let mut put = |r: i64, c: i64| {
                let shift = (slope * (c - x_start) as f64).round() as i64;
                canvas.ink(r + shift, c, value, label);
            };
            for c in gx..gx + thick.min(gw) {
                for r in stem_top..stem_bot {
                    put(r, c);
                }
            }
            if strokes[0] {
                for c in gx..gx + gw {
                    for r in body_top..body_top + thick {
                        put(r, c);
                    }
                }
            }
            if strokes[1] {
                for c in gx..gx + gw {
                    for r in baseline as i64 - thick..baseline as i64 {
                        put(r, c);
                    }
                }
            }
            if strokes[2] {
                for c in gx + gw - thick.min(gw)..gx + gw {
                    for r in body_top..baseline as i64 {
                        put(r, c);
                    }
                }
            }
        }

        let top_at = |x: f64| (baseline - (xh + asc) as f64 + slope * (x - x_start as f64)).floor() - POLY_MARGIN;
        let bot_at = |x: f64| (baseline + desc as f64 + slope * (x - x_start as f64)).ceil() + POLY_MARGIN;
        let xl = (x_start as f64 - POLY_MARGIN).max(0.0);
        let xr = (x_end as f64 + POLY_MARGIN).min(w as f64);
        lines.push(LineGroundTruth {
            line_id: format!("line_{label}"),
            polygon: vec![
                (xl as i64, top_at(xl) as i64),
                (xr as i64, top_at(xr) as i64),
                (xr as i64, bot_at(xr) as i64),
                (xl as i64, bot_at(xl) as i64),
            ],
            region_id: Some("region_1".into()),
        });
        cursor = poly_bottom + spacing;
    }

    if lines.len() < requested {
        log::info!(
            "synthetic page seed {}: {} of {} lines fit",
            cfg.seed,
            lines.len(),
            requested
        );
    }
    let ink = BinaryImage::new(h, w, canvas.labels.iter().map(|&l| l != 0).collect())?;
    let image = DocumentImage::new(format!("synth_{:06}", cfg.seed), h, w, canvas.pixels)?;
    let labels = LabelMap::new(h, w, canvas.labels)?;
    Ok(SynthPage {
        image,
        labels,
        lines,
        ink,
        requested_lines: requested,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc_io::{binarize, rasterize_ground_truth};

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig {
            seed: 7,
            ..Default::default()
        };
        let a = generate_synthetic_page(&cfg).unwrap();
        let b = generate_synthetic_page(&cfg).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.lines, b.lines);
        let c = generate_synthetic_page(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn exact_line_count() {
        let cfg = SynthConfig {
            line_count: [5, 5],
            seed: 3,
            ..Default::default()
        };
        let page = generate_synthetic_page(&cfg).unwrap();
        assert_eq!(page.labels.distinct(), vec![1, 2, 3, 4, 5]);
        assert_eq!(page.lines.len(), 5);
    }

    #[test]
    fn too_many_lines_are_truncated() {
        let cfg = SynthConfig {
            height: 120,
            line_count: [20, 20],
            ..Default::default()
        };
        let page = generate_synthetic_page(&cfg).unwrap();
        assert_eq!(page.requested_lines, 20);
        assert!(page.lines.len() < 20 && !page.lines.is_empty());
    }

    #[test]
    fn labels_cover_exactly_the_ink() {
        for seed in 0..5 {
            let page = generate_synthetic_page(&SynthConfig {
                seed,
                skew_deg: [-5.0, 5.0],
                ..Default::default()
            })
            .unwrap();
            for (i, &l) in page.labels.labels().iter().enumerate() {
                assert_eq!(l != 0, page.ink.mask()[i]);
                assert_eq!(l != 0, page.image.pixels()[i] < 1.0);
            }
        }
    }

    #[test]
    fn every_ink_pixel_in_exactly_one_polygon() {
        for seed in 0..8 {
            let page = generate_synthetic_page(&SynthConfig {
                seed,
                skew_deg: [-5.0, 5.0],
                ..Default::default()
            })
            .unwrap();
            let (h, w) = page.image.dims();
            // per-polygon brute-force containment
            let mut hits = vec![0u32; h * w];
            let mut owner = vec![0u32; h * w];
            for (k, line) in page.lines.iter().enumerate() {
                let r = rasterize_ground_truth(std::slice::from_ref(line), h, w);
                for (i, &l) in r.labels.labels().iter().enumerate() {
                    if l != 0 {
                        hits[i] += 1;
                        owner[i] = k as u32 + 1;
                    }
                }
            }
            for i in 0..h * w {
                if page.ink.mask()[i] {
                    assert_eq!(hits[i], 1, "seed {seed} pixel {i}");
                    assert_eq!(owner[i], page.labels.labels()[i]);
                }
            }
            let all = rasterize_ground_truth(&page.lines, h, w);
            assert_eq!(all.overlap_pixels, 0);
        }
    }

    #[test]
    fn otsu_recovers_generator_ink() {
        let page = generate_synthetic_page(&SynthConfig::default()).unwrap();
        let (mask, _) = binarize(&page.image);
        let agree = mask
            .mask()
            .iter()
            .zip(page.ink.mask())
            .filter(|(a, b)| a == b)
            .count();
        assert!(agree as f64 >= 0.99 * mask.mask().len() as f64);
    }

    #[test]
    fn rejects_steep_skew() {
        let cfg = SynthConfig {
            skew_deg: [-8.0, 0.0],
            ..Default::default()
        };
        assert!(generate_synthetic_page(&cfg).is_err());
    }
}
