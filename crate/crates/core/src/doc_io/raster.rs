use super::{LabelMap, LineGroundTruth};

#[derive(Debug, Clone)]
pub struct Rasterized {
    pub labels: LabelMap,
    /// Pixels claimed by more than one polygon (the later line keeps them).
    pub overlap_pixels: usize,
    /// Ids of lines whose polygon covers no pixel of the page.
    pub outside_lines: Vec<String>,
}

/// Paint polygon `k` as label `k+1`. A pixel is inside when its center
/// `(col+0.5, row+0.5)` is inside under the even-odd rule.
pub fn rasterize_ground_truth(lines: &[LineGroundTruth], height: usize, width: usize) -> Rasterized {
    let mut labels = LabelMap::zeros(height, width);
    let mut overlap_pixels = 0;
    let mut outside_lines = Vec::new();
    for (k, line) in lines.iter().enumerate() {
        let label = k as u32 + 1;
        let mut painted = 0usize;
        scanline_fill(&line.polygon, height, width, |r, c| {
            let prev = labels.get(r, c);
            if prev != 0 && prev != label {
                overlap_pixels += 1;
            }
            labels.set(r, c, label);
            painted += 1;
        });
        if painted == 0 {
            log::warn!("line {} lies outside the page", line.line_id);
            outside_lines.push(line.line_id.clone());
        }
    }
    Rasterized {
        labels,
        overlap_pixels,
        outside_lines,
    }
}

/// Calls `visit(row, col)` for every pixel whose center is inside `poly` (even-odd).
pub(crate) fn scanline_fill(poly: &[(i64, i64)], height: usize, width: usize, mut visit: impl FnMut(usize, usize)) {
    if poly.len() < 3 {
        return;
    }
    let ys = poly.iter().map(|p| p.1);
    let (ymin, ymax) = (ys.clone().min().unwrap(), ys.max().unwrap());
    let r_lo = ymin.max(0) as usize;
    let r_hi = (ymax.max(0) as usize).min(height);
    let mut xs: Vec<f64> = Vec::new();
    for r in r_lo..r_hi {
        let y = r as f64 + 0.5;
        xs.clear();
        for i in 0..poly.len() {
            let (x0, y0) = (poly[i].0 as f64, poly[i].1 as f64);
            let (x1, y1) = {
                let p = poly[(i + 1) % poly.len()];
                (p.0 as f64, p.1 as f64)
            };
            // half-open rule on y avoids double-counting shared vertices
            if (y0 <= y) != (y1 <= y) {
                xs.push(x0 + (y - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in xs.chunks_exact(2) {
            // pixel centers c+0.5 in [pair[0], pair[1])
            let c_lo = (pair[0] - 0.5).ceil() as i64;
            let c_hi = (pair[1] - 0.5).ceil() as i64 - 1;
            let c_lo = c_lo.max(0);
            let c_hi = c_hi.min(width as i64 - 1);
            for c in c_lo..=c_hi {
                visit(r, c as usize);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(id: &str, x0: i64, y0: i64, x1: i64, y1: i64) -> LineGroundTruth {
        LineGroundTruth {
            line_id: id.into(),
            polygon: vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)],
            region_id: None,
        }
    }

    /// Crossing-number test on the pixel center, independent of the scanline code.
    fn inside(poly: &[(i64, i64)], px: f64, py: f64) -> bool {
        let mut c = false;
        let n = poly.len();
        for i in 0..n {
            let (xi, yi) = (poly[i].0 as f64, poly[i].1 as f64);
            let (xj, yj) = (poly[(i + n - 1) % n].0 as f64, poly[(i + n - 1) % n].1 as f64);
            if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                c = !c;
            }
        }
        c
    }

    #[test]
    fn rectangle_area() {
        let r = rasterize_ground_truth(&[rect("a", 0, 0, 10, 5)], 20, 20);
        assert_eq!(r.labels.labels().iter().filter(|&&l| l == 1).count(), 50);
        assert_eq!(r.overlap_pixels, 0);
    }

    #[test]
    fn no_lines_all_zero() {
        let r = rasterize_ground_truth(&[], 4, 4);
        assert!(r.labels.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn disjoint_shapes_match_point_in_polygon() {
        let tri = LineGroundTruth {
            line_id: "t".into(),
            polygon: vec![(3, 20), (25, 14), (17, 33)],
            region_id: None,
        };
        let lines = vec![rect("a", 2, 2, 14, 9), tri];
        let r = rasterize_ground_truth(&lines, 40, 40);
        for row in 0..40 {
            for col in 0..40 {
                let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
                let mut want = 0;
                for (k, l) in lines.iter().enumerate() {
                    if inside(&l.polygon, px, py) {
                        want = k as u32 + 1;
                    }
                }
                assert_eq!(r.labels.get(row, col), want, "({row},{col})");
            }
        }
    }

    #[test]
    fn outside_polygon_warns() {
        let r = rasterize_ground_truth(&[rect("far", 100, 100, 110, 110)], 10, 10);
        assert_eq!(r.outside_lines, vec!["far".to_string()]);
    }

    #[test]
    fn overlap_later_wins() {
        let r = rasterize_ground_truth(&[rect("a", 0, 0, 4, 4), rect("b", 2, 0, 6, 4)], 4, 8);
        assert_eq!(r.overlap_pixels, 8);
        assert_eq!(r.labels.get(0, 2), 2);
    }
}
