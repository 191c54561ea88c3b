use super::{BinaryImage, DocumentImage};

const BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinarizeStatus {
    /// Foreground is everything at or below `threshold`.
    Ok { threshold: f32 },
    /// Constant image: no threshold exists, mask is empty.
    Constant,
}

/// Otsu's threshold over a 256-bin histogram spanning `[min, max]` of `values`.
///
/// Returns the largest value assigned to the dark class, or `None` for constant input.
pub fn otsu_threshold(values: &[f32]) -> Option<f32> {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return None;
    }
    let scale = (BINS - 1) as f32 / (hi - lo);
    let mut hist = [0u64; BINS];
    for &v in values {
        hist[bin_of(v, lo, scale)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &n)| i as f64 * n as f64).sum();

    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (t, &n) in hist.iter().enumerate().take(BINS - 1) {
        w0 += n as f64;
        sum0 += t as f64 * n as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, t);
        }
    }
    Some(lo + best.1 as f32 / scale)
}

#[inline]
fn bin_of(v: f32, lo: f32, scale: f32) -> usize {
    (((v - lo) * scale).round() as usize).min(BINS - 1)
}

/// Otsu split of `values` into the low class (`true`) and high class, compared
/// in histogram-bin space so values sharing the threshold bin classify alike.
/// `None` for constant input.
pub fn otsu_split(values: &[f32]) -> Option<(Vec<bool>, f32)> {
    let threshold = otsu_threshold(values)?;
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let scale = (BINS - 1) as f32 / (hi - lo);
    let t_bin = bin_of(threshold, lo, scale);
    Some((values.iter().map(|&v| bin_of(v, lo, scale) <= t_bin).collect(), threshold))
}

/// Global Otsu binarization; ink is the darker class.
pub fn binarize(doc: &DocumentImage) -> (BinaryImage, BinarizeStatus) {
    let (h, w) = doc.dims();
    let Some((mask, threshold)) = otsu_split(doc.pixels()) else {
        log::warn!("page {}: constant intensity, empty foreground", doc.id);
        return (BinaryImage::empty(h, w), BinarizeStatus::Constant);
    };
    (
        BinaryImage::new(h, w, mask).expect("dims"),
        BinarizeStatus::Ok { threshold },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bimodal_half_and_half() {
        let mut px = vec![0.1f32; 50];
        px.extend(vec![0.9f32; 50]);
        let doc = DocumentImage::new("b", 10, 10, px).unwrap();
        let (mask, status) = binarize(&doc);
        assert!(matches!(status, BinarizeStatus::Ok { .. }));
        for (i, &m) in mask.mask().iter().enumerate() {
            assert_eq!(m, i < 50);
        }
    }

    #[test]
    fn white_page_is_empty() {
        let doc = DocumentImage::filled("w", 8, 8, 1.0).unwrap();
        let (mask, status) = binarize(&doc);
        assert_eq!(status, BinarizeStatus::Constant);
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn three_levels_split_at_widest_gap() {
        let px: Vec<f32> = (0..90).map(|i| [0.0, 0.15, 1.0][i % 3]).collect();
        let doc = DocumentImage::new("t", 9, 10, px).unwrap();
        let (mask, _) = binarize(&doc);
        assert_eq!(mask.count(), 60);
    }
}
