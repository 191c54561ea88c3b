//! Row-major 2-D buffer transforms shared by pages, patches and label maps.

/// Rotate 90 degrees counter-clockwise. Returns the buffer and its new `(height, width)`.
pub fn rot90_ccw<T: Copy>(data: &[T], h: usize, w: usize) -> (Vec<T>, usize, usize) {
    debug_assert_eq!(data.len(), h * w);
    let (nh, nw) = (w, h);
    let mut out = Vec::with_capacity(data.len());
    for r in 0..nh {
        for c in 0..nw {
            out.push(data[c * w + (w - 1 - r)]);
        }
    }
    (out, nh, nw)
}

/// Rotate 90 degrees clockwise.
pub fn rot90_cw<T: Copy>(data: &[T], h: usize, w: usize) -> (Vec<T>, usize, usize) {
    debug_assert_eq!(data.len(), h * w);
    let (nh, nw) = (w, h);
    let mut out = Vec::with_capacity(data.len());
    for r in 0..nh {
        for c in 0..nw {
            out.push(data[(h - 1 - c) * w + r]);
        }
    }
    (out, nh, nw)
}

pub fn rot180<T: Copy>(data: &[T]) -> Vec<T> {
    data.iter().rev().copied().collect()
}

/// Mirror across the vertical axis.
pub fn hflip<T: Copy>(data: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for r in 0..h {
        out.extend(data[r * w..(r + 1) * w].iter().rev());
    }
    out
}

/// 8-connected labeling of a boolean mask. Labels run 1..=count in order of
/// each component's first pixel in row-major scan; background is 0.
pub fn label_components_8(mask: &[bool], h: usize, w: usize) -> (Vec<u32>, u32) {
    debug_assert_eq!(mask.len(), h * w);
    let mut labels = vec![0u32; h * w];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if mask[j] && labels[j] == 0 {
                        labels[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    (labels, next)
}
