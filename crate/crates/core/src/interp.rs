//! Grid resampling: bilinear for soft maps and masks, nearest for label grids.
//!
//! Bilinear sampling uses half-pixel centers: output cell `i` samples source
//! coordinate `(i + 0.5) * in / out - 0.5`, clamped to the source extent. Every
//! output value is a convex combination of at most four source values.

use crate::types::{ClassMask, SoftMask};

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

/// Resizes a row-major `in_h x in_w` grid to `out_h x out_w`.
pub fn bilinear_resize(
    src: &[f64],
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    assert_eq!(src.len(), in_h * in_w, "source grid size");
    let rows = taps(in_h, out_h);
    let cols = taps(in_w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in &rows {
        let top = &src[r.lo * in_w..(r.lo + 1) * in_w];
        let bottom = &src[r.hi * in_w..(r.hi + 1) * in_w];
        for c in &cols {
            let t = top[c.lo] + (top[c.hi] - top[c.lo]) * c.frac;
            let b = bottom[c.lo] + (bottom[c.hi] - bottom[c.lo]) * c.frac;
            out.push(t + (b - t) * r.frac);
        }
    }
    out
}

/// Bilinearly resamples the indicator of `class_id` to `(h, w)`.
///
/// Ignore pixels count as non-members of every class.
pub fn soft_class_plane(mask: &ClassMask, class_id: u8, h: usize, w: usize) -> SoftMask {
    let indicator: Vec<f64> = mask
        .labels()
        .iter()
        .map(|&l| if l == class_id { 1.0 } else { 0.0 })
        .collect();
    let values = if mask.size() == (h, w) {
        indicator
    } else {
        bilinear_resize(&indicator, mask.height(), mask.width(), h, w)
    };
    SoftMask {
        height: h,
        width: w,
        class_id,
        values,
    }
}

/// Nearest-neighbor label resampling, sampling each output cell at its center.
pub fn nearest_resize(mask: &ClassMask, h: usize, w: usize) -> ClassMask {
    if mask.size() == (h, w) {
        return mask.clone();
    }
    let pick = |i: usize, out: usize, src: usize| -> usize {
        (((i as f64 + 0.5) * src as f64 / out as f64).floor() as usize).min(src - 1)
    };
    let mut labels = Vec::with_capacity(h * w);
    for r in 0..h {
        let sr = pick(r, h, mask.height());
        for c in 0..w {
            labels.push(mask.get(sr, pick(c, w, mask.width())));
        }
    }
    ClassMask::new(h, w, labels).expect("resampled mask has consistent size")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constants_are_preserved() {
        let out = bilinear_resize(&[0.3; 6], 2, 3, 7, 5);
        assert!(out.iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn two_by_two_to_two_by_three_midpoint() {
        let out = bilinear_resize(&[0.0, 1.0, 0.0, 1.0], 2, 2, 2, 3);
        assert_abs_diff_eq!(out[1], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(out[4], 0.5, epsilon = 1e-6);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[2], 1.0);
    }

    #[test]
    fn one_patch_block_downsamples_to_exact_one() {
        // 8x8 pixels, top-left 4x4 block is class 3 -> 2x2 patch grid
        let labels: Vec<u8> = (0..64)
            .map(|i| if i / 8 < 4 && i % 8 < 4 { 3 } else { 0 })
            .collect();
        let mask = ClassMask::new(8, 8, labels).unwrap();
        let soft = soft_class_plane(&mask, 3, 2, 2);
        assert_eq!(soft.values, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn nearest_picks_block_centers() {
        let labels: Vec<u8> = (0..16).map(|i| (i / 4 / 2 * 2 + i % 4 / 2) as u8).collect();
        let mask = ClassMask::new(4, 4, labels).unwrap();
        assert_eq!(nearest_resize(&mask, 2, 2).labels(), &[0, 1, 2, 3]);
    }
}
