//! Spatial reduction: box low-pass filter, threshold segmentation and
//! bounding-box cropping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::SliceImage;

/// One boolean per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimensions { height, width });
        }
        if bits.len() != height * width {
            return Err(Error::PixelCount {
                want: height * width,
                got: bits.len(),
            });
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                bits.push(f(i, j));
            }
        }
        Self {
            height,
            width,
            bits,
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub(crate) fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.width + j] = v;
    }

    pub fn count(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Renders set bits as 255 and clear bits as 0.
    pub fn to_image(&self) -> SliceImage {
        let px = self.bits.iter().map(|&b| if b { 255.0 } else { 0.0 }).collect();
        SliceImage::new(self.height, self.width, px).expect("mask dims are valid")
    }
}

/// Inclusive axis-aligned bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl CropRect {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            row_min: 0,
            row_max: height - 1,
            col_min: 0,
            col_max: width - 1,
        }
    }

    pub fn height(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn width(&self) -> usize {
        self.col_max - self.col_min + 1
    }

    pub fn area(&self) -> u64 {
        (self.height() * self.width()) as u64
    }

    /// Smallest rect containing both.
    pub fn union(&self, other: &CropRect) -> CropRect {
        CropRect {
            row_min: self.row_min.min(other.row_min),
            row_max: self.row_max.max(other.row_max),
            col_min: self.col_min.min(other.col_min),
            col_max: self.col_max.max(other.col_max),
        }
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.row_min <= self.row_max
            && self.col_min <= self.col_max
            && self.row_max < height
            && self.col_max < width
    }
}

/// Uniform-weight mean over the `(2k+1) x (2k+1)` neighbourhood. Pixels
/// outside the image drop out of both the sum and the count, so the window
/// shrinks at the borders instead of pulling in zeros.
pub fn lowpass_filter(img: &SliceImage, k: usize) -> SliceImage {
    let (h, w) = img.dims();
    let px = img.pixels();
    // Column sums over the current row window, updated incrementally, then a
    // prefix sum along each row.
    let mut col = vec![0f64; w];
    let mut prefix = vec![0f64; w + 1];
    let (mut lo, mut hi) = (0usize, 0usize);
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        let r0 = i.saturating_sub(k);
        let r1 = (i + k).min(h - 1) + 1;
        while hi < r1 {
            for (c, &v) in col.iter_mut().zip(&px[hi * w..(hi + 1) * w]) {
                *c += v as f64;
            }
            hi += 1;
        }
        while lo < r0 {
            for (c, &v) in col.iter_mut().zip(&px[lo * w..(lo + 1) * w]) {
                *c -= v as f64;
            }
            lo += 1;
        }
        for j in 0..w {
            prefix[j + 1] = prefix[j] + col[j];
        }
        let rows = (r1 - r0) as f64;
        let edge = |j: usize| {
            let c0 = j.saturating_sub(k);
            let c1 = (j + k).min(w - 1) + 1;
            ((prefix[c1] - prefix[c0]) / (rows * (c1 - c0) as f64)) as f32
        };
        if w > 2 * k {
            let full = rows * (2 * k + 1) as f64;
            out.extend((0..k).map(edge));
            out.extend(
                prefix[2 * k + 1..]
                    .iter()
                    .zip(&prefix[..w - 2 * k])
                    .map(|(a, b)| ((a - b) / full) as f32),
            );
            out.extend((w - k..w).map(edge));
        } else {
            out.extend((0..w).map(edge));
        }
    }
    SliceImage::new(h, w, out).expect("dims preserved")
}

/// Sets a bit wherever the filtered intensity is at least `t`.
pub fn segment(filtered: &SliceImage, t: f32) -> BinaryMask {
    let (h, w) = filtered.dims();
    let bits = filtered.pixels().iter().map(|&v| v >= t).collect();
    BinaryMask {
        height: h,
        width: w,
        bits,
    }
}

/// Tight bounding box of the set bits.
pub fn crop_rect(mask: &BinaryMask) -> Result<CropRect> {
    let (h, w) = mask.dims();
    let mut rect: Option<CropRect> = None;
    for i in 0..h {
        let row = &mask.bits[i * w..(i + 1) * w];
        let Some(first) = row.iter().position(|&b| b) else {
            continue;
        };
        let last = row.iter().rposition(|&b| b).unwrap_or(first);
        let r = rect.get_or_insert(CropRect {
            row_min: i,
            row_max: i,
            col_min: first,
            col_max: last,
        });
        r.row_max = i;
        r.col_min = r.col_min.min(first);
        r.col_max = r.col_max.max(last);
    }
    rect.ok_or(Error::EmptyMask)
}

pub fn apply_crop(img: &SliceImage, rect: &CropRect) -> Result<SliceImage> {
    let (h, w) = img.dims();
    if !rect.fits(h, w) {
        return Err(Error::CropOutOfBounds {
            rect: *rect,
            height: h,
            width: w,
        });
    }
    let mut px = Vec::with_capacity(rect.height() * rect.width());
    for i in rect.row_min..=rect.row_max {
        px.extend_from_slice(&img.pixels()[i * w + rect.col_min..=i * w + rect.col_max]);
    }
    SliceImage::new(rect.height(), rect.width(), px)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256StarStar;

    fn brute_filter(img: &SliceImage, k: usize, i: usize, j: usize) -> f64 {
        let (h, w) = img.dims();
        let (mut sum, mut n) = (0.0, 0.0);
        for p in -(k as isize)..=k as isize {
            for q in -(k as isize)..=k as isize {
                let (r, c) = (i as isize + p, j as isize + q);
                if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                    sum += img.get(r as usize, c as usize) as f64;
                    n += 1.0;
                }
            }
        }
        sum / n
    }

    fn random_image(h: usize, w: usize, seed: u64) -> SliceImage {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let px = (0..h * w).map(|_| rng.random_range(0..=255u8) as f32).collect();
        SliceImage::new(h, w, px).unwrap()
    }

    #[test]
    fn filter_constant() {
        let img = SliceImage::filled(13, 9, 7.0).unwrap();
        for k in 1..6 {
            assert!(lowpass_filter(&img, k).pixels().iter().all(|&v| v == 7.0));
        }
    }

    #[test]
    fn filter_single_pixel() {
        let img = SliceImage::filled(1, 1, 42.0).unwrap();
        assert_eq!(lowpass_filter(&img, 1).pixels(), &[42.0]);
    }

    #[test]
    fn filter_matches_brute_force() {
        let img = random_image(9, 9, 3);
        let out = lowpass_filter(&img, 2);
        let mut block = 0.0;
        for i in 2..=6 {
            for j in 2..=6 {
                block += img.get(i, j) as f64;
            }
        }
        assert!((out.get(4, 4) as f64 - block / 25.0).abs() < 1e-4);
        for i in 0..9 {
            for j in 0..9 {
                let want = brute_filter(&img, 2, i, j);
                assert!((out.get(i, j) as f64 - want).abs() < 1e-4, "({i},{j})");
            }
        }
    }

    #[test]
    fn segment_boundaries() {
        let zeros = SliceImage::filled(4, 4, 0.0).unwrap();
        assert!(segment(&zeros, 100.0).is_empty());
        let bright = SliceImage::filled(4, 4, 200.0).unwrap();
        assert_eq!(segment(&bright, 100.0).count(), 16);
        let one = SliceImage::from_fn(4, 4, |i, j| if (i, j) == (1, 2) { 100.0 } else { 99.9 }).unwrap();
        let m = segment(&one, 100.0);
        assert_eq!(m.count(), 1);
        assert!(m.get(1, 2));
    }

    #[test]
    fn crop_rect_examples() {
        let full = BinaryMask::from_fn(10, 10, |_, _| true);
        assert_eq!(crop_rect(&full).unwrap(), CropRect::full(10, 10));
        let point = BinaryMask::from_fn(10, 10, |i, j| (i, j) == (2, 3));
        let r = crop_rect(&point).unwrap();
        assert_eq!((r.row_min, r.row_max, r.col_min, r.col_max), (2, 2, 3, 3));
        let two = BinaryMask::from_fn(10, 10, |i, j| (i, j) == (1, 8) || (i, j) == (6, 2));
        let r = crop_rect(&two).unwrap();
        assert_eq!((r.row_min, r.row_max, r.col_min, r.col_max), (1, 6, 2, 8));
        assert!(matches!(crop_rect(&BinaryMask::empty(3, 3)), Err(Error::EmptyMask)));
    }

    #[test]
    fn apply_crop_examples() {
        let img = random_image(10, 10, 11);
        assert_eq!(apply_crop(&img, &CropRect::full(10, 10)).unwrap(), img);
        let point = CropRect { row_min: 2, row_max: 2, col_min: 3, col_max: 3 };
        assert_eq!(apply_crop(&img, &point).unwrap().pixels(), &[img.get(2, 3)]);

        let rect = CropRect { row_min: 1, row_max: 6, col_min: 2, col_max: 8 };
        let sub = apply_crop(&img, &rect).unwrap();
        assert_eq!(sub.dims(), (6, 7));
        for i in 0..6 {
            for j in 0..7 {
                assert_eq!(sub.get(i, j), img.get(i + 1, j + 2));
            }
        }
        let bad = CropRect { row_min: 0, row_max: 10, col_min: 0, col_max: 0 };
        assert!(apply_crop(&img, &bad).is_err());
    }

    proptest! {
        #[test]
        fn segmentation_is_idempotent(seed in any::<u64>(), t in 1.0f32..=255.0) {
            let img = random_image(12, 12, seed);
            let m = segment(&lowpass_filter(&img, 1), 128.0);
            prop_assert_eq!(segment(&m.to_image(), t), m);
        }

        #[test]
        fn crop_rect_is_minimal(bits in proptest::collection::vec(any::<bool>(), 64)) {
            let mask = BinaryMask::new(8, 8, bits).unwrap();
            prop_assume!(!mask.is_empty());
            let r = crop_rect(&mask).unwrap();
            let any_in_row = |i: usize| (r.col_min..=r.col_max).any(|j| mask.get(i, j));
            let any_in_col = |j: usize| (r.row_min..=r.row_max).any(|i| mask.get(i, j));
            prop_assert!(any_in_row(r.row_min) && any_in_row(r.row_max));
            prop_assert!(any_in_col(r.col_min) && any_in_col(r.col_max));
            for i in 0..8 {
                for j in 0..8 {
                    if mask.get(i, j) {
                        prop_assert!(i >= r.row_min && i <= r.row_max && j >= r.col_min && j <= r.col_max);
                    }
                }
            }
            let touches_all = (0..8).any(|j| mask.get(0, j)) && (0..8).any(|j| mask.get(7, j))
                && (0..8).any(|i| mask.get(i, 0)) && (0..8).any(|i| mask.get(i, 7));
            prop_assert!(r.area() <= 64);
            prop_assert_eq!(r.area() == 64, touches_all);
        }

        #[test]
        fn filter_commutes_with_shift(seed in any::<u64>(), c in -50.0f32..50.0, k in 1usize..4) {
            let img = random_image(10, 11, seed);
            let shifted = SliceImage::new(10, 11, img.pixels().iter().map(|v| v + c).collect()).unwrap();
            let a = lowpass_filter(&img, k);
            let b = lowpass_filter(&shifted, k);
            for (x, y) in a.pixels().iter().zip(b.pixels()) {
                prop_assert!((x + c - y).abs() < 1e-3);
            }
        }
    }
}
