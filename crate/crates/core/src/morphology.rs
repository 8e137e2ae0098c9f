//! Binary dilation with a square structuring element and border-seeded
//! hole filling.

use crate::spatial::BinaryMask;

/// 1-D dilation of `src` into `dst` along a strided line: `dst[x]` is set
/// when any of `src[x - r ..= x + r]` is set.
fn dilate_line(src: &[bool], dst: &mut [bool], len: usize, step: usize, offset: usize, r: usize) {
    // running count of set bits inside the window
    let mut count = 0usize;
    for x in 0..r.min(len) {
        count += src[offset + x * step] as usize;
    }
    for x in 0..len {
        if x + r < len {
            count += src[offset + (x + r) * step] as usize;
        }
        if x > r {
            count -= src[offset + (x - r - 1) * step] as usize;
        }
        dst[offset + x * step] = count > 0;
    }
}

/// A pixel is set iff some input pixel lies within Chebyshev distance
/// `radius`. The square element factors into a row pass and a column pass;
/// the column pass keeps per-column counts and moves whole rows in and out.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let (h, w) = mask.dims();
    if radius == 0 {
        return mask.clone();
    }
    let mut rows = BinaryMask::empty(h, w);
    for i in 0..h {
        dilate_line(mask.bits(), rows.bits_mut(), w, 1, i * w, radius);
    }
    let src = rows.bits();
    let mut out = BinaryMask::empty(h, w);
    let dst = out.bits_mut();
    let mut counts = vec![0u32; w];
    let add = |counts: &mut [u32], row: usize| {
        for (c, &b) in counts.iter_mut().zip(&src[row * w..(row + 1) * w]) {
            *c += b as u32;
        }
    };
    for row in 0..radius.min(h) {
        add(&mut counts, row);
    }
    for i in 0..h {
        if i + radius < h {
            add(&mut counts, i + radius);
        }
        if i > radius {
            let row = i - radius - 1;
            for (c, &b) in counts.iter_mut().zip(&src[row * w..(row + 1) * w]) {
                *c -= b as u32;
            }
        }
        for (d, &c) in dst[i * w..(i + 1) * w].iter_mut().zip(&counts) {
            *d = c > 0;
        }
    }
    out
}

/// Sets every background pixel that is not 4-connected to the image border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.dims();
    let bits = mask.bits();
    // Padded grid with a one-pixel frame pre-marked as visited, so neighbour
    // lookups never leave the buffer.
    let pw = w + 2;
    let mut outside = vec![false; (h + 2) * pw];
    let mut blocked = vec![true; (h + 2) * pw];
    for i in 0..h {
        blocked[(i + 1) * pw + 1..(i + 1) * pw + 1 + w].copy_from_slice(&bits[i * w..(i + 1) * w]);
    }
    let mut stack: Vec<u32> = Vec::new();
    let mut seed = |i: usize, j: usize, outside: &mut Vec<bool>| {
        let p = (i + 1) * pw + j + 1;
        if !blocked[p] && !outside[p] {
            outside[p] = true;
            stack.push(p as u32);
        }
    };
    for j in 0..w {
        seed(0, j, &mut outside);
        seed(h - 1, j, &mut outside);
    }
    for i in 0..h {
        seed(i, 0, &mut outside);
        seed(i, w - 1, &mut outside);
    }

    while let Some(p) = stack.pop() {
        let p = p as usize;
        for n in [p - pw, p + pw, p - 1, p + 1] {
            if !blocked[n] && !outside[n] {
                outside[n] = true;
                stack.push(n as u32);
            }
        }
    }

    let mut filled = Vec::with_capacity(h * w);
    for i in 0..h {
        filled.extend(outside[(i + 1) * pw + 1..(i + 1) * pw + 1 + w].iter().map(|o| !o));
    }
    BinaryMask::new(h, w, filled).expect("dims preserved")
}
