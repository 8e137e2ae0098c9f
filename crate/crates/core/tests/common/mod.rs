//! Brute-force reference implementations shared by the integration tests.

#![allow(dead_code)]

use std::path::Path;

use ctreduce::kds::DensityEstimate;
use ctreduce::par::Exec;
use ctreduce::phantom::{gen_phantom, PhantomSpec, PhantomTruth};
use ctreduce::spatial::BinaryMask;
use ctreduce::{AreaProfile, SliceWindow};

/// Exhaustive window search: shortest window reaching `alpha` of the total
/// with length <= `n_c`, then largest sum, then smallest start. Falls back to
/// the largest-sum window of length `min(n_c, n)`. Returns `(s, e, relaxed)`.
pub fn window_oracle(areas: &[u64], alpha: f64, n_c: usize) -> (usize, usize, bool) {
    let n = areas.len();
    let total: u64 = areas.iter().sum();
    let mut best: Option<(usize, u64, usize)> = None;
    for s in 0..n {
        let mut sum = 0u64;
        for e in s..n {
            sum += areas[e];
            let len = e - s + 1;
            if len > n_c || (sum as f64) / (total as f64) < alpha {
                continue;
            }
            let key = (len, std::cmp::Reverse(sum), s);
            if best.map_or(true, |(bl, bs, bst)| key < (bl, std::cmp::Reverse(bs), bst)) {
                best = Some((len, sum, s));
            }
        }
    }
    if let Some((len, _, s)) = best {
        return (s, s + len - 1, false);
    }
    let len = n_c.clamp(1, n);
    let mut top: Option<(u64, usize)> = None;
    for s in 0..=n - len {
        let sum: u64 = areas[s..s + len].iter().sum();
        if top.map_or(true, |(ts, _)| sum > ts) {
            top = Some((sum, s));
        }
    }
    let (_, s) = top.unwrap();
    (s, s + len - 1, true)
}

/// Scans the full square neighbourhood of every pixel.
pub fn dilate_oracle(mask: &BinaryMask, r: usize) -> BinaryMask {
    let (h, w) = mask.dims();
    BinaryMask::from_fn(h, w, |i, j| {
        let mut hit = false;
        for p in i.saturating_sub(r)..=(i + r).min(h - 1) {
            for q in j.saturating_sub(r)..=(j + r).min(w - 1) {
                hit |= mask.get(p, q);
            }
        }
        hit
    })
}

/// Flood fill of the background from the border by repeated relaxation
/// until nothing changes; everything not reached is filled.
pub fn fill_oracle(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.dims();
    let mut reach = vec![vec![false; w]; h];
    for i in 0..h {
        for j in 0..w {
            let border = i == 0 || j == 0 || i == h - 1 || j == w - 1;
            reach[i][j] = border && !mask.get(i, j);
        }
    }
    loop {
        let mut changed = false;
        for i in 0..h {
            for j in 0..w {
                if reach[i][j] || mask.get(i, j) {
                    continue;
                }
                let up = i > 0 && reach[i - 1][j];
                let down = i + 1 < h && reach[i + 1][j];
                let left = j > 0 && reach[i][j - 1];
                let right = j + 1 < w && reach[i][j + 1];
                if up || down || left || right {
                    reach[i][j] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    BinaryMask::from_fn(h, w, |i, j| !reach[i][j])
}

/// Area-weighted Gaussian KDE evaluated term by term at `x`.
pub fn naive_density(window: &SliceWindow, profile: &AreaProfile, h: f64, x: f64) -> f64 {
    let areas = &profile.areas()[window.s..=window.e];
    let total: u64 = areas.iter().sum();
    let m = areas.len() as f64;
    let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    let mut acc = 0.0;
    for (k, &a) in areas.iter().enumerate() {
        let w = if total == 0 { 1.0 / m } else { a as f64 / total as f64 };
        let u = (x - (window.s + k) as f64) / h;
        acc += w * norm * (-0.5 * u * u).exp();
    }
    acc
}

/// Largest absolute difference between the estimate's grid densities and
/// the naive evaluation.
pub fn kde_max_error(est: &DensityEstimate, window: &SliceWindow, profile: &AreaProfile) -> f64 {
    est.grid
        .iter()
        .zip(&est.density)
        .map(|(&x, &d)| (d - naive_density(window, profile, est.bandwidth.h, x)).abs())
        .fold(0.0, f64::max)
}

/// Writes `count` varied phantom scans under `root` and returns their truths.
pub fn phantom_set(root: &Path, count: usize, seed: u64, edit: impl Fn(&mut PhantomSpec)) -> Vec<PhantomTruth> {
    (0..count)
        .map(|k| {
            let mut spec = PhantomSpec::varied(k, seed);
            edit(&mut spec);
            gen_phantom(&spec, root, Exec::Parallel).expect("phantom written")
        })
        .collect()
}
