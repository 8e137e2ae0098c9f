//! Slice reduction: per-slice lung-area scoring and selection of the
//! shortest contiguous window holding an `alpha` share of the total area.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{dilate, fill_holes};
use crate::spatial::BinaryMask;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaProfile {
    areas: Vec<u64>,
    total: u64,
}

impl AreaProfile {
    pub fn new(areas: Vec<u64>) -> Self {
        let total = areas.iter().sum();
        Self { areas, total }
    }

    pub fn areas(&self) -> &[u64] {
        &self.areas
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }

    /// Sum of areas over the inclusive range `[s, e]`.
    pub fn window_sum(&self, s: usize, e: usize) -> u64 {
        self.areas[s..=e].iter().sum()
    }
}

/// Inclusive slice range `[s, e]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceWindow {
    pub s: usize,
    pub e: usize,
    pub area_fraction: f64,
    /// No window within `n_c` slices reached `alpha`; this is the best
    /// length-`n_c` window instead.
    pub relaxed: bool,
}

impl SliceWindow {
    pub fn len(&self) -> usize {
        self.e - self.s + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.s..=self.e
    }
}

/// Enclosed-cavity pixel count: `fill_holes(dilate(mask)) - dilate(mask)`.
pub fn slice_area(mask: &BinaryMask, dilate_radius: usize) -> u64 {
    let dilated = dilate(mask, dilate_radius);
    let filled = fill_holes(&dilated);
    filled.count() - dilated.count()
}

#[inline]
fn meets_alpha(sum: u64, total: u64, alpha: f64) -> bool {
    sum as f64 / total as f64 >= alpha
}

/// Picks the window by, in order: `alpha` coverage, shortest length,
/// largest area sum, smallest start. If the shortest covering window is
/// longer than `n_c`, returns the best window of exactly `n_c` slices with
/// `relaxed` set.
///
/// Runs in O(n): a two-pointer sweep finds the minimal covering length,
/// then one pass over windows of that length picks the heaviest.
pub fn select_window(profile: &AreaProfile, alpha: f64, n_c: usize) -> Result<SliceWindow> {
    let n = profile.len();
    if n == 0 {
        return Err(Error::EmptyInput("area profile"));
    }
    let total = profile.total();
    if total == 0 {
        return Err(Error::DegenerateScan);
    }
    let areas = profile.areas();
    let cap = n_c.clamp(1, n);

    // shortest covering length
    let mut best_len = usize::MAX;
    let mut e = 0usize;
    let mut sum = 0u64;
    for s in 0..n {
        while e < n && !meets_alpha(sum, total, alpha) {
            sum += areas[e];
            e += 1;
        }
        if !meets_alpha(sum, total, alpha) {
            break;
        }
        best_len = best_len.min(e - s);
        sum -= areas[s];
    }

    let (len, relaxed) = if best_len <= cap {
        (best_len, false)
    } else {
        (cap, true)
    };

    let mut window_sum: u64 = areas[..len].iter().sum();
    let (mut best_s, mut best_sum) = (0, window_sum);
    for s in 1..=n - len {
        window_sum = window_sum + areas[s + len - 1] - areas[s - 1];
        if window_sum > best_sum {
            best_s = s;
            best_sum = window_sum;
        }
    }
    Ok(SliceWindow {
        s: best_s,
        e: best_s + len - 1,
        area_fraction: best_sum as f64 / total as f64,
        relaxed,
    })
}

/// Centred window of `min(n_c, n)` slices, used when a scan has no lung area.
pub fn centered_window(n: usize, n_c: usize) -> SliceWindow {
    let len = n_c.clamp(1, n.max(1));
    let s = (n - len) / 2;
    SliceWindow {
        s,
        e: s + len - 1,
        area_fraction: 0.0,
        relaxed: true,
    }
}
