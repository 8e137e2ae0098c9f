//! Kernel-density slice sampling.
//!
//! The selected window's slice indices are treated as a weighted sample
//! (weight = share of window lung area) and smoothed with a Gaussian KDE
//! whose bandwidth follows Scott's rule. The KDE's CDF is cut into `n`
//! equal-mass strata and one slice is drawn from each, with probability
//! proportional to the density at that slice. Output indices are sorted,
//! so the sampled slices keep their anatomical order.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slice_select::{AreaProfile, SliceWindow};

pub const DEFAULT_GRID_SIZE: usize = 100;
/// Grid spacing never exceeds this fraction of the bandwidth.
const MAX_SPACING_PER_BANDWIDTH: f64 = 0.5;
const MAX_GRID_SIZE: usize = 1 << 20;

/// Name recorded in manifests next to every seed.
pub const GENERATOR: &str = "xoshiro256**/splitmix64-seeded";

pub fn rng_from_seed(seed: u64) -> Xoshiro256StarStar {
    Xoshiro256StarStar::seed_from_u64(seed)
}

/// Mixes a run seed with a scan id (FNV-1a over the id bytes) so each scan
/// gets an independent, platform-stable stream.
pub fn derive_seed(seed: u64, scan_id: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in scan_id.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finaliser over the combination
    let mut z = seed ^ hash.rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub h: f64,
    /// Zero spread: `h` is `max(1, range / 10)` instead of Scott's rule.
    pub fallback: bool,
}

/// Scott's rule for a weighted 1-D sample: `sigma_w * m_eff^(-1/5)` with
/// `m_eff = 1 / sum(w^2)`. Weights are expected to sum to one.
pub fn scotts_bandwidth(points: &[f64], weights: &[f64]) -> Result<Bandwidth> {
    if points.is_empty() || points.len() != weights.len() {
        return Err(Error::EmptyInput("bandwidth sample"));
    }
    let mean: f64 = points.iter().zip(weights).map(|(x, w)| x * w).sum();
    let var: f64 = points
        .iter()
        .zip(weights)
        .map(|(x, w)| w * (x - mean) * (x - mean))
        .sum();
    let sigma = var.max(0.0).sqrt();
    if sigma > 0.0 && sigma.is_finite() {
        let m_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        return Ok(Bandwidth {
            h: sigma * m_eff.powf(-0.2),
            fallback: false,
        });
    }
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    Ok(Bandwidth {
        h: ((hi - lo) / 10.0).max(1.0),
        fallback: true,
    })
}

#[inline]
fn gaussian(u: f64, h: f64) -> f64 {
    (-0.5 * u * u / (h * h)).exp() / (h * (2.0 * PI).sqrt())
}

/// A KDE sampled on a regular grid, with its trapezoid-rule CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub cdf: Vec<f64>,
    pub bandwidth: Bandwidth,
    /// Trapezoid integral of `density` before the CDF was rescaled to 1.
    pub raw_mass: f64,
    /// Window had no lung area, so every slice got the same weight.
    pub uniform_weights: bool,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl DensityEstimate {
    /// Wraps an already-sampled density; `density_at` then interpolates
    /// linearly between grid points.
    pub fn from_grid(grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != density.len() {
            return Err(Error::EmptyInput("density grid"));
        }
        let (cdf, raw_mass) = trapezoid_cdf(&grid, &density);
        Ok(Self {
            grid,
            density,
            cdf,
            bandwidth: Bandwidth {
                h: 0.0,
                fallback: false,
            },
            raw_mass,
            uniform_weights: false,
            points: Vec::new(),
            weights: Vec::new(),
        })
    }

    pub fn density_at(&self, x: f64) -> f64 {
        if !self.points.is_empty() {
            let h = self.bandwidth.h;
            return self
                .points
                .iter()
                .zip(&self.weights)
                .map(|(xi, w)| w * gaussian(x - xi, h))
                .sum();
        }
        let g = &self.grid;
        if x <= g[0] || x >= g[g.len() - 1] {
            return if x == g[0] {
                self.density[0]
            } else if x == g[g.len() - 1] {
                self.density[g.len() - 1]
            } else {
                0.0
            };
        }
        let k = g.partition_point(|&v| v <= x);
        let t = (x - g[k - 1]) / (g[k] - g[k - 1]);
        self.density[k - 1] + (self.density[k] - self.density[k - 1]) * t
    }

    /// Smallest `x` on the grid with `F(x) = p`, by linear inverse
    /// interpolation of the CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        let (g, c) = (&self.grid, &self.cdf);
        let last = g.len() - 1;
        if p <= 0.0 {
            return g[0];
        }
        if p >= 1.0 {
            return g[last];
        }
        let k = c.partition_point(|&v| v < p).clamp(1, last);
        let (c0, c1) = (c[k - 1], c[k]);
        if c1 <= c0 {
            return g[k];
        }
        g[k - 1] + (p - c0) / (c1 - c0) * (g[k] - g[k - 1])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

fn trapezoid_cdf(grid: &[f64], density: &[f64]) -> (Vec<f64>, f64) {
    let mut cdf = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    cdf.push(0.0);
    for k in 1..grid.len() {
        acc += 0.5 * (density[k] + density[k - 1]) * (grid[k] - grid[k - 1]);
        cdf.push(acc);
    }
    if acc > 0.0 {
        for v in &mut cdf {
            *v /= acc;
        }
    } else {
        let n = (grid.len() - 1) as f64;
        for (k, v) in cdf.iter_mut().enumerate() {
            *v = k as f64 / n;
        }
    }
    let last = cdf.len() - 1;
    cdf[last] = 1.0;
    (cdf, acc)
}

/// Area-weighted Gaussian KDE over the slice indices of `window`, evaluated
/// on an evenly spaced grid over `[s - 3h, e + 3h]`.
///
/// The grid has `grid_size` points unless the bandwidth is narrow enough
/// that the spacing would exceed `h / 2`, in which case it is refined.
pub fn estimate_density(
    window: &SliceWindow,
    profile: &AreaProfile,
    grid_size: usize,
) -> Result<DensityEstimate> {
    if grid_size < 16 {
        return Err(Error::Config("grid_size must be >= 16".into()));
    }
    if window.e >= profile.len() || window.s > window.e {
        return Err(Error::Config(format!(
            "window [{}, {}] outside a {}-slice profile",
            window.s,
            window.e,
            profile.len()
        )));
    }
    let points: Vec<f64> = window.indices().map(|i| i as f64).collect();
    let areas = &profile.areas()[window.s..=window.e];
    let window_total: u64 = areas.iter().sum();
    let uniform_weights = window_total == 0;
    let weights: Vec<f64> = if uniform_weights {
        vec![1.0 / points.len() as f64; points.len()]
    } else {
        areas
            .iter()
            .map(|&a| a as f64 / window_total as f64)
            .collect()
    };

    let bandwidth = scotts_bandwidth(&points, &weights)?;
    let h = bandwidth.h;
    let lo = window.s as f64 - 3.0 * h;
    let hi = window.e as f64 + 3.0 * h;
    let needed = ((hi - lo) / (MAX_SPACING_PER_BANDWIDTH * h)).ceil() as usize + 1;
    let g = grid_size.max(needed.min(MAX_GRID_SIZE));
    let step = (hi - lo) / (g - 1) as f64;
    let grid: Vec<f64> = (0..g)
        .map(|k| if k == g - 1 { hi } else { lo + k as f64 * step })
        .collect();

    // only slices with weight contribute
    let active: Vec<(f64, f64)> = points
        .iter()
        .zip(&weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&x, &w)| (x, w))
        .collect();
    let density: Vec<f64> = grid
        .iter()
        .map(|&x| active.iter().map(|&(xi, w)| w * gaussian(x - xi, h)).sum())
        .collect();
    let (cdf, raw_mass) = trapezoid_cdf(&grid, &density);

    Ok(DensityEstimate {
        grid,
        density,
        cdf,
        bandwidth,
        raw_mass,
        uniform_weights,
        points,
        weights,
    })
}

/// Closed interval `[lo, hi]` in slice-index units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub lo: f64,
    pub hi: f64,
}

impl Stratum {
    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Cuts the estimate's support into `n` intervals of equal CDF mass.
pub fn stratify(est: &DensityEstimate, n: usize) -> Result<Vec<Stratum>> {
    if n == 0 {
        return Err(Error::Config("stratum count must be >= 1".into()));
    }
    let bounds: Vec<f64> = (0..=n).map(|j| est.quantile(j as f64 / n as f64)).collect();
    Ok(bounds
        .windows(2)
        .map(|b| Stratum { lo: b[0], hi: b[1] })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawMode {
    Kds,
    Random,
}

/// One draw per stratum, in stratum order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumPick {
    pub index: usize,
    /// The stratum held no unused slice, so the nearest free one was taken.
    pub borrowed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSelection {
    /// Strictly increasing slice indices.
    pub indices: Vec<usize>,
    pub strata: Vec<Stratum>,
    /// Parallel to `strata`; empty in random mode or when the window was
    /// short enough to take whole.
    pub picks: Vec<StratumPick>,
    pub mode: DrawMode,
    pub seed: u64,
}

/// Stratum of integer slice `i`: the `j` with `q_j <= i < q_{j+1}`; the
/// last stratum also owns its upper bound.
fn stratum_of(strata: &[Stratum], i: f64) -> usize {
    let k = strata.partition_point(|st| st.hi <= i);
    k.min(strata.len() - 1)
}

/// Nearest unused index in `[s, e]` to `target`; ties go to the lower one.
fn nearest_unused(used: &[bool], s: usize, target: f64) -> Option<usize> {
    used.iter()
        .enumerate()
        .filter(|(_, &u)| !u)
        .map(|(c, _)| s + c)
        .min_by(|&a, &b| {
            let (da, db) = ((a as f64 - target).abs(), (b as f64 - target).abs());
            da.total_cmp(&db).then(a.cmp(&b))
        })
}

/// Density-driven stratified draw of `n` slices from `window`.
pub fn sample(
    est: &DensityEstimate,
    window: &SliceWindow,
    n: usize,
    seed: u64,
) -> Result<SampleSelection> {
    let strata = stratify(est, n)?;
    let len = window.len();
    if len <= n {
        return Ok(SampleSelection {
            indices: window.indices().collect(),
            strata,
            picks: Vec::new(),
            mode: DrawMode::Kds,
            seed,
        });
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in window.indices() {
        members[stratum_of(&strata, i as f64)].push(i);
    }
    let dens: Vec<f64> = window.indices().map(|i| est.density_at(i as f64)).collect();
    let density = |i: usize| dens[i - window.s];

    let mut rng = rng_from_seed(seed);
    let mut used = vec![false; len];
    let mut picks = Vec::with_capacity(n);
    for (j, stratum) in strata.iter().enumerate() {
        let cands = &members[j];
        let drawn = draw_weighted(&mut rng, cands, &density);
        let pick = match drawn {
            Some(i) if !used[i - window.s] => Some(i),
            _ => cands
                .iter()
                .copied()
                .filter(|&i| !used[i - window.s])
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if density(b) >= density(i) => Some(b),
                    _ => Some(i),
                }),
        };
        let (index, borrowed) = match pick {
            Some(i) => (i, false),
            None => {
                let i = nearest_unused(&used, window.s, stratum.mid())
                    .expect("window longer than sample count");
                (i, true)
            }
        };
        used[index - window.s] = true;
        picks.push(StratumPick { index, borrowed });
    }

    let mut indices: Vec<usize> = picks.iter().map(|p| p.index).collect();
    indices.sort_unstable();
    Ok(SampleSelection {
        indices,
        strata,
        picks,
        mode: DrawMode::Kds,
        seed,
    })
}

/// Picks one of `cands` with probability proportional to `weight`. Always
/// consumes exactly one draw from `rng` when `cands` is non-empty.
fn draw_weighted<R: Rng>(rng: &mut R, cands: &[usize], weight: impl Fn(usize) -> f64) -> Option<usize> {
    if cands.is_empty() {
        return None;
    }
    let u: f64 = rng.random();
    let total: f64 = cands.iter().map(|&i| weight(i)).sum();
    if !(total > 0.0) {
        return Some(cands[((u * cands.len() as f64) as usize).min(cands.len() - 1)]);
    }
    let target = u * total;
    let mut acc = 0.0;
    for &i in cands {
        acc += weight(i);
        if target < acc {
            return Some(i);
        }
    }
    cands.last().copied()
}

/// Uniform draw of `n` distinct slices from `window` (partial Fisher-Yates).
pub fn sample_random(window: &SliceWindow, n: usize, seed: u64) -> SampleSelection {
    let mut pool: Vec<usize> = window.indices().collect();
    let take = n.min(pool.len());
    let mut rng = rng_from_seed(seed);
    if take < pool.len() {
        for k in 0..take {
            let r = rng.random_range(k..pool.len());
            pool.swap(k, r);
        }
        pool.truncate(take);
    }
    pool.sort_unstable();
    SampleSelection {
        indices: pool,
        strata: Vec::new(),
        picks: Vec::new(),
        mode: DrawMode::Random,
        seed,
    }
}
