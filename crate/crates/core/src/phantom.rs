//! Synthetic chest-like slice stacks with analytically known lung areas.
//!
//! Each slice is a bright body disk on a black background holding two dark
//! elliptical lungs. Lung semi-axes follow a half-sine along the stack, so
//! lung area peaks mid-stack and vanishes at both ends.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::par::{self, Exec};
use crate::pipeline::{write_json, write_png};
use crate::spatial::CropRect;
use crate::volume::{ScanVolume, SliceImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub scan_id: String,
    pub slices: usize,
    pub height: usize,
    pub width: usize,
    /// Whole pixels; the body disk is centred on the middle pixel.
    pub body_radius: usize,
    pub body_intensity: u8,
    pub lung_intensity: u8,
    /// Peak semi-axes of each lung ellipse: (rows, cols).
    pub lung_axes: (f64, f64),
    /// Fractions of the stack where the lungs appear and vanish.
    pub lung_span: (f64, f64),
    /// Uniform integer noise in `[-noise, noise]` inside the body.
    pub noise: u8,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            scan_id: "phantom".into(),
            slices: 300,
            height: 512,
            width: 512,
            body_radius: 180,
            body_intensity: 170,
            lung_intensity: 30,
            lung_axes: (85.0, 55.0),
            lung_span: (0.15, 0.85),
            noise: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomTruth {
    pub spec: PhantomSpec,
    /// Combined area of both lung ellipses per slice, pixels.
    pub lung_areas: Vec<f64>,
    pub body_rect: CropRect,
    /// `1 - body_rect area / frame area`.
    pub spatial_delta: f64,
}

impl PhantomSpec {
    /// The `k`-th member of a phantom set: body radius and lung size vary
    /// deterministically with `k`.
    pub fn varied(k: usize, seed: u64) -> Self {
        let base = Self::default();
        let r = 160 + (k * 7) % 41;
        let scale = r as f64 / base.body_radius as f64;
        Self {
            scan_id: format!("phantom_{k:03}"),
            body_radius: r,
            lung_axes: (base.lung_axes.0 * scale, base.lung_axes.1 * scale),
            seed: seed.wrapping_add(k as u64),
            ..base
        }
    }

    fn centre(&self) -> (f64, f64) {
        ((self.height / 2) as f64, (self.width / 2) as f64)
    }

    /// Lung scale factor in `[0, 1]` at slice `z`.
    pub fn lung_scale(&self, z: usize) -> f64 {
        if self.slices < 2 {
            return 1.0;
        }
        let pos = z as f64 / (self.slices - 1) as f64;
        let (a, b) = self.lung_span;
        if pos <= a || pos >= b {
            return 0.0;
        }
        (PI * (pos - a) / (b - a)).sin()
    }

    fn lung_centres(&self) -> [(f64, f64); 2] {
        let (ci, cj) = self.centre();
        let off = 0.45 * self.body_radius as f64;
        [(ci, cj - off), (ci, cj + off)]
    }

    pub fn analytic_lung_area(&self, z: usize) -> f64 {
        let s = self.lung_scale(z);
        2.0 * PI * self.lung_axes.0 * s * self.lung_axes.1 * s
    }

    pub fn body_rect(&self) -> CropRect {
        let (ci, cj) = (self.height / 2, self.width / 2);
        let r = self.body_radius;
        CropRect {
            row_min: ci.saturating_sub(r),
            row_max: (ci + r).min(self.height - 1),
            col_min: cj.saturating_sub(r),
            col_max: (cj + r).min(self.width - 1),
        }
    }

    pub fn truth(&self) -> PhantomTruth {
        let rect = self.body_rect();
        PhantomTruth {
            spec: self.clone(),
            lung_areas: (0..self.slices).map(|z| self.analytic_lung_area(z)).collect(),
            body_rect: rect,
            spatial_delta: 1.0 - rect.area() as f64 / (self.height * self.width) as f64,
        }
    }

    /// Renders slice `z`. Noise comes from a generator keyed on (seed, z),
    /// so slices can be rendered in any order.
    pub fn render_slice(&self, z: usize) -> SliceImage {
        let mut rng = Xoshiro256StarStar::seed_from_u64(self.seed ^ (z as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let (ci, cj) = self.centre();
        let r2 = (self.body_radius * self.body_radius) as f64;
        let s = self.lung_scale(z);
        let (a, b) = (self.lung_axes.0 * s, self.lung_axes.1 * s);
        let lungs = self.lung_centres();
        let noise = self.noise as i32;
        let mut px = Vec::with_capacity(self.height * self.width);
        for i in 0..self.height {
            let di = i as f64 - ci;
            for j in 0..self.width {
                let dj = j as f64 - cj;
                if di * di + dj * dj > r2 {
                    px.push(0.0);
                    continue;
                }
                let in_lung = a > 0.0
                    && b > 0.0
                    && lungs.iter().any(|&(li, lj)| {
                        let (u, v) = ((i as f64 - li) / a, (j as f64 - lj) / b);
                        u * u + v * v <= 1.0
                    });
                let base = if in_lung { self.lung_intensity } else { self.body_intensity } as i32;
                let n = if noise > 0 { rng.random_range(-noise..=noise) } else { 0 };
                px.push((base + n).clamp(0, 255) as f32);
            }
        }
        SliceImage::new(self.height, self.width, px).expect("phantom dims are positive")
    }

    pub fn to_volume(&self, exec: Exec) -> ScanVolume {
        let slices = par::map_range(exec, self.slices, |z| self.render_slice(z));
        ScanVolume::new(self.scan_id.clone(), slices).expect("phantom has slices")
    }
}

/// Writes `out/<scan_id>/<z>.png` for every slice plus `truth.json` next to
/// the slice directory (`out/<scan_id>.truth.json`), so the scan directory
/// holds images only.
pub fn gen_phantom(spec: &PhantomSpec, out: &Path, exec: Exec) -> Result<PhantomTruth> {
    let dir = out.join(&spec.scan_id);
    fs::create_dir_all(&dir)?;
    let written: Vec<Result<()>> = par::map_range(exec, spec.slices, |z| {
        write_png(&spec.render_slice(z), &dir.join(format!("{z}.png")))
    });
    written.into_iter().collect::<Result<Vec<_>>>()?;
    let truth = spec.truth();
    write_json(&truth, &out.join(format!("{}.truth.json", spec.scan_id)))?;
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomSpec {
        PhantomSpec {
            slices: 40,
            height: 96,
            width: 96,
            body_radius: 40,
            lung_axes: (20.0, 12.0),
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn profile_peaks_mid_stack() {
        let spec = small();
        let t = spec.truth();
        assert_eq!(t.lung_areas[0], 0.0);
        assert_eq!(*t.lung_areas.last().unwrap(), 0.0);
        let peak = t
            .lung_areas
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!((peak as isize - 20).abs() <= 1);
    }

    #[test]
    fn rendered_lung_pixels_track_analytic_area() {
        let spec = PhantomSpec { noise: 0, ..small() };
        let z = 20;
        let img = spec.render_slice(z);
        let dark = img.pixels().iter().filter(|&&v| v == spec.lung_intensity as f32).count() as f64;
        let want = spec.analytic_lung_area(z);
        assert!((dark - want).abs() / want < 0.05, "{dark} vs {want}");
    }

    #[test]
    fn body_rect_matches_rendered_extent() {
        let spec = small();
        let img = spec.render_slice(0);
        let mask = crate::spatial::BinaryMask::from_fn(96, 96, |i, j| img.get(i, j) > 0.0);
        assert_eq!(crate::spatial::crop_rect(&mask).unwrap(), spec.body_rect());
    }

    #[test]
    fn deterministic_bytes() {
        let spec = PhantomSpec { slices: 3, ..small() };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        gen_phantom(&spec, a.path(), Exec::Parallel).unwrap();
        gen_phantom(&spec, b.path(), Exec::Sequential).unwrap();
        for z in 0..3 {
            let name = format!("phantom/{z}.png");
            assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
        }
    }

    #[test]
    fn zero_lungs_give_zero_area() {
        let spec = PhantomSpec { lung_axes: (0.0, 0.0), slices: 6, ..small() };
        assert!(spec.truth().lung_areas.iter().all(|&a| a == 0.0));
        let res = crate::pipeline::process_scan(
            &spec.to_volume(Exec::Sequential),
            &crate::config::PipelineConfig { out_h: 8, out_w: 8, ..Default::default() },
            Exec::Sequential,
        )
        .unwrap();
        assert!(res.manifest.areas.iter().all(|&a| a == 0));
        assert!(res.manifest.window.degenerate);
    }
}
