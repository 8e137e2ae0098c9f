//! Slice images, scan volumes and directory ingestion.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One grayscale slice. Intensities live in `[0, 255]` as `f32`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl SliceImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimensions { height, width });
        }
        if pixels.len() != height * width {
            return Err(Error::PixelCount {
                want: height * width,
                got: pixels.len(),
            });
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f32) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                pixels.push(f(i, j));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        Self {
            height: h as usize,
            width: w as usize,
            pixels: img.as_raw().iter().map(|&v| v as f32).collect(),
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

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.pixels[i * self.width + j]
    }

    /// Quantizes to 8 bits: clamp to `[0, 255]`, round half away from zero.
    pub fn to_gray(&self) -> GrayImage {
        let raw = self.pixels.iter().map(|&v| quantize(v)).collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}

/// Rec. 601 luma, rounded to the nearest 8-bit level.
#[inline]
pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
    y.clamp(0.0, 255.0).round() as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Unknown,
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "positive" | "pos" | "covid" => Ok(Label::Positive),
            "0" | "negative" | "neg" | "non-covid" => Ok(Label::Negative),
            "" | "unknown" | "?" => Ok(Label::Unknown),
            other => Err(format!("unrecognized label {other:?}")),
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
            Label::Unknown => "unknown",
        })
    }
}

/// An ordered stack of equally sized slices belonging to one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanVolume {
    scan_id: String,
    slices: Vec<SliceImage>,
    sources: Vec<PathBuf>,
    pub label: Option<Label>,
}

impl ScanVolume {
    pub fn new(scan_id: impl Into<String>, slices: Vec<SliceImage>) -> Result<Self> {
        let first = slices.first().ok_or(Error::EmptyInput("slice list"))?;
        let (h, w) = first.dims();
        for (idx, s) in slices.iter().enumerate() {
            if s.dims() != (h, w) {
                return Err(Error::DimensionMismatch {
                    path: PathBuf::from(format!("slice #{idx}")),
                    want_h: h,
                    want_w: w,
                    got_h: s.height(),
                    got_w: s.width(),
                });
            }
        }
        Ok(Self {
            scan_id: scan_id.into(),
            slices,
            sources: Vec::new(),
            label: None,
        })
    }

    pub fn scan_id(&self) -> &str {
        &self.scan_id
    }

    pub fn slices(&self) -> &[SliceImage] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// (height, width) shared by every slice.
    pub fn dims(&self) -> (usize, usize) {
        self.slices[0].dims()
    }

    /// Source files in slice order; empty for volumes built in memory.
    pub fn sources(&self) -> &[PathBuf] {
        &self.sources
    }
}

fn is_slice_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Last run of ASCII digits in the file stem.
fn stem_number(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let bytes = stem.as_bytes();
    let end = bytes.iter().rposition(|b| b.is_ascii_digit())? + 1;
    let start = bytes[..end]
        .iter()
        .rposition(|b| !b.is_ascii_digit())
        .map_or(0, |p| p + 1);
    stem[start..end].parse().ok()
}

/// Numeric stem order when every file carries a number, lexicographic otherwise.
pub fn sort_slice_paths(paths: &mut [PathBuf]) {
    let numbers: Option<Vec<u64>> = paths.iter().map(|p| stem_number(p)).collect();
    if numbers.is_some() {
        paths.sort_by(|a, b| {
            stem_number(a)
                .cmp(&stem_number(b))
                .then_with(|| a.file_name().cmp(&b.file_name()))
        });
    } else {
        paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    }
}

pub fn decode_slice(path: &Path) -> Result<SliceImage> {
    let decode_err = |source| Error::Decode {
        path: path.to_path_buf(),
        source,
    };
    let img = ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(decode_err)?;
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            let raw = rgb
                .pixels()
                .map(|p| luminance(p.0[0], p.0[1], p.0[2]))
                .collect();
            GrayImage::from_raw(w, h, raw).expect("buffer length matches dimensions")
        }
    };
    Ok(SliceImage::from_gray(&gray))
}

/// Loads every PNG/JPEG in `dir` as one scan, ordered by filename number.
/// The scan id is the directory name.
pub fn load_scan(dir: &Path) -> Result<ScanVolume> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && is_slice_file(&path) {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::EmptyScan(dir.to_path_buf()));
    }
    sort_slice_paths(&mut paths);

    let mut slices: Vec<SliceImage> = Vec::with_capacity(paths.len());
    for path in &paths {
        let slice = decode_slice(path)?;
        if let Some(first) = slices.first() {
            if first.dims() != slice.dims() {
                return Err(Error::DimensionMismatch {
                    path: path.clone(),
                    want_h: first.height(),
                    want_w: first.width(),
                    got_h: slice.height(),
                    got_w: slice.width(),
                });
            }
        }
        slices.push(slice);
    }

    let scan_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scan".to_string());
    Ok(ScanVolume {
        scan_id,
        slices,
        sources: paths,
        label: None,
    })
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Source coordinate of output index `i` under corner-aligned sampling.
fn source_coords(n_in: usize, n_out: usize) -> Vec<(usize, usize, f32)> {
    (0..n_out)
        .map(|i| {
            let x = if n_out == 1 {
                (n_in - 1) as f64 / 2.0
            } else {
                i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            };
            let lo = (x.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, (x - lo as f64) as f32)
        })
        .collect()
}

/// Bilinear resize with corner-aligned sampling (output corners land on
/// input corners). Output values are clamped to `[0, 255]`.
pub fn resize_bilinear(img: &SliceImage, out_h: usize, out_w: usize) -> Result<SliceImage> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidDimensions {
            height: out_h,
            width: out_w,
        });
    }
    if img.dims() == (out_h, out_w) {
        return Ok(img.clone());
    }
    let rows = source_coords(img.height, out_h);
    let cols = source_coords(img.width, out_w);
    let mut pixels = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = lerp(img.get(r0, c0), img.get(r0, c1), fc);
            let bottom = lerp(img.get(r1, c0), img.get(r1, c1), fc);
            pixels.push(lerp(top, bottom, fr).clamp(0.0, 255.0));
        }
    }
    SliceImage::new(out_h, out_w, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, h: u32, w: u32, value: u8) {
        GrayImage::from_pixel(w, h, image::Luma([value]))
            .save(path)
            .unwrap();
    }

    #[test]
    fn numeric_stem_order() {
        let dir = tempfile::tempdir().unwrap();
        for (name, v) in [("2.png", 2), ("10.png", 10), ("1.png", 1)] {
            write_png(&dir.path().join(name), 4, 4, v);
        }
        let scan = load_scan(dir.path()).unwrap();
        let names: Vec<_> = scan
            .sources()
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, ["1.png", "2.png", "10.png"]);
        assert_eq!(scan.slices()[2].get(0, 0), 10.0);
    }

    #[test]
    fn lexicographic_fallback() {
        let mut paths: Vec<PathBuf> = ["b.png", "a10.png", "a2.png"]
            .iter()
            .map(PathBuf::from)
            .collect();
        sort_slice_paths(&mut paths);
        assert_eq!(paths, ["a10.png", "a2.png", "b.png"].map(PathBuf::from));
        assert_eq!(stem_number(Path::new("scan_3_slice_042.png")), Some(42));
    }

    #[test]
    fn single_slice_scan() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("0.png"), 512, 512, 7);
        let scan = load_scan(dir.path()).unwrap();
        assert_eq!(scan.len(), 1);
        assert_eq!(scan.dims(), (512, 512));
    }

    #[test]
    fn mixed_dims_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("1.png"), 512, 512, 0);
        write_png(&dir.path().join("2.png"), 256, 256, 0);
        let err = load_scan(dir.path()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        assert!(err.to_string().contains("2.png"), "{err}");
    }

    #[test]
    fn empty_and_undecodable() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        assert!(matches!(load_scan(dir.path()), Err(Error::EmptyScan(_))));
        fs::write(dir.path().join("1.png"), b"not a png").unwrap();
        let err = load_scan(dir.path()).unwrap_err();
        assert!(err.to_string().contains("1.png"), "{err}");
    }

    #[test]
    fn rgb_is_converted_with_rec601() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = image::RgbImage::new(2, 1);
        img.put_pixel(0, 0, image::Rgb([90, 90, 90]));
        img.put_pixel(1, 0, image::Rgb([255, 0, 0]));
        img.save(dir.path().join("1.png")).unwrap();
        let scan = load_scan(dir.path()).unwrap();
        assert_eq!(scan.slices()[0].pixels(), &[90.0, 76.0]);
    }

    #[test]
    fn gray_triples_map_to_themselves() {
        for v in 0..=255u8 {
            assert_eq!(luminance(v, v, v), v);
        }
    }

    #[test]
    fn resize_constant() {
        let img = SliceImage::filled(17, 23, 100.0).unwrap();
        let out = resize_bilinear(&img, 32, 32).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 100.0));
        let back = resize_bilinear(&out, 17, 23).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn resize_identity() {
        let img = SliceImage::from_fn(5, 7, |i, j| (i * 7 + j) as f32).unwrap();
        assert_eq!(resize_bilinear(&img, 5, 7).unwrap(), img);
    }

    #[test]
    fn checkerboard_center_rounds_up() {
        let img = SliceImage::new(2, 2, vec![0.0, 255.0, 255.0, 0.0]).unwrap();
        let out = resize_bilinear(&img, 3, 3).unwrap();
        // Centre sits at (0.5, 0.5): equal weights over the four corners.
        assert_eq!(out.get(1, 1), 127.5);
        assert_eq!(out.to_gray().get_pixel(1, 1).0[0], 128);
        assert_eq!(out.get(0, 0), 0.0);
        assert_eq!(out.get(0, 2), 255.0);
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(SliceImage::new(0, 3, vec![]).is_err());
        assert!(SliceImage::new(2, 2, vec![0.0; 3]).is_err());
        let img = SliceImage::filled(2, 2, 1.0).unwrap();
        assert!(resize_bilinear(&img, 0, 4).is_err());
    }

    #[test]
    fn repeated_loads_identical() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            write_png(&dir.path().join(format!("{i}.png")), 8, 8, i as u8 * 40);
        }
        assert_eq!(load_scan(dir.path()).unwrap(), load_scan(dir.path()).unwrap());
    }
}
