//! Per-scan orchestration: spatial step, slice step, sampling, output
//! writing, manifests and the dataset-level report.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, SamplingMode};
use crate::error::{Error, Result};
use crate::kds::{self, SampleSelection, Stratum, StratumPick};
use crate::par::{self, Exec};
use crate::report::{record_scan, ReductionRecord, ReportFile};
use crate::slice_select::{centered_window, select_window, slice_area, AreaProfile, SliceWindow};
use crate::spatial::{apply_crop, crop_rect, lowpass_filter, segment, CropRect};
use crate::volume::{decode_slice, resize_bilinear, sort_slice_paths, Label, ScanVolume, SliceImage};

pub const MANIFEST_SCHEMA: u32 = 1;

/// Random access to the slices of one scan.
pub trait SliceSource: Sync {
    fn scan_id(&self) -> &str;
    fn len(&self) -> usize;
    fn slice(&self, index: usize) -> Result<SliceImage>;
    /// Display name of slice `index` (file name for on-disk scans).
    fn slice_name(&self, index: usize) -> String {
        index.to_string()
    }
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SliceSource for ScanVolume {
    fn scan_id(&self) -> &str {
        ScanVolume::scan_id(self)
    }

    fn len(&self) -> usize {
        ScanVolume::len(self)
    }

    fn slice(&self, index: usize) -> Result<SliceImage> {
        Ok(self.slices()[index].clone())
    }

    fn slice_name(&self, index: usize) -> String {
        self.sources()
            .get(index)
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| index.to_string())
    }
}

/// A scan directory decoded lazily, one slice at a time.
#[derive(Debug, Clone)]
pub struct DirSource {
    scan_id: String,
    paths: Vec<PathBuf>,
}

impl DirSource {
    pub fn open(dir: &Path) -> Result<Self> {
        let mut paths = Vec::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let is_image = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"));
            if path.is_file() && is_image {
                paths.push(path);
            }
        }
        if paths.is_empty() {
            return Err(Error::EmptyScan(dir.to_path_buf()));
        }
        sort_slice_paths(&mut paths);
        let scan_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scan".into());
        Ok(Self { scan_id, paths })
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }
}

impl SliceSource for DirSource {
    fn scan_id(&self) -> &str {
        &self.scan_id
    }

    fn len(&self) -> usize {
        self.paths.len()
    }

    fn slice(&self, index: usize) -> Result<SliceImage> {
        decode_slice(&self.paths[index])
    }

    fn slice_name(&self, index: usize) -> String {
        self.paths[index]
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub s: usize,
    pub e: usize,
    pub area_fraction: f64,
    pub relaxed: bool,
    /// Total area was zero; the centred fallback window was used.
    pub degenerate: bool,
}

impl WindowRecord {
    pub fn window(&self) -> SliceWindow {
        SliceWindow {
            s: self.s,
            e: self.e,
            area_fraction: self.area_fraction,
            relaxed: self.relaxed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingRecord {
    pub mode: SamplingMode,
    pub seed: u64,
    /// Seed actually fed to the generator: `derive_seed(seed, scan_id)`.
    pub derived_seed: u64,
    pub generator: String,
    pub grid_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    pub bandwidth_fallback: bool,
    pub uniform_weights: bool,
    pub strata: Vec<Stratum>,
    pub picks: Vec<StratumPick>,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanManifest {
    pub schema: u32,
    pub scan_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    pub config: PipelineConfig,
    pub height: usize,
    pub width: usize,
    pub slice_count: usize,
    pub sources: Vec<String>,
    pub crop: CropRect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_slice_crops: Option<Vec<Option<CropRect>>>,
    /// Slices whose mask was empty; they fall back to the full frame.
    pub empty_mask_slices: Vec<usize>,
    pub areas: Vec<u64>,
    pub window: WindowRecord,
    pub sampling: SamplingRecord,
    pub outputs: Vec<String>,
}

/// Per-slice results of the spatial step and area scoring.
#[derive(Debug, Clone, Copy)]
struct SliceStats {
    rect: Option<CropRect>,
    area: u64,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StageTimings {
    pub spatial_ms: f64,
    pub select_ms: f64,
    pub sample_ms: f64,
    pub output_ms: f64,
}

/// Everything the pipeline derives for one scan.
#[derive(Debug, Clone)]
pub struct ScanResult {
    pub manifest: ScanManifest,
    pub record: ReductionRecord,
    /// Output file name and image, in sampled-index order.
    pub outputs: Vec<(String, SliceImage)>,
    pub timings: StageTimings,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn check_dims<S: SliceSource + ?Sized>(src: &S, index: usize, img: &SliceImage, want: (usize, usize)) -> Result<()> {
    if img.dims() != want {
        return Err(Error::DimensionMismatch {
            path: PathBuf::from(src.slice_name(index)),
            want_h: want.0,
            want_w: want.1,
            got_h: img.height(),
            got_w: img.width(),
        });
    }
    Ok(())
}

/// Runs the sampling step for a finished window, as recorded in manifests.
pub fn draw_samples(
    cfg: &PipelineConfig,
    scan_id: &str,
    profile: &AreaProfile,
    window: &SliceWindow,
) -> Result<SamplingRecord> {
    let derived_seed = kds::derive_seed(cfg.seed, scan_id);
    let mut rec = SamplingRecord {
        mode: cfg.sampling_mode,
        seed: cfg.seed,
        derived_seed,
        generator: kds::GENERATOR.to_string(),
        grid_size: cfg.grid_size,
        bandwidth: None,
        bandwidth_fallback: false,
        uniform_weights: false,
        strata: Vec::new(),
        picks: Vec::new(),
        indices: Vec::new(),
    };
    let fill = |rec: &mut SamplingRecord, sel: SampleSelection| {
        rec.strata = sel.strata;
        rec.picks = sel.picks;
        rec.indices = sel.indices;
    };
    match cfg.sampling_mode {
        SamplingMode::Kds => {
            let est = kds::estimate_density(window, profile, cfg.grid_size)?;
            rec.bandwidth = Some(est.bandwidth.h);
            rec.bandwidth_fallback = est.bandwidth.fallback;
            rec.uniform_weights = est.uniform_weights;
            let sel = kds::sample(&est, window, cfg.n_samples, derived_seed)?;
            fill(&mut rec, sel);
        }
        SamplingMode::Random => {
            fill(&mut rec, kds::sample_random(window, cfg.n_samples, derived_seed));
        }
        SamplingMode::None => rec.indices = window.indices().collect(),
    }
    Ok(rec)
}

/// Re-runs the sampling step from a manifest alone.
pub fn replay_sampling(m: &ScanManifest) -> Result<SamplingRecord> {
    draw_samples(
        &m.config,
        &m.scan_id,
        &AreaProfile::new(m.areas.clone()),
        &m.window.window(),
    )
}

/// Runs every stage for one scan without touching the filesystem (beyond
/// what `src` reads).
pub fn process_scan<S: SliceSource + ?Sized>(src: &S, cfg: &PipelineConfig, exec: Exec) -> Result<ScanResult> {
    cfg.validate()?;
    let n = src.len();
    if n == 0 {
        return Err(Error::EmptyInput("scan"));
    }
    let t0 = Instant::now();
    let first = src.slice(0)?;
    let dims = first.dims();

    let analyse = |img: &SliceImage| -> SliceStats {
        let mask = segment(&lowpass_filter(img, cfg.k), cfg.t);
        SliceStats {
            rect: crop_rect(&mask).ok(),
            area: slice_area(&mask, cfg.dilate_radius),
        }
    };
    let first_stats = analyse(&first);
    drop(first);
    let rest: Vec<Result<SliceStats>> = par::map_range(exec, n - 1, |k| {
        let idx = k + 1;
        let img = src.slice(idx)?;
        check_dims(src, idx, &img, dims)?;
        Ok(analyse(&img))
    });
    let mut stats = Vec::with_capacity(n);
    stats.push(first_stats);
    for r in rest {
        stats.push(r?);
    }
    let spatial_ms = ms(t0);

    let t1 = Instant::now();
    let empty_mask_slices: Vec<usize> = (0..n).filter(|&i| stats[i].rect.is_none()).collect();
    let crop = stats
        .iter()
        .filter_map(|s| s.rect)
        .reduce(|a, b| a.union(&b))
        .unwrap_or_else(|| CropRect::full(dims.0, dims.1));
    let profile = AreaProfile::new(stats.iter().map(|s| s.area).collect());
    let (window, degenerate) = match select_window(&profile, cfg.alpha, cfg.n_c) {
        Ok(w) => (w, false),
        Err(Error::DegenerateScan) => (centered_window(n, cfg.n_c), true),
        Err(e) => return Err(e),
    };
    let select_ms = ms(t1);

    let t2 = Instant::now();
    let sampling = draw_samples(cfg, src.scan_id(), &profile, &window)?;
    let sample_ms = ms(t2);

    let t3 = Instant::now();
    let full = CropRect::full(dims.0, dims.1);
    let rect_for = |i: usize| {
        if cfg.per_slice_crop {
            stats[i].rect.unwrap_or(full)
        } else {
            crop
        }
    };
    let rendered: Vec<Result<(String, SliceImage)>> = par::map(exec, &sampling.indices, |&i| {
        let img = src.slice(i)?;
        check_dims(src, i, &img, dims)?;
        let cropped = apply_crop(&img, &rect_for(i))?;
        let out = resize_bilinear(&cropped, cfg.out_h, cfg.out_w)?;
        Ok((format!("slice_{i:04}.png"), out))
    });
    let outputs = rendered.into_iter().collect::<Result<Vec<_>>>()?;
    let output_ms = ms(t3);

    let mut record = record_scan(src.scan_id(), dims, &crop, &window, n);
    if cfg.per_slice_crop {
        let kept: f64 = window.indices().map(|i| rect_for(i).area() as f64).sum();
        record = record.with_spatial_after(kept / window.len() as f64);
    }

    let manifest = ScanManifest {
        schema: MANIFEST_SCHEMA,
        scan_id: src.scan_id().to_string(),
        label: None,
        config: cfg.clone(),
        height: dims.0,
        width: dims.1,
        slice_count: n,
        sources: (0..n).map(|i| src.slice_name(i)).collect(),
        crop,
        per_slice_crops: cfg.per_slice_crop.then(|| stats.iter().map(|s| s.rect).collect()),
        empty_mask_slices,
        areas: profile.areas().to_vec(),
        window: WindowRecord {
            s: window.s,
            e: window.e,
            area_fraction: window.area_fraction,
            relaxed: window.relaxed,
            degenerate,
        },
        sampling,
        outputs: outputs.iter().map(|(name, _)| name.clone()).collect(),
    };

    Ok(ScanResult {
        manifest,
        record,
        outputs,
        timings: StageTimings {
            spatial_ms,
            select_ms,
            sample_ms,
            output_ms,
        },
    })
}

pub fn write_png(img: &SliceImage, path: &Path) -> Result<()> {
    let gray = img.to_gray();
    let file = BufWriter::new(fs::File::create(path)?);
    let enc = PngEncoder::new_with_quality(file, CompressionType::Fast, FilterType::Sub);
    gray.write_with_encoder(enc)?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Writes a scan's outputs into `out/<scan_id>` via a temporary sibling
/// directory that is renamed into place only once complete.
pub fn commit_scan(result: &ScanResult, out: &Path) -> Result<PathBuf> {
    let id = &result.manifest.scan_id;
    let tmp = out.join(format!(".{id}.partial"));
    let dst = out.join(id);
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    let written = (|| {
        for (name, img) in &result.outputs {
            write_png(img, &tmp.join(name))?;
        }
        write_json(&result.manifest, &tmp.join("manifest.json"))
    })();
    if let Err(e) = written {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if dst.exists() {
        fs::remove_dir_all(&dst)?;
    }
    fs::rename(&tmp, &dst)?;
    Ok(dst)
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Scan-level worker count; 0 picks the available parallelism.
    pub jobs: usize,
    pub exec: Exec,
    /// Group name for the report; defaults to the dataset directory name.
    pub split: Option<String>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 0,
            exec: Exec::Parallel,
            split: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub processed: Vec<String>,
    pub failed: Vec<(String, String)>,
    pub report: Option<ReportFile>,
}

impl RunSummary {
    pub fn success(&self) -> bool {
        self.failed.is_empty() && !self.processed.is_empty()
    }
}

/// Scan directories under `root`, sorted by name; dot-directories skipped.
pub fn discover_scans(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        let hidden = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.'));
        if path.is_dir() && !hidden {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Optional `labels.csv` (`scan_id,label`) at the dataset root.
pub fn read_scan_labels(root: &Path) -> Result<BTreeMap<String, Label>> {
    let path = root.join("labels.csv");
    let mut map = BTreeMap::new();
    if !path.is_file() {
        return Ok(map);
    }
    let text = fs::read_to_string(&path)?;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, lab) = line.split_once(',').unwrap_or((line, ""));
        match lab.parse::<Label>() {
            Ok(l) => {
                map.insert(id.trim().to_string(), l);
            }
            Err(_) if n == 0 => continue,
            Err(msg) => {
                return Err(Error::Parse {
                    path,
                    line: n + 1,
                    msg,
                })
            }
        }
    }
    Ok(map)
}

/// Processes every scan directory under `input`, writing reduced scans,
/// manifests, `report.json` and `report.txt` under `out`.
pub fn run_pipeline(input: &Path, out: &Path, cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let scans = discover_scans(input)?;
    if scans.is_empty() {
        return Err(Error::EmptyInput("dataset directory"));
    }
    let labels = read_scan_labels(input)?;
    let split = opts.split.clone().or_else(|| {
        input
            .canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
    });
    fs::create_dir_all(out)?;

    let run_one = |dir: &PathBuf| -> (String, Result<ReductionRecord>) {
        let id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let started = Instant::now();
        let res = (|| {
            let src = DirSource::open(dir)?;
            let mut result = process_scan(&src, cfg, opts.exec)?;
            let label = labels.get(&id).copied();
            result.manifest.label = label;
            result.record.label = label;
            result.record.split = split.clone();
            let t = Instant::now();
            commit_scan(&result, out)?;
            let commit_ms = ms(t);
            let tm = result.timings;
            log::info!(
                "scan={} slices={} window=[{},{}] samples={} spatial_ms={:.1} select_ms={:.1} sample_ms={:.1} render_ms={:.1} write_ms={:.1} total_ms={:.1}",
                id,
                result.manifest.slice_count,
                result.manifest.window.s,
                result.manifest.window.e,
                result.outputs.len(),
                tm.spatial_ms,
                tm.select_ms,
                tm.sample_ms,
                tm.output_ms,
                commit_ms,
                ms(started)
            );
            Ok(result.record)
        })();
        if let Err(e) = &res {
            log::error!("scan={id} failed: {e}");
        }
        (id, res)
    };

    let results = par::with_pool(opts.jobs, || par::map(opts.exec, &scans, run_one));

    let mut processed = Vec::new();
    let mut failed = Vec::new();
    let mut records = Vec::new();
    for (id, res) in results {
        match res {
            Ok(r) => {
                processed.push(id);
                records.push(r);
            }
            Err(e) => failed.push((id, e.to_string())),
        }
    }
    let report = if records.is_empty() {
        None
    } else {
        let report = ReportFile::build(records)?;
        write_json(&report, &out.join("report.json"))?;
        fs::write(out.join("report.txt"), report.to_table())?;
        Some(report)
    };
    Ok(RunSummary {
        processed,
        failed,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bright square body with a dark square cavity, cavity size varying by slice.
    fn toy_volume(n: usize) -> ScanVolume {
        let slices = (0..n)
            .map(|z| {
                let half = (z.min(n - 1 - z)) as isize;
                SliceImage::from_fn(48, 48, |i, j| {
                    let (di, dj) = (i as isize - 24, j as isize - 24);
                    if di.abs() > 18 || dj.abs() > 18 {
                        0.0
                    } else if di.abs() <= half && dj.abs() <= half {
                        20.0
                    } else {
                        200.0
                    }
                })
                .unwrap()
            })
            .collect();
        ScanVolume::new("toy", slices).unwrap()
    }

    fn small_cfg() -> PipelineConfig {
        PipelineConfig {
            k: 1,
            n_samples: 4,
            out_h: 16,
            out_w: 16,
            dilate_radius: 1,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn toy_scan_end_to_end() {
        let vol = toy_volume(30);
        let res = process_scan(&vol, &small_cfg(), Exec::Sequential).unwrap();
        let m = &res.manifest;
        assert_eq!(m.crop, CropRect { row_min: 6, row_max: 42, col_min: 6, col_max: 42 });
        assert!(m.window.area_fraction >= 0.5 && !m.window.relaxed);
        assert_eq!(res.outputs.len(), 4);
        assert!(res.outputs.iter().all(|(_, img)| img.dims() == (16, 16)));
        assert!(m.sampling.indices.iter().all(|i| (m.window.s..=m.window.e).contains(i)));
        assert_eq!(replay_sampling(m).unwrap(), m.sampling);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let vol = toy_volume(20);
        let a = process_scan(&vol, &small_cfg(), Exec::Sequential).unwrap();
        let b = process_scan(&vol, &small_cfg(), Exec::Parallel).unwrap();
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.outputs.iter().map(|o| &o.1).collect::<Vec<_>>(), b.outputs.iter().map(|o| &o.1).collect::<Vec<_>>());
    }

    #[test]
    fn blank_scan_falls_back() {
        let slices = (0..10).map(|_| SliceImage::filled(20, 20, 0.0).unwrap()).collect();
        let vol = ScanVolume::new("blank", slices).unwrap();
        let cfg = PipelineConfig { n_c: 4, ..small_cfg() };
        let res = process_scan(&vol, &cfg, Exec::Sequential).unwrap();
        assert!(res.manifest.window.degenerate);
        assert_eq!((res.manifest.window.s, res.manifest.window.e), (3, 6));
        assert_eq!(res.manifest.crop, CropRect::full(20, 20));
        assert_eq!(res.manifest.empty_mask_slices.len(), 10);
        assert!(res.manifest.sampling.uniform_weights);
    }

    #[test]
    fn modes_and_per_slice_crop() {
        let vol = toy_volume(24);
        for mode in [SamplingMode::Random, SamplingMode::None] {
            let cfg = PipelineConfig { sampling_mode: mode, ..small_cfg() };
            let res = process_scan(&vol, &cfg, Exec::Sequential).unwrap();
            let wlen = res.manifest.window.e - res.manifest.window.s + 1;
            let want = if mode == SamplingMode::None { wlen } else { wlen.min(4) };
            assert_eq!(res.outputs.len(), want);
        }
        let cfg = PipelineConfig { per_slice_crop: true, ..small_cfg() };
        let res = process_scan(&vol, &cfg, Exec::Sequential).unwrap();
        assert!(res.manifest.per_slice_crops.is_some());
        assert!(res.record.spatial_after <= res.record.spatial_before);
    }

    #[test]
    fn dir_source_reports_bad_file() {
        let dir = tempfile::tempdir().unwrap();
        let scan = dir.path().join("s1");
        fs::create_dir(&scan).unwrap();
        for i in 0..3 {
            let img = SliceImage::filled(8, 8, 100.0).unwrap();
            write_png(&img, &scan.join(format!("{i}.png"))).unwrap();
        }
        write_png(&SliceImage::filled(4, 4, 1.0).unwrap(), &scan.join("3.png")).unwrap();
        let src = DirSource::open(&scan).unwrap();
        let err = process_scan(&src, &small_cfg(), Exec::Sequential).unwrap_err();
        assert!(err.to_string().contains("3.png"), "{err}");
    }

    #[test]
    fn labels_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("labels.csv"), "scan_id,label\na,1\nb,negative\n").unwrap();
        let m = read_scan_labels(dir.path()).unwrap();
        assert_eq!(m["a"], Label::Positive);
        assert_eq!(m["b"], Label::Negative);
    }
}
