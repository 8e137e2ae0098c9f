mod common;

use common::window_oracle;
use ctreduce::par::Exec;
use ctreduce::phantom::PhantomSpec;
use ctreduce::pipeline::process_scan;
use ctreduce::PipelineConfig;

fn spec() -> PhantomSpec {
    PhantomSpec {
        slices: 120,
        height: 160,
        width: 160,
        body_radius: 60,
        lung_axes: (28.0, 18.0),
        ..PhantomSpec::default()
    }
}

#[test]
fn window_tracks_analytic_profile() {
    let spec = spec();
    let truth = spec.truth();
    // Shortest analytic window holding half the lung area, on rounded areas.
    let analytic: Vec<u64> = truth.lung_areas.iter().map(|a| a.round() as u64).collect();
    let (s, e, _) = window_oracle(&analytic, 0.5, spec.slices);

    let res = process_scan(&spec.to_volume(Exec::Parallel), &PipelineConfig::default(), Exec::Parallel).unwrap();
    let w = &res.manifest.window;
    let centre = |a: usize, b: usize| (a + b) as f64 / 2.0;
    assert!((centre(w.s, w.e) - centre(s, e)).abs() <= 2.0, "[{}, {}] vs [{s}, {e}]", w.s, w.e);
    assert!(w.area_fraction >= 0.5);
    assert_eq!(res.outputs.len(), 16);
}

#[test]
fn sequential_and_parallel_agree() {
    let vol = spec().to_volume(Exec::Sequential);
    let cfg = PipelineConfig {
        out_h: 32,
        out_w: 32,
        ..PipelineConfig::default()
    };
    let a = process_scan(&vol, &cfg, Exec::Sequential).unwrap();
    let b = process_scan(&vol, &cfg, Exec::Parallel).unwrap();
    assert_eq!(a.manifest, b.manifest);
    assert_eq!(a.record, b.record);
}

#[test]
fn spatial_delta_near_analytic() {
    let spec = spec();
    let res = process_scan(&spec.to_volume(Exec::Parallel), &PipelineConfig { out_h: 16, out_w: 16, ..Default::default() }, Exec::Parallel).unwrap();
    let got = res.record.delta_spatial();
    let want = spec.truth().spatial_delta;
    assert!((got - want).abs() < 0.05, "{got} vs {want}");
}
