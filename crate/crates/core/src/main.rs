use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use ctreduce::config::{parse_size, PipelineConfig, SamplingMode};
use ctreduce::metrics;
use ctreduce::par::Exec;
use ctreduce::phantom::{gen_phantom, PhantomSpec};
use ctreduce::pipeline::{run_pipeline, write_json, RunOptions};

#[derive(Parser)]
#[command(name = "ctreduce", version, about = "Reduce CT slice stacks and sample representative slices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process every scan directory under --input.
    Run(RunArgs),
    /// Generate synthetic phantom scans.
    Phantom(PhantomArgs),
    /// Score predictions against labels.
    Score(ScoreArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML file with pipeline settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    t: Option<f32>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "n-c")]
    n_c: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<SamplingMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output slice size as HxW.
    #[arg(long = "out-size", value_parser = parse_size)]
    out_size: Option<(usize, usize)>,
    #[arg(long = "per-slice-crop")]
    per_slice_crop: bool,
    #[arg(long = "dilate-radius")]
    dilate_radius: Option<usize>,
    #[arg(long = "grid-size")]
    grid_size: Option<usize>,
    /// Scan workers (0 = available parallelism).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Disable all data-parallel execution.
    #[arg(long)]
    sequential: bool,
    /// Group name for the report (defaults to the input directory name).
    #[arg(long)]
    split: Option<String>,
}

impl RunArgs {
    fn config(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_toml_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.t {
            cfg.t = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.n_c {
            cfg.n_c = v;
        }
        if let Some(v) = self.samples {
            cfg.n_samples = v;
        }
        if let Some(v) = self.mode {
            cfg.sampling_mode = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some((h, w)) = self.out_size {
            cfg.out_h = h;
            cfg.out_w = w;
        }
        if self.per_slice_crop {
            cfg.per_slice_crop = true;
        }
        if let Some(v) = self.dilate_radius {
            cfg.dilate_radius = v;
        }
        if let Some(v) = self.grid_size {
            cfg.grid_size = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    scans: usize,
    #[arg(long, default_value_t = 300)]
    slices: usize,
    #[arg(long, value_parser = parse_size, default_value = "512x512")]
    size: (usize, usize),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    noise: u8,
    /// Omit the lungs entirely (degenerate fixture).
    #[arg(long)]
    no_lungs: bool,
}

#[derive(Args)]
struct ScoreArgs {
    /// `id,probability` or `id,label,probability` rows.
    #[arg(long)]
    predictions: PathBuf,
    /// `id,label` rows; optional when predictions carry labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Average slice probabilities per scan (id prefix before '/') first.
    #[arg(long)]
    scan_level: bool,
    /// Write the report as JSON here as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(args: RunArgs) -> anyhow::Result<bool> {
    let cfg = args.config()?;
    let opts = RunOptions {
        jobs: if args.sequential { 1 } else { args.jobs },
        exec: if args.sequential { Exec::Sequential } else { Exec::Parallel },
        split: args.split.clone(),
    };
    let summary = run_pipeline(&args.input, &args.out, &cfg, &opts)?;
    if let Some(report) = &summary.report {
        print!("{}", report.to_table());
    }
    for (id, err) in &summary.failed {
        eprintln!("failed: {id}: {err}");
    }
    eprintln!(
        "{} scans processed, {} failed",
        summary.processed.len(),
        summary.failed.len()
    );
    Ok(summary.success())
}

fn phantom(args: PhantomArgs) -> anyhow::Result<bool> {
    if args.scans == 0 || args.slices == 0 {
        bail!("--scans and --slices must be positive");
    }
    let (h, w) = args.size;
    for k in 0..args.scans {
        let mut spec = PhantomSpec::varied(k, args.seed);
        let scale = h.min(w) as f64 / 512.0;
        spec.slices = args.slices;
        spec.height = h;
        spec.width = w;
        spec.noise = args.noise;
        spec.body_radius = ((spec.body_radius as f64 * scale) as usize).clamp(1, (h.min(w) - 1) / 2);
        spec.lung_axes = if args.no_lungs {
            (0.0, 0.0)
        } else {
            (spec.lung_axes.0 * scale, spec.lung_axes.1 * scale)
        };
        let truth = gen_phantom(&spec, &args.out, Exec::Parallel)
            .with_context(|| format!("writing phantom under {}", args.out.display()))?;
        println!(
            "{}: {} slices, body box {:?}, spatial delta {:.4}",
            spec.scan_id, spec.slices, truth.body_rect, truth.spatial_delta
        );
    }
    Ok(true)
}

fn score(args: ScoreArgs) -> anyhow::Result<bool> {
    let records = metrics::read_predictions(&args.predictions, args.labels.as_deref())?;
    let report = metrics::evaluate(&records, args.threshold, args.scan_level)?;
    println!("records       {}", report.count);
    println!("bce           {:.6}", report.bce);
    println!(
        "f1 positive   {:.6} (precision {:.6}, recall {:.6})",
        report.f1.positive.f1, report.f1.positive.precision, report.f1.positive.recall
    );
    println!(
        "f1 negative   {:.6} (precision {:.6}, recall {:.6})",
        report.f1.negative.f1, report.f1.negative.precision, report.f1.negative.recall
    );
    println!("macro f1      {:.6}", report.f1.macro_f1);
    match report.auc {
        Some(a) => println!("auc           {a:.6}"),
        None => println!("auc           undefined (single class)"),
    }
    if let Some(out) = &args.out {
        write_json(&report, out)?;
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Phantom(a) => phantom(a),
        Command::Score(a) => score(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
