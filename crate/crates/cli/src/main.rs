//! `flowdist` command-line interface.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowdist::bridge::serve_stub;
use flowdist::io::{flow_to_color, read_flow, render_polar_svg, write_flow};
use flowdist::latent::{dot, norm};
use flowdist::metrics::{EntropyConfig, FlowDistribution, MetricReport, PolarHistogram};
use flowdist::nearby::{expected_chord, sample_neighbors, NearbyConfig};
use flowdist::pipeline::{run_ablation_grid, run_pipeline, PipelineConfig};
use flowdist::{Error, ImagePlane, LatentState, RngStream};
use serde_json::json;

#[derive(Parser)]
#[command(name = "flowdist", version, about = "Distributions of plausible optical flow from a single image")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or ablate the full pipeline.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
    /// Flow file utilities.
    #[command(subcommand)]
    Flow(FlowCmd),
    /// Latent sampling diagnostics.
    #[command(subcommand)]
    Sample(SampleCmd),
    #[command(subcommand, hide = true)]
    Bridge(BridgeCmd),
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Run one configuration end to end.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the delta x count x inversion grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        deltas: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        counts: Vec<usize>,
        #[arg(long, value_enum, default_value_t = Inversion::Both)]
        inversion: Inversion,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Inversion {
    On,
    Off,
    Both,
}

#[derive(Subcommand)]
enum FlowCmd {
    /// Score a flow file, or every flow file in a directory, against ground truth.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Grayscale PNG; nonzero pixels are foreground.
        #[arg(long)]
        fg_mask: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Convert between .flo and KITTI .png by extension.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Colour-wheel visualisation.
    Viz {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_mag: Option<f64>,
    },
    /// Polar direction histogram over every flow file in a directory.
    Polar {
        #[arg(long)]
        in_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        sectors: usize,
    },
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value_t = 16)]
    grid_h: usize,
    #[arg(long, default_value_t = 16)]
    grid_w: usize,
}

#[derive(Subcommand)]
enum SampleCmd {
    /// Draw nearby samples around a standard normal latent and report shell geometry.
    Shell {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum BridgeCmd {
    /// Model-free protocol stub on stdin/stdout.
    Stub,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("flowdist: config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("flowdist: {msg}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Pipeline(PipelineCmd::Run { config }) => {
            let cfg = load_config(&config)?;
            let report = run_pipeline(&cfg)?;
            print_json(&json!({
                "report": cfg.output_dir.join("report.json"),
                "metrics": report.metrics,
            }));
        }
        Command::Pipeline(PipelineCmd::Ablate {
            config,
            deltas,
            counts,
            inversion,
        }) => {
            let cfg = load_config(&config)?;
            let flags: &[bool] = match inversion {
                Inversion::On => &[true],
                Inversion::Off => &[false],
                Inversion::Both => &[true, false],
            };
            let table = run_ablation_grid(&cfg, &deltas, &counts, flags)?;
            print_json(&table);
        }
        Command::Flow(FlowCmd::Metrics {
            pred,
            gt,
            fg_mask,
            grid,
        }) => {
            let members = if pred.is_dir() {
                flow_files(&pred)?
                    .iter()
                    .map(|p| read_flow(p))
                    .collect::<flowdist::Result<Vec<_>>>()?
            } else {
                vec![read_flow(&pred)?]
            };
            let dist = FlowDistribution::new(members)?;
            let gt = read_flow(&gt)?;
            let mask = fg_mask.map(|p| load_mask(&p)).transpose()?;
            let cfg = EntropyConfig {
                grid_h: grid.grid_h,
                grid_w: grid.grid_w,
                range: None,
            };
            let report = MetricReport::compute(&dist, Some(&gt), mask.as_deref(), &cfg)?;
            print_json(&report);
        }
        Command::Flow(FlowCmd::Convert { input, out }) => {
            let flow = read_flow(&input)?;
            write_flow(&out, &flow)?;
        }
        Command::Flow(FlowCmd::Viz { input, out, max_mag }) => {
            if max_mag.is_some_and(|m| !(m > 0.0)) {
                return Err(Failure::Config("--max-mag must be > 0".into()));
            }
            let flow = read_flow(&input)?;
            flow_to_color(&flow, max_mag).save_png(&out)?;
        }
        Command::Flow(FlowCmd::Polar { in_dir, out, sectors }) => {
            let mut hist = PolarHistogram::new(sectors).map_err(|e| Failure::Config(e.to_string()))?;
            let files = flow_files(&in_dir)?;
            if files.is_empty() {
                return Err(Failure::Runtime(format!("no flow files in {}", in_dir.display())));
            }
            for f in &files {
                hist.add_flow(&read_flow(f)?);
            }
            render_polar_svg(&hist, &out)?;
            print_json(&hist);
        }
        Command::Sample(SampleCmd::Shell {
            dim,
            delta,
            count,
            seed,
        }) => shell_diagnostics(dim, delta, count, seed)?,
        Command::Bridge(BridgeCmd::Stub) => {
            let stdin = std::io::stdin();
            serve_stub(stdin.lock(), std::io::stdout().lock())?;
        }
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<PipelineConfig, Failure> {
    let cfg = PipelineConfig::load(path).map_err(|e| Failure::Config(e.to_string()))?;
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize + ?Sized>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serialisable"));
}

fn flow_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("flo") || e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn load_mask(path: &Path) -> Result<Vec<bool>, Failure> {
    let img = ImagePlane::load_png(path)?;
    let c = img.channels();
    Ok(img.pixels().chunks(c).map(|px| px.iter().any(|&x| x > 0.0)).collect())
}

fn shell_diagnostics(dim: usize, delta: f64, count: usize, seed: u64) -> Result<(), Failure> {
    let z0 = RngStream::new(seed, u64::MAX).standard_normal_vector(dim)?;
    let z0 = LatentState::from_vec(z0)?;
    let radius = z0.norm();
    let samples = sample_neighbors(&z0, &NearbyConfig::new(delta, count), seed)?;
    let unit: Vec<f64> = z0.data().iter().map(|x| x / radius).collect();
    let mut max_norm_err = 0.0f64;
    let (mut chord_min, mut chord_max) = (f64::INFINITY, 0.0f64);
    let mut max_tangent_cos = 0.0f64;
    let mut mean_dir = vec![0.0; dim];
    for s in &samples {
        max_norm_err = max_norm_err.max((s.norm() - radius).abs() / radius);
        let diff: Vec<f64> = s.data().iter().zip(z0.data()).map(|(a, b)| a - b).collect();
        let chord = norm(&diff);
        chord_min = chord_min.min(chord);
        chord_max = chord_max.max(chord);
        // The step direction is the tangent component of the displacement.
        let along = dot(&diff, &unit);
        let tangent: Vec<f64> = diff.iter().zip(&unit).map(|(d, u)| d - along * u).collect();
        let tn = norm(&tangent);
        if tn > 0.0 {
            for (m, t) in mean_dir.iter_mut().zip(&tangent) {
                *m += t / tn / count as f64;
            }
            max_tangent_cos = max_tangent_cos.max((dot(&tangent, &unit) / tn).abs());
        }
    }
    print_json(&json!({
        "dim": dim,
        "delta": delta,
        "count": count,
        "seed": seed,
        "radius": radius,
        "angle_deg": (delta / radius).atan().to_degrees(),
        "expected_chord": expected_chord(radius, delta),
        "chord_min": chord_min,
        "chord_max": chord_max,
        "max_norm_rel_error": max_norm_err,
        "max_tangent_cosine": max_tangent_cos,
        "mean_direction_norm_sqrt_n": norm(&mean_dir) * (count as f64).sqrt(),
    }));
    Ok(())
}
