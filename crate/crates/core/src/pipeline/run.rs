use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{BridgeClient, BridgeFlowEstimator};
use crate::diffusion::{
    ddim_invert, ddim_reverse_chain, forward_sample, invert_conditioning, GaussianOraclePredictor,
    NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::flow::{estimate_distribution, BlockMatcher, FlowEstimator};
use crate::image::ImagePlane;
use crate::io::{encode_flo, read_flow, render_polar_svg};
use crate::latent::{ConditioningVector, LatentState, RngStream};
use crate::metrics::{FlowDistribution, MetricReport, PolarHistogram};
use crate::nearby::perturb_on_shell;

use super::config::{ConditioningConfig, EstimatorConfig, ForwardMode, PipelineConfig, PredictorConfig};

pub const PHASE_CONDITIONING: u64 = 1;
pub const PHASE_FORWARD: u64 = 2;
pub const PHASE_NEARBY: u64 = 3;

/// Directions per sector in the aggregated polar plot.
pub const POLAR_SECTORS: usize = 16;

/// Stream id for `phase` of sample `index`. Index 0 is the source image;
/// generated samples are numbered from 1, so sample `k` of the output
/// (0-based file index) uses index `k + 1`.
pub fn phase_stream(index: u64, phase: u64) -> u64 {
    (index << 16) + phase
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub phases: Vec<PhaseTiming>,
    pub total_seconds: f64,
}

/// Paths relative to the output directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub complete: bool,
    pub frames: Vec<String>,
    pub flows: Vec<String>,
    pub polar: Option<String>,
    pub timings: Option<String>,
    pub report: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningSummary {
    pub embedding: Vec<f64>,
    /// Validation loss before and after each update; empty when fixed.
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub metrics: MetricReport,
    pub polar: PolarHistogram,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditioning: Option<ConditioningSummary>,
    pub manifest: ArtifactManifest,
    pub config: PipelineConfig,
    /// Written to `timings.json`, not into the report, so the report stays
    /// byte-identical across runs.
    #[serde(skip)]
    pub timings: Timings,
}

struct Clock {
    start: Instant,
    phases: Vec<PhaseTiming>,
}

impl Clock {
    fn new() -> Self {
        Self {
            start: Instant::now(),
            phases: Vec::new(),
        }
    }

    fn time<T>(&mut self, phase: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f().map_err(|e| match e {
            e @ Error::Phase { .. } => e,
            e => e.in_phase(phase, None),
        });
        self.phases.push(PhaseTiming {
            phase: phase.to_string(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        out
    }

    fn finish(&self) -> Timings {
        Timings {
            phases: self.phases.clone(),
            total_seconds: self.start.elapsed().as_secs_f64(),
        }
    }
}

fn with_pool<T: Send>(cfg: &PipelineConfig, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match cfg.effective_workers()? {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(f),
    }
}

/// Runs every phase from encoding to aggregation and writes the artifacts
/// into `cfg.output_dir`. On failure a partial `manifest.json` is left there.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let mut manifest = ArtifactManifest::default();
    let out = with_pool(cfg, || execute(cfg, None, &mut manifest));
    finish_manifest(cfg, out, manifest)
}

/// Runs the flow and aggregation phases on caller-supplied second frames,
/// bypassing generation. `cfg.n_samples` is ignored.
pub fn run_from_frames(cfg: &PipelineConfig, x0: &ImagePlane, frames: Vec<ImagePlane>) -> Result<PipelineReport> {
    if frames.is_empty() {
        return Err(Error::invalid("at least one frame is required"));
    }
    let mut manifest = ArtifactManifest::default();
    let out = with_pool(cfg, || execute(cfg, Some((x0.clone(), frames)), &mut manifest));
    finish_manifest(cfg, out, manifest)
}

fn finish_manifest(
    cfg: &PipelineConfig,
    out: Result<PipelineReport>,
    mut manifest: ArtifactManifest,
) -> Result<PipelineReport> {
    match out {
        Ok(report) => Ok(report),
        Err(e) => {
            manifest.complete = false;
            manifest.error = Some(e.to_string());
            if std::fs::create_dir_all(&cfg.output_dir).is_ok() {
                let _ = write_json(&cfg.output_dir.join("manifest.json"), &manifest);
            }
            Err(e)
        }
    }
}

fn execute(
    cfg: &PipelineConfig,
    injected: Option<(ImagePlane, Vec<ImagePlane>)>,
    manifest: &mut ArtifactManifest,
) -> Result<PipelineReport> {
    let mut clock = Clock::new();
    let mut conditioning = None;
    let (x0, frames) = match injected {
        Some(pair) => pair,
        None => {
            let x0 = clock.time("encode", || ImagePlane::load_png(&cfg.input_image))?;
            let frames = match &cfg.predictor {
                PredictorConfig::GaussianOracle {
                    mu,
                    sigma2,
                    bias_target,
                } => {
                    let oracle = OracleSetup {
                        mu: mu.to_vec(),
                        sigma2: *sigma2,
                        bias_target: bias_target.clone(),
                    };
                    let (frames, summary) = generate_latent(cfg, &x0, &oracle, &mut clock)?;
                    conditioning = summary;
                    frames
                }
                PredictorConfig::Bridge { command, token } => {
                    let client = clock.time("generate", || BridgeClient::spawn(command))?;
                    let mut frames = Vec::with_capacity(cfg.n_samples);
                    clock.time("generate", || {
                        for i in 0..cfg.n_samples {
                            let seed = RngStream::new(cfg.seed, phase_stream(i as u64 + 1, PHASE_NEARBY)).next_u64();
                            let frame = client
                                .generate(&x0, cfg.delta, cfg.t_inv, token, seed)
                                .map_err(|e| e.in_phase("generate", Some(i)))?;
                            frames.push(frame);
                        }
                        Ok(())
                    })?;
                    frames
                }
            };
            (x0, frames)
        }
    };

    let dist = clock.time("flow", || {
        let estimator: Box<dyn FlowEstimator> = match &cfg.estimator {
            EstimatorConfig::BlockMatching { params } => Box::new(BlockMatcher::new(*params)?),
            EstimatorConfig::Bridge { command } => {
                Box::new(BridgeFlowEstimator::new(BridgeClient::spawn(command)?))
            }
        };
        estimate_distribution(&x0, &frames, &estimator)
    })?;

    let (metrics, polar) = clock.time("aggregate", || aggregate(cfg, &dist))?;

    clock.time("write", || write_members(cfg, &frames, &dist, &polar, manifest))?;
    let timings = clock.finish();
    write_json(&cfg.output_dir.join("timings.json"), &timings)?;
    manifest.timings = Some("timings.json".into());
    manifest.report = Some("report.json".into());
    manifest.complete = true;

    let report = PipelineReport {
        seed: cfg.seed,
        metrics,
        polar,
        conditioning,
        manifest: manifest.clone(),
        config: cfg.echo(),
        timings,
    };
    write_json(&cfg.output_dir.join("report.json"), &report)?;
    write_json(&cfg.output_dir.join("manifest.json"), manifest)?;
    Ok(report)
}

struct OracleSetup {
    mu: Vec<f64>,
    sigma2: f64,
    bias_target: Option<Vec<f64>>,
}

fn generate_latent(
    cfg: &PipelineConfig,
    x0: &ImagePlane,
    oracle: &OracleSetup,
    clock: &mut Clock,
) -> Result<(Vec<ImagePlane>, Option<ConditioningSummary>)> {
    let z0 = clock.time("encode", || cfg.codec.encode(x0))?;
    let schedule = clock.time("encode", || {
        NoiseSchedule::build(cfg.schedule.kind, cfg.schedule.steps)?.strided(cfg.t_inv)
    })?;
    if oracle.mu.len() != 1 && oracle.mu.len() != z0.dim() {
        return Err(Error::Config(format!(
            "oracle mu has {} entries, latent has {}",
            oracle.mu.len(),
            z0.dim()
        )));
    }
    let mut predictor = GaussianOraclePredictor::new(oracle.mu.clone(), oracle.sigma2, schedule.clone())
        .map_err(|e| Error::Config(e.to_string()))?;
    if let Some(target) = &oracle.bias_target {
        predictor = predictor.with_bias_target(ConditioningVector::new(target.clone())?);
    }
    let t_end = schedule.steps();

    let e_init = ConditioningVector::new(cfg.conditioning.initial_vector().to_vec())?;
    let (e, summary) = clock.time("conditioning", || match (&cfg.conditioning, cfg.conditioning.inversion()) {
        (ConditioningConfig::Invert { .. }, Some(inv)) => {
            let rng = RngStream::new(cfg.seed, phase_stream(0, PHASE_CONDITIONING));
            let out = invert_conditioning(&z0, &e_init, &inv, &schedule, &predictor, &rng)?;
            let summary = ConditioningSummary {
                embedding: out.embedding.as_slice().to_vec(),
                loss_trace: out.loss_trace,
            };
            Ok((out.embedding, Some(summary)))
        }
        _ => Ok((e_init.clone(), None)),
    })?;

    let z_t = clock.time("forward", || match cfg.forward_mode {
        ForwardMode::DdimInvert => ddim_invert(&z0, &e, &schedule, &predictor, t_end),
        ForwardMode::Stochastic => {
            let mut rng = RngStream::new(cfg.seed, phase_stream(0, PHASE_FORWARD));
            forward_sample(&z0.clone().with_timestep(0), t_end, &schedule, &mut rng)
        }
    })?;

    let neighbours: Vec<LatentState> = clock.time("nearby", || {
        (0..cfg.n_samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = RngStream::new(cfg.seed, phase_stream(i as u64 + 1, PHASE_NEARBY));
                perturb_on_shell(&z_t, cfg.delta, &mut rng).map_err(|err| err.in_phase("nearby", Some(i)))
            })
            .collect()
    })?;

    let cleaned: Vec<LatentState> = clock.time("reverse", || {
        neighbours
            .par_iter()
            .enumerate()
            .map(|(i, z)| {
                ddim_reverse_chain(z, &e, &schedule, &predictor).map_err(|err| err.in_phase("reverse", Some(i)))
            })
            .collect()
    })?;

    let frames = clock.time("decode", || {
        cleaned
            .par_iter()
            .enumerate()
            .map(|(i, z)| cfg.codec.decode(z).map_err(|err| err.in_phase("decode", Some(i))))
            .collect()
    })?;
    Ok((frames, summary))
}

fn aggregate(cfg: &PipelineConfig, dist: &FlowDistribution) -> Result<(MetricReport, PolarHistogram)> {
    let gt = match &cfg.gt_flow {
        Some(path) => {
            let gt = read_flow(path)?;
            if gt.dims() != dist.source_dims() {
                return Err(Error::invalid(format!(
                    "gt_flow is {:?}, frames are {:?}",
                    gt.dims(),
                    dist.source_dims()
                )));
            }
            Some(gt)
        }
        None => None,
    };
    let metrics = MetricReport::compute(dist, gt.as_ref(), None, &cfg.entropy_grid)?;
    let mut polar = PolarHistogram::new(POLAR_SECTORS)?;
    for m in dist.members() {
        polar.add_flow(m);
    }
    Ok((metrics, polar))
}

fn write_members(
    cfg: &PipelineConfig,
    frames: &[ImagePlane],
    dist: &FlowDistribution,
    polar: &PolarHistogram,
    manifest: &mut ArtifactManifest,
) -> Result<()> {
    let out = &cfg.output_dir;
    for sub in ["frames", "flows"] {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir, e))?;
    }
    for (i, frame) in frames.iter().enumerate() {
        let rel = format!("frames/frame_{i:04}.png");
        frame.save_png(&out.join(&rel))?;
        manifest.frames.push(rel);
    }
    for (i, flow) in dist.members().iter().enumerate() {
        let rel = format!("flows/flow_{i:04}.flo");
        write_bytes(&out.join(&rel), &encode_flo(flow)?)?;
        manifest.flows.push(rel);
    }
    render_polar_svg(polar, &out.join("polar.svg"))?;
    manifest.polar = Some("polar.svg".into());
    Ok(())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialise");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// One cell of an ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub delta: f64,
    pub n_samples: usize,
    pub text_inversion: bool,
    pub epe_mean: Option<f64>,
    pub ae_mean_deg: Option<f64>,
    pub f1_all_pct: Option<f64>,
    pub entropy: Option<f64>,
    /// Cell directory relative to the grid's output directory.
    pub output_dir: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

/// Runs one pipeline per `(delta, count, inversion)` cell, in that nesting
/// order, each into its own subdirectory of `base.output_dir`. Cells with
/// inversion on use `base`'s invert conditioning; cells with it off use the
/// inversion's starting vector as a fixed embedding. A failing cell is
/// recorded and the rest still run. The table is also written to
/// `ablation.json`.
pub fn run_ablation_grid(
    base: &PipelineConfig,
    deltas: &[f64],
    counts: &[usize],
    inversion: &[bool],
) -> Result<AblationTable> {
    if deltas.is_empty() || counts.is_empty() || inversion.is_empty() {
        return Err(Error::invalid("ablation grids must be non-empty"));
    }
    let init = match &base.conditioning {
        ConditioningConfig::Invert { init, .. } => init.clone(),
        ConditioningConfig::Fixed { vector } if inversion.iter().all(|on| !on) => vector.clone(),
        ConditioningConfig::Fixed { .. } => {
            return Err(Error::Config(
                "ablation with inversion on needs invert conditioning in the base config".into(),
            ))
        }
    };
    let mut rows = Vec::new();
    for &delta in deltas {
        for &count in counts {
            for &on in inversion {
                let rel = format!("delta{delta}_n{count}_{}", if on { "inv" } else { "fixed" });
                let mut cell = base.clone();
                cell.delta = delta;
                cell.n_samples = count;
                cell.output_dir = base.output_dir.join(&rel);
                if !on {
                    cell.conditioning = ConditioningConfig::Fixed { vector: init.clone() };
                }
                let row = match run_pipeline(&cell) {
                    Ok(r) => AblationRow {
                        delta,
                        n_samples: count,
                        text_inversion: on,
                        epe_mean: r.metrics.epe_mean,
                        ae_mean_deg: r.metrics.ae_mean_deg,
                        f1_all_pct: r.metrics.f1_all_pct,
                        entropy: Some(r.metrics.entropy),
                        output_dir: rel,
                        error: None,
                    },
                    Err(e) => AblationRow {
                        delta,
                        n_samples: count,
                        text_inversion: on,
                        epe_mean: None,
                        ae_mean_deg: None,
                        f1_all_pct: None,
                        entropy: None,
                        output_dir: rel,
                        error: Some(e.to_string()),
                    },
                };
                rows.push(row);
            }
        }
    }
    let table = AblationTable { seed: base.seed, rows };
    std::fs::create_dir_all(&base.output_dir).map_err(|e| Error::io(&base.output_dir, e))?;
    write_json(&base.output_dir.join("ablation.json"), &table)?;
    Ok(table)
}

