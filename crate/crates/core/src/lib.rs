//! Diffusion-based sampling of plausible optical-flow distributions.
//!
//! A source image is encoded to a latent, carried to a noisy timestep,
//! perturbed on its spherical shell, denoised back into `N` second frames and
//! paired with the source for dense flow estimation. The resulting ordered
//! distribution of flows is scored for accuracy and diversity.

pub mod bridge;
pub mod diffusion;
pub mod error;
pub mod flow;
pub mod image;
pub mod io;
pub mod latent;
pub mod metrics;
pub mod nearby;
pub mod pipeline;

pub use diffusion::{
    ddim_invert, ddim_reverse_chain, dpm_loss, forward_sample, invert_conditioning, GaussianOraclePredictor,
    InversionConfig, InversionOutcome, NoisePredictor, NoiseSchedule, ScheduleKind, ZeroPredictor,
};
pub use error::{Error, Result};
pub use flow::{block_matching_flow, estimate_distribution, BlockMatchParams, BlockMatcher, FlowEstimator, FlowField, MatchCost};
pub use image::{synth_scene, warp_image, ImagePlane, LatentCodec, SceneSpec};
pub use latent::{ConditioningVector, LatentState, RngStream};
pub use metrics::{EntropyConfig, FlowDistribution, MetricReport, PolarHistogram};
pub use nearby::{perturb_on_shell, sample_neighbors, NearbyConfig};
pub use pipeline::{run_ablation_grid, run_from_frames, run_pipeline, PipelineConfig, PipelineReport};
