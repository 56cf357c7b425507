//! DDIM diffusion against a pluggable noise predictor.

mod ddim;
mod loss;
mod predictor;
mod schedule;

pub use ddim::{ddim_invert, ddim_reverse_chain, forward_sample};
pub use loss::{dpm_loss, invert_conditioning, InversionConfig, InversionOutcome};
pub use predictor::{GaussianOraclePredictor, NoisePredictor, ZeroPredictor};
pub use schedule::{NoiseSchedule, ScheduleKind};
