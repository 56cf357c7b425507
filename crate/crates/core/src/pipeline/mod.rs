//! End-to-end orchestration: encode, condition, noise, perturb, denoise,
//! decode, estimate flow, aggregate.

mod config;
mod run;

pub use config::{
    ConditioningConfig, EstimatorConfig, ForwardMode, PipelineConfig, PredictorConfig, ScalarOrVector,
    ScheduleConfig, WORKERS_ENV,
};
pub use run::{
    phase_stream, run_ablation_grid, run_from_frames, run_pipeline, AblationRow, AblationTable, ArtifactManifest,
    ConditioningSummary, PhaseTiming, PipelineReport, Timings, PHASE_CONDITIONING, PHASE_FORWARD, PHASE_NEARBY,
    POLAR_SECTORS,
};
