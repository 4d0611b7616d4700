//! Workflow composition, validation, execution and profiling.

mod compare;
mod exec;
mod locate;
mod spec;
mod validate;

pub use compare::{
    compare_workflows, compare_workflows_with_runs, linear_fit, scaling_probe, ComparisonReport, ComparisonRow,
    LinearFit, ScalingPoint, ScalingReport,
};
pub use exec::{
    execute_workflow, resident_mb, ExecConfig, MemorySample, PipelineError, RunProfile, StageError, StageProfile,
    WorkflowRun,
};
pub use spec::{
    parse_workflow, preset, ClusterMode, DurationParams, IncrementalParams, InputStream, IntegratorParams,
    OscillationParams, Overrides, ParseError, SegmentationParams, StageSpec, WorkflowSpec, PRESET_NAMES,
};
pub use validate::{has_errors, validate_workflow, Diagnostic, Severity};
