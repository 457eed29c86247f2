//! Rate-distortion evaluation, the relative-complexity ledger, reports and
//! the artifact configuration used by the command-line tool.

mod bdrate;
mod complexity;
mod config;
mod evaluate;
mod quality;
mod report;

pub use bdrate::{
    bd_rate, bd_rate_with, mean_log_rate_difference, overlap, BdMethod, CubicFit, MetricId, Pchip, RDCurve,
    MIN_POINTS,
};
pub use complexity::{complexity_ledger, write_complexity_csv, ComplexityRow, ConvStub, ProbeConfig, ProbeModel};
pub use config::{
    apply_override, ArtifactConfig, CalibrateSection, ComplexitySection, DatasetSection, EnhanceSection,
    GradcheckSection, ModelSpec,
};
pub use evaluate::{evaluate_sequences, evaluate_tool, EvalConfig, Sequence, SequenceSpec};
pub use quality::{frame_quality, msssim_scales, sequence_quality, ExternalMetric, Quality, PSNR_CAP};
pub use report::{BdRow, EvalReport, EvalRow, SequenceError, ANCHOR};
