//! Agentic arbitration harness for speech and audio tasks.
//!
//! The crate covers the full loop around an action-token agent: building
//! oracle `<internal>`/`<external>`/`<rewrite>` labels from multi-source
//! hypotheses, serializing SFT targets, routing inference through the
//! action space over pluggable backends (live HTTP, replay fixtures,
//! scripted mocks), applying `<tool:*>` audio enhancements, and scoring
//! runs with WER, accuracy, per-token P/R/F1, confusion matrices, and
//! oracle bounds.
//!
//! Counting is integer throughout; metric ratios are generic over
//! [`scalar::Scalar`] (f32/f64), with f64 aliases below for the common
//! case.

pub mod action;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod gateway;
pub mod hypothesis;
pub mod jsonl;
pub mod label;
pub mod manifest;
pub mod prompt;
pub mod router;
pub mod scalar;
pub mod text_metrics;
pub mod tools;

pub use action::{ActionToken, ToolName};
pub use config::{RunConfig, SeedPlan};
pub use dataset::{load_samples, Sample, SampleError, TaskKind};
pub use evaluation::{confusion, eval_asr, eval_qa, token_metrics, ConfusionMatrix};
pub use gateway::{
    BackendKind, BackendRole, BackendSpec, Gateway, GenerationRequest, GenerationResult,
};
pub use hypothesis::{Hypothesis, HypothesisSet};
pub use label::{build_labeled_dataset, label_asr, label_qa, GoldLabel, LabeledExample};
pub use manifest::RunManifest;
pub use prompt::{
    build_target, extract_choice, parse_model_output, ChoiceId, OptionSet, PromptBundle,
};
pub use router::{run_pipeline, ArbitrationPolicy, PolicyKind, RoutingTrace};
pub use text_metrics::{aggregate_wer, align_edit, normalize_text, wer, NormalizationPolicy};
pub use tools::{apply_tool, ToolRegistry, ToolSpec};

/// Default scalar type for reported ratios.
pub type Ratio = f64;

/// Concrete f64 instantiations of the generic metric types.
pub type EvalReport = evaluation::EvalReport<Ratio>;
pub type TokenMetricsReport = evaluation::TokenMetricsReport<Ratio>;
pub type TokenPrf = evaluation::TokenPrf<Ratio>;
pub type DatasetMetrics = evaluation::DatasetMetrics<Ratio>;
pub type AsrLabel = label::AsrLabel<Ratio>;
pub type CandidateWers = label::CandidateWers<Ratio>;

/// f32 instantiations, for callers that prefer narrow reports.
pub type EvalReport32 = evaluation::EvalReport<f32>;
pub type TokenMetricsReport32 = evaluation::TokenMetricsReport<f32>;
