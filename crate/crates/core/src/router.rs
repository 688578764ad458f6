//! Agentic inference: gather first-pass hypotheses, obtain an action
//! decision, and execute it, including on-demand rewrites and
//! tool-augmented re-perception.
//!
//! Routing runs as a bounded loop: each pass gathers hypotheses for the
//! current audio reference and asks the policy for a decision. Core
//! tokens produce the final text; a tool token enhances the audio and
//! re-enters the loop at the next depth. Per-sample failures never abort
//! the pipeline unless strict mode is on.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionToken;
use crate::config::RunConfig;
use crate::dataset::{Sample, SampleError, TaskKind};
use crate::gateway::{BackendRole, Gateway, GenerationRequest, GenerationResult, RequestPrompt};
use crate::hypothesis::{Hypothesis, HypothesisSet};
use crate::label::{label_asr, label_qa};
use crate::prompt::{
    self, build_asr_ger_prompt, build_asr_prompt, build_qa_answer_prompt, build_qa_prompt,
    build_qa_rewrite_prompt, build_transcribe_prompt, ChoiceId, OptionSet, PromptError,
};
use crate::tools::{apply_tool, ToolRegistry};

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("strict mode: sample {} failed at {}: {}", .0.sample_id, .0.stage, .0.error)]
    Strict(SampleError),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

/// How decisions are produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PolicyKind {
    /// Ask the arbiter backend for a token (and possibly a payload).
    Model,
    /// Recompute the oracle label from the gold answer.
    Oracle,
    /// Always emit one fixed token.
    Fixed { token: ActionToken },
    /// Always rewrite; reproduces the cascaded-correction baseline.
    CascadeGer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArbitrationPolicy {
    #[serde(flatten)]
    pub kind: PolicyKind,
    /// Used when the arbiter output carries no action token.
    #[serde(default = "default_fallback")]
    pub fallback: ActionToken,
}

fn default_fallback() -> ActionToken {
    ActionToken::Internal
}

impl Default for ArbitrationPolicy {
    fn default() -> Self {
        ArbitrationPolicy {
            kind: PolicyKind::Model,
            fallback: default_fallback(),
        }
    }
}

impl ArbitrationPolicy {
    pub fn model() -> Self {
        Self::default()
    }

    pub fn oracle() -> Self {
        ArbitrationPolicy {
            kind: PolicyKind::Oracle,
            fallback: default_fallback(),
        }
    }

    pub fn fixed(token: ActionToken) -> Self {
        ArbitrationPolicy {
            kind: PolicyKind::Fixed { token },
            fallback: default_fallback(),
        }
    }

    pub fn cascade_ger() -> Self {
        ArbitrationPolicy {
            kind: PolicyKind::CascadeGer,
            fallback: default_fallback(),
        }
    }

    pub fn validate(&self) -> Result<(), RouteError> {
        if !self.fallback.is_core() {
            return Err(RouteError::InvalidPolicy(
                "fallback token must be <internal>, <external>, or <rewrite>".to_string(),
            ));
        }
        if let PolicyKind::Fixed { token } = &self.kind {
            if !token.is_core() {
                return Err(RouteError::InvalidPolicy(
                    "fixed token must be <internal>, <external>, or <rewrite>".to_string(),
                ));
            }
        }
        Ok(())
    }

    pub fn kind_str(&self) -> &'static str {
        match self.kind {
            PolicyKind::Model => "model",
            PolicyKind::Oracle => "oracle",
            PolicyKind::Fixed { .. } => "fixed",
            PolicyKind::CascadeGer => "cascade_ger",
        }
    }

    /// Oracle ASR decisions need the rewrite candidate up front.
    fn needs_ger_precompute(&self, task: TaskKind) -> bool {
        matches!(self.kind, PolicyKind::Oracle) && task == TaskKind::Asr
    }
}

/// One backend call made while routing a sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: BackendRole,
    pub backend_id: String,
    pub seed: u64,
    pub latency_ms: u64,
}

impl CallRecord {
    fn from_result(role: BackendRole, result: &GenerationResult) -> Self {
        CallRecord {
            role,
            backend_id: result.backend_id.clone(),
            seed: result.seed,
            latency_ms: result.latency_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolApplication {
    pub tool_name: String,
    pub old_audio_ref: String,
    pub new_audio_ref: String,
}

/// Per-sample record of the routing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingTrace {
    pub sample_id: String,
    /// The hypothesis set backing the final decision (the re-perceived
    /// set when a tool was applied).
    pub hypotheses: HypothesisSet,
    pub decision: ActionToken,
    pub decision_source: String,
    pub tool_applications: Vec<ToolApplication>,
    pub final_text: String,
    pub calls: Vec<CallRecord>,
    pub errors: Vec<String>,
}

fn fail(sample: &Sample, stage: &str, error: impl std::fmt::Display) -> SampleError {
    SampleError {
        sample_id: sample.sample_id.clone(),
        stage: stage.to_string(),
        error: error.to_string(),
    }
}

fn request(sample: &Sample, role: BackendRole, prompt: RequestPrompt, seed: u64) -> GenerationRequest {
    GenerationRequest {
        sample_id: sample.sample_id.clone(),
        role,
        prompt,
        audio_ref: sample.audio_ref.clone(),
        seed,
    }
}

fn hypothesis_from(result: GenerationResult, temperature: f64) -> Hypothesis {
    Hypothesis {
        text: result.text,
        backend_id: Some(result.backend_id),
        seed: Some(result.seed),
        temperature: Some(temperature),
    }
}

fn first_pass_prompt(sample: &Sample) -> Result<RequestPrompt, PromptError> {
    Ok(match sample.task {
        TaskKind::Asr => RequestPrompt::Bundle(build_transcribe_prompt(sample)),
        TaskKind::Qa => RequestPrompt::Bundle(build_qa_answer_prompt(sample)?),
    })
}

/// Gather the internal and external first-pass decodes (concurrently).
/// The sample fails only when both sources fail; a single failed source
/// leaves an error marker and degraded routing continues. The rewrite
/// candidate is not fetched here; see [`attach_ger`].
pub fn first_pass(
    sample: &Sample,
    gateway: &Gateway,
    config: &RunConfig,
) -> Result<(HypothesisSet, Vec<CallRecord>), SampleError> {
    let prompt = first_pass_prompt(sample).map_err(|e| fail(sample, "prompt", e))?;
    let seeds = config.external_seed_slice();
    if seeds.is_empty() {
        return Err(fail(sample, "config", "no external seeds configured (k must be >= 1)"));
    }
    let internal_req = request(sample, BackendRole::Internal, prompt.clone(), config.seeds.internal);
    let external_req = request(sample, BackendRole::External, prompt, seeds[0]);

    let (internal_res, external_res) = rayon::join(
        || gateway.generate(BackendRole::Internal, &internal_req),
        || gateway.sample_k(BackendRole::External, &external_req, seeds),
    );

    let mut set = HypothesisSet {
        internal: None,
        internal_error: None,
        external_nbest: Vec::new(),
        external_error: None,
        ger: None,
    };
    let mut calls = Vec::new();

    match internal_res {
        Ok(result) => {
            calls.push(CallRecord::from_result(BackendRole::Internal, &result));
            set.internal = Some(hypothesis_from(result, config.temperature(BackendRole::Internal)));
        }
        Err(e) => set.internal_error = Some(e.summary()),
    }
    match external_res {
        Ok(slots) => {
            for (idx, slot) in slots.into_iter().enumerate() {
                match slot {
                    Ok(result) => {
                        calls.push(CallRecord::from_result(BackendRole::External, &result));
                        set.external_nbest
                            .push(hypothesis_from(result, config.temperature(BackendRole::External)));
                    }
                    Err(e) => {
                        if config.strict || idx == 0 {
                            return Err(fail(sample, "external", e.summary()));
                        }
                        set.external_error = Some(e.summary());
                    }
                }
            }
        }
        Err(e) => set.external_error = Some(e.summary()),
    }

    if !set.routable() {
        return Err(fail(
            sample,
            "first_pass",
            "both internal and external decodes failed",
        ));
    }
    Ok((set, calls))
}

/// Fetch the rewrite/GER candidate and attach it to the set. Used by the
/// labeling pipeline and by oracle-policy routing; plain inference
/// generates rewrites on demand instead.
pub fn attach_ger(
    sample: &Sample,
    hyps: &mut HypothesisSet,
    gateway: &Gateway,
    config: &RunConfig,
) -> Result<Option<CallRecord>, SampleError> {
    let bundle = build_asr_ger_prompt(sample, hyps).map_err(|e| fail(sample, "ger_prompt", e))?;
    let req = request(sample, BackendRole::Ger, RequestPrompt::Bundle(bundle), config.seeds.ger);
    let result = gateway
        .generate(BackendRole::Ger, &req)
        .map_err(|e| fail(sample, "ger", e.summary()))?;
    let record = CallRecord::from_result(BackendRole::Ger, &result);
    hyps.ger = Some(hypothesis_from(result, config.temperature(BackendRole::Ger)));
    Ok(Some(record))
}

/// A policy's verdict for one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub token: ActionToken,
    pub payload: Option<String>,
    pub call: Option<CallRecord>,
    pub notes: Vec<String>,
}

/// Produce the action decision for `sample` under `policy`.
pub fn decide_action(
    sample: &Sample,
    hyps: &HypothesisSet,
    policy: &ArbitrationPolicy,
    gateway: &Gateway,
    config: &RunConfig,
) -> Result<Decision, SampleError> {
    match &policy.kind {
        PolicyKind::Fixed { token } => Ok(Decision {
            token: token.clone(),
            payload: None,
            call: None,
            notes: Vec::new(),
        }),
        PolicyKind::CascadeGer => Ok(Decision {
            token: ActionToken::Rewrite,
            payload: None,
            call: None,
            notes: Vec::new(),
        }),
        PolicyKind::Oracle => decide_oracle(sample, hyps, config),
        PolicyKind::Model => decide_model(sample, hyps, policy, gateway, config),
    }
}

fn decide_oracle(
    sample: &Sample,
    hyps: &HypothesisSet,
    config: &RunConfig,
) -> Result<Decision, SampleError> {
    let token = match sample.task {
        TaskKind::Asr => {
            let gold = sample
                .gold_transcript
                .as_ref()
                .ok_or_else(|| fail(sample, "oracle", "missing gold transcript"))?;
            label_asr::<f64>(gold, hyps, &config.normalization)
                .map_err(|e| fail(sample, "oracle", e))?
                .token
        }
        TaskKind::Qa => {
            let options = sample
                .options
                .as_ref()
                .ok_or_else(|| fail(sample, "oracle", "missing options"))?;
            let gold = sample
                .gold_choice_id()
                .ok_or_else(|| fail(sample, "oracle", "missing gold choice"))?;
            let internal_choice = hyps
                .internal_text()
                .and_then(|t| prompt::extract_choice(t, options).ok());
            let external_choices: Vec<Option<ChoiceId>> = hyps
                .external_nbest
                .iter()
                .map(|h| prompt::extract_choice(&h.text, options).ok())
                .collect();
            label_qa(&gold, internal_choice.as_ref(), &external_choices, options)
                .map_err(|e| fail(sample, "oracle", e))?
        }
    };
    Ok(Decision {
        token,
        payload: None,
        call: None,
        notes: Vec::new(),
    })
}

fn decide_model(
    sample: &Sample,
    hyps: &HypothesisSet,
    policy: &ArbitrationPolicy,
    gateway: &Gateway,
    config: &RunConfig,
) -> Result<Decision, SampleError> {
    let bundle = match sample.task {
        TaskKind::Asr => build_asr_prompt(sample, hyps),
        TaskKind::Qa => build_qa_prompt(sample, hyps),
    }
    .map_err(|e| fail(sample, "arbiter_prompt", e))?;
    let req = request(
        sample,
        BackendRole::Arbiter,
        RequestPrompt::Bundle(bundle),
        config.seeds.arbiter,
    );
    let result = gateway
        .generate(BackendRole::Arbiter, &req)
        .map_err(|e| fail(sample, "arbiter", e.summary()))?;
    let call = Some(CallRecord::from_result(BackendRole::Arbiter, &result));

    match prompt::parse_model_output(&result.text) {
        Ok((token, payload)) => Ok(Decision {
            token,
            payload: (!payload.is_empty()).then_some(payload),
            call,
            notes: Vec::new(),
        }),
        Err(e @ (PromptError::NoActionToken(_) | PromptError::UnknownTool(_))) => Ok(Decision {
            token: policy.fallback.clone(),
            payload: None,
            call,
            notes: vec![format!(
                "arbiter output unusable ({e}); fell back to {}",
                policy.fallback.render()
            )],
        }),
        Err(e) => Err(fail(sample, "arbiter_parse", e)),
    }
}

/// What executing one decision produced.
#[derive(Debug, Clone, PartialEq)]
pub enum ExecOutcome {
    /// The final text for the sample.
    Final(String),
    /// A tool ran; re-perceive with the enhanced audio reference.
    Reperceive {
        tool_name: String,
        new_audio_ref: String,
    },
}

/// Execute a decision against the gathered hypotheses.
///
/// Internal and external decisions reuse first-pass text byte-for-byte
/// (QA with k > 1 dispatches to the plurality answer over the sampled
/// choices). Rewrite reuses the arbiter payload when allowed, otherwise
/// it generates fresh: conditioned on audio plus all hypotheses for ASR,
/// audio only for QA. Tool decisions run the enhancement and request
/// re-perception; the routing loop re-runs the first pass and re-decides
/// at the next depth.
#[allow(clippy::too_many_arguments)]
pub fn execute_action(
    token: &ActionToken,
    payload: Option<&str>,
    sample: &Sample,
    hyps: &HypothesisSet,
    gateway: &Gateway,
    registry: &ToolRegistry,
    config: &RunConfig,
    calls: &mut Vec<CallRecord>,
) -> Result<ExecOutcome, SampleError> {
    match token {
        ActionToken::Internal => hyps
            .internal_text()
            .map(|t| ExecOutcome::Final(t.to_string()))
            .ok_or_else(|| fail(sample, "execute", "internal hypothesis unavailable")),
        ActionToken::External => {
            if hyps.external_nbest.is_empty() {
                return Err(fail(sample, "execute", "external hypothesis unavailable"));
            }
            if sample.task == TaskKind::Qa && hyps.external_nbest.len() > 1 {
                let options = sample
                    .options
                    .as_ref()
                    .ok_or_else(|| fail(sample, "execute", "missing options"))?;
                Ok(ExecOutcome::Final(qa_external_majority(hyps, options)))
            } else {
                Ok(ExecOutcome::Final(hyps.external_nbest[0].text.clone()))
            }
        }
        ActionToken::Rewrite => {
            if config.reuse_rewrite_payload {
                if let Some(text) = payload.filter(|t| !t.is_empty()) {
                    return Ok(ExecOutcome::Final(text.to_string()));
                }
            }
            let result = match sample.task {
                TaskKind::Asr => {
                    let bundle = build_asr_ger_prompt(sample, hyps)
                        .map_err(|e| fail(sample, "rewrite_prompt", e))?;
                    let req = request(
                        sample,
                        BackendRole::Ger,
                        RequestPrompt::Bundle(bundle),
                        config.seeds.ger,
                    );
                    gateway
                        .generate(BackendRole::Ger, &req)
                        .map_err(|e| fail(sample, "rewrite", e.summary()))?
                }
                TaskKind::Qa => {
                    let bundle = build_qa_rewrite_prompt(sample)
                        .map_err(|e| fail(sample, "rewrite_prompt", e))?;
                    let req = request(
                        sample,
                        BackendRole::Rewrite,
                        RequestPrompt::Bundle(bundle),
                        config.seeds.rewrite,
                    );
                    gateway
                        .generate(BackendRole::Rewrite, &req)
                        .map_err(|e| fail(sample, "rewrite", e.summary()))?
                }
            };
            let role = match sample.task {
                TaskKind::Asr => BackendRole::Ger,
                TaskKind::Qa => BackendRole::Rewrite,
            };
            calls.push(CallRecord::from_result(role, &result));
            Ok(ExecOutcome::Final(result.text))
        }
        ActionToken::Tool(name) => {
            let spec = registry
                .get(name)
                .map_err(|e| fail(sample, "tool", e))?;
            let new_ref = apply_tool(spec, &sample.audio_ref)
                .map_err(|e| fail(sample, "tool", e))?;
            Ok(ExecOutcome::Reperceive {
                tool_name: name.as_str().to_string(),
                new_audio_ref: new_ref,
            })
        }
    }
}

/// Inference-time plurality over the k sampled external answers; ties
/// break to the earliest slot. Falls back to the raw top-1 text when no
/// slot resolves to an option.
fn qa_external_majority(hyps: &HypothesisSet, options: &OptionSet) -> String {
    let mut tally: Vec<(char, usize, usize)> = Vec::new(); // (letter, count, first slot)
    for (idx, h) in hyps.external_nbest.iter().enumerate() {
        if let Ok(choice) = prompt::extract_choice(&h.text, options) {
            match tally.iter_mut().find(|(l, _, _)| *l == choice.letter) {
                Some(entry) => entry.1 += 1,
                None => tally.push((choice.letter, 1, idx)),
            }
        }
    }
    tally
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .and_then(|(letter, _, _)| options.get(letter))
        .map(|choice| choice.render())
        .unwrap_or_else(|| hyps.external_nbest[0].text.clone())
}

/// Evaluate the configured pre-arbiter hint against the current first
/// pass. Returns the enhanced audio reference when the hint fires.
fn hint_enhancement(
    sample: &Sample,
    hyps: &HypothesisSet,
    registry: &ToolRegistry,
    config: &RunConfig,
    depth: usize,
    notes: &mut Vec<String>,
) -> Option<String> {
    let hint = config.tool_hint.as_ref()?;
    if depth >= config.max_tool_depth {
        return None;
    }
    let internal = hyps.internal_text()?.to_lowercase();
    let matched = hint
        .internal_markers
        .iter()
        .any(|m| !m.is_empty() && internal.contains(&m.to_lowercase()));
    if !matched {
        return None;
    }
    let name = match crate::action::ToolName::new(&hint.tool) {
        Ok(name) => name,
        Err(_) => {
            notes.push(format!("tool hint {:?} is not a valid tool name", hint.tool));
            return None;
        }
    };
    let spec = match registry.get(&name) {
        Ok(spec) => spec,
        Err(e) => {
            notes.push(format!("tool hint skipped: {e}"));
            return None;
        }
    };
    match apply_tool(spec, &sample.audio_ref) {
        Ok(new_ref) => {
            notes.push(format!("pre-arbiter hint triggered <tool:{}>", hint.tool));
            Some(new_ref)
        }
        Err(e) => {
            notes.push(format!("tool hint failed: {e}"));
            None
        }
    }
}

/// Route a single sample to its final text.
pub fn route_sample(
    sample: &Sample,
    gateway: &Gateway,
    registry: &ToolRegistry,
    policy: &ArbitrationPolicy,
    config: &RunConfig,
) -> Result<RoutingTrace, SampleError> {
    let mut view = sample.clone();
    let mut calls = Vec::new();
    let mut errors = Vec::new();
    let mut tool_applications = Vec::new();

    let mut depth = 0usize;
    loop {
        let (mut hyps, mut pass_calls) = first_pass(&view, gateway, config)?;
        calls.append(&mut pass_calls);

        // Pre-arbiter hint: a matching marker in the internal decode can
        // trigger an enhancement before any decision is asked for. The
        // hint is advisory; when it cannot fire, routing proceeds.
        if let Some(new_audio_ref) =
            hint_enhancement(&view, &hyps, registry, config, depth, &mut errors)
        {
            depth += 1;
            tool_applications.push(ToolApplication {
                tool_name: config.tool_hint.as_ref().expect("hint fired").tool.clone(),
                old_audio_ref: view.audio_ref.clone(),
                new_audio_ref: new_audio_ref.clone(),
            });
            view.audio_ref = new_audio_ref;
            continue;
        }

        if policy.needs_ger_precompute(view.task) {
            if let Some(record) = attach_ger(&view, &mut hyps, gateway, config)? {
                calls.push(record);
            }
        }

        let decision = decide_action(&view, &hyps, policy, gateway, config)?;
        if let Some(call) = &decision.call {
            calls.push(call.clone());
        }
        errors.extend(decision.notes.iter().cloned());

        match execute_action(
            &decision.token,
            decision.payload.as_deref(),
            &view,
            &hyps,
            gateway,
            registry,
            config,
            &mut calls,
        )? {
            ExecOutcome::Final(final_text) => {
                return Ok(RoutingTrace {
                    sample_id: sample.sample_id.clone(),
                    hypotheses: hyps,
                    decision: decision.token,
                    decision_source: policy.kind_str().to_string(),
                    tool_applications,
                    final_text,
                    calls,
                    errors,
                });
            }
            ExecOutcome::Reperceive {
                tool_name,
                new_audio_ref,
            } => {
                depth += 1;
                if depth > config.max_tool_depth {
                    return Err(fail(
                        sample,
                        "execute",
                        format!("max tool depth {} exceeded", config.max_tool_depth),
                    ));
                }
                tool_applications.push(ToolApplication {
                    tool_name,
                    old_audio_ref: view.audio_ref.clone(),
                    new_audio_ref: new_audio_ref.clone(),
                });
                view.audio_ref = new_audio_ref;
            }
        }
    }
}

/// Result of routing a corpus: traces for successful samples and sidecar
/// errors for failed ones, both in input order.
#[derive(Debug)]
pub struct PipelineRun {
    pub traces: Vec<RoutingTrace>,
    pub errors: Vec<SampleError>,
}

/// Route every sample. Samples run on the current rayon pool; trace order
/// equals input order regardless of worker count. In strict mode the
/// first per-sample failure aborts the run.
pub fn run_pipeline(
    samples: &[Sample],
    gateway: &Gateway,
    registry: &ToolRegistry,
    config: &RunConfig,
) -> Result<PipelineRun, RouteError> {
    let policy = &config.policy;
    policy.validate()?;

    let outcomes: Vec<Result<RoutingTrace, SampleError>> = samples
        .par_iter()
        .map(|sample| route_sample(sample, gateway, registry, policy, config))
        .collect();

    let mut run = PipelineRun {
        traces: Vec::new(),
        errors: Vec::new(),
    };
    for outcome in outcomes {
        match outcome {
            Ok(trace) => run.traces.push(trace),
            Err(e) => {
                if config.strict {
                    return Err(RouteError::Strict(e));
                }
                run.errors.push(e);
            }
        }
    }
    Ok(run)
}
