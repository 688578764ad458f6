//! Subcommand implementations. Each returns whether per-sample errors
//! were recorded (exit code 1); fatal problems bubble up as errors
//! (exit code 2).

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use shh_core::action::ActionToken;
use shh_core::dataset::{load_samples, Sample, TaskKind};
use shh_core::evaluation::{
    self, confusion, eval_asr, eval_qa, oracle_hits_qa, oracle_pooled_counts_asr, token_metrics,
    AsrOracleCase, DatasetMetrics, EvalReport, QaOracleCase,
};
use shh_core::jsonl::{read_jsonl, write_jsonl_atomic, write_text_atomic};
use shh_core::label::{build_labeled_dataset, GoldLabel, LabeledExample};
use shh_core::manifest::RunManifest;
use shh_core::prompt::{build_asr_prompt, build_qa_prompt, PromptBundle};
use shh_core::router::{run_pipeline, PolicyKind, RoutingTrace};
use shh_core::scalar::ratio_or_zero;
use shh_core::{BackendRole, RunConfig};

use crate::CommonArgs;

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("failed to build worker pool")
}

fn write_manifest(config: &RunConfig, dataset: &Path, out: &Path) -> Result<()> {
    let manifest = RunManifest::build(config, Some(dataset))?;
    write_text_atomic(&out.join("manifest.json"), &(manifest.to_json_pretty() + "\n"))?;
    Ok(())
}

#[derive(Serialize)]
struct LabelSummary {
    labeled: u64,
    failed: u64,
    token_counts: BTreeMap<ActionToken, u64>,
}

pub(crate) fn label(common: &CommonArgs) -> Result<bool> {
    let config = common.load_config()?;
    let task = config
        .task
        .context("config must set `task` (\"asr\" or \"qa\") for labeling")?;
    let mut roles = vec![BackendRole::Internal, BackendRole::External];
    if task == TaskKind::Asr {
        roles.push(BackendRole::Ger);
    }
    config.require_backends(&roles)?;
    let samples = load_samples(&common.dataset)?;
    let gateway = config.build_gateway()?;

    let pool = worker_pool(config.workers)?;
    let run = pool.install(|| build_labeled_dataset(&samples, &gateway, task, &config));
    if config.strict {
        if let Some(e) = run.errors.first() {
            bail!(
                "strict mode: sample {} failed at {}: {}",
                e.sample_id,
                e.stage,
                e.error
            );
        }
    }

    std::fs::create_dir_all(&common.out)?;
    write_jsonl_atomic(&common.out.join("labeled.jsonl"), run.labeled.iter())?;
    write_jsonl_atomic(&common.out.join("errors.jsonl"), run.errors.iter())?;
    let summary = LabelSummary {
        labeled: run.labeled.len() as u64,
        failed: run.errors.len() as u64,
        token_counts: run.token_counts.clone(),
    };
    write_text_atomic(
        &common.out.join("summary.json"),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    write_manifest(&config, &common.dataset, &common.out)?;

    println!(
        "labeled {} samples ({} failed) -> {}",
        run.labeled.len(),
        run.errors.len(),
        common.out.display()
    );
    for (token, count) in &run.token_counts {
        println!("  {token}: {count}");
    }
    Ok(!run.errors.is_empty())
}

#[derive(Serialize, Deserialize)]
struct SftExportLine {
    sample_id: String,
    prompt_bundle: PromptBundle,
    target: String,
}

pub(crate) fn format_sft(common: &CommonArgs, labeled_path: &Path) -> Result<bool> {
    let samples = load_samples(&common.dataset)?;
    let index: BTreeMap<&str, &Sample> =
        samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let labeled: Vec<LabeledExample> = read_jsonl(labeled_path)?;

    let mut lines = Vec::with_capacity(labeled.len());
    for example in &labeled {
        let sample = index
            .get(example.sample_id.as_str())
            .with_context(|| format!("labeled example {} not in dataset", example.sample_id))?;
        let prompt_bundle = match example.task {
            TaskKind::Asr => build_asr_prompt(sample, &example.hypotheses),
            TaskKind::Qa => build_qa_prompt(sample, &example.hypotheses),
        }
        .with_context(|| format!("cannot build prompt for {}", example.sample_id))?;
        lines.push(SftExportLine {
            sample_id: example.sample_id.clone(),
            prompt_bundle,
            target: example.sft_target.clone(),
        });
    }
    std::fs::create_dir_all(&common.out)?;
    write_jsonl_atomic(&common.out.join("sft.jsonl"), lines.iter())?;
    println!("wrote {} SFT lines -> {}", lines.len(), common.out.display());
    Ok(false)
}

pub(crate) fn route(common: &CommonArgs) -> Result<bool> {
    let config = common.load_config()?;
    let mut roles = vec![BackendRole::Internal, BackendRole::External];
    if matches!(config.policy.kind, PolicyKind::Model) {
        roles.push(BackendRole::Arbiter);
    }
    config.require_backends(&roles)?;
    let samples = load_samples(&common.dataset)?;
    let gateway = config.build_gateway()?;
    let registry = config.build_tool_registry()?;

    let pool = worker_pool(config.workers)?;
    let run = pool.install(|| run_pipeline(&samples, &gateway, &registry, &config))?;

    std::fs::create_dir_all(&common.out)?;
    write_jsonl_atomic(&common.out.join("traces.jsonl"), run.traces.iter())?;
    write_jsonl_atomic(&common.out.join("errors.jsonl"), run.errors.iter())?;
    write_manifest(&config, &common.dataset, &common.out)?;

    println!(
        "routed {} samples ({} failed) -> {}",
        run.traces.len(),
        run.errors.len(),
        common.out.display()
    );
    Ok(!run.errors.is_empty())
}

fn task_suffix(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Asr => "asr",
        TaskKind::Qa => "qa",
    }
}

fn write_report_files(out: &Path, report: &EvalReport<f64>) -> Result<()> {
    let suffix = task_suffix(report.task);
    write_text_atomic(
        &out.join(format!("report_{suffix}.json")),
        &(serde_json::to_string_pretty(report)? + "\n"),
    )?;
    write_text_atomic(
        &out.join(format!("metrics_{suffix}.csv")),
        &evaluation::render_metrics_csv(report),
    )?;
    write_text_atomic(
        &out.join(format!("token_metrics_{suffix}.csv")),
        &evaluation::render_token_metrics_csv(report),
    )?;
    if let Some(matrix) = &report.confusion {
        write_text_atomic(
            &out.join(format!("confusion_{suffix}.csv")),
            &evaluation::render_confusion_csv(matrix),
        )?;
    }
    print!("{}", evaluation::render_text_table(report));
    Ok(())
}

/// Attach token metrics, confusion, and the oracle bound from labeled
/// examples to a task's report.
fn attach_labeled_analysis(
    report: &mut EvalReport<f64>,
    traces: &[&RoutingTrace],
    labeled: &[LabeledExample],
    samples: &BTreeMap<&str, &Sample>,
    config: &RunConfig,
) -> Result<()> {
    let task = report.task;
    let by_id: BTreeMap<&str, &LabeledExample> = labeled
        .iter()
        .filter(|l| l.task == task)
        .map(|l| (l.sample_id.as_str(), l))
        .collect();
    let mut predicted = Vec::new();
    let mut oracle = Vec::new();
    for trace in traces {
        if let Some(example) = by_id.get(trace.sample_id.as_str()) {
            predicted.push(trace.decision.clone());
            oracle.push(example.oracle_token.clone());
        }
    }
    if !predicted.is_empty() {
        report.token_metrics = Some(token_metrics(&predicted, &oracle)?);
        report.confusion = Some(confusion(&predicted, &oracle)?);
    }

    match task {
        TaskKind::Asr => {
            let cases: Vec<AsrOracleCase> = labeled
                .iter()
                .filter(|l| l.task == task)
                .filter_map(|l| match &l.gold {
                    GoldLabel::Text(gold) => Some(AsrOracleCase {
                        hyps: &l.hypotheses,
                        gold,
                    }),
                    GoldLabel::Choice(_) => None,
                })
                .collect();
            if !cases.is_empty() {
                report.oracle_bound =
                    Some(evaluation::oracle_bound_asr(&cases, &config.normalization)?);
            }
        }
        TaskKind::Qa => {
            let cases: Vec<QaOracleCase> = labeled
                .iter()
                .filter(|l| l.task == task)
                .filter_map(|l| {
                    let sample = samples.get(l.sample_id.as_str())?;
                    let options = sample.options.as_ref()?;
                    match &l.gold {
                        GoldLabel::Choice(gold) => Some(QaOracleCase {
                            hyps: &l.hypotheses,
                            gold,
                            options,
                        }),
                        GoldLabel::Text(_) => None,
                    }
                })
                .collect();
            if !cases.is_empty() {
                report.oracle_bound = Some(evaluation::oracle_bound_qa(&cases)?);
            }
        }
    }
    Ok(())
}

pub(crate) fn eval(
    common: &CommonArgs,
    traces_path: &Path,
    labeled_path: Option<&Path>,
) -> Result<bool> {
    let config = common.load_config()?;
    let samples = load_samples(&common.dataset)?;
    let index: BTreeMap<&str, &Sample> =
        samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let traces: Vec<RoutingTrace> = read_jsonl(traces_path)?;
    let labeled: Vec<LabeledExample> = match labeled_path {
        Some(path) => read_jsonl(path)?,
        None => Vec::new(),
    };

    let mut by_task: BTreeMap<&'static str, Vec<&RoutingTrace>> = BTreeMap::new();
    for trace in &traces {
        let sample = index
            .get(trace.sample_id.as_str())
            .with_context(|| format!("trace references unknown sample {}", trace.sample_id))?;
        by_task
            .entry(task_suffix(sample.task))
            .or_default()
            .push(trace);
    }
    if by_task.is_empty() {
        bail!("no traces to evaluate");
    }

    std::fs::create_dir_all(&common.out)?;
    write_manifest(&config, &common.dataset, &common.out)?;
    for (suffix, task_traces) in &by_task {
        let owned: Vec<RoutingTrace> = task_traces.iter().map(|t| (*t).clone()).collect();
        let mut report = if *suffix == "asr" {
            eval_asr::<f64>(&owned, &samples, &config.normalization)?
        } else {
            eval_qa::<f64>(&owned, &samples)?
        };
        report.manifest = Some("manifest.json".to_string());
        if !labeled.is_empty() {
            attach_labeled_analysis(&mut report, task_traces, &labeled, &index, &config)?;
        }
        write_report_files(&common.out, &report)?;
    }
    Ok(false)
}

#[derive(Serialize)]
struct OracleReport {
    task: TaskKind,
    metric_name: String,
    per_dataset: Vec<DatasetMetrics<f64>>,
    overall: f64,
}

pub(crate) fn oracle(common: &CommonArgs, labeled_path: &Path) -> Result<bool> {
    let config = common.load_config()?;
    let samples = load_samples(&common.dataset)?;
    let index: BTreeMap<&str, &Sample> =
        samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let labeled: Vec<LabeledExample> = read_jsonl(labeled_path)?;
    std::fs::create_dir_all(&common.out)?;

    let mut wrote_any = false;
    for task in [TaskKind::Asr, TaskKind::Qa] {
        let mut groups: BTreeMap<String, Vec<&LabeledExample>> = BTreeMap::new();
        for example in labeled.iter().filter(|l| l.task == task) {
            let sample = index
                .get(example.sample_id.as_str())
                .with_context(|| format!("labeled example {} not in dataset", example.sample_id))?;
            groups
                .entry(sample.dataset_id.clone())
                .or_default()
                .push(example);
        }
        if groups.is_empty() {
            continue;
        }
        let mut per_dataset = Vec::new();
        let (mut num_total, mut den_total) = (0u64, 0u64);
        for (dataset_id, examples) in groups {
            let (num, den) = match task {
                TaskKind::Asr => {
                    let cases: Vec<AsrOracleCase> = examples
                        .iter()
                        .filter_map(|l| match &l.gold {
                            GoldLabel::Text(gold) => Some(AsrOracleCase {
                                hyps: &l.hypotheses,
                                gold,
                            }),
                            GoldLabel::Choice(_) => None,
                        })
                        .collect();
                    oracle_pooled_counts_asr(&cases, &config.normalization)?
                }
                TaskKind::Qa => {
                    let cases: Vec<QaOracleCase> = examples
                        .iter()
                        .filter_map(|l| {
                            let sample = index.get(l.sample_id.as_str())?;
                            let options = sample.options.as_ref()?;
                            match &l.gold {
                                GoldLabel::Choice(gold) => Some(QaOracleCase {
                                    hyps: &l.hypotheses,
                                    gold,
                                    options,
                                }),
                                GoldLabel::Text(_) => None,
                            }
                        })
                        .collect();
                    (oracle_hits_qa(&cases), cases.len() as u64)
                }
            };
            num_total += num;
            den_total += den;
            per_dataset.push(DatasetMetrics {
                dataset_id,
                value: ratio_or_zero::<f64>(num, den),
                numerator: num,
                denominator: den,
                samples: examples.len() as u64,
            });
        }
        let report = OracleReport {
            task,
            metric_name: match task {
                TaskKind::Asr => "oracle_wer".to_string(),
                TaskKind::Qa => "oracle_accuracy".to_string(),
            },
            per_dataset,
            overall: ratio_or_zero::<f64>(num_total, den_total),
        };
        let suffix = task_suffix(task);
        write_text_atomic(
            &common.out.join(format!("oracle_{suffix}.json")),
            &(serde_json::to_string_pretty(&report)? + "\n"),
        )?;
        println!("{} {}: {}", suffix, report.metric_name, report.overall);
        for row in &report.per_dataset {
            println!("  {}: {} ({}/{})", row.dataset_id, row.value, row.numerator, row.denominator);
        }
        wrote_any = true;
    }
    if !wrote_any {
        bail!("labeled file holds no examples");
    }
    Ok(false)
}

pub(crate) fn report(report_path: &Path, out: &Path) -> Result<bool> {
    let raw = std::fs::read_to_string(report_path)
        .with_context(|| format!("cannot read {}", report_path.display()))?;
    let report: EvalReport<f64> = serde_json::from_str(&raw)
        .with_context(|| format!("{} is not a report", report_path.display()))?;
    std::fs::create_dir_all(out)?;
    write_report_files(out, &report)?;
    Ok(false)
}
