//! CoT annotation workflow: step generation, explanation generation,
//! consistency checking and expert review, all against pluggable clients.

pub mod client;
pub mod generate;
pub mod review;
pub mod template;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use client::{ClientConfig, CommandClient, EchoClient, FailingClient, GenerationClient, GenerationRequest, MockClient, ScriptedClient};
pub use generate::{
    build_explanation_prompt, build_step_prompt, generate_cot_explanation, generate_steps, parse_step_block, CallRecord,
    GeneratedExplanation, GeneratedSteps,
};
pub use review::{
    apply_review_decision, consistency_check, export, fixed_clock, rule_based_check, system_clock, Checker, Clock, ConsistencyReport,
    Decision, Exclusion, ExportOutcome, ReviewItem, ReviewQueue, ReviewStatus, Verdict,
};
pub use template::{PromptTemplate, TemplateSet};

use crate::data::{DatasetManifest, MediaRef};
use crate::error::{EfaError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotateConfig {
    /// Text model that writes the standard steps.
    pub llm: ClientConfig,
    /// Video-language model that writes explanations.
    pub vlm: ClientConfig,
    /// Consistency checker; ignored when `rule_based_checker` is set.
    pub checker: ClientConfig,
    pub rule_based_checker: bool,
    /// Replace the lexicon with freshly generated steps.
    pub regenerate_steps: bool,
    /// Total tries per step request, including the first.
    pub attempts: usize,
    /// Directory of template overrides; the shipped templates when unset.
    pub templates_dir: Option<PathBuf>,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self {
            llm: ClientConfig::Mock,
            vlm: ClientConfig::Mock,
            checker: ClientConfig::Mock,
            rule_based_checker: false,
            regenerate_steps: true,
            attempts: 3,
            templates_dir: None,
        }
    }
}

impl AnnotateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.attempts == 0 {
            return Err(EfaError::Config("annotate.attempts must be at least 1".into()));
        }
        self.llm.validate()?;
        self.vlm.validate()?;
        self.checker.validate()
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        match &self.templates_dir {
            Some(dir) => TemplateSet::load(dir),
            None => Ok(TemplateSet::default()),
        }
    }
}

pub struct AnnotationClients<'a> {
    pub llm: &'a dyn GenerationClient,
    pub vlm: &'a dyn GenerationClient,
    pub checker: Checker<'a>,
}

pub struct AnnotationRun {
    /// Working manifest: generated lexicon (if enabled) and generated `cot_text`.
    pub manifest: DatasetManifest,
    pub calls: Vec<CallRecord>,
    pub reports: Vec<(String, ConsistencyReport)>,
}

pub fn media_label(manifest: &DatasetManifest, media: &MediaRef) -> String {
    match media {
        MediaRef::Features { path } => manifest.resolve(path).display().to_string(),
        MediaRef::Frames { dir } => manifest.resolve(dir).display().to_string(),
        MediaRef::Handle { id } => id.clone(),
    }
}

/// Run the whole workflow over `manifest`. Client calls for different samples
/// run concurrently; queue writes happen afterwards in record order, so
/// reruns with deterministic clients produce identical logs.
pub fn annotate_manifest(
    manifest: &DatasetManifest,
    clients: &AnnotationClients<'_>,
    templates: &TemplateSet,
    config: &AnnotateConfig,
    queue: &mut ReviewQueue,
) -> Result<AnnotationRun> {
    let mut working = manifest.clone();
    let mut calls = Vec::new();
    if config.regenerate_steps {
        for entry in working.lexicon.values_mut() {
            let mode = manifest
                .records
                .iter()
                .find(|r| r.category_id == entry.category_id)
                .map_or(crate::data::WorkoutMode::Manual, |r| r.workout_mode);
            let name = if entry.category_name.is_empty() { format!("category {}", entry.category_id) } else { entry.category_name.clone() };
            let generated = generate_steps(clients.llm, templates, &name, mode, config.attempts)?;
            calls.extend(generated.calls.iter().cloned());
            *entry = generated.into_entry(entry.category_id, &entry.category_name)?;
        }
    }

    let results: Vec<Result<(GeneratedExplanation, ConsistencyReport)>> = working
        .records
        .par_iter()
        .map(|r| {
            let entry = working.lexicon_entry(r.category_id)?;
            let media = media_label(&working, &r.media_ref);
            let g =
                generate_cot_explanation(clients.vlm, templates, &r.sample_id, &media, &r.category_name, r.workout_mode, entry, r.quality)?;
            let report = review::judge(&clients.checker, templates, &g.text, &entry.steps, r.quality)?;
            Ok((g, report))
        })
        .collect();

    let mut reports = Vec::new();
    for (record, result) in working.records.iter_mut().zip(results) {
        let (g, report) = result?;
        queue.record_check(&record.sample_id, &g.text, &report)?;
        if report.verdict == Verdict::Fail {
            queue.enqueue(&record.sample_id, &g.text, &report)?;
        }
        record.cot_text = g.text;
        calls.push(g.call);
        reports.push((record.sample_id.clone(), report));
    }
    working.validate()?;
    Ok(AnnotationRun { manifest: working, calls, reports })
}
