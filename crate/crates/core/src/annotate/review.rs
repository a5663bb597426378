//! Consistency checking and the append-only review queue.
//!
//! The queue log is JSON Lines. Each line is one event: a consistency
//! verdict (`checked`), a new review item (`enqueued`) or a reviewer decision
//! (`decided`). The in-memory state is a replay of the log, so an existing
//! file can be reopened and extended.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::client::{sha256_hex, GenerationClient, GenerationRequest};
use super::generate::numbered_steps;
use super::template::TemplateSet;
use crate::data::{DatasetManifest, Quality};
use crate::error::{read_to_string, EfaError, Result};

pub const CHECKER_UNAVAILABLE: &str = "checker unavailable";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub verdict: Verdict,
    pub rationale: String,
    pub checker: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Approved,
    Edited,
    Rejected,
}

impl ReviewStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pending => "pending",
            Self::Approved => "approved",
            Self::Edited => "edited",
            Self::Rejected => "rejected",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: String,
    pub sample_id: String,
    pub text: String,
    pub verdict: Verdict,
    pub rationale: String,
    pub status: ReviewStatus,
    #[serde(default)]
    pub edited_text: Option<String>,
    #[serde(default)]
    pub note: Option<String>,
    pub created_at: u64,
    #[serde(default)]
    pub decided_at: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decision {
    Approve,
    Edit(String),
    Reject,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogEvent {
    Checked { sample_id: String, text_sha256: String, verdict: Verdict, rationale: String, checker: String, at: u64 },
    Enqueued { item: ReviewItem },
    Decided { id: String, status: ReviewStatus, edited_text: Option<String>, note: Option<String>, at: u64 },
}

/// Seconds since the Unix epoch, or whatever a test injects.
pub type Clock = Box<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Box::new(|| std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs()))
}

pub fn fixed_clock(at: u64) -> Clock {
    Box::new(move || at)
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct CheckRecord {
    text_sha256: String,
    verdict: Verdict,
    rationale: String,
}

pub struct ReviewQueue {
    path: Option<PathBuf>,
    file: Option<File>,
    clock: Clock,
    order: Vec<String>,
    items: BTreeMap<String, ReviewItem>,
    checks: BTreeMap<String, Vec<CheckRecord>>,
}

impl ReviewQueue {
    pub fn in_memory(clock: Clock) -> Self {
        Self { path: None, file: None, clock, order: Vec::new(), items: BTreeMap::new(), checks: BTreeMap::new() }
    }

    /// Open (or create) the log at `path` and replay it.
    pub fn open(path: &Path, clock: Clock) -> Result<Self> {
        let mut q = Self::in_memory(clock);
        if path.exists() {
            let text = read_to_string(path)?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let event: LogEvent =
                    serde_json::from_str(line).map_err(|e| EfaError::parse(format!("{}:{}", path.display(), i + 1), e))?;
                q.apply(event)?;
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| EfaError::io(parent, e))?;
        }
        q.file = Some(OpenOptions::new().create(true).append(true).open(path).map_err(|e| EfaError::io(path, e))?);
        q.path = Some(path.to_path_buf());
        Ok(q)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn apply(&mut self, event: LogEvent) -> Result<()> {
        match event {
            LogEvent::Checked { sample_id, text_sha256, verdict, rationale, .. } => {
                self.checks.entry(sample_id).or_default().push(CheckRecord { text_sha256, verdict, rationale });
            }
            LogEvent::Enqueued { item } => {
                if !self.items.contains_key(&item.id) {
                    self.order.push(item.id.clone());
                }
                self.items.insert(item.id.clone(), item);
            }
            LogEvent::Decided { id, status, edited_text, note, at } => {
                let item = self.items.get_mut(&id).ok_or_else(|| EfaError::UnknownReviewItem(id.clone()))?;
                item.status = status;
                item.edited_text = edited_text;
                item.note = note;
                item.decided_at = Some(at);
            }
        }
        Ok(())
    }

    /// The single appender: write the event, then update memory.
    fn append(&mut self, event: LogEvent) -> Result<()> {
        if let Some(file) = self.file.as_mut() {
            let line = serde_json::to_string(&event).expect("event serializes") + "\n";
            let path = self.path.clone().unwrap_or_default();
            file.write_all(line.as_bytes()).and_then(|_| file.flush()).map_err(|e| EfaError::io(path, e))?;
        }
        self.apply(event)
    }

    /// Record a verdict. Repeating the latest verdict for the same text is a no-op.
    pub fn record_check(&mut self, sample_id: &str, text: &str, report: &ConsistencyReport) -> Result<()> {
        let text_sha256 = sha256_hex(text);
        let rec = CheckRecord { text_sha256: text_sha256.clone(), verdict: report.verdict, rationale: report.rationale.clone() };
        if self.checks.get(sample_id).and_then(|v| v.last()) == Some(&rec) {
            return Ok(());
        }
        let at = (self.clock)();
        self.append(LogEvent::Checked {
            sample_id: sample_id.into(),
            text_sha256,
            verdict: report.verdict,
            rationale: report.rationale.clone(),
            checker: report.checker.clone(),
            at,
        })
    }

    /// Add a pending item for `text`; the id is derived from the sample and
    /// text, so re-enqueueing the same failure returns the existing item.
    pub fn enqueue(&mut self, sample_id: &str, text: &str, report: &ConsistencyReport) -> Result<&ReviewItem> {
        let id = format!("{sample_id}@{}", &sha256_hex(text)[..12]);
        if !self.items.contains_key(&id) {
            let item = ReviewItem {
                id: id.clone(),
                sample_id: sample_id.into(),
                text: text.into(),
                verdict: report.verdict,
                rationale: report.rationale.clone(),
                status: ReviewStatus::Pending,
                edited_text: None,
                note: None,
                created_at: (self.clock)(),
                decided_at: None,
            };
            self.append(LogEvent::Enqueued { item })?;
        }
        Ok(&self.items[&id])
    }

    pub fn get(&self, id: &str) -> Option<&ReviewItem> {
        self.items.get(id)
    }

    /// Items in creation order.
    pub fn items(&self) -> impl Iterator<Item = &ReviewItem> {
        self.order.iter().map(|id| &self.items[id])
    }

    pub fn pending(&self) -> impl Iterator<Item = &ReviewItem> {
        self.items().filter(|i| i.status == ReviewStatus::Pending)
    }

    fn passed(&self, sample_id: &str, text_sha256: &str) -> bool {
        self.checks
            .get(sample_id)
            .and_then(|v| v.iter().rev().find(|c| c.text_sha256 == text_sha256))
            .is_some_and(|c| c.verdict == Verdict::Pass)
    }
}

const STOPWORDS: [&str; 12] = ["the", "and", "with", "your", "from", "into", "that", "this", "then", "keep", "during", "before"];

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

/// The quality the text asserts, if any: `non-standard`, `non standard`,
/// `not standard`, `nonstandard` and `substandard` claim non-standard; a
/// remaining bare `standard` claims standard.
pub fn claimed_quality(text: &str) -> Option<Quality> {
    let w = words(text);
    let mut claim = None;
    for (i, word) in w.iter().enumerate() {
        let negated = i > 0 && matches!(w[i - 1].as_str(), "non" | "not");
        match word.as_str() {
            "nonstandard" | "substandard" => return Some(Quality::NonStandard),
            "standard" if negated => return Some(Quality::NonStandard),
            "standard" => claim = Some(Quality::Standard),
            _ => {}
        }
    }
    claim
}

/// A step is mentioned when at least half of its content words (four or
/// more letters, not a stopword) occur in the text.
pub fn mentioned_steps(text: &str, steps: &[String]) -> Vec<usize> {
    let have: BTreeSet<String> = words(text).into_iter().collect();
    steps
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            let content: BTreeSet<String> =
                words(s).into_iter().filter(|w| w.chars().count() >= 4 && !STOPWORDS.contains(&w.as_str())).collect();
            !content.is_empty() && 2 * content.iter().filter(|w| have.contains(*w)).count() >= content.len()
        })
        .map(|(i, _)| i)
        .collect()
}

/// Offline checker: the claimed quality must agree with the label and at
/// least one step must be mentioned.
pub fn rule_based_check(explanation: &str, steps: &[String], quality: Quality) -> (bool, String) {
    if let Some(claim) = claimed_quality(explanation) {
        if claim != quality {
            return (false, format!("text claims {} but the label is {}", claim.as_str(), quality.as_str()));
        }
    }
    let hits = mentioned_steps(explanation, steps);
    if hits.is_empty() {
        return (false, "text mentions none of the standard steps".into());
    }
    let list: Vec<String> = hits.iter().map(|i| (i + 1).to_string()).collect();
    (true, format!("label agrees; mentions step(s) {}", list.join(", ")))
}

pub enum Checker<'a> {
    Client(&'a dyn GenerationClient),
    RuleBased,
}

fn parse_verdict(reply: &str) -> Option<(Verdict, String)> {
    let mut lines = reply.lines().map(str::trim).filter(|l| !l.is_empty());
    let first = lines.next()?;
    let (key, value) = first.split_once(':')?;
    if !key.trim().eq_ignore_ascii_case("verdict") {
        return None;
    }
    let verdict = match value.trim().to_ascii_lowercase().as_str() {
        "pass" => Verdict::Pass,
        "fail" => Verdict::Fail,
        _ => return None,
    };
    let rationale = lines.collect::<Vec<_>>().join(" ");
    Some((verdict, if rationale.is_empty() { "no rationale given".into() } else { rationale }))
}

/// Judge one explanation, log the verdict, and enqueue a review item on failure.
pub fn consistency_check(
    checker: &Checker<'_>,
    templates: &TemplateSet,
    queue: &mut ReviewQueue,
    sample_id: &str,
    explanation: &str,
    steps: &[String],
    quality: Quality,
) -> Result<ConsistencyReport> {
    let report = judge(checker, templates, explanation, steps, quality)?;
    queue.record_check(sample_id, explanation, &report)?;
    if report.verdict == Verdict::Fail {
        queue.enqueue(sample_id, explanation, &report)?;
    }
    Ok(report)
}

/// The verdict alone, without touching any queue.
pub fn judge(
    checker: &Checker<'_>,
    templates: &TemplateSet,
    explanation: &str,
    steps: &[String],
    quality: Quality,
) -> Result<ConsistencyReport> {
    if explanation.trim().is_empty() || steps.is_empty() || steps.iter().any(|s| s.trim().is_empty()) {
        return Err(EfaError::InvalidArgument("consistency check needs a non-empty explanation and steps".into()));
    }
    match checker {
        Checker::RuleBased => {
            let (pass, rationale) = rule_based_check(explanation, steps, quality);
            Ok(ConsistencyReport { verdict: if pass { Verdict::Pass } else { Verdict::Fail }, rationale, checker: "rules".into() })
        }
        Checker::Client(client) => {
            let values = BTreeMap::from([
                ("quality", quality.as_str().to_string()),
                ("steps", numbered_steps(steps)),
                ("explanation", explanation.to_string()),
            ]);
            let request = GenerationRequest {
                prompt: templates.checker.render(&values)?,
                media: None,
                context: BTreeMap::from([
                    ("task".into(), "check".into()),
                    ("quality".into(), quality.as_str().into()),
                    ("steps".into(), steps.join("\n")),
                    ("explanation".into(), explanation.into()),
                ]),
            };
            let (verdict, rationale) = match client.generate(&request) {
                Ok(reply) => {
                    parse_verdict(&reply).unwrap_or_else(|| (Verdict::Fail, format!("unparseable checker reply: {}", reply.trim())))
                }
                Err(EfaError::Transport { .. }) => (Verdict::Fail, CHECKER_UNAVAILABLE.into()),
                Err(e) => return Err(e),
            };
            Ok(ConsistencyReport { verdict, rationale, checker: client.id() })
        }
    }
}

/// Decide a pending item. An edit replaces the sample's `cot_text` in `manifest`.
pub fn apply_review_decision(
    queue: &mut ReviewQueue,
    manifest: &mut DatasetManifest,
    id: &str,
    decision: Decision,
    note: Option<String>,
) -> Result<ReviewItem> {
    let item = queue.get(id).ok_or_else(|| EfaError::UnknownReviewItem(id.into()))?;
    if item.status != ReviewStatus::Pending {
        return Err(EfaError::AlreadyDecided { id: id.into(), status: item.status.as_str().into() });
    }
    let sample_id = item.sample_id.clone();
    let (status, edited_text) = match decision {
        Decision::Approve => (ReviewStatus::Approved, None),
        Decision::Reject => (ReviewStatus::Rejected, None),
        Decision::Edit(text) => {
            let text = text.trim().to_string();
            if text.is_empty() {
                return Err(EfaError::InvalidArgument("edited text is empty".into()));
            }
            let record = manifest
                .records
                .iter_mut()
                .find(|r| r.sample_id == sample_id)
                .ok_or_else(|| EfaError::InvalidArgument(format!("sample `{sample_id}` is not in the manifest")))?;
            record.cot_text = text.clone();
            (ReviewStatus::Edited, Some(text))
        }
    };
    let at = (queue.clock)();
    queue.append(LogEvent::Decided { id: id.into(), status, edited_text, note, at })?;
    Ok(queue.items[id].clone())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub sample_id: String,
    pub reason: String,
}

pub struct ExportOutcome {
    pub manifest: DatasetManifest,
    pub exclusions: Vec<Exclusion>,
}

/// Keep only records whose current text passed the consistency check or was
/// approved / edited in review; every other record is listed with a reason.
pub fn export(manifest: &DatasetManifest, queue: &ReviewQueue) -> Result<ExportOutcome> {
    let mut kept = Vec::new();
    let mut exclusions = Vec::new();
    for r in &manifest.records {
        let h = sha256_hex(&r.cot_text);
        let items: Vec<&ReviewItem> = queue.items().filter(|i| i.sample_id == r.sample_id).collect();
        let approved = items.iter().any(|i| match i.status {
            ReviewStatus::Approved => sha256_hex(&i.text) == h,
            ReviewStatus::Edited => i.edited_text.as_deref() == Some(r.cot_text.as_str()),
            _ => false,
        });
        if approved || queue.passed(&r.sample_id, &h) {
            kept.push(r.clone());
            continue;
        }
        let text_items: Vec<&&ReviewItem> = items.iter().filter(|i| sha256_hex(&i.text) == h).collect();
        let reason = if text_items.iter().any(|i| i.status == ReviewStatus::Rejected) {
            "rejected in review"
        } else if text_items.iter().any(|i| i.status == ReviewStatus::Pending) {
            "awaiting review"
        } else {
            "no passing consistency verdict"
        };
        exclusions.push(Exclusion { sample_id: r.sample_id.clone(), reason: reason.into() });
    }
    let mut out = DatasetManifest::new(kept, manifest.lexicon.values().cloned().collect(), manifest.num_categories)?;
    out.base_dir = manifest.base_dir.clone();
    Ok(ExportOutcome { manifest: out, exclusions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::client::{FailingClient, ScriptedClient};
    use crate::data::manifest::tests::fixture;

    fn steps() -> Vec<String> {
        ["Plant the feet wide.", "Brace the abdominal wall.", "Hinge at the hips.", "Drive through the heels.", "Lock out tall."]
            .map(String::from)
            .to_vec()
    }

    #[test]
    fn claims_are_detected() {
        assert_eq!(claimed_quality("This rep is non-standard."), Some(Quality::NonStandard));
        assert_eq!(claimed_quality("not standard at all"), Some(Quality::NonStandard));
        assert_eq!(claimed_quality("A standard repetition."), Some(Quality::Standard));
        assert_eq!(claimed_quality("Nothing claimed."), None);
    }

    #[test]
    fn fallback_rejects_wrong_claim() {
        let text = "This repetition is standard: the performer hinges at the hips smoothly.";
        assert!(!rule_based_check(text, &steps(), Quality::NonStandard).0);
        assert!(rule_based_check(text, &steps(), Quality::Standard).0);
        assert!(!rule_based_check("Looks fine overall.", &steps(), Quality::Standard).0);
    }

    #[test]
    fn pass_creates_no_item_and_fail_does() {
        let mut q = ReviewQueue::in_memory(fixed_clock(100));
        let t = TemplateSet::default();
        let pass = ScriptedClient::ok(["VERDICT: pass\nConsistent."]);
        let r = consistency_check(&Checker::Client(&pass), &t, &mut q, "s1", "text", &steps(), Quality::Standard).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(q.items().count(), 0);

        let fail = ScriptedClient::ok(["verdict: FAIL\nClaims the wrong label."]);
        let r = consistency_check(&Checker::Client(&fail), &t, &mut q, "s2", "text", &steps(), Quality::Standard).unwrap();
        assert_eq!(r.rationale, "Claims the wrong label.");
        let item = q.pending().next().unwrap();
        assert_eq!((item.sample_id.as_str(), item.status, item.created_at), ("s2", ReviewStatus::Pending, 100));
    }

    #[test]
    fn transport_failure_degrades_to_fail() {
        let mut q = ReviewQueue::in_memory(fixed_clock(0));
        let r = consistency_check(&Checker::Client(&FailingClient), &TemplateSet::default(), &mut q, "s", "x", &steps(), Quality::Standard)
            .unwrap();
        assert_eq!((r.verdict, r.rationale.as_str()), (Verdict::Fail, CHECKER_UNAVAILABLE));
        assert_eq!(q.pending().count(), 1);
        let garbled = ScriptedClient::ok(["maybe?"]);
        let r = judge(&Checker::Client(&garbled), &TemplateSet::default(), "x", &steps(), Quality::Standard).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(judge(&Checker::RuleBased, &TemplateSet::default(), " ", &steps(), Quality::Standard).is_err());
    }

    #[test]
    fn decisions_follow_the_state_machine() {
        let mut manifest = fixture();
        let id0 = manifest.records[0].sample_id.clone();
        let id1 = manifest.records[1].sample_id.clone();
        let mut q = ReviewQueue::in_memory(fixed_clock(5));
        let fail = ConsistencyReport { verdict: Verdict::Fail, rationale: "r".into(), checker: "rules".into() };
        let a = q.enqueue(&id0, &manifest.records[0].cot_text.clone(), &fail).unwrap().id.clone();
        let b = q.enqueue(&id1, &manifest.records[1].cot_text.clone(), &fail).unwrap().id.clone();
        assert_eq!(q.enqueue(&id0, &manifest.records[0].cot_text.clone(), &fail).unwrap().id, a);
        assert_eq!(q.items().count(), 2);

        let before = manifest.clone();
        let item = apply_review_decision(&mut q, &mut manifest, &a, Decision::Approve, None).unwrap();
        assert_eq!((item.status, item.decided_at), (ReviewStatus::Approved, Some(5)));
        assert_eq!(manifest, before);
        assert!(matches!(apply_review_decision(&mut q, &mut manifest, &a, Decision::Reject, None), Err(EfaError::AlreadyDecided { .. })));
        assert!(matches!(
            apply_review_decision(&mut q, &mut manifest, "nope", Decision::Approve, None),
            Err(EfaError::UnknownReviewItem(_))
        ));
        apply_review_decision(&mut q, &mut manifest, &b, Decision::Edit("Rewritten text.".into()), Some("fixed".into())).unwrap();
        assert_eq!(manifest.records[1].cot_text, "Rewritten text.");
    }

    #[test]
    fn log_replays_to_the_same_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("review.jsonl");
        let mut manifest = fixture();
        let fail = ConsistencyReport { verdict: Verdict::Fail, rationale: "r".into(), checker: "rules".into() };
        let id = {
            let mut q = ReviewQueue::open(&path, fixed_clock(1)).unwrap();
            q.record_check("a", "t", &fail).unwrap();
            let id = q.enqueue("a", "t", &fail).unwrap().id.clone();
            q.record_check("a", "t", &fail).unwrap();
            let _ = apply_review_decision(&mut q, &mut manifest, &id, Decision::Reject, None);
            id
        };
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        let q = ReviewQueue::open(&path, fixed_clock(2)).unwrap();
        assert_eq!(q.get(&id).unwrap().status, ReviewStatus::Rejected);
    }
}
