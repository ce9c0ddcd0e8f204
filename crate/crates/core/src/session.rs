//! Selection workflow for one release as a persisted state machine.
//!
//! ```text
//! Created -> DataLoaded -> FeaturesScoped -> TrainingLabeled -> Trained
//!         -> VerificationLabeled -> Assessed -> { Accepted | Iterating | Aborted }
//! Iterating -> TrainingLabeled
//! Accepted | Aborted -> PostTestRecorded
//! ```
//!
//! Sessions are values: [`Session::transition`] returns a new session and
//! leaves the input untouched, so an illegal or invalid event never changes
//! anything. Every successful transition appends one audit record. Records
//! are hash-chained (FNV-1a over the previous record digest and the record's
//! fields), which lets [`SessionStore::restore`] detect edits to a stored
//! trail.

use crate::digest::fnv1a64_hex;
use crate::features::FeatureScope;
use crate::ranker::{Label, LabelEntry, LabelSet, RankModel, RankedSuite, Role};
use crate::verification::{AdequacyReport, AdequacyVerdict, SelectionResult};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use thiserror::Error;

pub const DEFAULT_MAX_ITERATIONS: u32 = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("illegal transition: {event} is not allowed in state {state}")]
    IllegalTransition {
        state: SessionState,
        event: EventKind,
    },
    #[error("invalid payload: {0}")]
    PayloadInvalid(String),
    #[error("iteration limit of {max} reached; accept or abort")]
    IterationLimit { max: u32 },
    #[error("not available yet: {0}")]
    NotReady(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Created,
    DataLoaded,
    FeaturesScoped,
    TrainingLabeled,
    Trained,
    VerificationLabeled,
    Assessed,
    Accepted,
    Iterating,
    Aborted,
    PostTestRecorded,
}

impl SessionState {
    pub const ALL: [SessionState; 11] = [
        SessionState::Created,
        SessionState::DataLoaded,
        SessionState::FeaturesScoped,
        SessionState::TrainingLabeled,
        SessionState::Trained,
        SessionState::VerificationLabeled,
        SessionState::Assessed,
        SessionState::Accepted,
        SessionState::Iterating,
        SessionState::Aborted,
        SessionState::PostTestRecorded,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SessionState::Created => "created",
            SessionState::DataLoaded => "data_loaded",
            SessionState::FeaturesScoped => "features_scoped",
            SessionState::TrainingLabeled => "training_labeled",
            SessionState::Trained => "trained",
            SessionState::VerificationLabeled => "verification_labeled",
            SessionState::Assessed => "assessed",
            SessionState::Accepted => "accepted",
            SessionState::Iterating => "iterating",
            SessionState::Aborted => "aborted",
            SessionState::PostTestRecorded => "post_test_recorded",
        }
    }

    /// States in which a trained model may be present.
    pub fn model_allowed(self) -> bool {
        matches!(
            self,
            SessionState::Trained
                | SessionState::VerificationLabeled
                | SessionState::Assessed
                | SessionState::Accepted
                | SessionState::Iterating
                | SessionState::Aborted
                | SessionState::PostTestRecorded
        )
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Iterate,
    Abort,
}

/// Event discriminant, as recorded in the audit trail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    LoadData,
    ScopeFeatures,
    SubmitTrainingLabels,
    Train,
    SubmitVerificationLabels,
    Assess,
    DecideAccept,
    DecideIterate,
    DecideAbort,
    RecordPostTest,
}

impl EventKind {
    pub const ALL: [EventKind; 10] = [
        EventKind::LoadData,
        EventKind::ScopeFeatures,
        EventKind::SubmitTrainingLabels,
        EventKind::Train,
        EventKind::SubmitVerificationLabels,
        EventKind::Assess,
        EventKind::DecideAccept,
        EventKind::DecideIterate,
        EventKind::DecideAbort,
        EventKind::RecordPostTest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::LoadData => "load_data",
            EventKind::ScopeFeatures => "scope_features",
            EventKind::SubmitTrainingLabels => "submit_training_labels",
            EventKind::Train => "train",
            EventKind::SubmitVerificationLabels => "submit_verification_labels",
            EventKind::Assess => "assess",
            EventKind::DecideAccept => "decide_accept",
            EventKind::DecideIterate => "decide_iterate",
            EventKind::DecideAbort => "decide_abort",
            EventKind::RecordPostTest => "record_post_test",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The transition table. `None` means the event is illegal in `state`.
pub fn next_state(state: SessionState, event: EventKind) -> Option<SessionState> {
    use EventKind as E;
    use SessionState as S;
    Some(match (state, event) {
        (S::Created, E::LoadData) => S::DataLoaded,
        (S::DataLoaded, E::ScopeFeatures) => S::FeaturesScoped,
        (S::FeaturesScoped, E::SubmitTrainingLabels) => S::TrainingLabeled,
        (S::Iterating, E::SubmitTrainingLabels) => S::TrainingLabeled,
        (S::TrainingLabeled, E::Train) => S::Trained,
        (S::Trained, E::SubmitVerificationLabels) => S::VerificationLabeled,
        (S::VerificationLabeled, E::Assess) => S::Assessed,
        (S::Assessed, E::DecideAccept) => S::Accepted,
        (S::Assessed, E::DecideIterate) => S::Iterating,
        (S::Assessed, E::DecideAbort) => S::Aborted,
        (S::Accepted, E::RecordPostTest) => S::PostTestRecorded,
        (S::Aborted, E::RecordPostTest) => S::PostTestRecorded,
        _ => return None,
    })
}

/// One submitted label. An already-labeled test may only change through an
/// entry with `relabel` set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub test_id: String,
    pub label: Label,
    #[serde(default)]
    pub relabel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum WorkflowEvent {
    LoadData {
        dataset_ref: String,
    },
    ScopeFeatures {
        scope: FeatureScope,
    },
    SubmitTrainingLabels {
        entries: Vec<LabelSubmission>,
    },
    Train {
        model: RankModel,
        suite: RankedSuite,
    },
    SubmitVerificationLabels {
        entries: Vec<LabelSubmission>,
    },
    Assess {
        report: AdequacyReport,
    },
    Decide {
        decision: Decision,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        selection: Option<SelectionResult>,
    },
    RecordPostTest {
        reflection: String,
        improvement_notes: String,
    },
}

impl WorkflowEvent {
    pub fn kind(&self) -> EventKind {
        match self {
            WorkflowEvent::LoadData { .. } => EventKind::LoadData,
            WorkflowEvent::ScopeFeatures { .. } => EventKind::ScopeFeatures,
            WorkflowEvent::SubmitTrainingLabels { .. } => EventKind::SubmitTrainingLabels,
            WorkflowEvent::Train { .. } => EventKind::Train,
            WorkflowEvent::SubmitVerificationLabels { .. } => EventKind::SubmitVerificationLabels,
            WorkflowEvent::Assess { .. } => EventKind::Assess,
            WorkflowEvent::Decide { decision, .. } => match decision {
                Decision::Accept => EventKind::DecideAccept,
                Decision::Iterate => EventKind::DecideIterate,
                Decision::Abort => EventKind::DecideAbort,
            },
            WorkflowEvent::RecordPostTest { .. } => EventKind::RecordPostTest,
        }
    }

    fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("events serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub timestamp: String,
    pub actor: String,
    pub event: String,
    pub summary: String,
    pub payload_digest: String,
    pub record_digest: String,
}

fn record_digest(
    previous: &str,
    seq: u64,
    timestamp: &str,
    actor: &str,
    event: &str,
    summary: &str,
    payload_digest: &str,
) -> String {
    let canonical = serde_json::to_vec(&(
        previous,
        seq,
        timestamp,
        actor,
        event,
        summary,
        payload_digest,
    ))
    .expect("tuple serializes");
    fnv1a64_hex(&canonical)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub state: SessionState,
    pub dataset_ref: Option<String>,
    pub scope: Option<FeatureScope>,
    pub labels: LabelSet,
    pub model: Option<RankModel>,
    pub suite: Option<RankedSuite>,
    pub reports: Vec<AdequacyReport>,
    pub selection: Option<SelectionResult>,
    pub iteration: u32,
    pub max_iterations: u32,
    pub audit: Vec<AuditRecord>,
    pub reflection: Option<String>,
    pub improvement_notes: Option<String>,
}

impl Session {
    pub fn new(id: impl Into<String>, max_iterations: u32) -> Self {
        Self {
            id: id.into(),
            state: SessionState::Created,
            dataset_ref: None,
            scope: None,
            labels: LabelSet::default(),
            model: None,
            suite: None,
            reports: Vec::new(),
            selection: None,
            iteration: 0,
            max_iterations,
            audit: Vec::new(),
            reflection: None,
            improvement_notes: None,
        }
    }

    pub fn with_random_id(max_iterations: u32) -> Self {
        Self::new(uuid::Uuid::new_v4().simple().to_string(), max_iterations)
    }

    pub fn latest_report(&self) -> Option<&AdequacyReport> {
        self.reports.last()
    }

    pub fn target_release(&self) -> Option<&str> {
        self.scope.as_ref().map(|s| s.target_release.as_str())
    }

    /// FNV-1a digest of the canonical serialized session.
    pub fn digest(&self) -> String {
        fnv1a64_hex(&serde_json::to_vec(self).expect("session serializes"))
    }

    /// Decisions offered in `Assessed`, in presentation order. At the
    /// iteration limit without an adequate ranking, abort comes first and
    /// iterate is gone.
    pub fn offered_decisions(&self) -> Vec<Decision> {
        if self.state != SessionState::Assessed {
            return Vec::new();
        }
        let adequate = self
            .latest_report()
            .is_some_and(|r| r.verdict == AdequacyVerdict::Adequate);
        match (self.iteration >= self.max_iterations, adequate) {
            (true, false) => vec![Decision::Abort, Decision::Accept],
            (true, true) => vec![Decision::Accept, Decision::Abort],
            (false, _) => vec![Decision::Accept, Decision::Iterate, Decision::Abort],
        }
    }

    pub fn transition(&self, actor: &str, event: WorkflowEvent) -> Result<Session, SessionError> {
        self.transition_at(actor, event, Utc::now())
    }

    pub fn transition_at(
        &self,
        actor: &str,
        event: WorkflowEvent,
        at: DateTime<Utc>,
    ) -> Result<Session, SessionError> {
        let kind = event.kind();
        let target = next_state(self.state, kind).ok_or(SessionError::IllegalTransition {
            state: self.state,
            event: kind,
        })?;
        let payload_digest = fnv1a64_hex(&event.canonical_bytes());
        let mut next = self.clone();
        let summary = next.apply(event)?;
        next.state = target;
        next.append_audit(actor, kind, summary, payload_digest, at);
        Ok(next)
    }

    fn append_audit(
        &mut self,
        actor: &str,
        kind: EventKind,
        summary: String,
        payload_digest: String,
        at: DateTime<Utc>,
    ) {
        let seq = self.audit.len() as u64 + 1;
        let timestamp = at.to_rfc3339_opts(SecondsFormat::Micros, true);
        let previous = self.audit.last().map_or("", |r| r.record_digest.as_str());
        let digest = record_digest(
            previous,
            seq,
            &timestamp,
            actor,
            kind.name(),
            &summary,
            &payload_digest,
        );
        self.audit.push(AuditRecord {
            seq,
            timestamp,
            actor: actor.to_string(),
            event: kind.name().to_string(),
            summary,
            payload_digest,
            record_digest: digest,
        });
    }

    /// Validates the payload and merges it; returns the audit summary.
    fn apply(&mut self, event: WorkflowEvent) -> Result<String, SessionError> {
        match event {
            WorkflowEvent::LoadData { dataset_ref } => {
                if dataset_ref.trim().is_empty() {
                    return Err(SessionError::PayloadInvalid("dataset_ref is empty".into()));
                }
                let summary = format!("dataset {dataset_ref}");
                self.dataset_ref = Some(dataset_ref);
                Ok(summary)
            }
            WorkflowEvent::ScopeFeatures { scope } => {
                if scope.target_release.trim().is_empty() {
                    return Err(SessionError::PayloadInvalid(
                        "target_release is empty".into(),
                    ));
                }
                let summary = format!(
                    "release {}, deselected [{}]",
                    scope.target_release,
                    scope
                        .deselected_groups
                        .iter()
                        .cloned()
                        .collect::<Vec<_>>()
                        .join(", ")
                );
                self.scope = Some(scope);
                Ok(summary)
            }
            WorkflowEvent::SubmitTrainingLabels { entries } => {
                if entries.is_empty() {
                    return Err(SessionError::PayloadInvalid(
                        "no training labels submitted".into(),
                    ));
                }
                let summary = self.merge_labels(entries, Role::Training)?;
                // a new round of training labels makes the old model stale
                self.model = None;
                self.suite = None;
                Ok(summary)
            }
            WorkflowEvent::Train { model, suite } => {
                if model.weights.len() != model.column_names.len() {
                    return Err(SessionError::PayloadInvalid(
                        "model weights do not match its columns".into(),
                    ));
                }
                if !model.bias.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
                    return Err(SessionError::PayloadInvalid(
                        "model has non-finite weights".into(),
                    ));
                }
                let training = self.labels.training_ids();
                if let Some(id) = suite.ids().find(|id| training.contains(*id)) {
                    return Err(SessionError::PayloadInvalid(format!(
                        "training test {id} appears in the ranked suite"
                    )));
                }
                let summary = format!(
                    "{} columns, {} epochs, loss {:.6}, {} ranked tests",
                    model.column_names.len(),
                    model.training_meta.epochs_run,
                    model.training_meta.final_loss,
                    suite.len()
                );
                self.model = Some(model);
                self.suite = Some(suite);
                Ok(summary)
            }
            WorkflowEvent::SubmitVerificationLabels { entries } => {
                let existing = self.labels.verification().count();
                if entries.is_empty() && existing == 0 {
                    return Err(SessionError::PayloadInvalid(
                        "no verification labels submitted".into(),
                    ));
                }
                let suite = self
                    .suite
                    .as_ref()
                    .ok_or_else(|| SessionError::PayloadInvalid("no ranked suite".into()))?;
                let ranked: HashSet<&str> = suite.ids().collect();
                if let Some(e) = entries
                    .iter()
                    .find(|e| !ranked.contains(e.test_id.as_str()))
                {
                    return Err(SessionError::PayloadInvalid(format!(
                        "test {} is not in the inference set",
                        e.test_id
                    )));
                }
                self.merge_labels(entries, Role::Verification)
            }
            WorkflowEvent::Assess { report } => {
                let summary = format!(
                    "{} (overlap {}/{}, in {}, out {})",
                    report.verdict,
                    report.overlapping_pairs,
                    report.total_pairs,
                    report.n_in,
                    report.n_out
                );
                self.reports.push(report);
                Ok(summary)
            }
            WorkflowEvent::Decide {
                decision,
                selection,
            } => match decision {
                Decision::Accept => {
                    let selection = selection.ok_or_else(|| {
                        SessionError::PayloadInvalid("accept requires a selection".into())
                    })?;
                    let suite_len = self.suite.as_ref().map_or(0, RankedSuite::len);
                    if selection.cutoff_rank == 0
                        || selection.cutoff_rank > suite_len
                        || selection.selected_ids.len() != selection.cutoff_rank
                    {
                        return Err(SessionError::PayloadInvalid(
                            "selection does not match the ranked suite".into(),
                        ));
                    }
                    let summary = format!(
                        "accept cutoff {} (T_e {}){}",
                        selection.cutoff_rank,
                        selection.t_e_test_id,
                        if selection.override_used {
                            ", override"
                        } else {
                            ""
                        }
                    );
                    self.selection = Some(selection);
                    Ok(summary)
                }
                Decision::Iterate => {
                    if selection.is_some() {
                        return Err(SessionError::PayloadInvalid(
                            "iterate takes no selection".into(),
                        ));
                    }
                    if self.iteration >= self.max_iterations {
                        return Err(SessionError::IterationLimit {
                            max: self.max_iterations,
                        });
                    }
                    self.iteration += 1;
                    Ok(format!("iterate (round {})", self.iteration))
                }
                Decision::Abort => {
                    if selection.is_some() {
                        return Err(SessionError::PayloadInvalid(
                            "abort takes no selection".into(),
                        ));
                    }
                    Ok("abort".into())
                }
            },
            WorkflowEvent::RecordPostTest {
                reflection,
                improvement_notes,
            } => {
                let summary = format!(
                    "reflection {} chars, improvement notes {} chars",
                    reflection.chars().count(),
                    improvement_notes.chars().count()
                );
                self.reflection = Some(reflection);
                self.improvement_notes = Some(improvement_notes);
                Ok(summary)
            }
        }
    }

    fn merge_labels(
        &mut self,
        entries: Vec<LabelSubmission>,
        role: Role,
    ) -> Result<String, SessionError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.test_id.trim().is_empty() {
                return Err(SessionError::PayloadInvalid("empty test id".into()));
            }
            if !seen.insert(e.test_id.as_str()) {
                return Err(SessionError::PayloadInvalid(format!(
                    "test {} submitted twice",
                    e.test_id
                )));
            }
            match (self.labels.get(&e.test_id).is_some(), e.relabel) {
                (true, false) => {
                    return Err(SessionError::PayloadInvalid(format!(
                        "test {} is already labeled; relabel explicitly",
                        e.test_id
                    )))
                }
                (false, true) => {
                    return Err(SessionError::PayloadInvalid(format!(
                        "cannot relabel unlabeled test {}",
                        e.test_id
                    )))
                }
                _ => {}
            }
        }
        let mut added = 0;
        let mut relabeled = 0;
        for e in entries {
            let entry = LabelEntry::new(e.test_id, e.label, role);
            if e.relabel {
                self.labels
                    .replace(entry)
                    .map_err(|err| SessionError::PayloadInvalid(err.to_string()))?;
                relabeled += 1;
            } else {
                self.labels
                    .push(entry)
                    .map_err(|err| SessionError::PayloadInvalid(err.to_string()))?;
                added += 1;
            }
        }
        let (n_in, n_out) = self.labels.class_counts(role);
        let role_name = match role {
            Role::Training => "training",
            Role::Verification => "verification",
        };
        Ok(format!(
            "{added} new, {relabeled} relabeled; {role_name} in {n_in}, out {n_out}"
        ))
    }

    pub fn record_posttest(
        &self,
        actor: &str,
        reflection: impl Into<String>,
        improvement_notes: impl Into<String>,
    ) -> Result<Session, SessionError> {
        self.transition(
            actor,
            WorkflowEvent::RecordPostTest {
                reflection: reflection.into(),
                improvement_notes: improvement_notes.into(),
            },
        )
    }

    /// Recomputes the audit chain. Returns the first broken record.
    pub fn verify_audit(&self) -> Result<(), String> {
        let mut previous = String::new();
        for (i, r) in self.audit.iter().enumerate() {
            if r.seq != i as u64 + 1 {
                return Err(format!("record {} has sequence number {}", i + 1, r.seq));
            }
            if EventKind::from_name(&r.event).is_none() {
                return Err(format!("record {} has unknown event {:?}", r.seq, r.event));
            }
            let expected = record_digest(
                &previous,
                r.seq,
                &r.timestamp,
                &r.actor,
                &r.event,
                &r.summary,
                &r.payload_digest,
            );
            if expected != r.record_digest {
                return Err(format!("record {} digest mismatch", r.seq));
            }
            previous = r.record_digest.clone();
        }
        Ok(())
    }

    pub fn export(&self) -> Result<ExportDocument, SessionError> {
        let selection = self
            .selection
            .as_ref()
            .ok_or_else(|| SessionError::NotReady("no accepted selection".into()))?;
        let suite = self
            .suite
            .as_ref()
            .ok_or_else(|| SessionError::NotReady("no ranked suite".into()))?;
        let report = self
            .latest_report()
            .ok_or_else(|| SessionError::NotReady("no adequacy report".into()))?;
        Ok(ExportDocument {
            release: self.target_release().unwrap_or_default().to_string(),
            session_id: self.id.clone(),
            ranked: suite
                .entries
                .iter()
                .map(|e| ExportEntry {
                    rank: e.rank,
                    test_id: e.test_id.clone(),
                    score: e.score,
                    selected: e.rank <= selection.cutoff_rank,
                })
                .collect(),
            cutoff_rank: selection.cutoff_rank,
            t_e_test_id: selection.t_e_test_id.clone(),
            override_used: selection.override_used,
            adequacy: ExportAdequacy {
                pair_overlap: report.pair_overlap,
                verdict: report.verdict,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    #[serde(rename = "in")]
    pub n_in: usize,
    #[serde(rename = "out")]
    pub n_out: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub cutoff_rank: usize,
    pub t_e_test_id: String,
    pub override_used: bool,
}

/// Compact view of a session for operator surfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub state: SessionState,
    pub dataset_ref: Option<String>,
    pub target_release: Option<String>,
    pub deselected_groups: Vec<String>,
    pub iteration: u32,
    pub max_iterations: u32,
    pub training: ClassCounts,
    pub verification: ClassCounts,
    pub model_trained: bool,
    pub suite_len: usize,
    pub latest_report: Option<AdequacyReport>,
    pub offered_decisions: Vec<Decision>,
    pub selection: Option<SelectionSummary>,
    pub audit_len: usize,
}

impl Session {
    pub fn summary(&self) -> SessionSummary {
        let counts = |role| {
            let (n_in, n_out) = self.labels.class_counts(role);
            ClassCounts { n_in, n_out }
        };
        SessionSummary {
            id: self.id.clone(),
            state: self.state,
            dataset_ref: self.dataset_ref.clone(),
            target_release: self.target_release().map(str::to_string),
            deselected_groups: self
                .scope
                .as_ref()
                .map(|s| s.deselected_groups.iter().cloned().collect())
                .unwrap_or_default(),
            iteration: self.iteration,
            max_iterations: self.max_iterations,
            training: counts(Role::Training),
            verification: counts(Role::Verification),
            model_trained: self.model.is_some(),
            suite_len: self.suite.as_ref().map_or(0, RankedSuite::len),
            latest_report: self.latest_report().cloned(),
            offered_decisions: self.offered_decisions(),
            selection: self.selection.as_ref().map(|s| SelectionSummary {
                cutoff_rank: s.cutoff_rank,
                t_e_test_id: s.t_e_test_id.clone(),
                override_used: s.override_used,
            }),
            audit_len: self.audit.len(),
        }
    }
}

/// Folds recorded event names through the transition table.
pub fn replay_state(audit: &[AuditRecord]) -> Result<SessionState, String> {
    audit.iter().try_fold(SessionState::Created, |state, r| {
        let kind =
            EventKind::from_name(&r.event).ok_or_else(|| format!("unknown event {:?}", r.event))?;
        next_state(state, kind)
            .ok_or_else(|| format!("record {}: {} illegal in {}", r.seq, kind, state))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportEntry {
    pub rank: usize,
    pub test_id: String,
    pub score: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportAdequacy {
    pub pair_overlap: f64,
    pub verdict: AdequacyVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportDocument {
    pub release: String,
    pub session_id: String,
    pub ranked: Vec<ExportEntry>,
    pub cutoff_rank: usize,
    pub t_e_test_id: String,
    pub override_used: bool,
    pub adequacy: ExportAdequacy,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session {0:?} not found")]
    NotFound(String),
    #[error("stored session {id:?} is corrupt: {reason}")]
    StoreCorrupt { id: String, reason: String },
    #[error("session {0:?} is being modified by another writer")]
    Busy(String),
    #[error("invalid session id {0:?}")]
    InvalidId(String),
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One `<session-id>.json` document per session under a directory.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
    claims: Arc<Mutex<HashSet<String>>>,
}

/// Exclusive write claim on one session id; released on drop.
#[derive(Debug)]
pub struct ClaimGuard {
    id: String,
    claims: Arc<Mutex<HashSet<String>>>,
}

impl Drop for ClaimGuard {
    fn drop(&mut self) {
        self.claims
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .remove(&self.id);
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            claims: Arc::new(Mutex::new(HashSet::new())),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_of(&self, id: &str) -> Result<PathBuf, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::InvalidId(id.to_string()));
        }
        Ok(self.dir.join(format!("{id}.json")))
    }

    pub fn claim(&self, id: &str) -> Result<ClaimGuard, StoreError> {
        let mut claims = self.claims.lock().unwrap_or_else(|e| e.into_inner());
        if !claims.insert(id.to_string()) {
            return Err(StoreError::Busy(id.to_string()));
        }
        Ok(ClaimGuard {
            id: id.to_string(),
            claims: Arc::clone(&self.claims),
        })
    }

    pub fn exists(&self, id: &str) -> bool {
        self.path_of(id).is_ok_and(|p| p.is_file())
    }

    /// Writes atomically (temp file + rename).
    pub fn persist(&self, session: &Session) -> Result<PathBuf, StoreError> {
        let path = self.path_of(&session.id)?;
        let bytes = serde_json::to_vec_pretty(session).expect("session serializes");
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| StoreError::Io(e.error))?;
        Ok(path)
    }

    pub fn restore(&self, id: &str) -> Result<Session, StoreError> {
        let path = self.path_of(id)?;
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(id.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let corrupt = |reason: String| StoreError::StoreCorrupt {
            id: id.to_string(),
            reason,
        };
        let session: Session =
            serde_json::from_slice(&bytes).map_err(|e| corrupt(format!("unreadable: {e}")))?;
        if session.id != id {
            return Err(corrupt(format!("document holds session {:?}", session.id)));
        }
        session.verify_audit().map_err(corrupt)?;
        let replayed = replay_state(&session.audit).map_err(corrupt)?;
        if replayed != session.state {
            return Err(corrupt(format!(
                "state {} does not match audit replay ({replayed})",
                session.state
            )));
        }
        Ok(session)
    }
}
