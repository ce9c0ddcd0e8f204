//! Glue between a [`Session`] and the computing modules.
//!
//! Each function here computes the payload for one workflow event from the
//! session and its dataset (features, training, ranking, adequacy, cutoff)
//! without touching the session; [`Session::transition`] then applies it.
//! Operator surfaces call these instead of computing anything themselves.

use crate::datamodel::Dataset;
use crate::features::{build_catalog, extract_features, FeatureError, FeatureScope};
use crate::ranker::{
    learning_curve, rank_with_matrix, train, Label, LearningCurve, RankError, RankedEntry, Role,
    TrainConfig, DEFAULT_FRACTIONS,
};
use crate::session::{Decision, LabelSubmission, Session, SessionError, WorkflowEvent};
use crate::verification::{
    assess_adequacy, choose_cutoff, draw_verification, AdequacyThresholds, AdequacyVerdict,
    DecisionInterval, VerificationDraw, VerificationError,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkflowError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Verification(#[from] VerificationError),
    #[error("unknown test id {0:?}")]
    UnknownTestId(String),
}

/// A label as submitted by an operator surface, role included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleLabel {
    pub test_id: String,
    pub label: Label,
    pub role: Role,
    #[serde(default)]
    pub relabel: bool,
}

fn not_ready(what: &str) -> WorkflowError {
    SessionError::NotReady(what.to_string()).into()
}

fn scope_of(s: &Session) -> Result<&FeatureScope, WorkflowError> {
    s.scope.as_ref().ok_or_else(|| not_ready("feature scope"))
}

pub fn scope_event(d: &Dataset, scope: FeatureScope) -> Result<WorkflowEvent, WorkflowError> {
    // extraction validates the release and every deselected group
    extract_features(d, &scope)?;
    Ok(WorkflowEvent::ScopeFeatures { scope })
}

/// Builds the label event for a batch. All entries must share one role.
pub fn label_event(d: &Dataset, entries: Vec<RoleLabel>) -> Result<WorkflowEvent, WorkflowError> {
    label_batch_event(d, None, entries)
}

/// Like [`label_event`], with the batch role stated up front. An explicit
/// role lets an empty verification batch through, which reuses the earlier
/// verification labels after retraining.
pub fn label_batch_event(
    d: &Dataset,
    role: Option<Role>,
    entries: Vec<RoleLabel>,
) -> Result<WorkflowEvent, WorkflowError> {
    let role = match role.or_else(|| entries.first().map(|e| e.role)) {
        Some(r) => r,
        None => {
            return Err(SessionError::PayloadInvalid("no labels submitted".into()).into());
        }
    };
    if entries.iter().any(|e| e.role != role) {
        return Err(SessionError::PayloadInvalid(
            "a batch must not mix training and verification labels".into(),
        )
        .into());
    }
    if let Some(e) = entries.iter().find(|e| d.test(&e.test_id).is_none()) {
        return Err(WorkflowError::UnknownTestId(e.test_id.clone()));
    }
    let entries = entries
        .into_iter()
        .map(|e| LabelSubmission {
            test_id: e.test_id,
            label: e.label,
            relabel: e.relabel,
        })
        .collect();
    Ok(match role {
        Role::Training => WorkflowEvent::SubmitTrainingLabels { entries },
        Role::Verification => WorkflowEvent::SubmitVerificationLabels { entries },
    })
}

/// Trains on the session's training labels and ranks the inference set
/// (every test not used for training).
pub fn train_event(
    s: &Session,
    d: &Dataset,
    cfg: &TrainConfig,
) -> Result<WorkflowEvent, WorkflowError> {
    let scope = scope_of(s)?;
    let matrix = extract_features(d, scope)?;
    let model = train(&matrix, &s.labels, cfg)?;
    let training: BTreeSet<String> = s.labels.training_ids();
    let suite = rank_with_matrix(&model, &matrix, d, &training)?;
    Ok(WorkflowEvent::Train { model, suite })
}

pub fn assess_event(
    s: &Session,
    thresholds: &AdequacyThresholds,
) -> Result<WorkflowEvent, WorkflowError> {
    let suite = s.suite.as_ref().ok_or_else(|| not_ready("ranked suite"))?;
    let report = assess_adequacy(suite, &s.labels, thresholds)?;
    Ok(WorkflowEvent::Assess { report })
}

pub fn decision_event(
    s: &Session,
    decision: Decision,
    cutoff_rank: Option<usize>,
    allow_override: bool,
) -> Result<WorkflowEvent, WorkflowError> {
    let selection = match decision {
        Decision::Accept => {
            let cutoff = cutoff_rank.ok_or_else(|| {
                SessionError::PayloadInvalid("accept requires cutoff_rank".into())
            })?;
            let suite = s.suite.as_ref().ok_or_else(|| not_ready("ranked suite"))?;
            let report = s
                .latest_report()
                .ok_or_else(|| not_ready("adequacy report"))?;
            Some(choose_cutoff(suite, report, cutoff, allow_override)?)
        }
        Decision::Iterate | Decision::Abort => {
            if cutoff_rank.is_some() {
                return Err(SessionError::PayloadInvalid(format!(
                    "{decision:?} takes no cutoff_rank"
                ))
                .into());
            }
            None
        }
    };
    Ok(WorkflowEvent::Decide {
        decision,
        selection,
    })
}

/// Draws verification candidates among ranked tests that carry no label yet.
pub fn draw(s: &Session, k: usize, seed: u64) -> Result<VerificationDraw, WorkflowError> {
    let suite = s.suite.as_ref().ok_or_else(|| not_ready("ranked suite"))?;
    let mut pool = suite.clone();
    pool.entries.retain(|e| s.labels.get(&e.test_id).is_none());
    Ok(draw_verification(&pool, k, seed)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayDot {
    pub rank: usize,
    pub test_id: String,
    pub score: f64,
    pub label: Label,
}

/// The ranked curve with the labeled verification dots on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingView {
    pub release: String,
    pub ranked: Vec<RankedEntry>,
    pub overlay: Vec<OverlayDot>,
    pub interval: Option<DecisionInterval>,
    pub verdict: Option<AdequacyVerdict>,
    pub cutoff_rank: Option<usize>,
}

pub fn ranking_view(s: &Session) -> Result<RankingView, WorkflowError> {
    let suite = s.suite.as_ref().ok_or_else(|| not_ready("ranked suite"))?;
    let mut overlay: Vec<OverlayDot> = s
        .labels
        .verification()
        .filter_map(|l| {
            suite
                .entries
                .iter()
                .find(|e| e.test_id == l.test_id)
                .map(|e| OverlayDot {
                    rank: e.rank,
                    test_id: e.test_id.clone(),
                    score: e.score,
                    label: l.label,
                })
        })
        .collect();
    overlay.sort_by_key(|d| d.rank);
    // a report from an earlier iteration does not describe this ranking
    let report = s
        .latest_report()
        .filter(|_| s.reports.len() > s.iteration as usize);
    Ok(RankingView {
        release: s.target_release().unwrap_or_default().to_string(),
        ranked: suite.entries.clone(),
        overlay,
        interval: report.and_then(|r| r.interval_d),
        verdict: report.map(|r| r.verdict),
        cutoff_rank: s.selection.as_ref().map(|sel| sel.cutoff_rank),
    })
}

/// Catalog for a release, as offered to the test manager for deselection.
pub fn catalog(
    d: &Dataset,
    release: &str,
) -> Result<crate::features::FeatureCatalog, WorkflowError> {
    Ok(build_catalog(d, release)?)
}

/// Learning curve over the session's training labels, scored on its
/// verification labels. A saturated curve suggests more labels will not help.
pub fn session_learning_curve(
    s: &Session,
    d: &Dataset,
    cfg: &TrainConfig,
) -> Result<LearningCurve, WorkflowError> {
    let scope = scope_of(s)?;
    let matrix = extract_features(d, scope)?;
    Ok(learning_curve(&matrix, &s.labels, cfg, &DEFAULT_FRACTIONS)?)
}
