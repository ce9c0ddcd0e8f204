//! Randomized verification samples, adequacy of a ranking against the
//! human's verification labels, and the cutoff decision.
//!
//! Adequacy is measured on (in, out) pairs of labeled verification tests: a
//! pair overlaps when the out-labeled test scores at least as high as the
//! in-labeled one. With zero overlap the two classes are separated and the
//! decision interval is the rank gap between the lowest-ranked in test and
//! the highest-ranked out test. The cutoff is the human's call; the tool
//! only refuses cutoffs outside that interval unless explicitly overridden.

use crate::ranker::{Label, LabelSet, RankedSuite, Role};
use crate::rng::Lcg64;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Either class below this many verification labels sets `small_sample`.
pub const MIN_LABELS_PER_CLASS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerificationError {
    #[error("ranked suite is empty")]
    EmptySuite,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("test {0:?} is not part of the ranked suite")]
    UnknownTestId(String),
    #[error("cutoff rank {cutoff} outside 1..={len}")]
    CutoffOutOfRange { cutoff: usize, len: usize },
    #[error("cutoff rank {cutoff} is outside the decision interval {interval}")]
    CutoffOutsideInterval { cutoff: usize, interval: String },
    #[error("ranking was assessed inadequate; an override is required")]
    InadequateRanking,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationDraw {
    pub test_ids: Vec<String>,
    pub seed: u64,
    pub requested_k: usize,
}

/// Draws `requested_k` tests uniformly without replacement from the suite.
///
/// The draw is returned in draw order so the labeling order does not reveal
/// the ranking; when the request covers the whole suite, suite order is kept.
pub fn draw_verification(
    suite: &RankedSuite,
    requested_k: usize,
    seed: u64,
) -> Result<VerificationDraw, VerificationError> {
    if suite.is_empty() {
        return Err(VerificationError::EmptySuite);
    }
    if requested_k == 0 {
        return Err(VerificationError::InvalidRequest(
            "requested_k must be positive".into(),
        ));
    }
    let test_ids = if requested_k >= suite.len() {
        suite.ids().map(str::to_string).collect()
    } else {
        let mut rng = Lcg64::new(seed);
        rng.sample_indices(suite.len(), requested_k)
            .into_iter()
            .map(|i| suite.entries[i].test_id.clone())
            .collect()
    };
    Ok(VerificationDraw {
        test_ids,
        seed,
        requested_k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdequacyThresholds {
    pub adequate: f64,
    pub marginal: f64,
}

impl Default for AdequacyThresholds {
    fn default() -> Self {
        Self {
            adequate: 0.0,
            marginal: 0.1,
        }
    }
}

impl AdequacyThresholds {
    pub fn validate(&self) -> Result<(), VerificationError> {
        if 0.0 <= self.adequate && self.adequate <= self.marginal && self.marginal <= 1.0 {
            Ok(())
        } else {
            Err(VerificationError::InvalidRequest(format!(
                "thresholds must satisfy 0 <= adequate ({}) <= marginal ({}) <= 1",
                self.adequate, self.marginal
            )))
        }
    }

    pub fn verdict(&self, pair_overlap: f64) -> AdequacyVerdict {
        if pair_overlap <= self.adequate {
            AdequacyVerdict::Adequate
        } else if pair_overlap <= self.marginal {
            AdequacyVerdict::Marginal
        } else {
            AdequacyVerdict::Inadequate
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdequacyVerdict {
    Adequate,
    Marginal,
    Inadequate,
}

impl fmt::Display for AdequacyVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdequacyVerdict::Adequate => "adequate",
            AdequacyVerdict::Marginal => "marginal",
            AdequacyVerdict::Inadequate => "inadequate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionInterval {
    /// Rank of the lowest-ranked in-labeled verification test.
    pub low_rank: usize,
    /// Rank of the highest-ranked out-labeled verification test.
    pub high_rank: usize,
}

impl DecisionInterval {
    /// Allowed cutoffs: `low_rank..high_rank`.
    pub fn admits(&self, cutoff_rank: usize) -> bool {
        self.low_rank <= cutoff_rank && cutoff_rank < self.high_rank
    }
}

impl fmt::Display for DecisionInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.low_rank, self.high_rank)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdequacyReport {
    pub overlapping_pairs: u64,
    pub total_pairs: u64,
    pub pair_overlap: f64,
    pub pair_auc: f64,
    pub separated: bool,
    pub interval_d: Option<DecisionInterval>,
    pub verdict: AdequacyVerdict,
    pub n_in: usize,
    pub n_out: usize,
    /// Fewer than five labels in either class; the result may be accidental.
    pub small_sample: bool,
}

/// Counts (in, out) pairs with `out >= in`. Returns `(overlapping, total)`.
pub fn count_overlapping_pairs(in_scores: &[f64], out_scores: &[f64]) -> (u64, u64) {
    let mut outs = out_scores.to_vec();
    outs.sort_by(f64::total_cmp);
    let overlapping = in_scores
        .iter()
        .map(|s| {
            // outs strictly below s do not overlap
            let below = outs.partition_point(|o| o < s);
            (outs.len() - below) as u64
        })
        .sum();
    (overlapping, (in_scores.len() * out_scores.len()) as u64)
}

pub fn assess_adequacy(
    suite: &RankedSuite,
    labels: &LabelSet,
    thresholds: &AdequacyThresholds,
) -> Result<AdequacyReport, VerificationError> {
    thresholds.validate()?;
    let by_id = suite.by_id();
    let mut ins = Vec::new();
    let mut outs = Vec::new();
    for e in labels.with_role(Role::Verification) {
        let entry = by_id
            .get(e.test_id.as_str())
            .ok_or_else(|| VerificationError::UnknownTestId(e.test_id.clone()))?;
        match e.label {
            Label::In => ins.push(*entry),
            Label::Out => outs.push(*entry),
        }
    }
    if ins.is_empty() || outs.is_empty() {
        return Err(VerificationError::DegenerateLabels(format!(
            "verification needs both classes (in: {}, out: {})",
            ins.len(),
            outs.len()
        )));
    }
    let in_scores: Vec<f64> = ins.iter().map(|e| e.score).collect();
    let out_scores: Vec<f64> = outs.iter().map(|e| e.score).collect();
    let (overlapping, total) = count_overlapping_pairs(&in_scores, &out_scores);
    let pair_overlap = overlapping as f64 / total as f64;
    let separated = overlapping == 0;
    let interval_d = separated.then(|| DecisionInterval {
        low_rank: ins.iter().map(|e| e.rank).max().expect("non-empty"),
        high_rank: outs.iter().map(|e| e.rank).min().expect("non-empty"),
    });
    Ok(AdequacyReport {
        overlapping_pairs: overlapping,
        total_pairs: total,
        pair_overlap,
        pair_auc: 1.0 - pair_overlap,
        separated,
        interval_d,
        verdict: thresholds.verdict(pair_overlap),
        n_in: ins.len(),
        n_out: outs.len(),
        small_sample: ins.len() < MIN_LABELS_PER_CLASS || outs.len() < MIN_LABELS_PER_CLASS,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub cutoff_rank: usize,
    pub t_e_test_id: String,
    pub selected_ids: Vec<String>,
    pub excluded_ids: Vec<String>,
    pub override_used: bool,
}

/// Applies the human's cutoff: ranks `1..=cutoff_rank` are selected.
pub fn choose_cutoff(
    suite: &RankedSuite,
    report: &AdequacyReport,
    cutoff_rank: usize,
    allow_override: bool,
) -> Result<SelectionResult, VerificationError> {
    if cutoff_rank == 0 || cutoff_rank > suite.len() {
        return Err(VerificationError::CutoffOutOfRange {
            cutoff: cutoff_rank,
            len: suite.len(),
        });
    }
    let inside = report.separated && report.interval_d.is_some_and(|d| d.admits(cutoff_rank));
    let override_used = if report.verdict == AdequacyVerdict::Inadequate {
        if !allow_override {
            return Err(VerificationError::InadequateRanking);
        }
        true
    } else if !inside {
        if !allow_override {
            return Err(VerificationError::CutoffOutsideInterval {
                cutoff: cutoff_rank,
                interval: report
                    .interval_d
                    .map_or_else(|| "none (not separated)".to_string(), |d| d.to_string()),
            });
        }
        true
    } else {
        false
    };
    let (selected, excluded) = suite.entries.split_at(cutoff_rank);
    Ok(SelectionResult {
        cutoff_rank,
        t_e_test_id: selected[cutoff_rank - 1].test_id.clone(),
        selected_ids: selected.iter().map(|e| e.test_id.clone()).collect(),
        excluded_ids: excluded.iter().map(|e| e.test_id.clone()).collect(),
        override_used,
    })
}
