//! APFD (average percentage of faults detected) and historical backtests.
//!
//! For an ordering of `n` tests revealing `m` faults, where `TF_i` is the
//! 1-based position of the first test revealing fault `i`:
//!
//! ```text
//! APFD = 1 - (TF_1 + ... + TF_m) / (n * m) + 1 / (2n)
//! ```
//!
//! Faults that no test of the ordering reveals are left out of `m` and
//! reported separately.

use crate::datamodel::{Dataset, Verdict};
use crate::features::FeatureScope;
use crate::ranker::{self, Label, LabelEntry, LabelSet, RankError, Role, TrainConfig};
use crate::rng::Lcg64;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use thiserror::Error;

/// Releases before the target that feed backtest training labels.
pub const DEFAULT_TRAINING_WINDOW: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("unknown release {0:?}")]
    UnknownRelease(String),
    #[error("unknown test id {0:?}")]
    UnknownTestId(String),
    #[error("test id {0:?} appears twice in the ordering")]
    DuplicateTestId(String),
    #[error("no faults revealed; APFD is undefined")]
    NoFaults,
    #[error("ordering is empty")]
    EmptyOrdering,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Rank(#[from] RankError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirstFailure {
    pub fault_id: String,
    /// 1-based position of the first revealing test.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultMatrix {
    pub n: usize,
    pub m: usize,
    pub first_failures: Vec<FirstFailure>,
    pub excluded_faults: Vec<String>,
}

impl FaultMatrix {
    /// Builds a matrix from raw first-failure ranks (fault ids are synthetic).
    pub fn from_ranks(n: usize, ranks: &[usize]) -> Result<Self, EvalError> {
        if let Some(&r) = ranks.iter().find(|&&r| r == 0 || r > n) {
            return Err(EvalError::InvalidArgument(format!(
                "first-failure rank {r} outside 1..={n}"
            )));
        }
        Ok(Self {
            n,
            m: ranks.len(),
            first_failures: ranks
                .iter()
                .enumerate()
                .map(|(i, &rank)| FirstFailure {
                    fault_id: format!("F{i}"),
                    rank,
                })
                .collect(),
            excluded_faults: Vec::new(),
        })
    }
}

/// Faults revealed at `release`, keyed by test id.
fn revealed_at<'a>(d: &'a Dataset, release: &str) -> HashMap<&'a str, Vec<&'a str>> {
    let mut map: HashMap<&str, Vec<&str>> = HashMap::new();
    for t in &d.tests {
        for h in t.history.iter().filter(|h| h.release == release) {
            if !h.revealed_defect_ids.is_empty() {
                map.entry(t.id.as_str())
                    .or_default()
                    .extend(h.revealed_defect_ids.iter().map(String::as_str));
            }
        }
    }
    map
}

pub fn build_fault_matrix(
    ordering: &[String],
    d: &Dataset,
    release: &str,
) -> Result<FaultMatrix, EvalError> {
    if !d.has_release(release) {
        return Err(EvalError::UnknownRelease(release.to_string()));
    }
    let known: HashSet<&str> = d.tests.iter().map(|t| t.id.as_str()).collect();
    let mut seen = HashSet::new();
    for id in ordering {
        if !known.contains(id.as_str()) {
            return Err(EvalError::UnknownTestId(id.clone()));
        }
        if !seen.insert(id.as_str()) {
            return Err(EvalError::DuplicateTestId(id.clone()));
        }
    }
    let revealed = revealed_at(d, release);
    let universe: BTreeSet<&str> = revealed.values().flatten().copied().collect();
    let mut first: BTreeMap<&str, usize> = BTreeMap::new();
    for (pos, id) in ordering.iter().enumerate() {
        if let Some(faults) = revealed.get(id.as_str()) {
            for f in faults {
                first.entry(f).or_insert(pos + 1);
            }
        }
    }
    let excluded_faults = universe
        .iter()
        .filter(|f| !first.contains_key(*f))
        .map(|f| f.to_string())
        .collect();
    let first_failures: Vec<FirstFailure> = first
        .into_iter()
        .map(|(f, rank)| FirstFailure {
            fault_id: f.to_string(),
            rank,
        })
        .collect();
    Ok(FaultMatrix {
        n: ordering.len(),
        m: first_failures.len(),
        first_failures,
        excluded_faults,
    })
}

pub fn apfd(fm: &FaultMatrix) -> Result<f64, EvalError> {
    if fm.m == 0 {
        return Err(EvalError::NoFaults);
    }
    if fm.n == 0 {
        return Err(EvalError::EmptyOrdering);
    }
    let n = fm.n as f64;
    let m = fm.m as f64;
    let sum: usize = fm.first_failures.iter().map(|f| f.rank).sum();
    Ok(1.0 - sum as f64 / (n * m) + 1.0 / (2.0 * n))
}

/// Tests with a history entry at `release`, in dataset order.
pub fn tests_with_history<'a>(d: &'a Dataset, release: &str) -> Vec<&'a str> {
    d.tests
        .iter()
        .filter(|t| t.history_at(release).is_some())
        .map(|t| t.id.as_str())
        .collect()
}

/// Mean APFD over `trials` uniformly random orderings of the tests that have
/// history at `release`.
pub fn random_baseline(
    d: &Dataset,
    release: &str,
    trials: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    if !d.has_release(release) {
        return Err(EvalError::UnknownRelease(release.to_string()));
    }
    if trials == 0 {
        return Err(EvalError::InvalidArgument("trials must be positive".into()));
    }
    let ids = tests_with_history(d, release);
    let revealed = revealed_at(d, release);
    // fault index per test, dense for the inner loop
    let mut fault_index: HashMap<&str, usize> = HashMap::new();
    let per_test: Vec<Vec<usize>> = ids
        .iter()
        .map(|id| {
            revealed
                .get(id)
                .map(|faults| {
                    faults
                        .iter()
                        .map(|f| {
                            let next = fault_index.len();
                            *fault_index.entry(f).or_insert(next)
                        })
                        .collect()
                })
                .unwrap_or_default()
        })
        .collect();
    let m = fault_index.len();
    if m == 0 {
        return Err(EvalError::NoFaults);
    }
    let n = ids.len();
    let mut rng = Lcg64::new(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut first = vec![0usize; m];
    let mut total = 0.0;
    for _ in 0..trials {
        order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
        rng.shuffle(&mut order);
        first.iter_mut().for_each(|f| *f = 0);
        let mut found = 0;
        for (pos, &t) in order.iter().enumerate() {
            for &f in &per_test[t] {
                if first[f] == 0 {
                    first[f] = pos + 1;
                    found += 1;
                }
            }
            if found == m {
                break;
            }
        }
        let sum: usize = first.iter().sum();
        total += 1.0 - sum as f64 / (n as f64 * m as f64) + 1.0 / (2.0 * n as f64);
    }
    Ok(total / trials as f64)
}

/// How backtest training labels are derived from history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelingRule {
    /// Failed in the window: in. Executed and never failed: out.
    /// Skipped or unexecuted: unlabeled.
    HistoryVerdict,
}

/// Training labels from the history of `window` releases.
pub fn history_labels(d: &Dataset, window: &[&str], rule: LabelingRule) -> LabelSet {
    match rule {
        LabelingRule::HistoryVerdict => {
            let mut entries = Vec::new();
            for t in &d.tests {
                let mut executed = false;
                let mut failed = false;
                for h in t
                    .history
                    .iter()
                    .filter(|h| window.contains(&h.release.as_str()))
                {
                    if h.executed {
                        executed = true;
                        failed |= h.verdict == Verdict::Fail;
                    }
                }
                if failed {
                    entries.push(LabelEntry::new(t.id.clone(), Label::In, Role::Training));
                } else if executed {
                    entries.push(LabelEntry::new(t.id.clone(), Label::Out, Role::Training));
                }
            }
            LabelSet::new(entries).expect("dataset test ids are unique")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseResult {
    pub release: String,
    pub apfd: f64,
    pub n: usize,
    pub m: usize,
    pub excluded_fault_count: usize,
    pub training_releases: Vec<String>,
    pub n_in: usize,
    pub n_out: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRelease {
    pub release: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub per_release: Vec<ReleaseResult>,
    pub skipped: Vec<SkippedRelease>,
    pub mean_apfd: Option<f64>,
    pub empty: bool,
}

impl BacktestReport {
    fn finish(per_release: Vec<ReleaseResult>, skipped: Vec<SkippedRelease>) -> Self {
        let empty = per_release.is_empty();
        let mean_apfd = (!empty)
            .then(|| per_release.iter().map(|r| r.apfd).sum::<f64>() / per_release.len() as f64);
        Self {
            per_release,
            skipped,
            mean_apfd,
            empty,
        }
    }

    /// Fills the random-ordering baseline of every evaluated release.
    pub fn attach_random_baseline(
        &mut self,
        d: &Dataset,
        trials: usize,
        seed: u64,
    ) -> Result<(), EvalError> {
        for r in &mut self.per_release {
            r.random_baseline = Some(random_baseline(d, &r.release, trials, seed)?);
        }
        Ok(())
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>5} {:>8} {:>9} {:>8}",
            "release", "n", "m", "APFD", "excluded", "random"
        );
        for r in &self.per_release {
            let random = r
                .random_baseline
                .map_or_else(|| "-".to_string(), |b| format!("{b:.4}"));
            let _ = writeln!(
                out,
                "{:<12} {:>6} {:>5} {:>8.4} {:>9} {:>8}",
                r.release, r.n, r.m, r.apfd, r.excluded_fault_count, random
            );
        }
        for s in &self.skipped {
            let _ = writeln!(out, "{:<12} skipped: {}", s.release, s.reason);
        }
        match self.mean_apfd {
            Some(mean) => {
                let _ = writeln!(
                    out,
                    "mean APFD {:.4} over {} releases",
                    mean,
                    self.per_release.len()
                );
            }
            None => {
                let _ = writeln!(out, "no release evaluated");
            }
        }
        out
    }
}

/// Replays the pipeline on past releases: for each release, labels from the
/// (up to) two releases before it train a model that ranks every test with
/// history at the release; the ranking is scored with APFD.
pub fn backtest(
    d: &Dataset,
    scope_template: &FeatureScope,
    cfg: &TrainConfig,
    releases: &[String],
    rule: LabelingRule,
) -> Result<BacktestReport, EvalError> {
    backtest_with_window(
        d,
        scope_template,
        cfg,
        releases,
        rule,
        DEFAULT_TRAINING_WINDOW,
    )
}

pub fn backtest_with_window(
    d: &Dataset,
    scope_template: &FeatureScope,
    cfg: &TrainConfig,
    releases: &[String],
    rule: LabelingRule,
    window: usize,
) -> Result<BacktestReport, EvalError> {
    if window == 0 {
        return Err(EvalError::InvalidArgument(
            "training window must be positive".into(),
        ));
    }
    let mut indices = Vec::with_capacity(releases.len());
    for r in releases {
        let idx = d
            .release_index(r)
            .ok_or_else(|| EvalError::UnknownRelease(r.clone()))?;
        indices.push(idx);
    }

    let mut per_release = Vec::new();
    let mut skipped = Vec::new();
    for (release, idx) in releases.iter().zip(indices) {
        let skip = |reason: String| SkippedRelease {
            release: release.clone(),
            reason,
        };
        if idx == 0 {
            skipped.push(skip("no earlier release to train on".into()));
            continue;
        }
        let window_releases: Vec<&str> = d.releases[idx.saturating_sub(window)..idx]
            .iter()
            .map(String::as_str)
            .collect();
        let labels = history_labels(d, &window_releases, rule);
        let scope = scope_template.with_release(release.clone());
        let matrix = crate::features::extract_features(d, &scope).map_err(RankError::from)?;
        let model = match ranker::train(&matrix, &labels, cfg) {
            Ok(m) => m,
            Err(RankError::DegenerateLabels(msg)) => {
                skipped.push(skip(format!("degenerate labels: {msg}")));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let suite = ranker::rank_with_matrix(&model, &matrix, d, &BTreeSet::new())?;
        let executed: HashSet<&str> = tests_with_history(d, release).into_iter().collect();
        let ordering: Vec<String> = suite
            .ids()
            .filter(|id| executed.contains(id))
            .map(str::to_string)
            .collect();
        let fm = build_fault_matrix(&ordering, d, release)?;
        let value = match apfd(&fm) {
            Ok(v) => v,
            Err(EvalError::NoFaults) => {
                skipped.push(skip("no faults revealed at this release".into()));
                continue;
            }
            Err(EvalError::EmptyOrdering) => {
                skipped.push(skip("no test has history at this release".into()));
                continue;
            }
            Err(e) => return Err(e),
        };
        let (n_in, n_out) = labels.class_counts(Role::Training);
        per_release.push(ReleaseResult {
            release: release.clone(),
            apfd: value,
            n: fm.n,
            m: fm.m,
            excluded_fault_count: fm.excluded_faults.len(),
            training_releases: window_releases.iter().map(|s| s.to_string()).collect(),
            n_in,
            n_out,
            random_baseline: None,
        });
    }
    Ok(BacktestReport::finish(per_release, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::tests::{clean_dataset, entry, test_case};
    use crate::datamodel::Defect;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn apfd_examples() {
        let fm = FaultMatrix::from_ranks(10, &[1, 3, 5, 7]).unwrap();
        assert!(approx(apfd(&fm).unwrap(), 0.65));
        assert!(approx(
            apfd(&FaultMatrix::from_ranks(1, &[1]).unwrap()).unwrap(),
            0.5
        ));
        assert!(approx(
            apfd(&FaultMatrix::from_ranks(5, &[1, 1]).unwrap()).unwrap(),
            0.9
        ));
    }

    #[test]
    fn apfd_without_faults_is_an_error() {
        let fm = FaultMatrix::from_ranks(4, &[]).unwrap();
        assert_eq!(apfd(&fm), Err(EvalError::NoFaults));
        assert!(FaultMatrix::from_ranks(3, &[4]).is_err());
    }

    /// Tests A..F; at r2 fault X is revealed by D and F, fault Y by B, fault Z
    /// only by E.
    fn fault_fixture() -> Dataset {
        let mut d = clean_dataset();
        d.defects = ["X", "Y", "Z"]
            .iter()
            .map(|id| Defect {
                id: id.to_string(),
                title: String::new(),
                severity: 1,
                found_in_release: Some("r2".into()),
            })
            .collect();
        d.tests = ["A", "B", "C", "D", "E", "F"]
            .iter()
            .map(|id| test_case(id, "text"))
            .collect();
        let reveal = |d: &mut Dataset, i: usize, faults: &[&str]| {
            d.tests[i].history.push(entry("r2", Verdict::Fail, faults));
        };
        reveal(&mut d, 1, &["Y"]);
        reveal(&mut d, 3, &["X"]);
        reveal(&mut d, 4, &["Z"]);
        reveal(&mut d, 5, &["X"]);
        d
    }

    fn ids(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn first_occurrence_wins() {
        let d = fault_fixture();
        let fm = build_fault_matrix(&ids(&["A", "C", "B", "D", "F", "E"]), &d, "r2").unwrap();
        let x = fm
            .first_failures
            .iter()
            .find(|f| f.fault_id == "X")
            .unwrap();
        assert_eq!(x.rank, 4);
        assert_eq!(fm.m, 3);
    }

    #[test]
    fn faults_outside_ordering_are_excluded() {
        let d = fault_fixture();
        let fm = build_fault_matrix(&ids(&["A", "B", "D"]), &d, "r2").unwrap();
        assert_eq!(fm.excluded_faults, vec!["Z".to_string()]);
        assert_eq!(fm.m, 2);
        assert_eq!(fm.n, 3);
    }

    #[test]
    fn empty_fault_universe() {
        let d = fault_fixture();
        let fm = build_fault_matrix(&ids(&["A", "B"]), &d, "r1").unwrap();
        assert_eq!(fm.m, 0);
        assert!(fm.excluded_faults.is_empty());
    }

    #[test]
    fn fault_matrix_errors() {
        let d = fault_fixture();
        assert_eq!(
            build_fault_matrix(&ids(&["A"]), &d, "r9"),
            Err(EvalError::UnknownRelease("r9".into()))
        );
        assert_eq!(
            build_fault_matrix(&ids(&["A", "Q"]), &d, "r2"),
            Err(EvalError::UnknownTestId("Q".into()))
        );
        assert_eq!(
            build_fault_matrix(&ids(&["A", "A"]), &d, "r2"),
            Err(EvalError::DuplicateTestId("A".into()))
        );
    }

    #[test]
    fn random_baseline_single_trial_matches_its_permutation() {
        let d = fault_fixture();
        let seed = 17;
        let value = random_baseline(&d, "r2", 1, seed).unwrap();
        let mut order: Vec<&str> = tests_with_history(&d, "r2");
        Lcg64::new(seed).shuffle(&mut order);
        let ordering: Vec<String> = order.iter().map(|s| s.to_string()).collect();
        let expected = apfd(&build_fault_matrix(&ordering, &d, "r2").unwrap()).unwrap();
        assert!(approx(value, expected), "{value} vs {expected}");
        assert_eq!(
            value.to_bits(),
            random_baseline(&d, "r2", 1, seed).unwrap().to_bits()
        );
    }

    #[test]
    fn random_baseline_errors() {
        let d = fault_fixture();
        assert_eq!(random_baseline(&d, "r1", 10, 0), Err(EvalError::NoFaults));
        assert!(matches!(
            random_baseline(&d, "r2", 0, 0),
            Err(EvalError::InvalidArgument(_))
        ));
    }

    #[test]
    fn history_labeling_rule() {
        let mut d = fault_fixture();
        d.tests[0].history.push(entry("r2", Verdict::Skipped, &[]));
        d.tests[2].history.clear();
        d.tests[2].history.push(entry("r2", Verdict::Skipped, &[]));
        let labels = history_labels(&d, &["r2"], LabelingRule::HistoryVerdict);
        let label_of = |id: &str| labels.get(id).map(|e| e.label);
        assert_eq!(label_of("B"), Some(Label::In));
        assert_eq!(label_of("D"), Some(Label::In));
        assert_eq!(label_of("C"), None);
        assert_eq!(label_of("A"), None);
        // window spanning r1: A passed there
        let labels = history_labels(&d, &["r1", "r2"], LabelingRule::HistoryVerdict);
        assert_eq!(labels.get("A").map(|e| e.label), Some(Label::Out));
    }

    #[test]
    fn empty_backtest() {
        let d = fault_fixture();
        let report = backtest(
            &d,
            &FeatureScope::all("r1"),
            &TrainConfig::default(),
            &[],
            LabelingRule::HistoryVerdict,
        )
        .unwrap();
        assert!(report.empty);
        assert_eq!(report.mean_apfd, None);
        assert!(report.render_table().contains("no release evaluated"));
    }

    #[test]
    fn backtest_skips_untrainable_releases() {
        let d = fault_fixture();
        // r1: nothing before it; r2: only passes at r1, no in labels
        let report = backtest(
            &d,
            &FeatureScope::all("r1"),
            &TrainConfig::default(),
            &ids(&["r1", "r2"]),
            LabelingRule::HistoryVerdict,
        )
        .unwrap();
        assert!(report.empty);
        assert_eq!(report.skipped.len(), 2);
        assert!(report.skipped[1].reason.contains("degenerate"));
        assert_eq!(
            backtest(
                &d,
                &FeatureScope::all("r1"),
                &TrainConfig::default(),
                &ids(&["r5"]),
                LabelingRule::HistoryVerdict
            ),
            Err(EvalError::UnknownRelease("r5".into()))
        );
    }
}
