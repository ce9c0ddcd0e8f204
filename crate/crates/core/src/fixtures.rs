//! Synthetic corpora with a known answer.
//!
//! The planted-signal corpus has a small "risky" vocabulary: a test's risk
//! level is the number of risky tokens in its description, and the level
//! sets its failure probability in every release. Risky tests are linked to
//! volatile requirements that change in every release, the others to stable
//! requirements that never change, so "linked requirement changed in the
//! target release" is the oracle's in/out decision. Every failure reveals its
//! own defect (single-revealer faults).
//!
//! The shuffled corpus is the same data with descriptions permuted across
//! tests, which destroys the text signal while keeping history, links and
//! tags intact.
//!
//! Common words are drawn from a deliberately small vocabulary so that a
//! description does not act as a fingerprint of its test.

use crate::datamodel::{
    Dataset, Defect, HistoryEntry, Requirement, TestCase, Verdict, SCHEMA_VERSION,
};
use crate::ranker::Label;
use crate::rng::Lcg64;
use serde::{Deserialize, Serialize};

pub const PLANTED_SEED: u64 = 20_240_611;
pub const SHUFFLE_SEED: u64 = 7_331;

const COMMON_WORDS: [&str; 8] = [
    "verify", "signal", "module", "output", "state", "value", "request", "response",
];

const RISKY_WORDS: [&str; 8] = [
    "calibration",
    "handover",
    "watchdog",
    "overflow",
    "bootloader",
    "flashing",
    "diagnosis",
    "gateway",
];

const TAGS: [&str; 5] = ["smoke", "hil", "sil", "nightly", "manual"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureParams {
    pub seed: u64,
    pub n_tests: usize,
    pub n_releases: usize,
    /// Share of tests per risk level; level `i` carries `i` risky tokens.
    pub level_shares: Vec<f64>,
    /// Failure probability per release for each level.
    pub level_fail_p: Vec<f64>,
    /// Common words per description, inclusive range.
    pub common_words: (usize, usize),
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            seed: PLANTED_SEED,
            n_tests: 400,
            n_releases: 6,
            level_shares: vec![0.50, 0.20, 0.12, 0.10, 0.08],
            level_fail_p: vec![0.003, 0.03, 0.2, 0.5, 0.85],
            common_words: (8, 12),
        }
    }
}

pub fn release_name(i: usize) -> String {
    format!("r{}", i + 1)
}

fn test_id(i: usize) -> String {
    format!("TC-{:04}", i + 1)
}

fn risk_levels(p: &FixtureParams) -> Vec<usize> {
    let mut levels = Vec::with_capacity(p.n_tests);
    let mut acc = 0.0;
    for (level, share) in p.level_shares.iter().enumerate() {
        acc += share;
        let upto = ((acc * p.n_tests as f64).round() as usize).min(p.n_tests);
        while levels.len() < upto {
            levels.push(level);
        }
    }
    let last = p.level_shares.len().saturating_sub(1);
    levels.resize(p.n_tests, last);
    levels
}

/// The planted-signal corpus.
pub fn planted(p: &FixtureParams) -> Dataset {
    let mut rng = Lcg64::new(p.seed);
    let releases: Vec<String> = (0..p.n_releases).map(release_name).collect();

    let n_volatile = 6;
    let n_stable = 14;
    let mut requirements = Vec::new();
    for i in 0..n_volatile {
        requirements.push(Requirement {
            id: format!("REQ-V{:02}", i + 1),
            title: format!("volatile function {}", i + 1),
            description: String::new(),
            changed_in_releases: releases.clone(),
        });
    }
    for i in 0..n_stable {
        requirements.push(Requirement {
            id: format!("REQ-S{:02}", i + 1),
            title: format!("stable function {}", i + 1),
            description: String::new(),
            changed_in_releases: Vec::new(),
        });
    }

    let mut levels = risk_levels(p);
    rng.shuffle(&mut levels);

    let mut tests = Vec::with_capacity(p.n_tests);
    let mut defects = Vec::new();
    for (i, &level) in levels.iter().enumerate() {
        let id = test_id(i);
        let (lo, hi) = p.common_words;
        let n_common = lo + rng.index(hi - lo + 1);
        let mut words: Vec<&str> = (0..n_common)
            .map(|_| COMMON_WORDS[rng.index(COMMON_WORDS.len())])
            .collect();
        for &k in &rng.sample_indices(RISKY_WORDS.len(), level) {
            words.push(RISKY_WORDS[k]);
        }
        rng.shuffle(&mut words);

        let n_links = 1 + rng.index(2);
        let requirement_ids: Vec<String> = (0..n_links)
            .map(|_| {
                if level > 0 {
                    format!("REQ-V{:02}", rng.index(n_volatile) + 1)
                } else {
                    format!("REQ-S{:02}", rng.index(n_stable) + 1)
                }
            })
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let tags = vec![TAGS[rng.index(TAGS.len())].to_string()];

        let fail_p = p.level_fail_p[level];
        let mut history = Vec::with_capacity(p.n_releases);
        let mut defect_ids = Vec::new();
        for release in &releases {
            if rng.chance(fail_p) {
                let defect = format!("DEF-{release}-{:04}", i + 1);
                defects.push(Defect {
                    id: defect.clone(),
                    title: format!("failure of {id} in {release}"),
                    severity: 1 + rng.index(4) as u8,
                    found_in_release: Some(release.clone()),
                });
                defect_ids.push(defect.clone());
                history.push(HistoryEntry {
                    release: release.clone(),
                    executed: true,
                    verdict: Verdict::Fail,
                    revealed_defect_ids: vec![defect],
                });
            } else {
                history.push(HistoryEntry {
                    release: release.clone(),
                    executed: true,
                    verdict: Verdict::Pass,
                    revealed_defect_ids: Vec::new(),
                });
            }
        }

        tests.push(TestCase {
            id,
            title: "regression check".into(),
            description: words.join(" "),
            requirement_ids,
            defect_ids,
            tags,
            history,
        });
    }

    Dataset {
        schema_version: SCHEMA_VERSION,
        project: "planted-signal".into(),
        releases,
        tests,
        requirements,
        defects,
    }
}

/// `d` with descriptions permuted across tests.
pub fn shuffled(d: &Dataset, seed: u64) -> Dataset {
    let mut out = d.clone();
    let mut descriptions: Vec<String> = d.tests.iter().map(|t| t.description.clone()).collect();
    Lcg64::new(seed).shuffle(&mut descriptions);
    for (t, desc) in out.tests.iter_mut().zip(descriptions) {
        t.description = desc;
    }
    out.project = "shuffled-descriptions".into();
    out
}

pub fn planted_default() -> Dataset {
    planted(&FixtureParams::default())
}

pub fn shuffled_default() -> Dataset {
    shuffled(&planted_default(), SHUFFLE_SEED)
}

/// Ground-truth in/out decision for `release`: in when a linked requirement
/// changes in that release.
pub fn oracle_label(d: &Dataset, test_id: &str, release: &str) -> Option<Label> {
    let t = d.test(test_id)?;
    let changed = t.requirement_ids.iter().any(|rid| {
        d.requirement(rid)
            .is_some_and(|r| r.changed_in_releases.iter().any(|x| x == release))
    });
    Some(if changed { Label::In } else { Label::Out })
}

/// Tests that failed in `release`.
pub fn failing_tests(d: &Dataset, release: &str) -> Vec<String> {
    d.tests
        .iter()
        .filter(|t| {
            t.history_at(release)
                .is_some_and(|h| h.executed && h.verdict == Verdict::Fail)
        })
        .map(|t| t.id.clone())
        .collect()
}
