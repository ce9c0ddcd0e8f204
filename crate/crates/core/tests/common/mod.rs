//! Shared generators for the property tests.

#![allow(dead_code)]

use rts_core::datamodel::{
    Dataset, Defect, HistoryEntry, Requirement, TestCase, Verdict, SCHEMA_VERSION,
};
use rts_core::rng::Lcg64;

const WORDS: [&str; 14] = [
    "brake", "speed", "door", "lock", "sensor", "timeout", "reset", "mode", "ecu", "can", "signal",
    "voltage", "ab", "x1",
];
const TAGS: [&str; 4] = ["smoke", "hil", "sil", "manual"];

fn sentence(rng: &mut Lcg64, max_words: usize) -> String {
    let n = rng.index(max_words + 1);
    (0..n)
        .map(|_| WORDS[rng.index(WORDS.len())])
        .collect::<Vec<_>>()
        .join(if rng.chance(0.5) { " " } else { ", " })
}

/// A valid dataset with `n_tests` tests and 1 to 4 releases.
pub fn random_dataset(seed: u64, n_tests: usize) -> Dataset {
    let mut rng = Lcg64::new(seed);
    let releases: Vec<String> = (0..1 + rng.index(4))
        .map(|i| format!("r{}", i + 1))
        .collect();
    let requirements: Vec<Requirement> = (0..1 + rng.index(5))
        .map(|i| Requirement {
            id: format!("REQ-{i}"),
            title: sentence(&mut rng, 3),
            description: String::new(),
            changed_in_releases: releases
                .iter()
                .filter(|_| rng.chance(0.4))
                .cloned()
                .collect(),
        })
        .collect();
    let mut defects = Vec::new();
    let mut tests = Vec::new();
    for i in 0..n_tests {
        let id = format!("T{i:03}");
        let requirement_ids: Vec<String> = requirements
            .iter()
            .filter(|_| rng.chance(0.3))
            .map(|r| r.id.clone())
            .collect();
        let tags: Vec<String> = TAGS
            .iter()
            .filter(|_| rng.chance(0.3))
            .map(|s| s.to_string())
            .collect();
        let mut history = Vec::new();
        let mut defect_ids = Vec::new();
        for r in &releases {
            if rng.chance(0.2) {
                continue;
            }
            let executed = rng.chance(0.9);
            let verdict = if !executed {
                Verdict::Skipped
            } else if rng.chance(0.3) {
                Verdict::Fail
            } else {
                Verdict::Pass
            };
            let mut revealed = Vec::new();
            if verdict == Verdict::Fail {
                let did = format!("D-{r}-{i}");
                defects.push(Defect {
                    id: did.clone(),
                    title: String::new(),
                    severity: 2,
                    found_in_release: Some(r.clone()),
                });
                defect_ids.push(did.clone());
                revealed.push(did);
            }
            history.push(HistoryEntry {
                release: r.clone(),
                executed,
                verdict,
                revealed_defect_ids: revealed,
            });
        }
        tests.push(TestCase {
            id,
            title: sentence(&mut rng, 2),
            description: sentence(&mut rng, 6),
            requirement_ids,
            defect_ids,
            tags,
            history,
        });
    }
    Dataset {
        schema_version: SCHEMA_VERSION,
        project: format!("random-{seed}"),
        releases,
        tests,
        requirements,
        defects,
    }
}
