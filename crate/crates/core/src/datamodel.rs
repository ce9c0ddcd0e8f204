//! Project data working copy: tests, requirements, defects, their relations
//! and per-release execution history.
//!
//! Datasets are loaded from a JSON document (see [`load_dataset`]) and checked
//! with [`validate_dataset`] before anything is trained on them. Validation
//! never fails; problems end up as issues in a [`ValidationReport`], and a
//! report with at least one error-severity issue marks the dataset corrupt.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// Share of empty test descriptions above which `MOSTLY_EMPTY_TEXT` fires.
pub const MOSTLY_EMPTY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub release: String,
    pub executed: bool,
    pub verdict: Verdict,
    #[serde(default)]
    pub revealed_defect_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub requirement_ids: Vec<String>,
    #[serde(default)]
    pub defect_ids: Vec<String>,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub history: Vec<HistoryEntry>,
}

impl TestCase {
    pub fn history_at(&self, release: &str) -> Option<&HistoryEntry> {
        self.history.iter().find(|h| h.release == release)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Requirement {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub changed_in_releases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Defect {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub severity: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub found_in_release: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema_version: u32,
    pub project: String,
    /// Oldest first.
    pub releases: Vec<String>,
    pub tests: Vec<TestCase>,
    #[serde(default)]
    pub requirements: Vec<Requirement>,
    #[serde(default)]
    pub defects: Vec<Defect>,
}

impl Dataset {
    pub fn release_index(&self, release: &str) -> Option<usize> {
        self.releases.iter().position(|r| r == release)
    }

    pub fn has_release(&self, release: &str) -> bool {
        self.release_index(release).is_some()
    }

    pub fn test(&self, id: &str) -> Option<&TestCase> {
        self.tests.iter().find(|t| t.id == id)
    }

    pub fn requirement(&self, id: &str) -> Option<&Requirement> {
        self.requirements.iter().find(|r| r.id == id)
    }

    /// Id -> test lookup. With duplicate ids the first occurrence wins.
    pub fn test_index(&self) -> HashMap<&str, &TestCase> {
        let mut map = HashMap::with_capacity(self.tests.len());
        for t in &self.tests {
            map.entry(t.id.as_str()).or_insert(t);
        }
        map
    }

    pub fn requirement_index(&self) -> HashMap<&str, &Requirement> {
        let mut map = HashMap::with_capacity(self.requirements.len());
        for r in &self.requirements {
            map.entry(r.id.as_str()).or_insert(r);
        }
        map
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serializes")
    }
}

/// Parses a dataset document. Unknown fields are ignored.
pub fn load_dataset(bytes: &[u8]) -> Result<Dataset, DataError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let dataset: Dataset = serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        classify(inner, path)
    })?;
    de.end()
        .map_err(|e| DataError::MalformedInput(e.to_string()))?;
    Ok(dataset)
}

fn classify(err: serde_json::Error, path: String) -> DataError {
    use serde_json::error::Category;
    match err.classify() {
        Category::Data => {
            let message = strip_position(&err.to_string());
            // a missing field is reported at its parent; point at the field
            let path = match missing_field(&message) {
                Some(field) if path == "." => field.to_string(),
                Some(field) => format!("{path}.{field}"),
                None => path,
            };
            DataError::SchemaViolation { path, message }
        }
        Category::Io | Category::Syntax | Category::Eof => {
            DataError::MalformedInput(err.to_string())
        }
    }
}

fn missing_field(message: &str) -> Option<&str> {
    message.strip_prefix("missing field `")?.strip_suffix('`')
}

fn strip_position(message: &str) -> String {
    match message.find(" at line ") {
        Some(i) => message[..i].to_string(),
        None => message.to_string(),
    }
}

pub fn load_dataset_file(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_dataset(&bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub code: String,
    pub entity_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
    pub corrupt: bool,
}

impl ValidationReport {
    fn from_issues(issues: Vec<Issue>) -> Self {
        let corrupt = issues.iter().any(|i| i.severity == Severity::Error);
        Self { issues, corrupt }
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Issue> {
        self.issues
            .iter()
            .filter(|i| i.severity == Severity::Warning)
    }

    pub fn has_code(&self, code: &str) -> bool {
        self.issues.iter().any(|i| i.code == code)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for issue in &self.issues {
            out.push_str(&format!(
                "{:<7} {:<22} {:<16} {}\n",
                issue.severity, issue.code, issue.entity_id, issue.message
            ));
        }
        let errors = self.errors().count();
        let warnings = self.warnings().count();
        out.push_str(&format!(
            "{} issues ({} errors, {} warnings){}\n",
            self.issues.len(),
            errors,
            warnings,
            if self.corrupt {
                "; dataset is CORRUPT"
            } else {
                ""
            }
        ));
        out
    }
}

pub mod codes {
    pub const DUP_ID: &str = "DUP_ID";
    pub const DANGLING_REF: &str = "DANGLING_REF";
    pub const EMPTY_SUITE: &str = "EMPTY_SUITE";
    pub const EMPTY_ID: &str = "EMPTY_ID";
    pub const UNKNOWN_RELEASE: &str = "UNKNOWN_RELEASE";
    pub const DUP_RELEASE: &str = "DUP_RELEASE";
    pub const UNSUPPORTED_SCHEMA: &str = "UNSUPPORTED_SCHEMA";
    pub const EMPTY_DESCRIPTION: &str = "EMPTY_DESCRIPTION";
    pub const NO_HISTORY: &str = "NO_HISTORY";
    pub const MOSTLY_EMPTY_TEXT: &str = "MOSTLY_EMPTY_TEXT";
    pub const CONTRADICTORY_HISTORY: &str = "CONTRADICTORY_HISTORY";
    pub const DUP_HISTORY: &str = "DUP_HISTORY";
}

struct Issues(Vec<Issue>);

impl Issues {
    fn error(&mut self, code: &str, entity: &str, message: String) {
        self.push(Severity::Error, code, entity, message);
    }

    fn warning(&mut self, code: &str, entity: &str, message: String) {
        self.push(Severity::Warning, code, entity, message);
    }

    fn push(&mut self, severity: Severity, code: &str, entity: &str, message: String) {
        self.0.push(Issue {
            severity,
            code: code.to_string(),
            entity_id: entity.to_string(),
            message,
        });
    }
}

/// Checks structural integrity and data quality. Pure and deterministic.
pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    let mut issues = Issues(Vec::new());

    if d.schema_version != SCHEMA_VERSION {
        issues.error(
            codes::UNSUPPORTED_SCHEMA,
            &d.project,
            format!(
                "schema_version {} (supported: {})",
                d.schema_version, SCHEMA_VERSION
            ),
        );
    }

    if d.tests.is_empty() {
        issues.error(
            codes::EMPTY_SUITE,
            &d.project,
            "dataset has no tests".into(),
        );
    }

    let mut seen_releases = BTreeSet::new();
    for r in &d.releases {
        if !seen_releases.insert(r.as_str()) {
            issues.error(codes::DUP_RELEASE, r, format!("release {r:?} listed twice"));
        }
    }

    check_ids(&mut issues, "test", d.tests.iter().map(|t| t.id.as_str()));
    check_ids(
        &mut issues,
        "requirement",
        d.requirements.iter().map(|r| r.id.as_str()),
    );
    check_ids(
        &mut issues,
        "defect",
        d.defects.iter().map(|x| x.id.as_str()),
    );

    let requirement_ids: HashSet<&str> = d.requirements.iter().map(|r| r.id.as_str()).collect();
    let defect_ids: HashSet<&str> = d.defects.iter().map(|x| x.id.as_str()).collect();
    let releases: HashSet<&str> = d.releases.iter().map(String::as_str).collect();

    for r in &d.requirements {
        let unknown: Vec<&str> = r
            .changed_in_releases
            .iter()
            .map(String::as_str)
            .filter(|rel| !releases.contains(rel))
            .collect();
        if !unknown.is_empty() {
            issues.error(
                codes::UNKNOWN_RELEASE,
                &r.id,
                format!("changed_in_releases references unknown {unknown:?}"),
            );
        }
    }
    for x in &d.defects {
        if let Some(rel) = &x.found_in_release {
            if !releases.contains(rel.as_str()) {
                issues.error(
                    codes::UNKNOWN_RELEASE,
                    &x.id,
                    format!("found_in_release references unknown {rel:?}"),
                );
            }
        }
    }

    let mut empty_descriptions = 0usize;
    for t in &d.tests {
        let mut dangling: Vec<String> = Vec::new();
        for rid in &t.requirement_ids {
            if !requirement_ids.contains(rid.as_str()) {
                dangling.push(format!("requirement {rid}"));
            }
        }
        for did in &t.defect_ids {
            if !defect_ids.contains(did.as_str()) {
                dangling.push(format!("defect {did}"));
            }
        }
        for h in &t.history {
            for did in &h.revealed_defect_ids {
                if !defect_ids.contains(did.as_str()) {
                    dangling.push(format!("revealed defect {did} at {}", h.release));
                }
            }
        }
        if !dangling.is_empty() {
            issues.error(
                codes::DANGLING_REF,
                &t.id,
                format!("unresolved references: {}", dangling.join(", ")),
            );
        }

        let unknown: BTreeSet<&str> = t
            .history
            .iter()
            .map(|h| h.release.as_str())
            .filter(|rel| !releases.contains(rel))
            .collect();
        if !unknown.is_empty() {
            issues.error(
                codes::UNKNOWN_RELEASE,
                &t.id,
                format!("history references unknown {unknown:?}"),
            );
        }

        if t.description.trim().is_empty() {
            empty_descriptions += 1;
            issues.warning(codes::EMPTY_DESCRIPTION, &t.id, "empty description".into());
        }
        if t.history.is_empty() {
            issues.warning(codes::NO_HISTORY, &t.id, "no execution history".into());
        }

        let mut per_release: BTreeMap<&str, usize> = BTreeMap::new();
        for h in &t.history {
            *per_release.entry(h.release.as_str()).or_default() += 1;
            if let Some(problem) = history_contradiction(h) {
                issues.warning(
                    codes::CONTRADICTORY_HISTORY,
                    &t.id,
                    format!("{} at release {}", problem, h.release),
                );
            }
        }
        for (rel, count) in per_release {
            if count > 1 {
                issues.warning(
                    codes::DUP_HISTORY,
                    &t.id,
                    format!("{count} history entries for release {rel}"),
                );
            }
        }
    }

    if !d.tests.is_empty() {
        let share = empty_descriptions as f64 / d.tests.len() as f64;
        if share > MOSTLY_EMPTY_THRESHOLD {
            issues.warning(
                codes::MOSTLY_EMPTY_TEXT,
                &d.project,
                format!(
                    "{} of {} test descriptions are empty",
                    empty_descriptions,
                    d.tests.len()
                ),
            );
        }
    }

    ValidationReport::from_issues(issues.0)
}

fn check_ids<'a>(issues: &mut Issues, kind: &str, ids: impl Iterator<Item = &'a str>) {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut order = Vec::new();
    for id in ids {
        if id.trim().is_empty() {
            issues.error(codes::EMPTY_ID, "", format!("{kind} with empty id"));
            continue;
        }
        let c = counts.entry(id).or_default();
        if *c == 0 {
            order.push(id);
        }
        *c += 1;
    }
    for id in order {
        let c = counts[id];
        if c > 1 {
            issues.error(codes::DUP_ID, id, format!("{kind} id used {c} times"));
        }
    }
}

fn history_contradiction(h: &HistoryEntry) -> Option<&'static str> {
    match (h.verdict, h.executed) {
        (Verdict::Fail, false) => Some("verdict fail without execution"),
        (Verdict::Pass, false) => Some("verdict pass without execution"),
        _ if !h.revealed_defect_ids.is_empty() && h.verdict != Verdict::Fail => {
            Some("revealed defects without a failing verdict")
        }
        _ => None,
    }
}
