//! Feature catalog and extraction.
//!
//! Every dataset exposes the same six feature groups. The test manager may
//! deselect any of them (at least one has to stay) through a [`FeatureScope`];
//! extraction then produces one sparse row per test. Columns are ordered by
//! catalog group and lexicographically within a group, so the same
//! `(dataset, scope)` pair always yields the same matrix.
//!
//! Text pipeline for `desc_text` (title and description joined by a space):
//! lowercase, split on every non-alphanumeric character, drop tokens shorter
//! than two characters. `tf = count / token_count` (0 for an empty document),
//! `idf = ln((1 + N) / (1 + df)) + 1` with `N` the number of tests, and the
//! cell value is `tf * idf`. Numeric groups are min-max scaled into `[0, 1]`
//! over the matrix; a constant column scales to 0.

use crate::datamodel::{Dataset, TestCase};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

pub const DESC_TEXT: &str = "desc_text";
pub const N_REQUIREMENTS: &str = "n_requirements";
pub const N_DEFECTS: &str = "n_defects";
pub const N_CHANGED_REQUIREMENTS: &str = "n_changed_requirements";
pub const HIST_FAIL_RATE: &str = "hist_fail_rate";
pub const TAGS: &str = "tags";

const NUMERIC_GROUPS: [&str; 4] = [
    N_REQUIREMENTS,
    N_DEFECTS,
    N_CHANGED_REQUIREMENTS,
    HIST_FAIL_RATE,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("unknown release {0:?}")]
    UnknownRelease(String),
    #[error("scope mismatch: {0}")]
    ScopeMismatch(String),
    #[error("scope deselects every feature group")]
    EmptyScope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    TextTfidf,
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    pub kind: FeatureKind,
    pub source: String,
    /// Number of columns the group contributes for this dataset.
    #[serde(skip)]
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureCatalog {
    pub groups: Vec<FeatureGroup>,
}

impl FeatureCatalog {
    pub fn group(&self, name: &str) -> Option<&FeatureGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().map(|g| g.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureScope {
    pub target_release: String,
    #[serde(default)]
    pub deselected_groups: BTreeSet<String>,
}

impl FeatureScope {
    pub fn all(target_release: impl Into<String>) -> Self {
        Self {
            target_release: target_release.into(),
            deselected_groups: BTreeSet::new(),
        }
    }

    /// Scope keeping only the named groups.
    pub fn only(target_release: impl Into<String>, keep: &[&str]) -> Self {
        Self {
            target_release: target_release.into(),
            deselected_groups: group_names()
                .filter(|g| !keep.contains(g))
                .map(str::to_string)
                .collect(),
        }
    }

    pub fn with_release(&self, release: impl Into<String>) -> Self {
        Self {
            target_release: release.into(),
            deselected_groups: self.deselected_groups.clone(),
        }
    }

    pub fn is_selected(&self, group: &str) -> bool {
        !self.deselected_groups.contains(group)
    }
}

fn group_names() -> impl Iterator<Item = &'static str> {
    [DESC_TEXT].into_iter().chain(NUMERIC_GROUPS).chain([TAGS])
}

/// Lowercases, splits on non-alphanumerics, drops tokens under two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|tok| tok.chars().count() >= 2)
        .map(str::to_string)
        .collect()
}

fn test_text(t: &TestCase) -> String {
    format!("{} {}", t.title, t.description)
}

fn tag_vocabulary(d: &Dataset) -> Vec<String> {
    let tags: BTreeSet<&str> = d
        .tests
        .iter()
        .flat_map(|t| t.tags.iter().map(String::as_str))
        .filter(|t| !t.is_empty())
        .collect();
    tags.into_iter().map(str::to_string).collect()
}

fn text_vocabulary(d: &Dataset) -> BTreeMap<String, usize> {
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for t in &d.tests {
        let unique: BTreeSet<String> = tokenize(&test_text(t)).into_iter().collect();
        for tok in unique {
            *df.entry(tok).or_default() += 1;
        }
    }
    df
}

pub fn build_catalog(d: &Dataset, target_release: &str) -> Result<FeatureCatalog, FeatureError> {
    if !d.has_release(target_release) {
        return Err(FeatureError::UnknownRelease(target_release.to_string()));
    }
    let group = |name: &str, kind, source: &str, width| FeatureGroup {
        name: name.to_string(),
        kind,
        source: source.to_string(),
        width,
    };
    Ok(FeatureCatalog {
        groups: vec![
            group(
                DESC_TEXT,
                FeatureKind::TextTfidf,
                "title+description",
                text_vocabulary(d).len(),
            ),
            group(N_REQUIREMENTS, FeatureKind::Numeric, "requirement_ids", 1),
            group(N_DEFECTS, FeatureKind::Numeric, "defect_ids", 1),
            group(
                N_CHANGED_REQUIREMENTS,
                FeatureKind::Numeric,
                "requirement_ids.changed_in_releases",
                1,
            ),
            group(HIST_FAIL_RATE, FeatureKind::Numeric, "history", 1),
            group(
                TAGS,
                FeatureKind::Categorical,
                "tags",
                tag_vocabulary(d).len(),
            ),
        ],
    })
}

/// Sparse row with sorted, strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub dim: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        let mut v = Self::zeros(values.len());
        for (i, &x) in values.iter().enumerate() {
            v.push(i, x);
        }
        v
    }

    /// Appends a cell; zero cells are not stored. Indices must be pushed in
    /// increasing order.
    fn push(&mut self, index: usize, value: f64) {
        debug_assert!(index < self.dim);
        debug_assert!(self.indices.last().is_none_or(|&last| last < index));
        if value != 0.0 {
            self.indices.push(index);
            self.values.push(value);
        }
    }

    pub fn get(&self, index: usize) -> f64 {
        match self.indices.binary_search(&index) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Frozen text vocabulary: sorted tokens, document frequencies and the idf
/// weights derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextVocabulary {
    pub group: String,
    pub offset: usize,
    pub n_docs: usize,
    pub tokens: Vec<String>,
    pub doc_freq: Vec<usize>,
    pub idf: Vec<f64>,
}

impl TextVocabulary {
    fn column_of(&self, token: &str) -> Option<usize> {
        self.tokens.binary_search_by(|t| t.as_str().cmp(token)).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericColumn {
    pub name: String,
    pub column: usize,
    pub min: f64,
    pub max: f64,
}

impl NumericColumn {
    fn scale(&self, raw: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            ((raw - self.min) / span).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagColumns {
    pub offset: usize,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub scope: FeatureScope,
    pub test_ids: Vec<String>,
    pub column_names: Vec<String>,
    pub rows: Vec<SparseVec>,
    pub vocabulary: Option<TextVocabulary>,
    pub numeric: Vec<NumericColumn>,
    pub tag_columns: Option<TagColumns>,
}

impl FeatureMatrix {
    pub fn dim(&self) -> usize {
        self.column_names.len()
    }

    pub fn row_of(&self, test_id: &str) -> Option<&SparseVec> {
        self.test_ids
            .iter()
            .position(|id| id == test_id)
            .map(|i| &self.rows[i])
    }

    pub fn row_index(&self) -> HashMap<&str, usize> {
        self.test_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }
}

fn validate_scope(d: &Dataset, scope: &FeatureScope) -> Result<FeatureCatalog, FeatureError> {
    let catalog = build_catalog(d, &scope.target_release)?;
    for name in &scope.deselected_groups {
        if catalog.group(name).is_none() {
            return Err(FeatureError::ScopeMismatch(format!(
                "deselected group {name:?} is not in the catalog"
            )));
        }
    }
    if catalog.names().all(|g| !scope.is_selected(g)) {
        return Err(FeatureError::EmptyScope);
    }
    Ok(catalog)
}

fn numeric_value(group: &str, t: &TestCase, d: &Dataset, target: &str, target_index: usize) -> f64 {
    match group {
        N_REQUIREMENTS => t.requirement_ids.len() as f64,
        N_DEFECTS => t.defect_ids.len() as f64,
        N_CHANGED_REQUIREMENTS => t
            .requirement_ids
            .iter()
            .filter(|rid| {
                d.requirement(rid)
                    .is_some_and(|r| r.changed_in_releases.iter().any(|x| x == target))
            })
            .count() as f64,
        HIST_FAIL_RATE => {
            let (mut executions, mut fails) = (0usize, 0usize);
            for h in &t.history {
                let before = d
                    .release_index(&h.release)
                    .is_some_and(|i| i < target_index);
                if before && h.executed {
                    executions += 1;
                    if h.verdict == crate::datamodel::Verdict::Fail {
                        fails += 1;
                    }
                }
            }
            if executions == 0 {
                0.0
            } else {
                fails as f64 / executions as f64
            }
        }
        other => unreachable!("not a numeric group: {other}"),
    }
}

fn text_cells(vocab: &TextVocabulary, t: &TestCase) -> Vec<(usize, f64)> {
    let tokens = tokenize(&test_text(t));
    if tokens.is_empty() {
        return Vec::new();
    }
    let total = tokens.len() as f64;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for tok in &tokens {
        if let Some(col) = vocab.column_of(tok) {
            *counts.entry(col).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(col, c)| (vocab.offset + col, (c as f64 / total) * vocab.idf[col]))
        .collect()
}

fn raw_numeric_values(
    matrix_numeric: &[NumericColumn],
    t: &TestCase,
    d: &Dataset,
    scope: &FeatureScope,
    target_index: usize,
) -> Vec<f64> {
    matrix_numeric
        .iter()
        .map(|c| numeric_value(&c.name, t, d, &scope.target_release, target_index))
        .collect()
}

fn assemble_row(
    dim: usize,
    vocab: Option<&TextVocabulary>,
    numeric: &[NumericColumn],
    raw_numeric: &[f64],
    tags: Option<&TagColumns>,
    t: &TestCase,
) -> SparseVec {
    let mut row = SparseVec::zeros(dim);
    if let Some(vocab) = vocab {
        for (col, v) in text_cells(vocab, t) {
            row.push(col, v);
        }
    }
    for (c, &raw) in numeric.iter().zip(raw_numeric) {
        row.push(c.column, c.scale(raw));
    }
    if let Some(tags) = tags {
        let own: BTreeSet<&str> = t.tags.iter().map(String::as_str).collect();
        for (i, tag) in tags.tags.iter().enumerate() {
            if own.contains(tag.as_str()) {
                row.push(tags.offset + i, 1.0);
            }
        }
    }
    row
}

pub fn extract_features(d: &Dataset, scope: &FeatureScope) -> Result<FeatureMatrix, FeatureError> {
    validate_scope(d, scope)?;
    let target_index = d
        .release_index(&scope.target_release)
        .expect("validated by catalog");

    let mut column_names = Vec::new();

    let vocabulary = scope.is_selected(DESC_TEXT).then(|| {
        let df = text_vocabulary(d);
        let n_docs = d.tests.len();
        let offset = column_names.len();
        let mut tokens = Vec::with_capacity(df.len());
        let mut doc_freq = Vec::with_capacity(df.len());
        let mut idf = Vec::with_capacity(df.len());
        for (tok, f) in df {
            column_names.push(format!("{DESC_TEXT}:{tok}"));
            idf.push(((1.0 + n_docs as f64) / (1.0 + f as f64)).ln() + 1.0);
            tokens.push(tok);
            doc_freq.push(f);
        }
        TextVocabulary {
            group: DESC_TEXT.to_string(),
            offset,
            n_docs,
            tokens,
            doc_freq,
            idf,
        }
    });

    let mut numeric: Vec<NumericColumn> = Vec::new();
    for name in NUMERIC_GROUPS {
        if scope.is_selected(name) {
            numeric.push(NumericColumn {
                name: name.to_string(),
                column: column_names.len(),
                min: 0.0,
                max: 0.0,
            });
            column_names.push(name.to_string());
        }
    }

    let tag_columns = scope.is_selected(TAGS).then(|| {
        let tags = tag_vocabulary(d);
        let offset = column_names.len();
        column_names.extend(tags.iter().map(|t| format!("{TAGS}:{t}")));
        TagColumns { offset, tags }
    });

    let raw: Vec<Vec<f64>> = d
        .tests
        .iter()
        .map(|t| raw_numeric_values(&numeric, t, d, scope, target_index))
        .collect();
    for (j, col) in numeric.iter_mut().enumerate() {
        let mut values = raw.iter().map(|r| r[j]);
        if let Some(first) = values.next() {
            let (min, max) = values.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
            col.min = min;
            col.max = max;
        }
    }

    let dim = column_names.len();
    let rows = d
        .tests
        .iter()
        .zip(&raw)
        .map(|(t, r)| {
            assemble_row(
                dim,
                vocabulary.as_ref(),
                &numeric,
                r,
                tag_columns.as_ref(),
                t,
            )
        })
        .collect();

    Ok(FeatureMatrix {
        scope: scope.clone(),
        test_ids: d.tests.iter().map(|t| t.id.clone()).collect(),
        column_names,
        rows,
        vocabulary,
        numeric,
        tag_columns,
    })
}

/// Featurizes a test against the matrix's frozen vocabulary and scaling.
/// Unknown tokens are ignored and numeric cells are clamped into `[0, 1]`.
pub fn vectorize_unseen(
    matrix: &FeatureMatrix,
    t: &TestCase,
    d: &Dataset,
    scope: &FeatureScope,
) -> Result<SparseVec, FeatureError> {
    if &matrix.scope != scope {
        return Err(FeatureError::ScopeMismatch(
            "scope differs from the one the matrix was built with".into(),
        ));
    }
    let target_index = d
        .release_index(&scope.target_release)
        .ok_or_else(|| FeatureError::UnknownRelease(scope.target_release.clone()))?;
    let raw = raw_numeric_values(&matrix.numeric, t, d, scope, target_index);
    Ok(assemble_row(
        matrix.dim(),
        matrix.vocabulary.as_ref(),
        &matrix.numeric,
        &raw,
        matrix.tag_columns.as_ref(),
        t,
    ))
}
