//! Binary scoring model trained on the test manager's in/out examples, and
//! the monotone ranked suite derived from it.
//!
//! The model is L2-regularized logistic regression trained by full-batch
//! gradient descent from zero weights. Whenever a step would increase the
//! loss it is rejected and the learning rate halved, so the loss trace is
//! non-increasing. Nothing in training is random: the same inputs give a
//! bit-identical model.

use crate::datamodel::Dataset;
use crate::features::{
    extract_features, vectorize_unseen, FeatureError, FeatureMatrix, FeatureScope, SparseVec,
};
use crate::verification;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use thiserror::Error;

/// Scores are clamped into `[SCORE_FLOOR, 1 - SCORE_FLOOR]`.
pub const SCORE_FLOOR: f64 = 1e-9;

/// Learning-curve saturation: the last increment gained less than this AUC.
pub const SATURATION_GAIN: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("unknown test id {0:?}")]
    UnknownTestId(String),
    #[error("test id {0:?} labeled more than once")]
    DuplicateTestId(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Features(#[from] FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    In,
    Out,
}

impl Label {
    pub fn target(self) -> f64 {
        match self {
            Label::In => 1.0,
            Label::Out => 0.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::In => "in",
            Label::Out => "out",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Training,
    Verification,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub test_id: String,
    pub label: Label,
    pub role: Role,
}

impl LabelEntry {
    pub fn new(test_id: impl Into<String>, label: Label, role: Role) -> Self {
        Self {
            test_id: test_id.into(),
            label,
            role,
        }
    }
}

/// Human in/out decisions. Training entries form T+ (in) and T- (out);
/// verification entries are the labeled verification samples.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    entries: Vec<LabelEntry>,
}

impl LabelSet {
    pub fn new(entries: Vec<LabelEntry>) -> Result<Self, RankError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.test_id.as_str()) {
                return Err(RankError::DuplicateTestId(e.test_id.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[LabelEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, test_id: &str) -> Option<&LabelEntry> {
        self.entries.iter().find(|e| e.test_id == test_id)
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &LabelEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }

    pub fn training(&self) -> impl Iterator<Item = &LabelEntry> {
        self.with_role(Role::Training)
    }

    pub fn verification(&self) -> impl Iterator<Item = &LabelEntry> {
        self.with_role(Role::Verification)
    }

    pub fn training_ids(&self) -> BTreeSet<String> {
        self.training().map(|e| e.test_id.clone()).collect()
    }

    /// Count of (in, out) entries with the given role.
    pub fn class_counts(&self, role: Role) -> (usize, usize) {
        self.with_role(role)
            .fold((0, 0), |(i, o), e| match e.label {
                Label::In => (i + 1, o),
                Label::Out => (i, o + 1),
            })
    }

    /// Appends a new entry; the test must not be labeled yet.
    pub fn push(&mut self, entry: LabelEntry) -> Result<(), RankError> {
        if self.get(&entry.test_id).is_some() {
            return Err(RankError::DuplicateTestId(entry.test_id));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Replaces the label and role of an existing entry in place.
    pub fn replace(&mut self, entry: LabelEntry) -> Result<LabelEntry, RankError> {
        let slot = self
            .entries
            .iter_mut()
            .find(|e| e.test_id == entry.test_id)
            .ok_or_else(|| RankError::UnknownTestId(entry.test_id.clone()))?;
        Ok(std::mem::replace(slot, entry))
    }

    pub fn check_against(&self, d: &Dataset) -> Result<(), RankError> {
        let ids: HashSet<&str> = d.tests.iter().map(|t| t.id.as_str()).collect();
        match self
            .entries
            .iter()
            .find(|e| !ids.contains(e.test_id.as_str()))
        {
            Some(e) => Err(RankError::UnknownTestId(e.test_id.clone())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub l2_lambda: f64,
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_epochs: 500,
            l2_lambda: 1e-3,
            tolerance: 1e-7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RankError> {
        let bad = |what: &str| Err(RankError::InvalidConfig(what.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            return bad("l2_lambda must be non-negative");
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub final_loss: f64,
    pub n_in: usize,
    pub n_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankModel {
    pub column_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub training_meta: TrainingMeta,
}

impl RankModel {
    pub fn logit(&self, v: &SparseVec) -> Result<f64, RankError> {
        if v.dim != self.weights.len() {
            return Err(RankError::DimensionMismatch {
                expected: self.weights.len(),
                actual: v.dim,
            });
        }
        Ok(v.dot(&self.weights) + self.bias)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub rank: usize,
    pub test_id: String,
    pub score: f64,
}

/// Tests ordered by non-increasing score; equal scores by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankedSuite {
    pub entries: Vec<RankedEntry>,
}

impl RankedSuite {
    /// Sorts `(test_id, score)` pairs into a suite and assigns 1-based ranks.
    pub fn from_scores(mut scored: Vec<(String, f64)>) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self {
            entries: scored
                .into_iter()
                .enumerate()
                .map(|(i, (test_id, score))| RankedEntry {
                    rank: i + 1,
                    test_id,
                    score,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.test_id.as_str())
    }

    pub fn at_rank(&self, rank: usize) -> Option<&RankedEntry> {
        rank.checked_sub(1).and_then(|i| self.entries.get(i))
    }

    pub fn by_id(&self) -> HashMap<&str, &RankedEntry> {
        self.entries
            .iter()
            .map(|e| (e.test_id.as_str(), e))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub bias_gradient: f64,
}

/// Numerically stable `ln(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Overflow-safe logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic cross-entropy plus `(l2_lambda / 2) * |w|^2`, with its
/// gradient. Labels are 1.0 for in and 0.0 for out.
pub fn loss_and_gradient(
    weights: &[f64],
    bias: f64,
    rows: &[SparseVec],
    labels: &[f64],
    l2_lambda: f64,
) -> Result<LossGradient, RankError> {
    if rows.len() != labels.len() {
        return Err(RankError::DimensionMismatch {
            expected: rows.len(),
            actual: labels.len(),
        });
    }
    if rows.is_empty() {
        return Err(RankError::DegenerateLabels("no training rows".into()));
    }
    if let Some(row) = rows.iter().find(|r| r.dim != weights.len()) {
        return Err(RankError::DimensionMismatch {
            expected: weights.len(),
            actual: row.dim,
        });
    }
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut gradient = vec![0.0; weights.len()];
    let mut bias_gradient = 0.0;
    for (row, &y) in rows.iter().zip(labels) {
        let z = row.dot(weights) + bias;
        loss += softplus(z) - y * z;
        let residual = sigmoid(z) - y;
        bias_gradient += residual;
        for (i, x) in row.iter() {
            gradient[i] += residual * x;
        }
    }
    let norm2: f64 = weights.iter().map(|w| w * w).sum();
    loss = loss / n + 0.5 * l2_lambda * norm2;
    for (g, w) in gradient.iter_mut().zip(weights) {
        *g = *g / n + l2_lambda * w;
    }
    Ok(LossGradient {
        loss,
        gradient,
        bias_gradient: bias_gradient / n,
    })
}

/// Model plus the accepted loss after every epoch (index 0 is the loss at
/// the zero start).
#[derive(Debug, Clone)]
pub struct TrainingTrace {
    pub model: RankModel,
    pub losses: Vec<f64>,
}

fn training_rows<'a>(
    matrix: &'a FeatureMatrix,
    entries: impl Iterator<Item = &'a LabelEntry>,
) -> Result<(Vec<SparseVec>, Vec<f64>), RankError> {
    let index = matrix.row_index();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for e in entries {
        let i = *index
            .get(e.test_id.as_str())
            .ok_or_else(|| RankError::UnknownTestId(e.test_id.clone()))?;
        rows.push(matrix.rows[i].clone());
        targets.push(e.label.target());
    }
    Ok((rows, targets))
}

pub fn train(
    matrix: &FeatureMatrix,
    labels: &LabelSet,
    cfg: &TrainConfig,
) -> Result<RankModel, RankError> {
    train_traced(matrix, labels, cfg).map(|t| t.model)
}

pub fn train_traced(
    matrix: &FeatureMatrix,
    labels: &LabelSet,
    cfg: &TrainConfig,
) -> Result<TrainingTrace, RankError> {
    cfg.validate()?;
    let (n_in, n_out) = labels.class_counts(Role::Training);
    if n_in == 0 || n_out == 0 {
        return Err(RankError::DegenerateLabels(format!(
            "training needs both classes (in: {n_in}, out: {n_out})"
        )));
    }
    let (rows, targets) = training_rows(matrix, labels.training())?;
    fit(
        matrix.column_names.clone(),
        &rows,
        &targets,
        cfg,
        n_in,
        n_out,
    )
}

fn fit(
    column_names: Vec<String>,
    rows: &[SparseVec],
    targets: &[f64],
    cfg: &TrainConfig,
    n_in: usize,
    n_out: usize,
) -> Result<TrainingTrace, RankError> {
    let dim = column_names.len();
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut lr = cfg.learning_rate;
    let mut current = loss_and_gradient(&weights, bias, rows, targets, cfg.l2_lambda)?;
    let mut losses = vec![current.loss];
    let mut epochs_run = 0;

    while epochs_run < cfg.max_epochs {
        epochs_run += 1;
        let candidate_w: Vec<f64> = weights
            .iter()
            .zip(&current.gradient)
            .map(|(w, g)| w - lr * g)
            .collect();
        let candidate_b = bias - lr * current.bias_gradient;
        let next = loss_and_gradient(&candidate_w, candidate_b, rows, targets, cfg.l2_lambda)?;
        if next.loss > current.loss || !next.loss.is_finite() {
            // rejected step: keep the weights, retry with half the rate
            lr *= 0.5;
            losses.push(current.loss);
            continue;
        }
        let decrease = current.loss - next.loss;
        weights = candidate_w;
        bias = candidate_b;
        current = next;
        losses.push(current.loss);
        if decrease < cfg.tolerance {
            break;
        }
    }

    Ok(TrainingTrace {
        model: RankModel {
            column_names,
            weights,
            bias,
            training_meta: TrainingMeta {
                epochs_run,
                final_loss: current.loss,
                n_in,
                n_out,
            },
        },
        losses,
    })
}

/// `sigmoid(w . v + b)`, clamped into the open unit interval.
pub fn score(model: &RankModel, v: &SparseVec) -> Result<f64, RankError> {
    Ok(clamp_score(sigmoid(model.logit(v)?)))
}

fn clamp_score(p: f64) -> f64 {
    p.clamp(SCORE_FLOOR, 1.0 - SCORE_FLOOR)
}

/// Scores as stored in a ranked suite: nine decimal digits.
pub fn suite_score(p: f64) -> f64 {
    clamp_score((p * 1e9).round() / 1e9)
}

/// Ranks every dataset test that is not in `training_ids`.
pub fn rank(
    model: &RankModel,
    d: &Dataset,
    scope: &FeatureScope,
    training_ids: &BTreeSet<String>,
) -> Result<RankedSuite, RankError> {
    let matrix = extract_features(d, scope)?;
    rank_with_matrix(model, &matrix, d, training_ids)
}

pub fn rank_with_matrix(
    model: &RankModel,
    matrix: &FeatureMatrix,
    d: &Dataset,
    training_ids: &BTreeSet<String>,
) -> Result<RankedSuite, RankError> {
    if matrix.column_names != model.column_names {
        return Err(FeatureError::ScopeMismatch(
            "model columns differ from the feature matrix columns".into(),
        )
        .into());
    }
    let mut scored = Vec::new();
    for t in d.tests.iter().filter(|t| !training_ids.contains(&t.id)) {
        let v = vectorize_unseen(matrix, t, d, &matrix.scope)?;
        scored.push((t.id.clone(), suite_score(score(model, &v)?)));
    }
    Ok(RankedSuite::from_scores(scored))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub n_in: usize,
    pub n_out: usize,
    pub pair_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
    pub saturated: bool,
}

pub const DEFAULT_FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Trains on growing prefixes of each training class (in label-set order)
/// and scores the verification labels with pair-AUC after each.
pub fn learning_curve(
    matrix: &FeatureMatrix,
    labels: &LabelSet,
    cfg: &TrainConfig,
    fractions: &[f64],
) -> Result<LearningCurve, RankError> {
    if fractions.is_empty() {
        return Err(RankError::InvalidConfig("no fractions given".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(RankError::InvalidConfig(format!(
            "fraction {f} outside (0, 1]"
        )));
    }
    let ins: Vec<&LabelEntry> = labels.training().filter(|e| e.label == Label::In).collect();
    let outs: Vec<&LabelEntry> = labels
        .training()
        .filter(|e| e.label == Label::Out)
        .collect();
    if ins.len() < 4 || outs.len() < 4 {
        return Err(RankError::DegenerateLabels(format!(
            "learning curve needs at least 4 training labels per class (in: {}, out: {})",
            ins.len(),
            outs.len()
        )));
    }
    let (v_in, v_out) = labels.class_counts(Role::Verification);
    if v_in == 0 || v_out == 0 {
        return Err(RankError::DegenerateLabels(format!(
            "verification needs both classes (in: {v_in}, out: {v_out})"
        )));
    }
    let (verify_rows, verify_targets) = training_rows(matrix, labels.verification())?;

    let mut points = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let take = |k: usize| ((fraction * k as f64 - 1e-9).ceil() as usize).clamp(1, k);
        let (k_in, k_out) = (take(ins.len()), take(outs.len()));
        let subset = ins[..k_in].iter().chain(&outs[..k_out]).copied();
        let (rows, targets) = training_rows(matrix, subset)?;
        let model = fit(
            matrix.column_names.clone(),
            &rows,
            &targets,
            cfg,
            k_in,
            k_out,
        )?
        .model;

        let mut in_scores = Vec::with_capacity(v_in);
        let mut out_scores = Vec::with_capacity(v_out);
        for (row, &y) in verify_rows.iter().zip(&verify_targets) {
            let s = suite_score(score(&model, row)?);
            if y > 0.5 {
                in_scores.push(s);
            } else {
                out_scores.push(s);
            }
        }
        let (overlapping, total) = verification::count_overlapping_pairs(&in_scores, &out_scores);
        points.push(CurvePoint {
            fraction,
            n_in: k_in,
            n_out: k_out,
            pair_auc: 1.0 - overlapping as f64 / total as f64,
        });
    }
    let saturated = match points.as_slice() {
        [.., prev, last] => last.pair_auc - prev.pair_auc < SATURATION_GAIN,
        _ => false,
    };
    Ok(LearningCurve { points, saturated })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix_from(ids: &[&str], dense: &[Vec<f64>]) -> FeatureMatrix {
        let dim = dense[0].len();
        FeatureMatrix {
            scope: FeatureScope::all("r1"),
            test_ids: ids.iter().map(|s| s.to_string()).collect(),
            column_names: (0..dim).map(|i| format!("f{i}")).collect(),
            rows: dense.iter().map(|r| SparseVec::from_dense(r)).collect(),
            vocabulary: None,
            numeric: vec![],
            tag_columns: None,
        }
    }

    fn labels(pairs: &[(&str, Label)]) -> LabelSet {
        LabelSet::new(
            pairs
                .iter()
                .map(|(id, l)| LabelEntry::new(*id, *l, Role::Training))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_start_balanced_bias_gradient_vanishes() {
        let rows = vec![
            SparseVec::from_dense(&[1.0, 2.0]),
            SparseVec::from_dense(&[0.5, -1.0]),
            SparseVec::from_dense(&[3.0, 0.0]),
            SparseVec::from_dense(&[0.0, 1.0]),
        ];
        let lg = loss_and_gradient(&[0.0, 0.0], 0.0, &rows, &[1.0, 0.0, 1.0, 0.0], 0.0).unwrap();
        assert_eq!(lg.bias_gradient, 0.0);
        assert!((lg.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_is_ln2_at_zero_for_any_data() {
        let rows = vec![
            SparseVec::from_dense(&[5.0]),
            SparseVec::from_dense(&[-2.0]),
        ];
        let lg = loss_and_gradient(&[0.0], 0.0, &rows, &[1.0, 1.0], 0.3).unwrap();
        assert!((lg.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_gradient_dimension_errors() {
        let rows = vec![SparseVec::from_dense(&[1.0, 2.0])];
        assert!(matches!(
            loss_and_gradient(&[0.0], 0.0, &rows, &[1.0], 0.0),
            Err(RankError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            loss_and_gradient(&[0.0, 0.0], 0.0, &rows, &[1.0, 0.0], 0.0),
            Err(RankError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn separable_pair_trains_positive_weight() {
        let m = matrix_from(&["a", "b"], &[vec![1.0], vec![-1.0]]);
        let model = train(
            &m,
            &labels(&[("a", Label::In), ("b", Label::Out)]),
            &TrainConfig::default(),
        )
        .unwrap();
        assert!(model.weights[0] > 0.0);
        assert!(score(&model, &m.rows[0]).unwrap() > 0.5);
        assert!(score(&model, &m.rows[1]).unwrap() < 0.5);
        assert_eq!(model.training_meta.n_in, 1);
        assert_eq!(model.training_meta.n_out, 1);
    }

    #[test]
    fn contradictory_pair_stays_near_half() {
        // feature 0: identical rows labeled in and out; feature 1 separates
        // an extra pair. With lambda = 0 the contradictory direction has its
        // optimum at zero weight.
        let m = matrix_from(
            &["dup_in", "dup_out", "c", "d"],
            &[
                vec![1.0, 0.0],
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, -1.0],
            ],
        );
        let l = labels(&[
            ("dup_in", Label::In),
            ("dup_out", Label::Out),
            ("c", Label::In),
            ("d", Label::Out),
        ]);
        let cfg = TrainConfig {
            l2_lambda: 0.0,
            max_epochs: 5000,
            ..TrainConfig::default()
        };
        let model = train(&m, &l, &cfg).unwrap();
        assert!(model.weights[0].abs() < 0.05, "w0 = {}", model.weights[0]);
        for row in &m.rows[..2] {
            let s = score(&model, row).unwrap();
            assert!((s - 0.5).abs() <= 0.05, "score {s}");
        }
        assert!(model.weights[1] > 0.0);
    }

    #[test]
    fn training_is_bit_identical() {
        let m = matrix_from(
            &["a", "b", "c"],
            &[vec![0.3, 0.1], vec![0.9, 0.0], vec![0.0, 0.7]],
        );
        let l = labels(&[("a", Label::In), ("b", Label::In), ("c", Label::Out)]);
        let one = train(&m, &l, &TrainConfig::default()).unwrap();
        let two = train(&m, &l, &TrainConfig::default()).unwrap();
        assert_eq!(one, two);
        assert_eq!(
            one.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>(),
            two.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn degenerate_and_unknown_labels() {
        let m = matrix_from(&["a", "b"], &[vec![1.0], vec![0.0]]);
        assert!(matches!(
            train(
                &m,
                &labels(&[("a", Label::In), ("b", Label::In)]),
                &TrainConfig::default()
            ),
            Err(RankError::DegenerateLabels(_))
        ));
        assert_eq!(
            train(
                &m,
                &labels(&[("a", Label::In), ("zz", Label::Out)]),
                &TrainConfig::default()
            ),
            Err(RankError::UnknownTestId("zz".into()))
        );
        // verification entries are ignored by training
        let mixed = LabelSet::new(vec![
            LabelEntry::new("a", Label::In, Role::Training),
            LabelEntry::new("b", Label::Out, Role::Verification),
        ])
        .unwrap();
        assert!(matches!(
            train(&m, &mixed, &TrainConfig::default()),
            Err(RankError::DegenerateLabels(_))
        ));
    }

    #[test]
    fn label_set_rejects_duplicates() {
        assert_eq!(
            LabelSet::new(vec![
                LabelEntry::new("a", Label::In, Role::Training),
                LabelEntry::new("a", Label::Out, Role::Verification),
            ]),
            Err(RankError::DuplicateTestId("a".into()))
        );
    }

    fn model_1d(w: f64, b: f64) -> RankModel {
        RankModel {
            column_names: vec!["f0".into()],
            weights: vec![w],
            bias: b,
            training_meta: TrainingMeta {
                epochs_run: 0,
                final_loss: 0.0,
                n_in: 0,
                n_out: 0,
            },
        }
    }

    #[test]
    fn score_examples() {
        let v = SparseVec::from_dense(&[0.37]);
        assert_eq!(score(&model_1d(0.0, 0.0), &v).unwrap(), 0.5);
        let ln3 = SparseVec::from_dense(&[3f64.ln()]);
        assert!((score(&model_1d(1.0, 0.0), &ln3).unwrap() - 0.75).abs() < 1e-15);
        let huge = SparseVec::from_dense(&[10_000.0]);
        assert_eq!(score(&model_1d(1.0, 0.0), &huge).unwrap(), 1.0 - 1e-9);
        assert_eq!(score(&model_1d(-1.0, 0.0), &huge).unwrap(), 1e-9);
        assert!(matches!(
            score(&model_1d(1.0, 0.0), &SparseVec::zeros(2)),
            Err(RankError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn equal_scores_rank_by_id() {
        let suite = RankedSuite::from_scores(vec![
            ("T9".into(), 0.4),
            ("T2".into(), 0.7),
            ("T1".into(), 0.7),
        ]);
        let ids: Vec<_> = suite.ids().collect();
        assert_eq!(ids, vec!["T1", "T2", "T9"]);
        assert_eq!(suite.at_rank(3).unwrap().test_id, "T9");
        assert!(suite.at_rank(0).is_none());
    }

    #[test]
    fn learning_curve_single_fraction() {
        let m = matrix_from(
            &["a", "b", "c", "d", "e", "f", "g", "h", "v1", "v2"],
            &[
                vec![1.0],
                vec![0.9],
                vec![0.8],
                vec![0.7],
                vec![0.1],
                vec![0.2],
                vec![0.0],
                vec![0.3],
                vec![0.95],
                vec![0.05],
            ],
        );
        let mut entries: Vec<LabelEntry> = ["a", "b", "c", "d"]
            .iter()
            .map(|id| LabelEntry::new(*id, Label::In, Role::Training))
            .collect();
        entries.extend(
            ["e", "f", "g", "h"]
                .iter()
                .map(|id| LabelEntry::new(*id, Label::Out, Role::Training)),
        );
        entries.push(LabelEntry::new("v1", Label::In, Role::Verification));
        entries.push(LabelEntry::new("v2", Label::Out, Role::Verification));
        let l = LabelSet::new(entries).unwrap();
        let curve = learning_curve(&m, &l, &TrainConfig::default(), &[1.0]).unwrap();
        assert_eq!(curve.points.len(), 1);
        assert_eq!(curve.points[0].pair_auc, 1.0);
        assert_eq!(curve.points[0].n_in, 4);
        assert!(!curve.saturated);

        let curve = learning_curve(&m, &l, &TrainConfig::default(), &[0.25, 1.0]).unwrap();
        assert_eq!(curve.points[0].n_in, 1);
        assert!(curve.saturated);
    }

    #[test]
    fn learning_curve_requires_four_per_class() {
        let m = matrix_from(&["a", "b"], &[vec![1.0], vec![0.0]]);
        let l = labels(&[("a", Label::In), ("b", Label::Out)]);
        assert!(matches!(
            learning_curve(&m, &l, &TrainConfig::default(), &DEFAULT_FRACTIONS),
            Err(RankError::DegenerateLabels(_))
        ));
    }
}
