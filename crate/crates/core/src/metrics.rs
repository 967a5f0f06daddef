//! Per-class precision, recall and F1, accuracy reports, and a paired
//! class-balanced subsampling bootstrap for comparing two prediction sets.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Decision, Task};
use crate::classifier::{ClassificationResult, ParseStatus, PredictionMeta, PredictionSet};
use crate::error::{Error, IntegrityError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Adds one `(gold, predicted)` observation; `true` means the declared
    /// positive class.
    pub fn record(&mut self, gold: bool, predicted: bool) {
        match (gold, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut cm = Self::default();
        for (gold, predicted) in pairs {
            cm.record(gold, predicted);
        }
        cm
    }

    /// The same counts seen from the other class.
    pub fn flipped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => (self.tp + self.tn) as f64 / n as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// tp + fp == 0
    pub precision_undefined: bool,
    /// tp + fn == 0
    pub recall_undefined: bool,
    /// precision + recall == 0
    pub f1_undefined: bool,
}

pub fn class_metrics(cm: &ConfusionMatrix) -> ClassMetrics {
    let ratio = |num: u64, den: u64| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
    let (precision, precision_undefined) = ratio(cm.tp, cm.tp + cm.fp);
    let (recall, recall_undefined) = ratio(cm.tp, cm.tp + cm.fn_);
    let f1_undefined = precision + recall == 0.0;
    let f1 = if f1_undefined {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        precision_undefined,
        recall_undefined,
        f1_undefined,
    }
}

fn gold_for(catalog: &Catalog, result: &ClassificationResult) -> Result<Decision> {
    let case = catalog
        .case(&result.case_id)
        .ok_or_else(|| IntegrityError::MissingGold(result.case_id.clone()))?;
    if case.task != result.task {
        return Err(Error::Argument(format!(
            "prediction for `{}` is for the {} task but the case is {}",
            result.case_id, result.task, case.task
        )));
    }
    Ok(case.gold_decision())
}

/// Counts predictions against catalog gold labels relative to `positive`.
pub fn confusion_matrix(
    results: &[ClassificationResult],
    catalog: &Catalog,
    positive: Decision,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::default();
    for r in results {
        let gold = gold_for(catalog, r)?;
        cm.record(gold == positive, r.decision == positive);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMetrics {
    pub class: Decision,
    #[serde(flatten)]
    pub metrics: ClassMetrics,
    /// Gold cases of this class.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    /// Negative class first, then positive.
    pub classes: [LabeledMetrics; 2],
    pub accuracy: f64,
    pub total: u64,
    pub defaulted: usize,
    pub confusion: ConfusionMatrix,
    pub meta: PredictionMeta,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effort_minutes: Option<f64>,
}

impl EvalReport {
    pub fn negative(&self) -> &LabeledMetrics {
        &self.classes[0]
    }

    pub fn positive(&self) -> &LabeledMetrics {
        &self.classes[1]
    }

    /// Aligned plain-text table: method, then precision, recall and F1 for
    /// each class, then accuracy and effort.
    pub fn to_table(&self) -> String {
        render_table(std::slice::from_ref(self))
    }
}

pub fn render_table(reports: &[EvalReport]) -> String {
    let pct = |v: f64| format!("{:.2}", v * 100.0);
    let mut rows = vec![vec![
        "Model".to_string(),
        "Method".to_string(),
        "Class".to_string(),
        "Precision".to_string(),
        "Recall".to_string(),
        "F1 score".to_string(),
        "Support".to_string(),
        "Accuracy".to_string(),
        "Effort".to_string(),
    ]];
    for r in reports {
        for c in &r.classes {
            rows.push(vec![
                r.meta.model_id.clone(),
                r.meta.mode.to_string(),
                c.class.label().to_string(),
                pct(c.metrics.precision),
                pct(c.metrics.recall),
                pct(c.metrics.f1),
                c.support.to_string(),
                pct(r.accuracy),
                r.effort_minutes.map_or_else(|| "-".into(), |m| format!("{m}")),
            ]);
        }
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|i| rows.iter().map(|row| row[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| if i < 3 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

fn single_task(results: &[ClassificationResult], declared: Option<Task>) -> Result<Task> {
    let first = results
        .first()
        .ok_or_else(|| Error::Argument("prediction set is empty".into()))?
        .task;
    if results.iter().any(|r| r.task != first) {
        return Err(Error::Argument("prediction set mixes correctness and applicability".into()));
    }
    if let Some(task) = declared {
        if task != first {
            return Err(Error::Argument(format!(
                "predictions are for the {first} task, not {task}"
            )));
        }
    }
    Ok(first)
}

/// Scores a prediction set. `task`, when given, must match the predictions.
pub fn evaluate(preds: &PredictionSet, catalog: &Catalog, task: Option<Task>) -> Result<EvalReport> {
    let task = single_task(&preds.results, task)?;
    let positive_cm = confusion_matrix(&preds.results, catalog, task.positive())?;
    let negative_cm = positive_cm.flipped();
    let labeled = |class: Decision, cm: &ConfusionMatrix| LabeledMetrics {
        class,
        metrics: class_metrics(cm),
        support: cm.tp + cm.fn_,
    };
    Ok(EvalReport {
        task,
        classes: [
            labeled(task.negative(), &negative_cm),
            labeled(task.positive(), &positive_cm),
        ],
        accuracy: positive_cm.accuracy(),
        total: positive_cm.total(),
        defaulted: preds
            .results
            .iter()
            .filter(|r| r.parse_status == ParseStatus::Defaulted)
            .count(),
        confusion: positive_cm,
        meta: preds.meta.clone(),
        effort_minutes: None,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMetric {
    #[default]
    NegativeF1,
    PositiveF1,
    MacroF1,
}

impl std::str::FromStr for BootstrapMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "negative_f1" | "negative" => Ok(Self::NegativeF1),
            "positive_f1" | "positive" => Ok(Self::PositiveF1),
            "macro_f1" | "macro" => Ok(Self::MacroF1),
            other => Err(Error::Argument(format!("unknown bootstrap metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub draws: usize,
    pub fraction: f64,
    pub seed: u64,
    pub metric: BootstrapMetric,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            draws: 5000,
            fraction: 0.8,
            seed: 0,
            metric: BootstrapMetric::NegativeF1,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::Argument("bootstrap needs at least one draw".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Argument(format!(
                "bootstrap fraction must be in (0, 1], got {}",
                self.fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub mean_delta_f1: f64,
    pub p_value: f64,
    pub draws: usize,
    pub fraction: f64,
    pub seed: u64,
    pub metric: BootstrapMetric,
    /// Cases drawn per gold class on every draw, negative class first.
    pub draw_sizes: [usize; 2],
}

/// Number of cases drawn from a class of `n` cases.
pub fn draw_size(n: usize, fraction: f64) -> usize {
    // The epsilon keeps exact products such as 0.8 * 5 from rounding up.
    (((n as f64) * fraction - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// The rng for one bootstrap draw; independent of thread scheduling.
pub fn draw_rng(seed: u64, draw: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw as u64);
    rng
}

/// Indices drawn from each gold class on draw `draw`, negative class first.
pub fn draw_indices(class_sizes: [usize; 2], fraction: f64, seed: u64, draw: usize) -> [Vec<usize>; 2] {
    let mut rng = draw_rng(seed, draw);
    class_sizes.map(|n| index::sample(&mut rng, n, draw_size(n, fraction)).into_vec())
}

struct Aligned {
    /// Per gold class (negative first): (pred_a is negative, pred_b is negative).
    classes: [Vec<(bool, bool)>; 2],
}

fn align(a: &PredictionSet, b: &PredictionSet, catalog: &Catalog) -> Result<(Task, Aligned)> {
    let task = single_task(&a.results, None)?;
    let task_b = single_task(&b.results, None)?;
    if task != task_b {
        return Err(Error::Argument("the two prediction sets are for different tasks".into()));
    }
    let index_b: BTreeMap<&str, &ClassificationResult> =
        b.results.iter().map(|r| (r.case_id.as_str(), r)).collect();
    let index_a: BTreeMap<&str, &ClassificationResult> =
        a.results.iter().map(|r| (r.case_id.as_str(), r)).collect();
    if index_a.len() != a.results.len() || index_b.len() != b.results.len() {
        return Err(IntegrityError::CaseSetMismatch("duplicate case ids in predictions".into()).into());
    }
    if index_a.keys().ne(index_b.keys()) {
        let only_a = index_a.keys().filter(|k| !index_b.contains_key(*k)).count();
        let only_b = index_b.keys().filter(|k| !index_a.contains_key(*k)).count();
        return Err(IntegrityError::CaseSetMismatch(format!(
            "{only_a} case(s) only in the first set, {only_b} only in the second"
        ))
        .into());
    }
    let negative = task.negative();
    let mut classes: [Vec<(bool, bool)>; 2] = [Vec::new(), Vec::new()];
    // BTreeMap iteration gives sorted case ids, so draws do not depend on input order.
    for (id, ra) in &index_a {
        let rb = index_b[id];
        let gold = gold_for(catalog, ra)?;
        let slot = usize::from(gold != negative);
        classes[slot].push((ra.decision == negative, rb.decision == negative));
    }
    if classes.iter().any(Vec::is_empty) {
        return Err(Error::Argument(
            "bootstrap needs gold cases of both classes".into(),
        ));
    }
    Ok((task, Aligned { classes }))
}

fn score(metric: BootstrapMetric, negative_cm: &ConfusionMatrix) -> f64 {
    match metric {
        BootstrapMetric::NegativeF1 => class_metrics(negative_cm).f1,
        BootstrapMetric::PositiveF1 => class_metrics(&negative_cm.flipped()).f1,
        BootstrapMetric::MacroF1 => {
            (class_metrics(negative_cm).f1 + class_metrics(&negative_cm.flipped()).f1) / 2.0
        }
    }
}

/// Paired bootstrap of `F1(a) - F1(b)` over class-balanced subsamples drawn
/// without replacement. The p-value is `(#{delta <= 0} + 1) / (draws + 1)`.
pub fn paired_bootstrap(
    a: &PredictionSet,
    b: &PredictionSet,
    catalog: &Catalog,
    config: &BootstrapConfig,
) -> Result<BootstrapResult> {
    config.validate()?;
    let (_, aligned) = align(a, b, catalog)?;
    let sizes = [aligned.classes[0].len(), aligned.classes[1].len()];
    let deltas: Vec<f64> = (0..config.draws)
        .into_par_iter()
        .map(|draw| {
            let picks = draw_indices(sizes, config.fraction, config.seed, draw);
            let mut cm_a = ConfusionMatrix::default();
            let mut cm_b = ConfusionMatrix::default();
            for (class, picked) in picks.iter().enumerate() {
                let gold_negative = class == 0;
                for &i in picked {
                    let (pa, pb) = aligned.classes[class][i];
                    cm_a.record(gold_negative, pa);
                    cm_b.record(gold_negative, pb);
                }
            }
            score(config.metric, &cm_a) - score(config.metric, &cm_b)
        })
        .collect();
    let not_better = deltas.iter().filter(|d| **d <= 0.0).count();
    Ok(BootstrapResult {
        mean_delta_f1: deltas.iter().sum::<f64>() / deltas.len() as f64,
        p_value: (not_better + 1) as f64 / (config.draws + 1) as f64,
        draws: config.draws,
        fraction: config.fraction,
        seed: config.seed,
        metric: config.metric,
        draw_sizes: sizes.map(|n| draw_size(n, config.fraction)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionMatrix {
        ConfusionMatrix { tp, fp, fn_, tn }
    }

    #[test]
    fn hand_counted_matrix() {
        // gold [C,C,I,I], pred [C,I,I,I], positive = Incorrect
        let pairs = [(false, false), (false, true), (true, true), (true, true)];
        assert_eq!(ConfusionMatrix::from_pairs(pairs), cm(2, 1, 0, 1));
    }

    #[test]
    fn metric_examples() {
        let m = class_metrics(&cm(1, 0, 0, 0));
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = class_metrics(&cm(2, 1, 1, 0));
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        let m = class_metrics(&cm(0, 0, 0, 5));
        assert!(m.precision_undefined && m.recall_undefined && m.f1_undefined);
        assert_eq!(m.f1, 0.0);
    }

    #[test]
    fn draw_size_rounds_up() {
        assert_eq!(draw_size(100, 0.8), 80);
        assert_eq!(draw_size(5, 0.8), 4);
        assert_eq!(draw_size(7, 0.8), 6);
        assert_eq!(draw_size(1, 0.8), 1);
        assert_eq!(draw_size(1577, 0.8), 1262);
    }

    #[test]
    fn draws_are_distinct_and_reproducible() {
        let a = draw_indices([10, 30], 0.8, 7, 3);
        assert_eq!(a, draw_indices([10, 30], 0.8, 7, 3));
        assert_eq!(a[0].len(), 8);
        assert_eq!(a[1].len(), 24);
        let mut sorted = a[1].clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 24);
        assert_ne!(a, draw_indices([10, 30], 0.8, 7, 4));
    }
}
