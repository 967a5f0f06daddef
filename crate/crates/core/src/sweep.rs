//! Two-phase (T, M) sweep on a labeled tuning set.
//!
//! Phase one varies T at the default M. Phase two varies M at the best T.
//! `T = 0` means chain-of-thought prompting without instructions. Cells are
//! ranked by negative-class F1; ties go to the smaller T, then the smaller M.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cascade::{run_cascade, CascadeConfig, DEFAULT_FEWSHOTS};
use crate::catalog::{Catalog, LabeledCase, PairKey, Task};
use crate::classifier::{Classifier, PromptMode};
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::instruction::{Instruction, SeedSet};
use crate::metrics::evaluate;
use crate::templates::RuleBook;

pub const SELECTION_RULE: &str = "max negative-class F1, ties to smaller T then smaller M";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub t_values: Vec<u32>,
    pub m_values: Vec<usize>,
    /// M used while sweeping T.
    pub default_m: usize,
    pub rng_seed: u64,
    pub generator_model: String,
    pub classifier_model: String,
    pub task: Task,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            t_values: (0..=6).collect(),
            m_values: vec![2, 4, 6, 8],
            default_m: DEFAULT_FEWSHOTS,
            rng_seed: 0,
            generator_model: "generator".into(),
            classifier_model: "classifier".into(),
            task: Task::Correctness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub iterations: u32,
    pub fewshots: usize,
    pub negative_f1: f64,
    pub accuracy: f64,
    pub instructions: usize,
    pub generation_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    pub chosen_t: u32,
    pub chosen_m: usize,
    pub selection_rule: String,
}

impl SweepReport {
    pub fn cell(&self, t: u32, m: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.iterations == t && c.fewshots == m)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("   T    M  neg-F1  accuracy  instructions\n");
        for c in &self.cells {
            let mark = if (c.iterations, c.fewshots) == (self.chosen_t, self.chosen_m) { " *" } else { "" };
            out.push_str(&format!(
                "{:>4} {:>4}  {:>6.4}  {:>8.4}  {:>12}{mark}\n",
                c.iterations, c.fewshots, c.negative_f1, c.accuracy, c.instructions
            ));
        }
        out
    }
}

/// Runs cascades and classifications over one tuning catalog.
pub struct Sweeper<'a> {
    pub catalog: &'a Catalog,
    pub seed_pool: &'a [Instruction],
    pub gateway: &'a Gateway,
    pub rules: &'a RuleBook,
}

fn better(a: &SweepCell, b: &SweepCell) -> bool {
    a.negative_f1 > b.negative_f1
        || (a.negative_f1 == b.negative_f1 && (a.iterations, a.fewshots) < (b.iterations, b.fewshots))
}

impl Sweeper<'_> {
    fn cases(&self, task: Task) -> Vec<LabeledCase> {
        self.catalog.cases().iter().filter(|c| c.task == task).cloned().collect()
    }

    fn run_cell(&self, spec: &SweepSpec, cases: &[LabeledCase], t: u32, m: usize) -> Result<SweepCell> {
        let classifier = Classifier::new(self.catalog, self.gateway, self.rules, &spec.classifier_model);
        let (preds, instructions, generation_failures) = if t == 0 {
            (classifier.run_task(cases, PromptMode::Cot, None)?, 0, 0)
        } else {
            let seeds = SeedSet::first(self.seed_pool, m)?;
            let targets: Vec<PairKey> = cases
                .iter()
                .filter_map(|c| self.catalog.case_pair(c))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let config = CascadeConfig {
                iterations: t,
                fewshots: m,
                rng_seed: spec.rng_seed,
                model_id: spec.generator_model.clone(),
            };
            let outcome = run_cascade(self.catalog, &seeds, &config, &targets, self.gateway, None)?;
            let preds = classifier.run_task(cases, PromptMode::Apc, Some(&outcome.instructions))?;
            (preds, outcome.instructions.len(), outcome.failures.len())
        };
        let report = evaluate(&preds, self.catalog, Some(spec.task))?;
        log::info!("sweep T={t} M={m}: negative F1 {:.4}", report.negative().metrics.f1);
        Ok(SweepCell {
            iterations: t,
            fewshots: m,
            negative_f1: report.negative().metrics.f1,
            accuracy: report.accuracy,
            instructions,
            generation_failures,
        })
    }

    pub fn run(&self, spec: &SweepSpec) -> Result<SweepReport> {
        let t_values: BTreeSet<u32> = spec.t_values.iter().copied().collect();
        let m_values: BTreeSet<usize> = spec.m_values.iter().copied().collect();
        if t_values.is_empty() || m_values.is_empty() {
            return Err(Error::Argument("sweep ranges for T and M must be non-empty".into()));
        }
        if m_values.contains(&0) || spec.default_m == 0 {
            return Err(Error::Argument("M must be at least 1".into()));
        }
        let cases = self.cases(spec.task);
        if cases.is_empty() {
            return Err(Error::Argument(format!("tuning set has no {} cases", spec.task)));
        }
        let default_m = if m_values.contains(&spec.default_m) {
            spec.default_m
        } else {
            *m_values.iter().next_back().expect("non-empty")
        };

        let mut cells: BTreeMap<(u32, usize), SweepCell> = BTreeMap::new();
        for &t in &t_values {
            let cell = self.run_cell(spec, &cases, t, default_m)?;
            cells.insert((t, default_m), cell);
        }
        let best_t = cells
            .values()
            .fold(None::<&SweepCell>, |best, c| match best {
                Some(b) if !better(c, b) => Some(b),
                _ => Some(c),
            })
            .expect("non-empty")
            .iterations;
        for &m in &m_values {
            if let Entry::Vacant(slot) = cells.entry((best_t, m)) {
                slot.insert(self.run_cell(spec, &cases, best_t, m)?);
            }
        }
        let chosen = cells
            .values()
            .fold(None::<&SweepCell>, |best, c| match best {
                Some(b) if !better(c, b) => Some(b),
                _ => Some(c),
            })
            .expect("non-empty");
        Ok(SweepReport {
            chosen_t: chosen.iterations,
            chosen_m: chosen.fewshots,
            cells: cells.into_values().collect(),
            selection_rule: SELECTION_RULE.into(),
        })
    }
}
