//! Attribute quality classification: render a prompt for a labeled case,
//! call the model, and read back the decision and rationale.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::InstructionSet;
use crate::catalog::{Catalog, Decision, LabeledCase, Task};
use crate::error::{Error, IntegrityError, Result};
use crate::gateway::{Gateway, LlmRequest, Purpose, Usage};
use crate::instruction::Instruction;
use crate::templates::{render_apc, render_baseline, render_cot, RenderedPrompt, RuleBook};

const FORMAT_REMINDER: &str = "\nAnswer strictly in the output format: one line starting with \
`reasoning:` followed by one line starting with `prediction:`.\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Baseline,
    Cot,
    Apc,
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::Baseline => "baseline",
            PromptMode::Cot => "cot",
            PromptMode::Apc => "apc",
        })
    }
}

impl std::str::FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(PromptMode::Baseline),
            "cot" => Ok(PromptMode::Cot),
            "apc" => Ok(PromptMode::Apc),
            other => Err(Error::Argument(format!("unknown prompt mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    /// Output never parsed; the positive class was assumed.
    Defaulted,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsePolicy {
    #[default]
    DefaultPositive,
    HardFail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub case_id: String,
    pub task: Task,
    pub decision: Decision,
    pub rationale: String,
    pub raw: String,
    pub usage: Usage,
    pub mode: PromptMode,
    pub model_id: String,
    pub parse_status: ParseStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionMeta {
    pub model_id: String,
    pub mode: PromptMode,
    pub task: Option<Task>,
    pub instruction_set_id: Option<String>,
}

/// One result per case, sorted by case id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionSet {
    pub meta: PredictionMeta,
    pub results: Vec<ClassificationResult>,
}

impl PredictionSet {
    pub fn defaulted(&self) -> usize {
        self.results
            .iter()
            .filter(|r| r.parse_status == ParseStatus::Defaulted)
            .count()
    }

    pub fn usage(&self) -> Usage {
        self.results.iter().fold(Usage::default(), |acc, r| acc + r.usage)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.results {
            out.push_str(&serde_json::to_string(r).map_err(|e| Error::json("prediction", e))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn meta_path(path: &Path) -> PathBuf {
        path.with_extension("meta.json")
    }

    /// Writes the JSONL predictions and a `.meta.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        let meta = serde_json::to_vec_pretty(&self.meta).map_err(|e| Error::json("meta", e))?;
        let meta_path = Self::meta_path(path);
        fs::write(&meta_path, meta).map_err(|e| Error::io(format!("writing {}", meta_path.display()), e))
    }

    /// Reads predictions; metadata comes from the sidecar when present and is
    /// otherwise inferred from the records.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut results = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            results.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                location: crate::error::Location {
                    file: path.to_path_buf(),
                    line: i + 1,
                },
                message: e.to_string(),
            })?);
        }
        let meta = match fs::read(Self::meta_path(path)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| Error::json("meta", e))?,
            Err(_) => infer_meta(&results),
        };
        Ok(Self { meta, results })
    }
}

fn infer_meta(results: &[ClassificationResult]) -> PredictionMeta {
    let first = results.first();
    let task = first.map(|r| r.task).filter(|t| results.iter().all(|r| r.task == *t));
    PredictionMeta {
        model_id: first.map(|r| r.model_id.clone()).unwrap_or_default(),
        mode: first.map_or(PromptMode::Baseline, |r| r.mode),
        task,
        instruction_set_id: None,
    }
}

fn strip_tag<'a>(line: &'a str, tag: &str) -> Option<&'a str> {
    let cleaned = line.trim_start().trim_start_matches(['*', '#', '-', '>', ' ']);
    let head = cleaned.get(..tag.len())?;
    head.eq_ignore_ascii_case(tag)
        .then(|| cleaned[tag.len()..].trim_start_matches('*').trim_start())
}

fn fold_label(value: &str) -> String {
    value
        .chars()
        .filter(|c| !c.is_whitespace() && !matches!(c, '*' | '\'' | '"' | '`' | '.' | '<' | '>'))
        .flat_map(char::to_lowercase)
        .collect()
}

/// Reads the `reasoning:` and `prediction:` fields of a model reply.
///
/// Tags are matched case-insensitively at line start. The label is compared
/// against the task's two labels after folding case, whitespace and quotes.
/// A missing, unknown, or contradictory label is an error.
pub fn parse_decision(raw: &str, task: Task) -> Result<(Decision, String)> {
    let mut rationale: Option<Vec<&str>> = None;
    let mut in_reasoning = false;
    let mut labels = Vec::new();
    for line in raw.lines() {
        if let Some(value) = strip_tag(line, "prediction:") {
            labels.push(value);
            in_reasoning = false;
        } else if let Some(value) = strip_tag(line, "reasoning:") {
            rationale.get_or_insert_with(Vec::new).push(value);
            in_reasoning = true;
        } else if in_reasoning {
            if let Some(r) = rationale.as_mut() {
                r.push(line);
            }
        }
    }
    let Some(first) = labels.first() else {
        return Err(Error::OutputParse("no `prediction:` field".into()));
    };
    let resolve = |value: &str| {
        let folded = fold_label(value);
        task.labels()
            .into_iter()
            .find(|d| fold_label(d.label()) == folded)
            .ok_or_else(|| Error::OutputParse(format!("unrecognised label {value:?}")))
    };
    let decision = resolve(first)?;
    for other in &labels[1..] {
        if resolve(other)? != decision {
            return Err(Error::OutputParse("conflicting `prediction:` fields".into()));
        }
    }
    let rationale = rationale.map(|r| r.join("\n")).unwrap_or_default();
    Ok((decision, rationale.trim().to_string()))
}

/// The canonical tagged reply for a decision.
pub fn render_tagged(decision: Decision, rationale: &str) -> String {
    format!("reasoning: {rationale}\nprediction: {}", decision.label())
}

/// Builds the prompt a case is classified with.
pub fn render_case_prompt(
    catalog: &Catalog,
    rules: &RuleBook,
    case: &LabeledCase,
    mode: PromptMode,
    instruction: Option<&Instruction>,
) -> Result<RenderedPrompt> {
    let product = catalog.product(&case.product_id).ok_or_else(|| {
        Error::from(IntegrityError::DanglingReference {
            from: format!("case `{}`", case.id),
            kind: "product",
            id: case.product_id.clone(),
            location: None,
        })
    })?;
    let sa = catalog.sa(&case.sa_id).ok_or_else(|| {
        Error::from(IntegrityError::DanglingReference {
            from: format!("case `{}`", case.id),
            kind: "sa",
            id: case.sa_id.clone(),
            location: None,
        })
    })?;
    match mode {
        PromptMode::Baseline => render_baseline(product, sa, &case.test_value, case.task),
        PromptMode::Cot => render_cot(product, sa, &case.test_value, case.task, &rules.rules_for(&sa.id)),
        PromptMode::Apc => {
            let instruction = instruction.ok_or_else(|| Error::MissingInstruction {
                pc_id: product.pc_id.clone(),
                sa_id: sa.id.clone(),
            })?;
            render_apc(
                product,
                sa,
                &case.test_value,
                case.task,
                &rules.rules_for(&sa.id),
                instruction,
            )
        }
    }
}

/// Classifies cases against one model through a gateway.
#[derive(Debug, Clone, Copy)]
pub struct Classifier<'a> {
    pub catalog: &'a Catalog,
    pub gateway: &'a Gateway,
    pub rules: &'a RuleBook,
    pub model_id: &'a str,
    pub policy: ParsePolicy,
}

impl<'a> Classifier<'a> {
    pub fn new(catalog: &'a Catalog, gateway: &'a Gateway, rules: &'a RuleBook, model_id: &'a str) -> Self {
        Self {
            catalog,
            gateway,
            rules,
            model_id,
            policy: ParsePolicy::default(),
        }
    }

    pub fn with_policy(mut self, policy: ParsePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn classify_one(
        &self,
        case: &LabeledCase,
        mode: PromptMode,
        instruction: Option<&Instruction>,
    ) -> Result<ClassificationResult> {
        let prompt = render_case_prompt(self.catalog, self.rules, case, mode, instruction)?;
        let mut usage = Usage::default();
        let mut raw = String::new();
        let mut parsed = None;
        for attempt in 0..2 {
            let text = if attempt == 0 {
                prompt.text.clone()
            } else {
                format!("{}{FORMAT_REMINDER}", prompt.text)
            };
            let response = self
                .gateway
                .complete(&LlmRequest::new(text, self.model_id, Purpose::Classification))?;
            usage = usage + response.usage;
            raw = response.text;
            match parse_decision(&raw, case.task) {
                Ok(result) => {
                    parsed = Some(result);
                    break;
                }
                Err(e) => log::debug!("case {}: {e}", case.id),
            }
        }
        let (decision, rationale, parse_status) = match parsed {
            Some((decision, rationale)) => (decision, rationale, ParseStatus::Ok),
            None => match self.policy {
                ParsePolicy::DefaultPositive => (case.task.positive(), String::new(), ParseStatus::Defaulted),
                ParsePolicy::HardFail => {
                    return Err(Error::OutputParse(format!(
                        "case {}: no parseable decision after a format reminder",
                        case.id
                    )))
                }
            },
        };
        Ok(ClassificationResult {
            case_id: case.id.clone(),
            task: case.task,
            decision,
            rationale,
            raw,
            usage,
            mode,
            model_id: self.model_id.to_string(),
            parse_status,
        })
    }

    /// Classifies every case. In APC mode the instruction set must cover
    /// every case's pair; gaps are reported before any model call.
    pub fn run_task(
        &self,
        cases: &[LabeledCase],
        mode: PromptMode,
        instructions: Option<&InstructionSet>,
    ) -> Result<PredictionSet> {
        let mut lookups: Vec<Option<&Instruction>> = Vec::with_capacity(cases.len());
        if mode == PromptMode::Apc {
            let set = instructions.ok_or_else(|| Error::Argument("APC mode needs an instruction set".into()))?;
            let mut missing = std::collections::BTreeSet::new();
            for case in cases {
                let pair = self.catalog.case_pair(case).ok_or_else(|| {
                    Error::from(IntegrityError::DanglingReference {
                        from: format!("case `{}`", case.id),
                        kind: "product",
                        id: case.product_id.clone(),
                        location: None,
                    })
                })?;
                let found = set.get(&pair);
                if found.is_none() {
                    missing.insert((pair.pc_id, pair.sa_id));
                }
                lookups.push(found);
            }
            if !missing.is_empty() {
                return Err(Error::Coverage(missing.into_iter().collect()));
            }
        } else {
            lookups.resize(cases.len(), None);
        }

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.gateway.max_in_flight())
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let mut results = pool.install(|| {
            cases
                .par_iter()
                .zip(lookups.par_iter())
                .map(|(case, instruction)| self.classify_one(case, mode, *instruction))
                .collect::<Result<Vec<_>>>()
        })?;
        results.sort_by(|a, b| a.case_id.cmp(&b.case_id));

        let first_task = cases.first().map(|c| c.task);
        let set = PredictionSet {
            meta: PredictionMeta {
                model_id: self.model_id.to_string(),
                mode,
                task: first_task.filter(|t| cases.iter().all(|c| c.task == *t)),
                instruction_set_id: match mode {
                    PromptMode::Apc => instructions.map(InstructionSet::fingerprint),
                    _ => None,
                },
            },
            results,
        };
        if set.defaulted() > 0 {
            log::warn!(
                "{} of {} outputs could not be parsed and were defaulted",
                set.defaulted(),
                set.results.len()
            );
        }
        Ok(set)
    }
}
