//! Prompt rendering for the three classification prompt shapes and the
//! instruction-generation prompt.
//!
//! A [`RenderedPrompt`] is a list of sections. Its text is the section bodies
//! joined by a single newline, so every section is separated by one blank
//! line. Rendering is a pure function of its inputs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{Product, StructuredAttribute, Task};
use crate::error::{Error, IntegrityError, Result};
use crate::instruction::Instruction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Baseline,
    Cot,
    Apc,
    InstructionGen,
}

pub const INTRODUCTION: &str = "Introduction";
pub const PRODUCT_DATA: &str = "Product data";
pub const RULES: &str = "Rules";
pub const TEST_VALUE: &str = "Test value";
pub const INSTRUCTION: &str = "Instruction";
pub const OUTPUT_FORMAT: &str = "Output format";
pub const EXAMPLES: &str = "Examples";
pub const TARGET: &str = "Target";

impl TemplateKind {
    /// Section headers in the order they are rendered.
    pub fn section_order(self) -> &'static [&'static str] {
        match self {
            TemplateKind::Baseline => &[INTRODUCTION, PRODUCT_DATA, TEST_VALUE, OUTPUT_FORMAT],
            TemplateKind::Cot => &[INTRODUCTION, PRODUCT_DATA, RULES, TEST_VALUE, OUTPUT_FORMAT],
            TemplateKind::Apc => &[
                INTRODUCTION,
                PRODUCT_DATA,
                RULES,
                TEST_VALUE,
                INSTRUCTION,
                OUTPUT_FORMAT,
            ],
            TemplateKind::InstructionGen => &[INTRODUCTION, EXAMPLES, TARGET, OUTPUT_FORMAT],
        }
    }
}

/// Placeholder markers from the template skeletons; never present in output.
pub const PLACEHOLDER_MARKERS: &[&str] = &[
    "<Product data goes here.>",
    "<CoT rules go here.>",
    "<Output format>",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub header: String,
    /// Full section text including any visible header line; ends with `\n`.
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub kind: TemplateKind,
    pub text: String,
    pub sections: Vec<Section>,
}

impl RenderedPrompt {
    fn from_sections(kind: TemplateKind, sections: Vec<Section>) -> Self {
        let text = join_sections(&sections);
        Self { kind, text, sections }
    }

    pub fn section(&self, header: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.header == header)
    }

    pub fn headers(&self) -> Vec<&str> {
        self.sections.iter().map(|s| s.header.as_str()).collect()
    }

    /// Text of the prompt with the named sections removed.
    pub fn text_without(&self, headers: &[&str]) -> String {
        let kept: Vec<Section> = self
            .sections
            .iter()
            .filter(|s| !headers.contains(&s.header.as_str()))
            .cloned()
            .collect();
        join_sections(&kept)
    }
}

impl fmt::Display for RenderedPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

fn join_sections(sections: &[Section]) -> String {
    sections
        .iter()
        .map(|s| s.body.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

fn section(header: &str, body: String) -> Section {
    Section {
        header: header.to_string(),
        body,
    }
}

fn headed(header: &str, lines: &str) -> Section {
    section(header, format!("### {header}:\n{lines}"))
}

/// Ordered rule sentences for one group of attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotRuleSet {
    pub sa_group: String,
    pub rules: Vec<String>,
}

impl Default for CotRuleSet {
    fn default() -> Self {
        Self {
            sa_group: "default".into(),
            rules: [
                "Read the title, description, bullet points and structured attributes of the product.",
                "Identify every statement in the product data that refers to the attribute under test.",
                "Compare the test value with each of those statements, allowing for synonyms, abbreviations and unit conversions.",
                "Decide whether any statement clearly contradicts the test value. Missing information is not a contradiction.",
                "Explain your reasoning before giving the prediction.",
            ]
            .iter()
            .map(|r| r.to_string())
            .collect(),
        }
    }
}

/// Rule sets per attribute group, with a fallback for unassigned attributes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleBook {
    #[serde(default)]
    pub default: CotRuleSet,
    /// group name -> rules
    #[serde(default)]
    pub groups: BTreeMap<String, Vec<String>>,
    /// sa_id -> group name
    #[serde(default)]
    pub assignments: BTreeMap<String, String>,
}

impl RuleBook {
    pub fn rules_for(&self, sa_id: &str) -> CotRuleSet {
        self.assignments
            .get(sa_id)
            .and_then(|group| {
                self.groups.get(group).map(|rules| CotRuleSet {
                    sa_group: group.clone(),
                    rules: rules.clone(),
                })
            })
            .unwrap_or_else(|| self.default.clone())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("rule book: {e}")))
    }
}

fn product_block(product: &Product, tested_sa: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("Title: {}\n", product.title.trim()));
    out.push_str(&format!("Description: {}\n", product.description.trim()));
    let bullets: Vec<&str> = product
        .bullets
        .iter()
        .map(|b| b.trim())
        .filter(|b| !b.is_empty())
        .collect();
    if bullets.is_empty() {
        out.push_str("Bullets: (none)\n");
    } else {
        out.push_str("Bullets:\n");
        for b in bullets {
            out.push_str(&format!("- {b}\n"));
        }
    }
    let attributes: Vec<(&String, &String)> = product
        .sa_values
        .iter()
        .filter(|(id, _)| id.as_str() != tested_sa)
        .collect();
    if attributes.is_empty() {
        out.push_str("Structured attributes: (none)\n");
    } else {
        out.push_str("Structured attributes:\n");
        for (id, value) in attributes {
            out.push_str(&format!("- {id}: {}\n", value.trim()));
        }
    }
    out
}

fn output_format_lines(task: Task) -> String {
    let [pos, neg] = task.labels();
    format!(
        "Output the results in the following output format.\n\
         reasoning: <your step-by-step reasoning>\n\
         prediction: <'{pos}' or '{neg}'>\n"
    )
}

fn auditor_preamble(sa_name: &str) -> String {
    format!(
        "You are an auditor for an e-commerce store. You are given a product and its data below. \
         You will also be given a test value for '{sa_name}'."
    )
}

fn check_test_value(test_value: &str) -> Result<&str> {
    let value = test_value.trim();
    if value.is_empty() {
        return Err(Error::Argument("test value is empty".into()));
    }
    Ok(value)
}

/// Plain auditor prompt: no rules, no instruction.
pub fn render_baseline(
    product: &Product,
    sa: &StructuredAttribute,
    test_value: &str,
    task: Task,
) -> Result<RenderedPrompt> {
    let value = check_test_value(test_value)?;
    let name = sa.display_name();
    let [pos, neg] = task.labels();
    let sections = vec![
        section(INTRODUCTION, format!("{}\n", auditor_preamble(name))),
        section(PRODUCT_DATA, product_block(product, &sa.id)),
        section(
            TEST_VALUE,
            format!(
                "The test value for '{name}' is '{value}'.\n\
                 Based on the given product data, you have to say if the test value is '{pos}' or '{neg}'. \
                 If the product data does not contradict the given value, your prediction should be '{pos}'.\n"
            ),
        ),
        section(OUTPUT_FORMAT, output_format_lines(task)),
    ];
    Ok(RenderedPrompt::from_sections(TemplateKind::Baseline, sections))
}

fn cot_sections(
    product: &Product,
    sa: &StructuredAttribute,
    test_value: &str,
    task: Task,
    rules: &CotRuleSet,
) -> Result<Vec<Section>> {
    let value = check_test_value(test_value)?;
    let rules: Vec<&str> = rules
        .rules
        .iter()
        .map(|r| r.trim())
        .filter(|r| !r.is_empty())
        .collect();
    if rules.is_empty() {
        return Err(Error::Argument("rule set is empty".into()));
    }
    let name = sa.display_name();
    let [pos, neg] = task.labels();
    let numbered: String = rules
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{}. {r}\n", i + 1))
        .collect();
    Ok(vec![
        headed(
            INTRODUCTION,
            &format!(
                "{}\nPlease classify the value as '{pos}' or '{neg}' based on the rules given below.\n",
                auditor_preamble(name)
            ),
        ),
        headed(
            PRODUCT_DATA,
            &format!("Given below is the product data.\n{}", product_block(product, &sa.id)),
        ),
        headed(
            RULES,
            &format!(
                "To ensure accurate predictions, adhere to the following rules in sequence \
                 and think systematically before responding:\n{numbered}"
            ),
        ),
        headed(
            TEST_VALUE,
            &format!("Now verify the test value of the attribute '{name}': '{value}'.\n"),
        ),
        headed(OUTPUT_FORMAT, &output_format_lines(task)),
    ])
}

/// Sectioned chain-of-thought prompt.
pub fn render_cot(
    product: &Product,
    sa: &StructuredAttribute,
    test_value: &str,
    task: Task,
    rules: &CotRuleSet,
) -> Result<RenderedPrompt> {
    let sections = cot_sections(product, sa, test_value, task, rules)?;
    Ok(RenderedPrompt::from_sections(TemplateKind::Cot, sections))
}

/// The chain-of-thought prompt with one extra Instruction section placed
/// between the test value and the output format.
pub fn render_apc(
    product: &Product,
    sa: &StructuredAttribute,
    test_value: &str,
    task: Task,
    rules: &CotRuleSet,
    instruction: &Instruction,
) -> Result<RenderedPrompt> {
    if instruction.pc_id != product.pc_id || instruction.sa_id != sa.id {
        return Err(IntegrityError::PairMismatch {
            instruction_pc: instruction.pc_id.clone(),
            instruction_sa: instruction.sa_id.clone(),
            pc: product.pc_id.clone(),
            sa: sa.id.clone(),
        }
        .into());
    }
    let text = instruction.text.trim();
    if text.is_empty() {
        return Err(Error::Argument("instruction text is empty".into()));
    }
    let name = sa.display_name();
    let mut sections = cot_sections(product, sa, test_value, task, rules)?;
    let at = sections.len() - 1;
    sections.insert(
        at,
        headed(
            INSTRUCTION,
            &format!(
                "Go through the instruction to understand what '{name}' means in context of this product.\n\
                 Here is some additional information about '{name}' to help you make highly accurate classifications.\n\
                 In your reasoning, explain how you applied this information to reach your conclusion.\n\
                 \n\
                 {text}\n"
            ),
        ),
    );
    Ok(RenderedPrompt::from_sections(TemplateKind::Apc, sections))
}

/// One few-shot example for the instruction-generation prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewshotExample {
    pub pc_definition: String,
    pub sa_definition: String,
    pub instruction: String,
}

/// The meta-prompt asking a model for a new PC-SA instruction given
/// definitions and example instructions. Examples appear in input order.
pub fn render_instruction_prompt(
    pc_definition: &str,
    sa_definition: &str,
    fewshots: &[FewshotExample],
    max_fewshots: usize,
) -> Result<RenderedPrompt> {
    if fewshots.is_empty() {
        return Err(Error::Argument("at least one few-shot example is required".into()));
    }
    if fewshots.len() > max_fewshots {
        return Err(Error::Argument(format!(
            "{} few-shot examples exceed the configured maximum of {max_fewshots}",
            fewshots.len()
        )));
    }
    let examples = fewshots
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            format!(
                "Example {}:\nProduct category definition: {}\nAttribute definition: {}\ninstruction: {}\n",
                i + 1,
                ex.pc_definition.trim(),
                ex.sa_definition.trim(),
                ex.instruction.trim()
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let sections = vec![
        headed(
            INTRODUCTION,
            "You write instructions for auditors who check attribute values in an e-commerce catalog. \
             An instruction explains what an attribute means for one product category. \
             It defines the scope of the attribute, tells the auditor how to handle edge cases and ambiguity, \
             and states constraints of the store that may differ from general knowledge.\n\
             Study the examples below, then write an instruction for the target product category and attribute.\n",
        ),
        headed(EXAMPLES, &examples),
        headed(
            TARGET,
            &format!(
                "Product category definition: {}\nAttribute definition: {}\n",
                pc_definition.trim(),
                sa_definition.trim()
            ),
        ),
        headed(
            OUTPUT_FORMAT,
            "Write an instruction of 1 to 3 sentences for the target product category and attribute. \
             Output it in the following output format.\n\
             instruction: <your instruction>\n",
        ),
    ];
    Ok(RenderedPrompt::from_sections(TemplateKind::InstructionGen, sections))
}

/// Rough token count: whitespace-separated words times 1.3, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    let words = text.split_whitespace().count() as u64;
    (words * 13).div_ceil(10)
}
