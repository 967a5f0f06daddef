//! Training-free instruction cascade for product attribute quality checks.
//!
//! A handful of human-written instructions for (product category, attribute)
//! pairs are expanded by an LLM into instructions for every target pair.
//! The instructions are injected into a chain-of-thought classification
//! prompt that judges whether an attribute value is correct (or applicable)
//! for a product. Evaluation and a paired bootstrap test compare methods.
//!
//! ```no_run
//! use prompt_cascade::prelude::*;
//!
//! # fn main() -> prompt_cascade::Result<()> {
//! let catalog = load_catalog("catalog.jsonl")?;
//! let seeds = SeedSet::first(&load_seed_file("seeds.jsonl")?, 6)?;
//! let gateway = Gateway::new(MockBackend::fixed("instruction: Check the label."));
//! let outcome = run_cascade(
//!     &catalog,
//!     &seeds,
//!     &CascadeConfig::default(),
//!     &target_pairs(&catalog),
//!     &gateway,
//!     None,
//! )?;
//! println!("{} instructions", outcome.instructions.len());
//! # Ok(())
//! # }
//! ```

pub mod cascade;
pub mod catalog;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod error;
pub mod gateway;
pub mod instruction;
pub mod metrics;
pub mod store;
pub mod sweep;
pub mod templates;

pub use error::{Error, IntegrityError, Result};

pub mod prelude {
    pub use crate::cascade::{run_cascade, select_fewshot, CascadeConfig, CascadeOutcome, InstructionSet};
    pub use crate::catalog::{
        load_catalog, target_pairs, validate_catalog, Catalog, Decision, Gold, LabeledCase, PairKey, Product,
        ProductCategory, StructuredAttribute, Task, ValueKind,
    };
    pub use crate::classifier::{parse_decision, Classifier, ParsePolicy, ParseStatus, PredictionSet, PromptMode};
    pub use crate::error::{Error, Result};
    pub use crate::gateway::{
        estimate_cost, Gateway, HttpBackend, HttpConfig, LlmRequest, MockBackend, MockRule, MockScript, PriceTable,
        Purpose, ReplayCache,
    };
    pub use crate::instruction::{load_seed_file, Instruction, SeedSet};
    pub use crate::metrics::{
        class_metrics, confusion_matrix, evaluate, paired_bootstrap, BootstrapConfig, ConfusionMatrix,
    };
    pub use crate::store::InstructionStore;
    pub use crate::templates::{render_apc, render_baseline, render_cot, RuleBook};
}
