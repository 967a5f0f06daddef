use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LedgerEntry;
use crate::error::{Error, Result};

/// Currency per one million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input: f64,
    pub output: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub models: BTreeMap<String, ModelPrice>,
}

impl PriceTable {
    pub fn with(mut self, model_id: impl Into<String>, input: f64, output: f64) -> Self {
        self.models.insert(model_id.into(), ModelPrice { input, output });
        self
    }

    /// Parses a TOML table of the form `[models."id"] input = .. output = ..`.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("price table: {e}")))?;
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        for (model, price) in &self.models {
            if !(price.input >= 0.0 && price.output >= 0.0) {
                return Err(Error::Config(format!("negative price for model `{model}`")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub calls: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Calls whose token counts were estimated rather than reported.
    pub estimated_calls: usize,
    pub total: f64,
    /// Zero when there were no calls; see `zero_calls`.
    pub per_call: f64,
    pub zero_calls: bool,
}

/// Prices every ledger entry: `(input * input_price + output * output_price) / 1e6`.
pub fn estimate_cost(ledger: &[LedgerEntry], prices: &PriceTable) -> Result<CostReport> {
    let mut total = 0.0;
    let mut input_tokens = 0;
    let mut output_tokens = 0;
    let mut estimated_calls = 0;
    for entry in ledger {
        let price = prices.models.get(&entry.model_id).ok_or_else(|| {
            Error::Config(format!("no price for model `{}`", entry.model_id))
        })?;
        total += (entry.usage.input_tokens as f64 * price.input
            + entry.usage.output_tokens as f64 * price.output)
            / 1e6;
        input_tokens += entry.usage.input_tokens;
        output_tokens += entry.usage.output_tokens;
        estimated_calls += usize::from(entry.usage.estimated);
    }
    let calls = ledger.len();
    Ok(CostReport {
        calls,
        input_tokens,
        output_tokens,
        estimated_calls,
        total,
        per_call: if calls == 0 { 0.0 } else { total / calls as f64 },
        zero_calls: calls == 0,
    })
}
