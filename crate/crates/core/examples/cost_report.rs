//! Price the calls made by a mock cascade run.

use prompt_cascade::prelude::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let catalog = load_catalog(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/toy/catalog.jsonl"))?;
    let seeds = SeedSet::first(&load_seed_file(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/toy/seeds.jsonl"))?, 2)?;
    let gateway = Gateway::new(MockBackend::fixed("instruction: Read the printed label."));
    let targets = target_pairs(&catalog);
    let config = CascadeConfig { iterations: 2, fewshots: 2, ..Default::default() };
    run_cascade(&catalog, &seeds, &config, &targets, &gateway, None)?;

    let prices = PriceTable::from_toml(&std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/toy/prices.toml"))?)?;
    let report = estimate_cost(&gateway.ledger(), &prices)?;
    println!("calls: {} ({} estimated)", report.calls, report.estimated_calls);
    println!("tokens: {} in, {} out", report.input_tokens, report.output_tokens);
    println!("total: {:.6}", report.total);
    println!("per call: {:.6}", report.per_call);
    println!("per target pair: {:.6}", report.total / targets.len() as f64);
    Ok(())
}
