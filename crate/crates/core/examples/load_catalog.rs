//! Load a catalog, validate it and list the target pairs.
//!
//! cargo run --example load_catalog -- path/to/catalog.jsonl

use prompt_cascade::prelude::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/e2e/catalog.jsonl").into());
    let catalog = load_catalog(&path)?;
    let counts = catalog.counts();
    println!(
        "{} categories, {} attributes, {} products, {} labeled cases",
        counts.pcs, counts.sas, counts.products, counts.cases
    );

    let report = validate_catalog(&catalog);
    if report.is_valid() {
        println!("catalog is valid");
    }
    for v in &report.violations {
        println!("{:?} {}: {}", v.kind, v.subject, v.detail);
    }

    for pair in target_pairs(&catalog) {
        println!("target {} / {}", pair.pc_id, pair.sa_id);
    }
    Ok(())
}
