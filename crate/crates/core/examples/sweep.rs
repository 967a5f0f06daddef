//! Two-phase (T, M) sweep on the tuning fixture.

use prompt_cascade::prelude::*;
use prompt_cascade::sweep::{SweepSpec, Sweeper};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let catalog = load_catalog(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/e2e/catalog.jsonl"))?;
    let seeds = load_seed_file(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/e2e/seeds.jsonl"))?;
    let script = MockScript::from_json(&std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/e2e/mock_sweep.json"))?)?;
    let gateway = Gateway::new(MockBackend::from_script(script));
    let rules = RuleBook::default();

    let spec = SweepSpec { t_values: (0..=4).collect(), m_values: vec![1, 2, 3], default_m: 2, ..Default::default() };
    let sweeper = Sweeper { catalog: &catalog, seed_pool: &seeds, gateway: &gateway, rules: &rules };
    let report = sweeper.run(&spec)?;
    print!("{}", report.to_table());
    println!("chosen: T={} M={} ({})", report.chosen_t, report.chosen_m, report.selection_rule);
    Ok(())
}
