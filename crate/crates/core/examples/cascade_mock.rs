//! Run the instruction cascade against a scripted mock backend and persist
//! the result in an instruction store.

use prompt_cascade::prelude::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let catalog = load_catalog(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/toy/catalog.jsonl"))?;
    let seeds = SeedSet::first(&load_seed_file(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/toy/seeds.jsonl"))?, 2)?;
    let script = MockScript::from_json(&std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/toy/mock.json"))?)?;
    let gateway = Gateway::new(MockBackend::from_script(script));

    let dir = std::env::temp_dir().join("prompt-cascade-example");
    let store = InstructionStore::open(dir.join("instructions"))?;
    let config = CascadeConfig { iterations: 2, fewshots: 2, rng_seed: 7, model_id: "generator".into() };
    let targets = target_pairs(&catalog);
    println!("expected calls: {}", config.expected_calls(catalog.sas().len(), targets.len()));

    let outcome = run_cascade(&catalog, &seeds, &config, &targets, &gateway, Some(&store))?;
    println!(
        "generation calls: {}, resumed iterations: {}, failures: {}",
        outcome.generation_calls,
        outcome.resumed_iterations,
        outcome.failures.len()
    );
    for (pair, instruction) in outcome.instructions.final_snapshot() {
        println!("{}/{} [iter {}]: {}", pair.pc_id, pair.sa_id, instruction.iteration, instruction.text);
    }
    println!("store: {}", store.dir().display());
    Ok(())
}
