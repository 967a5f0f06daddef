//! Generate instructions, then classify every labeled case in baseline and
//! instruction-augmented mode and print both evaluation tables.

use prompt_cascade::prelude::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let catalog = load_catalog(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/e2e/catalog.jsonl"))?;
    let seeds = SeedSet::first(&load_seed_file(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/e2e/seeds.jsonl"))?, 2)?;
    let script = MockScript::from_json(&std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/e2e/mock.json"))?)?;
    let gateway = Gateway::new(MockBackend::from_script(script));

    let config = CascadeConfig { iterations: 2, fewshots: 2, rng_seed: 11, model_id: "generator".into() };
    let outcome = run_cascade(&catalog, &seeds, &config, &target_pairs(&catalog), &gateway, None)?;

    let rules = RuleBook::default();
    let classifier = Classifier::new(&catalog, &gateway, &rules, "classifier");
    let cases = catalog.cases().to_vec();
    for (mode, instructions) in [(PromptMode::Baseline, None), (PromptMode::Apc, Some(&outcome.instructions))] {
        let predictions = classifier.run_task(&cases, mode, instructions)?;
        let report = evaluate(&predictions, &catalog, Some(Task::Correctness))?;
        print!("{}", report.to_table());
        for r in predictions.results.iter().filter(|r| r.parse_status != ParseStatus::Ok) {
            println!("defaulted: {}", r.case_id);
        }
    }
    Ok(())
}
