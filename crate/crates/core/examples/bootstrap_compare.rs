//! Paired bootstrap comparison of two prediction sets on a synthetic
//! balanced tuning set.

use prompt_cascade::classifier::{ClassificationResult, PredictionMeta};
use prompt_cascade::gateway::Usage;
use prompt_cascade::metrics::BootstrapMetric;
use prompt_cascade::prelude::*;

fn predictions(catalog: &Catalog, miss_every: usize) -> PredictionSet {
    let results = catalog
        .cases()
        .iter()
        .enumerate()
        .map(|(i, case)| {
            let gold = case.gold_decision();
            let decision = if i % miss_every == 0 { Decision::from_gold(case.task, gold_flip(case.gold)) } else { gold };
            ClassificationResult {
                case_id: case.id.clone(),
                task: case.task,
                decision,
                rationale: String::new(),
                raw: String::new(),
                usage: Usage::default(),
                mode: PromptMode::Cot,
                model_id: "m".into(),
                parse_status: ParseStatus::Ok,
            }
        })
        .collect();
    PredictionSet {
        meta: PredictionMeta { model_id: "m".into(), mode: PromptMode::Cot, task: Some(Task::Correctness), instruction_set_id: None },
        results,
    }
}

fn gold_flip(gold: Gold) -> Gold {
    match gold {
        Gold::Positive => Gold::Negative,
        Gold::Negative => Gold::Positive,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cases = (0..200)
        .map(|i| LabeledCase {
            id: format!("case-{i:03}"),
            product_id: "p".into(),
            sa_id: "s".into(),
            test_value: "v".into(),
            task: Task::Correctness,
            gold: if i % 2 == 0 { Gold::Negative } else { Gold::Positive },
            language: "en".into(),
        })
        .collect();
    let catalog = Catalog::new(vec![], vec![], vec![], cases);
    let better = predictions(&catalog, 7);
    let worse = predictions(&catalog, 3);

    for metric in [BootstrapMetric::NegativeF1, BootstrapMetric::MacroF1] {
        let config = BootstrapConfig { metric, seed: 1, ..Default::default() };
        let result = paired_bootstrap(&better, &worse, &catalog, &config)?;
        println!(
            "{metric:?}: mean delta {:+.4}, p-value {:.6}, draws {} of sizes {:?}",
            result.mean_delta_f1, result.p_value, result.draws, result.draw_sizes
        );
    }
    Ok(())
}
