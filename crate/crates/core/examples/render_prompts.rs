//! Render the baseline, chain-of-thought and instruction-augmented prompts
//! for one labeled case.

use prompt_cascade::prelude::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let catalog = load_catalog(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/e2e/catalog.jsonl"))?;
    let product = catalog.product("ws-1").expect("fixture product");
    let sa = catalog.sa("base_material").expect("fixture attribute");
    let rules = RuleBook::default().rules_for(&sa.id);
    let instruction = Instruction::seed(
        "walking_stick",
        "base_material",
        "Judge the material of the end of the stick that rests on the ground.",
    );

    let prompts = [
        ("baseline", render_baseline(product, sa, "rubber", Task::Correctness)?),
        ("cot", render_cot(product, sa, "rubber", Task::Correctness, &rules)?),
        ("apc", render_apc(product, sa, "rubber", Task::Correctness, &rules, &instruction)?),
    ];
    for (name, prompt) in prompts {
        println!("===== {name} ({:?}) =====", prompt.headers());
        println!("{}\n", prompt.text);
    }
    Ok(())
}
