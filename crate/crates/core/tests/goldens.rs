//! Byte-exact prompt goldens. Regenerate with `UPDATE_GOLDENS=1 cargo test --test goldens`.

mod common;

use prompt_cascade::catalog::Task;
use prompt_cascade::instruction::Instruction;
use prompt_cascade::templates::{render_apc, render_baseline, render_cot, RenderedPrompt, RuleBook, INSTRUCTION};

fn rendered() -> Vec<(&'static str, RenderedPrompt)> {
    let catalog = common::catalog("e2e");
    let product = catalog.product("ws-1").unwrap();
    let sa = catalog.sa("base_material").unwrap();
    let rules = RuleBook::default().rules_for("base_material");
    let instruction = Instruction::seed("walking_stick", "base_material", common::WALKING_STICK_INSTRUCTION);
    vec![
        ("baseline", render_baseline(product, sa, "rubber", Task::Correctness).unwrap()),
        ("cot", render_cot(product, sa, "rubber", Task::Correctness, &rules).unwrap()),
        ("apc", render_apc(product, sa, "rubber", Task::Correctness, &rules, &instruction).unwrap()),
    ]
}

pub fn check_goldens() -> Result<(), String> {
    let update = std::env::var_os("UPDATE_GOLDENS").is_some();
    for (name, prompt) in rendered() {
        let path = common::fixture(&format!("golden/{name}.txt"));
        if update {
            std::fs::write(&path, &prompt.text).unwrap();
            continue;
        }
        let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        if expected != prompt.text {
            return Err(format!("{name} prompt differs from {}", path.display()));
        }
    }
    Ok(())
}

#[test]
fn prompts_match_goldens() {
    check_goldens().unwrap();
}

#[test]
fn apc_golden_is_cot_golden_plus_instruction() {
    let prompts = rendered();
    let apc = &prompts[2].1;
    assert_eq!(apc.text_without(&[INSTRUCTION]), prompts[1].1.text);
    assert!(apc.section(INSTRUCTION).unwrap().body.contains(common::WALKING_STICK_INSTRUCTION));
    assert_eq!(apc.text.matches("### Test value:").count(), 1);
}
