mod common;

use prompt_cascade::catalog::{Product, Task};
use prompt_cascade::instruction::Instruction;
use prompt_cascade::templates::{
    estimate_tokens, render_apc, render_baseline, render_cot, render_instruction_prompt, CotRuleSet,
    FewshotExample, RenderedPrompt, RuleBook, TemplateKind, INSTRUCTION, PLACEHOLDER_MARKERS, PRODUCT_DATA,
    RULES, TEST_VALUE,
};
use serde::Deserialize;

#[derive(Deserialize)]
struct Corpus {
    target: Target,
    fewshots: Vec<Shot>,
}

#[derive(Deserialize)]
struct Target {
    pc_definition: String,
    sa_definition: String,
}

#[derive(Deserialize)]
struct Shot {
    pc_definition: String,
    sa_definition: String,
    instruction: String,
}

fn corpus() -> Corpus {
    serde_json::from_str(&std::fs::read_to_string(common::fixture("definitions/corpus.json")).unwrap()).unwrap()
}

fn shots(c: &Corpus) -> Vec<FewshotExample> {
    c.fewshots
        .iter()
        .map(|s| FewshotExample {
            pc_definition: s.pc_definition.clone(),
            sa_definition: s.sa_definition.clone(),
            instruction: s.instruction.clone(),
        })
        .collect()
}

fn differing_sections(a: &RenderedPrompt, b: &RenderedPrompt) -> Vec<String> {
    assert_eq!(a.headers(), b.headers());
    a.sections
        .iter()
        .zip(&b.sections)
        .filter(|(x, y)| x.body != y.body)
        .map(|(x, _)| x.header.clone())
        .collect()
}

#[test]
fn title_change_only_touches_product_data() {
    let catalog = common::catalog("e2e");
    let product = catalog.product("ws-1").unwrap();
    let sa = catalog.sa("base_material").unwrap();
    let other = Product {
        title: "Another title".into(),
        ..product.clone()
    };
    let rules = RuleBook::default().rules_for(&sa.id);
    let instruction = Instruction::seed("walking_stick", "base_material", "Some guidance.");
    let pairs = [
        (
            render_baseline(product, sa, "rubber", Task::Correctness).unwrap(),
            render_baseline(&other, sa, "rubber", Task::Correctness).unwrap(),
        ),
        (
            render_cot(product, sa, "rubber", Task::Correctness, &rules).unwrap(),
            render_cot(&other, sa, "rubber", Task::Correctness, &rules).unwrap(),
        ),
        (
            render_apc(product, sa, "rubber", Task::Correctness, &rules, &instruction).unwrap(),
            render_apc(&other, sa, "rubber", Task::Correctness, &rules, &instruction).unwrap(),
        ),
    ];
    for (a, b) in &pairs {
        assert_eq!(differing_sections(a, b), vec![PRODUCT_DATA.to_string()]);
    }
}

#[test]
fn rule_count_only_touches_rules() {
    let catalog = common::catalog("e2e");
    let product = catalog.product("ws-1").unwrap();
    let sa = catalog.sa("base_material").unwrap();
    let one = CotRuleSet { sa_group: "g".into(), rules: vec!["Rule one.".into()] };
    let three = CotRuleSet {
        sa_group: "g".into(),
        rules: vec!["Rule one.".into(), "Rule two.".into(), "Rule three.".into()],
    };
    let a = render_cot(product, sa, "rubber", Task::Correctness, &one).unwrap();
    let b = render_cot(product, sa, "rubber", Task::Correctness, &three).unwrap();
    assert_eq!(differing_sections(&a, &b), vec![RULES.to_string()]);
    let empty = CotRuleSet { sa_group: "g".into(), rules: vec![] };
    assert!(render_cot(product, sa, "rubber", Task::Correctness, &empty).is_err());
}

#[test]
fn prompts_are_constant_across_products_outside_product_and_test_value() {
    let catalog = common::catalog("e2e");
    let sa = catalog.sa("age_range").unwrap();
    let rules = RuleBook::default().rules_for(&sa.id);
    let a = render_cot(catalog.product("df-1").unwrap(), sa, "young adult", Task::Correctness, &rules).unwrap();
    let b = render_cot(catalog.product("df-2").unwrap(), sa, "senior", Task::Correctness, &rules).unwrap();
    assert_eq!(a.text_without(&[PRODUCT_DATA, TEST_VALUE]), b.text_without(&[PRODUCT_DATA, TEST_VALUE]));
}

#[test]
fn section_order_and_no_placeholders() {
    let catalog = common::catalog("e2e");
    let rules = RuleBook::default();
    let instruction = Instruction::seed("dog_food", "age_range", "Life stage guidance.");
    for case in catalog.cases() {
        let product = catalog.product(&case.product_id).unwrap();
        let sa = catalog.sa(&case.sa_id).unwrap();
        let r = rules.rules_for(&sa.id);
        let mut prompts = vec![
            render_baseline(product, sa, &case.test_value, case.task).unwrap(),
            render_cot(product, sa, &case.test_value, case.task, &r).unwrap(),
        ];
        if product.pc_id == "dog_food" && sa.id == "age_range" {
            prompts.push(render_apc(product, sa, &case.test_value, case.task, &r, &instruction).unwrap());
        }
        for p in prompts {
            assert_eq!(p.headers(), p.kind.section_order());
            let joined: Vec<&str> = p.sections.iter().map(|s| s.body.as_str()).collect();
            assert_eq!(joined.join("\n"), p.text);
            for marker in PLACEHOLDER_MARKERS {
                assert!(!p.text.contains(marker));
            }
        }
    }
}

#[test]
fn apc_rejects_instruction_for_another_attribute() {
    let catalog = common::catalog("e2e");
    let product = catalog.product("ws-1").unwrap();
    let sa = catalog.sa("base_material").unwrap();
    let wrong = Instruction::seed("walking_stick", "age_range", "Guidance.");
    let err = render_apc(product, sa, "rubber", Task::Correctness, &RuleBook::default().default, &wrong).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let right = Instruction::seed("walking_stick", "base_material", "Guidance.");
    let p = render_apc(product, sa, "rubber", Task::Correctness, &RuleBook::default().default, &right).unwrap();
    assert!(p.section(INSTRUCTION).is_some());
}

#[test]
fn applicability_swaps_labels() {
    let catalog = common::catalog("e2e");
    let p = render_baseline(
        catalog.product("ts-1").unwrap(),
        catalog.sa("age_range").unwrap(),
        "toddler",
        Task::Applicability,
    )
    .unwrap();
    assert!(p.text.contains("'Applicable' or 'Inapplicable'"));
    assert!(!p.text.contains("'Correct'"));
}

#[test]
fn instruction_prompt_lists_examples_in_order() {
    let c = corpus();
    let all = shots(&c);
    let p = render_instruction_prompt(&c.target.pc_definition, &c.target.sa_definition, &all, 6).unwrap();
    assert_eq!(p.kind, TemplateKind::InstructionGen);
    let mut last = 0;
    for (i, shot) in all.iter().enumerate() {
        let header = format!("Example {}:", i + 1);
        let at = p.text.find(&header).unwrap();
        assert!(at >= last);
        last = at;
        assert!(p.text.contains(&shot.instruction));
    }
    assert!(!p.text.contains("Example 7:"));

    let one = render_instruction_prompt(&c.target.pc_definition, &c.target.sa_definition, &all[..1], 6).unwrap();
    assert_eq!(one.text.matches("Example ").count(), 1);
    assert!(render_instruction_prompt("pc", "sa", &[], 6).is_err());
    assert!(render_instruction_prompt("pc", "sa", &all, 5).is_err());
}

#[test]
fn instruction_prompt_size_is_in_the_expected_band() {
    let c = corpus();
    let p = render_instruction_prompt(&c.target.pc_definition, &c.target.sa_definition, &shots(&c), 6).unwrap();
    let tokens = estimate_tokens(&p.text);
    assert!((1500..=4000).contains(&tokens), "estimated {tokens} tokens");
}

#[test]
fn empty_test_value_is_rejected() {
    let catalog = common::catalog("e2e");
    let err = render_baseline(catalog.product("ws-1").unwrap(), catalog.sa("base_material").unwrap(), " ", Task::Correctness)
        .unwrap_err();
    assert!(matches!(err, prompt_cascade::Error::Argument(_)));
}
