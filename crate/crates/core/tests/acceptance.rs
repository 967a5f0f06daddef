//! Acceptance checks. Prints one `criterion N: PASS|FAIL - detail` line per
//! criterion and exits non-zero if any fails.

mod common;

use std::fs;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prompt_cascade::cascade::{run_cascade, CascadeConfig};
use prompt_cascade::catalog::{
    target_pairs, Catalog, Decision, Gold, LabeledCase, PairKey, ProductCategory, StructuredAttribute, Task,
    ValueKind,
};
use prompt_cascade::classifier::{
    parse_decision, render_tagged, ClassificationResult, Classifier, ParseStatus, PredictionMeta, PredictionSet,
    PromptMode,
};
use prompt_cascade::gateway::{
    estimate_cost, BackendKind, Gateway, LedgerEntry, MockBackend, PriceTable, Purpose, ReplayCache, Usage,
};
use prompt_cascade::instruction::{Instruction, SeedSet};
use prompt_cascade::metrics::{
    class_metrics, draw_indices, draw_size, evaluate, paired_bootstrap, BootstrapConfig, ConfusionMatrix,
};
use prompt_cascade::store::InstructionStore;
use prompt_cascade::templates::{render_apc, render_baseline, render_cot, RuleBook};
use prompt_cascade::Error;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn config(iterations: u32, fewshots: usize, seed: u64) -> CascadeConfig {
    CascadeConfig { iterations, fewshots, rng_seed: seed, model_id: "generator".into() }
}

fn grid(pcs: usize, sas: usize) -> (Catalog, Vec<PairKey>) {
    let pc_list: Vec<ProductCategory> = (0..pcs)
        .map(|i| ProductCategory { id: format!("pc{i}"), name: format!("pc {i}"), definition: format!("Category {i}.") })
        .collect();
    let sa_list: Vec<StructuredAttribute> = (0..sas)
        .map(|i| StructuredAttribute {
            id: format!("sa{i}"),
            name: format!("sa {i}"),
            definition: format!("Attribute {i}."),
            value_kind: ValueKind::Text,
        })
        .collect();
    let targets = pc_list
        .iter()
        .flat_map(|p| sa_list.iter().map(move |s| PairKey::new(&p.id, &s.id)))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    (Catalog::new(pc_list, sa_list, vec![], vec![]), targets)
}

fn call_law() -> Check {
    let catalog = common::catalog("toy");
    let seeds = SeedSet::first(&common::seeds("toy"), 2).map_err(err)?;
    let targets = target_pairs(&catalog);
    let gateway = common::mock_gateway("toy/mock.json");
    let started = Instant::now();
    let outcome = run_cascade(&catalog, &seeds, &config(2, 2, 7), &targets, &gateway, None).map_err(err)?;
    let elapsed = started.elapsed().as_secs_f64();
    let calls = gateway.calls_for(Purpose::InstructionGen);
    ensure(calls == 21 && outcome.instructions.len() == 15, || {
        format!("toy run made {calls} calls and {} instructions", outcome.instructions.len())
    })?;
    ensure(elapsed < 1.0, || format!("toy run took {elapsed:.3}s"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for round in 0..50 {
        let pcs = rng.gen_range(2..=8);
        let sas = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=pcs);
        let t = rng.gen_range(2..=4);
        let (catalog, targets) = grid(pcs, sas);
        let seeds: Vec<Instruction> =
            targets[..m].iter().map(|k| Instruction::seed(&k.pc_id, &k.sa_id, "Seed guidance.")).collect();
        let seeds = SeedSet::new(seeds, m).map_err(err)?;
        let gateway = Gateway::new(MockBackend::fixed("instruction: Generated guidance."));
        run_cascade(&catalog, &seeds, &config(t, m, round), &targets, &gateway, None).map_err(err)?;
        let expected = m * sas + (t as usize - 1) * targets.len();
        let got = gateway.calls_for(Purpose::InstructionGen);
        ensure(got == expected, || format!("|P|={pcs} |S|={sas} M={m} T={t}: {got} calls, law says {expected}"))?;
    }

    let (catalog, targets) = grid(4, 3);
    let seeds = SeedSet::new(vec![Instruction::seed("pc0", "sa0", "Seed guidance.")], 1).map_err(err)?;
    let gateway = Gateway::new(MockBackend::fixed("instruction: Generated guidance."));
    run_cascade(&catalog, &seeds, &config(1, 1, 0), &targets, &gateway, None).map_err(err)?;
    ensure(gateway.calls_for(Purpose::InstructionGen) == targets.len(), || "T=1 did not make one call per target".into())?;
    Ok(format!("toy 21 calls / 15 instructions in {:.0} ms; 50 random configs match", elapsed * 1e3))
}

fn determinism() -> Check {
    let catalog = common::catalog("e2e");
    let seeds = SeedSet::first(&common::seeds("e2e"), 2).map_err(err)?;
    let targets = target_pairs(&catalog);
    let rules = RuleBook::default();
    let dir = tempfile::tempdir().map_err(err)?;
    let cache = dir.path().join("cache");
    let cases = catalog.cases().to_vec();

    let mut outputs = Vec::new();
    for (name, gateway) in [
        ("a", common::mock_gateway("e2e/mock.json").with_cache(ReplayCache::open(&cache).map_err(err)?)),
        ("b", Gateway::replay_only(ReplayCache::open(&cache).map_err(err)?)),
    ] {
        let store = InstructionStore::open(dir.path().join(name)).map_err(err)?;
        let outcome = run_cascade(&catalog, &seeds, &config(2, 2, 11), &targets, &gateway, Some(&store)).map_err(err)?;
        let preds = Classifier::new(&catalog, &gateway, &rules, "classifier")
            .run_task(&cases, PromptMode::Apc, Some(&outcome.instructions))
            .map_err(err)?;
        let path = dir.path().join(format!("{name}.jsonl"));
        preds.save(&path).map_err(err)?;
        let mut bytes = Vec::new();
        for file in ["instructions.jsonl", "iteration-1.json", "iteration-2.json"] {
            bytes.push(fs::read(store.dir().join(file)).map_err(err)?);
        }
        bytes.push(fs::read(&path).map_err(err)?);
        outputs.push((bytes, gateway.upstream_calls()));
    }
    ensure(outputs[1].1 == 0, || format!("replay run made {} upstream calls", outputs[1].1))?;
    ensure(outputs[0].0 == outputs[1].0, || "stores or prediction files differ".into())?;
    Ok("instruction store and prediction file are byte-identical on replay".into())
}

fn metric_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let cm = ConfusionMatrix {
            tp: rng.gen_range(0..200),
            fp: rng.gen_range(0..200),
            fn_: rng.gen_range(0..200),
            tn: rng.gen_range(0..200),
        };
        let m = class_metrics(&cm);
        let predicted = (cm.tp + cm.fp) as f64;
        let actual = (cm.tp + cm.fn_) as f64;
        let p = if predicted == 0.0 { 0.0 } else { cm.tp as f64 / predicted };
        let r = if actual == 0.0 { 0.0 } else { cm.tp as f64 / actual };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        ensure((m.precision, m.recall, m.f1) == (p, r, f), || format!("{cm:?} gives {m:?}"))?;
        ensure(p.min(r) <= m.f1 + 1e-15 && m.f1 <= p.max(r) + 1e-15, || format!("F1 outside [min, max] for {cm:?}"))?;
    }
    Ok("1000 random matrices match brute force; F1 within [min(P,R), max(P,R)]".into())
}

fn f1_spot_check() -> Check {
    let m = class_metrics(&ConfusionMatrix { tp: 56_582_116, fp: 12_877_884, fn_: 24_877_884, tn: 0 });
    let direct: f64 = 2.0 * 0.8146 * 0.6946 / (0.8146 + 0.6946);
    ensure((m.precision - 0.8146).abs() < 1e-12 && (m.recall - 0.6946).abs() < 1e-12, || format!("{m:?}"))?;
    ensure((m.f1 - 0.7498).abs() < 1e-4 && (direct - 0.7498).abs() < 1e-4, || format!("F1 = {}", m.f1))?;
    Ok(format!("P 0.8146, R 0.6946 -> F1 {:.6}", m.f1))
}

fn gold_catalog(golds: &[Gold]) -> Catalog {
    let cases = golds
        .iter()
        .enumerate()
        .map(|(i, g)| LabeledCase {
            id: format!("c{i:05}"),
            product_id: "p".into(),
            sa_id: "s".into(),
            test_value: "v".into(),
            task: Task::Correctness,
            gold: *g,
            language: "en".into(),
        })
        .collect();
    Catalog::new(vec![], vec![], vec![], cases)
}

fn predictions(decisions: &[Decision]) -> PredictionSet {
    PredictionSet {
        meta: PredictionMeta { model_id: "m".into(), mode: PromptMode::Cot, task: Some(Task::Correctness), instruction_set_id: None },
        results: decisions
            .iter()
            .enumerate()
            .map(|(i, d)| ClassificationResult {
                case_id: format!("c{i:05}"),
                task: d.task(),
                decision: *d,
                rationale: String::new(),
                raw: String::new(),
                usage: Usage::default(),
                mode: PromptMode::Cot,
                model_id: "m".into(),
                parse_status: ParseStatus::Ok,
            })
            .collect(),
    }
}

fn bootstrap() -> Check {
    let started = Instant::now();
    let mut golds = vec![Gold::Negative; 100];
    golds.extend(vec![Gold::Positive; 100]);
    let catalog = gold_catalog(&golds);
    let perfect: Vec<Decision> =
        golds.iter().map(|g| if *g == Gold::Positive { Decision::Correct } else { Decision::Incorrect }).collect();
    let wrong: Vec<Decision> =
        golds.iter().map(|g| if *g == Gold::Positive { Decision::Incorrect } else { Decision::Correct }).collect();
    let config = BootstrapConfig::default();
    ensure(config.draws == 5000 && config.fraction == 0.8, || "unexpected bootstrap defaults".into())?;

    let same = paired_bootstrap(&predictions(&perfect), &predictions(&perfect), &catalog, &config).map_err(err)?;
    ensure(same.p_value == 1.0, || format!("identical predictions gave p = {}", same.p_value))?;
    let dominant = paired_bootstrap(&predictions(&perfect), &predictions(&wrong), &catalog, &config).map_err(err)?;
    ensure(dominant.p_value == 1.0 / 5001.0, || format!("dominant method gave p = {}", dominant.p_value))?;
    ensure(dominant.draw_sizes == [80, 80], || format!("draw sizes {:?}", dominant.draw_sizes))?;

    let a: Vec<Decision> = (0..200).map(|i| if i % 4 == 0 { Decision::Incorrect } else { Decision::Correct }).collect();
    let b: Vec<Decision> = (0..200).map(|i| if i % 3 == 0 { Decision::Incorrect } else { Decision::Correct }).collect();
    let seeded = BootstrapConfig { seed: 17, ..config };
    let ab = paired_bootstrap(&predictions(&a), &predictions(&b), &catalog, &seeded).map_err(err)?;
    let ba = paired_bootstrap(&predictions(&b), &predictions(&a), &catalog, &seeded).map_err(err)?;
    ensure(ab.mean_delta_f1 == -ba.mean_delta_f1, || {
        format!("swap gave {} and {}", ab.mean_delta_f1, ba.mean_delta_f1)
    })?;

    for n in 1..300usize {
        ensure(draw_size(n, 0.8) == (n * 8).div_ceil(10), || format!("draw size for n = {n}"))?;
    }
    let picks = draw_indices([37, 163], 0.8, 5, 0);
    ensure([picks[0].len(), picks[1].len()] == [30, 131], || "per-class draw sizes".into())?;

    let elapsed = started.elapsed().as_secs_f64();
    ensure(elapsed < 10.0, || format!("took {elapsed:.2}s"))?;
    Ok(format!("p = 1.0, p = 1/5001, antisymmetric, ceil draw sizes; {elapsed:.2}s"))
}

fn goldens() -> Check {
    let catalog = common::catalog("e2e");
    let product = catalog.product("ws-1").ok_or("missing ws-1")?;
    let sa = catalog.sa("base_material").ok_or("missing base_material")?;
    let rules = RuleBook::default().rules_for("base_material");
    let instruction = Instruction::seed("walking_stick", "base_material", common::WALKING_STICK_INSTRUCTION);
    let prompts = [
        ("baseline", render_baseline(product, sa, "rubber", Task::Correctness).map_err(err)?),
        ("cot", render_cot(product, sa, "rubber", Task::Correctness, &rules).map_err(err)?),
        ("apc", render_apc(product, sa, "rubber", Task::Correctness, &rules, &instruction).map_err(err)?),
    ];
    for (name, prompt) in &prompts {
        let expected = fs::read_to_string(common::fixture(&format!("golden/{name}.txt"))).map_err(err)?;
        ensure(expected == prompt.text, || format!("{name} prompt differs from its golden"))?;
    }
    ensure(prompts[2].1.text.matches("### Test value:").count() == 1, || "APC has more than one test value".into())?;
    Ok("baseline, cot and apc prompts are byte-identical to goldens".into())
}

fn cost() -> Check {
    let prices = PriceTable::default().with("generator", 3.0, 15.0);
    let entry = LedgerEntry {
        purpose: Purpose::InstructionGen,
        model_id: "generator".into(),
        usage: Usage { input_tokens: 2717, output_tokens: 113, estimated: false },
        backend: BackendKind::Http,
        latency_ms: 0,
        cache_key: String::new(),
    };
    let report = estimate_cost(&[entry], &prices).map_err(err)?;
    ensure((report.per_call - 0.009846).abs() < 1e-12, || format!("per call {}", report.per_call))?;
    let two_sig = format!("{:.4}", report.per_call);
    ensure(two_sig == "0.0098", || format!("rounds to {two_sig}"))?;
    Ok(format!("{:.6} per call", report.per_call))
}

fn parser() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let words = ["the", "value", "matches", "title", "rubber", "tip", "stated", "(size)", "it's", "100", "cm,"];
    let decisions = [Decision::Correct, Decision::Incorrect, Decision::Applicable, Decision::Inapplicable];
    for _ in 0..2000 {
        let d = decisions[rng.gen_range(0..4)];
        let lines: Vec<String> = (0..rng.gen_range(0..4))
            .map(|_| {
                let n = rng.gen_range(1..10);
                let mut line: Vec<&str> = (0..n).map(|_| words[rng.gen_range(0..words.len())]).collect();
                line[0] = "Because";
                line.join(" ")
            })
            .collect();
        let rationale = lines.join("\n");
        let (parsed, text) = parse_decision(&render_tagged(d, &rationale), d.task()).map_err(err)?;
        ensure(parsed == d && text == rationale, || format!("round trip failed for {d:?}: {rationale:?}"))?;
    }

    let pieces = [
        "prediction:", "Prediction: ", "**prediction:** ", "reasoning: ", "Correct", "incorrect", "Applicable",
        "'", "\n", "é", "🙂", "\u{0}", " ", "###", "inapplicable.", "<b>",
    ];
    let mut outcomes = [0usize; 2];
    for i in 0..10_000 {
        let raw: String = if i % 2 == 0 {
            (0..rng.gen_range(0..12)).map(|_| pieces[rng.gen_range(0..pieces.len())]).collect()
        } else {
            (0..rng.gen_range(0..40)).map(|_| char::from_u32(rng.gen_range(0..0x2_0000)).unwrap_or('?')).collect()
        };
        let parsed = std::panic::catch_unwind(|| {
            [Task::Correctness, Task::Applicability].map(|task| parse_decision(&raw, task))
        })
        .map_err(|_| format!("parser panicked on {raw:?}"))?;
        for (task, result) in [Task::Correctness, Task::Applicability].into_iter().zip(parsed) {
            match result {
                Ok((d, _)) => {
                    ensure(d.task() == task, || format!("label of the wrong task for {raw:?}"))?;
                    outcomes[0] += 1;
                }
                Err(Error::OutputParse(_)) => outcomes[1] += 1,
                Err(e) => return Err(format!("unexpected error {e} for {raw:?}")),
            }
        }
    }

    let catalog = common::catalog("e2e");
    let rules = RuleBook::default();
    let gateway = Gateway::new(MockBackend::fixed("no label here"));
    let result = Classifier::new(&catalog, &gateway, &rules, "m")
        .classify_one(&catalog.cases()[0], PromptMode::Cot, None)
        .map_err(err)?;
    ensure(result.parse_status == ParseStatus::Defaulted && result.decision == Decision::Correct, || {
        "unparseable reply was not a flagged positive default".into()
    })?;
    Ok(format!("2000 round trips; 10000 fuzzed strings: {} parsed, {} parse errors", outcomes[0], outcomes[1]))
}

fn end_to_end() -> Check {
    let catalog = common::catalog("e2e");
    let seeds = SeedSet::first(&common::seeds("e2e"), 2).map_err(err)?;
    let gateway = common::mock_gateway("e2e/mock.json");
    let outcome =
        run_cascade(&catalog, &seeds, &config(2, 2, 11), &target_pairs(&catalog), &gateway, None).map_err(err)?;
    let rules = RuleBook::default();
    let classifier = Classifier::new(&catalog, &gateway, &rules, "classifier");
    let cases = catalog.cases().to_vec();
    let apc = classifier.run_task(&cases, PromptMode::Apc, Some(&outcome.instructions)).map_err(err)?;
    let baseline = classifier.run_task(&cases, PromptMode::Baseline, None).map_err(err)?;
    let apc_f1 = evaluate(&apc, &catalog, None).map_err(err)?.negative().metrics.f1;
    let base_f1 = evaluate(&baseline, &catalog, None).map_err(err)?.negative().metrics.f1;
    ensure(apc_f1 > base_f1, || format!("APC negative F1 {apc_f1:.4} <= baseline {base_f1:.4}"))?;

    let decision = |set: &PredictionSet, product: &str, sa: &str| {
        let case = catalog.cases().iter().find(|c| c.product_id == product && c.sa_id == sa)?;
        set.results.iter().find(|r| r.case_id == case.id).map(|r| r.decision)
    };
    let flips = [
        ("ws-1", "base_material", Decision::Incorrect, Decision::Correct),
        ("df-1", "age_range", Decision::Correct, Decision::Incorrect),
    ];
    for (product, sa, before, after) in flips {
        let b = decision(&baseline, product, sa);
        let a = decision(&apc, product, sa);
        ensure(b == Some(before) && a == Some(after), || format!("{product}/{sa}: baseline {b:?}, APC {a:?}"))?;
    }
    Ok(format!("negative F1 APC {apc_f1:.4} > baseline {base_f1:.4}; both flips reproduced"))
}

fn main() {
    let criteria: [(u32, fn() -> Check); 9] = [
        (1, call_law),
        (2, determinism),
        (3, metric_oracle),
        (4, f1_spot_check),
        (5, bootstrap),
        (6, goldens),
        (7, cost),
        (8, parser),
        (9, end_to_end),
    ];
    let mut failed = 0;
    for (n, check) in criteria {
        match check() {
            Ok(detail) => println!("criterion {n}: PASS - {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL - {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
