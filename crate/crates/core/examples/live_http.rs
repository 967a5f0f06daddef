//! Classify one case against a live chat-completions endpoint.
//!
//! LLM_BASE_URL=https://host/v1 PROMPT_CASCADE_API_KEY=... \
//!     cargo run --example live_http -- model-name
//!
//! Responses are cached under `target/live-cache`, so a rerun is offline.

use prompt_cascade::config::DEFAULT_API_KEY_ENV;
use prompt_cascade::prelude::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let Ok(base_url) = std::env::var("LLM_BASE_URL") else {
        eprintln!("set LLM_BASE_URL to run this example");
        return Ok(());
    };
    let model = std::env::args().nth(1).unwrap_or_else(|| "classifier".into());
    let backend = HttpBackend::new(HttpConfig {
        base_url,
        api_key: std::env::var(DEFAULT_API_KEY_ENV).ok(),
        timeout_secs: 60,
    });
    let gateway = Gateway::new(backend)
        .with_cache(ReplayCache::open("target/live-cache")?)
        .with_max_in_flight(2);

    let catalog = load_catalog(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/e2e/catalog.jsonl"))?;
    let rules = RuleBook::default();
    let classifier = Classifier::new(&catalog, &gateway, &rules, &model);
    let case = &catalog.cases()[0];
    let result = classifier.classify_one(case, PromptMode::Cot, None)?;
    println!("{}: {} ({:?})", case.id, result.decision.label(), result.parse_status);
    println!("{}", result.rationale);
    println!("tokens: {} in, {} out", result.usage.input_tokens, result.usage.output_tokens);
    Ok(())
}
