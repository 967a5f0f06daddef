#![allow(dead_code)]

use std::path::PathBuf;

use prompt_cascade::catalog::{load_catalog, Catalog};
use prompt_cascade::gateway::{Gateway, MockBackend, MockScript};
use prompt_cascade::instruction::{load_seed_file, Instruction};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn catalog(name: &str) -> Catalog {
    load_catalog(fixture(&format!("{name}/catalog.jsonl"))).unwrap()
}

pub fn seeds(name: &str) -> Vec<Instruction> {
    load_seed_file(fixture(&format!("{name}/seeds.jsonl"))).unwrap()
}

pub fn script(rel: &str) -> MockScript {
    MockScript::from_json(&std::fs::read_to_string(fixture(rel)).unwrap()).unwrap()
}

pub fn mock_gateway(rel: &str) -> Gateway {
    Gateway::new(MockBackend::from_script(script(rel)))
}

pub const WALKING_STICK_INSTRUCTION: &str = "Base material is the material of the lowest part of a walking \
stick, the part that touches the ground and gives grip and stability while walking.";
