//! The instruction cascade.
//!
//! Iteration 1 turns the M human seeds into M generated instructions per
//! target attribute, one per randomly sampled product category. Each later
//! iteration generates an instruction for every target pair, using up to M
//! same-attribute instructions from the previous iteration as examples.
//! With `T == 1` the seeds are applied directly to every target pair.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{Catalog, PairKey, ProductCategory, StructuredAttribute};
use crate::error::{Error, IntegrityError, Result};
use crate::gateway::{Gateway, LlmRequest, Purpose};
use crate::instruction::{Instruction, Lineage, SeedSet};
use crate::store::{GenerationFailure, InstructionStore, Snapshot};
use crate::templates::{render_instruction_prompt, FewshotExample};

pub const DEFAULT_ITERATIONS: u32 = 2;
pub const DEFAULT_FEWSHOTS: usize = 6;

const FORMAT_REMINDER: &str =
    "\nReply with exactly one line that starts with `instruction:` followed by the instruction.\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeConfig {
    /// Number of iterations, T.
    pub iterations: u32,
    /// Few-shot examples per generation call, M.
    pub fewshots: usize,
    pub rng_seed: u64,
    pub model_id: String,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            fewshots: DEFAULT_FEWSHOTS,
            rng_seed: 0,
            model_id: "generator".into(),
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("iterations (T) must be at least 1".into()));
        }
        if self.fewshots < 1 {
            return Err(Error::Config("few-shot count (M) must be at least 1".into()));
        }
        if self.model_id.trim().is_empty() {
            return Err(Error::Config("generation model id is empty".into()));
        }
        Ok(())
    }

    /// Generation calls a complete run makes when every call parses on the
    /// first try.
    pub fn expected_calls(&self, distinct_sas: usize, targets: usize) -> usize {
        if self.iterations == 1 {
            targets
        } else {
            self.fewshots * distinct_sas + (self.iterations as usize - 1) * targets
        }
    }
}

/// Generated instructions keyed by pair, one snapshot per iteration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InstructionSet {
    snapshots: BTreeMap<u32, Snapshot>,
}

impl InstructionSet {
    pub fn final_iteration(&self) -> u32 {
        self.snapshots.keys().next_back().copied().unwrap_or(0)
    }

    /// Instructions of the last iteration.
    pub fn final_snapshot(&self) -> &Snapshot {
        static EMPTY: Snapshot = BTreeMap::new();
        self.snapshots.values().next_back().unwrap_or(&EMPTY)
    }

    pub fn iteration(&self, iteration: u32) -> Option<&Snapshot> {
        self.snapshots.get(&iteration)
    }

    pub fn get(&self, pair: &PairKey) -> Option<&Instruction> {
        self.final_snapshot().get(pair)
    }

    pub fn len(&self) -> usize {
        self.final_snapshot().len()
    }

    pub fn is_empty(&self) -> bool {
        self.final_snapshot().is_empty()
    }

    pub fn from_final(snapshot: Snapshot) -> Self {
        let iteration = snapshot.values().map(|i| i.iteration).max().unwrap_or(0);
        Self {
            snapshots: BTreeMap::from([(iteration, snapshot)]),
        }
    }

    /// Loads the last completed iteration from a store directory.
    pub fn from_store(store: &InstructionStore) -> Result<Self> {
        let manifests = store.manifests()?;
        let Some(last) = manifests.last() else {
            return Err(Error::Config(format!(
                "no completed iterations in {}",
                store.dir().display()
            )));
        };
        let loaded = store.load(&last.config_fingerprint)?;
        Ok(Self {
            snapshots: loaded
                .into_iter()
                .enumerate()
                .map(|(i, (s, _))| (i as u32 + 1, s))
                .collect(),
        })
    }

    /// Digest of the final instructions, used to tag prediction runs.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for instruction in self.final_snapshot().values() {
            hasher.update(serde_json::to_vec(instruction).unwrap_or_default());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutcome {
    pub instructions: InstructionSet,
    pub failures: Vec<GenerationFailure>,
    /// Generation requests issued by this run, retries included.
    pub generation_calls: usize,
    /// Iterations restored from the store instead of generated.
    pub resumed_iterations: u32,
}

/// M distinct category ids, drawn uniformly without replacement from the
/// id-sorted category list. The order of the result is the draw order.
pub fn sample_pcs<R: Rng + ?Sized>(catalog: &Catalog, m: usize, rng: &mut R) -> Result<Vec<String>> {
    let mut ids: Vec<&str> = catalog.pcs().iter().map(|p| p.id.as_str()).collect();
    ids.sort_unstable();
    if ids.len() < m {
        return Err(Error::Argument(format!(
            "cannot sample {m} product categories from {}",
            ids.len()
        )));
    }
    Ok(index::sample(rng, ids.len(), m)
        .into_iter()
        .map(|i| ids[i].to_string())
        .collect())
}

/// Up to M same-attribute instructions from a previous iteration. When more
/// are available a seeded sample without replacement is taken; the result is
/// in PC order either way.
pub fn select_fewshot<R: Rng + ?Sized>(
    previous: &Snapshot,
    sa_id: &str,
    m: usize,
    rng: &mut R,
) -> Result<Vec<Instruction>> {
    let candidates: Vec<&Instruction> = previous.values().filter(|i| i.sa_id == sa_id).collect();
    if candidates.is_empty() {
        return Err(Error::MissingSa(sa_id.to_string()));
    }
    if candidates.len() <= m {
        return Ok(candidates.into_iter().cloned().collect());
    }
    let mut picked = index::sample(rng, candidates.len(), m).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| candidates[i].clone()).collect())
}

/// Pulls the text of the `instruction:` field out of a model reply.
pub fn parse_instruction_output(raw: &str) -> Option<String> {
    let mut lines = raw.lines();
    while let Some(line) = lines.next() {
        let cleaned = line.trim().trim_start_matches(['*', '-', '#', ' ']).trim_start();
        if cleaned.len() >= "instruction:".len()
            && cleaned.is_char_boundary("instruction:".len())
            && cleaned[.."instruction:".len()].eq_ignore_ascii_case("instruction:")
        {
            let mut text = cleaned["instruction:".len()..]
                .trim_start_matches('*')
                .trim()
                .to_string();
            for rest in lines.by_ref() {
                if rest.trim().is_empty() && !text.is_empty() {
                    break;
                }
                if !text.is_empty() {
                    text.push(' ');
                }
                text.push_str(rest.trim());
            }
            let text = text.trim().trim_matches('"').trim().to_string();
            return (!text.is_empty()).then_some(text);
        }
    }
    None
}

/// Issues generation calls for single PC-SA pairs.
#[derive(Debug, Clone, Copy)]
pub struct Generator<'a> {
    pub catalog: &'a Catalog,
    pub gateway: &'a Gateway,
    pub model_id: &'a str,
    pub rng_seed: u64,
    pub max_fewshots: usize,
}

impl Generator<'_> {
    fn example(&self, instruction: &Instruction) -> Result<FewshotExample> {
        let pc = self.catalog.pc(&instruction.pc_id).ok_or_else(|| dangling("pc", &instruction.pc_id))?;
        let sa = self.catalog.sa(&instruction.sa_id).ok_or_else(|| dangling("sa", &instruction.sa_id))?;
        Ok(FewshotExample {
            pc_definition: pc.definition.clone(),
            sa_definition: sa.definition.clone(),
            instruction: instruction.text.clone(),
        })
    }

    /// One application of the cascade's generation step. Returns the
    /// instruction and the number of gateway calls made (1 or 2).
    pub fn generate_instruction(
        &self,
        pc: &ProductCategory,
        sa: &StructuredAttribute,
        fewshots: &[Instruction],
    ) -> (Result<Instruction>, usize) {
        let prepared = (|| {
            if fewshots.is_empty() {
                return Err(Error::Argument("no few-shot instructions".into()));
            }
            let examples = fewshots
                .iter()
                .map(|f| {
                    f.check()?;
                    self.example(f)
                })
                .collect::<Result<Vec<_>>>()?;
            render_instruction_prompt(&pc.definition, &sa.definition, &examples, self.max_fewshots)
        })();
        let prompt = match prepared {
            Ok(p) => p,
            Err(e) => return (Err(e), 0),
        };

        let mut calls = 0;
        let mut last_output = String::new();
        for attempt in 0..2 {
            let text = if attempt == 0 {
                prompt.text.clone()
            } else {
                format!("{}{FORMAT_REMINDER}", prompt.text)
            };
            calls += 1;
            let response = match self
                .gateway
                .complete(&LlmRequest::new(text, self.model_id, Purpose::InstructionGen))
            {
                Ok(r) => r,
                Err(e) => return (Err(e), calls),
            };
            if let Some(body) = parse_instruction_output(&response.text) {
                let iteration = 1 + fewshots.iter().map(|f| f.iteration).max().unwrap_or(0);
                let instruction = Instruction {
                    pc_id: pc.id.clone(),
                    sa_id: sa.id.clone(),
                    text: body,
                    iteration,
                    lineage: Some(Lineage {
                        fewshots: fewshots.iter().map(Instruction::as_fewshot_ref).collect(),
                        model_id: self.model_id.to_string(),
                        rng_seed: self.rng_seed,
                    }),
                    created_at: response.created_at,
                };
                return (Ok(instruction), calls);
            }
            last_output = response.text;
        }
        let snippet: String = last_output.chars().take(120).collect();
        (
            Err(Error::Generation {
                pc_id: pc.id.clone(),
                sa_id: sa.id.clone(),
                reason: format!("no `instruction:` field in output: {snippet:?}"),
            }),
            calls,
        )
    }
}

fn dangling(kind: &'static str, id: &str) -> Error {
    IntegrityError::DanglingReference {
        from: "cascade".into(),
        kind,
        id: id.to_string(),
        location: None,
    }
    .into()
}

/// A deterministic stream per iteration, so resuming after iteration k does
/// not depend on how many draws iterations 1..k consumed.
fn iteration_rng(seed: u64, iteration: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(iteration));
    rng
}

struct Job {
    pair: PairKey,
    fewshots: Vec<Instruction>,
}

fn fingerprint(config: &CascadeConfig, seeds: &SeedSet, targets: &[PairKey]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(config).unwrap_or_default());
    for seed in seeds.instructions() {
        hasher.update(serde_json::to_vec(&(&seed.pc_id, &seed.sa_id, &seed.text)).unwrap_or_default());
    }
    for t in targets {
        hasher.update(serde_json::to_vec(t).unwrap_or_default());
    }
    hex::encode(hasher.finalize())
}

fn check_inputs(catalog: &Catalog, seeds: &SeedSet, config: &CascadeConfig, targets: &[PairKey]) -> Result<()> {
    config.validate()?;
    if seeds.len() != config.fewshots {
        return Err(Error::Config(format!(
            "seed set has {} instructions but M = {}",
            seeds.len(),
            config.fewshots
        )));
    }
    seeds.check_against(catalog)?;
    let defined = |kind: &'static str, id: &str, definition: Option<&str>| match definition {
        None => Err(dangling(kind, id)),
        Some(d) if d.trim().is_empty() => Err(Error::Argument(format!("{kind} `{id}` has no definition"))),
        Some(_) => Ok(()),
    };
    for seed in seeds.instructions() {
        defined("pc", &seed.pc_id, catalog.pc(&seed.pc_id).map(|p| p.definition.as_str()))?;
        defined("sa", &seed.sa_id, catalog.sa(&seed.sa_id).map(|s| s.definition.as_str()))?;
    }
    for t in targets {
        defined("pc", &t.pc_id, catalog.pc(&t.pc_id).map(|p| p.definition.as_str()))?;
        defined("sa", &t.sa_id, catalog.sa(&t.sa_id).map(|s| s.definition.as_str()))?;
    }
    if config.iterations >= 2 {
        for p in catalog.pcs() {
            if p.definition.trim().is_empty() {
                return Err(Error::Argument(format!("pc `{}` has no definition", p.id)));
            }
        }
    }
    Ok(())
}

/// Runs the full cascade over `targets`, optionally persisting each
/// completed iteration and resuming from whatever `store` already holds.
pub fn run_cascade(
    catalog: &Catalog,
    seeds: &SeedSet,
    config: &CascadeConfig,
    targets: &[PairKey],
    gateway: &Gateway,
    store: Option<&InstructionStore>,
) -> Result<CascadeOutcome> {
    let targets: Vec<PairKey> = targets.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    check_inputs(catalog, seeds, config, &targets)?;
    let fp = fingerprint(config, seeds, &targets);
    let restored = match store {
        Some(s) => s.load(&fp)?,
        None => Vec::new(),
    };
    let resumed_iterations = restored.len().min(config.iterations as usize) as u32;

    let generator = Generator {
        catalog,
        gateway,
        model_id: &config.model_id,
        rng_seed: config.rng_seed,
        max_fewshots: config.fewshots,
    };
    let sa_ids: BTreeSet<&str> = targets.iter().map(|t| t.sa_id.as_str()).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(gateway.max_in_flight())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let mut set = InstructionSet::default();
    let mut failures = Vec::new();
    let mut generation_calls = 0;
    let mut restored = restored.into_iter();

    for iteration in 1..=config.iterations {
        if let Some((snapshot, previous_failures)) = restored.next() {
            failures.extend(previous_failures);
            set.snapshots.insert(iteration, snapshot);
            continue;
        }

        let mut rng = iteration_rng(config.rng_seed, iteration);
        let mut iteration_failures = Vec::new();
        let mut jobs = Vec::new();
        if iteration == 1 {
            let seed_shots = seeds.instructions().to_vec();
            if config.iterations == 1 {
                for pair in &targets {
                    jobs.push(Job { pair: pair.clone(), fewshots: seed_shots.clone() });
                }
            } else {
                for sa in &sa_ids {
                    for pc in sample_pcs(catalog, config.fewshots, &mut rng)? {
                        jobs.push(Job { pair: PairKey::new(pc, *sa), fewshots: seed_shots.clone() });
                    }
                }
            }
        } else {
            let mut by_sa: BTreeMap<&str, Snapshot> = BTreeMap::new();
            for (key, instruction) in &set.snapshots[&(iteration - 1)] {
                by_sa.entry(key.sa_id.as_str()).or_default().insert(key.clone(), instruction.clone());
            }
            let empty = Snapshot::new();
            for pair in &targets {
                let previous = by_sa.get(pair.sa_id.as_str()).unwrap_or(&empty);
                match select_fewshot(previous, &pair.sa_id, config.fewshots, &mut rng) {
                    Ok(fewshots) => jobs.push(Job { pair: pair.clone(), fewshots }),
                    Err(e) => iteration_failures.push(GenerationFailure {
                        pc_id: pair.pc_id.clone(),
                        sa_id: pair.sa_id.clone(),
                        iteration,
                        reason: e.to_string(),
                    }),
                }
            }
        }

        let results: Vec<(Result<Instruction>, usize)> = pool.install(|| {
            jobs.par_iter()
                .map(|job| {
                    let pc = catalog.pc(&job.pair.pc_id).expect("checked");
                    let sa = catalog.sa(&job.pair.sa_id).expect("checked");
                    generator.generate_instruction(pc, sa, &job.fewshots)
                })
                .collect()
        });

        let mut snapshot = Snapshot::new();
        for (job, (result, calls)) in jobs.iter().zip(results) {
            generation_calls += calls;
            match result {
                Ok(instruction) => {
                    snapshot.insert(job.pair.clone(), instruction);
                }
                Err(e) => iteration_failures.push(GenerationFailure {
                    pc_id: job.pair.pc_id.clone(),
                    sa_id: job.pair.sa_id.clone(),
                    iteration,
                    reason: e.to_string(),
                }),
            }
        }
        log::info!(
            "iteration {iteration}: {} instruction(s), {} failure(s)",
            snapshot.len(),
            iteration_failures.len()
        );
        if let Some(store) = store {
            store.append_iteration(iteration, &fp, &snapshot, &iteration_failures)?;
        }
        failures.extend(iteration_failures);
        set.snapshots.insert(iteration, snapshot);
    }

    Ok(CascadeOutcome {
        instructions: set,
        failures,
        generation_calls,
        resumed_iterations,
    })
}
