//! PC-SA instructions, human-authored (iteration 0) or generated.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, PairKey};
use crate::error::{Error, IntegrityError, Location, Result};

/// Reference to an instruction used as a few-shot example.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FewshotRef {
    pub pc_id: String,
    pub sa_id: String,
    pub iteration: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub fewshots: Vec<FewshotRef>,
    pub model_id: String,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub pc_id: String,
    pub sa_id: String,
    pub text: String,
    /// 0 for human seeds.
    pub iteration: u32,
    /// Absent exactly when the instruction is human-authored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lineage: Option<Lineage>,
    pub created_at: DateTime<Utc>,
}

impl Instruction {
    pub fn seed(pc_id: impl Into<String>, sa_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            pc_id: pc_id.into(),
            sa_id: sa_id.into(),
            text: text.into(),
            iteration: 0,
            lineage: None,
            created_at: DateTime::<Utc>::UNIX_EPOCH,
        }
    }

    pub fn key(&self) -> PairKey {
        PairKey::new(&self.pc_id, &self.sa_id)
    }

    pub fn as_fewshot_ref(&self) -> FewshotRef {
        FewshotRef {
            pc_id: self.pc_id.clone(),
            sa_id: self.sa_id.clone(),
            iteration: self.iteration,
        }
    }

    pub fn is_human(&self) -> bool {
        self.iteration == 0
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::Argument(format!("instruction for {} has empty text", self.key())));
        }
        if self.is_human() != self.lineage.is_none() {
            return Err(Error::Argument(format!(
                "instruction for {} at iteration {} has inconsistent lineage",
                self.key(),
                self.iteration
            )));
        }
        Ok(())
    }
}

/// The M human-authored instructions the cascade starts from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedSet {
    seeds: Vec<Instruction>,
}

impl SeedSet {
    /// Requires exactly `m` iteration-0 instructions over distinct pairs.
    pub fn new(seeds: Vec<Instruction>, m: usize) -> Result<Self> {
        if seeds.len() != m {
            return Err(Error::Config(format!(
                "seed set has {} instructions, expected M = {m}",
                seeds.len()
            )));
        }
        let mut pairs = BTreeSet::new();
        for seed in &seeds {
            if seed.iteration != 0 {
                return Err(Error::Config(format!("seed {} is not at iteration 0", seed.key())));
            }
            seed.check()?;
            if !pairs.insert(seed.key()) {
                return Err(Error::Config(format!("seed pair {} appears twice", seed.key())));
            }
        }
        Ok(Self { seeds })
    }

    /// Takes the first `m` seeds from a larger pool, in file order.
    pub fn first(pool: &[Instruction], m: usize) -> Result<Self> {
        if pool.len() < m {
            return Err(Error::Config(format!(
                "seed file has {} instructions, need at least M = {m}",
                pool.len()
            )));
        }
        Self::new(pool[..m].to_vec(), m)
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.seeds
    }

    /// Every seed's PC and SA must exist in the catalog.
    pub fn check_against(&self, catalog: &Catalog) -> Result<()> {
        for seed in &self.seeds {
            if catalog.pc(&seed.pc_id).is_none() {
                return Err(IntegrityError::DanglingReference {
                    from: "seed instruction".into(),
                    kind: "pc",
                    id: seed.pc_id.clone(),
                    location: None,
                }
                .into());
            }
            if catalog.sa(&seed.sa_id).is_none() {
                return Err(IntegrityError::DanglingReference {
                    from: "seed instruction".into(),
                    kind: "sa",
                    id: seed.sa_id.clone(),
                    location: None,
                }
                .into());
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct SeedRecord {
    pc_id: String,
    sa_id: String,
    text: String,
}

/// Reads a seed file: one `{"pc_id", "sa_id", "text"}` object per line.
pub fn load_seed_file(path: impl AsRef<Path>) -> Result<Vec<Instruction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|_| Error::Config(format!("cannot read seed file {}", path.display())))?;
    let mut seeds = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SeedRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            location: Location {
                file: path.to_path_buf(),
                line: i + 1,
            },
            message: e.to_string(),
        })?;
        seeds.push(Instruction::seed(record.pc_id, record.sa_id, record.text));
    }
    Ok(seeds)
}
