//! Append-only instruction store with one manifest per completed iteration.
//!
//! Layout under the store directory:
//!
//! ```text
//! instructions.jsonl      every generated instruction, grouped by iteration
//! iteration-1.json        manifest: byte range, record count, failures
//! iteration-2.json
//! ```
//!
//! An iteration counts as complete only once its manifest exists. Bytes past
//! the last manifest's end offset are a torn write and are discarded.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::PairKey;
use crate::error::{Error, Result};
use crate::instruction::Instruction;

pub const RECORDS_FILE: &str = "instructions.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub pc_id: String,
    pub sa_id: String,
    pub iteration: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationManifest {
    pub iteration: u32,
    pub config_fingerprint: String,
    pub records: usize,
    pub start_offset: u64,
    pub end_offset: u64,
    /// SHA-256 of the iteration's bytes in the records file.
    pub sha256: String,
    pub failures: Vec<GenerationFailure>,
}

pub type Snapshot = BTreeMap<PairKey, Instruction>;

#[derive(Debug, Clone)]
pub struct InstructionStore {
    dir: PathBuf,
}

impl InstructionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)
            .map_err(|e| Error::io(format!("creating store {}", dir.display()), e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn records_path(&self) -> PathBuf {
        self.dir.join(RECORDS_FILE)
    }

    fn manifest_path(&self, iteration: u32) -> PathBuf {
        self.dir.join(format!("iteration-{iteration}.json"))
    }

    /// Manifests of completed iterations, contiguous from iteration 1.
    pub fn manifests(&self) -> Result<Vec<IterationManifest>> {
        let mut manifests = Vec::new();
        for iteration in 1.. {
            let path = self.manifest_path(iteration);
            let bytes = match fs::read(&path) {
                Ok(b) => b,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => break,
                Err(e) => return Err(Error::io(format!("reading {}", path.display()), e)),
            };
            manifests.push(
                serde_json::from_slice(&bytes)
                    .map_err(|e| Error::json(format!("manifest {}", path.display()), e))?,
            );
        }
        Ok(manifests)
    }

    /// Completed iterations written under `fingerprint`, with their failures.
    pub fn load(&self, fingerprint: &str) -> Result<Vec<(Snapshot, Vec<GenerationFailure>)>> {
        let manifests = self.manifests()?;
        if manifests.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(m) = manifests.iter().find(|m| m.config_fingerprint != fingerprint) {
            return Err(Error::Config(format!(
                "store {} holds iteration {} from a different configuration",
                self.dir.display(),
                m.iteration
            )));
        }
        let bytes = fs::read(self.records_path())
            .map_err(|e| Error::io(format!("reading {}", self.records_path().display()), e))?;
        manifests
            .into_iter()
            .map(|m| {
                let range = bytes
                    .get(m.start_offset as usize..m.end_offset as usize)
                    .ok_or_else(|| {
                        Error::Config(format!("records file is shorter than manifest {}", m.iteration))
                    })?;
                if hex::encode(Sha256::digest(range)) != m.sha256 {
                    return Err(Error::Config(format!(
                        "iteration {} records do not match their manifest checksum",
                        m.iteration
                    )));
                }
                let mut snapshot = Snapshot::new();
                for line in range.split(|b| *b == b'\n').filter(|l| !l.is_empty()) {
                    let instruction: Instruction = serde_json::from_slice(line)
                        .map_err(|e| Error::json("instruction record", e))?;
                    snapshot.insert(instruction.key(), instruction);
                }
                Ok((snapshot, m.failures))
            })
            .collect()
    }

    /// Appends one completed iteration and then writes its manifest.
    pub fn append_iteration(
        &self,
        iteration: u32,
        fingerprint: &str,
        snapshot: &Snapshot,
        failures: &[GenerationFailure],
    ) -> Result<IterationManifest> {
        let previous = self.manifests()?;
        if previous.len() as u32 + 1 != iteration {
            return Err(Error::Argument(format!(
                "cannot append iteration {iteration} after {} completed iteration(s)",
                previous.len()
            )));
        }
        let start_offset = previous.last().map_or(0, |m| m.end_offset);

        let mut buf = Vec::new();
        for instruction in snapshot.values() {
            serde_json::to_writer(&mut buf, instruction)
                .map_err(|e| Error::json("instruction record", e))?;
            buf.push(b'\n');
        }

        let path = self.records_path();
        let io = |e| Error::io(format!("writing {}", path.display()), e);
        let mut file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io)?;
        file.set_len(start_offset).map_err(io)?;
        file.seek(SeekFrom::Start(start_offset)).map_err(io)?;
        file.write_all(&buf).map_err(io)?;
        file.sync_all().map_err(io)?;

        let manifest = IterationManifest {
            iteration,
            config_fingerprint: fingerprint.to_string(),
            records: snapshot.len(),
            start_offset,
            end_offset: start_offset + buf.len() as u64,
            sha256: hex::encode(Sha256::digest(&buf)),
            failures: failures.to_vec(),
        };
        let manifest_path = self.manifest_path(iteration);
        let tmp = manifest_path.with_extension("json.tmp");
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json("manifest", e))?;
        fs::write(&tmp, json).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        fs::rename(&tmp, &manifest_path)
            .map_err(|e| Error::io(format!("writing {}", manifest_path.display()), e))?;
        Ok(manifest)
    }
}
