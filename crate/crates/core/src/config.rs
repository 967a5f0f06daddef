//! Run configuration: one TOML file, with secrets from the environment and
//! command-line flags taking precedence over both.
//!
//! ```toml
//! catalog = "catalog.jsonl"
//! seeds = "seeds.jsonl"
//! run_dir = "runs/toy"
//! prices = "prices.toml"
//!
//! [backend]
//! kind = "mock"            # mock | http | replay
//! script = "mock.json"     # mock only
//! base_url = "https://host/v1"
//! api_key_env = "LLM_API_KEY"
//! max_in_flight = 8
//!
//! [cascade]
//! iterations = 2
//! fewshots = 6
//! seed = 0
//! model_id = "generator"
//!
//! [classify]
//! mode = "apc"
//! task = "correctness"
//! model_id = "classifier"
//! rules = "rules.toml"
//! effort_minutes = 2.0
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeConfig, DEFAULT_FEWSHOTS, DEFAULT_ITERATIONS};
use crate::catalog::Task;
use crate::classifier::PromptMode;
use crate::error::{Error, Result};
use crate::gateway::{
    Gateway, HttpBackend, HttpConfig, MockBackend, MockScript, PriceTable, ReplayCache,
};
use crate::templates::RuleBook;

pub const DEFAULT_API_KEY_ENV: &str = "PROMPT_CASCADE_API_KEY";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Mock,
    Http,
    /// Serve only from the replay cache; a miss is an error.
    Replay,
}

impl std::str::FromStr for BackendChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mock" => Ok(Self::Mock),
            "http" => Ok(Self::Http),
            "replay" => Ok(Self::Replay),
            other => Err(Error::Config(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSettings {
    #[serde(default)]
    pub kind: BackendChoice,
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.into()
}

fn default_in_flight() -> usize {
    8
}

fn default_timeout() -> u64 {
    120
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            kind: BackendChoice::Mock,
            script: None,
            base_url: None,
            api_key_env: default_key_env(),
            max_in_flight: default_in_flight(),
            timeout_secs: default_timeout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeSettings {
    #[serde(default = "default_iterations")]
    pub iterations: u32,
    #[serde(default = "default_fewshots")]
    pub fewshots: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_generator")]
    pub model_id: String,
}

fn default_iterations() -> u32 {
    DEFAULT_ITERATIONS
}

fn default_fewshots() -> usize {
    DEFAULT_FEWSHOTS
}

fn default_generator() -> String {
    "generator".into()
}

impl Default for CascadeSettings {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            fewshots: DEFAULT_FEWSHOTS,
            seed: 0,
            model_id: default_generator(),
        }
    }
}

impl CascadeSettings {
    pub fn to_config(&self) -> CascadeConfig {
        CascadeConfig {
            iterations: self.iterations,
            fewshots: self.fewshots,
            rng_seed: self.seed,
            model_id: self.model_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifySettings {
    #[serde(default = "default_mode")]
    pub mode: PromptMode,
    #[serde(default = "default_task")]
    pub task: Task,
    #[serde(default = "default_classifier")]
    pub model_id: String,
    #[serde(default)]
    pub rules: Option<PathBuf>,
    #[serde(default)]
    pub effort_minutes: Option<f64>,
    /// Fail instead of defaulting to the positive class on unparseable output.
    #[serde(default)]
    pub hard_fail: bool,
}

fn default_mode() -> PromptMode {
    PromptMode::Apc
}

fn default_task() -> Task {
    Task::Correctness
}

fn default_classifier() -> String {
    "classifier".into()
}

impl Default for ClassifySettings {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            task: default_task(),
            model_id: default_classifier(),
            rules: None,
            effort_minutes: None,
            hard_fail: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub seeds: Option<PathBuf>,
    #[serde(default)]
    pub run_dir: Option<PathBuf>,
    #[serde(default)]
    pub prices: Option<PathBuf>,
    #[serde(default)]
    pub backend: BackendSettings,
    #[serde(default)]
    pub cascade: CascadeSettings,
    #[serde(default)]
    pub classify: ClassifySettings,
}

fn resolve(base: &Path, path: &mut Option<PathBuf>) {
    if let Some(p) = path {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut config.catalog,
            &mut config.seeds,
            &mut config.run_dir,
            &mut config.prices,
            &mut config.backend.script,
            &mut config.classify.rules,
        ] {
            resolve(base, p);
        }
        Ok(config)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.run_dir.clone().unwrap_or_else(|| PathBuf::from("run"))
    }

    pub fn catalog_path(&self) -> Result<&Path> {
        self.catalog
            .as_deref()
            .ok_or_else(|| Error::Config("no catalog path configured".into()))
    }

    /// Every configured input path must exist.
    pub fn check_paths(&self) -> Result<()> {
        let inputs = [
            ("catalog", &self.catalog),
            ("seeds", &self.seeds),
            ("prices", &self.prices),
            ("backend.script", &self.backend.script),
            ("classify.rules", &self.classify.rules),
        ];
        for (name, path) in inputs {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(Error::Config(format!("{name} path {} does not exist", p.display())));
                }
            }
        }
        if self.backend.max_in_flight == 0 {
            return Err(Error::Config("backend.max_in_flight must be at least 1".into()));
        }
        Ok(())
    }

    pub fn rule_book(&self) -> Result<RuleBook> {
        match &self.classify.rules {
            None => Ok(RuleBook::default()),
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read rules {}: {e}", path.display())))?;
                RuleBook::from_toml(&text)
            }
        }
    }

    pub fn price_table(&self) -> Result<Option<PriceTable>> {
        match &self.prices {
            None => Ok(None),
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read prices {}: {e}", path.display())))?;
                PriceTable::from_toml(&text).map(Some)
            }
        }
    }

    /// Builds the gateway, with the replay cache under `<run_dir>/cache`.
    pub fn gateway(&self) -> Result<Gateway> {
        let cache = ReplayCache::open(self.run_dir().join("cache"))?;
        let settings = &self.backend;
        let gateway = match settings.kind {
            BackendChoice::Replay => Gateway::replay_only(cache),
            BackendChoice::Mock => {
                let path = settings
                    .script
                    .as_ref()
                    .ok_or_else(|| Error::Config("mock backend needs backend.script".into()))?;
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read mock script {}: {e}", path.display())))?;
                Gateway::new(MockBackend::from_script(MockScript::from_json(&text)?)).with_cache(cache)
            }
            BackendChoice::Http => {
                let base_url = settings
                    .base_url
                    .clone()
                    .ok_or_else(|| Error::Config("http backend needs backend.base_url".into()))?;
                let api_key = std::env::var(&settings.api_key_env).ok().filter(|k| !k.is_empty());
                if api_key.is_none() {
                    log::warn!("environment variable {} is not set; sending no credentials", settings.api_key_env);
                }
                Gateway::new(HttpBackend::new(HttpConfig {
                    base_url,
                    api_key,
                    timeout_secs: settings.timeout_secs,
                }))
                .with_cache(cache)
            }
        };
        Ok(gateway.with_max_in_flight(settings.max_in_flight))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_setting() {
        let config = RunConfig::from_toml("").unwrap();
        assert_eq!(config.cascade.iterations, 2);
        assert_eq!(config.cascade.fewshots, 6);
        assert_eq!(config.classify.mode, PromptMode::Apc);
        assert_eq!(config.backend.max_in_flight, 8);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "catalog = \"c.jsonl\"\n[cascade]\niterations = 3\n").unwrap();
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.catalog.unwrap(), dir.path().join("c.jsonl"));
        assert_eq!(config.cascade.iterations, 3);
    }

    #[test]
    fn unknown_keys_and_missing_paths_are_config_errors() {
        assert!(matches!(RunConfig::from_toml("[cascade]\nt = 2\n"), Err(Error::Config(_))));
        let config = RunConfig {
            catalog: Some("/nonexistent/catalog.jsonl".into()),
            ..Default::default()
        };
        assert!(matches!(config.check_paths(), Err(Error::Config(_))));
    }
}
