//! Pipeline configuration, loadable from a single TOML file.
//!
//! Every field has a default except the dataset path, so a config file (or
//! the CLI) only has to name the CSV to get a working run. The API key is
//! never stored in the file; it is read from the environment variable named
//! by `gateway.api_key_env`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corrupt::{CorruptionSpec, ErrorType};
use crate::error::{DqError, Result};
use crate::gateway::{ChatGateway, GatewayMode, HttpTransport, ScriptedStub};
use crate::rules::{EnrichOptions, GenOptions, RuleType};
use crate::screen::{DetectorConfig, DEFAULT_ROW_THRESHOLD};
use crate::validator::{CodegenOptions, SandboxConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// CSV to assess. The only setting without a default.
    pub dataset: Option<PathBuf>,
    /// Directory artifacts are written to.
    pub out_dir: PathBuf,
    /// Master seed; every stage derives its randomness from it.
    pub seed: u64,
    /// Rule types to run; empty means all of them.
    pub rule_types: Vec<String>,
    /// Generation rounds per rule type.
    pub iterations: usize,
    /// Minimum rules requested per generation prompt.
    pub min_rules: usize,
    /// Flagged cells required before a row counts as an outlier.
    pub tau: usize,
    /// When false, outlier rows are not screened away before the
    /// language-model stages (ablation toggle).
    pub inlier_filter: bool,
    /// When false, no retrieved examples are inserted into prompts
    /// (ablation toggle).
    pub domain_fewshot: bool,
    /// Clean/noisy example values per column in enrichment compare tables.
    pub contrast_k: usize,
    /// Retrieved example cards or scripts per prompt.
    pub fewshot_k: usize,
    /// Directory of reference CSVs rules may consult.
    pub ref_dir: Option<PathBuf>,
    /// Directory of domain example JSON files for retrieval.
    pub example_repo_dir: Option<PathBuf>,
    /// Free-text background knowledge inserted into generation prompts.
    pub knowledge: Option<String>,
    pub gateway: GatewayConfig,
    pub detector: DetectorConfig,
    pub corruption: CorruptionConfig,
    pub sandbox: SandboxSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset: None,
            out_dir: PathBuf::from("dq_out"),
            seed: 0,
            rule_types: Vec::new(),
            iterations: 1,
            min_rules: 15,
            tau: DEFAULT_ROW_THRESHOLD,
            inlier_filter: true,
            domain_fewshot: true,
            contrast_k: 5,
            fewshot_k: 2,
            ref_dir: None,
            example_repo_dir: None,
            knowledge: None,
            gateway: GatewayConfig::default(),
            detector: DetectorConfig::default(),
            corruption: CorruptionConfig::default(),
            sandbox: SandboxSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    /// OpenAI-compatible chat completions base URL.
    pub endpoint: String,
    pub rule_model: String,
    pub code_model: String,
    /// Embedding model; hashing fallback when unset.
    pub embed_model: Option<String>,
    /// Response cache; doubles as the replay source.
    pub cache_dir: PathBuf,
    /// Scripted responses for stub mode.
    pub fixture_path: Option<PathBuf>,
    pub temperature_rules: f64,
    pub temperature_code: f64,
    pub max_in_flight: usize,
    pub retries: usize,
    /// Environment variable holding the API key.
    pub api_key_env: String,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            mode: GatewayMode::Replay,
            endpoint: "http://localhost:8000/v1".to_string(),
            rule_model: "gemma-3-12b-it".to_string(),
            code_model: "qwen2.5-coder-14b-instruct".to_string(),
            embed_model: None,
            cache_dir: PathBuf::from("llm_cache"),
            fixture_path: None,
            temperature_rules: 0.7,
            temperature_code: 0.2,
            max_in_flight: 4,
            retries: 3,
            api_key_env: "DQKIT_API_KEY".to_string(),
        }
    }
}

/// Corruption settings; mirrors `CorruptionSpec` with the seed left to the
/// master seed unless overridden.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    pub error_types: Vec<ErrorType>,
    pub rate: f64,
    /// Separate corruption seed; falls back to the master seed.
    pub seed: Option<u64>,
    pub total_budget: bool,
    pub gaussian_multiplier: f64,
    pub placeholders: Vec<String>,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        let base = CorruptionSpec::new(ErrorType::ALL.to_vec(), 0.1, 0);
        CorruptionConfig {
            error_types: base.error_types,
            rate: base.rate,
            seed: None,
            total_budget: base.total_budget,
            gaussian_multiplier: base.gaussian_multiplier,
            placeholders: base.placeholders,
        }
    }
}

impl CorruptionConfig {
    pub fn to_spec(&self, master_seed: u64) -> CorruptionSpec {
        CorruptionSpec {
            error_types: self.error_types.clone(),
            rate: self.rate,
            seed: self.seed.unwrap_or(master_seed),
            total_budget: self.total_budget,
            gaussian_multiplier: self.gaussian_multiplier,
            placeholders: self.placeholders.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxSettings {
    pub python: String,
    pub timeout_secs: u64,
    pub max_attempts: usize,
    pub smoke_rows: usize,
}

impl Default for SandboxSettings {
    fn default() -> Self {
        SandboxSettings {
            python: "python3".to_string(),
            timeout_secs: 30,
            max_attempts: 3,
            smoke_rows: 5,
        }
    }
}

impl PipelineConfig {
    /// Loads and validates a TOML config file.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DqError::io(path.display().to_string(), e))?;
        let config: PipelineConfig =
            toml::from_str(&text).map_err(|e| DqError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(DqError::Config("iterations must be at least 1".into()));
        }
        if self.tau == 0 {
            return Err(DqError::Config("tau must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.corruption.rate) {
            return Err(DqError::Config(format!(
                "corruption rate {} is outside [0, 1]",
                self.corruption.rate
            )));
        }
        self.enabled_rule_types()?;
        Ok(())
    }

    /// The rule types this run generates, in taxonomy order.
    pub fn enabled_rule_types(&self) -> Result<Vec<RuleType>> {
        if self.rule_types.is_empty() {
            return Ok(RuleType::ALL.to_vec());
        }
        let mut parsed = Vec::new();
        for name in &self.rule_types {
            let rule_type: RuleType = name
                .parse()
                .map_err(|e: String| DqError::Config(e))?;
            if !parsed.contains(&rule_type) {
                parsed.push(rule_type);
            }
        }
        // Keep taxonomy order regardless of how the list was written.
        Ok(RuleType::ALL
            .into_iter()
            .filter(|t| parsed.contains(t))
            .collect())
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| DqError::Config("no dataset configured".into()))
    }

    /// Builds the chat gateway for the configured mode.
    pub fn build_gateway(&self) -> Result<ChatGateway> {
        let g = &self.gateway;
        let gateway = match g.mode {
            GatewayMode::Live => {
                let api_key = std::env::var(&g.api_key_env).ok();
                let transport = HttpTransport::new(g.endpoint.clone(), api_key)?;
                ChatGateway::live(
                    Box::new(transport),
                    Some(g.cache_dir.clone()),
                    g.embed_model.clone(),
                )
            }
            GatewayMode::Replay => ChatGateway::replay(g.cache_dir.clone()),
            GatewayMode::Stub => {
                let path = g.fixture_path.as_deref().ok_or_else(|| {
                    DqError::Config("stub mode requires gateway.fixture_path".into())
                })?;
                ChatGateway::stub(ScriptedStub::from_fixture_file(path)?)
            }
        };
        Ok(gateway
            .with_retries(g.retries)
            .with_in_flight_cap(g.max_in_flight))
    }

    pub fn gen_options(&self) -> GenOptions {
        GenOptions {
            iterations: self.iterations,
            min_rules: self.min_rules,
            temperature: self.gateway.temperature_rules,
            model: self.gateway.rule_model.clone(),
            seed: self.seed,
            knowledge: self.knowledge.clone(),
            ..GenOptions::default()
        }
    }

    pub fn enrich_options(&self) -> EnrichOptions {
        EnrichOptions {
            model: self.gateway.rule_model.clone(),
            sample_seed: self.seed,
            ..EnrichOptions::default()
        }
    }

    pub fn codegen_options(&self) -> CodegenOptions {
        CodegenOptions {
            model: self.gateway.code_model.clone(),
            temperature: self.gateway.temperature_code,
            max_attempts: self.sandbox.max_attempts,
            smoke_rows: self.sandbox.smoke_rows,
        }
    }

    pub fn sandbox_config(&self) -> SandboxConfig {
        SandboxConfig {
            python: self.sandbox.python.clone(),
            timeout: Duration::from_secs(self.sandbox.timeout_secs),
            ref_dir: self.ref_dir.clone(),
        }
    }

    pub fn corruption_spec(&self) -> CorruptionSpec {
        self.corruption.to_spec(self.seed)
    }
}
