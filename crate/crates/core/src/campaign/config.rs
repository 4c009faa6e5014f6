//! TOML campaign configuration with `[campaign]`, `[generator]`, `[llm]`
//! and `[thresholds]` sections, plus dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::WeightFloor;
use crate::env::{Environment, COOP_NAV};
use crate::error::ConfigError;
use crate::generator::{PercentileMethod, ALPHA_MAX};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Multi-scale generation: LLM for low-potential seeds, random mutation
    /// for the rest, adaptive alpha.
    Llmtester,
    /// Every seed goes to the LLM.
    LlmtesterNoMs,
    /// Sensitivity-guided corpus with random mutation only.
    Mdpfuzz,
    /// Fresh uniform samples, no corpus.
    Random,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Llmtester, Method::LlmtesterNoMs, Method::Mdpfuzz, Method::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Llmtester => "llmtester",
            Method::LlmtesterNoMs => "llmtester-no-ms",
            Method::Mdpfuzz => "mdpfuzz",
            Method::Random => "random",
        }
    }

    pub fn uses_llm(self) -> bool {
        matches!(self, Method::Llmtester | Method::LlmtesterNoMs)
    }

    pub fn uses_corpus(self) -> bool {
        self != Method::Random
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Heuristic,
    Mock,
    Http,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Heuristic => "heuristic",
            BackendKind::Mock => "mock",
            BackendKind::Http => "http",
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "heuristic" => Ok(BackendKind::Heuristic),
            "mock" => Ok(BackendKind::Mock),
            "http" => Ok(BackendKind::Http),
            _ => Err(ConfigError::Invalid(format!("unknown backend `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSection {
    pub environment: String,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Number of rollouts (tests) to run.
    pub budget: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_frames: Option<u32>,
    #[serde(default = "default_corpus_size")]
    pub corpus_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_capacity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_checkpoint")]
    pub checkpoint_every: u64,
    #[serde(default = "default_draws")]
    pub sensitivity_draws: usize,
    #[serde(default = "default_diversity")]
    pub diversity_intervals: u32,
    #[serde(default = "default_freshness")]
    pub freshness_intervals: u32,
    #[serde(default = "default_skips")]
    pub max_consecutive_skips: u32,
    /// JSON array of parameter vectors used instead of random initialization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_scenarios: Option<PathBuf>,
    /// Failure rate over the last N tests instead of the whole campaign.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_rate_window: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Random-mutation half-width as a fraction of each dimension's range.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub percentile: PercentileMethod,
    #[serde(default)]
    pub weight_floor: WeightFloor,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self {
            alpha: None,
            beta: None,
            delta: None,
            amplitude: default_amplitude(),
            percentile: PercentileMethod::default(),
            weight_floor: WeightFloor::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    #[serde(default = "default_backend")]
    pub backend: BackendKind,
    /// Prompt template file; the shipped template for the environment if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_feedback")]
    pub feedback_capacity: usize,
    #[serde(default = "default_parse_attempts")]
    pub parse_attempts: usize,
    /// JSON array of canned replies for the mock backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_responses: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub mock_cycle: bool,
    #[serde(default)]
    pub experience: Vec<String>,
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            backend: default_backend(),
            template: None,
            base_url: default_base_url(),
            model: default_model(),
            temperature: default_temperature(),
            timeout_secs: default_timeout(),
            feedback_capacity: default_feedback(),
            parse_attempts: default_parse_attempts(),
            mock_responses: None,
            mock_cycle: true,
            experience: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSection {
    /// Reward-increase threshold; derived from the initial corpus if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    /// Fraction of the initial corpus reward range used when `reward` is unset.
    #[serde(default = "default_reward_fraction")]
    pub reward_fraction: f64,
    /// Normalized-distance threshold.
    #[serde(default = "default_distance")]
    pub distance: f64,
}

impl Default for ThresholdSection {
    fn default() -> Self {
        Self { reward: None, reward_fraction: default_reward_fraction(), distance: default_distance() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub campaign: CampaignSection,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub thresholds: ThresholdSection,
}

fn default_method() -> Method {
    Method::Llmtester
}
fn default_corpus_size() -> usize {
    50
}
fn default_checkpoint() -> u64 {
    100
}
fn default_draws() -> usize {
    1
}
fn default_diversity() -> u32 {
    10
}
fn default_freshness() -> u32 {
    5
}
fn default_skips() -> u32 {
    20
}
fn default_amplitude() -> f64 {
    0.05
}
fn default_backend() -> BackendKind {
    BackendKind::Heuristic
}
fn default_base_url() -> String {
    "https://api.openai.com/v1".to_string()
}
fn default_model() -> String {
    "gpt-4o-mini".to_string()
}
fn default_temperature() -> f64 {
    1.0
}
fn default_timeout() -> u64 {
    60
}
fn default_feedback() -> usize {
    crate::llm::DEFAULT_FEEDBACK_CAPACITY
}
fn default_parse_attempts() -> usize {
    crate::llm::DEFAULT_PARSE_ATTEMPTS
}
fn default_true() -> bool {
    true
}
fn default_reward_fraction() -> f64 {
    0.1
}
fn default_distance() -> f64 {
    0.25
}

/// Per-environment `(alpha, beta, delta)` defaults.
pub fn multiscale_defaults(environment: &str) -> (f64, f64, f64) {
    if environment == COOP_NAV {
        (20.0, 0.5, 0.1)
    } else {
        (25.0, 0.7, 0.1)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `section.key=value` overrides to a raw config table. A key
/// without a section refers to `[campaign]`. Values are read as TOML and
/// fall back to plain strings.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<(), ConfigError> {
    for ov in overrides {
        let (key, raw) = ov.split_once('=').ok_or_else(|| ConfigError::Override(ov.clone()))?;
        let mut path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(ConfigError::Override(ov.clone()));
        }
        if path.len() == 1 {
            path.insert(0, "campaign");
        }
        let mut node = &mut *table;
        for part in &path[..path.len() - 1] {
            let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry.as_table_mut().ok_or_else(|| ConfigError::Override(ov.clone()))?;
        }
        node.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    }
    Ok(())
}

impl CampaignConfig {
    /// Parses, applies overrides, fills environment defaults and validates.
    /// Relative file paths inside the config resolve against `base_dir`.
    pub fn from_toml_str(text: &str, overrides: &[String], base_dir: Option<&Path>) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        apply_overrides(&mut table, overrides)?;
        let mut cfg: CampaignConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        if let Some(base) = base_dir {
            for p in [&mut cfg.llm.template, &mut cfg.llm.mock_responses, &mut cfg.campaign.initial_scenarios]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), reason: e.to_string() })?;
        Self::from_toml_str(&text, overrides, path.parent())
    }

    /// Fills environment-dependent defaults and checks ranges.
    pub fn resolve(&mut self, env: &dyn Environment) -> Result<(), ConfigError> {
        let (a, b, d) = multiscale_defaults(&self.campaign.environment);
        self.generator.alpha.get_or_insert(a);
        self.generator.beta.get_or_insert(b);
        self.generator.delta.get_or_insert(d);
        self.campaign.max_frames.get_or_insert(env.default_max_frames());
        self.campaign.corpus_capacity.get_or_insert(2 * self.campaign.corpus_size);
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        let c = &self.campaign;
        if c.budget == 0 {
            return bad("campaign.budget must be at least 1".into());
        }
        if c.max_frames == Some(0) {
            return bad("campaign.max_frames must be positive".into());
        }
        if c.corpus_size == 0 && c.method.uses_corpus() {
            return bad("campaign.corpus_size must be at least 1".into());
        }
        if c.checkpoint_every == 0 {
            return bad("campaign.checkpoint_every must be positive".into());
        }
        if c.diversity_intervals == 0 || c.freshness_intervals == 0 {
            return bad("grid intervals must be positive".into());
        }
        if c.failure_rate_window == Some(0) {
            return bad("campaign.failure_rate_window must be positive".into());
        }
        let g = &self.generator;
        if let Some(alpha) = g.alpha {
            if !(alpha > 0.0 && alpha <= ALPHA_MAX) {
                return bad(format!("generator.alpha = {alpha} not in (0, 100]"));
            }
        }
        if let Some(beta) = g.beta {
            if !(beta > 0.0 && beta < 1.0) {
                return bad(format!("generator.beta = {beta} not in (0, 1)"));
            }
        }
        if let Some(delta) = g.delta {
            if !(delta >= 0.0) {
                return bad(format!("generator.delta = {delta} is negative"));
            }
        }
        if !(g.amplitude > 0.0) {
            return bad(format!("generator.amplitude = {} not positive", g.amplitude));
        }
        match g.weight_floor {
            WeightFloor::Relative(v) | WeightFloor::Absolute(v) if !(v >= 0.0) => {
                return bad("generator.weight_floor must be nonnegative".into())
            }
            _ => {}
        }
        let t = &self.thresholds;
        if let Some(r) = t.reward {
            if !(r > 0.0) {
                return bad(format!("thresholds.reward = {r} not positive"));
            }
        }
        if !(t.reward_fraction > 0.0) || !(t.distance > 0.0) {
            return bad("thresholds must be positive".into());
        }
        if c.method.uses_llm() && self.llm.backend == BackendKind::Mock && self.llm.mock_responses.is_none() {
            return bad("llm.backend = \"mock\" needs llm.mock_responses".into());
        }
        if !(self.llm.temperature >= 0.0) {
            return bad("llm.temperature must be nonnegative".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
