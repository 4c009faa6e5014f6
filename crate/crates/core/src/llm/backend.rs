//! Chat-completion backends: scripted replies, an offline analytic stand-in
//! and an OpenAI-compatible HTTP client.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{EditHints, Environment};
use crate::error::BackendError;
use crate::llm::feedback::BadCaseCategory;
use crate::llm::parse::extract_params;
use crate::llm::template::{format_params, SEED_TAG};

pub const API_KEY_ENV: &str = "SCENFUZZ_API_KEY";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    /// Sampling seed; offline backends use it in place of sampling noise.
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>, temperature: f64) -> Self {
        Self {
            messages: vec![
                ChatMessage { role: Role::System, content: system.into() },
                ChatMessage { role: Role::User, content: user.into() },
            ],
            temperature,
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Content of the last user message.
    pub fn prompt(&self) -> &str {
        self.messages.iter().rev().find(|m| m.role == Role::User).map_or("", |m| m.content.as_str())
    }
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

impl<B: LlmBackend + ?Sized> LlmBackend for Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// Replays a fixed list of replies in order.
#[derive(Debug)]
pub struct ScriptedBackend {
    replies: Vec<Result<String, BackendError>>,
    cursor: Mutex<usize>,
    cycle: bool,
}

impl ScriptedBackend {
    pub fn new(replies: Vec<String>) -> Self {
        Self::with_results(replies.into_iter().map(Ok).collect())
    }

    pub fn with_results(replies: Vec<Result<String, BackendError>>) -> Self {
        Self { replies, cursor: Mutex::new(0), cycle: false }
    }

    /// Wraps around instead of reporting exhaustion.
    pub fn cycling(mut self) -> Self {
        self.cycle = true;
        self
    }

    /// Loads a JSON array of reply strings.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    pub fn calls(&self) -> usize {
        *self.cursor.lock().expect("cursor lock")
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, _request: &ChatRequest) -> Result<String, BackendError> {
        let mut cursor = self.cursor.lock().expect("cursor lock");
        if self.replies.is_empty() || (!self.cycle && *cursor >= self.replies.len()) {
            return Err(BackendError::Exhausted);
        }
        let reply = self.replies[*cursor % self.replies.len()].clone();
        *cursor += 1;
        reply
    }
}

/// Offline stand-in for a model. It reads the seed and the feedback tags out
/// of the prompt and asks the environment's analytic editor for a harder
/// scenario. The reply is a pure function of the prompt and the request's
/// sampling seed.
pub struct HeuristicBackend {
    env: Arc<dyn Environment>,
    marker: String,
}

impl HeuristicBackend {
    pub fn new(env: Arc<dyn Environment>, marker: impl Into<String>) -> Self {
        Self { env, marker: marker.into() }
    }

    fn fallback(&self, seed: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let space = self.env.space();
        seed.iter()
            .enumerate()
            .map(|(i, &v)| {
                let step = 0.1 * space.range(i);
                (v + rng.gen_range(-step..=step)).clamp(space.lower()[i], space.upper()[i])
            })
            .collect()
    }
}

fn hints_from_prompt(prompt: &str) -> EditHints {
    let count = |c: BadCaseCategory| prompt.matches(&format!("[{}]", c.tag())).count();
    EditHints {
        insufficient_challenge: count(BadCaseCategory::InsufficientChallenge),
        invalidity: count(BadCaseCategory::Invalidity),
        excessive_modification: count(BadCaseCategory::ExcessiveModification),
    }
}

impl LlmBackend for HeuristicBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let prompt = request.prompt();
        let mut hasher = Sha256::new();
        hasher.update(prompt.as_bytes());
        if let Some(seed) = request.seed {
            hasher.update(seed.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut seed_bytes = [0u8; 32];
        seed_bytes.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed_bytes);

        let seed = extract_params(prompt, SEED_TAG)
            .map_err(|e| BackendError::Payload(format!("prompt carries no readable seed: {e}")))?;
        let hints = hints_from_prompt(prompt);
        let (plan, params) = match self.env.adversarial_edit(&seed, &hints, &mut rng) {
            Some(edit) => edit,
            None => ("nudge every parameter slightly".to_string(), self.fallback(&seed, &mut rng)),
        };
        Ok(format!(
            "Scenario Analysis: the seed is {seed}.\n\
             Evolution Prediction: under the current policy the seed most likely ends without failure.\n\
             Challenge Analysis: recent feedback shows {ic} low-challenge, {inv} invalid and {em} over-edited attempts.\n\
             Plan Generation: {plan}.\n\
             Plan Execution: applying the plan to the seed.\n\
             {marker} {new}\n\
             Explanation: the plan targets a situation the policy handles poorly.",
            seed = format_params(&seed),
            ic = hints.insufficient_challenge,
            inv = hints.invalidity,
            em = hints.excessive_modification,
            marker = self.marker,
            new = format_params(&params),
        ))
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
#[derive(Debug)]
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    base_url: String,
    model: String,
    api_key: String,
    max_retries: u32,
    backoff: Duration,
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionReply {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        api_key: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: api_key.into(),
            max_retries: 3,
            backoff: Duration::from_millis(500),
        })
    }

    /// Reads the key from `SCENFUZZ_API_KEY`.
    pub fn from_env(base_url: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| BackendError::MissingApiKey)?;
        Self::new(base_url, model, key, timeout)
    }

    pub fn with_retries(mut self, max_retries: u32, backoff: Duration) -> Self {
        self.max_retries = max_retries;
        self.backoff = backoff;
        self
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let body = CompletionBody { model: &self.model, messages: &request.messages, temperature: request.temperature };
        let resp = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body: text });
        }
        let reply: CompletionReply = serde_json::from_str(&text).map_err(|e| BackendError::Payload(e.to_string()))?;
        reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Payload("no choices[0].message.content".into()))
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    let wait = self.backoff * 2u32.pow(attempt);
                    log::warn!("completion request failed ({e}); retrying in {wait:?}");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvRegistry;

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new("system", text, 1.0)
    }

    #[test]
    fn scripted_backend_replays_in_order() {
        let b = ScriptedBackend::from_json(r#"["one", "two"]"#).unwrap();
        assert_eq!(b.complete(&req("x")).unwrap(), "one");
        assert_eq!(b.complete(&req("x")).unwrap(), "two");
        assert_eq!(b.complete(&req("x")), Err(BackendError::Exhausted));
        let c = ScriptedBackend::new(vec!["a".into()]).cycling();
        assert_eq!(c.complete(&req("x")).unwrap(), "a");
        assert_eq!(c.complete(&req("x")).unwrap(), "a");
        assert_eq!(c.calls(), 2);
    }

    #[test]
    fn heuristic_backend_is_a_function_of_the_prompt() {
        let env = EnvRegistry::with_builtins().create(crate::env::COLLISION_AVOIDANCE).unwrap();
        let b = HeuristicBackend::new(env.clone(), "New Scenario:");
        let p1 = req("## Input\nSeed Scenario: [2000, 500, 3, 100, 120]\n");
        let p2 = req("## Input\nSeed Scenario: [2100, 500, 3, 100, 120]\n");
        let a = b.complete(&p1).unwrap();
        assert_eq!(a, b.complete(&p1).unwrap());
        assert_ne!(a, b.complete(&p2).unwrap());
        let seeded: Vec<String> = (0..8).map(|s| b.complete(&p1.clone().with_seed(s)).unwrap()).collect();
        assert_eq!(seeded[3], b.complete(&p1.clone().with_seed(3)).unwrap());
        assert!(seeded.iter().any(|r| *r != seeded[0]));
        let params = extract_params(&a, "New Scenario:").unwrap();
        assert_eq!(params.len(), 5);
        assert!(crate::scenario::validate(env.space(), &params).is_valid());
    }

    #[test]
    fn heuristic_backend_reads_feedback_tags() {
        let h = hints_from_prompt("- [invalidity] x\n- [invalidity] y\n- [excessive_modification] z");
        assert_eq!(h, EditHints { insufficient_challenge: 0, invalidity: 2, excessive_modification: 1 });
    }

    #[test]
    fn heuristic_backend_needs_a_seed() {
        let env = EnvRegistry::with_builtins().create(crate::env::COOP_NAV).unwrap();
        let b = HeuristicBackend::new(env, "New Scenario:");
        assert!(matches!(b.complete(&req("no seed here")), Err(BackendError::Payload(_))));
    }

    #[test]
    fn transient_errors() {
        assert!(BackendError::Status { status: 429, body: String::new() }.is_transient());
        assert!(BackendError::Status { status: 503, body: String::new() }.is_transient());
        assert!(!BackendError::Status { status: 401, body: String::new() }.is_transient());
        assert!(BackendError::Transport("reset".into()).is_transient());
        assert!(!BackendError::Payload("bad".into()).is_transient());
    }
}
