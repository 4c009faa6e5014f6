//! Fuzzing of sequential decision-making policies with a corpus of
//! scenarios, sensitivity-guided seed selection and a mix of random and
//! LLM-driven mutation.

pub mod campaign;
pub mod corpus;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod llm;
pub mod scenario;

/// Version stamped on every persisted record.
pub const SCHEMA_VERSION: u32 = 1;

pub use campaign::{run_campaign, CampaignConfig, CampaignReport, Method};
pub use corpus::{Corpus, CorpusEntry, UpdateOutcome, WeightFloor};
pub use env::{EnvRegistry, Environment, EpisodeResult};
pub use generator::GeneratorState;
pub use scenario::{Origin, Scenario, ScenarioId, ScenarioSpace};
