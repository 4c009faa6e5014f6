//! LLM-driven scenario mutation.

pub mod backend;
pub mod feedback;
pub mod parse;
pub mod template;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use backend::{ChatMessage, ChatRequest, HeuristicBackend, HttpBackend, LlmBackend, Role, ScriptedBackend};
pub use feedback::{
    classify_bad_case, BadCase, BadCaseCategory, ExpertExperience, FeedbackLedger, Thresholds, Trial,
    DEFAULT_FEEDBACK_CAPACITY,
};
pub use parse::{extract_params, parse_scenario_response};
pub use template::{format_params, render_prompt, PromptTemplate};

use crate::corpus::CorpusEntry;
use crate::error::{GenerationError, ParseError, TemplateError};
use crate::generator::LlmMutator;
use crate::scenario::{Scenario, ScenarioId, ScenarioSpace};

pub const DEFAULT_PARSE_ATTEMPTS: usize = 2;

/// Prompt, call and parse loop around a chat backend. Keeps the feedback
/// ledger that is rendered into every prompt.
pub struct LlmGenerator {
    backend: Arc<dyn LlmBackend>,
    template: PromptTemplate,
    space: ScenarioSpace,
    feedback: FeedbackLedger,
    experience: ExpertExperience,
    temperature: f64,
    parse_attempts: usize,
    requests: u64,
    last_explanation: Option<String>,
    sampling: Option<ChaCha8Rng>,
}

impl LlmGenerator {
    pub fn new(
        backend: Arc<dyn LlmBackend>,
        template: PromptTemplate,
        space: ScenarioSpace,
        feedback_capacity: usize,
    ) -> Result<Self, TemplateError> {
        template.validate(&space)?;
        Ok(Self {
            backend,
            template,
            space,
            feedback: FeedbackLedger::new(feedback_capacity),
            experience: ExpertExperience::default(),
            temperature: 1.0,
            parse_attempts: DEFAULT_PARSE_ATTEMPTS,
            requests: 0,
            last_explanation: None,
            sampling: None,
        })
    }

    pub fn with_experience(mut self, experience: ExpertExperience) -> Self {
        self.experience = experience;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    /// Attaches a fresh sampling seed, drawn from this stream, to every
    /// request.
    pub fn with_sampling_seed(mut self, seed: u64) -> Self {
        self.sampling = Some(ChaCha8Rng::seed_from_u64(seed));
        self
    }

    pub fn with_parse_attempts(mut self, attempts: usize) -> Self {
        self.parse_attempts = attempts.max(1);
        self
    }

    pub fn feedback(&self) -> &FeedbackLedger {
        &self.feedback
    }

    pub fn feedback_mut(&mut self) -> &mut FeedbackLedger {
        &mut self.feedback
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    /// Backend requests issued so far, re-asks included.
    pub fn requests(&self) -> u64 {
        self.requests
    }

    pub fn last_explanation(&self) -> Option<&str> {
        self.last_explanation.as_deref()
    }

    /// Transport retries are the backend's business; errors surface as is.
    fn call(&mut self, request: &ChatRequest) -> Result<String, GenerationError> {
        self.requests += 1;
        Ok(self.backend.complete(request)?)
    }

    fn remember_explanation(&mut self, text: &str) {
        let marker = &self.template.output_format_marker;
        let tail = text.rfind(marker.as_str()).and_then(|at| {
            let after = &text[at..];
            after.find('\n').map(|nl| after[nl..].trim().to_string())
        });
        if let Some(t) = tail.filter(|t| !t.is_empty()) {
            log::debug!("LLM explanation: {t}");
            self.last_explanation = Some(t);
        }
    }

    /// Renders the prompt for `seed`, queries the backend and parses the
    /// reply. A reply that fails to parse is asked again; once the attempts
    /// run out an invalidity bad case is recorded.
    pub fn mutate_via_llm(&mut self, seed: &CorpusEntry, id: ScenarioId) -> Result<Scenario, GenerationError> {
        let prompt = render_prompt(&self.template, &self.space, &seed.scenario, &self.feedback, &self.experience)
            .map_err(|e| GenerationError::Invalid(ParseError::ConstraintViolated(e.to_string())))?;
        let mut request = ChatRequest::new(self.template.role_assignment.clone(), prompt, self.temperature);
        let mut last_err = ParseError::MarkerMissing;
        let mut last_params = None;
        for _ in 0..self.parse_attempts {
            if let Some(rng) = self.sampling.as_mut() {
                request.seed = Some(rng.gen());
            }
            let text = self.call(&request)?;
            match parse_scenario_response(
                &text,
                &self.space,
                &self.template.output_format_marker,
                id,
                Some(seed.scenario.id),
            ) {
                Ok(s) => {
                    self.remember_explanation(&text);
                    return Ok(s);
                }
                Err(e) => {
                    log::debug!("unparseable LLM reply: {e}");
                    last_params = extract_params(&text, &self.template.output_format_marker).ok();
                    last_err = e;
                }
            }
        }
        self.feedback.push(BadCase {
            seed_params: seed.scenario.params.clone(),
            new_params: last_params,
            category: BadCaseCategory::Invalidity,
            detail: format!("invalid scenario: {last_err}"),
        });
        Err(GenerationError::Invalid(last_err))
    }
}

impl LlmMutator for LlmGenerator {
    fn mutate(&mut self, seed: &CorpusEntry, id: ScenarioId) -> Result<Scenario, GenerationError> {
        self.mutate_via_llm(seed, id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::BackendError;
    use crate::scenario::Origin;

    fn space() -> ScenarioSpace {
        ScenarioSpace::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec!["pos_x", "pos_y"]).unwrap()
    }

    fn template() -> PromptTemplate {
        PromptTemplate::parse(
            "[[role_assignment]]\nYou generate tests.\n[[task_introduction]]\nMake it fail.\n\
             [[overview]]\nRobot.\n[[entity_information]]\nOne robot.\n\
             [[state_description]]\n- pos_x: x\n- pos_y: y\n[[constraints]]\n- in bounds\n\
             [[generation_workflow]]\nScenario Analysis\nEvolution Prediction\nChallenge Analysis\nPlan Generation\nPlan Execution\n\
             [[output_format_marker]]\nNew Scenario:\n",
        )
        .unwrap()
    }

    fn seed() -> CorpusEntry {
        CorpusEntry {
            scenario: Scenario::new(ScenarioId(1), vec![0.0, 0.0], None, Origin::InitialSample),
            r_seed: -1.0,
            sensitivity: 0.5,
            potential: 1.0,
            freshness_cell: vec![0],
            added_at: 0,
        }
    }

    fn generator(replies: Vec<Result<String, BackendError>>) -> LlmGenerator {
        LlmGenerator::new(Arc::new(ScriptedBackend::with_results(replies)), template(), space(), 5).unwrap()
    }

    #[test]
    fn good_reply_yields_llm_scenario() {
        let mut g = generator(vec![Ok("plan...\nNew Scenario: [0.1, 0.2]\nit is harder".into())]);
        let s = g.mutate_via_llm(&seed(), ScenarioId(7)).unwrap();
        assert_eq!(s.params, vec![0.1, 0.2]);
        assert_eq!((s.origin, s.parent, s.id), (Origin::LlmMutation, Some(ScenarioId(1)), ScenarioId(7)));
        assert_eq!(g.requests(), 1);
        assert_eq!(g.last_explanation(), Some("it is harder"));
    }

    #[test]
    fn parse_failure_is_retried_once() {
        let mut g = generator(vec![Ok("no marker".into()), Ok("New Scenario: [0.1, 0.2]".into())]);
        assert!(g.mutate_via_llm(&seed(), ScenarioId(7)).is_ok());
        assert_eq!(g.requests(), 2);
        assert!(g.feedback().is_empty());
    }

    #[test]
    fn repeated_parse_failure_records_invalidity() {
        let mut g = generator(vec![Ok("no marker".into()), Ok("New Scenario: [3, 0]".into())]);
        let err = g.mutate_via_llm(&seed(), ScenarioId(7)).unwrap_err();
        assert_eq!(err, GenerationError::Invalid(ParseError::OutOfBounds(0)));
        assert_eq!(g.feedback().len(), 1);
        let case = g.feedback().iter().next().unwrap();
        assert_eq!(case.category, BadCaseCategory::Invalidity);
        assert_eq!(case.new_params, Some(vec![3.0, 0.0]));
    }

    #[test]
    fn transport_errors_surface_as_backend_errors() {
        let mut dead = generator(vec![Err(BackendError::Transport("down".into())), Ok("New Scenario: [0.5, 0.5]".into())]);
        assert!(matches!(dead.mutate_via_llm(&seed(), ScenarioId(2)), Err(GenerationError::Backend(_))));
        assert_eq!(dead.requests(), 1);
        let mut denied = generator(vec![Err(BackendError::Status { status: 401, body: "no".into() })]);
        assert!(matches!(denied.mutate_via_llm(&seed(), ScenarioId(2)), Err(GenerationError::Backend(_))));
        assert!(denied.feedback().is_empty());
    }

    #[test]
    fn feedback_reaches_the_prompt() {
        struct Echo(std::sync::Mutex<String>);
        impl LlmBackend for Echo {
            fn complete(&self, r: &ChatRequest) -> Result<String, BackendError> {
                *self.0.lock().unwrap() = r.prompt().to_string();
                Ok(r.prompt().to_string())
            }
        }
        let echo = Arc::new(Echo(Default::default()));
        let mut g = LlmGenerator::new(echo.clone(), template(), space(), 5).unwrap();
        g.feedback_mut().push(BadCase {
            seed_params: vec![0.0, 0.0],
            new_params: Some(vec![1.0, 1.0]),
            category: BadCaseCategory::ExcessiveModification,
            detail: "too far".into(),
        });
        // the echoed prompt contains the output instructions, whose marker line is not a valid list
        let err = g.mutate_via_llm(&seed(), ScenarioId(3)).unwrap_err();
        assert!(matches!(err, GenerationError::Invalid(ParseError::NumberParseFailure(_))));
        assert!(echo.0.lock().unwrap().contains("- [excessive_modification] seed: [0, 0] -> new: [1, 1]; too far"));
        assert_eq!(g.feedback().total(BadCaseCategory::ExcessiveModification), 1);
        assert_eq!(g.feedback().total(BadCaseCategory::Invalidity), 1);
    }
}
