use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("scenario space needs at least one dimension")]
    EmptySpace,
    #[error("arity mismatch: expected {expected} values, found {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("dim {dim}: lower bound {lower} must be finite and below upper bound {upper}")]
    InvalidBounds { dim: usize, lower: f64, upper: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("max_frames must be positive")]
    ZeroMaxFrames,
    #[error("unknown environment `{0}`")]
    Unknown(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("corpus initialization needs at least one scenario")]
    ZeroCount,
    #[error("constraint hook rejected all {attempts} candidate draws")]
    ConstraintExhausted { attempts: usize },
    #[error("perturbation amplitude must be positive, got {0}")]
    NonPositiveAmplitude(f64),
    #[error("perturbation stayed degenerate after {0} redraws")]
    DegeneratePerturbation(usize),
    #[error("corpus is empty")]
    Empty,
    #[error("invalid sampling weights: {0}")]
    Sampling(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("potential set is empty")]
    EmptyPotentials,
    #[error("percentile rank {0} outside [0, 1]")]
    InvalidQuantile(f64),
    #[error("failure rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("generator parameter out of range: {0}")]
    InvalidParameter(String),
    #[error("no constraint-satisfying mutation in {0} draws")]
    NoValidMutation(usize),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
}

/// Failure to turn an LLM response into a valid scenario.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("output marker not found in response")]
    MarkerMissing,
    #[error("expected {expected} values after the marker, found {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("could not parse number `{0}`")]
    NumberParseFailure(String),
    #[error("dim {0} out of bounds")]
    OutOfBounds(usize),
    #[error("constraint violated: {0}")]
    ConstraintViolated(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion payload: {0}")]
    Payload(String),
    #[error("scripted backend has no responses left")]
    Exhausted,
    #[error("missing API key (set SCENFUZZ_API_KEY)")]
    MissingApiKey,
}

impl BackendError {
    /// Whether a retry could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerationError {
    #[error("backend unreachable: {0}")]
    Backend(#[from] BackendError),
    #[error("invalid generation: {0}")]
    Invalid(#[from] ParseError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("template block `{0}` is empty")]
    EmptyBlock(&'static str),
    #[error("state description covers {found} dimensions, space has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("state description does not mention dimension `{0}`")]
    MissingDimension(String),
    #[error("input layout lacks placeholder {0}")]
    MissingPlaceholder(&'static str),
    #[error("generation workflow lacks step `{0}`")]
    MissingWorkflowStep(&'static str),
    #[error("unknown template section `{0}`")]
    UnknownSection(String),
    #[error("template text before the first section header")]
    Preamble,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("no trajectories to analyze")]
    EmptyInput,
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("state has {found} dimensions, grid has {expected}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("grid needs at least one interval")]
    ZeroIntervals,
    #[error("failure rate undefined before the first test")]
    NoTests,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected dotted.key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CampaignError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("LLM backend unreachable: {0}")]
    Backend(#[from] BackendError),
    #[error("{0} consecutive iterations produced no testable scenario")]
    TooManySkips(u32),
    #[error("replay of failure {id} diverged: {detail}")]
    ReplayDivergence { id: u64, detail: String },
    #[error("output error: {0}")]
    Io(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

impl From<GenerationError> for CampaignError {
    fn from(e: GenerationError) -> Self {
        match e {
            GenerationError::Backend(b) => CampaignError::Backend(b),
            GenerationError::Invalid(p) => CampaignError::Generator(GeneratorError::Generation(GenerationError::Invalid(p))),
        }
    }
}
