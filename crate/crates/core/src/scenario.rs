//! Scenario parameter space and the geometric primitives shared by every
//! other module: validation, range-normalized distance and clipping.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;

/// Extra validity check an environment can attach to its space, on top of
/// the box bounds. Returns a human-readable reason on rejection.
pub type ConstraintHook = Arc<dyn Fn(&[f64]) -> Result<(), String> + Send + Sync>;

/// Bounded box of scenario parameters.
#[derive(Clone)]
pub struct ScenarioSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
    dim_names: Vec<String>,
    constraint: Option<ConstraintHook>,
}

impl fmt::Debug for ScenarioSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScenarioSpace")
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("dim_names", &self.dim_names)
            .field("constraint", &self.constraint.is_some())
            .finish()
    }
}

impl ScenarioSpace {
    pub fn new<S: Into<String>>(
        lower: Vec<f64>,
        upper: Vec<f64>,
        dim_names: Vec<S>,
    ) -> Result<Self, ScenarioError> {
        let dim_names: Vec<String> = dim_names.into_iter().map(Into::into).collect();
        if lower.is_empty() {
            return Err(ScenarioError::EmptySpace);
        }
        if upper.len() != lower.len() || dim_names.len() != lower.len() {
            return Err(ScenarioError::ArityMismatch {
                expected: lower.len(),
                found: upper.len().min(dim_names.len()),
            });
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(ScenarioError::InvalidBounds { dim: i, lower: *lo, upper: *hi });
            }
        }
        Ok(Self { lower, upper, dim_names, constraint: None })
    }

    /// Attaches an environment-specific constraint checked by [`validate`].
    pub fn with_constraint(mut self, hook: ConstraintHook) -> Self {
        self.constraint = Some(hook);
        self
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim_names(&self) -> &[String] {
        &self.dim_names
    }

    pub fn range(&self, dim: usize) -> f64 {
        self.upper[dim] - self.lower[dim]
    }

    pub fn has_constraint(&self) -> bool {
        self.constraint.is_some()
    }
}

/// Monotonically increasing scenario identifier, unique within a campaign.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScenarioId(pub u64);

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// How a scenario came to exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    InitialSample,
    RandomMutation,
    LlmMutation,
}

impl Origin {
    pub fn as_str(&self) -> &'static str {
        match self {
            Origin::InitialSample => "initial_sample",
            Origin::RandomMutation => "random_mutation",
            Origin::LlmMutation => "llm_mutation",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: ScenarioId,
    pub params: Vec<f64>,
    pub parent: Option<ScenarioId>,
    pub origin: Origin,
}

impl Scenario {
    pub fn new(id: ScenarioId, params: Vec<f64>, parent: Option<ScenarioId>, origin: Origin) -> Self {
        Self { id, params, parent, origin }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Validity {
    Valid,
    Invalid(String),
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}

/// Checks arity, box bounds and then the registered constraint hook.
/// The reason names the first violated constraint.
pub fn validate(space: &ScenarioSpace, params: &[f64]) -> Validity {
    if params.len() != space.dims() {
        return Validity::Invalid(format!("length {} ≠ {}", params.len(), space.dims()));
    }
    for (i, &p) in params.iter().enumerate() {
        if p.is_nan() {
            return Validity::Invalid(format!("dim {i} is not a number"));
        }
        if p < space.lower[i] {
            return Validity::Invalid(format!("dim {i} below lower bound"));
        }
        if p > space.upper[i] {
            return Validity::Invalid(format!("dim {i} above upper bound"));
        }
    }
    if let Some(hook) = &space.constraint {
        if let Err(reason) = hook(params) {
            return Validity::Invalid(reason);
        }
    }
    Validity::Valid
}

/// Range-normalized Euclidean distance between two parameter vectors.
pub fn normalized_distance(space: &ScenarioSpace, a: &[f64], b: &[f64]) -> Result<f64, ScenarioError> {
    if a.len() != space.dims() || b.len() != space.dims() {
        return Err(ScenarioError::ArityMismatch {
            expected: space.dims(),
            found: if a.len() != space.dims() { a.len() } else { b.len() },
        });
    }
    let sum: f64 = (0..space.dims())
        .map(|i| {
            let d = (a[i] - b[i]) / space.range(i);
            d * d
        })
        .sum();
    Ok(sum.sqrt())
}

pub fn distance(space: &ScenarioSpace, a: &Scenario, b: &Scenario) -> Result<f64, ScenarioError> {
    normalized_distance(space, &a.params, &b.params)
}

pub fn clip(space: &ScenarioSpace, params: &[f64]) -> Result<Vec<f64>, ScenarioError> {
    if params.len() != space.dims() {
        return Err(ScenarioError::ArityMismatch { expected: space.dims(), found: params.len() });
    }
    Ok(params
        .iter()
        .enumerate()
        .map(|(i, &p)| p.clamp(space.lower[i], space.upper[i]))
        .collect())
}
