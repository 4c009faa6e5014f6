//! Bad-case feedback and expert experience fed back into the prompt.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::GeneratorError;
use crate::scenario::{normalized_distance, ScenarioSpace};

pub const DEFAULT_FEEDBACK_CAPACITY: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BadCaseCategory {
    InsufficientChallenge,
    Invalidity,
    ExcessiveModification,
}

impl BadCaseCategory {
    pub const ALL: [BadCaseCategory; 3] =
        [BadCaseCategory::InsufficientChallenge, BadCaseCategory::Invalidity, BadCaseCategory::ExcessiveModification];

    pub fn tag(self) -> &'static str {
        match self {
            BadCaseCategory::InsufficientChallenge => "insufficient_challenge",
            BadCaseCategory::Invalidity => "invalidity",
            BadCaseCategory::ExcessiveModification => "excessive_modification",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadCase {
    pub seed_params: Vec<f64>,
    pub new_params: Option<Vec<f64>>,
    pub category: BadCaseCategory,
    pub detail: String,
}

/// Reward-increase threshold `t_r` and normalized-distance threshold `t_s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    t_r: f64,
    t_s: f64,
}

impl Thresholds {
    pub fn new(t_r: f64, t_s: f64) -> Result<Self, GeneratorError> {
        if !(t_r > 0.0 && t_r.is_finite()) {
            return Err(GeneratorError::InvalidParameter(format!("reward threshold must be positive, got {t_r}")));
        }
        if !(t_s > 0.0 && t_s.is_finite()) {
            return Err(GeneratorError::InvalidParameter(format!("distance threshold must be positive, got {t_s}")));
        }
        Ok(Self { t_r, t_s })
    }

    pub fn reward(&self) -> f64 {
        self.t_r
    }

    pub fn distance(&self) -> f64 {
        self.t_s
    }
}

/// What became of an LLM-proposed scenario.
#[derive(Clone, Debug, PartialEq)]
pub enum Trial<'a> {
    /// The scenario ran; carries its parameters and cumulative reward.
    Ran { params: &'a [f64], reward: f64 },
    /// The response never yielded a valid scenario.
    Rejected { params: Option<&'a [f64]>, reason: String },
}

/// Invalidity wins over excessive modification, which wins over
/// insufficient challenge. Returns `None` for a good generation.
pub fn classify_bad_case(
    space: &ScenarioSpace,
    seed_params: &[f64],
    seed_reward: f64,
    trial: &Trial<'_>,
    thresholds: &Thresholds,
) -> Option<BadCase> {
    let (params, reward) = match trial {
        Trial::Rejected { params, reason } => {
            return Some(BadCase {
                seed_params: seed_params.to_vec(),
                new_params: params.map(<[f64]>::to_vec),
                category: BadCaseCategory::Invalidity,
                detail: format!("invalid scenario: {reason}"),
            })
        }
        Trial::Ran { params, reward } => (*params, *reward),
    };
    let dist = match normalized_distance(space, seed_params, params) {
        Ok(d) => d,
        Err(e) => {
            return Some(BadCase {
                seed_params: seed_params.to_vec(),
                new_params: Some(params.to_vec()),
                category: BadCaseCategory::Invalidity,
                detail: format!("invalid scenario: {e}"),
            })
        }
    };
    let category_detail = if dist > thresholds.t_s {
        Some((
            BadCaseCategory::ExcessiveModification,
            format!("normalized distance {dist:.3} exceeds {}", thresholds.t_s),
        ))
    } else if reward - seed_reward > thresholds.t_r {
        Some((
            BadCaseCategory::InsufficientChallenge,
            format!("reward rose by {:.3} (threshold {})", reward - seed_reward, thresholds.t_r),
        ))
    } else {
        None
    };
    category_detail.map(|(category, detail)| BadCase {
        seed_params: seed_params.to_vec(),
        new_params: Some(params.to_vec()),
        category,
        detail,
    })
}

/// Most recent bad cases, oldest evicted first, plus lifetime per-category
/// counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackLedger {
    capacity: usize,
    cases: VecDeque<BadCase>,
    totals: [u64; 3],
}

impl FeedbackLedger {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, cases: VecDeque::with_capacity(capacity), totals: [0; 3] }
    }

    pub fn push(&mut self, case: BadCase) {
        let slot = BadCaseCategory::ALL.iter().position(|c| *c == case.category).unwrap_or(0);
        self.totals[slot] += 1;
        if self.capacity == 0 {
            return;
        }
        if self.cases.len() == self.capacity {
            self.cases.pop_front();
        }
        self.cases.push_back(case);
    }

    pub fn iter(&self) -> impl Iterator<Item = &BadCase> {
        self.cases.iter()
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self, category: BadCaseCategory) -> u64 {
        let slot = BadCaseCategory::ALL.iter().position(|c| *c == category).unwrap_or(0);
        self.totals[slot]
    }
}

/// Domain knowledge for the prompt: free-text plans known to provoke
/// failures.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpertExperience {
    pub plans: Vec<String>,
}
