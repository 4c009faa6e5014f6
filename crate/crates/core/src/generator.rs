//! Multi-scale scenario generation.
//!
//! Seeds whose potential falls in the top `alpha` percent of the corpus are
//! near failure and get a small uniform perturbation; everything else goes to
//! the LLM mutator for a large, directed edit. `alpha` adapts after every new
//! failure: it decays by `beta` when the failure rate drops by more than the
//! tolerance `delta`, and grows by `1/beta` when it rises by more than that.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusEntry, PERTURBATION_RETRIES};
use crate::error::{GenerationError, GeneratorError};
use crate::scenario::{clip, validate, Origin, Scenario, ScenarioId, ScenarioSpace};

pub const ALPHA_MAX: f64 = 100.0;

/// How a percentile is read off a finite sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PercentileMethod {
    /// `sorted[ceil(q·n) − 1]`, `sorted[0]` for `q = 0`.
    #[default]
    NearestRank,
    /// Linear interpolation between closest ranks, `(n − 1)·q` positions.
    Linear,
}

/// `q`-quantile of `values` (q in `[0, 1]`).
pub fn percentile(values: &[f64], q: f64) -> Result<f64, GeneratorError> {
    percentile_with(values, q, PercentileMethod::NearestRank)
}

pub fn percentile_with(values: &[f64], q: f64, method: PercentileMethod) -> Result<f64, GeneratorError> {
    if values.is_empty() {
        return Err(GeneratorError::EmptyPotentials);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(GeneratorError::InvalidQuantile(q));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(match method {
        PercentileMethod::NearestRank => {
            if q == 0.0 {
                sorted[0]
            } else {
                // tolerance absorbs representation error in q·n (0.8·10 must be rank 8)
                let rank = (q * n as f64 - 1e-9).ceil().clamp(1.0, n as f64) as usize;
                sorted[rank - 1]
            }
        }
        PercentileMethod::Linear => {
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialClass {
    HighPotential,
    LowPotential,
}

/// Low potential iff `p_s` sits strictly below the `(1 − alpha/100)`
/// percentile of the corpus potentials; ties count as high potential.
pub fn classify_potential(p_s: f64, p_d: &[f64], alpha: f64) -> Result<PotentialClass, GeneratorError> {
    classify_potential_with(p_s, p_d, alpha, PercentileMethod::NearestRank)
}

pub fn classify_potential_with(
    p_s: f64,
    p_d: &[f64],
    alpha: f64,
    method: PercentileMethod,
) -> Result<PotentialClass, GeneratorError> {
    if !(alpha > 0.0 && alpha <= ALPHA_MAX) {
        return Err(GeneratorError::InvalidParameter(format!("alpha = {alpha}")));
    }
    let threshold = percentile_with(p_d, 1.0 - alpha / 100.0, method)?;
    Ok(if p_s < threshold { PotentialClass::LowPotential } else { PotentialClass::HighPotential })
}

/// Adds per-dimension offsets to the seed and clips into the space.
pub fn apply_perturbation(
    space: &ScenarioSpace,
    seed: &Scenario,
    offsets: &[f64],
    id: ScenarioId,
) -> Result<Scenario, GeneratorError> {
    let raw: Vec<f64> = seed.params.iter().zip(offsets).map(|(p, u)| p + u).collect();
    if raw.len() != space.dims() || offsets.len() != seed.params.len() {
        return Err(crate::error::ScenarioError::ArityMismatch { expected: space.dims(), found: offsets.len() }.into());
    }
    Ok(Scenario::new(id, clip(space, &raw)?, Some(seed.id), Origin::RandomMutation))
}

/// Uniform perturbation with half-width `amplitude · range` per dimension.
/// Draws that break the space's constraint hook are redrawn a bounded
/// number of times.
pub fn random_mutation<R: Rng + ?Sized>(
    space: &ScenarioSpace,
    seed: &Scenario,
    amplitude: f64,
    id: ScenarioId,
    rng: &mut R,
) -> Result<Scenario, GeneratorError> {
    if !(amplitude > 0.0) {
        return Err(GeneratorError::InvalidParameter(format!("amplitude = {amplitude}")));
    }
    for _ in 0..PERTURBATION_RETRIES {
        let offsets: Vec<f64> = (0..space.dims())
            .map(|i| {
                let half = amplitude * space.range(i);
                rng.gen_range(-half..=half)
            })
            .collect();
        let candidate = apply_perturbation(space, seed, &offsets, id)?;
        if validate(space, &candidate.params).is_valid() {
            return Ok(candidate);
        }
    }
    Err(GeneratorError::NoValidMutation(PERTURBATION_RETRIES))
}

/// Anything that can turn a seed into a new scenario through an LLM.
pub trait LlmMutator {
    fn mutate(&mut self, seed: &CorpusEntry, id: ScenarioId) -> Result<Scenario, GenerationError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlphaUpdate {
    /// First failure: the reference rate is recorded, alpha stays.
    Initialized,
    Decayed,
    Raised,
    Unchanged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorState {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub last_rate: Option<f64>,
    pub amplitude: f64,
    pub llm_calls: u64,
    pub random_calls: u64,
    #[serde(default)]
    pub percentile_method: PercentileMethod,
}

impl GeneratorState {
    pub fn new(alpha: f64, beta: f64, delta: f64, amplitude: f64) -> Result<Self, GeneratorError> {
        if !(alpha > 0.0 && alpha <= ALPHA_MAX) {
            return Err(GeneratorError::InvalidParameter(format!("alpha = {alpha} not in (0, 100]")));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(GeneratorError::InvalidParameter(format!("beta = {beta} not in (0, 1)")));
        }
        if !(delta >= 0.0) {
            return Err(GeneratorError::InvalidParameter(format!("delta = {delta} is negative")));
        }
        if !(amplitude > 0.0) {
            return Err(GeneratorError::InvalidParameter(format!("amplitude = {amplitude} not positive")));
        }
        Ok(Self {
            alpha,
            beta,
            delta,
            last_rate: None,
            amplitude,
            llm_calls: 0,
            random_calls: 0,
            percentile_method: PercentileMethod::NearestRank,
        })
    }

    pub fn classify(&self, p_s: f64, p_d: &[f64]) -> Result<PotentialClass, GeneratorError> {
        classify_potential_with(p_s, p_d, self.alpha, self.percentile_method)
    }

    /// Dispatches the seed to random mutation (high potential) or the LLM
    /// mutator (low potential).
    pub fn generate<M, R>(
        &mut self,
        space: &ScenarioSpace,
        seed: &CorpusEntry,
        p_d: &[f64],
        mutator: &mut M,
        id: ScenarioId,
        rng: &mut R,
    ) -> Result<Scenario, GeneratorError>
    where
        M: LlmMutator + ?Sized,
        R: Rng + ?Sized,
    {
        match self.classify(seed.potential, p_d)? {
            PotentialClass::LowPotential => {
                self.llm_calls += 1;
                Ok(mutator.mutate(seed, id)?)
            }
            PotentialClass::HighPotential => {
                self.random_calls += 1;
                random_mutation(space, &seed.scenario, self.amplitude, id, rng)
            }
        }
    }

    /// Adjusts alpha from the campaign failure rate observed right after a
    /// new failure. The reference rate only moves when alpha moves.
    pub fn update_alpha(&mut self, new_rate: f64) -> Result<AlphaUpdate, GeneratorError> {
        if !(0.0..=1.0).contains(&new_rate) {
            return Err(GeneratorError::InvalidRate(new_rate));
        }
        let Some(f) = self.last_rate else {
            self.last_rate = Some(new_rate);
            return Ok(AlphaUpdate::Initialized);
        };
        let outcome = if new_rate < (1.0 - self.delta) * f {
            self.alpha *= self.beta;
            AlphaUpdate::Decayed
        } else if new_rate > (1.0 + self.delta) * f {
            self.alpha /= self.beta;
            AlphaUpdate::Raised
        } else {
            return Ok(AlphaUpdate::Unchanged);
        };
        self.alpha = self.alpha.clamp(f64::MIN_POSITIVE, ALPHA_MAX);
        self.last_rate = Some(new_rate);
        Ok(outcome)
    }
}
