//! Extraction of a scenario from free-form model output.

use crate::error::ParseError;
use crate::scenario::{validate, Origin, Scenario, ScenarioId, ScenarioSpace, Validity};

/// Bracketed list following the last occurrence of `marker`. Earlier
/// occurrences are usually the model restating the format or drafting.
pub fn extract_params(text: &str, marker: &str) -> Result<Vec<f64>, ParseError> {
    let at = text.rfind(marker).ok_or(ParseError::MarkerMissing)?;
    let rest = &text[at + marker.len()..];
    let open = rest
        .find('[')
        .ok_or_else(|| ParseError::NumberParseFailure(rest.lines().next().unwrap_or("").trim().to_string()))?;
    let close = rest[open..]
        .find(']')
        .map(|c| open + c)
        .ok_or_else(|| ParseError::NumberParseFailure(rest[open..].lines().next().unwrap_or("").to_string()))?;
    let inner = rest[open + 1..close].trim();
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|tok| {
            let tok = tok.trim();
            match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(ParseError::NumberParseFailure(tok.to_string())),
            }
        })
        .collect()
}

/// Parses and validates the scenario an LLM proposed for `parent`.
pub fn parse_scenario_response(
    text: &str,
    space: &ScenarioSpace,
    marker: &str,
    id: ScenarioId,
    parent: Option<ScenarioId>,
) -> Result<Scenario, ParseError> {
    let params = extract_params(text, marker)?;
    check_params(space, &params)?;
    Ok(Scenario::new(id, params, parent, Origin::LlmMutation))
}

pub fn check_params(space: &ScenarioSpace, params: &[f64]) -> Result<(), ParseError> {
    if params.len() != space.dims() {
        return Err(ParseError::ArityMismatch { expected: space.dims(), found: params.len() });
    }
    for (i, &v) in params.iter().enumerate() {
        if v < space.lower()[i] || v > space.upper()[i] {
            return Err(ParseError::OutOfBounds(i));
        }
    }
    match validate(space, params) {
        Validity::Valid => Ok(()),
        Validity::Invalid(reason) => Err(ParseError::ConstraintViolated(reason)),
    }
}
