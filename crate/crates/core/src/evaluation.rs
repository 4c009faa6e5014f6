//! Scenario potential, failure-rate bookkeeping and grid-based diversity
//! counts over failure trajectories.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::env::{EpisodeResult, Trajectory};
use crate::error::EvaluationError;
use crate::scenario::Origin;

/// Higher potential means closer to failure.
pub fn potential_of(result: &EpisodeResult) -> f64 {
    -result.cumulative_reward
}

pub type Cell = Vec<u32>;

/// Axis-aligned grid with `intervals` equal bins per dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityGrid {
    intervals: u32,
    min: Vec<f64>,
    max: Vec<f64>,
}

impl DiversityGrid {
    pub fn new(min: Vec<f64>, max: Vec<f64>, intervals: u32) -> Result<Self, EvaluationError> {
        if intervals == 0 {
            return Err(EvaluationError::ZeroIntervals);
        }
        if min.len() != max.len() {
            return Err(EvaluationError::ArityMismatch { expected: min.len(), found: max.len() });
        }
        Ok(Self { intervals, min, max })
    }

    /// Grid spanning the observed per-dimension extremes of every state.
    pub fn fit(trajectories: &[Trajectory], intervals: u32) -> Result<Self, EvaluationError> {
        let first = trajectories
            .iter()
            .flat_map(|t| t.iter())
            .next()
            .ok_or(EvaluationError::EmptyInput)?;
        let dims = first.observation.len();
        let mut min = vec![f64::INFINITY; dims];
        let mut max = vec![f64::NEG_INFINITY; dims];
        for state in trajectories.iter().flat_map(|t| t.iter()) {
            if state.observation.len() != dims {
                return Err(EvaluationError::ArityMismatch { expected: dims, found: state.observation.len() });
            }
            for (i, &v) in state.observation.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        Self::new(min, max, intervals)
    }

    pub fn dims(&self) -> usize {
        self.min.len()
    }

    pub fn intervals(&self) -> u32 {
        self.intervals
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }
}

pub fn cell_index(state: &[f64], grid: &DiversityGrid) -> Result<Cell, EvaluationError> {
    if state.len() != grid.dims() {
        return Err(EvaluationError::ArityMismatch { expected: grid.dims(), found: state.len() });
    }
    let n = grid.intervals;
    Ok(state
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let span = grid.max[i] - grid.min[i];
            if span <= 0.0 {
                return 0;
            }
            let width = span / n as f64;
            let raw = ((v - grid.min[i]) / width).floor();
            raw.clamp(0.0, (n - 1) as f64) as u32
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiversityCounts {
    pub n_initial: usize,
    pub n_terminal: usize,
    pub n_entire: usize,
}

/// Distinct grid cells covered by the first states, last states and all
/// states of the given failure trajectories.
pub fn diversity_counts(trajectories: &[Trajectory], intervals: u32) -> Result<DiversityCounts, EvaluationError> {
    if trajectories.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    if trajectories.iter().any(|t| t.is_empty()) {
        return Err(EvaluationError::EmptyTrajectory);
    }
    let grid = DiversityGrid::fit(trajectories, intervals)?;
    let mut initial = BTreeSet::new();
    let mut terminal = BTreeSet::new();
    let mut entire = BTreeSet::new();
    for t in trajectories {
        initial.insert(cell_index(&t[0].observation, &grid)?);
        terminal.insert(cell_index(&t[t.len() - 1].observation, &grid)?);
        for s in t {
            entire.insert(cell_index(&s.observation, &grid)?);
        }
    }
    Ok(DiversityCounts { n_initial: initial.len(), n_terminal: terminal.len(), n_entire: entire.len() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: u64,
    pub failed: bool,
    pub origin: Origin,
    pub alpha: Option<f64>,
}

/// Running test/failure counters with a per-iteration log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTracker {
    tests_run: u64,
    failures_found: u64,
    log: Vec<IterationLog>,
}

impl MetricsTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, failed: bool, origin: Origin, alpha: Option<f64>) {
        self.tests_run += 1;
        if failed {
            self.failures_found += 1;
        }
        self.log.push(IterationLog { iteration: self.tests_run, failed, origin, alpha });
    }

    pub fn tests_run(&self) -> u64 {
        self.tests_run
    }

    pub fn failures_found(&self) -> u64 {
        self.failures_found
    }

    pub fn log(&self) -> &[IterationLog] {
        &self.log
    }

    /// Failure rate over the last `window` tests.
    pub fn windowed_rate(&self, window: usize) -> Result<f64, EvaluationError> {
        if self.log.is_empty() {
            return Err(EvaluationError::NoTests);
        }
        let tail = &self.log[self.log.len().saturating_sub(window.max(1))..];
        Ok(tail.iter().filter(|l| l.failed).count() as f64 / tail.len() as f64)
    }
}

pub fn failure_rate(tracker: &MetricsTracker) -> Result<f64, EvaluationError> {
    if tracker.tests_run == 0 {
        return Err(EvaluationError::NoTests);
    }
    Ok(tracker.failures_found as f64 / tracker.tests_run as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvState;
    use proptest::prelude::*;

    fn traj(states: &[&[f64]]) -> Trajectory {
        states
            .iter()
            .enumerate()
            .map(|(i, s)| EnvState { observation: s.to_vec(), frame: i as u32 })
            .collect()
    }

    fn result(r: f64) -> EpisodeResult {
        EpisodeResult { cumulative_reward: r, frames: 0, failed: false, failure_kind: None, trajectory: traj(&[&[0.0]]) }
    }

    #[test]
    fn potential_negates_reward() {
        assert_eq!(potential_of(&result(-3.0)), 3.0);
        assert_eq!(potential_of(&result(0.0)), 0.0);
        assert!(potential_of(&result(1.0)) > potential_of(&result(2.0)));
    }

    #[test]
    fn cell_index_examples() {
        let g = DiversityGrid::new(vec![0.0], vec![1.0], 4).unwrap();
        assert_eq!(cell_index(&[0.0], &g).unwrap(), vec![0]);
        assert_eq!(cell_index(&[1.0], &g).unwrap(), vec![3]);
        let g2 = DiversityGrid::new(vec![0.0, 0.0], vec![1.0, 1.0], 4).unwrap();
        assert_eq!(cell_index(&[0.26, 0.74], &g2).unwrap(), vec![1, 2]);
        assert!(cell_index(&[0.1], &g2).is_err());
        let flat = DiversityGrid::new(vec![2.0], vec![2.0], 4).unwrap();
        assert_eq!(cell_index(&[2.0], &flat).unwrap(), vec![0]);
        assert!(DiversityGrid::new(vec![0.0], vec![1.0], 0).is_err());
    }

    #[test]
    fn diversity_examples() {
        let a = traj(&[&[0.0, 0.0], &[0.5, 0.5]]);
        let b = traj(&[&[1.0, 1.0], &[0.5, 0.5]]);
        let c = diversity_counts(&[a.clone(), b.clone()], 4).unwrap();
        assert_eq!((c.n_initial, c.n_terminal), (2, 1));
        assert_eq!(c.n_entire, 3);

        let single = diversity_counts(&[traj(&[&[0.3, 0.9]])], 10).unwrap();
        assert_eq!(single, DiversityCounts { n_initial: 1, n_terminal: 1, n_entire: 1 });

        let dup = diversity_counts(&[a.clone(), b.clone(), a, b], 4).unwrap();
        assert_eq!(dup, c);
        assert_eq!(diversity_counts(&[], 4), Err(EvaluationError::EmptyInput));
    }

    #[test]
    fn failure_rate_examples() {
        let mut t = MetricsTracker::new();
        assert_eq!(failure_rate(&t), Err(EvaluationError::NoTests));
        for i in 0..100 {
            t.record(i < 5, Origin::RandomMutation, None);
        }
        assert_eq!(failure_rate(&t).unwrap(), 0.05);
        let mut none = MetricsTracker::new();
        none.record(false, Origin::InitialSample, None);
        assert_eq!(failure_rate(&none).unwrap(), 0.0);
        let mut all = MetricsTracker::new();
        for _ in 0..100 {
            all.record(true, Origin::LlmMutation, Some(25.0));
        }
        assert_eq!(failure_rate(&all).unwrap(), 1.0);
        assert_eq!(all.windowed_rate(10).unwrap(), 1.0);
        assert_eq!(t.windowed_rate(10).unwrap(), 0.0);
    }

    fn trajectories() -> impl Strategy<Value = Vec<Trajectory>> {
        (1usize..4).prop_flat_map(|d| {
            proptest::collection::vec(
                proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, d), 1..6),
                1..6,
            )
        })
        .prop_map(|sets| {
            sets.into_iter()
                .map(|t| t.into_iter().enumerate().map(|(i, o)| EnvState { observation: o, frame: i as u32 }).collect())
                .collect()
        })
    }

    proptest! {
        #[test]
        fn entire_dominates_initial_and_terminal(ts in trajectories(), n in 1u32..8) {
            let c = diversity_counts(&ts, n).unwrap();
            prop_assert!(c.n_initial <= c.n_entire);
            prop_assert!(c.n_terminal <= c.n_entire);
        }

        #[test]
        fn cell_index_is_affine_covariant(
            state in proptest::collection::vec(-5.0f64..5.0, 3),
            scale in 0.5f64..4.0,
            shift in -10.0f64..10.0,
        ) {
            let g = DiversityGrid::new(vec![-5.0; 3], vec![5.0; 3], 7).unwrap();
            let g2 = DiversityGrid::new(vec![-5.0 * scale + shift; 3], vec![5.0 * scale + shift; 3], 7).unwrap();
            let moved: Vec<f64> = state.iter().map(|v| v * scale + shift).collect();
            // skip states sitting on a bin edge, where rounding decides the side
            for v in &state {
                let pos = (v + 5.0) / (10.0 / 7.0);
                prop_assume!((pos - pos.round()).abs() > 1e-9);
            }
            prop_assert_eq!(cell_index(&state, &g).unwrap(), cell_index(&moved, &g2).unwrap());
        }
    }
}
