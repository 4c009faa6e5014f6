//! Scenario database: random initialization, sensitivity-weighted seed
//! sampling and the add/remove rules applied after every test.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, EpisodeResult};
use crate::error::CorpusError;
use crate::evaluation::{cell_index, potential_of, Cell, DiversityGrid};
use crate::scenario::{clip, validate, Origin, Scenario, ScenarioId, ScenarioSpace};

/// Perturbation norms below this count as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;
/// Redraws allowed for a degenerate or invalid sensitivity perturbation.
pub const PERTURBATION_RETRIES: usize = 20;
/// Draws allowed per corpus slot before giving up on the constraint hook.
pub const INIT_RETRIES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub scenario: Scenario,
    pub r_seed: f64,
    pub sensitivity: f64,
    pub potential: f64,
    pub freshness_cell: Cell,
    pub added_at: u64,
}

/// Floor added to every sampling weight so zero-sensitivity seeds stay
/// reachable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum WeightFloor {
    /// Fraction of the largest sensitivity in the corpus.
    Relative(f64),
    Absolute(f64),
}

impl Default for WeightFloor {
    fn default() -> Self {
        WeightFloor::Relative(1e-3)
    }
}

/// Hands out monotonically increasing scenario ids.
#[derive(Clone, Debug, Default)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_id(&mut self) -> ScenarioId {
        let id = ScenarioId(self.next);
        self.next += 1;
        id
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityOptions {
    pub amplitude: f64,
    pub draws: usize,
    pub max_frames: u32,
}

/// `|r_seed − r_delta| / ‖delta‖₂` for an already realized perturbation.
pub fn sensitivity(r_seed: f64, r_delta: f64, delta: &[f64]) -> f64 {
    let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
    (r_seed - r_delta).abs() / norm
}

/// Mean sensitivity over `opts.draws` perturbations of a seed whose reward is
/// already known. The perturbation is drawn per dimension as a fraction of
/// the range, clipped into bounds, and its norm is taken in range-normalized
/// units.
pub fn sensitivity_with_reward<R: Rng + ?Sized>(
    env: &dyn Environment,
    params: &[f64],
    r_seed: f64,
    opts: &SensitivityOptions,
    rng: &mut R,
) -> Result<f64, CorpusError> {
    if !(opts.amplitude > 0.0) {
        return Err(CorpusError::NonPositiveAmplitude(opts.amplitude));
    }
    let space = env.space();
    let draws = opts.draws.max(1);
    let mut total = 0.0;
    for _ in 0..draws {
        let mut realized = None;
        for _ in 0..PERTURBATION_RETRIES {
            let raw: Vec<f64> = (0..space.dims())
                .map(|i| params[i] + rng.gen_range(-opts.amplitude..=opts.amplitude) * space.range(i))
                .collect();
            let moved = clip(space, &raw)?;
            let delta: Vec<f64> = (0..space.dims()).map(|i| (moved[i] - params[i]) / space.range(i)).collect();
            let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
            if norm < DEGENERATE_NORM || !validate(space, &moved).is_valid() {
                continue;
            }
            realized = Some((moved, delta));
            break;
        }
        let (moved, delta) = realized.ok_or(CorpusError::DegeneratePerturbation(PERTURBATION_RETRIES))?;
        let r_delta = env.simulate(&moved, opts.max_frames).cumulative_reward;
        total += sensitivity(r_seed, r_delta, &delta);
    }
    Ok(total / draws as f64)
}

/// Rolls out the seed and a perturbed copy and returns their sensitivity.
pub fn compute_sensitivity<R: Rng + ?Sized>(
    env: &dyn Environment,
    scenario: &Scenario,
    opts: &SensitivityOptions,
    rng: &mut R,
) -> Result<f64, CorpusError> {
    if !(opts.amplitude > 0.0) {
        return Err(CorpusError::NonPositiveAmplitude(opts.amplitude));
    }
    let r_seed = crate::env::run_episode(env, scenario, opts.max_frames)?.cumulative_reward;
    sensitivity_with_reward(env, &scenario.params, r_seed, opts, rng)
}

/// Draws one point uniformly per dimension.
pub fn uniform_params<R: Rng + ?Sized>(space: &ScenarioSpace, rng: &mut R) -> Vec<f64> {
    (0..space.dims())
        .map(|i| space.lower()[i] + rng.gen::<f64>() * space.range(i))
        .collect()
}

/// Uniform draw that satisfies the space's constraint hook.
pub fn sample_valid<R: Rng + ?Sized>(space: &ScenarioSpace, rng: &mut R) -> Result<Vec<f64>, CorpusError> {
    for _ in 0..INIT_RETRIES {
        let p = uniform_params(space, rng);
        if validate(space, &p).is_valid() {
            return Ok(p);
        }
    }
    Err(CorpusError::ConstraintExhausted { attempts: INIT_RETRIES })
}

#[derive(Clone, Debug, PartialEq)]
pub enum UpdateOutcome {
    AddedNew { evicted: Option<ScenarioId> },
    SeedRemoved,
    Discarded,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub schema_version: u32,
    pub iteration: u64,
    pub id: ScenarioId,
    pub parent: Option<ScenarioId>,
    pub origin: Origin,
    pub params: Vec<f64>,
    pub r_seed: f64,
    pub sensitivity: f64,
    pub potential: f64,
    pub added_at: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
    capacity: Option<usize>,
    seen_cells: BTreeSet<Cell>,
    failures: Vec<ScenarioId>,
}

impl Corpus {
    pub fn new(capacity: Option<usize>) -> Self {
        Self { capacity, ..Self::default() }
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn failures(&self) -> &[ScenarioId] {
        &self.failures
    }

    pub fn potentials(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.potential).collect()
    }

    pub fn get(&self, id: ScenarioId) -> Option<&CorpusEntry> {
        self.entries.iter().find(|e| e.scenario.id == id)
    }

    pub fn has_seen(&self, cell: &Cell) -> bool {
        self.seen_cells.contains(cell)
    }

    /// Inserts an entry, evicting the lowest-potential entry on overflow.
    pub fn insert(&mut self, entry: CorpusEntry) -> Option<ScenarioId> {
        self.seen_cells.insert(entry.freshness_cell.clone());
        self.entries.push(entry);
        match self.capacity {
            Some(cap) if self.entries.len() > cap => {
                let (idx, _) = self
                    .entries
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.potential.total_cmp(&b.1.potential))
                    .expect("non-empty after push");
                Some(self.entries.remove(idx).scenario.id)
            }
            _ => None,
        }
    }

    /// Builds a corpus entry from a completed rollout.
    pub fn make_entry(
        scenario: Scenario,
        result: &EpisodeResult,
        sensitivity: f64,
        grid: &DiversityGrid,
        added_at: u64,
    ) -> Result<CorpusEntry, CorpusError> {
        let freshness_cell = cell_index(&result.terminal().observation, grid)?;
        Ok(CorpusEntry {
            scenario,
            r_seed: result.cumulative_reward,
            sensitivity,
            potential: potential_of(result),
            freshness_cell,
            added_at,
        })
    }

    /// Random initial corpus. Every draw is rolled out once; draws that fail
    /// immediately are still valid seeds.
    #[allow(clippy::too_many_arguments)]
    pub fn init_random<R: Rng + ?Sized>(
        env: &dyn Environment,
        count: usize,
        capacity: Option<usize>,
        sens: &SensitivityOptions,
        grid: &DiversityGrid,
        ids: &mut IdAllocator,
        rng: &mut R,
    ) -> Result<Self, CorpusError> {
        if count == 0 {
            return Err(CorpusError::ZeroCount);
        }
        let mut corpus = Corpus::new(capacity.map(|c| c.max(count)));
        corpus.add_random(env, count, sens, grid, ids, 0, rng)?;
        Ok(corpus)
    }

    /// Draws, rolls out and inserts `count` fresh uniform scenarios.
    #[allow(clippy::too_many_arguments)]
    pub fn add_random<R: Rng + ?Sized>(
        &mut self,
        env: &dyn Environment,
        count: usize,
        sens: &SensitivityOptions,
        grid: &DiversityGrid,
        ids: &mut IdAllocator,
        added_at: u64,
        rng: &mut R,
    ) -> Result<(), CorpusError> {
        for _ in 0..count {
            let params = sample_valid(env.space(), rng)?;
            let scenario = Scenario::new(ids.next_id(), params, None, Origin::InitialSample);
            let result = env.simulate(&scenario.params, sens.max_frames);
            let rho = sensitivity_with_reward(env, &scenario.params, result.cumulative_reward, sens, rng)?;
            let entry = Self::make_entry(scenario, &result, rho, grid, added_at)?;
            self.insert(entry);
        }
        Ok(())
    }

    fn weights(&self, floor: WeightFloor) -> Vec<f64> {
        let max = self.entries.iter().map(|e| e.sensitivity).fold(0.0, f64::max);
        let eps = match floor {
            WeightFloor::Relative(f) => f * max,
            WeightFloor::Absolute(a) => a,
        };
        let w: Vec<f64> = self.entries.iter().map(|e| e.sensitivity + eps).collect();
        if w.iter().sum::<f64>() > 0.0 {
            w
        } else {
            vec![1.0; w.len()]
        }
    }

    /// Index of an entry drawn proportionally to `sensitivity + floor`.
    pub fn sample_index<R: Rng + ?Sized>(&self, floor: WeightFloor, rng: &mut R) -> Result<usize, CorpusError> {
        if self.entries.is_empty() {
            return Err(CorpusError::Empty);
        }
        let dist = WeightedIndex::new(self.weights(floor)).map_err(|e| CorpusError::Sampling(e.to_string()))?;
        Ok(dist.sample(rng))
    }

    pub fn sample_seed<R: Rng + ?Sized>(&self, floor: WeightFloor, rng: &mut R) -> Result<&CorpusEntry, CorpusError> {
        let i = self.sample_index(floor, rng)?;
        Ok(&self.entries[i])
    }

    /// Applies the post-test rule: a failure removes the seed; otherwise the
    /// new scenario is added when its reward dropped below the seed's or its
    /// terminal cell is new to the corpus. `sensitivity` is only evaluated
    /// for scenarios that get added.
    pub fn update_after_test<F>(
        &mut self,
        seed_id: ScenarioId,
        new_scenario: Scenario,
        new_result: &EpisodeResult,
        grid: &DiversityGrid,
        iteration: u64,
        sensitivity: F,
    ) -> Result<UpdateOutcome, CorpusError>
    where
        F: FnOnce(&Scenario) -> Result<f64, CorpusError>,
    {
        if new_result.failed {
            self.failures.push(new_scenario.id);
            self.entries.retain(|e| e.scenario.id != seed_id);
            return Ok(UpdateOutcome::SeedRemoved);
        }
        let r_seed = self.get(seed_id).map(|e| e.r_seed);
        let cell = cell_index(&new_result.terminal().observation, grid)?;
        let lower_reward = r_seed.is_some_and(|r| new_result.cumulative_reward < r);
        if !(lower_reward || !self.has_seen(&cell)) {
            return Ok(UpdateOutcome::Discarded);
        }
        let rho = sensitivity(&new_scenario)?;
        let entry = Self::make_entry(new_scenario, new_result, rho, grid, iteration)?;
        let evicted = self.insert(entry);
        Ok(UpdateOutcome::AddedNew { evicted })
    }

    pub fn records(&self, iteration: u64) -> Vec<CorpusRecord> {
        self.entries
            .iter()
            .map(|e| CorpusRecord {
                schema_version: crate::SCHEMA_VERSION,
                iteration,
                id: e.scenario.id,
                parent: e.scenario.parent,
                origin: e.scenario.origin,
                params: e.scenario.params.clone(),
                r_seed: e.r_seed,
                sensitivity: e.sensitivity,
                potential: e.potential,
                added_at: e.added_at,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvState, EpisodeResult};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    /// Reward is the negated first coordinate; fails when it exceeds 0.9.
    struct Ramp {
        space: ScenarioSpace,
    }

    impl Ramp {
        fn new(space: ScenarioSpace) -> Self {
            Self { space }
        }
    }

    impl Environment for Ramp {
        fn name(&self) -> &str {
            "ramp"
        }
        fn space(&self) -> &ScenarioSpace {
            &self.space
        }
        fn default_max_frames(&self) -> u32 {
            1
        }
        fn observation_bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (self.space.lower().to_vec(), self.space.upper().to_vec())
        }
        fn simulate(&self, params: &[f64], _max_frames: u32) -> EpisodeResult {
            let failed = params[0] > 0.9;
            EpisodeResult {
                cumulative_reward: -params[0],
                frames: 0,
                failed,
                failure_kind: failed.then(|| "ramp".to_string()),
                trajectory: vec![EnvState { observation: params.to_vec(), frame: 0 }],
            }
        }
    }

    fn unit(d: usize) -> ScenarioSpace {
        ScenarioSpace::new(vec![0.0; d], vec![1.0; d], (0..d).map(|i| format!("x{i}")).collect()).unwrap()
    }

    fn sens() -> SensitivityOptions {
        SensitivityOptions { amplitude: 0.05, draws: 1, max_frames: 1 }
    }

    fn entry(id: u64, rho: f64, r: f64) -> CorpusEntry {
        CorpusEntry {
            scenario: Scenario::new(ScenarioId(id), vec![0.5], None, Origin::InitialSample),
            r_seed: r,
            sensitivity: rho,
            potential: -r,
            freshness_cell: vec![id as u32],
            added_at: 0,
        }
    }

    #[test]
    fn sensitivity_formula() {
        assert_eq!(sensitivity(10.0, 7.0, &[3.0, 4.0]), 0.6);
        assert_eq!(sensitivity(4.0, 4.0, &[0.1]), 0.0);
    }

    #[test]
    fn init_random_examples() {
        let env = Ramp::new(unit(1));
        let grid = DiversityGrid::new(vec![0.0], vec![1.0], 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ids = IdAllocator::new();
        let c = Corpus::init_random(&env, 3, None, &sens(), &grid, &mut ids, &mut rng).unwrap();
        assert_eq!(c.len(), 3);
        for e in c.entries() {
            assert!((0.0..=1.0).contains(&e.scenario.params[0]));
            assert_eq!(e.potential, -e.r_seed);
            assert!(e.sensitivity >= 0.0);
        }
        assert_eq!(
            Corpus::init_random(&env, 0, None, &sens(), &grid, &mut ids, &mut rng).unwrap_err(),
            CorpusError::ZeroCount
        );
        let never = Ramp::new(unit(1).with_constraint(Arc::new(|_: &[f64]| Err("never".to_string()))));
        assert!(matches!(
            Corpus::init_random(&never, 2, None, &sens(), &grid, &mut ids, &mut rng),
            Err(CorpusError::ConstraintExhausted { .. })
        ));
    }

    #[test]
    fn insensitive_policy_has_zero_sensitivity() {
        struct Flat(ScenarioSpace);
        impl Environment for Flat {
            fn name(&self) -> &str {
                "flat"
            }
            fn space(&self) -> &ScenarioSpace {
                &self.0
            }
            fn default_max_frames(&self) -> u32 {
                1
            }
            fn observation_bounds(&self) -> (Vec<f64>, Vec<f64>) {
                (vec![0.0], vec![1.0])
            }
            fn simulate(&self, p: &[f64], _: u32) -> EpisodeResult {
                EpisodeResult {
                    cumulative_reward: 3.0,
                    frames: 0,
                    failed: false,
                    failure_kind: None,
                    trajectory: vec![EnvState { observation: p.to_vec(), frame: 0 }],
                }
            }
        }
        let env = Flat(unit(2));
        let s = Scenario::new(ScenarioId(0), vec![0.3, 0.3], None, Origin::InitialSample);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(compute_sensitivity(&env, &s, &sens(), &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn ramp_sensitivity_matches_slope() {
        // reward = -x0 on a unit range: |Δr| / ||Δ|| = |Δx0| / |Δx0| = 1 in one dimension
        let env = Ramp::new(unit(1));
        let s = Scenario::new(ScenarioId(0), vec![0.5], None, Origin::InitialSample);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = compute_sensitivity(&env, &s, &sens(), &mut rng).unwrap();
        assert!((rho - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sensitivity_rejects_bad_amplitude_and_degenerate_draws() {
        let env = Ramp::new(unit(1));
        let s = Scenario::new(ScenarioId(0), vec![0.5], None, Origin::InitialSample);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bad = SensitivityOptions { amplitude: 0.0, ..sens() };
        assert_eq!(compute_sensitivity(&env, &s, &bad, &mut rng), Err(CorpusError::NonPositiveAmplitude(0.0)));
        // every perturbed point violates the hook, so no usable Δ exists
        let picky = Ramp::new(unit(1).with_constraint(Arc::new(|p: &[f64]| {
            if p[0] == 0.5 { Ok(()) } else { Err("only the seed".to_string()) }
        })));
        assert_eq!(
            compute_sensitivity(&picky, &s, &sens(), &mut rng),
            Err(CorpusError::DegeneratePerturbation(PERTURBATION_RETRIES))
        );
    }

    #[test]
    fn sampling_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let empty = Corpus::new(None);
        assert_eq!(empty.sample_index(WeightFloor::default(), &mut rng), Err(CorpusError::Empty));
        let mut one = Corpus::new(None);
        one.insert(entry(4, 0.0, 0.0));
        for _ in 0..20 {
            assert_eq!(one.sample_seed(WeightFloor::default(), &mut rng).unwrap().scenario.id, ScenarioId(4));
        }
        let mut zeros = Corpus::new(None);
        for i in 0..4 {
            zeros.insert(entry(i, 0.0, 0.0));
        }
        let mut counts = [0usize; 4];
        for _ in 0..8000 {
            counts[zeros.sample_index(WeightFloor::default(), &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((1700..2300).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn update_rules() {
        let grid = DiversityGrid::new(vec![0.0], vec![1.0], 10).unwrap();
        let mut c = Corpus::new(None);
        let mut seed = entry(1, 0.5, -0.4);
        seed.freshness_cell = vec![4];
        c.insert(seed);
        let env = Ramp::new(unit(1));
        let no_sens = |_: &Scenario| -> Result<f64, CorpusError> { Ok(0.0) };

        // reward dropped by one, known cell
        let s = Scenario::new(ScenarioId(2), vec![0.45], Some(ScenarioId(1)), Origin::RandomMutation);
        let mut r = env.simulate(&s.params, 1);
        r.cumulative_reward = -1.4;
        assert_eq!(c.update_after_test(ScenarioId(1), s, &r, &grid, 1, no_sens).unwrap(), UpdateOutcome::AddedNew { evicted: None });

        // reward rose, known cell
        let s = Scenario::new(ScenarioId(3), vec![0.41], Some(ScenarioId(1)), Origin::RandomMutation);
        let mut r = env.simulate(&s.params, 1);
        r.cumulative_reward = 4.6;
        assert_eq!(c.update_after_test(ScenarioId(1), s, &r, &grid, 2, no_sens).unwrap(), UpdateOutcome::Discarded);

        // reward rose, novel cell
        let s = Scenario::new(ScenarioId(4), vec![0.05], Some(ScenarioId(1)), Origin::RandomMutation);
        let r = env.simulate(&s.params, 1);
        assert_eq!(c.update_after_test(ScenarioId(1), s, &r, &grid, 3, no_sens).unwrap(), UpdateOutcome::AddedNew { evicted: None });
        assert_eq!(c.len(), 3);

        // failure removes the seed
        let s = Scenario::new(ScenarioId(5), vec![0.95], Some(ScenarioId(1)), Origin::RandomMutation);
        let r = env.simulate(&s.params, 1);
        assert_eq!(c.update_after_test(ScenarioId(1), s, &r, &grid, 4, no_sens).unwrap(), UpdateOutcome::SeedRemoved);
        assert_eq!(c.len(), 2);
        assert!(c.get(ScenarioId(1)).is_none());
        assert_eq!(c.failures(), &[ScenarioId(5)]);
        assert!(c.entries().iter().all(|e| e.potential == -e.r_seed));
    }

    #[test]
    fn overflow_evicts_lowest_potential() {
        let mut c = Corpus::new(Some(2));
        c.insert(entry(1, 0.0, -5.0));
        c.insert(entry(2, 0.0, -1.0));
        assert_eq!(c.insert(entry(3, 0.0, -3.0)), Some(ScenarioId(2)));
        assert_eq!(c.len(), 2);
    }
}
