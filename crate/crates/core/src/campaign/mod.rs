//! Generate, test and feed back: the campaign loop, its baselines, replay
//! of recorded failures and side-by-side method comparison.

pub mod config;
pub mod output;

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{apply_overrides, multiscale_defaults, BackendKind, CampaignConfig, Method};
pub use output::{FailureRecord, MetricsRow};

use crate::corpus::{sample_valid, sensitivity_with_reward, Corpus, IdAllocator, SensitivityOptions, UpdateOutcome};
use crate::env::{run_episode, EnvRegistry, Environment, Trajectory};
use crate::error::{CampaignError, ConfigError, CorpusError, GenerationError, GeneratorError};
use crate::evaluation::{diversity_counts, failure_rate, DiversityCounts, DiversityGrid, MetricsTracker};
use crate::generator::{random_mutation, GeneratorState, LlmMutator};
use crate::llm::{
    classify_bad_case, BadCaseCategory, ExpertExperience, HeuristicBackend, HttpBackend, LlmBackend, LlmGenerator,
    PromptTemplate, ScriptedBackend, Thresholds, Trial,
};
use crate::scenario::{validate, Origin, Scenario, ScenarioId, Validity};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BadCaseTotals {
    pub insufficient_challenge: u64,
    pub invalidity: u64,
    pub excessive_modification: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub iteration: u64,
    pub alpha: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CampaignReport {
    pub environment: String,
    pub method: Method,
    pub seed: u64,
    pub budget: u64,
    pub tests_run: u64,
    pub failures: u64,
    pub failure_rate: f64,
    /// Iterations whose generation produced nothing to test.
    pub skipped: u64,
    pub added: u64,
    pub discarded: u64,
    /// Seeds dispatched to the LLM generator.
    pub llm_calls: u64,
    /// Backend requests, re-asks included.
    pub llm_requests: u64,
    pub random_calls: u64,
    pub alpha_updates: u64,
    pub alpha_trace: Vec<AlphaPoint>,
    pub final_alpha: Option<f64>,
    /// Cumulative failures after each test.
    pub failure_series: Vec<u64>,
    pub diversity: Option<DiversityCounts>,
    pub reward_threshold: Option<f64>,
    pub bad_cases: BadCaseTotals,
    pub corpus_restarts: u64,
    pub failure_records: Vec<FailureRecord>,
    pub digest: Option<String>,
    #[serde(skip)]
    pub wall_clock: Duration,
}

/// Mixed into the campaign seed for the LLM sampling-seed stream.
const SAMPLING_STREAM: u64 = 0x5eed_11a5_u64;

/// Backend named by the config, or `None` for methods that never call one.
pub fn build_backend(
    config: &CampaignConfig,
    env: Arc<dyn Environment>,
    template: &PromptTemplate,
) -> Result<Option<Arc<dyn LlmBackend>>, CampaignError> {
    if !config.campaign.method.uses_llm() {
        return Ok(None);
    }
    let llm = &config.llm;
    let backend: Arc<dyn LlmBackend> = match llm.backend {
        BackendKind::Heuristic => Arc::new(HeuristicBackend::new(env, template.output_format_marker.clone())),
        BackendKind::Mock => {
            let path = llm
                .mock_responses
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("llm.backend = \"mock\" needs llm.mock_responses".into()))?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::Io { path: path.display().to_string(), reason: e.to_string() })?;
            let mock = ScriptedBackend::from_json(&text)
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
            Arc::new(if llm.mock_cycle { mock.cycling() } else { mock })
        }
        BackendKind::Http => {
            Arc::new(HttpBackend::from_env(&llm.base_url, &llm.model, Duration::from_secs(llm.timeout_secs))?)
        }
    };
    Ok(Some(backend))
}

pub fn load_template(config: &CampaignConfig) -> Result<PromptTemplate, CampaignError> {
    match &config.llm.template {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::Io { path: path.display().to_string(), reason: e.to_string() })?;
            Ok(PromptTemplate::parse(&text)?)
        }
        None => PromptTemplate::builtin(&config.campaign.environment).ok_or_else(|| {
            ConfigError::Invalid(format!("no shipped template for `{}`; set llm.template", config.campaign.environment))
                .into()
        }),
    }
}

fn load_initial(path: &Path, env: &dyn Environment) -> Result<Vec<Vec<f64>>, CampaignError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), reason: e.to_string() })?;
    let rows: Vec<Vec<f64>> =
        serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(ConfigError::Invalid(format!("{}: no scenarios", path.display())).into());
    }
    for (i, r) in rows.iter().enumerate() {
        if let Validity::Invalid(reason) = validate(env.space(), r) {
            return Err(ConfigError::Invalid(format!("{}: scenario {i}: {reason}", path.display())).into());
        }
    }
    Ok(rows)
}

/// Runs a campaign with the backend named in the config.
pub fn run_campaign(config: &CampaignConfig, registry: &EnvRegistry) -> Result<CampaignReport, CampaignError> {
    run_campaign_with(config, registry, None)
}

/// Runs a campaign; `backend` replaces the configured LLM backend when set.
pub fn run_campaign_with(
    config: &CampaignConfig,
    registry: &EnvRegistry,
    backend: Option<Arc<dyn LlmBackend>>,
) -> Result<CampaignReport, CampaignError> {
    let started = Instant::now();
    let env = registry.create(&config.campaign.environment)?;
    let mut cfg = config.clone();
    cfg.resolve(env.as_ref())?;
    let c = &cfg.campaign;
    let method = c.method;
    let max_frames = c.max_frames.expect("resolved");
    let space = env.space().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut ids = IdAllocator::new();

    let (obs_lo, obs_hi) = env.observation_bounds();
    let fresh_grid = DiversityGrid::new(obs_lo, obs_hi, c.freshness_intervals)?;
    let sens = SensitivityOptions {
        amplitude: cfg.generator.amplitude,
        draws: c.sensitivity_draws,
        max_frames,
    };

    let mut out = match &c.output_dir {
        Some(dir) => Some(output::OutputDir::create(dir, &cfg)?),
        None => None,
    };

    let mut corpus = Corpus::new(c.corpus_capacity);
    if method.uses_corpus() {
        match &c.initial_scenarios {
            Some(path) => {
                for params in load_initial(path, env.as_ref())? {
                    let s = Scenario::new(ids.next_id(), params, None, Origin::InitialSample);
                    let result = env.simulate(&s.params, max_frames);
                    let rho = sensitivity_with_reward(env.as_ref(), &s.params, result.cumulative_reward, &sens, &mut rng)?;
                    corpus.insert(Corpus::make_entry(s, &result, rho, &fresh_grid, 0)?);
                }
            }
            None => corpus.add_random(env.as_ref(), c.corpus_size, &sens, &fresh_grid, &mut ids, 0, &mut rng)?,
        }
    }

    let mut gen = GeneratorState::new(
        cfg.generator.alpha.expect("resolved"),
        cfg.generator.beta.expect("resolved"),
        cfg.generator.delta.expect("resolved"),
        cfg.generator.amplitude,
    )?;
    gen.percentile_method = cfg.generator.percentile;

    let mut llm = None;
    let mut thresholds = None;
    if method.uses_llm() {
        let template = load_template(&cfg)?;
        let backend = match backend {
            Some(b) => b,
            None => build_backend(&cfg, env.clone(), &template)?.expect("llm method"),
        };
        let g = LlmGenerator::new(backend, template, space.clone(), cfg.llm.feedback_capacity)?
            .with_experience(ExpertExperience { plans: cfg.llm.experience.clone() })
            .with_temperature(cfg.llm.temperature)
            .with_parse_attempts(cfg.llm.parse_attempts)
            .with_sampling_seed(c.seed ^ SAMPLING_STREAM);
        llm = Some(g);
        let t_r = match cfg.thresholds.reward {
            Some(t) => t,
            None => {
                let rewards = corpus.entries().iter().map(|e| e.r_seed);
                let (lo, hi) = rewards.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
                let span = hi - lo;
                cfg.thresholds.reward_fraction * if span > 0.0 { span } else { 1.0 }
            }
        };
        thresholds = Some(Thresholds::new(t_r, cfg.thresholds.distance)?);
    }

    let llmtester = method == Method::Llmtester;
    let mut report = CampaignReport {
        environment: c.environment.clone(),
        method,
        seed: c.seed,
        budget: c.budget,
        tests_run: 0,
        failures: 0,
        failure_rate: 0.0,
        skipped: 0,
        added: 0,
        discarded: 0,
        llm_calls: 0,
        llm_requests: 0,
        random_calls: 0,
        alpha_updates: 0,
        alpha_trace: if llmtester { vec![AlphaPoint { iteration: 0, alpha: gen.alpha }] } else { Vec::new() },
        final_alpha: None,
        failure_series: Vec::with_capacity(c.budget as usize),
        diversity: None,
        reward_threshold: thresholds.map(|t| t.reward()),
        bad_cases: BadCaseTotals::default(),
        corpus_restarts: 0,
        failure_records: Vec::new(),
        digest: None,
        wall_clock: Duration::ZERO,
    };
    let mut tracker = MetricsTracker::new();
    let mut failure_trajectories: Vec<Trajectory> = Vec::new();
    let mut consecutive_skips = 0u32;

    while tracker.tests_run() < c.budget {
        let iteration = tracker.tests_run() + 1;
        if method.uses_corpus() && corpus.is_empty() {
            log::info!("corpus exhausted at iteration {iteration}; drawing a fresh one");
            report.corpus_restarts += 1;
            corpus.add_random(env.as_ref(), c.corpus_size, &sens, &fresh_grid, &mut ids, iteration, &mut rng)?;
        }
        let seed = if method.uses_corpus() {
            Some(corpus.sample_seed(cfg.generator.weight_floor, &mut rng)?.clone())
        } else {
            None
        };
        let id = ids.next_id();
        let generated: Result<Scenario, GeneratorError> = match (method, &seed) {
            (Method::Random, _) => {
                sample_valid(&space, &mut rng).map(|p| Scenario::new(id, p, None, Origin::InitialSample)).map_err(|e| {
                    match e {
                        CorpusError::Scenario(s) => GeneratorError::Scenario(s),
                        other => GeneratorError::InvalidParameter(other.to_string()),
                    }
                })
            }
            (Method::Mdpfuzz, Some(s)) => {
                gen.random_calls += 1;
                random_mutation(&space, &s.scenario, gen.amplitude, id, &mut rng)
            }
            (Method::LlmtesterNoMs, Some(s)) => {
                gen.llm_calls += 1;
                llm.as_mut().expect("llm method").mutate(s, id).map_err(GeneratorError::from)
            }
            (Method::Llmtester, Some(s)) => {
                let p_d = corpus.potentials();
                gen.generate(&space, s, &p_d, llm.as_mut().expect("llm method"), id, &mut rng)
            }
            _ => unreachable!("corpus methods always have a seed"),
        };
        let scenario = match generated {
            Ok(s) => s,
            Err(e @ (GeneratorError::Generation(GenerationError::Invalid(_)) | GeneratorError::NoValidMutation(_))) => {
                log::debug!("iteration {iteration}: generation skipped ({e})");
                report.skipped += 1;
                consecutive_skips += 1;
                if consecutive_skips >= c.max_consecutive_skips {
                    return Err(CampaignError::TooManySkips(consecutive_skips));
                }
                continue;
            }
            Err(GeneratorError::Generation(GenerationError::Backend(b))) => return Err(CampaignError::Backend(b)),
            Err(e) => return Err(e.into()),
        };
        consecutive_skips = 0;

        let result = run_episode(env.as_ref(), &scenario, max_frames)?;
        let origin = scenario.origin;
        if let (Origin::LlmMutation, Some(s), Some(t), Some(g)) = (origin, &seed, &thresholds, llm.as_mut()) {
            let trial = Trial::Ran { params: &scenario.params, reward: result.cumulative_reward };
            if let Some(bad) = classify_bad_case(&space, &s.scenario.params, s.r_seed, &trial, t) {
                g.feedback_mut().push(bad);
            }
        }

        tracker.record(result.failed, origin, llmtester.then_some(gen.alpha));
        if result.failed {
            let record = FailureRecord {
                schema_version: crate::SCHEMA_VERSION,
                id: scenario.id,
                iteration,
                params: scenario.params.clone(),
                parent: scenario.parent,
                origin,
                frames: result.frames,
                failure_kind: result.failure_kind.clone(),
                reward: result.cumulative_reward,
            };
            if let Some(o) = out.as_mut() {
                o.failure(&record)?;
            }
            report.failure_records.push(record);
            failure_trajectories.push(result.trajectory.clone());
        }

        match &seed {
            Some(s) => {
                let r_new = result.cumulative_reward;
                let outcome = corpus.update_after_test(s.scenario.id, scenario, &result, &fresh_grid, iteration, |sc| {
                    sensitivity_with_reward(env.as_ref(), &sc.params, r_new, &sens, &mut rng)
                })?;
                match outcome {
                    UpdateOutcome::AddedNew { .. } => report.added += 1,
                    UpdateOutcome::Discarded => report.discarded += 1,
                    UpdateOutcome::SeedRemoved => {}
                }
            }
            None if !result.failed => report.discarded += 1,
            None => {}
        }

        if result.failed && llmtester {
            let rate = match c.failure_rate_window {
                Some(w) => tracker.windowed_rate(w)?,
                None => failure_rate(&tracker)?,
            };
            let before = gen.alpha;
            gen.update_alpha(rate)?;
            report.alpha_updates += 1;
            if gen.alpha != before {
                report.alpha_trace.push(AlphaPoint { iteration, alpha: gen.alpha });
            }
        }

        report.failure_series.push(tracker.failures_found());
        if let Some(o) = out.as_mut() {
            o.metrics(&MetricsRow {
                iteration,
                cumulative_failures: tracker.failures_found(),
                failure_rate: failure_rate(&tracker)?,
                alpha: llmtester.then_some(gen.alpha),
                origin,
            })?;
            if method.uses_corpus() && iteration.is_multiple_of(c.checkpoint_every) {
                o.checkpoint(&corpus.records(iteration))?;
            }
        }
    }

    report.tests_run = tracker.tests_run();
    report.failures = tracker.failures_found();
    report.failure_rate = failure_rate(&tracker)?;
    report.llm_calls = gen.llm_calls;
    report.random_calls = gen.random_calls;
    if let Some(g) = &llm {
        report.llm_requests = g.requests();
        let f = g.feedback();
        report.bad_cases = BadCaseTotals {
            insufficient_challenge: f.total(BadCaseCategory::InsufficientChallenge),
            invalidity: f.total(BadCaseCategory::Invalidity),
            excessive_modification: f.total(BadCaseCategory::ExcessiveModification),
        };
    }
    if llmtester {
        report.final_alpha = Some(gen.alpha);
    }
    if !failure_trajectories.is_empty() {
        report.diversity = Some(diversity_counts(&failure_trajectories, c.diversity_intervals)?);
    }
    if let Some(o) = out {
        if method.uses_corpus() {
            o.checkpoint(&corpus.records(report.tests_run))?;
        }
        let md = output::render_report(&report, &cfg);
        report.digest = Some(o.finish(&md)?);
    }
    report.wall_clock = started.elapsed();
    Ok(report)
}

/// Re-runs a recorded failure and checks that it fails again at the same
/// frame with the same kind.
pub fn replay_failure(
    record: &FailureRecord,
    env: &dyn Environment,
    max_frames: u32,
) -> Result<Trajectory, CampaignError> {
    let scenario = Scenario::new(record.id, record.params.clone(), record.parent, record.origin);
    let diverged = |detail: String| CampaignError::ReplayDivergence { id: record.id.0, detail };
    let result = run_episode(env, &scenario, max_frames).map_err(|e| diverged(e.to_string()))?;
    if !result.failed {
        return Err(diverged(format!("no failure within {} frames", result.frames)));
    }
    if result.frames != record.frames {
        return Err(diverged(format!("failed at frame {} instead of {}", result.frames, record.frames)));
    }
    if result.failure_kind != record.failure_kind {
        return Err(diverged(format!("failure kind {:?} instead of {:?}", result.failure_kind, record.failure_kind)));
    }
    Ok(result.trajectory)
}

/// Numbers recomputed from an output directory alone.
#[derive(Clone, Debug, PartialEq)]
pub struct Recomputed {
    pub tests: u64,
    pub failures: u64,
    pub diversity: Option<DiversityCounts>,
    pub results_md: String,
}

/// Replays every failure in `dir` and rebuilds the results table.
pub fn recompute_report(dir: &Path, registry: &EnvRegistry) -> Result<Recomputed, CampaignError> {
    let mut cfg = output::read_snapshot(dir)?;
    let env = registry.create(&cfg.campaign.environment)?;
    cfg.resolve(env.as_ref())?;
    let max_frames = cfg.campaign.max_frames.expect("resolved");
    let metrics = output::read_metrics(dir)?;
    let failures = output::read_failures(dir)?;
    let tests = metrics.len() as u64;
    let counted = metrics.last().map_or(0, |m| m.cumulative_failures);
    if counted != failures.len() as u64 {
        return Err(CampaignError::Io(format!(
            "metrics.csv counts {counted} failures but failures.jsonl holds {}",
            failures.len()
        )));
    }
    let trajectories =
        failures.iter().map(|r| replay_failure(r, env.as_ref(), max_frames)).collect::<Result<Vec<_>, _>>()?;
    let diversity = if trajectories.is_empty() {
        None
    } else {
        Some(diversity_counts(&trajectories, cfg.campaign.diversity_intervals)?)
    };
    let results_md = output::render_results(tests, counted, diversity.as_ref(), cfg.campaign.diversity_intervals);
    Ok(Recomputed { tests, failures: counted, diversity, results_md })
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub environment: String,
    pub budget: u64,
    pub reports: Vec<CampaignReport>,
}

impl Comparison {
    fn find(&self, m: Method) -> Option<&CampaignReport> {
        self.reports.iter().find(|r| r.method == m)
    }

    /// Whether multi-scale generation needed fewer LLM calls than the
    /// LLM-only arm, when both arms ran.
    pub fn llm_call_reduction(&self) -> Option<(u64, u64, bool)> {
        let full = self.find(Method::Llmtester)?;
        let ablated = self.find(Method::LlmtesterNoMs)?;
        Some((full.llm_calls, ablated.llm_calls, full.llm_calls < ablated.llm_calls))
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("# Method comparison: {} (budget {})\n\n", self.environment, self.budget);
        s.push_str("| method | tests | failures | failure rate | #Initial | #Terminal | #Entire | llm calls | random calls |\n");
        s.push_str("|---|---|---|---|---|---|---|---|---|\n");
        let na = |v: Option<usize>| v.map_or_else(|| "n/a".to_string(), |n| n.to_string());
        for r in &self.reports {
            let d = r.diversity.as_ref();
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.4} | {} | {} | {} | {} | {} |",
                r.method,
                r.tests_run,
                r.failures,
                r.failure_rate,
                na(d.map(|d| d.n_initial)),
                na(d.map(|d| d.n_terminal)),
                na(d.map(|d| d.n_entire)),
                r.llm_calls,
                r.random_calls
            );
        }
        if let Some((full, ablated, holds)) = self.llm_call_reduction() {
            let verdict = if holds { "holds" } else { "VIOLATED" };
            let _ = writeln!(
                s,
                "\nllm_calls(llmtester) = {full} < llm_calls(llmtester-no-ms) = {ablated}: {verdict}"
            );
        }
        s.push_str("\n## Cumulative failures\n\n| iteration |");
        for r in &self.reports {
            let _ = write!(s, " {} |", r.method);
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(self.reports.len()));
        s.push('\n');
        let n = self.reports.iter().map(|r| r.failure_series.len()).max().unwrap_or(0);
        let step = (n / 10).max(1);
        let mut rows: Vec<usize> = (step..=n).step_by(step).collect();
        if rows.last() != Some(&n) && n > 0 {
            rows.push(n);
        }
        for i in rows {
            let _ = write!(s, "| {i} |");
            for r in &self.reports {
                let v = r.failure_series.get(i - 1).map_or_else(|| "-".to_string(), |v| v.to_string());
                let _ = write!(s, " {v} |");
            }
            s.push('\n');
        }
        s
    }

    /// Per-iteration cumulative failures and failure rate for every method.
    pub fn series_csv(&self) -> String {
        let mut s = String::from("iteration");
        for r in &self.reports {
            let _ = write!(s, ",{m}_failures,{m}_rate", m = r.method);
        }
        s.push('\n');
        let n = self.reports.iter().map(|r| r.failure_series.len()).max().unwrap_or(0);
        for i in 0..n {
            let _ = write!(s, "{}", i + 1);
            for r in &self.reports {
                match r.failure_series.get(i) {
                    Some(&f) => {
                        let _ = write!(s, ",{f},{}", f as f64 / (i + 1) as f64);
                    }
                    None => s.push_str(",,"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Runs every config and lines the results up. All configs must target the
/// same environment with the same budget.
pub fn compare_methods(
    configs: &[CampaignConfig],
    registry: &EnvRegistry,
    backend: Option<Arc<dyn LlmBackend>>,
) -> Result<Comparison, CampaignError> {
    let first = configs.first().ok_or_else(|| ConfigError::Invalid("nothing to compare".into()))?;
    for c in configs {
        if c.campaign.environment != first.campaign.environment {
            return Err(ConfigError::Invalid(format!(
                "mismatched environments: `{}` vs `{}`",
                first.campaign.environment, c.campaign.environment
            ))
            .into());
        }
        if c.campaign.budget != first.campaign.budget {
            return Err(ConfigError::Invalid("compared campaigns must share a budget".into()).into());
        }
    }
    let reports = configs
        .iter()
        .map(|c| run_campaign_with(c, registry, backend.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Comparison { environment: first.campaign.environment.clone(), budget: first.campaign.budget, reports })
}

/// Identity of a recorded failure by id.
pub fn find_failure(records: &[FailureRecord], id: u64) -> Option<&FailureRecord> {
    records.iter().find(|r| r.id == ScenarioId(id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{COLLISION_AVOIDANCE, COOP_NAV};

    fn config(env: &str, method: Method, budget: u64) -> CampaignConfig {
        let text = format!(
            "[campaign]\nenvironment = \"{env}\"\nmethod = \"{}\"\nbudget = {budget}\nseed = 7\ncorpus_size = 10\n",
            method.as_str()
        );
        CampaignConfig::from_toml_str(&text, &[], None).unwrap()
    }

    fn reg() -> EnvRegistry {
        EnvRegistry::with_builtins()
    }

    #[test]
    fn random_baseline_tests_fresh_samples() {
        let r = run_campaign(&config(COOP_NAV, Method::Random, 100), &reg()).unwrap();
        assert_eq!(r.tests_run, 100);
        assert_eq!(r.failure_series.len(), 100);
        assert_eq!((r.llm_calls, r.random_calls, r.added), (0, 0, 0));
        assert!(r.failure_records.iter().all(|f| f.origin == Origin::InitialSample && f.parent.is_none()));
    }

    #[test]
    fn mdpfuzz_only_mutates_randomly() {
        let r = run_campaign(&config(COOP_NAV, Method::Mdpfuzz, 100), &reg()).unwrap();
        assert_eq!(r.tests_run, 100);
        assert_eq!(r.random_calls, 100);
        assert_eq!(r.llm_calls, 0);
        assert!(r.failure_records.iter().all(|f| f.origin == Origin::RandomMutation));
    }

    #[test]
    fn conservation_and_alpha_bookkeeping() {
        for method in Method::ALL {
            let r = run_campaign(&config(COLLISION_AVOIDANCE, method, 120), &reg()).unwrap();
            assert_eq!(r.tests_run, r.failures + r.added + r.discarded, "{method}");
            assert_eq!(r.failure_series.len() as u64, r.tests_run);
            if method == Method::Llmtester {
                assert_eq!(r.alpha_updates, r.failures);
                assert!(r.final_alpha.is_some());
            } else {
                assert_eq!(r.alpha_updates, 0);
            }
        }
    }

    #[test]
    fn unparseable_replies_skip_iterations_without_counting_tests() {
        let cfg = config(COOP_NAV, Method::LlmtesterNoMs, 5);
        let junk: Arc<dyn LlmBackend> = Arc::new(ScriptedBackend::new(vec!["nothing useful".into()]).cycling());
        let err = run_campaign_with(&cfg, &reg(), Some(junk)).unwrap_err();
        assert_eq!(err, CampaignError::TooManySkips(20));
    }

    #[test]
    fn backend_failure_aborts() {
        let cfg = config(COOP_NAV, Method::LlmtesterNoMs, 5);
        let dead: Arc<dyn LlmBackend> = Arc::new(ScriptedBackend::new(vec![]));
        assert!(matches!(run_campaign_with(&cfg, &reg(), Some(dead)), Err(CampaignError::Backend(_))));
    }

    #[test]
    fn outputs_are_written_and_replayable() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(COLLISION_AVOIDANCE, Method::Llmtester, 150);
        cfg.campaign.output_dir = Some(dir.path().to_path_buf());
        cfg.campaign.checkpoint_every = 50;
        let r = run_campaign(&cfg, &reg()).unwrap();
        for f in output::DIGEST_FILES {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert_eq!(r.digest.as_deref(), Some(output::output_digest(dir.path()).unwrap().as_str()));
        let again = recompute_report(dir.path(), &reg()).unwrap();
        assert_eq!((again.tests, again.failures, again.diversity), (r.tests_run, r.failures, r.diversity));
        let md = std::fs::read_to_string(dir.path().join(output::REPORT_FILE)).unwrap();
        assert!(md.contains(&again.results_md));
        let metrics = output::read_metrics(dir.path()).unwrap();
        assert_eq!(metrics.len() as u64, r.tests_run);
        let corpus = std::fs::read_to_string(dir.path().join(output::CORPUS_FILE)).unwrap();
        assert!(corpus.lines().all(|l| l.contains("\"schema_version\":1")));
    }

    #[test]
    fn tampered_record_diverges() {
        let env = reg().create(COLLISION_AVOIDANCE).unwrap();
        let record = FailureRecord {
            schema_version: 1,
            id: ScenarioId(1),
            iteration: 1,
            params: vec![500.0, 0.0, std::f64::consts::PI, 100.0, 100.0],
            parent: None,
            origin: Origin::InitialSample,
            frames: 2,
            failure_kind: Some("collision".into()),
            reward: 0.0,
        };
        let traj = replay_failure(&record, env.as_ref(), 100).unwrap();
        assert!(!traj.is_empty());
        let mut tampered = record.clone();
        tampered.params[1] = 3000.0;
        tampered.params[2] = std::f64::consts::FRAC_PI_2;
        assert!(matches!(
            replay_failure(&tampered, env.as_ref(), 100),
            Err(CampaignError::ReplayDivergence { id: 1, .. })
        ));
        let mut late = record;
        late.frames = 3;
        assert!(matches!(replay_failure(&late, env.as_ref(), 100), Err(CampaignError::ReplayDivergence { .. })));
    }

    #[test]
    fn comparison_rejects_mixed_environments() {
        let a = config(COOP_NAV, Method::Random, 10);
        let b = config(COLLISION_AVOIDANCE, Method::Random, 10);
        assert!(matches!(compare_methods(&[a, b], &reg(), None), Err(CampaignError::Config(_))));
    }

    #[test]
    fn comparison_table_has_a_row_per_method() {
        let cfgs: Vec<_> = [Method::Random, Method::Mdpfuzz, Method::Llmtester, Method::LlmtesterNoMs]
            .into_iter()
            .map(|m| config(COOP_NAV, m, 60))
            .collect();
        let cmp = compare_methods(&cfgs, &reg(), None).unwrap();
        let md = cmp.to_markdown();
        for m in ["random", "mdpfuzz", "llmtester", "llmtester-no-ms"] {
            assert!(md.contains(&format!("| {m} |")));
        }
        assert!(md.contains("llm_calls(llmtester)"));
        assert_eq!(cmp.series_csv().lines().count(), 61);
        let again = compare_methods(&cfgs, &reg(), None).unwrap();
        assert_eq!(again.to_markdown(), md);
        assert_eq!(again.series_csv(), cmp.series_csv());
    }
}
