//! Environment/policy abstraction and the built-in simulated environments.
//!
//! An [`Environment`] bundles a scenario space with a scripted policy under
//! test. Rollouts are pure functions of `(params, max_frames)`; all
//! per-episode state lives on the stack of [`Environment::simulate`], so one
//! instance can serve concurrent rollouts.

mod collision;
mod coopnav;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::EnvError;
use crate::scenario::{validate, Scenario, ScenarioSpace, Validity};

pub use collision::{CollisionAvoidance, CollisionParams};
pub use coopnav::{CoopNav, CoopNavParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub frame: u32,
}

pub type Trajectory = Vec<EnvState>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub cumulative_reward: f64,
    pub frames: u32,
    pub failed: bool,
    pub failure_kind: Option<String>,
    pub trajectory: Trajectory,
}

impl EpisodeResult {
    pub fn terminal(&self) -> &EnvState {
        self.trajectory.last().expect("trajectory is never empty")
    }
}

/// Summary of recent generator feedback an analytic editor may react to.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EditHints {
    pub insufficient_challenge: usize,
    pub invalidity: usize,
    pub excessive_modification: usize,
}

pub trait Environment: Send + Sync {
    fn name(&self) -> &str;

    fn space(&self) -> &ScenarioSpace;

    fn default_max_frames(&self) -> u32;

    /// Per-dimension bounds of the observation vector, used for the
    /// freshness grid.
    fn observation_bounds(&self) -> (Vec<f64>, Vec<f64>);

    /// Rolls out the bundled policy. Callers must have validated `params`.
    fn simulate(&self, params: &[f64], max_frames: u32) -> EpisodeResult;

    /// Analytic adversarial edit of a seed, used by the offline heuristic
    /// LLM backend. `None` means the environment has no editor.
    fn adversarial_edit(
        &self,
        _seed: &[f64],
        _hints: &EditHints,
        _rng: &mut dyn RngCore,
    ) -> Option<(String, Vec<f64>)> {
        None
    }
}

impl fmt::Debug for dyn Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Environment({})", self.name())
    }
}

/// Validates the scenario against the environment's space and rolls it out.
pub fn run_episode(
    env: &dyn Environment,
    scenario: &Scenario,
    max_frames: u32,
) -> Result<EpisodeResult, EnvError> {
    if max_frames == 0 {
        return Err(EnvError::ZeroMaxFrames);
    }
    if let Validity::Invalid(reason) = validate(env.space(), &scenario.params) {
        return Err(EnvError::InvalidScenario(reason));
    }
    Ok(env.simulate(&scenario.params, max_frames))
}

pub type EnvFactory = Arc<dyn Fn() -> Arc<dyn Environment> + Send + Sync>;

/// Name-keyed environment factories. Downstream crates register their own
/// environments next to the built-ins.
#[derive(Clone)]
pub struct EnvRegistry {
    factories: BTreeMap<String, EnvFactory>,
}

pub const COLLISION_AVOIDANCE: &str = "collision-avoidance-2d";
pub const COOP_NAV: &str = "coop-nav";

impl Default for EnvRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl EnvRegistry {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register(COLLISION_AVOIDANCE, || {
            Arc::new(CollisionAvoidance::new(CollisionParams::default())) as Arc<dyn Environment>
        });
        reg.register(COOP_NAV, || Arc::new(CoopNav::new(CoopNavParams::default())) as Arc<dyn Environment>);
        reg
    }

    pub fn register<F>(&mut self, name: impl Into<String>, factory: F)
    where
        F: Fn() -> Arc<dyn Environment> + Send + Sync + 'static,
    {
        self.factories.insert(name.into(), Arc::new(factory));
    }

    pub fn create(&self, name: &str) -> Result<Arc<dyn Environment>, EnvError> {
        self.factories
            .get(name)
            .map(|f| f())
            .ok_or_else(|| EnvError::Unknown(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut x = (a + std::f64::consts::PI) % two_pi;
    if x < 0.0 {
        x += two_pi;
    }
    x - std::f64::consts::PI
}

/// Minimum distance between two points moving linearly over one step,
/// from relative position `p0` to `p1`.
pub(crate) fn segment_min_distance(p0: [f64; 2], p1: [f64; 2]) -> f64 {
    let d = [p1[0] - p0[0], p1[1] - p0[1]];
    let dd = d[0] * d[0] + d[1] * d[1];
    let t = if dd > 0.0 {
        (-(p0[0] * d[0] + p0[1] * d[1]) / dd).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let x = p0[0] + t * d[0];
    let y = p0[1] + t * d[1];
    (x * x + y * y).sqrt()
}

/// Rounds `x` to a multiple of `step` and keeps it inside `[lo, hi]`.
pub(crate) fn coarse(x: f64, step: f64, lo: f64, hi: f64) -> f64 {
    let r = (x / step).round() * step;
    // strip representation noise such as 0.30000000000000004
    let r: f64 = format!("{:.6}", r).parse().unwrap_or(r);
    r.clamp(lo, hi)
}
