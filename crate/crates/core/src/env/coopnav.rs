//! Cooperative navigation: three agents must cover three landmarks.
//!
//! The scripted policy recomputes a greedy nearest-pair assignment every
//! frame and steers each agent straight at its landmark. Agents closer than
//! the repulsion radius push each other apart, which is not enough to stop
//! agents whose paths cross or run through a parked agent.
//!
//! Scenario and observation layout: `[a0x, a0y, a1x, a1y, a2x, a2y, l0x, l0y,
//! l1x, l1y, l2x, l2y]`.

use std::sync::Arc;

use rand::{Rng, RngCore};

use super::{coarse, segment_min_distance, EditHints, EnvState, Environment, EpisodeResult};
use crate::scenario::ScenarioSpace;

const AGENTS: usize = 3;
const LANDMARKS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct CoopNavParams {
    pub max_frames: u32,
    pub max_speed: f64,
    pub agent_radius: f64,
    pub repulsion_radius: f64,
    pub repulsion_gain: f64,
    pub cover_radius: f64,
}

impl Default for CoopNavParams {
    fn default() -> Self {
        Self {
            max_frames: 25,
            max_speed: 0.2,
            agent_radius: 0.1,
            repulsion_radius: 0.25,
            repulsion_gain: 0.05,
            cover_radius: 0.1,
        }
    }
}

pub struct CoopNav {
    params: CoopNavParams,
    space: ScenarioSpace,
}

type P2 = [f64; 2];

fn dist(a: P2, b: P2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn split(params: &[f64]) -> ([P2; AGENTS], [P2; LANDMARKS]) {
    let pt = |i: usize| [params[2 * i], params[2 * i + 1]];
    ([pt(0), pt(1), pt(2)], [pt(3), pt(4), pt(5)])
}

fn flatten(agents: &[P2; AGENTS], landmarks: &[P2; LANDMARKS]) -> Vec<f64> {
    agents.iter().chain(landmarks.iter()).flat_map(|p| [p[0], p[1]]).collect()
}

/// Global greedy assignment: repeatedly claim the closest free
/// (agent, landmark) pair. Ties go to the lowest agent index, then the lowest
/// landmark index.
pub(crate) fn greedy_assignment(agents: &[P2; AGENTS], landmarks: &[P2; LANDMARKS]) -> [usize; AGENTS] {
    let mut assigned = [usize::MAX; AGENTS];
    let mut taken = [false; LANDMARKS];
    for _ in 0..AGENTS {
        let mut best: Option<(f64, usize, usize)> = None;
        for (a, pa) in agents.iter().enumerate() {
            if assigned[a] != usize::MAX {
                continue;
            }
            for (l, pl) in landmarks.iter().enumerate() {
                if taken[l] {
                    continue;
                }
                let d = dist(*pa, *pl);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, l));
                }
            }
        }
        let (_, a, l) = best.expect("equal agent and landmark counts");
        assigned[a] = l;
        taken[l] = true;
    }
    assigned
}

impl CoopNav {
    pub fn new(params: CoopNavParams) -> Self {
        let names = ["agent0_x", "agent0_y", "agent1_x", "agent1_y", "agent2_x", "agent2_y", "landmark0_x",
            "landmark0_y", "landmark1_x", "landmark1_y", "landmark2_x", "landmark2_y"];
        let min_gap = 2.0 * params.agent_radius;
        let space = ScenarioSpace::new(vec![-1.0; 12], vec![1.0; 12], names.to_vec())
            .expect("static bounds are valid")
            .with_constraint(Arc::new(move |p: &[f64]| {
                let (agents, _) = split(p);
                for i in 0..AGENTS {
                    for j in i + 1..AGENTS {
                        if dist(agents[i], agents[j]) < min_gap {
                            return Err(format!("agents {i} and {j} overlap at spawn"));
                        }
                    }
                }
                Ok(())
            }));
        Self { params, space }
    }

    pub fn params(&self) -> &CoopNavParams {
        &self.params
    }

    fn covered(&self, agents: &[P2; AGENTS], landmarks: &[P2; LANDMARKS]) -> bool {
        landmarks
            .iter()
            .all(|l| agents.iter().any(|a| dist(*a, *l) <= self.params.cover_radius))
    }

    fn frame_reward(agents: &[P2; AGENTS], landmarks: &[P2; LANDMARKS]) -> f64 {
        -agents
            .iter()
            .map(|a| landmarks.iter().map(|l| dist(*a, *l)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
    }
}

impl Environment for CoopNav {
    fn name(&self) -> &str {
        super::COOP_NAV
    }

    fn space(&self) -> &ScenarioSpace {
        &self.space
    }

    fn default_max_frames(&self) -> u32 {
        self.params.max_frames
    }

    fn observation_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-1.0; 12], vec![1.0; 12])
    }

    fn simulate(&self, params: &[f64], max_frames: u32) -> EpisodeResult {
        let p = &self.params;
        let (mut agents, landmarks) = split(params);
        let mut trajectory = vec![EnvState { observation: flatten(&agents, &landmarks), frame: 0 }];
        let mut reward = 0.0;

        if self.covered(&agents, &landmarks) {
            return EpisodeResult { cumulative_reward: 0.0, frames: 0, failed: false, failure_kind: None, trajectory };
        }

        for frame in 1..=max_frames {
            let target = greedy_assignment(&agents, &landmarks);
            let mut velocity = [[0.0f64; 2]; AGENTS];
            for (i, a) in agents.iter().enumerate() {
                let l = landmarks[target[i]];
                let d = dist(*a, l);
                if d > 0.0 {
                    let step = d.min(p.max_speed);
                    velocity[i] = [(l[0] - a[0]) / d * step, (l[1] - a[1]) / d * step];
                }
            }
            for i in 0..AGENTS {
                for j in 0..AGENTS {
                    if i == j {
                        continue;
                    }
                    let d = dist(agents[i], agents[j]);
                    if d < p.repulsion_radius && d > 0.0 {
                        velocity[i][0] += p.repulsion_gain * (agents[i][0] - agents[j][0]) / d;
                        velocity[i][1] += p.repulsion_gain * (agents[i][1] - agents[j][1]) / d;
                    }
                }
            }
            let before = agents;
            for (a, v) in agents.iter_mut().zip(velocity.iter()) {
                let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
                let scale = if speed > p.max_speed { p.max_speed / speed } else { 1.0 };
                a[0] += v[0] * scale;
                a[1] += v[1] * scale;
            }

            reward += Self::frame_reward(&agents, &landmarks);
            trajectory.push(EnvState { observation: flatten(&agents, &landmarks), frame });

            let mut collided = false;
            for i in 0..AGENTS {
                for j in i + 1..AGENTS {
                    let r0 = [before[j][0] - before[i][0], before[j][1] - before[i][1]];
                    let r1 = [agents[j][0] - agents[i][0], agents[j][1] - agents[i][1]];
                    if segment_min_distance(r0, r1) < 2.0 * p.agent_radius {
                        collided = true;
                    }
                }
            }
            if collided {
                return EpisodeResult {
                    cumulative_reward: reward,
                    frames: frame,
                    failed: true,
                    failure_kind: Some("collision".to_string()),
                    trajectory,
                };
            }
            if self.covered(&agents, &landmarks) {
                return EpisodeResult { cumulative_reward: reward, frames: frame, failed: false, failure_kind: None, trajectory };
            }
        }
        EpisodeResult {
            cumulative_reward: reward,
            frames: max_frames,
            failed: true,
            failure_kind: Some("landmarks_uncovered".to_string()),
            trajectory,
        }
    }

    /// Plans the way a tester reasoning about the task (not the policy's
    /// exact assignment rule) would: pair agent k with landmark k and make
    /// paths cross, crowd two landmarks together, or park an agent in
    /// another agent's way. Coordinates come back rounded to 0.1.
    fn adversarial_edit(
        &self,
        seed: &[f64],
        hints: &EditHints,
        rng: &mut dyn RngCore,
    ) -> Option<(String, Vec<f64>)> {
        let (mut agents, mut landmarks) = split(seed);
        let i = rng.gen_range(0..AGENTS);
        let j = (i + rng.gen_range(1..AGENTS)) % AGENTS;
        let keep_agents = hints.excessive_modification >= 2;
        let plan = if keep_agents { rng.gen_range(0..2) } else { rng.gen_range(0..3) };
        let desc = match plan {
            0 => {
                // Swap sides: agent i's landmark goes beyond agent j and vice versa.
                let (ai, aj) = (agents[i], agents[j]);
                let over = rng.gen_range(0.2..0.6);
                landmarks[i] = [aj[0] + (aj[0] - ai[0]) * over, aj[1] + (aj[1] - ai[1]) * over];
                landmarks[j] = [ai[0] + (ai[0] - aj[0]) * over, ai[1] + (ai[1] - aj[1]) * over];
                format!("make agent {i} and agent {j} cross paths to reach their landmarks")
            }
            1 => {
                // Two landmarks close enough that agents parked on them touch.
                let gap = rng.gen_range(0.15..0.3);
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let c = landmarks[i];
                landmarks[j] = [c[0] + gap * angle.cos(), c[1] + gap * angle.sin()];
                format!("crowd landmark {i} and landmark {j} together")
            }
            _ => {
                // Park agent j on landmark j and put agent i behind it, aiming
                // at a landmark on the far side.
                let dir = rng.gen_range(0.0..std::f64::consts::TAU);
                let u = [dir.cos(), dir.sin()];
                let back = rng.gen_range(0.25..0.6);
                let ahead = rng.gen_range(0.25..0.6);
                let l = landmarks[j];
                agents[j] = l;
                agents[i] = [l[0] - u[0] * back, l[1] - u[1] * back];
                landmarks[i] = [l[0] + u[0] * ahead, l[1] + u[1] * ahead];
                format!("park agent {j} on its landmark in the path of agent {i}")
            }
        };
        let mut out = flatten(&agents, &landmarks);
        for v in out.iter_mut() {
            *v = coarse(*v, 0.1, -1.0, 1.0);
        }
        Some((desc, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env() -> CoopNav {
        CoopNav::new(CoopNavParams::default())
    }

    #[test]
    fn presolved_layout_completes_immediately() {
        let params = [-0.5, -0.5, 0.0, 0.5, 0.5, -0.5, -0.5, -0.5, 0.0, 0.5, 0.5, -0.5];
        let r = env().simulate(&params, 25);
        assert!(!r.failed);
        assert!(r.frames <= 1);
        assert!(r.cumulative_reward.abs() < 1e-12);
    }

    #[test]
    fn straight_run_completes_without_failure() {
        // Agents each one step from their own landmark, well separated.
        let params = [-0.8, 0.0, 0.0, 0.0, 0.8, 0.0, -0.8, 0.15, 0.0, 0.15, 0.8, 0.15];
        let r = env().simulate(&params, 25);
        assert!(!r.failed);
        assert_eq!(r.frames, 1);
        assert!(r.cumulative_reward.abs() < 1e-12);
    }

    #[test]
    fn agent_through_parked_agent_collides() {
        // agent1 sits on landmark1; agent0 heads for landmark0 straight through it.
        let params = [-0.6, 0.0, 0.0, 0.0, 0.0, 0.9, 0.6, 0.0, 0.0, 0.0, 0.0, 0.9];
        let r = env().simulate(&params, 25);
        assert!(r.failed);
        assert_eq!(r.failure_kind.as_deref(), Some("collision"));
        assert_eq!(r.frames as usize + 1, r.trajectory.len());
    }

    #[test]
    fn spawn_overlap_is_invalid() {
        let params = [0.0, 0.0, 0.1, 0.0, 0.8, 0.8, -0.5, -0.5, 0.0, 0.5, 0.5, -0.5];
        assert!(!crate::scenario::validate(env().space(), &params).is_valid());
    }

    #[test]
    fn greedy_assignment_prefers_closest_pairs() {
        let agents = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.5]];
        let landmarks = [[0.9, 0.0], [0.1, 0.0], [0.5, 0.6]];
        assert_eq!(greedy_assignment(&agents, &landmarks), [1, 0, 2]);
        // tie: both agents equidistant to landmark 0, lowest agent wins
        let agents = [[-1.0, 0.0], [1.0, 0.0], [0.0, 5.0]];
        let landmarks = [[0.0, 0.0], [3.0, 0.0], [0.0, 6.0]];
        assert_eq!(greedy_assignment(&agents, &landmarks), [0, 1, 2]);
    }

    fn layout() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.0f64..1.0, 12)
    }

    proptest! {
        #[test]
        fn rewards_are_non_positive_and_accumulate(params in layout()) {
            let e = env();
            let r = e.simulate(&params, 25);
            prop_assert!(r.cumulative_reward <= 0.0);
            let mut prev = 0.0;
            for frames in 1..=r.frames {
                let prefix = e.simulate(&params, frames);
                prop_assert!(prefix.cumulative_reward <= prev + 1e-12);
                prev = prefix.cumulative_reward;
            }
            prop_assert_eq!(r.failed, r.failure_kind.is_some());
            prop_assert_eq!(r.trajectory.len(), r.frames as usize + 1);
        }

        #[test]
        fn rollouts_are_deterministic(params in layout()) {
            let e = env();
            prop_assert_eq!(e.simulate(&params, 25), e.simulate(&params, 25));
        }

        #[test]
        fn heuristic_edits_stay_in_bounds(params in layout(), seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (_, out) = env().adversarial_edit(&params, &EditHints::default(), &mut rng).unwrap();
            prop_assert_eq!(out.len(), 12);
            prop_assert!(out.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
