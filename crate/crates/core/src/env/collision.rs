//! Two-aircraft collision avoidance in the plane.
//!
//! The ownship starts at the origin heading +x. The intruder flies a straight
//! line. The scripted avoidance policy turns away from the intruder once it is
//! inside the alert range, except when the intruder's nose points at the
//! ownship within the blind-spot half-angle: head-on approaches are never
//! evaded.
//!
//! Scenario layout: `[intruder_x, intruder_y, intruder_heading, ownship_speed,
//! intruder_speed]`. Observation layout: `[range, bearing, relative_heading,
//! ownship_speed, intruder_speed]` with angles relative to the ownship heading.

use std::f64::consts::PI;

use rand::{Rng, RngCore};

use super::{coarse, segment_min_distance, wrap_angle, EditHints, EnvState, Environment, EpisodeResult};
use crate::scenario::ScenarioSpace;

#[derive(Clone, Debug, PartialEq)]
pub struct CollisionParams {
    pub max_frames: u32,
    pub collision_radius: f64,
    pub alert_range: f64,
    pub turn_rate_deg: f64,
    pub blind_spot_deg: f64,
    pub reward_cap: f64,
}

impl Default for CollisionParams {
    fn default() -> Self {
        Self {
            max_frames: 100,
            collision_radius: 150.0,
            alert_range: 1500.0,
            turn_rate_deg: 3.0,
            blind_spot_deg: 10.0,
            reward_cap: 2000.0,
        }
    }
}

pub struct CollisionAvoidance {
    params: CollisionParams,
    space: ScenarioSpace,
}

impl CollisionAvoidance {
    pub fn new(params: CollisionParams) -> Self {
        let space = ScenarioSpace::new(
            vec![500.0, -3000.0, -PI, 50.0, 50.0],
            vec![5000.0, 3000.0, PI, 200.0, 200.0],
            vec!["intruder_x", "intruder_y", "intruder_heading", "ownship_speed", "intruder_speed"],
        )
        .expect("static bounds are valid");
        Self { params, space }
    }

    pub fn params(&self) -> &CollisionParams {
        &self.params
    }

    /// True when the intruder heading points at the ownship within the
    /// blind-spot half-angle.
    fn in_blind_spot(&self, own: [f64; 2], intr: [f64; 2], intr_heading: f64) -> bool {
        let los = (own[1] - intr[1]).atan2(own[0] - intr[0]);
        wrap_angle(intr_heading - los).abs() <= self.params.blind_spot_deg.to_radians()
    }

    fn observe(own: [f64; 2], own_heading: f64, intr: [f64; 2], intr_heading: f64, vo: f64, vi: f64) -> Vec<f64> {
        let dx = intr[0] - own[0];
        let dy = intr[1] - own[1];
        let range = (dx * dx + dy * dy).sqrt();
        let bearing = wrap_angle(dy.atan2(dx) - own_heading);
        let rel_heading = wrap_angle(intr_heading - own_heading);
        vec![range, bearing, rel_heading, vo, vi]
    }

    /// Places the intruder so that it reaches the ownship's unturned path at
    /// the same time as the ownship: approach direction `approach` measured
    /// from the meeting point, meeting time `t`.
    fn collision_course(vo: f64, vi: f64, t: f64, approach: f64) -> (f64, f64, f64) {
        let meet = vo * t;
        let x = meet + vi * t * approach.cos();
        let y = vi * t * approach.sin();
        (x, y, wrap_angle(approach + PI))
    }
}

impl Environment for CollisionAvoidance {
    fn name(&self) -> &str {
        super::COLLISION_AVOIDANCE
    }

    fn space(&self) -> &ScenarioSpace {
        &self.space
    }

    fn default_max_frames(&self) -> u32 {
        self.params.max_frames
    }

    fn observation_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0, -PI, -PI, 50.0, 50.0], vec![6000.0, PI, PI, 200.0, 200.0])
    }

    fn simulate(&self, params: &[f64], max_frames: u32) -> EpisodeResult {
        let p = &self.params;
        let (vo, vi, intr_heading) = (params[3], params[4], params[2]);
        let mut own = [0.0f64, 0.0];
        let mut own_heading = 0.0f64;
        let mut intr = [params[0], params[1]];
        let turn = p.turn_rate_deg.to_radians();

        let mut trajectory = vec![EnvState {
            observation: Self::observe(own, own_heading, intr, intr_heading, vo, vi),
            frame: 0,
        }];
        let mut reward = 0.0;
        for frame in 1..=max_frames {
            let rel0 = [intr[0] - own[0], intr[1] - own[1]];
            let range = (rel0[0] * rel0[0] + rel0[1] * rel0[1]).sqrt();
            if range < p.alert_range && !self.in_blind_spot(own, intr, intr_heading) {
                let bearing = wrap_angle(rel0[1].atan2(rel0[0]) - own_heading);
                own_heading += if bearing >= 0.0 { -turn } else { turn };
                own_heading = wrap_angle(own_heading);
            }
            own[0] += vo * own_heading.cos();
            own[1] += vo * own_heading.sin();
            intr[0] += vi * intr_heading.cos();
            intr[1] += vi * intr_heading.sin();

            let rel1 = [intr[0] - own[0], intr[1] - own[1]];
            let range = (rel1[0] * rel1[0] + rel1[1] * rel1[1]).sqrt();
            reward += range.min(p.reward_cap) / p.reward_cap;
            trajectory.push(EnvState {
                observation: Self::observe(own, own_heading, intr, intr_heading, vo, vi),
                frame,
            });
            if segment_min_distance(rel0, rel1) < p.collision_radius {
                return EpisodeResult {
                    cumulative_reward: reward,
                    frames: frame,
                    failed: true,
                    failure_kind: Some("collision".to_string()),
                    trajectory,
                };
            }
        }
        EpisodeResult {
            cumulative_reward: reward,
            frames: max_frames,
            failed: false,
            failure_kind: None,
            trajectory,
        }
    }

    fn adversarial_edit(
        &self,
        seed: &[f64],
        hints: &EditHints,
        rng: &mut dyn RngCore,
    ) -> Option<(String, Vec<f64>)> {
        let lo = self.space.lower();
        let hi = self.space.upper();
        let (vo, vi) = (seed[3], seed[4]);
        let in_box = |x: f64, y: f64| x >= lo[0] && x <= hi[0] && y >= lo[1] && y <= hi[1];

        let head_on = rng.gen_bool(0.5);
        let mut target = None;
        for _ in 0..16 {
            let t = rng.gen_range(8.0..40.0);
            let approach = if head_on {
                rng.gen_range(-12.0f64..12.0).to_radians()
            } else {
                let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                side * rng.gen_range(35.0f64..110.0).to_radians()
            };
            let (x, y, heading) = Self::collision_course(vo, vi, t, approach);
            if in_box(x, y) {
                target = Some(vec![x, y, heading, vo, vi]);
                break;
            }
        }
        let mut target = target?;

        // After repeated excessive-modification feedback, only move part of
        // the way towards the collision course.
        let conservative = hints.excessive_modification >= 2;
        if conservative {
            let diff: Vec<f64> = (0..5)
                .map(|i| if i == 2 { wrap_angle(target[2] - seed[2]) } else { target[i] - seed[i] })
                .collect();
            let dist = diff.iter().enumerate().map(|(i, d)| (d / self.space.range(i)).powi(2)).sum::<f64>().sqrt();
            let step = if dist > 0.0 { (rng.gen_range(0.12..0.22) / dist).min(1.0) } else { 1.0 };
            target = (0..5)
                .map(|i| if i == 2 { wrap_angle(seed[2] + step * diff[2]) } else { seed[i] + step * diff[i] })
                .collect();
        }
        let out = vec![
            coarse(target[0], 100.0, lo[0], hi[0]),
            coarse(target[1], 100.0, lo[1], hi[1]),
            coarse(target[2], 0.1, lo[2], hi[2]),
            coarse(target[3], 10.0, lo[3], hi[3]),
            coarse(target[4], 10.0, lo[4], hi[4]),
        ];
        let plan = match (conservative, head_on) {
            (true, _) => "shift the intruder a little towards a collision course",
            (false, true) => "put the intruder on a head-on collision course",
            (false, false) => "bring the intruder in on a crossing collision course",
        };
        Some((plan.to_string(), out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env() -> CollisionAvoidance {
        CollisionAvoidance::new(CollisionParams::default())
    }

    #[test]
    fn head_on_blind_spot_collides() {
        let r = env().simulate(&[500.0, 0.0, PI, 100.0, 100.0], 100);
        assert!(r.failed);
        assert_eq!(r.failure_kind.as_deref(), Some("collision"));
        // closing at 200 m/s from 500 m: inside 150 m during frame 2
        assert_eq!(r.frames, 2);
        assert_eq!(r.trajectory.len(), 3);
    }

    #[test]
    fn diverging_intruder_survives() {
        let r = env().simulate(&[2000.0, 0.0, 0.0, 100.0, 150.0], 100);
        assert!(!r.failed);
        assert_eq!(r.frames, 100);
        assert_eq!(r.trajectory.len(), 101);
        assert_eq!(r.trajectory[0].frame, 0);
    }

    #[test]
    fn policy_evades_non_blind_crossing() {
        // Intruder crossing from the left at right angles, well outside the blind spot.
        let e = env();
        let r = e.simulate(&[1500.0, 1500.0, -PI / 2.0, 100.0, 100.0], 100);
        let passive = CollisionAvoidance::new(CollisionParams { alert_range: 0.0, ..Default::default() })
            .simulate(&[1500.0, 1500.0, -PI / 2.0, 100.0, 100.0], 100);
        assert!(passive.failed, "without avoidance the crossing is a collision");
        assert!(!r.failed, "alerted policy turns away from the crossing");
    }

    #[test]
    fn observation_starts_with_initial_geometry() {
        let r = env().simulate(&[3000.0, 4000.0_f64.min(3000.0), 0.5, 60.0, 70.0], 5);
        let obs = &r.trajectory[0].observation;
        assert!((obs[0] - (3000.0f64.powi(2) + 3000.0f64.powi(2)).sqrt()).abs() < 1e-9);
        assert!((obs[1] - PI / 4.0).abs() < 1e-12);
        assert_eq!(obs[3], 60.0);
    }

    #[test]
    fn heuristic_edit_is_on_collision_course() {
        let e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let seed = [2500.0, 1000.0, 0.3, 120.0, 90.0];
            let (_, out) = e.adversarial_edit(&seed, &EditHints::default(), &mut rng).unwrap();
            assert!(crate::scenario::validate(e.space(), &out).is_valid());
            // Straight-line closest approach along the ownship's unturned path.
            let (vo, vi) = (out[3], out[4]);
            let rel_v = [vi * out[2].cos() - vo, vi * out[2].sin()];
            let p = [out[0], out[1]];
            let vv = rel_v[0] * rel_v[0] + rel_v[1] * rel_v[1];
            let t = (-(p[0] * rel_v[0] + p[1] * rel_v[1]) / vv).max(0.0);
            let miss = ((p[0] + t * rel_v[0]).powi(2) + (p[1] + t * rel_v[1]).powi(2)).sqrt();
            let range0 = (p[0] * p[0] + p[1] * p[1]).sqrt();
            // heading is rounded to 0.1 rad and positions to 100 m
            assert!(miss < 0.06 * range0 + 150.0, "miss {miss} at range {range0}");
            assert!(t > 0.0 && t < 60.0);
        }
    }

    proptest! {
        #[test]
        fn separating_intruder_never_collides(
            x in 500.0f64..5000.0,
            y in -3000.0f64..3000.0,
            vo in 50.0f64..200.0,
            vi in 50.0f64..200.0,
        ) {
            // Intruder flies radially away, faster than the ownship can follow.
            let heading = y.atan2(x);
            let vi = vi.max(vo * 1.01);
            let r = env().simulate(&[x, y, heading, vo, vi], 100);
            prop_assert!(!r.failed);
        }

        #[test]
        fn rollouts_are_deterministic(
            x in 500.0f64..5000.0,
            y in -3000.0f64..3000.0,
            h in -PI..PI,
            vo in 50.0f64..200.0,
            vi in 50.0f64..200.0,
        ) {
            let e = env();
            let a = e.simulate(&[x, y, h, vo, vi], 100);
            let b = e.simulate(&[x, y, h, vo, vi], 100);
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.frames as usize + 1, a.trajectory.len());
            prop_assert_eq!(a.failed, a.failure_kind.is_some());
        }
    }
}
