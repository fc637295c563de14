//! Stateless staged stacking demonstrator.

use super::{step, success_predicates, Action, Physics, SimState, TaskSpec, DT, EPISODE_LEN};

/// Cruise speed in workspace units per second.
pub const SCRIPT_SPEED: f64 = 0.3;
/// Gripper height while carrying the top object.
pub const CARRY_HEIGHT: f64 = 0.45;
/// Clearance above an object while moving over it.
pub const HOVER_CLEARANCE: f64 = 0.12;
/// Extra gap left when releasing above the bottom object.
pub const RELEASE_GAP: f64 = 0.005;
const RETREAT_HEIGHT: f64 = 0.8;
const TOL: f64 = 1e-6;

fn toward(from: [f64; 2], to: [f64; 2]) -> [f64; 2] {
    let v = |d: f64| (d / DT).clamp(-SCRIPT_SPEED, SCRIPT_SPEED);
    [v(to[0] - from[0]), v(to[1] - from[1])]
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

/// Next action of the demonstrator. The stage is read off the state:
/// reach above the top object, descend, close, lift, carry above the bottom
/// object, descend, release, retreat.
pub fn scripted_policy(state: &SimState, task: &TaskSpec) -> Action {
    let g = state.gripper_pos;
    let top = &state.objects[task.top];
    let bottom = &state.objects[task.bottom];
    let act = |v: [f64; 2], grip: f64| Action::new(v[0], v[1], grip);

    match state.held_object {
        Some(k) if k == task.top => {
            let stack_y = bottom.top() + top.half_size + RELEASE_GAP;
            if !near(g[0], bottom.pos[0]) {
                let y = if g[1] < CARRY_HEIGHT - TOL { CARRY_HEIGHT } else { g[1] };
                act(toward(g, [bottom.pos[0], y]), 1.0)
            } else if !near(g[1], stack_y) {
                act(toward(g, [bottom.pos[0], stack_y]), 1.0)
            } else {
                act([0.0, 0.0], -1.0)
            }
        }
        Some(_) => act(toward(g, [g[0], RETREAT_HEIGHT]), -1.0),
        None => {
            let done = success_predicates(state, task).stacked;
            if done || top.fall_speed != 0.0 {
                return act(toward(g, [g[0], RETREAT_HEIGHT]), -1.0);
            }
            let grip = if state.grip_closed { -1.0 } else { 0.0 };
            if !near(g[0], top.pos[0]) {
                let y = g[1].max(top.top() + HOVER_CLEARANCE);
                act(toward(g, [top.pos[0], y]), grip)
            } else if !near(g[1], top.pos[1]) {
                act(toward(g, [top.pos[0], top.pos[1]]), grip)
            } else if state.grip_closed {
                act([0.0, 0.0], -1.0)
            } else {
                act([0.0, 0.0], 1.0)
            }
        }
    }
}

/// Frames `s_0..s_{T−1}` and actions `a_0..a_{T−1}` with `s_{t+1} = step(s_t, a_t)`.
pub struct Rollout {
    pub states: Vec<SimState>,
    pub actions: Vec<Action>,
}

impl Rollout {
    pub fn final_state(&self) -> &SimState {
        self.states.last().expect("non-empty rollout")
    }

    /// Stacked at the last frame with the top object lifted at some frame.
    pub fn solved(&self, task: &TaskSpec) -> bool {
        let lifted = self.states.iter().any(|s| success_predicates(s, task).lifted);
        lifted && success_predicates(self.final_state(), task).stacked
    }
}

pub fn scripted_rollout(start: SimState, task: &TaskSpec, physics: &Physics, len: usize) -> Rollout {
    let mut states = Vec::with_capacity(len);
    let mut actions = Vec::with_capacity(len);
    let mut s = start;
    for _ in 0..len {
        let a = scripted_policy(&s, task);
        let next = step(&s, &a, physics);
        states.push(s);
        actions.push(a);
        s = next;
    }
    Rollout { states, actions }
}

/// Default episode length rollout.
pub fn scripted_episode(start: SimState, task: &TaskSpec, physics: &Physics) -> Rollout {
    scripted_rollout(start, task, physics, EPISODE_LEN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::reset;

    #[test]
    fn held_above_target_descends_then_releases() {
        let t = TaskSpec::new(0, 1).unwrap();
        let mut s = SimState::from_layout(&[0.2, 0.5, 0.8], [0.5, CARRY_HEIGHT]);
        s.held_object = Some(0);
        s.grip_closed = true;
        s.objects[0].pos = s.gripper_pos;
        let a = scripted_policy(&s, &t);
        assert!(a.velocity[1] < 0.0 && a.grip > 0.0);
        let ph = Physics::default();
        let mut released = false;
        for _ in 0..30 {
            let a = scripted_policy(&s, &t);
            if a.grip < 0.0 {
                released = true;
                assert!((s.objects[0].bottom() - s.objects[1].top() - RELEASE_GAP).abs() < 1e-9);
                break;
            }
            s = step(&s, &a, &ph);
        }
        assert!(released);
    }

    #[test]
    fn sweep_solves_nearly_every_seed() {
        let ph = Physics::default();
        let mut solved = 0;
        for seed in 0..100u64 {
            let task = TaskSpec::all()[seed as usize % 6];
            let r = scripted_episode(reset(&task, seed).unwrap(), &task, &ph);
            for a in &r.actions {
                assert!(a.to_array().iter().all(|v| (-1.0..=1.0).contains(v)));
            }
            solved += r.solved(&task) as usize;
        }
        assert!(solved >= 95, "{solved}/100");
    }
}
