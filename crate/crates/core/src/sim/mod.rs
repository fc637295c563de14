//! Deterministic planar pick-and-stack world.
//!
//! The world is the unit square with the floor at `y = 0` and gravity along
//! `−y`. A point gripper moves with commanded velocities and can hold one
//! object at a time. Three colored props rest on the floor or on each other.
//! Rendering lives in [`render`]; visual domains in [`domain`]; the scripted
//! stacking demonstrator in [`scripted`].

pub mod domain;
pub mod render;
pub mod scripted;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use domain::{sample_domain_spec, ArmStyle, DomainKind, DomainSpec};
pub use render::{render, render_key, Image, RenderKey};
pub use scripted::scripted_policy;

pub const NUM_OBJECTS: usize = 3;
pub const HALF_SIZE: f64 = 0.08;
pub const LIFT_THRESHOLD: f64 = 0.15;
pub const STACK_TOL_FACTOR: f64 = 0.6;
pub const GRASP_RADIUS_FACTOR: f64 = 1.2;
pub const GRAVITY: f64 = 2.0;
pub const DT: f64 = 0.1;
pub const EPISODE_LEN: usize = 100;
pub const CONTACT_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("could not place objects without overlap after {0} samples")]
    Placement(usize),
    #[error("invalid task: {0}")]
    Task(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShapeTag {
    Square,
    Disc,
    Diamond,
}

impl ShapeTag {
    pub fn for_color(color_id: usize) -> Self {
        match color_id % 3 {
            0 => ShapeTag::Square,
            1 => ShapeTag::Disc,
            _ => ShapeTag::Diamond,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub pos: [f64; 2],
    pub half_size: f64,
    pub shape: ShapeTag,
    pub color_id: usize,
    /// Vertical speed while falling (≤ 0); zero at rest or when held.
    pub fall_speed: f64,
}

impl ObjectState {
    pub fn bottom(&self) -> f64 {
        self.pos[1] - self.half_size
    }

    pub fn top(&self) -> f64 {
        self.pos[1] + self.half_size
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub gripper_pos: [f64; 2],
    pub grip_closed: bool,
    pub held_object: Option<usize>,
    pub objects: Vec<ObjectState>,
    pub time_step: u32,
}

/// Which props to stack. Values are object indices (equal to color ids).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub top: usize,
    pub bottom: usize,
    pub distractor: usize,
}

impl TaskSpec {
    pub fn new(top: usize, bottom: usize) -> Result<Self, SimError> {
        if top >= NUM_OBJECTS || bottom >= NUM_OBJECTS || top == bottom {
            return Err(SimError::Task(format!("top {top}, bottom {bottom}")));
        }
        let distractor = (0..NUM_OBJECTS).find(|&c| c != top && c != bottom).unwrap_or(0);
        Ok(TaskSpec {
            top,
            bottom,
            distractor,
        })
    }

    /// All ordered (top, bottom) color pairs.
    pub fn all() -> Vec<TaskSpec> {
        let mut v = Vec::new();
        for top in 0..NUM_OBJECTS {
            for bottom in 0..NUM_OBJECTS {
                if top != bottom {
                    v.push(TaskSpec::new(top, bottom).expect("distinct"));
                }
            }
        }
        v
    }
}

/// Velocity command plus gripper command. `grip > 0` closes, `grip < 0`
/// opens, exactly zero keeps the current gripper state.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub velocity: [f64; 2],
    pub grip: f64,
}

impl Action {
    pub fn new(vx: f64, vy: f64, grip: f64) -> Self {
        Action {
            velocity: [vx, vy],
            grip,
        }
        .clamped()
    }

    pub fn clamped(self) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        Action {
            velocity: [c(self.velocity[0]), c(self.velocity[1])],
            grip: c(self.grip),
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.velocity[0], self.velocity[1], self.grip]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Action::new(v[0], v[1], v[2])
    }
}

/// Dynamics parameters; randomized domains perturb them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Physics {
    pub dt: f64,
    pub gravity: f64,
    pub grasp_radius_factor: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Physics {
            dt: DT,
            gravity: GRAVITY,
            grasp_radius_factor: GRASP_RADIUS_FACTOR,
        }
    }
}

fn new_object(color_id: usize, x: f64) -> ObjectState {
    ObjectState {
        pos: [x, HALF_SIZE],
        half_size: HALF_SIZE,
        shape: ShapeTag::for_color(color_id),
        color_id,
        fall_speed: 0.0,
    }
}

const PLACEMENT_GAP: f64 = 0.04;
const PLACEMENT_TRIES: usize = 100;

/// Seeded initial layout: props resting on the floor without overlap and the
/// gripper open above them.
pub fn reset(task: &TaskSpec, seed: u64) -> Result<SimState, SimError> {
    if task.top == task.bottom || task.top >= NUM_OBJECTS || task.bottom >= NUM_OBJECTS {
        return Err(SimError::Task(format!("{task:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..PLACEMENT_TRIES {
        let xs: Vec<f64> = (0..NUM_OBJECTS).map(|_| rng.gen_range(0.1..0.9)).collect();
        let ok = (0..NUM_OBJECTS).all(|i| {
            (i + 1..NUM_OBJECTS).all(|j| (xs[i] - xs[j]).abs() >= 2.0 * HALF_SIZE + PLACEMENT_GAP)
        });
        if ok {
            let gripper = [rng.gen_range(0.1..0.9), rng.gen_range(0.55..0.9)];
            return Ok(SimState::from_layout(&xs, gripper));
        }
    }
    Err(SimError::Placement(PLACEMENT_TRIES))
}

impl SimState {
    /// Props at the given floor x positions (index = color id), gripper open.
    pub fn from_layout(object_xs: &[f64], gripper: [f64; 2]) -> Self {
        SimState {
            gripper_pos: [gripper[0].clamp(0.0, 1.0), gripper[1].clamp(0.0, 1.0)],
            grip_closed: false,
            held_object: None,
            objects: object_xs
                .iter()
                .enumerate()
                .map(|(c, &x)| new_object(c, x.clamp(0.0, 1.0)))
                .collect(),
            time_step: 0,
        }
    }

    pub fn is_resting(&self, k: usize) -> bool {
        self.held_object != Some(k)
            && self.objects[k].fall_speed == 0.0
            && (self.support_height(k) - self.objects[k].pos[1]).abs() <= CONTACT_TOL
    }

    /// Height the centre of object `k` would rest at, given everything below it.
    fn support_height(&self, k: usize) -> f64 {
        let o = &self.objects[k];
        let mut h = o.half_size;
        for (j, other) in self.objects.iter().enumerate() {
            if j == k || self.held_object == Some(j) || !below(other, j, o, k) {
                continue;
            }
            if (other.pos[0] - o.pos[0]).abs() < other.half_size + o.half_size - 1e-9 {
                h = h.max(other.top() + o.half_size);
            }
        }
        h
    }
}

fn below(a: &ObjectState, ia: usize, b: &ObjectState, ib: usize) -> bool {
    (a.pos[1], ia) < (b.pos[1], ib)
}

/// Advance the world by one control step.
pub fn step(state: &SimState, action: &Action, physics: &Physics) -> SimState {
    let a = action.clamped();
    let mut s = state.clone();
    s.time_step += 1;
    for d in 0..2 {
        s.gripper_pos[d] = (s.gripper_pos[d] + a.velocity[d] * physics.dt).clamp(0.0, 1.0);
    }
    if let Some(k) = s.held_object {
        let h = s.objects[k].half_size;
        s.gripper_pos[1] = s.gripper_pos[1].max(h);
    }

    if a.grip > 0.0 {
        s.grip_closed = true;
        if s.held_object.is_none() {
            let g = s.gripper_pos;
            let mut best: Option<(f64, usize)> = None;
            for (k, o) in s.objects.iter().enumerate() {
                let d = ((o.pos[0] - g[0]).powi(2) + (o.pos[1] - g[1]).powi(2)).sqrt();
                if d <= physics.grasp_radius_factor * o.half_size && best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, k));
                }
            }
            if let Some((_, k)) = best {
                s.held_object = Some(k);
                let h = s.objects[k].half_size;
                s.gripper_pos[1] = s.gripper_pos[1].max(h);
            }
        }
    } else if a.grip < 0.0 {
        s.grip_closed = false;
        s.held_object = None;
    }

    if let Some(k) = s.held_object {
        s.objects[k].pos = s.gripper_pos;
        s.objects[k].fall_speed = 0.0;
    }
    settle(&mut s, physics);
    s
}

/// One gravity step for every unheld object, lowest first.
fn settle(s: &mut SimState, physics: &Physics) {
    let mut order: Vec<usize> = (0..s.objects.len())
        .filter(|&k| s.held_object != Some(k))
        .collect();
    order.sort_by(|&a, &b| {
        (s.objects[a].pos[1], a)
            .partial_cmp(&(s.objects[b].pos[1], b))
            .expect("finite positions")
    });
    for k in order {
        let support = s.support_height(k);
        let o = &mut s.objects[k];
        if o.pos[1] > support + CONTACT_TOL {
            o.fall_speed -= physics.gravity * physics.dt;
            o.pos[1] += o.fall_speed * physics.dt;
            if o.pos[1] <= support {
                o.pos[1] = support;
                o.fall_speed = 0.0;
            }
        } else {
            o.pos[1] = support;
            o.fall_speed = 0.0;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Success {
    pub lifted: bool,
    pub stacked: bool,
}

/// Staged success of the stacking task in the current state.
pub fn success_predicates(state: &SimState, task: &TaskSpec) -> Success {
    let top = &state.objects[task.top];
    let bottom = &state.objects[task.bottom];
    let held = state.held_object == Some(task.top);
    let resting = state.is_resting(task.top);
    let elevation = top.bottom();
    let lifted = elevation >= LIFT_THRESHOLD && (held || resting);
    let stacked = resting
        && (top.pos[0] - bottom.pos[0]).abs() <= STACK_TOL_FACTOR * top.half_size
        && (top.bottom() - bottom.top()).abs() <= CONTACT_TOL;
    Success { lifted, stacked }
}

/// Deterministic 64-bit mixer for deriving child seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}
