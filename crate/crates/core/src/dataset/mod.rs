//! Paired multi-domain trajectories: generation, persistence and batching.
//!
//! Every trajectory is one scripted rollout rendered twice. Domain A is
//! always domain-randomized; domain B is the invisible-arm or arm-randomized
//! partner. Frames are stored as 8-bit images and dequantized on use.

pub mod batch;
pub mod format;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Scalar, Tensor};
use crate::sim::render::{frame_seed, render, OBS_LEN};
use crate::sim::scripted::{scripted_episode, Rollout};
use crate::sim::{mix_seed, reset, sample_domain_spec, DomainKind, DomainSpec, SimError, SimState, TaskSpec};

pub use batch::{sample_batch, sample_distance_pairs, Batch, BatchConfig, GoalDraw, PairDraw, WindowDraw};
pub use format::{load, save, FORMAT_VERSION, MAGIC};

pub const ACTION_DIM: usize = 3;
pub const HOLDOUT_FRACTION: f64 = 0.25;
/// Rollout attempts per episode slot before the slot is given up.
pub const MAX_ATTEMPTS: u64 = 8;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("contract: {0}")]
    Contract(String),
    #[error("sim: {0}")]
    Sim(#[from] SimError),
    #[error("scripted policy failed on task {task:?} seed {seed}")]
    Timeout { task: TaskSpec, seed: u64 },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    DrInvisible,
    DrArm,
}

impl Pairing {
    pub const ALL: [Pairing; 2] = [Pairing::DrInvisible, Pairing::DrArm];

    pub fn kinds(self) -> (DomainKind, DomainKind) {
        match self {
            Pairing::DrInvisible => (DomainKind::DomainRandomized, DomainKind::InvisibleArm),
            Pairing::DrArm => (DomainKind::DomainRandomized, DomainKind::ArmRandomized),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Holdout,
}

/// Which rendering of a paired trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub task: TaskSpec,
    pub seed: u64,
    pub pairing: Pairing,
    pub domain_kind_a: DomainKind,
    pub domain_kind_b: DomainKind,
    pub domain_seed_a: u64,
    pub domain_seed_b: u64,
    pub split: Split,
    pub length: usize,
    pub actions_shape: [usize; 2],
    pub obs_shape: [usize; 5],
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedTrajectory {
    pub meta: TrajectoryMeta,
    /// `T×3`, row-major.
    pub actions: Vec<f32>,
    /// `T×V×3×32×32` each.
    pub obs_a: Vec<u8>,
    pub obs_b: Vec<u8>,
}

impl PairedTrajectory {
    pub fn len(&self) -> usize {
        self.meta.length
    }

    pub fn is_empty(&self) -> bool {
        self.meta.length == 0
    }

    pub fn frame(&self, side: Side, t: usize) -> &[u8] {
        let obs = match side {
            Side::A => &self.obs_a,
            Side::B => &self.obs_b,
        };
        &obs[t * OBS_LEN..(t + 1) * OBS_LEN]
    }

    pub fn action(&self, t: usize) -> [f32; ACTION_DIM] {
        let a = &self.actions[t * ACTION_DIM..(t + 1) * ACTION_DIM];
        [a[0], a[1], a[2]]
    }

    pub fn domain(&self, side: Side) -> DomainSpec {
        match side {
            Side::A => sample_domain_spec(self.meta.domain_kind_a, self.meta.domain_seed_a),
            Side::B => sample_domain_spec(self.meta.domain_kind_b, self.meta.domain_seed_b),
        }
    }

    /// Frames stacked into an `N×V×3×32×32` tensor in [0, 1].
    pub fn obs_tensor<S: Scalar>(&self, side: Side, frames: &[usize]) -> Tensor<S> {
        frames_tensor(frames.iter().map(|&t| self.frame(side, t)))
    }

    /// Physical states of the stored rollout, regenerated from its seed.
    pub fn regenerate_states(&self) -> Result<Vec<SimState>> {
        let physics = self.domain(Side::A).physics;
        let r = scripted_episode(reset(&self.meta.task, self.meta.seed)?, &self.meta.task, &physics);
        Ok(r.states)
    }
}

/// Stacks raw 8-bit frames into an `N×V×3×32×32` tensor in [0, 1].
pub fn frames_tensor<'a, S: Scalar>(frames: impl Iterator<Item = &'a [u8]>) -> Tensor<S> {
    let lut: Vec<S> = (0..=255u32).map(|b| S::from_f64_lossy(b as f64 / 255.0)).collect();
    let mut data = Vec::new();
    let mut n = 0;
    for f in frames {
        data.extend(f.iter().map(|&b| lut[b as usize]));
        n += 1;
    }
    let [v, c, h, w] = [crate::sim::render::VIEWS, 3, 32, 32];
    Tensor::new(vec![n, v, c, h, w], data).expect("frame length")
}

fn render_all(states: &[SimState], domain: &DomainSpec, episode_seed: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(states.len() * OBS_LEN);
    for (t, s) in states.iter().enumerate() {
        out.extend_from_slice(&render(s, domain, frame_seed(episode_seed, t)).data);
    }
    out
}

/// One scripted rollout rendered in both domains of the pairing.
pub fn generate_paired_episode(task: &TaskSpec, seed: u64, pairing: Pairing) -> Result<PairedTrajectory> {
    let (kind_a, kind_b) = pairing.kinds();
    let seed_a = mix_seed(&[seed, 0xA]);
    let seed_b = mix_seed(&[seed, 0xB]);
    let dom_a = sample_domain_spec(kind_a, seed_a);
    let dom_b = sample_domain_spec(kind_b, seed_b);
    let rollout: Rollout = scripted_episode(reset(task, seed)?, task, &dom_a.physics);
    if !rollout.solved(task) {
        return Err(DatasetError::Timeout { task: *task, seed });
    }
    let t = rollout.states.len();
    let actions = rollout
        .actions
        .iter()
        .flat_map(|a| a.to_array().map(|v| v as f32))
        .collect();
    Ok(PairedTrajectory {
        meta: TrajectoryMeta {
            task: *task,
            seed,
            pairing,
            domain_kind_a: kind_a,
            domain_kind_b: kind_b,
            domain_seed_a: seed_a,
            domain_seed_b: seed_b,
            split: Split::Train,
            length: t,
            actions_shape: [t, ACTION_DIM],
            obs_shape: [t, 2, 3, 32, 32],
        },
        actions,
        obs_a: render_all(&rollout.states, &dom_a, seed_a),
        obs_b: render_all(&rollout.states, &dom_b, seed_b),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discarded {
    pub pairing: Pairing,
    pub index: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub episodes_per_pairing: usize,
    pub seed: u64,
    pub holdout_fraction: f64,
    pub discarded: Vec<Discarded>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<PairedTrajectory>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.trajectories.len())
            .filter(|&i| self.trajectories[i].meta.split == split)
            .collect()
    }

    pub fn indices_with(&self, split: Split, pairing: Pairing) -> Vec<usize> {
        self.indices(split)
            .into_iter()
            .filter(|&i| self.trajectories[i].meta.pairing == pairing)
            .collect()
    }
}

fn episode_slot(pairing: Pairing, index: usize, seed: u64) -> (TaskSpec, Vec<u64>) {
    let tasks = TaskSpec::all();
    let task = tasks[index % tasks.len()];
    let p = pairing as u64;
    let seeds = (0..MAX_ATTEMPTS).map(|a| mix_seed(&[seed, p, index as u64, a])).collect();
    (task, seeds)
}

/// `n` episodes per pairing, tasks assigned round-robin, 25% of each
/// pairing held out by a seeded shuffle. Generation runs on the rayon pool;
/// results are merged in slot order.
pub fn build_dataset(n_per_pairing: usize, seed: u64) -> Result<Dataset> {
    if n_per_pairing < 2 {
        return Err(DatasetError::Contract(format!("need at least 2 episodes per pairing, got {n_per_pairing}")));
    }
    let slots: Vec<(Pairing, usize)> = Pairing::ALL
        .iter()
        .flat_map(|&p| (0..n_per_pairing).map(move |i| (p, i)))
        .collect();
    let results: Vec<(Option<PairedTrajectory>, Vec<Discarded>)> = slots
        .par_iter()
        .map(|&(pairing, index)| {
            let (task, seeds) = episode_slot(pairing, index, seed);
            let mut discarded = Vec::new();
            for s in seeds {
                match generate_paired_episode(&task, s, pairing) {
                    Ok(t) => return Ok((Some(t), discarded)),
                    Err(DatasetError::Timeout { .. }) | Err(DatasetError::Sim(SimError::Placement(_))) => {
                        discarded.push(Discarded { pairing, index, seed: s })
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok((None, discarded))
        })
        .collect::<Result<_>>()?;

    let mut trajectories = Vec::new();
    let mut discarded = Vec::new();
    for (t, d) in results {
        discarded.extend(d);
        trajectories.extend(t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x5917]));
    for p in Pairing::ALL {
        let mut idx: Vec<usize> = (0..trajectories.len())
            .filter(|&i| trajectories[i].meta.pairing == p)
            .collect();
        idx.shuffle(&mut rng);
        let n_hold = (idx.len() as f64 * HOLDOUT_FRACTION).round() as usize;
        for &i in &idx[..n_hold] {
            trajectories[i].meta.split = Split::Holdout;
        }
    }
    if !discarded.is_empty() {
        log::warn!("{} scripted episodes discarded", discarded.len());
    }
    Ok(Dataset {
        trajectories,
        manifest: DatasetManifest {
            format_version: FORMAT_VERSION,
            episodes_per_pairing: n_per_pairing,
            seed,
            holdout_fraction: HOLDOUT_FRACTION,
            discarded,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invisible_pairing_kinds() {
        let t = generate_paired_episode(&TaskSpec::new(0, 1).unwrap(), 3, Pairing::DrInvisible).unwrap();
        assert_eq!(t.meta.domain_kind_a, DomainKind::DomainRandomized);
        assert_eq!(t.meta.domain_kind_b, DomainKind::InvisibleArm);
        assert_eq!(t.obs_a.len(), t.len() * OBS_LEN);
    }

    #[test]
    fn episode_is_deterministic() {
        let task = TaskSpec::new(2, 0).unwrap();
        let a = generate_paired_episode(&task, 9, Pairing::DrArm).unwrap();
        let b = generate_paired_episode(&task, 9, Pairing::DrArm).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_dataset_partition_and_coverage() {
        let d = build_dataset(6, 1).unwrap();
        assert_eq!(d.trajectories.len(), 12);
        let train = d.indices(Split::Train);
        let hold = d.indices(Split::Holdout);
        assert_eq!(train.len() + hold.len(), 12);
        assert!(train.iter().all(|i| !hold.contains(i)));
        let tops: std::collections::HashSet<usize> = d.trajectories.iter().map(|t| t.meta.task.top).collect();
        assert_eq!(tops.len(), 3);
        for p in Pairing::ALL {
            assert!(!d.indices_with(Split::Holdout, p).is_empty());
        }
    }

    #[test]
    fn too_few_episodes_rejected() {
        assert!(build_dataset(1, 0).is_err());
    }

    #[test]
    fn obs_tensor_in_unit_range() {
        let t = generate_paired_episode(&TaskSpec::new(0, 2).unwrap(), 4, Pairing::DrInvisible).unwrap();
        let x: Tensor<f64> = t.obs_tensor(Side::B, &[0, 5]);
        assert_eq!(x.shape(), &[2, 2, 3, 32, 32]);
        assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
