// Goal-sequence tracking in the canonical simulator and the imitation
// protocol built on it.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::ReportRow;
use super::{rows_f64, sample_goals, EvalError, GoalSequence, Result, DEFAULT_EPSILON, DEFAULT_STRIDE};
use crate::dataset::{frames_tensor, MAX_ATTEMPTS};
use crate::numerics::Tensor;
use crate::repr::{EncoderModel, LossKind, PolicyHead};
use crate::sim::render::{frame_seed, rasterize};
use crate::sim::{
    mix_seed, render, render_key, reset, sample_domain_spec, scripted::scripted_episode, step, success_predicates, Action,
    DomainKind, DomainSpec, Physics, RenderKey, SimState, TaskSpec, HALF_SIZE,
};

const ENCODE_CHUNK: usize = 128;

/// A scripted demonstration rendered in one evaluation domain.
#[derive(Clone, Debug)]
pub struct Demo {
    pub id: usize,
    pub task: TaskSpec,
    pub seed: u64,
    pub domain: DomainSpec,
    pub states: Vec<SimState>,
    pub frames: Vec<u8>,
}

impl Demo {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn obs_tensor<S: crate::numerics::Scalar>(&self, frames: &[usize]) -> Tensor<S> {
        let n = crate::sim::render::OBS_LEN;
        frames_tensor(frames.iter().map(|&t| &self.frames[t * n..(t + 1) * n]))
    }
}

/// Demo `id` of an evaluation set. Task and start layout depend only on
/// `(id, seed)`, so the same id shows the same episode in every domain.
pub fn make_demo(id: usize, kind: DomainKind, seed: u64) -> Result<Demo> {
    let tasks = TaskSpec::all();
    let task = tasks[id % tasks.len()];
    let domain = sample_domain_spec(kind, mix_seed(&[seed, id as u64, 0xD0]));
    for attempt in 0..MAX_ATTEMPTS {
        let ep = mix_seed(&[seed, id as u64, attempt as u64]);
        let r = scripted_episode(reset(&task, ep)?, &task, &domain.physics);
        if r.solved(&task) {
            let mut frames = Vec::with_capacity(r.states.len() * crate::sim::render::OBS_LEN);
            for (t, s) in r.states.iter().enumerate() {
                frames.extend_from_slice(&render(s, &domain, frame_seed(ep, t)).data);
            }
            return Ok(Demo {
                id,
                task,
                seed: ep,
                domain,
                states: r.states,
                frames,
            });
        }
    }
    Err(EvalError::Contract(format!("no solvable demo for id {id} in {MAX_ATTEMPTS} attempts")))
}

/// Canonical-domain embeddings memoized by display list.
pub struct Embedder<'a> {
    encoder: &'a EncoderModel<f32>,
    domain: DomainSpec,
    cache: HashMap<RenderKey, Vec<f64>>,
}

impl<'a> Embedder<'a> {
    pub fn new(encoder: &'a EncoderModel<f32>) -> Self {
        Embedder {
            encoder,
            domain: DomainSpec::canonical(),
            cache: HashMap::new(),
        }
    }

    pub fn key(&self, s: &SimState) -> RenderKey {
        render_key(s, &self.domain, 0)
    }

    pub fn cached(&self) -> usize {
        self.cache.len()
    }

    /// Encodes every key not yet cached, in batches.
    pub fn ensure<'k>(&mut self, keys: impl Iterator<Item = &'k RenderKey>) -> Result<()> {
        let mut seen = HashSet::new();
        let missing: Vec<&RenderKey> = keys.filter(|k| !self.cache.contains_key(*k) && seen.insert(*k)).collect();
        for chunk in missing.chunks(ENCODE_CHUNK) {
            let imgs: Vec<_> = chunk.iter().map(|k| rasterize(k)).collect();
            let e = self.encoder.encode(&frames_tensor(imgs.iter().map(|i| i.data.as_slice())))?;
            for (k, row) in chunk.iter().zip(rows_f64(&e)) {
                self.cache.insert((*k).clone(), row);
            }
        }
        Ok(())
    }

    /// Embedding of a key already passed to `ensure`.
    pub fn get(&self, key: &RenderKey) -> &[f64] {
        &self.cache[key]
    }

    pub fn embed(&mut self, s: &SimState) -> Result<Vec<f64>> {
        let k = self.key(s);
        self.ensure(std::iter::once(&k))?;
        Ok(self.cache[&k].clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemConfig {
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    pub horizon: usize,
    pub init_std: f64,
    pub min_std: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        CemConfig {
            population: 64,
            elites: 8,
            iterations: 3,
            horizon: 10,
            init_std: 0.6,
            min_std: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrackResult {
    pub goals_reached: usize,
    pub goals_total: usize,
    /// Visited states, start included.
    pub states: Vec<SimState>,
}

impl TrackResult {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// Lifted at some frame; stacked at the end after a lift.
    pub fn success(&self, task: &TaskSpec) -> crate::sim::Success {
        let lifted = self.states.iter().any(|s| success_predicates(s, task).lifted);
        let end = success_predicates(self.states.last().expect("start state"), task);
        crate::sim::Success {
            lifted,
            stacked: lifted && end.stacked,
        }
    }
}

/// Lexicographic plan score: goals newly reached, then closeness of the
/// final state to the active goal.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Score(usize, f64);

impl Score {
    fn better(&self, o: &Score) -> bool {
        self.0 > o.0 || (self.0 == o.0 && self.1 > o.1)
    }
}

fn score_plan(goals: &GoalSequence, idx: usize, keys: &[RenderKey], emb: &Embedder) -> Score {
    let mut a = idx;
    for k in keys {
        if a >= goals.len() {
            break;
        }
        a = goals.advance_from(a, emb.get(k));
    }
    let tail = match goals.goal_embeddings.get(a) {
        Some(g) => -super::sq_dist(emb.get(keys.last().expect("non-empty horizon")), g),
        None => 0.0,
    };
    Score(a - idx, tail)
}

/// Receding-horizon cross-entropy planner in the canonical simulator.
pub fn track_cem(
    start: &SimState,
    emb: &mut Embedder,
    goals: &GoalSequence,
    budget: usize,
    cfg: &CemConfig,
    seed: u64,
) -> Result<TrackResult> {
    if cfg.population == 0 || cfg.elites == 0 || cfg.elites > cfg.population || cfg.horizon == 0 {
        return Err(EvalError::Contract(format!("bad CEM config {cfg:?}")));
    }
    let physics = Physics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = cfg.horizon;
    let mut s = start.clone();
    let mut states = vec![s.clone()];
    let mut active = goals.advance_from(goals.active_index, &emb.embed(&s)?);
    let mut mean = vec![[0.0f64; 3]; h];
    while active < goals.len() && states.len() <= budget {
        let mut std = vec![[cfg.init_std; 3]; h];
        let mut best: Option<(Score, Vec<[f64; 3]>)> = None;
        for _ in 0..cfg.iterations {
            let plans: Vec<Vec<[f64; 3]>> = (0..cfg.population)
                .map(|c| {
                    (0..h)
                        .map(|t| {
                            std::array::from_fn(|d| {
                                // Candidate 0 replays the mean.
                                let z: f64 = if c == 0 { 0.0 } else { rng.sample(StandardNormal) };
                                (mean[t][d] + std[t][d] * z).clamp(-1.0, 1.0)
                            })
                        })
                        .collect()
                })
                .collect();
            let keys: Vec<Vec<RenderKey>> = plans
                .iter()
                .map(|p| {
                    let mut x = s.clone();
                    p.iter()
                        .map(|a| {
                            x = step(&x, &Action::from_slice(a), &physics);
                            emb.key(&x)
                        })
                        .collect()
                })
                .collect();
            emb.ensure(keys.iter().flatten())?;
            let scores: Vec<Score> = keys.iter().map(|k| score_plan(goals, active, k, emb)).collect();
            let mut order: Vec<usize> = (0..plans.len()).collect();
            order.sort_by(|&a, &b| {
                scores[b]
                    .0
                    .cmp(&scores[a].0)
                    .then(scores[b].1.total_cmp(&scores[a].1))
                    .then(a.cmp(&b))
            });
            if best.as_ref().map_or(true, |(b, _)| scores[order[0]].better(b)) {
                best = Some((scores[order[0]], plans[order[0]].clone()));
            }
            let elites = &order[..cfg.elites];
            for t in 0..h {
                for d in 0..3 {
                    let m = elites.iter().map(|&e| plans[e][t][d]).sum::<f64>() / elites.len() as f64;
                    let v = elites.iter().map(|&e| (plans[e][t][d] - m).powi(2)).sum::<f64>() / elites.len() as f64;
                    mean[t][d] = m;
                    std[t][d] = v.sqrt().max(cfg.min_std);
                }
            }
        }
        let plan = best.expect("at least one iteration").1;
        s = step(&s, &Action::from_slice(&plan[0]), &physics);
        states.push(s.clone());
        active = goals.advance_from(active, &emb.embed(&s)?);
        mean.rotate_left(1);
        mean[h - 1] = [0.0; 3];
    }
    Ok(TrackResult {
        goals_reached: active,
        goals_total: goals.len(),
        states,
    })
}

/// Closed-loop goal-conditioned policy. `policy_goals` holds the policy's
/// own goal inputs, one per goal.
pub fn track_gcp(
    start: &SimState,
    policy: &PolicyHead<f32>,
    emb: &mut Embedder,
    goals: &GoalSequence,
    policy_goals: &[Vec<f64>],
    budget: usize,
) -> Result<TrackResult> {
    if policy_goals.len() != goals.len() {
        return Err(EvalError::Contract("one policy goal per goal required".into()));
    }
    let physics = Physics::default();
    let mut s = start.clone();
    let mut states = vec![s.clone()];
    let mut e = emb.embed(&s)?;
    let mut active = goals.advance_from(goals.active_index, &e);
    while active < goals.len() && states.len() <= budget {
        let cur = Tensor::vector(e.iter().map(|&v| v as f32).collect()).reshape(&[1, e.len()])?;
        let g = &policy_goals[active];
        let goal = Tensor::vector(g.iter().map(|&v| v as f32).collect()).reshape(&[1, g.len()])?;
        let a = policy.act(&cur, &goal)?;
        let a: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
        s = step(&s, &Action::from_slice(&a), &physics);
        states.push(s.clone());
        e = emb.embed(&s)?;
        active = goals.advance_from(active, &e);
    }
    Ok(TrackResult {
        goals_reached: active,
        goals_total: goals.len(),
        states,
    })
}

/// Uniform random actions under the same advancement rule.
pub fn track_random(
    start: &SimState,
    emb: &mut Embedder,
    goals: &GoalSequence,
    budget: usize,
    seed: u64,
) -> Result<TrackResult> {
    let physics = Physics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = start.clone();
    let mut states = vec![s.clone()];
    let mut active = goals.advance_from(goals.active_index, &emb.embed(&s)?);
    while active < goals.len() && states.len() <= budget {
        let a: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
        s = step(&s, &Action::from_slice(&a), &physics);
        states.push(s.clone());
        active = goals.advance_from(active, &emb.embed(&s)?);
    }
    Ok(TrackResult {
        goals_reached: active,
        goals_total: goals.len(),
        states,
    })
}

/// Agent used by `imitation_eval`.
#[derive(Clone, Copy)]
pub enum Tracker<'a> {
    Cem {
        encoder: &'a EncoderModel<f32>,
        config: CemConfig,
    },
    Gcp {
        encoder: &'a EncoderModel<f32>,
        policy: &'a PolicyHead<f32>,
    },
    Random {
        encoder: &'a EncoderModel<f32>,
    },
}

impl<'a> Tracker<'a> {
    fn encoder(&self) -> &'a EncoderModel<f32> {
        match *self {
            Tracker::Cem { encoder, .. } | Tracker::Gcp { encoder, .. } | Tracker::Random { encoder } => encoder,
        }
    }
}

/// GCP and CD-GCP act through their policy head; every other method is
/// evaluated by planning on its embedding.
pub fn tracker_for<'a>(
    kind: LossKind,
    encoder: &'a EncoderModel<f32>,
    policy: Option<&'a PolicyHead<f32>>,
    cem: CemConfig,
) -> Result<Tracker<'a>> {
    match kind {
        LossKind::Gcp | LossKind::Cdgcp => match policy {
            Some(policy) => Ok(Tracker::Gcp { encoder, policy }),
            None => Err(EvalError::Contract(format!("{} checkpoint has no policy head", kind.name()))),
        },
        _ => Ok(Tracker::Cem { encoder, config: cem }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImitationConfig {
    pub attempts: usize,
    pub stride: usize,
    pub epsilon: f64,
    /// Start jitter half-width, in workspace units.
    pub jitter: f64,
    /// Tracking budget as a multiple of the demo length.
    pub budget_factor: usize,
    pub seed: u64,
}

impl Default for ImitationConfig {
    fn default() -> Self {
        ImitationConfig {
            attempts: 100,
            stride: DEFAULT_STRIDE,
            epsilon: DEFAULT_EPSILON,
            jitter: 0.02,
            budget_factor: 3,
            seed: 11,
        }
    }
}

/// Demo start layout with seeded uniform jitter on object and gripper
/// positions.
pub fn jittered_start(demo: &Demo, jitter: f64, seed: u64) -> SimState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s0 = &demo.states[0];
    let mut j = |v: f64, lo: f64, hi: f64| {
        let d = if jitter > 0.0 { rng.gen_range(-jitter..=jitter) } else { 0.0 };
        (v + d).clamp(lo, hi)
    };
    let xs: Vec<f64> = s0.objects.iter().map(|o| j(o.pos[0], HALF_SIZE, 1.0 - HALF_SIZE)).collect();
    let g = [j(s0.gripper_pos[0], 0.0, 1.0), j(s0.gripper_pos[1], 0.0, 1.0)];
    SimState::from_layout(&xs, g)
}

fn embed_demo(encoder: &EncoderModel<f32>, demo: &Demo) -> Result<Vec<Vec<f64>>> {
    let frames: Vec<usize> = (0..demo.len()).collect();
    let mut out = Vec::with_capacity(demo.len());
    for chunk in frames.chunks(ENCODE_CHUNK) {
        out.extend(rows_f64(&encoder.encode(&demo.obs_tensor::<f32>(chunk))?));
    }
    Ok(out)
}

fn eval_demo(method: &str, tracker: &Tracker, demo: &Demo, cfg: &ImitationConfig) -> Result<ReportRow> {
    let encoder = tracker.encoder();
    let goals = sample_goals(&embed_demo(encoder, demo)?, cfg.stride, cfg.epsilon)?;
    let policy_goals = match tracker {
        Tracker::Gcp { policy, .. } if policy.has_goal_encoder() => {
            rows_f64(&policy.encode_goal(&demo.obs_tensor::<f32>(&goals.source_frames))?)
        }
        _ => goals.goal_embeddings.clone(),
    };
    let budget = cfg.budget_factor * demo.len();
    let mut emb = Embedder::new(encoder);
    let mut row = ReportRow::new(method, demo.domain.kind.name(), demo.id, goals.len());
    for attempt in 0..cfg.attempts {
        let seed = mix_seed(&[cfg.seed, demo.id as u64, attempt as u64]);
        let start = jittered_start(demo, cfg.jitter, seed);
        let r = match tracker {
            Tracker::Cem { config, .. } => track_cem(&start, &mut emb, &goals, budget, config, seed)?,
            Tracker::Gcp { policy, .. } => track_gcp(&start, policy, &mut emb, &goals, &policy_goals, budget)?,
            Tracker::Random { .. } => track_random(&start, &mut emb, &goals, budget, seed)?,
        };
        row.record(r.success(&demo.task), r.goals_reached);
    }
    log::debug!("{method}/{} demo {}: {} cached embeddings", demo.domain.kind.name(), demo.id, emb.cached());
    Ok(row.finish())
}

/// Every demo × attempt: jittered reset, track the demo's goals, record
/// staged success. One row per demo, in demo order.
pub fn imitation_eval(method: &str, tracker: &Tracker, demos: &[Demo], cfg: &ImitationConfig) -> Result<Vec<ReportRow>> {
    if cfg.attempts == 0 {
        return Err(EvalError::Contract("attempts must be positive".into()));
    }
    demos.par_iter().map(|d| eval_demo(method, tracker, d, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::EncoderConfig;

    fn encoder() -> EncoderModel<f32> {
        EncoderModel::<f64>::new(&EncoderConfig::tiny(), 3).cast()
    }

    #[test]
    fn demos_share_layout_across_domains() {
        let a = make_demo(2, DomainKind::InvisibleArm, 5).unwrap();
        let b = make_demo(2, DomainKind::Stick, 5).unwrap();
        assert_eq!(a.states, b.states);
        assert_ne!(a.frames, b.frames);
        assert_eq!(a.frames.len(), a.len() * crate::sim::render::OBS_LEN);
    }

    #[test]
    fn start_goal_is_reached_at_step_zero() {
        let enc = encoder();
        let demo = make_demo(0, DomainKind::Canonical, 1).unwrap();
        let mut emb = Embedder::new(&enc);
        let e0 = emb.embed(&demo.states[0]).unwrap();
        let goals = GoalSequence {
            goal_embeddings: vec![e0],
            source_frames: vec![0],
            w: 1.0,
            epsilon: 0.3,
            active_index: 0,
        };
        let r = track_cem(&demo.states[0], &mut emb, &goals, 30, &CemConfig::default(), 0).unwrap();
        assert_eq!(r.goals_reached, 1);
        assert_eq!(r.steps(), 0);
    }

    #[test]
    fn unreachable_goal_exhausts_budget() {
        let enc = encoder();
        let mut emb = Embedder::new(&enc);
        let demo = make_demo(0, DomainKind::Canonical, 1).unwrap();
        let goals = GoalSequence {
            goal_embeddings: vec![vec![1e3; enc.embed_dim()]],
            source_frames: vec![99],
            w: 1.0,
            epsilon: 0.999_999,
            active_index: 0,
        };
        let cfg = CemConfig {
            population: 8,
            elites: 2,
            ..CemConfig::default()
        };
        let r = track_cem(&demo.states[0], &mut emb, &goals, 5, &cfg, 0).unwrap();
        assert_eq!(r.goals_reached, 0);
        assert_eq!(r.steps(), 5);
    }

    #[test]
    fn zero_policy_never_moves() {
        use crate::repr::{GoalEncoding, PolicyConfig};
        let enc = encoder();
        let pcfg = PolicyConfig {
            hidden: vec![4],
            action_dim: 3,
            goal_encoding: GoalEncoding::Shared,
        };
        let mut policy = PolicyHead::<f32>::new(&pcfg, enc.config(), 0);
        for t in policy.params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let demo = make_demo(1, DomainKind::Canonical, 1).unwrap();
        let mut emb = Embedder::new(&enc);
        let goals = GoalSequence {
            goal_embeddings: vec![vec![5.0; enc.embed_dim()]],
            source_frames: vec![99],
            w: 1.0,
            epsilon: 0.3,
            active_index: 0,
        };
        let pg = goals.goal_embeddings.clone();
        let r = track_gcp(&demo.states[0], &policy, &mut emb, &goals, &pg, 10).unwrap();
        assert_eq!(r.goals_reached, 0);
        assert!(r.states.iter().all(|s| s.gripper_pos == demo.states[0].gripper_pos));
    }

    #[test]
    fn imitation_rows_are_staged_and_deterministic() {
        let enc = encoder();
        let demos: Vec<Demo> = (0..2).map(|i| make_demo(i, DomainKind::Stick, 4).unwrap()).collect();
        let cfg = ImitationConfig {
            attempts: 3,
            budget_factor: 1,
            ..ImitationConfig::default()
        };
        let tr = Tracker::Random { encoder: &enc };
        let a = imitation_eval("random", &tr, &demos, &cfg).unwrap();
        let b = imitation_eval("random", &tr, &demos, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        for r in &a {
            assert_eq!(r.attempts, 3);
            assert!(r.stack_rate <= r.lift_rate);
            assert_eq!(r.domain, "stick");
        }
    }
}
