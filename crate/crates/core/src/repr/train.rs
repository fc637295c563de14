//! Seeded training loop for every objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::losses::{
    distance_bins, loss_cdgcp, loss_contrastive_batched, loss_distance, loss_gcp, loss_mir, LossKind,
};
use super::model::{EncoderConfig, EncoderModel, GoalEncoding, PairClassifier, PolicyConfig, PolicyHead};
use crate::dataset::{
    frames_tensor, sample_batch, sample_distance_pairs, Batch, BatchConfig, Dataset, DatasetError, Pairing, Side, Split, ACTION_DIM,
};
use crate::numerics::{Adam, AdamConfig, NumericsError, Tape, Tensor, Var};
use crate::sim::mix_seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize, last_good: Box<TrainedModels> },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub steps: usize,
    pub batch: BatchConfig,
    pub lambda_cdgcp: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Metrics row every `log_every` steps.
    pub log_every: usize,
    /// Frame pairs per step for the distance classifiers.
    pub distance_pairs: usize,
    /// Fixed holdout batches averaged into `holdout_loss`.
    pub holdout_batches: usize,
    pub encoder: EncoderConfig,
    pub policy_hidden: Vec<usize>,
    pub classifier_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_kind: LossKind::Mir,
            steps: 2000,
            batch: BatchConfig::default(),
            lambda_cdgcp: 1.0,
            adam: AdamConfig::default(),
            seed: 7,
            log_every: 100,
            distance_pairs: 100,
            holdout_batches: 4,
            encoder: EncoderConfig::default(),
            policy_hidden: vec![64, 64],
            classifier_hidden: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let b = &self.batch;
        if b.batch == 0 || b.window == 0 || b.gcp_horizon == 0 || self.log_every == 0 {
            return Err(TrainError::Config("batch, window, horizon and log interval must be positive".into()));
        }
        if self.loss_kind.has_classifier() && self.distance_pairs == 0 {
            return Err(TrainError::Config("distance_pairs must be positive".into()));
        }
        if !(self.lambda_cdgcp >= 0.0) {
            return Err(TrainError::Config(format!("lambda_cdgcp {} < 0", self.lambda_cdgcp)));
        }
        Ok(())
    }

    pub fn policy_config(&self) -> Option<PolicyConfig> {
        let goal_encoding = match self.loss_kind {
            LossKind::Gcp => GoalEncoding::Separate,
            LossKind::Cdgcp | LossKind::Mir => GoalEncoding::Shared,
            _ => return None,
        };
        Some(PolicyConfig {
            hidden: self.policy_hidden.clone(),
            action_dim: ACTION_DIM,
            goal_encoding,
        })
    }

    pub fn classes(&self) -> Option<usize> {
        match self.loss_kind {
            LossKind::Tdc => Some(5),
            LossKind::Cmc => Some(6),
            _ => None,
        }
    }
}

/// Encoder plus whichever head the objective trains.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModels {
    pub kind: LossKind,
    pub encoder: EncoderModel<f64>,
    pub policy: Option<PolicyHead<f64>>,
    pub classifier: Option<PairClassifier<f64>>,
}

impl TrainedModels {
    pub fn init(cfg: &TrainConfig) -> Self {
        TrainedModels {
            kind: cfg.loss_kind,
            encoder: EncoderModel::new(&cfg.encoder, mix_seed(&[cfg.seed, 1])),
            policy: cfg
                .policy_config()
                .map(|p| PolicyHead::new(&p, &cfg.encoder, mix_seed(&[cfg.seed, 2]))),
            classifier: cfg.classes().map(|c| {
                PairClassifier::new(cfg.encoder.embed_dim, cfg.classifier_hidden, c, mix_seed(&[cfg.seed, 3]))
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    /// Mean training loss over the steps since the previous row (the first
    /// row holds the loss of the first batch before any update).
    pub loss: f64,
    pub loss_tscn: Option<f64>,
    pub loss_cdgcp: Option<f64>,
    pub holdout_loss: f64,
}

pub const METRICS_HEADER: &str = "step,loss,loss_tscn,loss_cdgcp,holdout_loss";

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{:.9},{},{},{:.9}\n",
            r.step,
            r.loss,
            opt(r.loss_tscn),
            opt(r.loss_cdgcp),
            r.holdout_loss
        ));
    }
    s
}

pub struct TrainOutput {
    pub models: TrainedModels,
    pub metrics: Vec<MetricRow>,
}

struct StepLoss {
    total: f64,
    tscn: Option<f64>,
    cdgcp: Option<f64>,
}

/// Frames of every window, domain A block first, then domain B.
fn window_obs(ds: &Dataset, batch: &Batch) -> Tensor<f64> {
    let mut frames: Vec<&[u8]> = Vec::new();
    for side in [Side::A, Side::B] {
        for w in &batch.windows {
            let traj = &ds.trajectories[w.traj];
            frames.extend((w.start..w.start + batch.window).map(|t| traj.frame(side, t)));
        }
    }
    frames_tensor(frames.into_iter())
}

fn goal_actions(ds: &Dataset, batch: &Batch, repeat: usize) -> Tensor<f64> {
    let mut d = Vec::new();
    for _ in 0..repeat {
        for g in &batch.goals {
            let w = batch.windows[g.seq];
            d.extend(ds.trajectories[w.traj].action(w.start + g.anchor).map(|v| v as f64));
        }
    }
    Tensor::new(vec![d.len() / ACTION_DIM, ACTION_DIM], d).expect("action rows")
}

/// TSCN value of a fixed batch with the eager encoder, divided by B.
pub fn tscn_value(ds: &Dataset, encoder: &EncoderModel<f64>, batch: &Batch) -> Result<f64> {
    let e = encoder.encode(&window_obs(ds, batch))?;
    let m = batch.windows.len() * batch.window;
    let mut tape = Tape::new();
    let ev = tape.leaf(e);
    let x = tape.select_rows(ev, &(0..m).collect::<Vec<_>>())?;
    let xb = tape.select_rows(ev, &(m..2 * m).collect::<Vec<_>>())?;
    let l = loss_contrastive_batched(&mut tape, x, xb, batch.window, true)?;
    Ok(tape.value(l).item()? / batch.windows.len() as f64)
}

struct Trainer<'a> {
    ds: &'a Dataset,
    cfg: &'a TrainConfig,
    pool: Vec<usize>,
}

impl<'a> Trainer<'a> {
    fn step(&self, models: &TrainedModels, step: usize, grads: &mut Vec<Vec<Vec<f64>>>) -> Result<StepLoss> {
        let cfg = self.cfg;
        let seed = mix_seed(&[cfg.seed, step as u64, 0xba7c]);
        let mut tape = Tape::new();
        let enc_vars = models.encoder.attach(&mut tape);
        let pol_vars = models.policy.as_ref().map(|p| p.attach(&mut tape));
        let cls_vars = models.classifier.as_ref().map(|c| c.attach(&mut tape));
        let b = cfg.batch.batch as f64;
        let inv_b = 1.0 / b;

        let out = match cfg.loss_kind {
            LossKind::Tcn | LossKind::Tscn | LossKind::Mir | LossKind::Cdgcp => {
                let batch = sample_batch(self.ds, &self.pool, &cfg.batch, seed)?;
                let e = models.encoder.encode_tape(&mut tape, &enc_vars, &window_obs(self.ds, &batch))?;
                let m = batch.windows.len() * batch.window;
                let x = tape.select_rows(e, &(0..m).collect::<Vec<_>>())?;
                let xb = tape.select_rows(e, &(m..2 * m).collect::<Vec<_>>())?;
                let contrast = if cfg.loss_kind == LossKind::Cdgcp {
                    None
                } else {
                    let smooth = cfg.loss_kind != LossKind::Tcn;
                    let l = loss_contrastive_batched(&mut tape, x, xb, batch.window, smooth)?;
                    Some(tape.scale(l, inv_b))
                };
                let policy_loss = if cfg.loss_kind.has_policy() {
                    let policy = models.policy.as_ref().expect("policy head");
                    let pv = pol_vars.as_ref().expect("policy vars");
                    let n = batch.window;
                    let row = |g: &crate::dataset::GoalDraw, t: usize| g.seq * n + t;
                    let mut cur = Vec::new();
                    let mut goal = Vec::new();
                    for g in &batch.goals {
                        cur.push(row(g, g.anchor));
                        goal.push(m + row(g, g.anchor + g.offset));
                    }
                    for g in &batch.goals {
                        cur.push(m + row(g, g.anchor));
                        goal.push(row(g, g.anchor + g.offset));
                    }
                    let cv = tape.select_rows(e, &cur)?;
                    let gv = tape.select_rows(e, &goal)?;
                    let pred = policy.act_tape(&mut tape, pv, cv, gv)?;
                    let offsets: Vec<usize> = batch.goals.iter().map(|g| g.offset).collect();
                    let l = loss_cdgcp(
                        &mut tape,
                        pred,
                        &goal_actions(self.ds, &batch, 2),
                        &offsets,
                        cfg.batch.gcp_horizon,
                        true,
                    )?;
                    Some(tape.scale(l, inv_b))
                } else {
                    None
                };
                let total = match (contrast, policy_loss) {
                    (Some(c), Some(p)) => loss_mir(&mut tape, c, p, cfg.lambda_cdgcp)?,
                    (Some(c), None) => c,
                    (None, Some(p)) => p,
                    (None, None) => unreachable!("every contrastive kind has a term"),
                };
                self.finish(tape, total, contrast, policy_loss, &enc_vars, pol_vars.as_deref(), None, grads)?
            }
            LossKind::Gcp => {
                let batch = sample_batch(self.ds, &self.pool, &cfg.batch, seed)?;
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x51de]));
                let sides: Vec<Side> = batch
                    .windows
                    .iter()
                    .map(|w| {
                        let arm = self.ds.trajectories[w.traj].meta.pairing == Pairing::DrArm;
                        if arm && rng.gen_bool(0.5) {
                            Side::B
                        } else {
                            Side::A
                        }
                    })
                    .collect();
                let frame = |g: &crate::dataset::GoalDraw, t: usize| {
                    let w = batch.windows[g.seq];
                    self.ds.trajectories[w.traj].frame(sides[g.seq], w.start + t)
                };
                let cur_obs = frames_tensor(batch.goals.iter().map(|g| frame(g, g.anchor)));
                let goal_obs = frames_tensor(batch.goals.iter().map(|g| frame(g, g.anchor + g.offset)));
                let policy = models.policy.as_ref().expect("policy head");
                let pv = pol_vars.as_ref().expect("policy vars");
                let cv = models.encoder.encode_tape(&mut tape, &enc_vars, &cur_obs)?;
                let gv = policy.encode_goal_tape(&mut tape, pv, &goal_obs)?;
                let pred = policy.act_tape(&mut tape, pv, cv, gv)?;
                let offsets: Vec<usize> = batch.goals.iter().map(|g| g.offset).collect();
                let l = loss_gcp(&mut tape, pred, &goal_actions(self.ds, &batch, 1), &offsets, cfg.batch.gcp_horizon)?;
                let l = tape.scale(l, inv_b);
                self.finish(tape, l, None, Some(l), &enc_vars, pol_vars.as_deref(), None, grads)?
            }
            LossKind::Tdc | LossKind::Cmc => {
                let cross = cfg.loss_kind == LossKind::Cmc;
                let t_len = self.ds.trajectories[self.pool[0]].len();
                let bins = distance_bins(t_len, cross);
                let pairs = sample_distance_pairs(self.ds, &self.pool, &bins, cfg.distance_pairs, cross, seed)?;
                let q = pairs.len();
                let obs = frames_tensor(
                    pairs
                        .iter()
                        .map(|p| self.ds.trajectories[p.traj].frame(p.side0, p.t0))
                        .chain(pairs.iter().map(|p| self.ds.trajectories[p.traj].frame(p.side1, p.t1))),
                );
                let e = models.encoder.encode_tape(&mut tape, &enc_vars, &obs)?;
                let e0 = tape.select_rows(e, &(0..q).collect::<Vec<_>>())?;
                let e1 = tape.select_rows(e, &(q..2 * q).collect::<Vec<_>>())?;
                let cls = models.classifier.as_ref().expect("classifier");
                let cv = cls_vars.as_ref().expect("classifier vars");
                let logits = cls.logits_tape(&mut tape, cv, e0, e1)?;
                let d: Vec<usize> = pairs.iter().map(|p| p.t1 - p.t0).collect();
                let l = loss_distance(&mut tape, logits, &d, t_len, cross, cross)?;
                let l = tape.scale(l, 1.0 / q as f64);
                self.finish(tape, l, None, None, &enc_vars, None, cls_vars.as_deref(), grads)?
            }
        };
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        mut tape: Tape<f64>,
        total: Var,
        tscn: Option<Var>,
        cdgcp: Option<Var>,
        enc: &[Var],
        pol: Option<&[Var]>,
        cls: Option<&[Var]>,
        grads: &mut Vec<Vec<Vec<f64>>>,
    ) -> Result<StepLoss> {
        let value = |tape: &Tape<f64>, v: Var| tape.value(v).item();
        let out = StepLoss {
            total: value(&tape, total)?,
            tscn: tscn.map(|v| value(&tape, v)).transpose()?,
            cdgcp: cdgcp.map(|v| value(&tape, v)).transpose()?,
        };
        if !out.total.is_finite() {
            return Ok(out);
        }
        tape.backward(total)?;
        grads.clear();
        for vars in [Some(enc), pol, cls].into_iter().flatten() {
            grads.push(vars.iter().map(|&v| tape.grad_or_zeros(v)).collect());
        }
        Ok(out)
    }
}

/// Runs `cfg.steps` updates of the configured objective.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let pool = ds.indices(Split::Train);
    if pool.is_empty() {
        return Err(TrainError::Config("dataset has no training trajectories".into()));
    }
    let mut holdout_pool = ds.indices(Split::Holdout);
    if holdout_pool.is_empty() {
        holdout_pool = pool.clone();
    }
    let trainer = Trainer { ds, cfg, pool };
    let holdout: Vec<Batch> = (0..cfg.holdout_batches.max(1))
        .map(|h| sample_batch(ds, &holdout_pool, &cfg.batch, mix_seed(&[cfg.seed, h as u64, 0x401d])))
        .collect::<std::result::Result<_, _>>()?;
    let holdout_value = |m: &TrainedModels| -> Result<f64> {
        let mut s = 0.0;
        for b in &holdout {
            s += tscn_value(ds, &m.encoder, b)?;
        }
        Ok(s / holdout.len() as f64)
    };

    let mut models = TrainedModels::init(cfg);
    let mut opt_enc = Adam::new(cfg.adam.clone(), &models.encoder.params);
    let mut opt_pol = models.policy.as_ref().map(|p| Adam::new(cfg.adam.clone(), &p.params));
    let mut opt_cls = models.classifier.as_ref().map(|c| Adam::new(cfg.adam.clone(), &c.params));

    let mut metrics = Vec::new();
    let mut grads = Vec::new();
    let first = trainer.step(&models, 0, &mut grads)?;
    metrics.push(MetricRow {
        step: 0,
        loss: first.total,
        loss_tscn: first.tscn,
        loss_cdgcp: first.cdgcp,
        holdout_loss: holdout_value(&models)?,
    });

    let mut acc = (0.0, 0.0, 0.0, 0usize);
    for step in 0..cfg.steps {
        let l = trainer.step(&models, step, &mut grads)?;
        if !l.total.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                last_good: Box::new(models),
            });
        }
        let mut g = grads.iter();
        opt_enc.step(&mut models.encoder.params, g.next().expect("encoder grads"))?;
        if let (Some(opt), Some(p)) = (opt_pol.as_mut(), models.policy.as_mut()) {
            opt.step(&mut p.params, g.next().expect("policy grads"))?;
        }
        if let (Some(opt), Some(c)) = (opt_cls.as_mut(), models.classifier.as_mut()) {
            opt.step(&mut c.params, g.next().expect("classifier grads"))?;
        }
        acc.0 += l.total;
        acc.1 += l.tscn.unwrap_or(0.0);
        acc.2 += l.cdgcp.unwrap_or(0.0);
        acc.3 += 1;
        let done = step + 1;
        if done % cfg.log_every == 0 || done == cfg.steps {
            let k = acc.3 as f64;
            let row = MetricRow {
                step: done,
                loss: acc.0 / k,
                loss_tscn: l.tscn.map(|_| acc.1 / k),
                loss_cdgcp: l.cdgcp.map(|_| acc.2 / k),
                holdout_loss: holdout_value(&models)?,
            };
            log::info!(
                "{} step {} loss {:.4} holdout {:.4}",
                cfg.loss_kind.name(),
                row.step,
                row.loss,
                row.holdout_loss
            );
            metrics.push(row);
            acc = (0.0, 0.0, 0.0, 0);
        }
    }
    Ok(TrainOutput { models, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::build_dataset;

    fn tiny_cfg(kind: LossKind, steps: usize) -> TrainConfig {
        TrainConfig {
            loss_kind: kind,
            steps,
            batch: BatchConfig {
                batch: 2,
                window: 10,
                gcp_horizon: 4,
            },
            encoder: EncoderConfig::tiny(),
            policy_hidden: vec![8, 8],
            classifier_hidden: 8,
            distance_pairs: 8,
            holdout_batches: 1,
            log_every: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let ds = build_dataset(2, 1).unwrap();
        let cfg = tiny_cfg(LossKind::Mir, 0);
        let out = train(&ds, &cfg).unwrap();
        assert_eq!(out.models, TrainedModels::init(&cfg));
        assert_eq!(out.metrics.len(), 1);
    }

    #[test]
    fn every_objective_runs_and_is_deterministic() {
        let ds = build_dataset(2, 1).unwrap();
        for kind in LossKind::ALL {
            let cfg = tiny_cfg(kind, 3);
            let a = train(&ds, &cfg).unwrap();
            let b = train(&ds, &cfg).unwrap();
            assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics), "{kind:?}");
            assert_eq!(a.models, b.models);
            assert!(a.metrics.iter().all(|r| r.loss.is_finite()));
            assert_ne!(a.models.encoder, TrainedModels::init(&cfg).encoder, "{kind:?}");
        }
    }

    #[test]
    fn csv_layout() {
        let rows = [MetricRow {
            step: 3,
            loss: 1.0,
            loss_tscn: Some(0.5),
            loss_cdgcp: None,
            holdout_loss: 2.0,
        }];
        let s = metrics_csv(&rows);
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some(METRICS_HEADER));
        assert_eq!(lines.next(), Some("3,1.000000000,0.500000000,,2.000000000"));
    }
}
