//! Evaluation protocols: reachability rank correlation, cross-domain
//! alignment, and goal-sequence tracking with staged success accounting.

pub mod report;
pub mod track;

use thiserror::Error;

use crate::dataset::{PairedTrajectory, Side};
use crate::numerics::{NumericsError, Scalar, Tensor};
use crate::repr::EncoderModel;

pub use report::{EvalReport, MethodSummary, ReportRow};
pub use track::{
    imitation_eval, jittered_start, make_demo, track_cem, track_gcp, track_random, tracker_for, CemConfig, Demo,
    Embedder, ImitationConfig, TrackResult, Tracker,
};

pub const DEFAULT_EPSILON: f64 = 0.3;
pub const DEFAULT_STRIDE: usize = 8;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("contract: {0}")]
    Contract(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Average ranks (1-based); ties share the mean of their positions.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(EvalError::Contract(format!("spearman needs equal lengths ≥ 2, got {} and {}", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(EvalError::Undefined("NaN in spearman input".into()));
    }
    pearson(&ranks(a), &ranks(b)).ok_or_else(|| EvalError::Undefined("constant input list".into()))
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn rows_f64<S: Scalar>(t: &Tensor<S>) -> Vec<Vec<f64>> {
    let d = t.shape()[1];
    t.data().chunks(d).map(|r| r.iter().map(|v| v.as_f64()).collect()).collect()
}

/// Min-max normalization to [0, 1]; a constant list is undefined.
pub fn normalize(d: &[f64]) -> Result<Vec<f64>> {
    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(EvalError::Undefined("constant distance sequence".into()));
    }
    Ok(d.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// Normalized distances `‖φ(o₀) − φ(ō_t)‖` and their rank correlation with
/// the frame index.
pub fn reachability_curve(anchor: &[f64], frames: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    if frames.len() < 10 {
        return Err(EvalError::Contract(format!("demo of {} frames, need ≥ 10", frames.len())));
    }
    let d: Vec<f64> = frames.iter().map(|f| sq_dist(anchor, f).sqrt()).collect();
    let norm = normalize(&d)?;
    let t: Vec<f64> = (0..frames.len()).map(|i| i as f64).collect();
    let rho = spearman(&norm, &t)?;
    Ok((norm, rho))
}

/// Reachability on a paired trajectory: frame 0 of domain A against every
/// frame of domain B (`cross`) or of domain A itself.
pub fn reachability_eval<S: Scalar>(
    encoder: &EncoderModel<S>,
    demo: &PairedTrajectory,
    cross: bool,
) -> Result<(Vec<f64>, f64)> {
    let t = demo.len();
    let frames: Vec<usize> = (0..t).collect();
    let anchor = rows_f64(&encoder.encode(&demo.obs_tensor::<S>(Side::A, &[0]))?).remove(0);
    let side = if cross { Side::B } else { Side::A };
    let e = rows_f64(&encoder.encode(&demo.obs_tensor::<S>(side, &frames))?);
    reachability_curve(&anchor, &e)
}

/// Reachability across two renderings of one episode: frame 0 of `anchor`
/// against every frame of `target`. Passing the same rendering twice gives
/// the same-domain curve.
pub fn reachability_demos<S: Scalar>(
    encoder: &EncoderModel<S>,
    anchor: &Demo,
    target: &Demo,
) -> Result<(Vec<f64>, f64)> {
    if anchor.states != target.states {
        return Err(EvalError::Contract("renderings of different episodes".into()));
    }
    let frames: Vec<usize> = (0..target.len()).collect();
    let a = rows_f64(&encoder.encode(&anchor.obs_tensor::<S>(&[0]))?).remove(0);
    let mut e = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(128) {
        e.extend(rows_f64(&encoder.encode(&target.obs_tensor::<S>(chunk))?));
    }
    reachability_curve(&a, &e)
}

/// Goals cut from a demonstration's embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalSequence {
    pub goal_embeddings: Vec<Vec<f64>>,
    pub source_frames: Vec<usize>,
    pub w: f64,
    pub epsilon: f64,
    pub active_index: usize,
}

impl GoalSequence {
    pub fn len(&self) -> usize {
        self.goal_embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goal_embeddings.is_empty()
    }

    pub fn done(&self) -> bool {
        self.active_index >= self.len()
    }

    pub fn active(&self) -> Option<&[f64]> {
        self.goal_embeddings.get(self.active_index).map(|v| v.as_slice())
    }

    /// Advances past every consecutive goal `emb` satisfies; returns how many.
    pub fn advance(&mut self, emb: &[f64]) -> usize {
        let start = self.active_index;
        self.active_index = self.advance_from(start, emb);
        self.active_index - start
    }

    /// Active index after observing `emb` with goal `idx` active.
    pub fn advance_from(&self, mut idx: usize, emb: &[f64]) -> usize {
        while let Some(g) = self.goal_embeddings.get(idx) {
            if !reward_sq(sq_dist(emb, g), self.w, self.epsilon) {
                break;
            }
            idx += 1;
        }
        idx
    }
}

/// `(1/(T−1)) Σ_t ‖φ(ō_{t+1}) − φ(ō_t)‖`.
pub fn compute_w(emb: &[Vec<f64>]) -> Result<f64> {
    if emb.len() < 2 {
        return Err(EvalError::Contract("w needs at least two frames".into()));
    }
    let s: f64 = emb.windows(2).map(|p| sq_dist(&p[0], &p[1]).sqrt()).sum();
    Ok(s / (emb.len() - 1) as f64)
}

/// Frames `stride, 2·stride, …` plus the final frame, with `w` from the
/// whole demonstration.
pub fn sample_goals(emb: &[Vec<f64>], stride: usize, epsilon: f64) -> Result<GoalSequence> {
    let t = emb.len();
    if stride == 0 || t < stride || t < 2 {
        return Err(EvalError::Contract(format!("stride {stride} with {t} frames")));
    }
    if !(5..=10).contains(&stride) {
        log::warn!("goal stride {stride} outside [5, 10]");
    }
    let mut frames: Vec<usize> = (1..).map(|k| k * stride).take_while(|&f| f < t).collect();
    if frames.last() != Some(&(t - 1)) {
        frames.push(t - 1);
    }
    let w = compute_w(emb)?;
    if w <= 0.0 {
        return Err(EvalError::Undefined("constant demonstration embedding (w = 0)".into()));
    }
    Ok(GoalSequence {
        goal_embeddings: frames.iter().map(|&f| emb[f].clone()).collect(),
        source_frames: frames,
        w,
        epsilon,
        active_index: 0,
    })
}

fn reward_sq(d2: f64, w: f64, eps: f64) -> bool {
    (-w * d2).exp() > eps
}

/// `1` iff `exp(−w‖φ(o) − φ(ḡ)‖²) > ε`.
pub fn reward(emb: &[f64], goal: &[f64], w: f64, epsilon: f64) -> Result<u8> {
    if !(w > 0.0) {
        return Err(EvalError::Contract(format!("w = {w} must be positive")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(EvalError::Contract(format!("ε = {epsilon} outside (0, 1)")));
    }
    Ok(reward_sq(sq_dist(emb, goal), w, epsilon) as u8)
}

/// Fraction of frames whose nearest cross-domain neighbour lies within `k`
/// frames. Among equally near neighbours the temporally closest counts.
pub fn alignment_accuracy<S: Scalar>(encoder: &EncoderModel<S>, traj: &PairedTrajectory, k: usize) -> Result<f64> {
    let frames: Vec<usize> = (0..traj.len()).collect();
    let a = rows_f64(&encoder.encode(&traj.obs_tensor::<S>(Side::A, &frames))?);
    let b = rows_f64(&encoder.encode(&traj.obs_tensor::<S>(Side::B, &frames))?);
    Ok(alignment_from_embeddings(&a, &b, k))
}

pub fn alignment_from_embeddings(a: &[Vec<f64>], b: &[Vec<f64>], k: usize) -> f64 {
    let mut hits = 0;
    for (t, ea) in a.iter().enumerate() {
        let mut best = (f64::INFINITY, usize::MAX);
        for (u, eb) in b.iter().enumerate() {
            let d = sq_dist(ea, eb);
            if d < best.0 || (d == best.0 && t.abs_diff(u) < t.abs_diff(best.1)) {
                best = (d, u);
            }
        }
        hits += (t.abs_diff(best.1) <= k) as usize;
    }
    hits as f64 / a.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1., 2., 3., 4.], &[10., 20., 30., 40.]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1., 2., 3., 4.], &[40., 30., 20., 10.]).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman(&[1., 2., 3.], &[1., 3., 2.]).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(spearman(&[1., 1., 1.], &[1., 2., 3.]), Err(EvalError::Undefined(_))));
    }

    #[test]
    fn average_ranks_for_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn w_examples() {
        let e = vec![vec![0.0], vec![1.0], vec![3.0]];
        assert!((compute_w(&e).unwrap() - 1.5).abs() < 1e-12);
        let shifted: Vec<Vec<f64>> = e.iter().map(|v| vec![v[0] + 7.0]).collect();
        assert_eq!(compute_w(&shifted).unwrap(), compute_w(&e).unwrap());
        assert_eq!(compute_w(&[vec![2.0], vec![2.0]]).unwrap(), 0.0);
        assert!(compute_w(&[vec![1.0]]).is_err());
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward(&[1.0, 2.0], &[1.0, 2.0], 0.7, 0.3).unwrap(), 1);
        assert_eq!(reward(&[1.0], &[0.0], 1.0, 0.3).unwrap(), 1);
        assert_eq!(reward(&[2.0], &[0.0], 1.0, 0.3).unwrap(), 0);
        assert!(reward(&[0.0], &[0.0], 0.0, 0.3).is_err());
    }

    #[test]
    fn goal_frames() {
        let emb: Vec<Vec<f64>> = (0..100).map(|t| vec![t as f64]).collect();
        let g = sample_goals(&emb, 10, 0.3).unwrap();
        assert_eq!(g.source_frames, vec![10, 20, 30, 40, 50, 60, 70, 80, 90, 99]);
        assert_eq!(g.len(), 10);
        let g5 = sample_goals(&emb, 5, 0.3).unwrap();
        assert_eq!(g5.len(), 20);
        let g8 = sample_goals(&emb, 8, 0.3).unwrap();
        assert_eq!(*g8.source_frames.last().unwrap(), 99);
        let flat = vec![vec![1.0]; 20];
        assert!(sample_goals(&flat, 8, 0.3).is_err());
    }

    #[test]
    fn advancement_is_monotone_and_may_skip() {
        let emb: Vec<Vec<f64>> = vec![vec![0.0], vec![0.0], vec![0.0], vec![5.0], vec![5.0], vec![9.0]];
        let mut g = GoalSequence {
            goal_embeddings: emb.clone(),
            source_frames: (0..6).collect(),
            w: 1.0,
            epsilon: 0.3,
            active_index: 0,
        };
        assert_eq!(g.advance(&[0.0]), 3);
        assert_eq!(g.advance(&[0.0]), 0);
        assert_eq!(g.advance(&[5.1]), 2);
        assert_eq!(g.active_index, 5);
    }

    #[test]
    fn reachability_monotone_curve() {
        let frames: Vec<Vec<f64>> = (0..20).map(|t| vec![t as f64 * t as f64]).collect();
        let (norm, rho) = reachability_curve(&[0.0], &frames).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
        assert_eq!(norm[0], 0.0);
        assert_eq!(*norm.last().unwrap(), 1.0);
    }

    #[test]
    fn alignment_identical_sequences() {
        let a: Vec<Vec<f64>> = (0..10).map(|t| vec![(t / 3) as f64]).collect();
        assert_eq!(alignment_from_embeddings(&a, &a, 0), 1.0);
    }
}
