//! Training objectives over embedding matrices.
//!
//! Contrastive losses take row-aligned embeddings `X` (domain A) and `X̄`
//! (domain B). Rows of `X̄` beyond the aligned block act as extra negatives:
//! they enter every softmax denominator with zero target mass.

use serde::{Deserialize, Serialize};

use crate::numerics::{NumericsError, Result, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Tcn,
    Tscn,
    Gcp,
    Cdgcp,
    Mir,
    Tdc,
    Cmc,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::Tcn,
        LossKind::Tscn,
        LossKind::Gcp,
        LossKind::Cdgcp,
        LossKind::Mir,
        LossKind::Tdc,
        LossKind::Cmc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Tcn => "tcn",
            LossKind::Tscn => "tscn",
            LossKind::Gcp => "gcp",
            LossKind::Cdgcp => "cdgcp",
            LossKind::Mir => "mir",
            LossKind::Tdc => "tdc",
            LossKind::Cmc => "cmc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn has_policy(self) -> bool {
        matches!(self, LossKind::Gcp | LossKind::Cdgcp | LossKind::Mir)
    }

    pub fn has_classifier(self) -> bool {
        matches!(self, LossKind::Tdc | LossKind::Cmc)
    }
}

/// `p_ik = exp(−|i−k|) / Σ_u exp(−|i−u|)`.
pub fn smoothing_distribution<S: Scalar>(n: usize) -> Tensor<S> {
    let mut d = vec![S::zero(); n * n];
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|k| (-(i.abs_diff(k) as f64)).exp()).collect();
        let z: f64 = row.iter().sum();
        for k in 0..n {
            d[i * n + k] = S::from_f64_lossy(row[k] / z);
        }
    }
    Tensor::new(vec![n, n], d).expect("square")
}

pub fn identity<S: Scalar>(n: usize) -> Tensor<S> {
    let mut d = vec![S::zero(); n * n];
    for i in 0..n {
        d[i * n + i] = S::one();
    }
    Tensor::new(vec![n, n], d).expect("square")
}

/// `blocks` copies of the `n×n` matrix `p` on the diagonal of a
/// `(blocks·n)×(blocks·n)` target, zero elsewhere.
pub fn block_targets<S: Scalar>(p: &Tensor<S>, blocks: usize) -> Tensor<S> {
    let n = p.shape()[0];
    let m = n * blocks;
    let mut d = vec![S::zero(); m * m];
    for b in 0..blocks {
        for i in 0..n {
            for k in 0..n {
                d[(b * n + i) * m + b * n + k] = p.data()[i * n + k];
            }
        }
    }
    Tensor::new(vec![m, m], d).expect("square")
}

/// Pads `n×n` targets with zero columns for `extra` negatives.
fn pad_targets<S: Scalar>(p: &Tensor<S>, extra: usize) -> Tensor<S> {
    if extra == 0 {
        return p.clone();
    }
    let n = p.shape()[0];
    let cols = n + extra;
    let mut d = vec![S::zero(); n * cols];
    for i in 0..n {
        d[i * cols..i * cols + n].copy_from_slice(&p.data()[i * n..(i + 1) * n]);
    }
    Tensor::new(vec![n, cols], d).expect("padded")
}

fn rows(tape: &Tape<impl Scalar>, v: Var) -> usize {
    tape.value(v).shape()[0]
}

/// Soft-target contrastive loss with similarities `x·[x̄; extra]ᵀ`.
pub fn contrastive<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    xbar: Var,
    extra: Option<Var>,
    targets: &Tensor<S>,
) -> Result<Var> {
    let n = rows(tape, x);
    if rows(tape, xbar) != n || targets.shape() != [n, n] {
        return Err(NumericsError::Contract(format!(
            "contrastive loss needs {n} aligned rows, got x̄ {} and targets {:?}",
            rows(tape, xbar),
            targets.shape()
        )));
    }
    let (keys, n_extra) = match extra {
        Some(e) => {
            let ne = rows(tape, e);
            (tape.concat(&[xbar, e], 0)?, ne)
        }
        None => (xbar, 0),
    };
    let logits = tape.matmul_t(x, keys)?;
    tape.softmax_xent_soft(logits, &pad_targets(targets, n_extra))
}

/// `−Σ_i log exp(x_iᵀx̄_i) / Σ_j exp(x_iᵀx̄_j)`.
pub fn loss_tcn<S: Scalar>(tape: &mut Tape<S>, x: Var, xbar: Var, extra: Option<Var>) -> Result<Var> {
    let n = rows(tape, x);
    contrastive(tape, x, xbar, extra, &identity(n))
}

/// Cross-entropy against the temporally smoothed targets.
pub fn loss_tscn<S: Scalar>(tape: &mut Tape<S>, x: Var, xbar: Var, extra: Option<Var>) -> Result<Var> {
    let n = rows(tape, x);
    contrastive(tape, x, xbar, extra, &smoothing_distribution(n))
}

/// Batched form: `blocks` windows of `n` rows each; frames of the other
/// windows are the extra negatives of every row.
pub fn loss_contrastive_batched<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    xbar: Var,
    window: usize,
    smooth: bool,
) -> Result<Var> {
    let m = rows(tape, x);
    if window == 0 || m % window != 0 {
        return Err(NumericsError::Contract(format!("{m} rows are not whole windows of {window}")));
    }
    let p = if smooth { smoothing_distribution(window) } else { identity(window) };
    contrastive(tape, x, xbar, None, &block_targets(&p, m / window))
}

/// Entropy bound `Σ_i H(P[i,·])` of any soft-target cross-entropy.
pub fn entropy_bound<S: Scalar>(p: &Tensor<S>) -> f64 {
    p.data()
        .iter()
        .map(|v| v.as_f64())
        .filter(|&v| v > 0.0)
        .map(|v| -v * v.ln())
        .sum()
}

/// `‖π(o_i, g) − a_i‖²` summed over rows, given the predicted actions.
pub fn loss_gcp<S: Scalar>(
    tape: &mut Tape<S>,
    predicted: Var,
    actions: &Tensor<S>,
    offsets: &[usize],
    horizon: usize,
) -> Result<Var> {
    if let Some(&j) = offsets.iter().find(|&&j| j == 0 || j > horizon) {
        return Err(NumericsError::Contract(format!("goal offset {j} outside [1, {horizon}]")));
    }
    let a = tape.leaf(actions.clone());
    tape.mse(predicted, a)
}

/// Same regression with goals drawn from the other rendering. Current and
/// goal frames must come from paired domains.
pub fn loss_cdgcp<S: Scalar>(
    tape: &mut Tape<S>,
    predicted: Var,
    actions: &Tensor<S>,
    offsets: &[usize],
    horizon: usize,
    paired: bool,
) -> Result<Var> {
    if !paired {
        return Err(NumericsError::Contract("cross-domain goals need paired renderings".into()));
    }
    loss_gcp(tape, predicted, actions, offsets, horizon)
}

/// `tscn + λ·cdgcp`.
pub fn loss_mir<S: Scalar>(tape: &mut Tape<S>, tscn: Var, cdgcp: Var, lambda: f64) -> Result<Var> {
    if lambda == 0.0 {
        return Ok(tscn);
    }
    let w = tape.scale(cdgcp, S::from_f64_lossy(lambda));
    tape.add(tscn, w)
}

/// Distance intervals of the temporal-distance classifier; the last upper
/// edge follows the episode length. The cross-domain variant prepends `{0}`.
pub fn distance_bins(episode_len: usize, cross: bool) -> Vec<(usize, usize)> {
    let mut b = vec![(1, 1), (2, 2), (3, 4), (5, 20), (21, episode_len.saturating_sub(1).max(21))];
    if cross {
        b.insert(0, (0, 0));
    }
    b
}

pub fn distance_class(d: usize, episode_len: usize, cross: bool) -> Result<usize> {
    if d == 0 && !cross {
        return Err(NumericsError::Contract("same-domain distance classes exclude 0".into()));
    }
    distance_bins(episode_len, cross)
        .iter()
        .position(|&(lo, hi)| (lo..=hi).contains(&d))
        .ok_or_else(|| NumericsError::Contract(format!("distance {d} beyond episode length {episode_len}")))
}

/// Softmax cross-entropy of `N×C` logits against class labels, summed.
pub fn loss_classes<S: Scalar>(tape: &mut Tape<S>, logits: Var, labels: &[usize]) -> Result<Var> {
    let c = tape.value(logits).shape()[1];
    let mut t = vec![S::zero(); labels.len() * c];
    for (i, &l) in labels.iter().enumerate() {
        if l >= c {
            return Err(NumericsError::Contract(format!("label {l} with {c} classes")));
        }
        t[i * c + l] = S::one();
    }
    tape.softmax_xent_soft(logits, &Tensor::new(vec![labels.len(), c], t)?)
}

/// `loss_classes` for pairs; `cross` requires the pair to span two domains.
pub fn loss_distance<S: Scalar>(
    tape: &mut Tape<S>,
    logits: Var,
    distances: &[usize],
    episode_len: usize,
    cross: bool,
    cross_domain_pairs: bool,
) -> Result<Var> {
    if cross != cross_domain_pairs {
        return Err(NumericsError::Contract(if cross {
            "cross-modal classification needs pairs from two domains".into()
        } else {
            "distance classification works within one domain".into()
        }));
    }
    let labels = distances
        .iter()
        .map(|&d| distance_class(d, episode_len, cross))
        .collect::<Result<Vec<_>>>()?;
    loss_classes(tape, logits, &labels)
}
