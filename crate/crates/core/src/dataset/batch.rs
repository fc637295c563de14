// Mini-batch index sampling. Batches hold indices only; frames are decoded
// by the trainer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, Result, Side};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    /// Sequences per batch (B).
    pub batch: usize,
    /// Aligned frames per sequence (n).
    pub window: usize,
    /// Largest goal offset for goal-conditioned losses (N).
    pub gcp_horizon: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            batch: 2,
            window: 50,
            gcp_horizon: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowDraw {
    pub traj: usize,
    pub start: usize,
}

/// Goal-conditioned sample inside window `seq`: current frame `anchor`,
/// goal frame `anchor + offset`, both relative to the window start.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GoalDraw {
    pub seq: usize,
    pub anchor: usize,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub window: usize,
    pub windows: Vec<WindowDraw>,
    pub goals: Vec<GoalDraw>,
}

impl Batch {
    pub fn frames(&self, seq: usize) -> Vec<usize> {
        let s = self.windows[seq].start;
        (s..s + self.window).collect()
    }
}

/// Draws `B` (sequence, start) windows from `pool` and, per window, one goal
/// offset `j ~ U[1, N]` for every anchor whose goal stays inside the window.
pub fn sample_batch(ds: &Dataset, pool: &[usize], cfg: &BatchConfig, seed: u64) -> Result<Batch> {
    if cfg.batch == 0 || cfg.window == 0 || pool.is_empty() {
        return Err(DatasetError::Contract("batch, window and pool must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.window;
    let mut windows = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let traj = pool[rng.gen_range(0..pool.len())];
        let t = ds.trajectories[traj].len();
        if n > t {
            return Err(DatasetError::Contract(format!("window {n} exceeds trajectory length {t}")));
        }
        windows.push(WindowDraw {
            traj,
            start: rng.gen_range(0..=t - n),
        });
    }
    let mut goals = Vec::new();
    let horizon = cfg.gcp_horizon.min(n.saturating_sub(1));
    if horizon >= 1 {
        for seq in 0..cfg.batch {
            for anchor in 0..n - horizon {
                goals.push(GoalDraw {
                    seq,
                    anchor,
                    offset: rng.gen_range(1..=horizon),
                });
            }
        }
    }
    Ok(Batch {
        window: n,
        windows,
        goals,
    })
}

/// Two frames of one trajectory separated by `t1 − t0`, labelled with the
/// distance class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairDraw {
    pub traj: usize,
    pub t0: usize,
    pub t1: usize,
    pub side0: Side,
    pub side1: Side,
    pub class: usize,
}

/// `q` pairs with the class drawn uniformly, then the distance uniformly
/// within the class interval. `cross` puts the second frame in the other
/// rendering of the pair.
pub fn sample_distance_pairs(
    ds: &Dataset,
    pool: &[usize],
    bins: &[(usize, usize)],
    q: usize,
    cross: bool,
    seed: u64,
) -> Result<Vec<PairDraw>> {
    if pool.is_empty() || bins.is_empty() {
        return Err(DatasetError::Contract("empty pool or bins".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(q);
    for _ in 0..q {
        let traj = pool[rng.gen_range(0..pool.len())];
        let t = ds.trajectories[traj].len();
        let class = rng.gen_range(0..bins.len());
        let (lo, hi) = bins[class];
        let hi = hi.min(t - 1);
        if lo > hi {
            return Err(DatasetError::Contract(format!("bin [{lo}, {hi}] empty for length {t}")));
        }
        let d = rng.gen_range(lo..=hi);
        let t0 = rng.gen_range(0..t - d);
        let side0 = if rng.gen_bool(0.5) { Side::A } else { Side::B };
        let side1 = if cross { side0.other() } else { side0 };
        out.push(PairDraw {
            traj,
            t0,
            t1: t0 + d,
            side0,
            side1,
            class,
        });
    }
    Ok(out)
}
