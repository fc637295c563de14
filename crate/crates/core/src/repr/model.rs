//! Two-view convolutional encoder, policy head and small MLP classifiers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{NumericsError, ParamStore, Result, Scalar, Tape, Tensor, Var};

/// Architecture of the observation encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub views: usize,
    pub in_channels: usize,
    pub image_size: usize,
    /// Channel width of each [conv stride 1 → conv stride 2] stage.
    pub stage_channels: Vec<usize>,
    pub feature_dim: usize,
    pub mlp_hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            views: 2,
            in_channels: 3,
            image_size: 32,
            stage_channels: vec![8, 16, 32, 64],
            feature_dim: 64,
            mlp_hidden: vec![128, 128],
            embed_dim: 64,
        }
    }
}

impl EncoderConfig {
    /// Narrow variant for fast tests.
    pub fn tiny() -> Self {
        EncoderConfig {
            stage_channels: vec![2, 2, 4, 4],
            feature_dim: 8,
            mlp_hidden: vec![16, 16],
            embed_dim: 8,
            ..Self::default()
        }
    }

    /// Spatial side length after the conv stack.
    pub fn final_side(&self) -> usize {
        self.stage_channels
            .iter()
            .fold(self.image_size, |s, _| (s - 1) / 2 + 1)
    }

    /// Flattened per-view feature size after the conv stack.
    pub fn flat_dim(&self) -> usize {
        let side = self.final_side();
        self.stage_channels.last().copied().unwrap_or(self.in_channels) * side * side
    }

    pub fn obs_shape(&self) -> [usize; 4] {
        [self.views, self.in_channels, self.image_size, self.image_size]
    }

    pub fn obs_len(&self) -> usize {
        self.obs_shape().iter().product()
    }
}

fn uniform_tensor<S: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_f64(shape, &data).expect("shape matches")
}

/// Fully connected stack with ReLU between layers (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub dims: Vec<usize>,
    /// Index of the first weight in the owning [`ParamStore`].
    pub offset: usize,
}

impl Mlp {
    fn init<S: Scalar>(
        params: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        dims: &[usize],
    ) -> Self {
        let offset = params.len();
        for l in 0..dims.len() - 1 {
            let last = l + 2 == dims.len();
            let gain = if last { 3.0 } else { 6.0 };
            let bound = (gain / dims[l] as f64).sqrt();
            params.push(
                format!("{prefix}.{l}.weight"),
                uniform_tensor(rng, &[dims[l], dims[l + 1]], bound),
            );
            params.push(format!("{prefix}.{l}.bias"), Tensor::zeros(&[dims[l + 1]]));
        }
        Mlp {
            dims: dims.to_vec(),
            offset,
        }
    }

    fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn forward_tape<S: Scalar>(&self, tape: &mut Tape<S>, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for l in 0..self.layers() {
            h = tape.linear(h, vars[self.offset + 2 * l], vars[self.offset + 2 * l + 1])?;
            if l + 1 < self.layers() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn forward<S: Scalar>(&self, params: &ParamStore<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut h = x.clone();
        for l in 0..self.layers() {
            h = h
                .matmul(params.get(self.offset + 2 * l))?
                .add_bias(params.get(self.offset + 2 * l + 1))?;
            if l + 1 < self.layers() {
                h = h.relu();
            }
        }
        Ok(h)
    }
}

/// Encoder layout inside a parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayout {
    pub config: EncoderConfig,
    offset: usize,
    mlp: Mlp,
}

impl EncoderLayout {
    fn init<S: Scalar>(
        params: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        config: &EncoderConfig,
    ) -> Self {
        let offset = params.len();
        let mut c_prev = config.in_channels;
        for (s, &c) in config.stage_channels.iter().enumerate() {
            for (j, c_in) in [(0, c_prev), (1, c)] {
                let bound = (6.0 / (c_in * 9) as f64).sqrt();
                params.push(
                    format!("{prefix}.stage{s}.conv{j}.weight"),
                    uniform_tensor(rng, &[c, c_in, 3, 3], bound),
                );
                params.push(format!("{prefix}.stage{s}.conv{j}.bias"), Tensor::zeros(&[c]));
            }
            c_prev = c;
        }
        let flat = config.flat_dim();
        params.push(
            format!("{prefix}.view_linear.weight"),
            uniform_tensor(rng, &[flat, config.feature_dim], (3.0 / flat as f64).sqrt()),
        );
        params.push(
            format!("{prefix}.view_linear.bias"),
            Tensor::zeros(&[config.feature_dim]),
        );
        let mut dims = vec![config.feature_dim * config.views];
        dims.extend(&config.mlp_hidden);
        dims.push(config.embed_dim);
        let mlp = Mlp::init(params, rng, &format!("{prefix}.fusion"), &dims);
        EncoderLayout {
            config: config.clone(),
            offset,
            mlp,
        }
    }

    fn conv_index(&self, stage: usize, j: usize) -> usize {
        self.offset + 4 * stage + 2 * j
    }

    fn linear_index(&self) -> usize {
        self.offset + 4 * self.config.stage_channels.len()
    }

    fn check_obs<S: Scalar>(&self, obs: &Tensor<S>) -> Result<usize> {
        let want = self.config.obs_shape();
        let shape = obs.shape();
        if shape.len() == 5 && shape[1..] == want {
            Ok(shape[0])
        } else if shape.len() == 4 && shape == want {
            Ok(1)
        } else {
            Err(NumericsError::Shape {
                op: "encode",
                lhs: shape.to_vec(),
                rhs: want.to_vec(),
            })
        }
    }

    /// `N×V×C×H×W` → `(V·N)×C×H×W`, view-major so the shared conv stack sees
    /// all views as one batch.
    fn view_major<S: Scalar>(&self, obs: &Tensor<S>, n: usize) -> Tensor<S> {
        let [v, c, h, w] = self.config.obs_shape();
        let per = c * h * w;
        let src = obs.data();
        let mut out = Vec::with_capacity(src.len());
        for view in 0..v {
            for i in 0..n {
                out.extend_from_slice(&src[(i * v + view) * per..][..per]);
            }
        }
        Tensor::new(vec![v * n, c, h, w], out).expect("sizes match")
    }

    fn forward_tape<S: Scalar>(&self, tape: &mut Tape<S>, vars: &[Var], obs: &Tensor<S>) -> Result<Var> {
        let n = self.check_obs(obs)?;
        let v = self.config.views;
        let mut h = tape.leaf(self.view_major(obs, n));
        for s in 0..self.config.stage_channels.len() {
            for (j, stride) in [(0, 1), (1, 2)] {
                let k = self.conv_index(s, j);
                h = tape.conv2d(h, vars[k], vars[k + 1], stride)?;
                h = tape.relu(h);
            }
        }
        let flat = tape.reshape(h, &[v * n, self.config.flat_dim()])?;
        let li = self.linear_index();
        let feats = tape.linear(flat, vars[li], vars[li + 1])?;
        let per_view: Vec<Var> = (0..v)
            .map(|view| {
                let idx: Vec<usize> = (view * n..(view + 1) * n).collect();
                tape.select_rows(feats, &idx)
            })
            .collect::<Result<_>>()?;
        let fused = tape.concat(&per_view, 1)?;
        self.mlp.forward_tape(tape, vars, fused)
    }

    fn forward<S: Scalar>(&self, params: &ParamStore<S>, obs: &Tensor<S>) -> Result<Tensor<S>> {
        let n = self.check_obs(obs)?;
        let v = self.config.views;
        let mut h = self.view_major(obs, n);
        for s in 0..self.config.stage_channels.len() {
            for (j, stride) in [(0, 1), (1, 2)] {
                let k = self.conv_index(s, j);
                h = h.conv2d(params.get(k), params.get(k + 1), stride)?.relu();
            }
        }
        let li = self.linear_index();
        let feats = h
            .reshape(&[v * n, self.config.flat_dim()])?
            .matmul(params.get(li))?
            .add_bias(params.get(li + 1))?;
        let per_view: Vec<Tensor<S>> = (0..v)
            .map(|view| feats.select_rows(&(view * n..(view + 1) * n).collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor<S>> = per_view.iter().collect();
        self.mlp.forward(params, &Tensor::concat(&refs, 1)?)
    }
}

/// The observation encoder φ: shared per-view conv stack, per-view linear
/// projection, view concatenation and a fusion MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel<S> {
    layout: EncoderLayout,
    pub params: ParamStore<S>,
}

impl<S: Scalar> EncoderModel<S> {
    pub fn new(config: &EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layout = EncoderLayout::init(&mut params, &mut rng, "encoder", config);
        EncoderModel { layout, params }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.layout.config
    }

    pub fn embed_dim(&self) -> usize {
        self.layout.config.embed_dim
    }

    /// Place all parameters on `tape` in store order.
    pub fn attach(&self, tape: &mut Tape<S>) -> Vec<Var> {
        self.params.tensors().iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Embeddings `N×embed_dim` for a batch `N×V×C×H×W` (or a single `V×C×H×W`).
    pub fn encode_tape(&self, tape: &mut Tape<S>, vars: &[Var], obs: &Tensor<S>) -> Result<Var> {
        self.layout.forward_tape(tape, vars, obs)
    }

    /// Inference-only forward pass.
    pub fn encode(&self, obs: &Tensor<S>) -> Result<Tensor<S>> {
        self.layout.forward(&self.params, obs)
    }

    pub fn cast<T: Scalar>(&self) -> EncoderModel<T> {
        EncoderModel {
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }

    /// Rebuild from a config and an already-populated parameter store.
    pub fn from_params(config: &EncoderConfig, params: ParamStore<S>) -> Result<Self> {
        let fresh = Self::new(config, 0);
        check_same_layout(&fresh.params, &params)?;
        Ok(EncoderModel {
            layout: fresh.layout,
            params,
        })
    }
}

pub(crate) fn check_same_layout<S: Scalar>(want: &ParamStore<S>, got: &ParamStore<S>) -> Result<()> {
    if want.len() != got.len() {
        return Err(NumericsError::Contract(format!(
            "expected {} parameter tensors, found {}",
            want.len(),
            got.len()
        )));
    }
    for i in 0..want.len() {
        if want.get(i).shape() != got.get(i).shape() {
            return Err(NumericsError::Shape {
                op: "load parameter",
                lhs: want.get(i).shape().to_vec(),
                rhs: got.get(i).shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// How a policy head embeds its goal observation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoalEncoding {
    /// Goals go through the shared encoder φ.
    Shared,
    /// Goals go through a separate encoder of the same architecture.
    Separate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub action_dim: usize,
    pub goal_encoding: GoalEncoding,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: vec![64, 64],
            action_dim: 3,
            goal_encoding: GoalEncoding::Shared,
        }
    }
}

/// Goal-conditioned action regressor over `[φ(o), goal embedding]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyHead<S> {
    pub config: PolicyConfig,
    mlp: Mlp,
    goal_layout: Option<EncoderLayout>,
    pub params: ParamStore<S>,
}

impl<S: Scalar> PolicyHead<S> {
    pub fn new(config: &PolicyConfig, encoder: &EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut dims = vec![2 * encoder.embed_dim];
        dims.extend(&config.hidden);
        dims.push(config.action_dim);
        let mlp = Mlp::init(&mut params, &mut rng, "policy", &dims);
        let goal_layout = match config.goal_encoding {
            GoalEncoding::Shared => None,
            GoalEncoding::Separate => Some(EncoderLayout::init(
                &mut params,
                &mut rng,
                "goal_encoder",
                encoder,
            )),
        };
        PolicyHead {
            config: config.clone(),
            mlp,
            goal_layout,
            params,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.config.action_dim
    }

    pub fn has_goal_encoder(&self) -> bool {
        self.goal_layout.is_some()
    }

    pub fn attach(&self, tape: &mut Tape<S>) -> Vec<Var> {
        self.params.tensors().iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Encode goal observations with the separate goal encoder.
    pub fn encode_goal_tape(&self, tape: &mut Tape<S>, vars: &[Var], obs: &Tensor<S>) -> Result<Var> {
        match &self.goal_layout {
            Some(l) => l.forward_tape(tape, vars, obs),
            None => Err(NumericsError::Contract("policy head has no goal encoder".into())),
        }
    }

    pub fn encode_goal(&self, obs: &Tensor<S>) -> Result<Tensor<S>> {
        match &self.goal_layout {
            Some(l) => l.forward(&self.params, obs),
            None => Err(NumericsError::Contract("policy head has no goal encoder".into())),
        }
    }

    /// Actions `N×action_dim` from current and goal embeddings (`N×d` each).
    pub fn act_tape(&self, tape: &mut Tape<S>, vars: &[Var], current: Var, goal: Var) -> Result<Var> {
        let x = tape.concat(&[current, goal], 1)?;
        self.mlp.forward_tape(tape, vars, x)
    }

    pub fn act(&self, current: &Tensor<S>, goal: &Tensor<S>) -> Result<Tensor<S>> {
        self.mlp.forward(&self.params, &Tensor::concat(&[current, goal], 1)?)
    }

    pub fn cast<T: Scalar>(&self) -> PolicyHead<T> {
        PolicyHead {
            config: self.config.clone(),
            mlp: self.mlp.clone(),
            goal_layout: self.goal_layout.clone(),
            params: self.params.cast(),
        }
    }

    pub fn from_params(config: &PolicyConfig, encoder: &EncoderConfig, params: ParamStore<S>) -> Result<Self> {
        let fresh = Self::new(config, encoder, 0);
        check_same_layout(&fresh.params, &params)?;
        Ok(PolicyHead { params, ..fresh })
    }
}

/// Two-layer classifier over concatenated embedding pairs (temporal-distance
/// baselines).
#[derive(Clone, Debug, PartialEq)]
pub struct PairClassifier<S> {
    mlp: Mlp,
    pub params: ParamStore<S>,
}

impl<S: Scalar> PairClassifier<S> {
    pub fn new(embed_dim: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mlp = Mlp::init(&mut params, &mut rng, "classifier", &[2 * embed_dim, hidden, classes]);
        PairClassifier { mlp, params }
    }

    pub fn classes(&self) -> usize {
        *self.mlp.dims.last().expect("non-empty dims")
    }

    pub fn hidden(&self) -> usize {
        self.mlp.dims[1]
    }

    pub fn attach(&self, tape: &mut Tape<S>) -> Vec<Var> {
        self.params.tensors().iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Logits `N×classes` for embedding pairs.
    pub fn logits_tape(&self, tape: &mut Tape<S>, vars: &[Var], a: Var, b: Var) -> Result<Var> {
        let x = tape.concat(&[a, b], 1)?;
        self.mlp.forward_tape(tape, vars, x)
    }

    pub fn from_params(embed_dim: usize, hidden: usize, classes: usize, params: ParamStore<S>) -> Result<Self> {
        let fresh = Self::new(embed_dim, hidden, classes, 0);
        check_same_layout(&fresh.params, &params)?;
        Ok(PairClassifier { params, ..fresh })
    }
}
