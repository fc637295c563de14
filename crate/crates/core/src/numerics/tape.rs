use super::kernels::{self, ConvGeom};
use super::tensor::{check_bias, check_rows, check_xent, concat_layout, conv_geom, matmul_dims};
use super::{NumericsError, Result, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    Param,
    MatMul { a: Var, b: Var, trans_b: bool },
    Conv { x: Var, k: Var, b: Var, g: ConvGeom },
    Relu { x: Var },
    Add { a: Var, b: Var },
    AddBias { x: Var, b: Var },
    Scale { x: Var, s: S },
    Concat { parts: Vec<Var>, outer: usize, widths: Vec<usize> },
    Reshape { x: Var },
    SelectRows { x: Var, idx: Vec<usize> },
    Sum { x: Var },
    Mse { a: Var, b: Var },
    SoftXent { logits: Var, targets: Vec<S>, probs: Vec<S>, cols: usize },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Reverse-mode gradient tape. One tape per forward pass; single-threaded.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    param_grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        let mut value = value;
        value.zero_grad();
        self.nodes.push(Node { value, op });
        self.param_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// A constant input; receives no gradient.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A trainable input; `backward` accumulates its gradient.
    pub fn param(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Param)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[S] {
        self.nodes[v.0].value.data()
    }

    /// Gradient accumulated so far for a parameter node.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.param_grads[v.0].as_deref()
    }

    /// Gradient of a parameter, or zeros when the loss did not depend on it.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<S> {
        self.grad(v)
            .map(<[S]>::to_vec)
            .unwrap_or_else(|| vec![S::zero(); self.nodes[v.0].value.numel()])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul { a, b, trans_b: false }))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(out, Op::MatMul { a, b, trans_b: true }))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize) -> Result<Var> {
        let (g, out_shape) = conv_geom(self.shape(x), self.shape(k), self.shape(b), stride)?;
        let out = kernels::conv2d_forward(&g, self.data(x), self.data(k), self.data(b));
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::Conv { x, k, b, g }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).relu();
        self.push(out, Op::Relu { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let out = self.value(x).add_bias(self.value(b))?;
        Ok(self.push(out, Op::AddBias { x, b }))
    }

    /// `x · w + b` with `w` shaped `in×out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    pub fn scale(&mut self, x: Var, s: S) -> Var {
        let out = self.value(x).scale(s);
        self.push(out, Op::Scale { x, s })
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let shapes: Vec<&[usize]> = parts.iter().map(|&p| self.shape(p)).collect();
        let (_, outer, widths) = concat_layout(&shapes, axis)?;
        let refs: Vec<&Tensor<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat(&refs, axis)?;
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                widths,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape { x }))
    }

    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        check_rows(self.shape(x), idx)?;
        let out = self.value(x).select_rows(idx)?;
        Ok(self.push(
            out,
            Op::SelectRows {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = self.value(x).sum();
        self.push(out, Op::Sum { x })
    }

    /// Σ (a − b)²; both sides receive gradients.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mse(self.value(b))?;
        Ok(self.push(out, Op::Mse { a, b }))
    }

    /// Soft-target softmax cross-entropy, summed over rows.
    pub fn softmax_xent_soft(&mut self, logits: Var, targets: &Tensor<S>) -> Result<Var> {
        let (rows, cols) = check_xent(self.shape(logits), targets)?;
        let (loss, probs) = kernels::soft_xent(rows, cols, self.data(logits), targets.data());
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftXent {
                logits,
                targets: targets.data().to_vec(),
                probs,
                cols,
            },
        ))
    }

    /// Reverse pass from a scalar loss. Parameter gradients accumulate across
    /// repeated calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<S>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param => match &mut self.param_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    slot => *slot = Some(g),
                },
                Op::MatMul { a, b, trans_b } => {
                    let (m, k, n) = matmul_dims(self.shape(*a), self.shape(*b), *trans_b)?;
                    // dA = G · B'ᵀ where B' is the logical k×n right operand
                    let mut da = vec![S::zero(); m * k];
                    S::gemm(m, n, k, &g, false, self.data(*b), !*trans_b, S::zero(), &mut da);
                    // dB' = Aᵀ · G  (k×n); stored n×k when transposed
                    let mut db = if *trans_b {
                        let mut d = vec![S::zero(); n * k];
                        S::gemm(n, m, k, &g, true, self.data(*a), false, S::zero(), &mut d);
                        d
                    } else {
                        let mut d = vec![S::zero(); k * n];
                        S::gemm(k, m, n, self.data(*a), true, &g, false, S::zero(), &mut d);
                        d
                    };
                    let (a, b) = (*a, *b);
                    accumulate(&mut adj, a, da);
                    accumulate(&mut adj, b, std::mem::take(&mut db));
                }
                Op::Conv { x, k, b, g: geom } => {
                    let (dx, dk, db) =
                        kernels::conv2d_backward(geom, self.data(*x), self.data(*k), &g);
                    let (x, k, b) = (*x, *k, *b);
                    accumulate(&mut adj, x, dx);
                    accumulate(&mut adj, k, dk);
                    accumulate(&mut adj, b, db);
                }
                Op::Relu { x } => {
                    let out = node.value.data();
                    let dx = g
                        .iter()
                        .zip(out)
                        .map(|(&gi, &o)| if o > S::zero() { gi } else { S::zero() })
                        .collect();
                    let x = *x;
                    accumulate(&mut adj, x, dx);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut adj, a, g.clone());
                    accumulate(&mut adj, b, g);
                }
                Op::AddBias { x, b } => {
                    let d = check_bias(self.shape(*x), self.shape(*b))?;
                    let mut db = vec![S::zero(); d];
                    for row in g.chunks(d) {
                        db.iter_mut().zip(row).for_each(|(a, r)| *a += *r);
                    }
                    let (x, b) = (*x, *b);
                    accumulate(&mut adj, x, g);
                    accumulate(&mut adj, b, db);
                }
                Op::Scale { x, s } => {
                    let s = *s;
                    let x = *x;
                    accumulate(&mut adj, x, g.iter().map(|&v| v * s).collect());
                }
                Op::Concat { parts, outer, widths } => {
                    let total: usize = widths.iter().sum();
                    let mut grads: Vec<Vec<S>> =
                        widths.iter().map(|w| Vec::with_capacity(w * outer)).collect();
                    for o in 0..*outer {
                        let mut off = o * total;
                        for (gp, &w) in grads.iter_mut().zip(widths) {
                            gp.extend_from_slice(&g[off..off + w]);
                            off += w;
                        }
                    }
                    let parts = parts.clone();
                    for (p, gp) in parts.into_iter().zip(grads) {
                        accumulate(&mut adj, p, gp);
                    }
                }
                Op::Reshape { x } => {
                    let x = *x;
                    accumulate(&mut adj, x, g);
                }
                Op::SelectRows { x, idx } => {
                    let shape = self.shape(*x);
                    let cols = shape[1];
                    let mut dx = vec![S::zero(); shape[0] * cols];
                    for (r, &i) in idx.iter().enumerate() {
                        dx[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .zip(&g[r * cols..(r + 1) * cols])
                            .for_each(|(a, b)| *a += *b);
                    }
                    let x = *x;
                    accumulate(&mut adj, x, dx);
                }
                Op::Sum { x } => {
                    let n = self.value(*x).numel();
                    let x = *x;
                    accumulate(&mut adj, x, vec![g[0]; n]);
                }
                Op::Mse { a, b } => {
                    let two = S::one() + S::one();
                    let da: Vec<S> = self
                        .data(*a)
                        .iter()
                        .zip(self.data(*b))
                        .map(|(&p, &t)| two * (p - t) * g[0])
                        .collect();
                    let db = da.iter().map(|&v| -v).collect();
                    let (a, b) = (*a, *b);
                    accumulate(&mut adj, a, da);
                    accumulate(&mut adj, b, db);
                }
                Op::SoftXent {
                    logits,
                    targets,
                    probs,
                    cols,
                } => {
                    let mut dl = vec![S::zero(); probs.len()];
                    for (r, (prow, trow)) in probs.chunks(*cols).zip(targets.chunks(*cols)).enumerate() {
                        let mass: S = trow.iter().copied().sum();
                        for k in 0..*cols {
                            dl[r * cols + k] = (prow[k] * mass - trow[k]) * g[0];
                        }
                    }
                    let logits = *logits;
                    accumulate(&mut adj, logits, dl);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(adj: &mut [Option<Vec<S>>], v: Var, g: Vec<S>) {
    match &mut adj[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
        slot => *slot = Some(g),
    }
}
