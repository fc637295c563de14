use super::kernels::{self, ConvGeom};
use super::{shape_err, stochastic_tol, NumericsError, Result, Scalar};

/// Dense row-major tensor.
///
/// A `Tensor` is a value: it never belongs to a tape. Placing it on a
/// [`Tape`](super::Tape) copies it into a node; gradients read back from the
/// tape can be accumulated into [`Tensor::grad`].
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::Shape {
                op: "new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); numel],
            grad: None,
        }
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = v);
        t
    }

    pub fn scalar(v: S) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
            grad: None,
        }
    }

    pub fn vector(data: Vec<S>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            grad: None,
        }
    }

    /// Build a tensor from `f64` values, converting to `S`.
    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(
            shape.to_vec(),
            data.iter().map(|&v| S::from_f64_lossy(v)).collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.data.len() != 1 {
            return Err(NumericsError::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, g: &[S]) -> Result<()> {
        if g.len() != self.data.len() {
            return shape_err("accumulate_grad", &self.shape, &[g.len()]);
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.numel() {
            return shape_err("reshape", &self.shape, shape);
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
            grad: None,
        })
    }

    /// Convert every element to another scalar type.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| T::from_f64_lossy(v.as_f64()))
                .collect(),
            grad: None,
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k, n) = matmul_dims(&self.shape, &other.shape, false)?;
        let mut out = vec![S::zero(); m * n];
        S::gemm(m, k, n, &self.data, false, &other.data, false, S::zero(), &mut out);
        Self::new(vec![m, n], out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        let (m, k, n) = matmul_dims(&self.shape, &other.shape, true)?;
        let mut out = vec![S::zero(); m * n];
        S::gemm(m, k, n, &self.data, false, &other.data, true, S::zero(), &mut out);
        Self::new(vec![m, n], out)
    }

    /// 3×3 cross-correlation with bias and padding 1 (stride 1 or 2).
    pub fn conv2d(&self, kernel: &Self, bias: &Self, stride: usize) -> Result<Self> {
        let (g, out_shape) = conv_geom(&self.shape, &kernel.shape, &bias.shape, stride)?;
        let out = kernels::conv2d_forward(&g, &self.data, &kernel.data, &bias.data);
        Self::new(out_shape, out)
    }

    pub fn relu(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v.max(S::zero())).collect(),
            grad: None,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err("add", &self.shape, &other.shape);
        }
        Self::new(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(a, b)| *a + *b).collect(),
        )
    }

    /// Adds a vector along the last axis.
    pub fn add_bias(&self, bias: &Self) -> Result<Self> {
        let d = check_bias(&self.shape, &bias.shape)?;
        let mut out = self.data.clone();
        for row in out.chunks_mut(d) {
            row.iter_mut().zip(&bias.data).for_each(|(a, b)| *a += *b);
        }
        Self::new(self.shape.clone(), out)
    }

    pub fn scale(&self, s: S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v * s).collect(),
            grad: None,
        }
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let shapes: Vec<&[usize]> = parts.iter().map(|p| p.shape()).collect();
        let (out_shape, outer, widths) = concat_layout(&shapes, axis)?;
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data[o * w..(o + 1) * w]);
            }
        }
        Self::new(out_shape, out)
    }

    pub fn sum(&self) -> Self {
        Self::scalar(self.data.iter().copied().sum())
    }

    /// Σ (pred − target)².
    pub fn mse(&self, target: &Self) -> Result<Self> {
        if self.shape != target.shape {
            return shape_err("mse", &self.shape, &target.shape);
        }
        Ok(Self::scalar(
            self.data
                .iter()
                .zip(&target.data)
                .map(|(a, b)| (*a - *b) * (*a - *b))
                .sum(),
        ))
    }

    /// Soft-target softmax cross-entropy summed over rows.
    pub fn softmax_xent_soft(&self, targets: &Self) -> Result<Self> {
        let (rows, cols) = check_xent(&self.shape, targets)?;
        let (loss, _) = kernels::soft_xent(rows, cols, &self.data, &targets.data);
        Ok(Self::scalar(loss))
    }

    /// Row-wise softmax of a 2-D tensor.
    pub fn softmax_rows(&self) -> Result<Self> {
        if self.shape.len() != 2 {
            return shape_err("softmax_rows", &self.shape, &[]);
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        Self::new(self.shape.clone(), kernels::softmax_rows(r, c, &self.data))
    }

    /// Rows `idx` of a 2-D tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let cols = check_rows(&self.shape, idx)?;
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            out.extend_from_slice(&self.data[i * cols..(i + 1) * cols]);
        }
        Self::new(vec![idx.len(), cols], out)
    }
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize], trans_b: bool) -> Result<(usize, usize, usize)> {
    if a.len() != 2 || b.len() != 2 {
        return shape_err("matmul", a, b);
    }
    let (bk, bn) = if trans_b { (b[1], b[0]) } else { (b[0], b[1]) };
    if a[1] != bk {
        return shape_err("matmul", a, b);
    }
    Ok((a[0], a[1], bn))
}

pub(crate) fn conv_geom(
    input: &[usize],
    kernel: &[usize],
    bias: &[usize],
    stride: usize,
) -> Result<(ConvGeom, Vec<usize>)> {
    if !(stride == 1 || stride == 2) {
        return Err(NumericsError::Contract(format!(
            "conv2d stride must be 1 or 2, got {stride}"
        )));
    }
    let (batch, c, h, w) = match *input {
        [c, h, w] => (None, c, h, w),
        [n, c, h, w] => (Some(n), c, h, w),
        _ => return shape_err("conv2d", input, kernel),
    };
    if kernel.len() != 4 || kernel[1] != c || kernel[2] != 3 || kernel[3] != 3 || h == 0 || w == 0 {
        return shape_err("conv2d", input, kernel);
    }
    if bias != [kernel[0]] {
        return shape_err("conv2d bias", kernel, bias);
    }
    let g = ConvGeom {
        batch: batch.unwrap_or(1),
        c_in: c,
        h,
        w,
        c_out: kernel[0],
        stride,
    };
    let out = match batch {
        Some(n) => vec![n, g.c_out, g.out_h(), g.out_w()],
        None => vec![g.c_out, g.out_h(), g.out_w()],
    };
    Ok((g, out))
}

pub(crate) fn check_bias(x: &[usize], bias: &[usize]) -> Result<usize> {
    match (x.last(), bias) {
        (Some(&d), [b]) if d == *b && d > 0 => Ok(d),
        _ => shape_err("add_bias", x, bias),
    }
}

pub(crate) fn check_rows(x: &[usize], idx: &[usize]) -> Result<usize> {
    if x.len() != 2 {
        return shape_err("select_rows", x, &[idx.len()]);
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= x[0]) {
        return Err(NumericsError::Contract(format!(
            "row index {bad} out of range for shape {x:?}"
        )));
    }
    Ok(x[1])
}

/// Output shape, number of outer blocks, and per-part contiguous block widths.
pub(crate) fn concat_layout(
    shapes: &[&[usize]],
    axis: usize,
) -> Result<(Vec<usize>, usize, Vec<usize>)> {
    let first = match shapes.first() {
        Some(s) => *s,
        None => return Err(NumericsError::Contract("concat of zero tensors".into())),
    };
    if axis >= first.len() {
        return shape_err("concat", first, &[axis]);
    }
    let mut out = first.to_vec();
    out[axis] = 0;
    for s in shapes {
        let compatible = s.len() == first.len()
            && s.iter()
                .zip(first)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return shape_err("concat", first, s);
        }
        out[axis] += s[axis];
    }
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let widths = shapes.iter().map(|s| s[axis] * inner).collect();
    Ok((out, outer, widths))
}

pub(crate) fn check_xent<S: Scalar>(logits: &[usize], targets: &Tensor<S>) -> Result<(usize, usize)> {
    if logits.len() != 2 || logits != targets.shape() {
        return shape_err("softmax_xent_soft", logits, targets.shape());
    }
    let (rows, cols) = (logits[0], logits[1]);
    let tol = stochastic_tol::<S>();
    for (r, row) in targets.data().chunks(cols.max(1)).enumerate().take(rows) {
        let s: f64 = row.iter().map(|v| v.as_f64()).sum();
        if (s - 1.0).abs() > tol || row.iter().any(|v| *v < S::zero()) {
            return Err(NumericsError::Validation(format!(
                "target row {r} is not a distribution (sum {s})"
            )));
        }
    }
    Ok((rows, cols))
}

/// Named, ordered collection of parameter tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<S>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor<S> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<S> {
        &mut self.tensors[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Append every parameter of `other`, prefixing names.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamStore<S>) {
        for (n, t) in other.names.iter().zip(&other.tensors) {
            self.push(format!("{prefix}{n}"), t.clone());
        }
    }
}
