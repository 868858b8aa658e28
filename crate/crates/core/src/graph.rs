//! Reverse-mode differentiation over a tape of kernel invocations.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s together with
//! the activations its backward pass needs. [`Graph::backward`] walks the
//! tape once in reverse and returns the gradient of a scalar with respect to
//! every leaf that requires one.

use crate::error::{Error, Result};
use crate::ops;
use crate::spatial_transformer::sampling;
use crate::tensor::{Element, Tensor};

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize },
    Linear { input: Var, weight: Var, bias: Option<Var> },
    Relu(Var),
    Tanh(Var),
    Scale(Var, F),
    AddScalar(Var),
    GlobalAvgPool(Var),
    ChannelMean(Var),
    MaxPool { input: Var, argmax: Vec<usize> },
    GroupMax { input: Var, argmax: Vec<usize> },
    BroadcastMul(Var, Var),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    Reshape(Var),
    SumAll(Var),
    WeightedSum(Vec<(Var, F)>),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor<F> },
    AffineGrid(Var),
    BilinearSample { input: Var, grid: Var },
    RegionTheta { translations: Var, regions: usize },
    RepeatItems { input: Var, times: usize },
    ForwardOnly { name: String },
}

impl<F> Op<F> {
    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Linear { .. } => "linear",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::ChannelMean(_) => "channel_mean",
            Op::MaxPool { .. } => "max_pool",
            Op::GroupMax { .. } => "group_max",
            Op::BroadcastMul(..) => "broadcast_mul",
            Op::Concat(_) => "concat_channels",
            Op::Slice { .. } => "slice_channels",
            Op::Reshape(_) => "reshape",
            Op::SumAll(_) => "sum",
            Op::WeightedSum(_) => "weighted_sum",
            Op::CrossEntropy { .. } => "softmax_cross_entropy",
            Op::AffineGrid(_) => "affine_grid",
            Op::BilinearSample { .. } => "bilinear_sample",
            Op::RegionTheta { .. } => "region_theta",
            Op::RepeatItems { .. } => "repeat_items",
            Op::ForwardOnly { name } => name,
        }
    }
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Tape of recorded operations.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    backward_done: bool,
}

impl<F: Element> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by leaf [`Var`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Element> Gradients<F> {
    pub fn get(&self, var: Var) -> Option<&Tensor<F>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<F: Element> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &Tensor<F> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn op_name(&self, var: Var) -> &str {
        self.nodes[var.0].op.name()
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let value = ops::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.needs(&deps);
        Ok(self.push(value, Op::Conv2d { input, weight, bias, stride, pad }, rg))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let value = ops::linear(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.needs(&deps);
        Ok(self.push(value, Op::Linear { input, weight, bias }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = ops::relu(self.value(x));
        let rg = self.needs(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = ops::tanh(self.value(x));
        let rg = self.needs(&[x]);
        self.push(value, Op::Tanh(x), rg)
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, x: Var, factor: F) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.needs(&[x]);
        self.push(value, Op::Scale(x, factor), rg)
    }

    /// Adds a constant to every element.
    pub fn add_scalar(&mut self, x: Var, c: F) -> Var {
        let value = self.value(x).map(|v| v + c);
        let rg = self.needs(&[x]);
        self.push(value, Op::AddScalar(x), rg)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let value = ops::global_avg_pool(self.value(x))?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::GlobalAvgPool(x), rg))
    }

    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let value = ops::channel_mean(self.value(x))?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::ChannelMean(x), rg))
    }

    pub fn max_pool(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let out = ops::max_pool(self.value(x), kernel, stride, pad)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out.output, Op::MaxPool { input: x, argmax: out.argmax }, rg))
    }

    /// Elementwise max over consecutive groups of `groups` rows.
    pub fn group_max(&mut self, x: Var, groups: usize) -> Result<Var> {
        let out = ops::group_max(self.value(x), groups)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out.output, Op::GroupMax { input: x, argmax: out.argmax }, rg))
    }

    pub fn broadcast_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::broadcast_mul(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::BroadcastMul(a, b), rg))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<F>> = xs.iter().map(|&v| self.value(v)).collect();
        let value = ops::concat_channels(&values)?;
        let rg = self.needs(xs);
        Ok(self.push(value, Op::Concat(xs.to_vec()), rg))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = ops::slice_channels(self.value(x), start, len)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Slice { input: x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Collapses every axis after the first: `[n, ...] -> [n, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let n = shape[0];
        let rest = shape[1..].iter().product::<usize>().max(1);
        self.reshape(x, [n, rest])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(&[x]);
        self.push(value, Op::SumAll(x), rg)
    }

    /// `sum_i coeff_i * x_i` over equally shaped terms, accumulated left to right.
    pub fn weighted_sum(&mut self, terms: &[(Var, F)]) -> Result<Var> {
        let (first, _) = *terms.first().ok_or(Error::Empty { op: "weighted_sum" })?;
        let shape = self.shape(first).to_vec();
        let mut acc = Tensor::zeros(shape.clone());
        for (i, &(v, c)) in terms.iter().enumerate() {
            let t = self.value(v);
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch { op: "weighted_sum", lhs: shape, rhs: t.shape().to_vec() });
            }
            for (a, &b) in acc.data_mut().iter_mut().zip(t.data()) {
                *a = if i == 0 { c * b } else { *a + c * b };
            }
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.needs(&vars);
        Ok(self.push(acc, Op::WeightedSum(terms.to_vec()), rg))
    }

    /// Mean softmax cross-entropy of `logits: [n, K]` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ce = ops::softmax_cross_entropy(self.value(logits), labels)?;
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(ce.loss),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs: ce.probs },
            rg,
        ))
    }

    /// Sampling grid from theta rows `(s_h, s_w, t_x, t_y)`.
    pub fn affine_grid(&mut self, theta: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let value = sampling::affine_grid(self.value(theta), out_h, out_w)?;
        let rg = self.needs(&[theta]);
        Ok(self.push(value, Op::AffineGrid(theta), rg))
    }

    pub fn bilinear_sample(&mut self, input: Var, grid: Var) -> Result<Var> {
        let value = sampling::bilinear_sample(self.value(input), self.value(grid))?;
        let rg = self.needs(&[input, grid]);
        Ok(self.push(value, Op::BilinearSample { input, grid }, rg))
    }

    /// Expands per-item translations `[n, 2T]` into theta rows `[n * T, 4]` with fixed scales.
    pub fn region_theta(&mut self, translations: Var, regions: usize, scale_h: F, scale_w: F) -> Result<Var> {
        let [n, k] = self.value(translations).dims2("region_theta")?;
        if regions == 0 || k != 2 * regions {
            return Err(Error::Axis { op: "region_theta", axis: 1, expected: 2 * regions, got: k });
        }
        let t = self.value(translations).data();
        let mut rows = Vec::with_capacity(n * regions * sampling::THETA_LEN);
        for pair in t.chunks(2) {
            rows.extend([scale_h, scale_w, pair[0], pair[1]]);
        }
        let value = Tensor::new([n * regions, sampling::THETA_LEN], rows)?;
        let rg = self.needs(&[translations]);
        Ok(self.push(value, Op::RegionTheta { translations, regions }, rg))
    }

    /// Repeats every batch item `times` times consecutively: `[n, ...] -> [n * times, ...]`.
    pub fn repeat_items(&mut self, x: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::Argument("repeat_items needs times >= 1".into()));
        }
        let t = self.value(x);
        let n = t.shape()[0];
        let item: usize = t.shape()[1..].iter().product();
        let mut data = Vec::with_capacity(t.len() * times);
        for chunk in t.data().chunks(item) {
            for _ in 0..times {
                data.extend_from_slice(chunk);
            }
        }
        let mut shape = t.shape().to_vec();
        shape[0] = n * times;
        let value = Tensor::new(shape, data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::RepeatItems { input: x, times }, rg))
    }

    /// Applies `f` without recording a backward pass.
    ///
    /// Differentiating through the result fails with [`Error::NoBackward`].
    pub fn forward_only(&mut self, name: &str, x: Var, f: impl FnOnce(&Tensor<F>) -> Tensor<F>) -> Var {
        let value = f(self.value(x));
        let rg = self.needs(&[x]);
        self.push(value, Op::ForwardOnly { name: name.to_string() }, rg)
    }

    /// Gradients of the single-element `loss` with respect to all leaves that require them.
    ///
    /// May be called once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<F>> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let loss_shape = self.shape(loss).to_vec();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss { shape: loss_shape });
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(loss_shape));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads)?;
        }
        // keep only leaf gradients
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) -> Result<()> {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor<F>| -> Result<()> {
            if !nodes[v.0].requires_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => {
                    *slot = Some(t);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d { input, weight, bias, stride, pad } => {
                let want = [wants(input), wants(weight), bias.is_some_and(wants)];
                let cg = ops::conv2d_backward(val(input), val(weight), g, stride, pad, want)?;
                if let Some(t) = cg.input {
                    acc(input, t)?;
                }
                if let Some(t) = cg.weight {
                    acc(weight, t)?;
                }
                if let (Some(b), Some(t)) = (bias, cg.bias) {
                    acc(b, t)?;
                }
            }
            &Op::Linear { input, weight, bias } => {
                let lg = ops::linear_backward(val(input), val(weight), g);
                acc(input, lg.input)?;
                acc(weight, lg.weight)?;
                if let Some(b) = bias {
                    acc(b, lg.bias)?;
                }
            }
            &Op::Relu(x) => acc(x, ops::relu_backward(val(x), g))?,
            &Op::Tanh(x) => acc(x, ops::tanh_backward(&node.value, g))?,
            &Op::Scale(x, factor) => acc(x, g.map(|v| v * factor))?,
            &Op::AddScalar(x) => acc(x, g.clone())?,
            &Op::GlobalAvgPool(x) => acc(x, ops::global_avg_pool_backward(val(x).shape(), g))?,
            &Op::ChannelMean(x) => acc(x, ops::channel_mean_backward(val(x).shape(), g))?,
            Op::MaxPool { input, argmax } | Op::GroupMax { input, argmax } => {
                acc(*input, ops::max_pool_backward(val(*input).shape(), argmax, g))?
            }
            &Op::BroadcastMul(a, b) => {
                let (ga, gb) = ops::broadcast_mul_backward(val(a), val(b), g);
                acc(a, ga)?;
                acc(b, gb)?;
            }
            Op::Concat(xs) => {
                let mut start = 0;
                for &x in xs {
                    let len = val(x).shape()[1];
                    if wants(x) {
                        acc(x, ops::slice_channels(g, start, len)?)?;
                    }
                    start += len;
                }
            }
            &Op::Slice { input, start } => {
                let full = val(input);
                let (n, c) = (full.shape()[0], full.shape()[1]);
                let inner: usize = full.shape()[2..].iter().product();
                let len = g.shape()[1];
                let mut gi = Tensor::zeros_like(full);
                for item in 0..n {
                    let dst = (item * c + start) * inner;
                    let src = item * len * inner;
                    gi.data_mut()[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                acc(input, gi)?;
            }
            &Op::Reshape(x) => acc(x, g.reshape(val(x).shape())?)?,
            &Op::SumAll(x) => acc(x, Tensor::full(val(x).shape(), g.item()))?,
            Op::WeightedSum(terms) => {
                for &(x, c) in terms {
                    acc(x, g.map(|v| v * c))?;
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                acc(*logits, ops::softmax_cross_entropy_backward(probs, labels, g.item()))?
            }
            &Op::AffineGrid(theta) => acc(theta, sampling::affine_grid_backward(g))?,
            &Op::BilinearSample { input, grid } => {
                let (gx, gg) = sampling::bilinear_sample_backward(val(input), val(grid), g)?;
                acc(input, gx)?;
                acc(grid, gg)?;
            }
            &Op::RegionTheta { translations, regions } => {
                let n = val(translations).shape()[0];
                let mut gt = Vec::with_capacity(n * 2 * regions);
                for row in g.data().chunks(sampling::THETA_LEN) {
                    gt.extend([row[2], row[3]]);
                }
                acc(translations, Tensor::new([n, 2 * regions], gt)?)?;
            }
            &Op::RepeatItems { input, times } => {
                let item: usize = val(input).shape()[1..].iter().product();
                let mut gi = Tensor::zeros_like(val(input));
                for (i, dst) in gi.data_mut().chunks_mut(item).enumerate() {
                    for r in 0..times {
                        let src = &g.data()[(i * times + r) * item..(i * times + r + 1) * item];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                acc(input, gi)?;
            }
            Op::ForwardOnly { name } => return Err(Error::NoBackward { op: name.clone() }),
        }
        Ok(())
    }
}
