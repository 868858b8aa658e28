use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::{Bound, ParamId, ParamStore};
use crate::tensor::{Element, Tensor};

/// Convolution with bias; weights uniform in `±1/sqrt(fan_in)`, bias zero.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new<F: Element>(
        store: &mut ParamStore<F>,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = in_c * kernel * kernel;
        let weight =
            store.add_uniform(format!("{name}.weight"), [out_c, in_c, kernel, kernel], 1.0 / (fan_in as f64).sqrt(), rng)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([out_c]))?;
        Ok(Self { weight, bias, stride, pad: kernel / 2 })
    }

    pub fn forward<F: Element>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p[self.weight], Some(p[self.bias]), self.stride, self.pad)
    }

    pub fn forward_relu<F: Element>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var> {
        let y = self.forward(g, p, x)?;
        Ok(g.relu(y))
    }
}

/// Fully connected layer; weights uniform in `±1/sqrt(fan_in)`, bias zero.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<F: Element>(
        store: &mut ParamStore<F>,
        name: &str,
        in_d: usize,
        out_d: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add_uniform(format!("{name}.weight"), [out_d, in_d], 1.0 / (in_d as f64).sqrt(), rng)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([out_d]))?;
        Ok(Self { weight, bias })
    }

    pub fn forward<F: Element>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p[self.weight], Some(p[self.bias]))
    }
}

/// Four parallel branches of equal width concatenated on channels:
/// `1x1`, `1x1 -> 3x3`, `1x1 -> 3x3 -> 3x3` and `maxpool 3x3 -> 1x1`.
/// Every convolution is followed by ReLU; spatial extent is preserved.
#[derive(Debug, Clone)]
pub struct InceptionBlock {
    in_channels: usize,
    branch_width: usize,
    b1: Conv,
    b2: [Conv; 2],
    b3: [Conv; 3],
    b4: Conv,
}

impl InceptionBlock {
    pub fn new<F: Element>(
        store: &mut ParamStore<F>,
        name: &str,
        in_c: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut conv = |suffix: &str, ci: usize, k: usize, rng: &mut _| {
            Conv::new(store, &format!("{name}.{suffix}"), ci, width, k, 1, rng)
        };
        let b1 = conv("b1", in_c, 1, rng)?;
        let b2 = [conv("b2a", in_c, 1, rng)?, conv("b2b", width, 3, rng)?];
        let b3 = [conv("b3a", in_c, 1, rng)?, conv("b3b", width, 3, rng)?, conv("b3c", width, 3, rng)?];
        let b4 = conv("b4", in_c, 1, rng)?;
        Ok(Self { in_channels: in_c, branch_width: width, b1, b2, b3, b4 })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        4 * self.branch_width
    }

    pub fn forward<F: Element>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var> {
        let y1 = self.b1.forward_relu(g, p, x)?;
        let mut y2 = x;
        for c in &self.b2 {
            y2 = c.forward_relu(g, p, y2)?;
        }
        let mut y3 = x;
        for c in &self.b3 {
            y3 = c.forward_relu(g, p, y3)?;
        }
        let pooled = g.max_pool(x, 3, 1, 1)?;
        let y4 = self.b4.forward_relu(g, p, pooled)?;
        g.concat_channels(&[y1, y2, y3, y4])
    }
}
