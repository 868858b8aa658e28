//! Hybrid spatial-channel attention.
//!
//! For a stage feature `X: [n, c, h, w]` the block forms a spatial map
//! `S = mean_c(X)` of shape `[n, 1, h, w]`, a channel map
//! `C = relu(M2 relu(M1 gap(X)))` of shape `[n, c, 1, 1]`, and their
//! broadcast product `A = S * C`, which has the shape of `X`. The two
//! bottleneck matrices are bias-free 1x1 convolutions.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{Bound, ParamId, ParamStore};
use crate::tensor::Element;

/// Default bottleneck reduction rate.
pub const DEFAULT_REDUCTION: usize = 16;

/// How the saliency map modulates its feature tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// `X * A`
    #[default]
    Gate,
    /// `X * (1 + A)`
    Residual,
}

/// Parameters of one attention block.
#[derive(Debug, Clone)]
pub struct ScaModule {
    channels: usize,
    reduction: usize,
    m1: ParamId,
    m2: ParamId,
}

/// The three maps produced by [`ScaModule::hybrid_attention`].
#[derive(Debug, Clone, Copy)]
pub struct AttentionMaps {
    /// `[n, 1, h, w]`
    pub spatial: Var,
    /// `[n, c, 1, 1]`
    pub channel: Var,
    /// `[n, c, h, w]`
    pub hybrid: Var,
}

/// Mean over channels at each spatial site; parameter-free.
pub fn spatial_attention<F: Element>(g: &mut Graph<F>, x: Var) -> Result<Var> {
    g.channel_mean(x)
}

/// Modulates `x` by the hybrid map.
pub fn apply_attention<F: Element>(g: &mut Graph<F>, x: Var, maps: &AttentionMaps, mode: AttentionMode) -> Result<Var> {
    if g.shape(x) != g.shape(maps.hybrid) {
        return Err(Error::ShapeMismatch {
            op: "apply_attention",
            lhs: g.shape(x).to_vec(),
            rhs: g.shape(maps.hybrid).to_vec(),
        });
    }
    match mode {
        AttentionMode::Gate => g.broadcast_mul(x, maps.hybrid),
        AttentionMode::Residual => {
            let gate = g.add_scalar(maps.hybrid, F::one());
            g.broadcast_mul(x, gate)
        }
    }
}

impl ScaModule {
    /// Registers `sca.<stage>.m1` (`[c/r, c]`) and `sca.<stage>.m2` (`[c, c/r]`).
    pub fn new<F: Element>(
        store: &mut ParamStore<F>,
        stage: usize,
        channels: usize,
        reduction: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if reduction == 0 || channels == 0 || channels % reduction != 0 {
            return Err(Error::Config(format!(
                "reduction rate {reduction} must divide channel count {channels}"
            )));
        }
        let hidden = channels / reduction;
        let m1 = store.add_uniform(format!("sca.{stage}.m1"), [hidden, channels], 1.0 / (channels as f64).sqrt(), rng)?;
        let m2 = store.add_uniform(format!("sca.{stage}.m2"), [channels, hidden], 1.0 / (hidden as f64).sqrt(), rng)?;
        Ok(Self { channels, reduction, m1, m2 })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    pub fn m1(&self) -> ParamId {
        self.m1
    }

    pub fn m2(&self) -> ParamId {
        self.m2
    }

    fn check_channels<F: Element>(&self, g: &Graph<F>, x: Var) -> Result<()> {
        let [_, c, _, _] = g.value(x).dims4("channel_attention")?;
        if c != self.channels {
            return Err(Error::Axis { op: "channel_attention", axis: 1, expected: self.channels, got: c });
        }
        Ok(())
    }

    /// `relu(M2 relu(M1 gap(X)))` as two bias-free 1x1 convolutions.
    pub fn channel_attention<F: Element>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var> {
        self.check_channels(g, x)?;
        let hidden = self.channels / self.reduction;
        let pooled = g.global_avg_pool(x)?;
        let m1 = g.reshape(p[self.m1], [hidden, self.channels, 1, 1])?;
        let m2 = g.reshape(p[self.m2], [self.channels, hidden, 1, 1])?;
        let squeezed = g.conv2d(pooled, m1, None, 1, 0)?;
        let squeezed = g.relu(squeezed);
        let excited = g.conv2d(squeezed, m2, None, 1, 0)?;
        Ok(g.relu(excited))
    }

    pub fn hybrid_attention<F: Element>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<AttentionMaps> {
        self.check_channels(g, x)?;
        let spatial = spatial_attention(g, x)?;
        let channel = self.channel_attention(g, p, x)?;
        let hybrid = g.broadcast_mul(spatial, channel)?;
        Ok(AttentionMaps { spatial, channel, hybrid })
    }

    /// `apply_attention(X, hybrid_attention(X))`, returning the maps alongside.
    pub fn forward<F: Element>(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        x: Var,
        mode: AttentionMode,
    ) -> Result<(Var, AttentionMaps)> {
        let maps = self.hybrid_attention(g, p, x)?;
        let out = apply_attention(g, x, &maps, mode)?;
        Ok((out, maps))
    }
}
