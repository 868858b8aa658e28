//! The stacked global-local attention network.
//!
//! A plain convolutional trunk feeds two branches from the same tapped
//! stages. The global branch gates each stage with hybrid attention, pools
//! and fuses the stage vectors. The local branch crops `T` regions per
//! stage, runs an inception block on each, pools, takes the elementwise
//! max across regions and fuses the stage vectors. A joint classifier reads
//! the concatenation of both branch features.

mod layers;

use rand::Rng;

pub use layers::{Conv, Dense, InceptionBlock};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{Bound, ParamStore};
use crate::sca::{AttentionMaps, ScaModule};
use crate::spatial_transformer::{LocalizationHead, Regions};
use crate::tensor::{Element, Tensor};

/// Balance weights of the branch losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { gamma1: 0.5, gamma2: 0.5 }
    }
}

impl LossWeights {
    pub fn new(gamma1: f64, gamma2: f64) -> Result<Self> {
        if !(gamma1 >= 0.0 && gamma2 >= 0.0) {
            return Err(Error::Argument(format!("loss weights must be nonnegative, got {gamma1} and {gamma2}")));
        }
        Ok(Self { gamma1, gamma2 })
    }
}

/// `total = joint + gamma1 * global + gamma2 * local`.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub joint: Var,
    pub global: Var,
    pub local: Var,
}

#[derive(Debug, Clone)]
pub struct ModelOutputs {
    pub joint_logits: Var,
    pub global_logits: Var,
    pub local_logits: Var,
    pub global_feature: Var,
    pub local_feature: Var,
    /// Every backbone stage, first to last.
    pub stages: Vec<Var>,
    /// One entry per tapped stage.
    pub attention: Vec<AttentionMaps>,
    /// One entry per tapped stage.
    pub regions: Vec<Regions>,
}

#[derive(Debug, Clone)]
pub struct Sglanet {
    config: ModelConfig,
    stem: Conv,
    stages: Vec<Conv>,
    sca: Vec<ScaModule>,
    heads: Vec<LocalizationHead>,
    inceptions: Vec<InceptionBlock>,
    glo_fuse: Dense,
    glo_cls: Dense,
    loc_fuse: Dense,
    loc_cls: Dense,
    joint_cls: Dense,
}

impl Sglanet {
    /// Registers every parameter in `store` in a fixed order.
    pub fn new<F: Element>(config: &ModelConfig, store: &mut ParamStore<F>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let stem = Conv::new(store, "backbone.stem", config.in_channels, config.stem_width, config.stem_kernel, 1, rng)?;
        let mut stages = Vec::with_capacity(config.stages);
        let mut prev = config.stem_width;
        for (i, &w) in config.widths.iter().enumerate() {
            stages.push(Conv::new(store, &format!("backbone.stage{}", i + 1), prev, w, 3, 2, rng)?);
            prev = w;
        }
        let mut sca = Vec::new();
        let mut heads = Vec::new();
        let mut inceptions = Vec::new();
        for &s in &config.tapped {
            let c = config.widths[s - 1];
            sca.push(ScaModule::new(store, s, c, config.r, rng)?);
            heads.push(LocalizationHead::new(store, s, c, config.regions, config.scale, config.st_init, rng)?);
            inceptions.push(InceptionBlock::new(store, &format!("inception.{s}"), c, config.inception_width, rng)?);
        }
        let glo_in: usize = config.tapped_widths().iter().sum();
        let loc_in = config.tapped.len() * 4 * config.inception_width;
        let glo_fuse = Dense::new(store, "glofls.fuse", glo_in, config.global_dim, rng)?;
        let glo_cls = Dense::new(store, "glofls.classifier", config.global_dim, config.classes, rng)?;
        let loc_fuse = Dense::new(store, "locfls.fuse", loc_in, config.local_dim, rng)?;
        let loc_cls = Dense::new(store, "locfls.classifier", config.local_dim, config.classes, rng)?;
        let joint_cls = Dense::new(store, "joint.classifier", config.global_dim + config.local_dim, config.classes, rng)?;
        Ok(Self { config: config.clone(), stem, stages, sca, heads, inceptions, glo_fuse, glo_cls, loc_fuse, loc_cls, joint_cls })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn sca_modules(&self) -> &[ScaModule] {
        &self.sca
    }

    pub fn heads(&self) -> &[LocalizationHead] {
        &self.heads
    }

    pub fn global_classifier(&self) -> &Dense {
        &self.glo_cls
    }

    pub fn local_classifier(&self) -> &Dense {
        &self.loc_cls
    }

    pub fn joint_classifier(&self) -> &Dense {
        &self.joint_cls
    }

    /// All stage features; stage `i` (1-based) is `H / 2^i` on each side.
    pub fn backbone_forward<F: Element>(&self, g: &mut Graph<F>, p: &Bound, image: Var) -> Result<Vec<Var>> {
        let [_, c, h, w] = g.value(image).dims4("backbone_forward")?;
        if c != self.config.in_channels {
            return Err(Error::Axis { op: "backbone_forward", axis: 1, expected: self.config.in_channels, got: c });
        }
        let factor = 1usize << self.config.stages;
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::Argument(format!(
                "input {h}x{w} is not divisible by 2^{} = {factor}",
                self.config.stages
            )));
        }
        let mut x = self.stem.forward_relu(g, p, image)?;
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            x = stage.forward_relu(g, p, x)?;
            out.push(x);
        }
        Ok(out)
    }

    fn check_tapped(&self, op: &'static str, tapped: &[Var]) -> Result<()> {
        if tapped.len() != self.config.tapped.len() {
            return Err(Error::Axis { op, axis: 0, expected: self.config.tapped.len(), got: tapped.len() });
        }
        Ok(())
    }

    /// Attention-gated, pooled and fused tapped stages: `(global_feature, global_logits, maps)`.
    pub fn glofls_forward<F: Element>(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        tapped: &[Var],
    ) -> Result<(Var, Var, Vec<AttentionMaps>)> {
        self.check_tapped("glofls_forward", tapped)?;
        let mut vectors = Vec::with_capacity(tapped.len());
        let mut maps = Vec::with_capacity(tapped.len());
        for (module, &x) in self.sca.iter().zip(tapped) {
            let (gated, m) = module.forward(g, p, x, self.config.attention)?;
            let pooled = g.global_avg_pool(gated)?;
            vectors.push(g.flatten(pooled)?);
            maps.push(m);
        }
        let cat = g.concat_channels(&vectors)?;
        let feature = self.glo_fuse.forward(g, p, cat)?;
        let logits = self.glo_cls.forward(g, p, feature)?;
        Ok((feature, logits, maps))
    }

    /// Region-cropped, inception-processed, max-fused tapped stages: `(local_feature, local_logits, regions)`.
    pub fn locfls_forward<F: Element>(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        tapped: &[Var],
    ) -> Result<(Var, Var, Vec<Regions>)> {
        self.check_tapped("locfls_forward", tapped)?;
        let mut vectors = Vec::with_capacity(tapped.len());
        let mut all_regions = Vec::with_capacity(tapped.len());
        for ((head, block), &x) in self.heads.iter().zip(&self.inceptions).zip(tapped) {
            let [_, _, h, w] = g.value(x).dims4("locfls_forward")?;
            let regions = head.extract_regions(g, p, x, h, w)?;
            let y = block.forward(g, p, regions.regions)?;
            let pooled = g.global_avg_pool(y)?;
            let pooled = g.flatten(pooled)?;
            vectors.push(g.group_max(pooled, head.regions())?);
            all_regions.push(regions);
        }
        let cat = g.concat_channels(&vectors)?;
        let feature = self.loc_fuse.forward(g, p, cat)?;
        let logits = self.loc_cls.forward(g, p, feature)?;
        Ok((feature, logits, all_regions))
    }

    pub fn forward<F: Element>(&self, g: &mut Graph<F>, p: &Bound, image: Var) -> Result<ModelOutputs> {
        let stages = self.backbone_forward(g, p, image)?;
        let tapped: Vec<Var> = self.config.tapped.iter().map(|&s| stages[s - 1]).collect();
        let (global_feature, global_logits, attention) = self.glofls_forward(g, p, &tapped)?;
        let (local_feature, local_logits, regions) = self.locfls_forward(g, p, &tapped)?;
        let joint_in = g.concat_channels(&[global_feature, local_feature])?;
        let joint_logits = self.joint_cls.forward(g, p, joint_in)?;
        Ok(ModelOutputs {
            joint_logits,
            global_logits,
            local_logits,
            global_feature,
            local_feature,
            stages,
            attention,
            regions,
        })
    }

    /// Forward pass with frozen parameters, returning the joint logits.
    pub fn predict<F: Element>(&self, store: &ParamStore<F>, images: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let x = g.input(images.clone());
        let out = self.forward(&mut g, &p, x)?;
        Ok(g.value(out.joint_logits).clone())
    }
}

/// Cross-entropy of each head and their weighted sum, accumulated joint first.
pub fn total_loss<F: Element>(
    g: &mut Graph<F>,
    outputs: &ModelOutputs,
    labels: &[usize],
    weights: LossWeights,
) -> Result<LossTerms> {
    let joint = g.softmax_cross_entropy(outputs.joint_logits, labels)?;
    let global = g.softmax_cross_entropy(outputs.global_logits, labels)?;
    let local = g.softmax_cross_entropy(outputs.local_logits, labels)?;
    let total = g.weighted_sum(&[
        (joint, F::one()),
        (global, F::from_f64(weights.gamma1)),
        (local, F::from_f64(weights.gamma2)),
    ])?;
    Ok(LossTerms { total, joint, global, local })
}
