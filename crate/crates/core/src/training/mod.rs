//! Optimization, metrics and epoch orchestration.

pub mod dataset;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use dataset::{load_dataset, preprocess, DatasetIndex, LoadedSplit, Normalization, Sample, Split};

use crate::config::{Config, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::network::{total_loss, LossWeights, Sglanet};
use crate::param::ParamStore;
use crate::tensor::{Element, Tensor};

/// Momentum SGD: `v = mu * v + g; w -= lr * v`, then gradients are zeroed.
#[derive(Debug, Clone)]
pub struct Sgd<F> {
    pub momentum: f64,
    velocity: Vec<Tensor<F>>,
}

impl<F: Element> Sgd<F> {
    pub fn new(store: &ParamStore<F>, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Argument(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Self { momentum, velocity: store.iter().map(|p| Tensor::zeros_like(p.value())).collect() })
    }

    pub fn velocity(&self) -> &[Tensor<F>] {
        &self.velocity
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, lr: f64) -> Result<()> {
        if store.len() != self.velocity.len() {
            return Err(Error::Argument(format!(
                "optimizer tracks {} tensors but the model has {}",
                self.velocity.len(),
                store.len()
            )));
        }
        let (mu, lr) = (F::from_f64(self.momentum), F::from_f64(lr));
        for (p, v) in store.iter_mut().zip(&mut self.velocity) {
            let name = p.name().to_string();
            let (value, grad) = p.parts_mut();
            if grad.shape() != value.shape() || v.shape() != value.shape() {
                return Err(Error::Parameter { name, reason: "gradient or velocity shape drifted from value".into() });
            }
            for ((w, g), m) in value.data_mut().iter_mut().zip(grad.data()).zip(v.data_mut()) {
                *m = mu * *m + *g;
                *w -= lr * *m;
            }
            grad.fill(F::zero());
        }
        Ok(())
    }
}

/// `base * factor^floor(epoch / decay_epoch)`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let k = (epoch / config.decay_epoch) as i32;
    // dividing by the exact reciprocal keeps 1e-2 / 10 == 1e-3
    config.lr / (1.0 / config.decay_factor).powi(k)
}

/// Position of `label` when classes are ranked by logit, ties toward the lower index.
pub fn label_rank<F: Element>(row: &[F], label: usize) -> usize {
    let y = row[label];
    row.iter().enumerate().filter(|&(j, &v)| v > y || (v == y && j < label)).count()
}

fn check_topk<F: Element>(logits: &Tensor<F>, labels: &[usize], k: usize) -> Result<[usize; 2]> {
    let [n, classes] = logits.dims2("topk_accuracy")?;
    if labels.len() != n {
        return Err(Error::Axis { op: "topk_accuracy", axis: 0, expected: n, got: labels.len() });
    }
    if k == 0 || k > classes {
        return Err(Error::Argument(format!("k = {k} must lie in 1..={classes}")));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label, classes });
    }
    Ok([n, classes])
}

/// Fraction of rows whose label is among the `k` largest logits.
pub fn topk_accuracy<F: Element>(logits: &Tensor<F>, labels: &[usize], k: usize) -> Result<f64> {
    let [n, classes] = check_topk(logits, labels, k)?;
    if n == 0 {
        return Ok(0.0);
    }
    let hits = logits.data().chunks(classes).zip(labels).filter(|(row, &l)| label_rank(row, l) < k).count();
    Ok(hits as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub top1: f64,
    pub top5: f64,
    pub per_class_top1: Vec<f64>,
    pub n: usize,
}

impl MetricsReport {
    /// `top5` uses `min(5, K)`; classes without samples report 0.
    pub fn from_logits<F: Element>(logits: &Tensor<F>, labels: &[usize]) -> Result<Self> {
        let [n, classes] = check_topk(logits, labels, 1)?;
        let k5 = classes.min(5);
        let mut per_hits = vec![0usize; classes];
        let mut per_count = vec![0usize; classes];
        let (mut h1, mut h5) = (0, 0);
        for (row, &l) in logits.data().chunks(classes).zip(labels) {
            let rank = label_rank(row, l);
            per_count[l] += 1;
            if rank == 0 {
                h1 += 1;
                per_hits[l] += 1;
            }
            if rank < k5 {
                h5 += 1;
            }
        }
        let frac = |h: usize, c: usize| if c == 0 { 0.0 } else { h as f64 / c as f64 };
        Ok(Self {
            top1: frac(h1, n),
            top5: frac(h5, n),
            per_class_top1: per_hits.iter().zip(&per_count).map(|(&h, &c)| frac(h, c)).collect(),
            n,
        })
    }
}

/// Loss values of one batch or averaged over an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossValues {
    pub loss: f64,
    pub loss_joint: f64,
    pub loss_global: f64,
    pub loss_local: f64,
}

impl LossValues {
    fn add_scaled(&mut self, other: &Self, w: f64) {
        self.loss += w * other.loss;
        self.loss_joint += w * other.loss_joint;
        self.loss_global += w * other.loss_global;
        self.loss_local += w * other.loss_local;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    /// Sample-weighted means over the epoch.
    pub losses: LossValues,
    /// Accuracy of the logits seen during the epoch, before each update.
    pub running: MetricsReport,
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub top1: f64,
    pub top5: f64,
    pub loss: f64,
    pub loss_joint: f64,
    pub loss_global: f64,
    pub loss_local: f64,
    pub lr: f64,
}

impl MetricRecord {
    pub fn new(epoch: usize, split: Split, report: &MetricsReport, losses: &LossValues, lr: f64) -> Self {
        Self {
            epoch,
            split: split.to_string(),
            top1: report.top1,
            top5: report.top5,
            loss: losses.loss,
            loss_joint: losses.loss_joint,
            loss_global: losses.loss_global,
            loss_local: losses.loss_local,
            lr,
        }
    }
}

/// Seed of the per-epoch shuffle, derived from the run seed.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(epoch as u64 + 1)
}

/// A model, its parameters and optimizer state, trained at 32-bit.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: Config,
    pub net: Sglanet,
    pub store: ParamStore<f32>,
    pub sgd: Sgd<f32>,
}

impl Trainer {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let net = Sglanet::new(&config.model, &mut store, &mut rng)?;
        let sgd = Sgd::new(&store, config.train.momentum)?;
        Ok(Self { config, net, store, sgd })
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { gamma1: self.config.train.gamma1, gamma2: self.config.train.gamma2 }
    }

    pub fn normalization(&self) -> Normalization {
        Normalization { mean: self.config.train.mean, std: self.config.train.std }
    }

    /// Forward, backward and one optimizer step on a batch; returns the batch losses and joint logits.
    pub fn train_step(&mut self, images: &Tensor<f32>, labels: &[usize], lr: f64) -> Result<(LossValues, Tensor<f32>)> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let x = g.input(images.clone());
        let out = self.net.forward(&mut g, &p, x)?;
        let terms = total_loss(&mut g, &out, labels, self.weights())?;
        let values = LossValues {
            loss: g.value(terms.total).item() as f64,
            loss_joint: g.value(terms.joint).item() as f64,
            loss_global: g.value(terms.global).item() as f64,
            loss_local: g.value(terms.local).item() as f64,
        };
        let logits = g.value(out.joint_logits).clone();
        let grads = g.backward(terms.total)?;
        self.store.accumulate(&p, &grads)?;
        self.sgd.step(&mut self.store, lr)?;
        Ok((values, logits))
    }

    /// Mini-batch order of `epoch`: a seeded permutation of `0..n`.
    pub fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(self.config.train.seed, epoch)));
        order
    }

    pub fn train_epoch(&mut self, data: &LoadedSplit, epoch: usize) -> Result<EpochSummary> {
        if data.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let lr = lr_schedule(epoch, &self.config.train);
        let order = self.epoch_order(data.len(), epoch);
        let mut flip_rng = ChaCha8Rng::seed_from_u64(epoch_seed(self.config.train.seed ^ 0xf11b, epoch));
        let mut losses = LossValues::default();
        let mut seen_logits = Vec::with_capacity(data.len() * self.config.model.classes);
        let mut seen_labels = Vec::with_capacity(data.len());
        let mut steps = 0;
        for chunk in order.chunks(self.config.train.batch) {
            let flips: Option<Vec<bool>> =
                self.config.train.flip.then(|| chunk.iter().map(|_| flip_rng.gen_bool(0.5)).collect());
            let (images, labels) = data.batch(chunk, flips.as_deref())?;
            let (batch_losses, logits) = self.train_step(&images, &labels, lr)?;
            losses.add_scaled(&batch_losses, chunk.len() as f64 / data.len() as f64);
            seen_logits.extend_from_slice(logits.data());
            seen_labels.extend(labels);
            steps += 1;
        }
        let logits = Tensor::new([seen_labels.len(), self.config.model.classes], seen_logits)?;
        let running = MetricsReport::from_logits(&logits, &seen_labels)?;
        Ok(EpochSummary { epoch, lr, steps, losses, running })
    }

    /// Forward-only pass over `data` in its stored order; joint logits are the prediction.
    pub fn evaluate(&self, data: &LoadedSplit) -> Result<(MetricsReport, LossValues)> {
        evaluate(&self.net, &self.store, data, self.weights(), self.config.train.batch.max(32))
    }
}

/// Metrics and mean losses of `net` over `data`.
pub fn evaluate(
    net: &Sglanet,
    store: &ParamStore<f32>,
    data: &LoadedSplit,
    weights: LossWeights,
    batch: usize,
) -> Result<(MetricsReport, LossValues)> {
    if data.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    let classes = net.config().classes;
    let order: Vec<usize> = (0..data.len()).collect();
    let mut all = Vec::with_capacity(data.len() * classes);
    let mut losses = LossValues::default();
    for chunk in order.chunks(batch) {
        let (images, labels) = data.batch(chunk, None)?;
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let x = g.input(images);
        let out = net.forward(&mut g, &p, x)?;
        let terms = total_loss(&mut g, &out, &labels, weights)?;
        let values = LossValues {
            loss: g.value(terms.total).item() as f64,
            loss_joint: g.value(terms.joint).item() as f64,
            loss_global: g.value(terms.global).item() as f64,
            loss_local: g.value(terms.local).item() as f64,
        };
        losses.add_scaled(&values, chunk.len() as f64 / data.len() as f64);
        all.extend_from_slice(g.value(out.joint_logits).data());
    }
    let logits = Tensor::new([data.len(), classes], all)?;
    Ok((MetricsReport::from_logits(&logits, &data.labels)?, losses))
}
